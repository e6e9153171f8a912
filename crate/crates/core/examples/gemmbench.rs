use lrcnet_core::autodiff::{gemm_acc, gemm_acc_nt, gemm_acc_tn};
use lrcnet_core::rng::SplitMix64;
use std::time::Instant;

fn main() {
    let mut rng = SplitMix64::new(1);
    for &(m, k, n) in &[(4096usize, 64usize, 128usize), (4096, 3, 64), (4096, 128, 64), (64, 64, 256), (64, 512, 1024)] {
        let x: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..k * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut y = vec![0.0f64; m * n];
        let flops = 2.0 * (m * k * n) as f64;
        let reps = (2e9 / flops).max(1.0) as usize;
        let t = Instant::now();
        for _ in 0..reps { gemm_acc(&mut y, &x, &w, m, k, n); }
        let fwd = flops * reps as f64 / t.elapsed().as_secs_f64() / 1e9;

        let gy: Vec<f64> = (0..m * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut gx = vec![0.0f64; m * k];
        let t = Instant::now();
        for _ in 0..reps { gemm_acc_nt(&mut gx, &gy, &w, m, k, n); }
        let bwd_x = flops * reps as f64 / t.elapsed().as_secs_f64() / 1e9;

        let mut gw = vec![0.0f64; k * n];
        let t = Instant::now();
        for _ in 0..reps { gemm_acc_tn(&mut gw, &x, &gy, m, k, n); }
        let bwd_w = flops * reps as f64 / t.elapsed().as_secs_f64() / 1e9;
        println!("m={m:<5} k={k:<4} n={n:<5} fwd {fwd:6.2} GF/s   gx {bwd_x:6.2} GF/s   gw {bwd_w:6.2} GF/s");
    }
}
