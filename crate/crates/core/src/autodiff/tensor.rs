//! Dense row-major tensors and the handful of matrix kernels the network
//! is built from.
//!
//! Summation order is fixed and documented so forward passes are bitwise
//! reproducible: every accumulated value sums its contributions in
//! row-major order (the contraction index ascends for each output
//! element, and output elements are produced in row-major order).

use crate::autodiff::AutodiffError;
use crate::scalar::Scalar;

/// Dense multi-dimensional value, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![S::zero(); len],
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_f64s(shape: Vec<usize>, values: &[f64]) -> Self {
        Self::new(shape, values.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// The single value of a rank-0 or length-1 tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Reinterpret the buffer under a new shape of equal volume.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn check_finite(&self, op: &'static str) -> Result<(), AutodiffError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(AutodiffError::NonFinite { op })
        }
    }
}

/// y += x · w with x: [m, k], w: [k, n], y: [m, n].
///
/// Four output rows are produced per pass over w to cut memory traffic;
/// the contraction index k still ascends for every output element.
pub fn gemm_acc<S: Scalar>(y: &mut [S], x: &[S], w: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(w.len(), k * n);
    debug_assert_eq!(y.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let (x0, x1, x2, x3) = (
            &x[i * k..(i + 1) * k],
            &x[(i + 1) * k..(i + 2) * k],
            &x[(i + 2) * k..(i + 3) * k],
            &x[(i + 3) * k..(i + 4) * k],
        );
        let block = &mut y[i * n..(i + 4) * n];
        let (y0, rest) = block.split_at_mut(n);
        let (y1, rest) = rest.split_at_mut(n);
        let (y2, y3) = rest.split_at_mut(n);
        for kk in 0..k {
            let (a0, a1, a2, a3) = (x0[kk], x1[kk], x2[kk], x3[kk]);
            let wr = &w[kk * n..(kk + 1) * n];
            for j in 0..n {
                let wv = wr[j];
                y0[j] += a0 * wv;
                y1[j] += a1 * wv;
                y2[j] += a2 * wv;
                y3[j] += a3 * wv;
            }
        }
        i += 4;
    }
    while i < m {
        let xr = &x[i * k..(i + 1) * k];
        let yr = &mut y[i * n..(i + 1) * n];
        for kk in 0..k {
            let a = xr[kk];
            let wr = &w[kk * n..(kk + 1) * n];
            for j in 0..n {
                yr[j] += a * wr[j];
            }
        }
        i += 1;
    }
}

/// gx += gy · wᵀ with gy: [m, n], w: [k, n], gx: [m, k].
///
/// w is transposed once so the hot loop runs over contiguous rows like
/// [`gemm_acc`]; per output element the contraction index j still
/// ascends.
pub fn gemm_acc_nt<S: Scalar>(gx: &mut [S], gy: &[S], w: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(gy.len(), m * n);
    debug_assert_eq!(w.len(), k * n);
    debug_assert_eq!(gx.len(), m * k);
    let mut wt = vec![S::zero(); n * k];
    for kk in 0..k {
        for j in 0..n {
            wt[j * k + kk] = w[kk * n + j];
        }
    }
    gemm_acc(gx, gy, &wt, m, n, k);
}

/// gw += xᵀ · gy with x: [m, k], gy: [m, n], gw: [k, n].
pub fn gemm_acc_tn<S: Scalar>(gw: &mut [S], x: &[S], gy: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(gy.len(), m * n);
    debug_assert_eq!(gw.len(), k * n);
    for i in 0..m {
        let xr = &x[i * k..(i + 1) * k];
        let gr = &gy[i * n..(i + 1) * n];
        for kk in 0..k {
            let a = xr[kk];
            let wr = &mut gw[kk * n..(kk + 1) * n];
            for j in 0..n {
                wr[j] += a * gr[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gemm(x: &[f64], w: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    y[i * n + j] += x[i * k + kk] * w[kk * n + j];
                }
            }
        }
        y
    }

    #[test]
    fn gemm_matches_naive_including_row_remainders() {
        let mut rng = crate::rng::SplitMix64::new(5);
        for &(m, k, n) in &[(1, 1, 1), (3, 4, 5), (4, 2, 7), (6, 3, 1), (9, 5, 8)] {
            let x: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let w: Vec<f64> = (0..k * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut y = vec![0.0; m * n];
            gemm_acc(&mut y, &x, &w, m, k, n);
            let expect = naive_gemm(&x, &w, m, k, n);
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_kernels_match_naive() {
        let mut rng = crate::rng::SplitMix64::new(6);
        let (m, k, n) = (5, 4, 3);
        let x: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..k * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let gy: Vec<f64> = (0..m * n).map(|_| rng.uniform(-1.0, 1.0)).collect();

        // gx = gy · wᵀ
        let mut gx = vec![0.0; m * k];
        gemm_acc_nt(&mut gx, &gy, &w, m, k, n);
        for i in 0..m {
            for kk in 0..k {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += gy[i * n + j] * w[kk * n + j];
                }
                assert!((gx[i * k + kk] - acc).abs() < 1e-12);
            }
        }

        // gw = xᵀ · gy
        let mut gw = vec![0.0; k * n];
        gemm_acc_tn(&mut gw, &x, &gy, m, k, n);
        for kk in 0..k {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += x[i * k + kk] * gy[i * n + j];
                }
                assert!((gw[kk * n + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn per_row_results_do_not_depend_on_neighbors() {
        // The 4-row blocking must keep each output row a pure function of
        // its own input row, so point sets can be permuted or duplicated
        // without changing any individual row bitwise.
        let mut rng = crate::rng::SplitMix64::new(7);
        let (k, n) = (6, 5);
        let w: Vec<f64> = (0..k * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();

        let stacked: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut y = vec![0.0; 6 * n];
        gemm_acc(&mut y, &stacked, &w, 6, k, n);

        for (i, row) in rows.iter().enumerate() {
            let mut single = vec![0.0; n];
            gemm_acc(&mut single, row, &w, 1, k, n);
            assert_eq!(&y[i * n..(i + 1) * n], &single[..]);
        }
    }
}
