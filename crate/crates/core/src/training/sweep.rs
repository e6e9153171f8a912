//! Parameter-sweep runner: train a grid of configurations with shared
//! seeds and data, and rank the results.

use crate::config::{Aggregation, GlobalPool, RunConfig};
use crate::scalar::Scalar;
use crate::training::trainer::train;
use crate::training::{Dataset, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub best_metric: f64,
}

/// Train every configuration in the grid on the same datasets (each run
/// uses the seed carried by its config) and rank rows by best metric,
/// ties keeping grid order.
pub fn sweep<S: Scalar>(
    grid: &[(String, RunConfig)],
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<SweepRow>, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (label, config) in grid {
        let outcome = train::<S>(config.clone(), train_set.clone(), test_set.clone())?;
        rows.push(SweepRow {
            label: label.clone(),
            best_metric: outcome.best_metric,
        });
    }
    rows.sort_by(|a, b| b.best_metric.partial_cmp(&a.best_metric).unwrap());
    Ok(rows)
}

/// Named sweep grids over the base configuration.
///
/// `gamma` and `m` vary one scalar; `scales` varies the number of scale
/// areas keeping the largest neighborhood fixed; `filters` varies how
/// many window sizes the region convolution uses; `intra` swaps the
/// windowed convolution against mean/max/concat baselines; `inter`
/// toggles similarity weighting against plain max/mean/sum pooling.
pub fn preset_grid(name: &str, base: &RunConfig) -> Result<Vec<(String, RunConfig)>, TrainError> {
    let mut grid = Vec::new();
    match name {
        "gamma" => {
            for gamma in [0.0, 1.0, 1e2, 1e4, 1e5] {
                let mut cfg = base.clone();
                cfg.model.gamma = gamma;
                cfg.model.inter_region = true;
                grid.push((format!("gamma={gamma}"), cfg));
            }
        }
        "m" => {
            for m in [32usize, 64, 128, 256] {
                let mut cfg = base.clone();
                cfg.model.m = m;
                grid.push((format!("m={m}"), cfg));
            }
        }
        "scales" => {
            let largest = *base.model.k.last().unwrap();
            for t in 1..=5usize {
                let mut k = Vec::with_capacity(t);
                for i in (0..t).rev() {
                    k.push(largest >> i);
                }
                let mut cfg = base.clone();
                cfg.model.h_kinds = base.model.h_kinds.min(t);
                cfg.model.k = k;
                grid.push((format!("t={t}"), cfg));
            }
        }
        "filters" => {
            for h in 1..=base.model.t() {
                let mut cfg = base.clone();
                cfg.model.h_kinds = h;
                grid.push((format!("h={h}"), cfg));
            }
        }
        "intra" => {
            for (label, mode) in [
                ("All", Aggregation::IntraConv),
                ("Mean", Aggregation::Mean),
                ("Max", Aggregation::Max),
                ("Con", Aggregation::Concat),
            ] {
                let mut cfg = base.clone();
                cfg.model.aggregation = mode;
                grid.push((label.to_string(), cfg));
            }
        }
        "inter" => {
            for (label, inter, pool) in [
                ("Y(max)", true, GlobalPool::Max),
                ("N(max)", false, GlobalPool::Max),
                ("Y(mean)", true, GlobalPool::Mean),
                ("N(mean)", false, GlobalPool::Mean),
                ("N(sum)", false, GlobalPool::Sum),
            ] {
                let mut cfg = base.clone();
                cfg.model.inter_region = inter;
                cfg.model.global_pool = pool;
                grid.push((label.to_string(), cfg));
            }
        }
        other => return Err(TrainError::UnknownPreset(other.to_string())),
    }
    Ok(grid)
}

/// Ranked table, one row per configuration.
pub fn format_sweep_table(rows: &[SweepRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    out.push_str(&format!("{:<4} {:<width$} {}\n", "rank", "label", "best_metric"));
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{:<4} {:<width$} {:.4}\n",
            i + 1,
            row.label,
            row.best_metric
        ));
    }
    out
}
