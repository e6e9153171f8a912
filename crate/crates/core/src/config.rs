//! Run configuration: the network hyperparameters plus training settings,
//! with a `key = value` text format. Unknown keys are rejected;
//! parse -> serialize -> parse is a fixed point.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for {key:?}: {detail}")]
    BadValue {
        line: usize,
        key: String,
        detail: String,
    },
    #[error("line {line}: expected `key = value`")]
    BadSyntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// How the T per-scale features of a region are aggregated into one
/// region feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Variable-size windowed convolution over the scale stack.
    IntraConv,
    Mean,
    Max,
    Concat,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::IntraConv => "intra",
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
            Aggregation::Concat => "concat",
        }
    }
}

impl FromStr for Aggregation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "intra" => Ok(Aggregation::IntraConv),
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "concat" => Ok(Aggregation::Concat),
            other => Err(format!("unknown aggregation {other:?}")),
        }
    }
}

/// Pooling over region features into the global descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalPool {
    Max,
    Mean,
    Sum,
}

impl GlobalPool {
    pub fn name(self) -> &'static str {
        match self {
            GlobalPool::Max => "max",
            GlobalPool::Mean => "mean",
            GlobalPool::Sum => "sum",
        }
    }
}

impl FromStr for GlobalPool {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "max" => Ok(GlobalPool::Max),
            "mean" => Ok(GlobalPool::Mean),
            "sum" => Ok(GlobalPool::Sum),
            other => Err(format!("unknown pooling {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classify,
    Segment,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Segment => "segment",
        }
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "classify" => Ok(Task::Classify),
            "segment" => Ok(Task::Segment),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of sampled region centroids.
    pub m: usize,
    /// Points per scale area, strictly increasing; the length is T.
    pub k: Vec<usize>,
    /// Region feature width.
    pub d: usize,
    /// Spatial similarity sharpness; 0 degrades to uniform mixing.
    pub gamma: f64,
    /// Number of convolution window sizes (1..=h_kinds).
    pub h_kinds: usize,
    pub num_classes: usize,
    pub num_parts: usize,
    pub aggregation: Aggregation,
    pub inter_region: bool,
    pub global_pool: GlobalPool,
    pub dropout: f64,
    pub precision: Precision,
}

impl ModelConfig {
    /// Desk-scale defaults, sized for 256-point clouds.
    pub fn desk() -> Self {
        Self {
            m: 64,
            k: vec![8, 16, 32, 64],
            d: 64,
            gamma: 1e4,
            h_kinds: 4,
            num_classes: 4,
            num_parts: 3,
            aggregation: Aggregation::IntraConv,
            inter_region: true,
            global_pool: GlobalPool::Max,
            dropout: 0.4,
            precision: Precision::F64,
        }
    }

    /// Full-scale configuration for 1024-point clouds.
    pub fn full_scale() -> Self {
        Self {
            m: 384,
            k: vec![16, 32, 64, 128],
            d: 128,
            ..Self::desk()
        }
    }

    /// Number of scales T.
    pub fn t(&self) -> usize {
        self.k.len()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.m == 0 {
            return fail("m must be at least 1".into());
        }
        if self.k.is_empty() {
            return fail("k must list at least one scale".into());
        }
        if !self.k.windows(2).all(|w| w[0] < w[1]) {
            return fail(format!("k must be strictly increasing, got {:?}", self.k));
        }
        if self.k[0] == 0 {
            return fail("scale sizes must be positive".into());
        }
        if self.d == 0 {
            return fail("d must be at least 1".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be finite and nonnegative, got {}", self.gamma));
        }
        if self.h_kinds == 0 || self.h_kinds > self.t() {
            return fail(format!(
                "h_kinds must be in 1..={}, got {}",
                self.t(),
                self.h_kinds
            ));
        }
        if self.h_kinds > self.d {
            return fail(format!(
                "h_kinds {} exceeds feature width {}",
                self.h_kinds, self.d
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.num_classes == 0 {
            return fail("num_classes must be at least 1".into());
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Training-loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; decays by 0.3 every 20 epochs, floored.
    pub lr: f64,
    pub seed: u64,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            task: Task::Classify,
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            seed: 7,
            train_manifest: None,
            test_manifest: None,
        }
    }
}

/// Everything a run needs: model plus training settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSettings,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        if self.train.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be at least 1".into()));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "lr must be positive, got {}",
                self.train.lr
            )));
        }
        if self.train.task == Task::Segment && self.model.num_parts == 0 {
            return Err(ConfigError::Invalid(
                "segmentation needs num_parts >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or(ConfigError::BadSyntax { line })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.into(),
                });
            }
            let bad = |detail: String| ConfigError::BadValue {
                line,
                key: key.into(),
                detail,
            };
            macro_rules! parse {
                () => {
                    value.parse().map_err(|e| bad(format!("{e:?}")))?
                };
            }
            match key {
                "task" => cfg.train.task = value.parse().map_err(bad)?,
                "epochs" => cfg.train.epochs = parse!(),
                "batch_size" => cfg.train.batch_size = parse!(),
                "lr" => cfg.train.lr = parse!(),
                "seed" => cfg.train.seed = parse!(),
                "train_manifest" => cfg.train.train_manifest = Some(PathBuf::from(value)),
                "test_manifest" => cfg.train.test_manifest = Some(PathBuf::from(value)),
                "m" => cfg.model.m = parse!(),
                "t" => {
                    let t: usize = parse!();
                    if t != cfg.model.k.len() {
                        // k may follow later; remember for validation.
                        if seen.contains("k") {
                            return Err(bad(format!("t = {t} but k lists {} scales", cfg.model.k.len())));
                        }
                        cfg.model.k = vec![0; t];
                    }
                }
                "k" => {
                    let scales: Result<Vec<usize>, _> = value
                        .split(',')
                        .map(|f| f.trim().parse::<usize>())
                        .collect();
                    let scales = scales.map_err(|e| bad(format!("{e:?}")))?;
                    if seen.contains("t") && scales.len() != cfg.model.k.len() {
                        return Err(bad(format!(
                            "k lists {} scales but t = {}",
                            scales.len(),
                            cfg.model.k.len()
                        )));
                    }
                    cfg.model.k = scales;
                }
                "d" => cfg.model.d = parse!(),
                "gamma" => cfg.model.gamma = parse!(),
                "h_kinds" => cfg.model.h_kinds = parse!(),
                "num_classes" => cfg.model.num_classes = parse!(),
                "num_parts" => cfg.model.num_parts = parse!(),
                "aggregation" => cfg.model.aggregation = value.parse().map_err(bad)?,
                "inter_region" => cfg.model.inter_region = parse!(),
                "global_pool" => cfg.model.global_pool = value.parse().map_err(bad)?,
                "dropout" => cfg.model.dropout = parse!(),
                "precision" => cfg.model.precision = value.parse().map_err(bad)?,
                other => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: other.into(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file, resolving manifest paths against its directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_text(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for manifest in [&mut cfg.train.train_manifest, &mut cfg.train.test_manifest] {
            if let Some(p) = manifest {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        use fmt::Write;
        let k_list = self
            .model
            .k
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "task = {}", self.train.task.name()).unwrap();
        writeln!(out, "epochs = {}", self.train.epochs).unwrap();
        writeln!(out, "batch_size = {}", self.train.batch_size).unwrap();
        writeln!(out, "lr = {}", self.train.lr).unwrap();
        writeln!(out, "seed = {}", self.train.seed).unwrap();
        if let Some(ref p) = self.train.train_manifest {
            writeln!(out, "train_manifest = {}", p.display()).unwrap();
        }
        if let Some(ref p) = self.train.test_manifest {
            writeln!(out, "test_manifest = {}", p.display()).unwrap();
        }
        writeln!(out, "m = {}", self.model.m).unwrap();
        writeln!(out, "t = {}", self.model.t()).unwrap();
        writeln!(out, "k = {k_list}").unwrap();
        writeln!(out, "d = {}", self.model.d).unwrap();
        writeln!(out, "gamma = {}", self.model.gamma).unwrap();
        writeln!(out, "h_kinds = {}", self.model.h_kinds).unwrap();
        writeln!(out, "num_classes = {}", self.model.num_classes).unwrap();
        writeln!(out, "num_parts = {}", self.model.num_parts).unwrap();
        writeln!(out, "aggregation = {}", self.model.aggregation.name()).unwrap();
        writeln!(out, "inter_region = {}", self.model.inter_region).unwrap();
        writeln!(out, "global_pool = {}", self.model.global_pool.name()).unwrap();
        writeln!(out, "dropout = {}", self.model.dropout).unwrap();
        writeln!(out, "precision = {}", self.model.precision.name()).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let mut full = RunConfig::default();
        full.model = ModelConfig::full_scale();
        full.validate().unwrap();
    }

    #[test]
    fn parse_serialize_parse_is_a_fixed_point() {
        let mut cfg = RunConfig::default();
        cfg.model.gamma = 123.456;
        cfg.model.k = vec![4, 8, 32];
        cfg.model.h_kinds = 3;
        cfg.train.lr = 0.0007;
        cfg.train.train_manifest = Some(PathBuf::from("/data/train.tsv"));
        let text = cfg.to_text();
        let parsed = RunConfig::from_text(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_text("bogus = 1\n"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::from_text("d = 8\nd = 16\n"),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
    }

    #[test]
    fn scale_count_mismatch_is_rejected() {
        assert!(RunConfig::from_text("t = 2\nk = 4,8,16\n").is_err());
        assert!(RunConfig::from_text("k = 4,8,16\nt = 2\n").is_err());
        RunConfig::from_text("t = 3\nk = 4,8,16\nh_kinds = 3\n").unwrap();
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_text("k = 8,4\nh_kinds = 1\nt = 2\n").is_err());
        assert!(RunConfig::from_text("gamma = -1\n").is_err());
        assert!(RunConfig::from_text("dropout = 1.5\n").is_err());
        assert!(RunConfig::from_text("h_kinds = 9\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::from_text("# a comment\n\nd = 32  # trailing\n").unwrap();
        assert_eq!(cfg.model.d, 32);
    }

    #[test]
    fn missing_file_reports_path() {
        match RunConfig::from_file(Path::new("/no/such/file.cfg")) {
            Err(ConfigError::Io { path, .. }) => {
                assert_eq!(path, PathBuf::from("/no/such/file.cfg"))
            }
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
