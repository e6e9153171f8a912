//! Subcommand implementations.

use crate::{CliError, CommonOpts};
use lrcnet_core::config::{ConfigError, Precision, RunConfig, Task};
use lrcnet_core::dataio::{gen_synthetic, load_xyz, normalize_cloud, save_xyz, PointCloud, ShapeKind, Split};
use lrcnet_core::model::{self, Checkpoint, Mode, Model};
use lrcnet_core::rng::SplitMix64;
use lrcnet_core::scalar::Scalar;
use lrcnet_core::training::{self, Dataset, TrainOutcome};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::runtime(e.to_string())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

/// Load a config file, mapping problems to usage errors (exit 2).
fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::from_file(path).map_err(|e| match e {
        ConfigError::Io { .. } => CliError::usage(e.to_string()),
        other => CliError::usage(other.to_string()),
    })
}

fn apply_seed(run: &mut RunConfig, flag: Option<u64>) {
    if let Some(seed) = flag {
        run.train.seed = seed;
    }
}

pub fn synth(
    common: &CommonOpts,
    per_class_train: usize,
    per_class_test: usize,
    points: usize,
    noise: f64,
    seg: bool,
) -> Result<(), CliError> {
    let seed = common.seed.unwrap_or(7);
    let out = &common.out;
    ensure_dir(out)?;
    let kinds: &[ShapeKind] = if seg {
        &ShapeKind::SEGMENTATION
    } else {
        &ShapeKind::ALL
    };
    let mut rng = SplitMix64::new(seed);
    for (split, per_class) in [("train", per_class_train), ("test", per_class_test)] {
        let split_dir = out.join(split);
        ensure_dir(&split_dir)?;
        let mut manifest = String::new();
        for idx in 0..per_class {
            for (class, &kind) in kinds.iter().enumerate() {
                let cloud = gen_synthetic(kind, points, noise, rng.next_u64()).map_err(runtime)?;
                let name = format!("{}_{idx:04}.xyz", kind.name());
                save_xyz(&split_dir.join(&name), &cloud).map_err(runtime)?;
                writeln!(manifest, "{split}/{name}\t{class}").unwrap();
            }
        }
        fs::write(out.join(format!("{split}.tsv")), manifest)
            .map_err(|e| CliError::runtime(format!("writing manifest: {e}")))?;
    }

    // A ready-to-run config pointing at the manifests.
    let mut run = RunConfig::default();
    run.train.seed = seed;
    run.train.train_manifest = Some(PathBuf::from("train.tsv"));
    run.train.test_manifest = Some(PathBuf::from("test.tsv"));
    if seg {
        run.train.task = Task::Segment;
        run.model.num_classes = ShapeKind::SEGMENTATION.len();
        run.model.num_parts = 3;
    }
    fs::write(out.join("run.cfg"), run.to_text())
        .map_err(|e| CliError::runtime(format!("writing config: {e}")))?;
    eprintln!(
        "wrote {} train and {} test clouds under {}",
        per_class_train * kinds.len(),
        per_class_test * kinds.len(),
        out.display()
    );
    Ok(())
}

fn load_datasets(run: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let train_path = run
        .train
        .train_manifest
        .as_ref()
        .ok_or_else(|| CliError::usage("config has no train_manifest"))?;
    let test_path = run
        .train
        .test_manifest
        .as_ref()
        .ok_or_else(|| CliError::usage("config has no test_manifest"))?;
    let train_set = Dataset::from_manifest_file(train_path, Split::Train).map_err(runtime)?;
    let test_set = Dataset::from_manifest_file(test_path, Split::Test).map_err(runtime)?;
    Ok((train_set, test_set))
}

fn run_training<S: Scalar>(
    run: RunConfig,
    train_set: Dataset,
    test_set: Dataset,
) -> Result<TrainOutcome, CliError> {
    training::train::<S>(run, train_set, test_set).map_err(runtime)
}

pub fn train(common: &CommonOpts, config_path: &Path) -> Result<(), CliError> {
    let mut run = load_config(config_path)?;
    apply_seed(&mut run, common.seed);
    let (train_set, test_set) = load_datasets(&run)?;
    ensure_dir(&common.out)?;

    let outcome = match run.model.precision {
        Precision::F64 => run_training::<f64>(run, train_set, test_set)?,
        Precision::F32 => run_training::<f32>(run, train_set, test_set)?,
    };

    let mut log = String::new();
    for line in &outcome.log {
        writeln!(log, "{}", line.log_line()).unwrap();
        eprintln!("{}", line.log_line());
    }
    fs::write(common.out.join("metrics.tsv"), log)
        .map_err(|e| CliError::runtime(format!("writing metric log: {e}")))?;
    let ckpt_path = common.out.join("model.ckpt");
    outcome.checkpoint.save(&ckpt_path).map_err(runtime)?;
    eprintln!(
        "best test metric {:.4}; checkpoint at {}",
        outcome.best_metric,
        ckpt_path.display()
    );
    Ok(())
}

fn report_text(report: &training::MetricsReport) -> String {
    let mut out = String::new();
    writeln!(out, "accuracy\t{:.4}", report.accuracy).unwrap();
    if let Some(ref per_class) = report.per_class_accuracy {
        let cells: Vec<String> = per_class
            .iter()
            .enumerate()
            .map(|(i, a)| format!("{i}:{a:.4}"))
            .collect();
        writeln!(out, "per_class_accuracy\t{}", cells.join(" ")).unwrap();
    }
    if let Some(miou) = report.instance_miou {
        writeln!(out, "instance_miou\t{miou:.4}").unwrap();
    }
    if let Some(ref per_cat) = report.per_category_iou {
        let cells: Vec<String> = per_cat
            .iter()
            .enumerate()
            .map(|(i, a)| format!("{i}:{a:.4}"))
            .collect();
        writeln!(out, "per_category_iou\t{}", cells.join(" ")).unwrap();
    }
    out
}

fn evaluate_checkpoint<S: Scalar>(ckpt: &Checkpoint) -> Result<String, CliError> {
    let run = ckpt.config.clone();
    let test_path = run
        .train
        .test_manifest
        .as_ref()
        .ok_or_else(|| CliError::usage("checkpoint config has no test_manifest"))?;
    let test_set = Dataset::from_manifest_file(test_path, Split::Test).map_err(runtime)?;
    let model: Model<S> = Model::from_checkpoint(ckpt).map_err(runtime)?;
    // An evaluation-only trainer re-uses the metric plumbing.
    let mut eval_run = run.clone();
    eval_run.train.epochs = 0;
    let trainer = training::Trainer::<S>::with_model(eval_run, model, test_set.clone(), test_set)
        .map_err(runtime)?;
    let report = trainer.evaluate().map_err(runtime)?;
    Ok(report_text(&report))
}

pub fn eval(ckpt_path: &Path) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(ckpt_path).map_err(|e| CliError::usage(e.to_string()))?;
    let text = match ckpt.config.model.precision {
        Precision::F64 => evaluate_checkpoint::<f64>(&ckpt)?,
        Precision::F32 => evaluate_checkpoint::<f32>(&ckpt)?,
    };
    print!("{text}");
    Ok(())
}

fn segment_cloud<S: Scalar>(
    ckpt: &Checkpoint,
    cloud: &PointCloud,
) -> Result<Vec<u32>, CliError> {
    let model: Model<S> = Model::from_checkpoint(ckpt).map_err(runtime)?;
    let normalized = normalize_cloud(cloud).map_err(runtime)?;
    let logits = model.forward_segment(&normalized, Mode::Eval).map_err(runtime)?;
    let parts = model.config.num_parts;
    Ok(logits
        .data()
        .chunks(parts)
        .map(|row| {
            let mut best = 0usize;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect())
}

pub fn segment(common: &CommonOpts, ckpt_path: &Path, inputs: &[PathBuf]) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(ckpt_path).map_err(|e| CliError::usage(e.to_string()))?;
    if ckpt.config.train.task != Task::Segment {
        return Err(CliError::usage(
            "checkpoint was trained for classification, not segmentation",
        ));
    }
    ensure_dir(&common.out)?;
    for input in inputs {
        let cloud = load_xyz(input).map_err(runtime)?;
        let labels = match ckpt.config.model.precision {
            Precision::F64 => segment_cloud::<f64>(&ckpt, &cloud)?,
            Precision::F32 => segment_cloud::<f32>(&ckpt, &cloud)?,
        };
        let labeled = PointCloud::new(cloud.coords.clone(), Some(labels), None).map_err(runtime)?;
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cloud".into());
        let out_path = common.out.join(format!("{stem}_pred.xyz"));
        save_xyz(&out_path, &labeled).map_err(runtime)?;
        eprintln!("{} -> {} ({} points)", input.display(), out_path.display(), labeled.len());
    }
    Ok(())
}

pub fn gradcheck(seed: u64) -> Result<(), CliError> {
    let config = model::tiny_config();
    let cloud = normalize_cloud(
        &gen_synthetic(ShapeKind::Sphere, 64, 0.05, seed ^ 0x51).map_err(runtime)?,
    )
    .map_err(runtime)?;
    let seg_cloud = normalize_cloud(
        &gen_synthetic(ShapeKind::Cylinder, 64, 0.02, seed ^ 0x52).map_err(runtime)?,
    )
    .map_err(runtime)?;

    let cls_model: Model<f64> = Model::init(config.clone(), Task::Classify, seed);
    let cls = model::gradcheck(&cls_model, &cloud, 1, 4, seed).map_err(runtime)?;
    let seg_model: Model<f64> = Model::init(config, Task::Segment, seed.wrapping_add(1));
    let seg = model::gradcheck(&seg_model, &seg_cloud, 0, 4, seed).map_err(runtime)?;

    let max = cls.max_rel_err.max(seg.max_rel_err);
    println!("classification max rel err\t{:e}", cls.max_rel_err);
    println!("segmentation max rel err\t{:e}", seg.max_rel_err);
    println!("max rel err\t{max:e}");
    if max < 1e-5 {
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "gradient check failed: max relative error {max:e} >= 1e-5"
        )))
    }
}

pub fn sweep(common: &CommonOpts, config_path: &Path, grid_name: &str) -> Result<(), CliError> {
    let mut run = load_config(config_path)?;
    apply_seed(&mut run, common.seed);
    let grid = training::preset_grid(grid_name, &run).map_err(|e| CliError::usage(e.to_string()))?;
    let (train_set, test_set) = load_datasets(&run)?;
    let rows = match run.model.precision {
        Precision::F64 => training::sweep::<f64>(&grid, &train_set, &test_set).map_err(runtime)?,
        Precision::F32 => training::sweep::<f32>(&grid, &train_set, &test_set).map_err(runtime)?,
    };
    print!("{}", training::format_sweep_table(&rows));
    Ok(())
}
