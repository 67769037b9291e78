//! Command-line pipeline driver: ingest, split, train, predict, ensemble,
//! evaluate, scale-boxes.
//!
//! Configuration precedence is defaults < config file < flags, and every
//! subcommand writes the resolved settings beside its outputs so a run can
//! be audited and replayed. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numeric failure. Diagnostics go to stderr; data goes to files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Result, VraError};
use crate::geometry::{scale_bbox, BBox, DEFAULT_BOX_SCALE};
use crate::inference::{
    ensemble_weighted, predict_repeated, read_predictions, records_from_average,
    write_prediction_matrix, write_predictions, EnsembleConfig, DEFAULT_REPEATS,
};
use crate::metrics::{set_metrics, MetricsReport, SetMetrics};
use crate::store::{
    apply_split, read_manifest, split_dataset, write_manifest, FeatureStore, Split,
    STORE_MANIFEST_NAME,
};
use crate::trainer::{finetune, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "vra",
    version,
    about = "Visual realism assessment pipeline: feature ingestion, MOS head training, repeated inference, ensembling, and competition scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// Parsed once per process; the size spread between variants is irrelevant.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
enum Command {
    /// Validate raw per-video feature files and build a feature store.
    Ingest {
        /// Manifest describing the raw videos (TSV).
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding the raw feature files named in the manifest.
        #[arg(long)]
        raw_dir: PathBuf,
        /// Store directory to create.
        #[arg(long)]
        store: PathBuf,
    },
    /// Assign train/test/val splits in the store manifest (70/20/10).
    Split {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the MOS regression head on the store's train split.
    Train {
        #[arg(long)]
        store: PathBuf,
        /// Output directory for the checkpoint and history.
        #[arg(long)]
        output: PathBuf,
        /// JSON file with TrainConfig fields; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// After the main run, resume the best checkpoint on train+val.
        #[arg(long)]
        finetune_on_all: bool,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Predict MOS for a split with repeated sampling and averaging.
    Predict {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Predictions file to write (TSV).
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the checkpoint's frame-window length.
        #[arg(long)]
        sequence_length: Option<usize>,
        /// Compute cells one at a time instead of in parallel (same output).
        #[arg(long)]
        sequential: bool,
        /// Also dump the full repeats-by-videos matrix to this file.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Weighted two-model combination of prediction files.
    Ensemble {
        /// First predictions file.
        file_a: PathBuf,
        /// Second predictions file.
        file_b: PathBuf,
        #[arg(long, default_value_t = EnsembleConfig::default().weight_a)]
        wa: f64,
        #[arg(long, default_value_t = EnsembleConfig::default().weight_b)]
        wb: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score prediction files (one per test set) against labeled videos.
    Evaluate {
        /// Manifest carrying the ground-truth MOS labels.
        #[arg(long)]
        labels: PathBuf,
        /// Report file to write (JSON, plus a .txt rendering).
        #[arg(long)]
        output: PathBuf,
        /// Prediction files, one per test set.
        #[arg(required = true)]
        predictions: Vec<PathBuf>,
    },
    /// Expand face bounding boxes about their centers and clamp to the image.
    ScaleBoxes {
        /// CSV input: video_id,frame,x1,y1,x2,y2 per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BOX_SCALE)]
        factor: f64,
        /// Image width in pixels.
        #[arg(long)]
        width: f64,
        /// Image height in pixels.
        #[arg(long)]
        height: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Val,
    All,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    accumulation_steps: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    sequence_length: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    /// Comma-separated hidden layer sizes, e.g. 512,128.
    #[arg(long, value_delimiter = ',')]
    hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    scheduler_factor: Option<f64>,
    #[arg(long)]
    scheduler_patience: Option<usize>,
    #[arg(long)]
    scheduler_threshold: Option<f64>,
    #[arg(long)]
    min_lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainOverrides {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($target:expr => $src:ident),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { $target = v; })*
            };
        }
        set!(
            cfg.learning_rate => learning_rate,
            cfg.batch_size => batch_size,
            cfg.accumulation_steps => accumulation_steps,
            cfg.dropout_rate => dropout_rate,
            cfg.sequence_length => sequence_length,
            cfg.max_epochs => max_epochs,
            cfg.early_stop_patience => early_stop_patience,
            cfg.hidden_dims => hidden_dims,
            cfg.scheduler.factor => scheduler_factor,
            cfg.scheduler.patience => scheduler_patience,
            cfg.scheduler.threshold => scheduler_threshold,
            cfg.scheduler.min_lr => min_lr,
            cfg.adamw.beta1 => beta1,
            cfg.adamw.beta2 => beta2,
            cfg.adamw.eps => eps,
            cfg.adamw.weight_decay => weight_decay,
            cfg.seed => seed,
        );
        cfg
    }
}

/// Parse and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            manifest,
            raw_dir,
            store,
        } => cmd_ingest(&manifest, &raw_dir, &store),
        Command::Split { store, seed } => cmd_split(&store, seed),
        Command::Train {
            store,
            output,
            config,
            finetune_on_all,
            overrides,
        } => cmd_train(&store, &output, config.as_deref(), finetune_on_all, &overrides),
        Command::Predict {
            store,
            checkpoint,
            output,
            split,
            repeats,
            seed,
            sequence_length,
            sequential,
            matrix,
        } => cmd_predict(
            &store,
            &checkpoint,
            &output,
            split,
            repeats,
            seed,
            sequence_length,
            sequential,
            matrix.as_deref(),
        ),
        Command::Ensemble {
            file_a,
            file_b,
            wa,
            wb,
            output,
        } => cmd_ensemble(&file_a, &file_b, wa, wb, &output),
        Command::Evaluate {
            labels,
            output,
            predictions,
        } => cmd_evaluate(&labels, &output, &predictions),
        Command::ScaleBoxes {
            input,
            output,
            factor,
            width,
            height,
        } => cmd_scale_boxes(&input, &output, factor, width, height),
    }
}

/// Resolved-settings record written beside each command's outputs.
/// `target` is the primary output: a directory gets the record inside it,
/// a file gets a sibling named `<file>.<command>.effective-config.json`.
fn write_effective_config(target: &Path, command: &str, value: serde_json::Value) -> Result<()> {
    let path = if target.is_dir() {
        target.join(format!("{command}.effective-config.json"))
    } else {
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".{command}.effective-config.json"));
        target.with_file_name(name)
    };
    let text = serde_json::to_string_pretty(&value)
        .map_err(|e| VraError::InvalidConfig(format!("config record: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| VraError::io(&path, e))?;
    Ok(())
}

fn cmd_ingest(manifest: &Path, raw_dir: &Path, store_root: &Path) -> Result<()> {
    let store = FeatureStore::ingest(manifest, raw_dir, store_root)?;
    log::info!(
        "ingested {} videos (feature dim {}) into {}",
        store.len(),
        store.dim(),
        store_root.display()
    );
    write_effective_config(
        store_root,
        "ingest",
        json!({
            "command": "ingest",
            "manifest": manifest.display().to_string(),
            "raw_dir": raw_dir.display().to_string(),
            "store": store_root.display().to_string(),
            "videos": store.len(),
            "feature_dim": store.dim(),
        }),
    )
}

fn cmd_split(store_root: &Path, seed: u64) -> Result<()> {
    let manifest_path = store_root.join(STORE_MANIFEST_NAME);
    let mut manifest = read_manifest(&manifest_path)?;
    let assignment = split_dataset(&manifest, seed)?;
    apply_split(&mut manifest, &assignment)?;
    write_manifest(&manifest_path, &manifest)?;
    log::info!(
        "split {} videos into {}/{}/{} train/test/val (seed {seed})",
        manifest.entries.len(),
        assignment.train_ids.len(),
        assignment.test_ids.len(),
        assignment.val_ids.len()
    );
    write_effective_config(
        store_root,
        "split",
        json!({
            "command": "split",
            "store": store_root.display().to_string(),
            "seed": seed,
            "ratios": [assignment.ratios.0, assignment.ratios.1, assignment.ratios.2],
            "counts": {
                "train": assignment.train_ids.len(),
                "test": assignment.test_ids.len(),
                "val": assignment.val_ids.len(),
            },
        }),
    )
}

fn resolve_train_config(
    config_file: Option<&Path>,
    overrides: &TrainOverrides,
) -> Result<TrainConfig> {
    let base = match config_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| VraError::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| VraError::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    let cfg = overrides.apply(base);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(
    store_root: &Path,
    output: &Path,
    config_file: Option<&Path>,
    finetune_on_all: bool,
    overrides: &TrainOverrides,
) -> Result<()> {
    let config = resolve_train_config(config_file, overrides)?;
    let store = FeatureStore::open(store_root)?;
    let train_ids = store.manifest().ids_in_split(Split::Train);
    let val_ids = store.manifest().ids_in_split(Split::Val);

    std::fs::create_dir_all(output).map_err(|e| VraError::io(output, e))?;
    let (mut model, mut history) = train(&config, &store, &train_ids, &val_ids)?;
    log::info!(
        "training done: best val RMSE {:.6} at epoch {}",
        model.best_val_loss,
        model.best_epoch
    );

    if finetune_on_all {
        let mut all_ids = train_ids.clone();
        all_ids.extend(val_ids.iter().cloned());
        let (tuned, tuned_history) = finetune(&model, &store, &all_ids, &val_ids)?;
        log::info!(
            "finetune done: best val RMSE {:.6} at epoch {}",
            tuned.best_val_loss,
            tuned.best_epoch
        );
        history.epochs.extend(tuned_history.epochs);
        model = tuned;
    }

    let ckpt_path = output.join("model.vrac");
    save_checkpoint(&model, &ckpt_path)?;
    let history_path = output.join("history.json");
    let history_json = serde_json::to_string_pretty(&history)
        .map_err(|e| VraError::InvalidConfig(format!("history: {e}")))?;
    std::fs::write(&history_path, history_json + "\n")
        .map_err(|e| VraError::io(&history_path, e))?;

    write_effective_config(
        output,
        "train",
        json!({
            "command": "train",
            "store": store_root.display().to_string(),
            "output": output.display().to_string(),
            "finetune_on_all": finetune_on_all,
            "train_videos": train_ids.len(),
            "val_videos": val_ids.len(),
            "config": serde_json::to_value(&config)
                .map_err(|e| VraError::InvalidConfig(e.to_string()))?,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    store_root: &Path,
    checkpoint: &Path,
    output: &Path,
    split: SplitArg,
    repeats: usize,
    seed: u64,
    sequence_length: Option<usize>,
    sequential: bool,
    matrix: Option<&Path>,
) -> Result<()> {
    let store = FeatureStore::open(store_root)?;
    let model = load_checkpoint(checkpoint)?;
    let length = sequence_length.unwrap_or(model.config.sequence_length);
    let ids = match split {
        SplitArg::Train => store.manifest().ids_in_split(Split::Train),
        SplitArg::Test => store.manifest().ids_in_split(Split::Test),
        SplitArg::Val => store.manifest().ids_in_split(Split::Val),
        SplitArg::All => store.manifest().ids(),
    };

    let set = predict_repeated(&model.params, &store, &ids, repeats, length, seed, !sequential)?;
    let records = records_from_average(&set);
    write_predictions(output, &records)?;
    if let Some(matrix_path) = matrix {
        write_prediction_matrix(matrix_path, &set)?;
    }
    log::info!(
        "predicted {} videos x {} repeats -> {}",
        ids.len(),
        repeats,
        output.display()
    );

    write_effective_config(
        output,
        "predict",
        json!({
            "command": "predict",
            "store": store_root.display().to_string(),
            "checkpoint": checkpoint.display().to_string(),
            "output": output.display().to_string(),
            "split": format!("{split:?}").to_lowercase(),
            "repeats": repeats,
            "seed": seed,
            "sequence_length": length,
            "sequential": sequential,
        }),
    )
}

fn cmd_ensemble(file_a: &Path, file_b: &Path, wa: f64, wb: f64, output: &Path) -> Result<()> {
    let cfg = EnsembleConfig {
        weight_a: wa,
        weight_b: wb,
    };
    let a = read_predictions(file_a)?;
    let b = read_predictions(file_b)?;
    let combined = ensemble_weighted(&a, &b, &cfg)?;
    write_predictions(output, &combined)?;
    write_effective_config(
        output,
        "ensemble",
        json!({
            "command": "ensemble",
            "file_a": file_a.display().to_string(),
            "file_b": file_b.display().to_string(),
            "weight_a": wa,
            "weight_b": wb,
            "output": output.display().to_string(),
        }),
    )
}

fn cmd_evaluate(labels_path: &Path, output: &Path, prediction_files: &[PathBuf]) -> Result<()> {
    let labels = read_manifest(labels_path)?;
    let mut per_set: Vec<SetMetrics> = Vec::with_capacity(prediction_files.len());
    for (set_index, file) in prediction_files.iter().enumerate() {
        let mut records = read_predictions(file)?;
        // Canonical id order makes the metrics independent of file line order.
        records.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let mut preds = Vec::with_capacity(records.len());
        let mut truth = Vec::with_capacity(records.len());
        for r in &records {
            let entry = labels
                .entry(&r.video_id)
                .ok_or_else(|| VraError::MissingLabel(r.video_id.clone()))?;
            preds.push(r.mos);
            truth.push(entry.mos_label);
        }
        let metrics = set_metrics(&preds, &truth).map_err(|e| match e {
            VraError::DegenerateInput(msg) => {
                VraError::DegenerateInput(format!("test set {}: {msg}", set_index + 1))
            }
            other => other,
        })?;
        per_set.push(metrics);
    }
    let report = MetricsReport::from_sets(per_set)?;

    let json_text = serde_json::to_string_pretty(&report)
        .map_err(|e| VraError::InvalidConfig(format!("report: {e}")))?;
    std::fs::write(output, json_text + "\n").map_err(|e| VraError::io(output, e))?;
    let text_path = output.with_extension("txt");
    std::fs::write(&text_path, report.render_text()).map_err(|e| VraError::io(&text_path, e))?;
    log::info!(
        "final score {:.4} over {} set(s) -> {}",
        report.final_score,
        report.per_set.len(),
        output.display()
    );

    write_effective_config(
        output,
        "evaluate",
        json!({
            "command": "evaluate",
            "labels": labels_path.display().to_string(),
            "output": output.display().to_string(),
            "predictions": prediction_files
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>(),
        }),
    )
}

fn cmd_scale_boxes(
    input: &Path,
    output: &Path,
    factor: f64,
    width: f64,
    height: f64,
) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| VraError::io(input, e))?;
    let mut out = String::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| VraError::CorruptFile {
            path: input.to_owned(),
            reason: format!("line {}: {reason}", idx + 1),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(corrupt(format!("expected 6 fields, found {}", fields.len())));
        }
        let coords: Vec<f64> = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| corrupt("unparseable coordinate".into()))?;
        let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3])?;
        let scaled = scale_bbox(&bbox, factor, width, height)?;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fields[0], fields[1], scaled.x1, scaled.y1, scaled.x2, scaled.y2
        ));
    }
    std::fs::write(output, out).map_err(|e| VraError::io(output, e))?;
    write_effective_config(
        output,
        "scale-boxes",
        json!({
            "command": "scale-boxes",
            "input": input.display().to_string(),
            "output": output.display().to_string(),
            "factor": factor,
            "width": width,
            "height": height,
        }),
    )
}
