//! Repeated stochastic inference and ensembling. Each (repeat, video) cell
//! draws its frame window from an RNG derived from (base_seed, repeat index,
//! video id), so results are identical whether cells run sequentially or in
//! parallel.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VraError};
use crate::metrics::rmse_metric;
use crate::pooling::pool_concat;
use crate::regressor::{predict, RegressorParams};
use crate::sampler::make_rng;
use crate::store::FeatureStore;

pub const DEFAULT_REPEATS: usize = 10;
pub const PREDICTIONS_HEADER: &str = "video_id\tpredicted_mos";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub weight_a: f64,
    pub weight_b: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            weight_a: 0.75,
            weight_b: 0.25,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_a.is_finite() && self.weight_b.is_finite()) {
            return Err(VraError::InvalidConfig(format!(
                "ensemble weights ({}, {})",
                self.weight_a, self.weight_b
            )));
        }
        Ok(())
    }
}

/// R repeated predictions for V videos: `values[(r, v)]` is repeat `r` of
/// `video_ids[v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub video_ids: Vec<String>,
    pub values: Array2<f64>,
    pub base_seed: u64,
}

impl PredictionSet {
    pub fn repeats(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_videos(&self) -> usize {
        self.values.ncols()
    }
}

/// Predict one video from one freshly sampled window, eval mode. The window
/// length is the L the head was trained with; the head's input width only
/// fixes the feature dimension, not L, so the caller supplies it.
pub fn predict_video(
    params: &RegressorParams,
    store: &FeatureStore,
    video_id: &str,
    sequence_length: usize,
    rng: &mut crate::sampler::RngStream,
) -> Result<f64> {
    if params.input_dim != store.dim() * 2 {
        return Err(VraError::ShapeMismatch {
            context: "regressor input vs pooled store feature".into(),
            expected: params.input_dim,
            found: store.dim() * 2,
        });
    }
    let entry = store.entry(video_id)?;
    let features = store.load(video_id)?;
    let sample = crate::sampler::sample_sequence(&features, entry.mos_label, sequence_length, rng)?;
    let pooled = pool_concat(sample.features.view())?;
    predict(params, &pooled.into_concat())
}

/// Repeated predictions: entry (r, v) derives its RNG from
/// (base_seed, r, video_ids[v]). `parallel` only changes scheduling, never
/// values.
pub fn predict_repeated(
    params: &RegressorParams,
    store: &FeatureStore,
    video_ids: &[String],
    repeats: usize,
    sequence_length: usize,
    base_seed: u64,
    parallel: bool,
) -> Result<PredictionSet> {
    if repeats == 0 {
        return Err(VraError::InvalidConfig("repeats must be >= 1".into()));
    }
    if video_ids.is_empty() {
        return Err(VraError::EmptyInput("no videos to predict"));
    }
    if params.input_dim != store.dim() * 2 {
        return Err(VraError::ShapeMismatch {
            context: "regressor input vs pooled store feature".into(),
            expected: params.input_dim,
            found: store.dim() * 2,
        });
    }

    let features = store.load_all(video_ids)?;
    let labels: Vec<f64> = video_ids
        .iter()
        .map(|id| Ok(store.entry(id)?.mos_label))
        .collect::<Result<_>>()?;

    let cell = |r: usize, v: usize| -> Result<f64> {
        let id = &video_ids[v];
        let mut rng = make_rng(base_seed, r as u32, id);
        let sample =
            crate::sampler::sample_sequence(&features[id], labels[v], sequence_length, &mut rng)?;
        let pooled = pool_concat(sample.features.view())?;
        predict(params, &pooled.into_concat())
    };

    let n = video_ids.len();
    let flat: Vec<f64> = if parallel {
        (0..repeats * n)
            .into_par_iter()
            .map(|i| cell(i / n, i % n))
            .collect::<Result<_>>()?
    } else {
        (0..repeats * n)
            .map(|i| cell(i / n, i % n))
            .collect::<Result<_>>()?
    };

    Ok(PredictionSet {
        video_ids: video_ids.to_vec(),
        values: Array2::from_shape_vec((repeats, n), flat)
            .expect("shape matches buffer length"),
        base_seed,
    })
}

/// Per-video column means over the repeats.
pub fn average_predictions(set: &PredictionSet) -> Vec<f64> {
    let r = set.repeats() as f64;
    (0..set.n_videos())
        .map(|v| set.values.column(v).sum() / r)
        .collect()
}

/// Mean RMSE over all unordered repeat pairs: a run-to-run consistency
/// figure for the stochastic sampling.
pub fn pairwise_consistency_rmse(set: &PredictionSet) -> Result<f64> {
    let r = set.repeats();
    if r < 2 {
        return Err(VraError::EmptyInput(
            "pairwise consistency needs at least two repeats",
        ));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..r {
        for j in (i + 1)..r {
            let a = set.values.row(i);
            let b = set.values.row(j);
            total += rmse_metric(
                a.as_slice().expect("row-major layout"),
                b.as_slice().expect("row-major layout"),
            )?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub video_id: String,
    pub mos: f64,
}

/// Weighted two-model combination, aligned by position with id checking.
pub fn ensemble_weighted(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
    cfg: &EnsembleConfig,
) -> Result<Vec<PredictionRecord>> {
    cfg.validate()?;
    if a.len() != b.len() {
        return Err(VraError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (ra, rb))| {
            if ra.video_id != rb.video_id {
                return Err(VraError::IdOrderMismatch {
                    index: i,
                    left: ra.video_id.clone(),
                    right: rb.video_id.clone(),
                });
            }
            Ok(PredictionRecord {
                video_id: ra.video_id.clone(),
                mos: cfg.weight_a * ra.mos + cfg.weight_b * rb.mos,
            })
        })
        .collect()
}

pub fn records_from_average(set: &PredictionSet) -> Vec<PredictionRecord> {
    set.video_ids
        .iter()
        .zip(average_predictions(set))
        .map(|(id, mos)| PredictionRecord {
            video_id: id.clone(),
            mos,
        })
        .collect()
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| VraError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| VraError::io(path, e);
    writeln!(w, "{PREDICTIONS_HEADER}").map_err(io_err)?;
    for r in records {
        writeln!(w, "{}\t{}", r.video_id, r.mos).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).map_err(|e| VraError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut lines = reader.lines().enumerate();

    match lines.next() {
        Some((_, Ok(header))) if header.trim_end() == PREDICTIONS_HEADER => {}
        Some((_, Ok(_))) => {
            return Err(VraError::CorruptFile {
                path: path.to_owned(),
                reason: format!("bad header, expected `{PREDICTIONS_HEADER}`"),
            })
        }
        Some((_, Err(e))) => return Err(VraError::io(path, e)),
        None => {
            return Err(VraError::CorruptFile {
                path: path.to_owned(),
                reason: "empty predictions file".into(),
            })
        }
    }

    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| VraError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| VraError::CorruptFile {
            path: path.to_owned(),
            reason: format!("line {}: {reason}", idx + 1),
        };
        let (id, value) = line
            .split_once('\t')
            .ok_or_else(|| corrupt("expected two tab-separated fields".into()))?;
        let mos: f64 = value
            .parse()
            .map_err(|_| corrupt(format!("bad prediction `{value}`")))?;
        if !mos.is_finite() {
            return Err(corrupt(format!("non-finite prediction {mos}")));
        }
        if !seen.insert(id.to_owned()) {
            return Err(VraError::DuplicateVideoId(id.to_owned()));
        }
        records.push(PredictionRecord {
            video_id: id.to_owned(),
            mos,
        });
    }
    Ok(records)
}

/// Audit dump of the full R x V matrix: a header row of video ids, one row
/// per repeat.
pub fn write_prediction_matrix(path: &Path, set: &PredictionSet) -> Result<()> {
    let file = File::create(path).map_err(|e| VraError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| VraError::io(path, e);
    writeln!(w, "{}", set.video_ids.join("\t")).map_err(io_err)?;
    for row in set.values.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join("\t")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}
