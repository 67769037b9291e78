//! Feature store: manifest parsing, binary per-video feature files, and
//! deterministic dataset splits.
//!
//! The manifest is tab-separated text with a mandatory header line naming the
//! fields `video_id  mos_label  n_frames  feature_file  split`, one video per
//! line. Feature files are little-endian binary: magic `VRAF`, version u16,
//! dim u32, n_frames u32, then `n_frames * dim` f32 values row-major. Any
//! trailing bytes are treated as corruption.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Result, VraError};
use crate::sampler::make_rng;

pub const FEATURE_MAGIC: &[u8; 4] = b"VRAF";
pub const FEATURE_VERSION: u16 = 1;
pub const MANIFEST_HEADER: &str = "video_id\tmos_label\tn_frames\tfeature_file\tsplit";
pub const STORE_MANIFEST_NAME: &str = "manifest.tsv";

/// Train/test/validation split ratios, fixed at 70/20/10.
pub const SPLIT_RATIOS: (f64, f64, f64) = (0.7, 0.2, 0.1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    Val,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
            Split::Unassigned => "unassigned",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "val" => Some(Split::Val),
            "unassigned" => Some(Split::Unassigned),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoManifestEntry {
    pub video_id: String,
    pub mos_label: f64,
    pub n_frames: usize,
    pub feature_file: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<VideoManifestEntry>,
}

impl Manifest {
    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.video_id.clone()).collect()
    }

    pub fn entry(&self, video_id: &str) -> Option<&VideoManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn ids_in_split(&self, split: Split) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.video_id.clone())
            .collect()
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(VraError::DuplicateVideoId(e.video_id.clone()));
            }
            if e.video_id.is_empty()
                || e.video_id
                    .chars()
                    .any(|c| c.is_whitespace() || c == '/' || c == '\\')
            {
                return Err(VraError::ManifestParse {
                    path: path.to_owned(),
                    line: 0,
                    reason: format!("invalid video_id `{}`", e.video_id),
                });
            }
            if !e.mos_label.is_finite() || !(1.0..=5.0).contains(&e.mos_label) {
                return Err(VraError::ManifestParse {
                    path: path.to_owned(),
                    line: 0,
                    reason: format!(
                        "mos_label {} for `{}` outside [1.0, 5.0]",
                        e.mos_label, e.video_id
                    ),
                });
            }
            if e.n_frames == 0 {
                return Err(VraError::ManifestParse {
                    path: path.to_owned(),
                    line: 0,
                    reason: format!("n_frames must be >= 1 for `{}`", e.video_id),
                });
            }
        }
        Ok(())
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).map_err(|e| VraError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| VraError::io(path, e))?,
        None => {
            return Err(VraError::ManifestParse {
                path: path.to_owned(),
                line: 1,
                reason: "empty file, expected header".into(),
            })
        }
    };
    if header.trim_end() != MANIFEST_HEADER {
        return Err(VraError::ManifestParse {
            path: path.to_owned(),
            line: 1,
            reason: format!("bad header, expected `{MANIFEST_HEADER}`"),
        });
    }

    for (idx, line) in lines {
        let line = line.map_err(|e| VraError::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(VraError::ManifestParse {
                path: path.to_owned(),
                line: lineno,
                reason: format!("expected 5 tab-separated fields, found {}", fields.len()),
            });
        }
        let parse_err = |reason: String| VraError::ManifestParse {
            path: path.to_owned(),
            line: lineno,
            reason,
        };
        let mos_label: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad mos_label `{}`", fields[1])))?;
        let n_frames: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("bad n_frames `{}`", fields[2])))?;
        let split = Split::parse(fields[4])
            .ok_or_else(|| parse_err(format!("bad split `{}`", fields[4])))?;
        entries.push(VideoManifestEntry {
            video_id: fields[0].to_owned(),
            mos_label,
            n_frames,
            feature_file: PathBuf::from(fields[3]),
            split,
        });
    }

    let manifest = Manifest { entries };
    manifest.validate(path)?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    manifest.validate(path)?;
    let file = File::create(path).map_err(|e| VraError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| VraError::io(path, e);
    writeln!(w, "{MANIFEST_HEADER}").map_err(io_err)?;
    for e in &manifest.entries {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            e.video_id,
            e.mos_label,
            e.n_frames,
            e.feature_file.display(),
            e.split.as_str()
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Per-video feature matrix: one row per frame, one column per feature.
/// Values are stored in 32-bit; every value is finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureMatrix {
    video_id: String,
    values: Array2<f32>,
}

impl FrameFeatureMatrix {
    pub fn new(video_id: String, values: Array2<f32>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(VraError::EmptyInput("feature matrix with zero extent"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VraError::NonFinite {
                context: format!("features of `{video_id}`"),
            });
        }
        Ok(FrameFeatureMatrix { video_id, values })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }
}

pub fn write_feature_file(path: &Path, matrix: &FrameFeatureMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| VraError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| VraError::io(path, e);
    w.write_all(FEATURE_MAGIC).map_err(io_err)?;
    w.write_u16::<LittleEndian>(FEATURE_VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(matrix.dim() as u32).map_err(io_err)?;
    w.write_u32::<LittleEndian>(matrix.n_frames() as u32)
        .map_err(io_err)?;
    for v in matrix.values.iter() {
        w.write_f32::<LittleEndian>(*v).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_feature_file(path: &Path, video_id: &str) -> Result<FrameFeatureMatrix> {
    let file = File::open(path).map_err(|e| VraError::io(path, e))?;
    let mut r = BufReader::new(file);
    let corrupt = |reason: &str| VraError::CorruptFile {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt("short read on magic"))?;
    if &magic != FEATURE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| corrupt("short read on version"))?;
    if version != FEATURE_VERSION {
        return Err(VraError::VersionMismatch {
            path: path.to_owned(),
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let dim = r
        .read_u32::<LittleEndian>()
        .map_err(|_| corrupt("short read on dim"))? as usize;
    let n_frames = r
        .read_u32::<LittleEndian>()
        .map_err(|_| corrupt("short read on n_frames"))? as usize;
    if dim == 0 || n_frames == 0 {
        return Err(corrupt("zero dimension in header"));
    }
    let mut data = vec![0f32; dim * n_frames];
    for slot in &mut data {
        *slot = r
            .read_f32::<LittleEndian>()
            .map_err(|_| corrupt("truncated value section"))?;
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(corrupt("trailing bytes after value section")),
        Err(e) => return Err(VraError::io(path, e)),
    }
    let values = Array2::from_shape_vec((n_frames, dim), data)
        .expect("shape matches the buffer length");
    FrameFeatureMatrix::new(video_id.to_owned(), values)
}

/// Parse a text feature matrix: one frame per line, comma-separated values.
fn read_csv_matrix(path: &Path, video_id: &str) -> Result<FrameFeatureMatrix> {
    let file = File::open(path).map_err(|e| VraError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| VraError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f32>, _> = line
            .split(',')
            .map(|tok| tok.trim().parse::<f32>())
            .collect();
        let row = row.map_err(|_| VraError::CorruptFile {
            path: path.to_owned(),
            reason: format!("unparseable value on line {}", idx + 1),
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(VraError::CorruptFile {
                    path: path.to_owned(),
                    reason: format!("ragged row on line {}", idx + 1),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(VraError::CorruptFile {
            path: path.to_owned(),
            reason: "no rows".into(),
        });
    }
    let d = rows[0].len();
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    let n = flat.len() / d;
    let values = Array2::from_shape_vec((n, d), flat).expect("rows are rectangular");
    FrameFeatureMatrix::new(video_id.to_owned(), values)
}

fn read_raw_feature_file(path: &Path, video_id: &str) -> Result<FrameFeatureMatrix> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("txt") => read_csv_matrix(path, video_id),
        _ => read_feature_file(path, video_id),
    }
}

/// An on-disk directory of validated per-video feature files plus a manifest.
#[derive(Debug)]
pub struct FeatureStore {
    root: PathBuf,
    manifest: Manifest,
    dim: usize,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    /// Build a store from a manifest and a directory of raw feature files.
    /// Raw files may be binary (`.vraf`) or text (`.csv`/`.txt`, one frame
    /// per line). Every video is validated: finite values, one consistent
    /// feature dimension, and a frame count matching the manifest.
    pub fn ingest(manifest_path: &Path, raw_dir: &Path, store_root: &Path) -> Result<FeatureStore> {
        let manifest = read_manifest(manifest_path)?;
        if manifest.entries.is_empty() {
            return Err(VraError::EmptyInput("manifest has no entries"));
        }
        std::fs::create_dir_all(store_root).map_err(|e| VraError::io(store_root, e))?;

        let mut dim: Option<usize> = None;
        let mut stored = Manifest::default();
        for entry in &manifest.entries {
            let raw_path = raw_dir.join(&entry.feature_file);
            let matrix = read_raw_feature_file(&raw_path, &entry.video_id)?;
            if matrix.n_frames() != entry.n_frames {
                return Err(VraError::ManifestParse {
                    path: manifest_path.to_owned(),
                    line: 0,
                    reason: format!(
                        "`{}`: manifest says {} frames, file has {}",
                        entry.video_id,
                        entry.n_frames,
                        matrix.n_frames()
                    ),
                });
            }
            match dim {
                None => dim = Some(matrix.dim()),
                Some(d) if d != matrix.dim() => {
                    return Err(VraError::DimensionMismatch {
                        video_id: entry.video_id.clone(),
                        expected: d,
                        found: matrix.dim(),
                    })
                }
                _ => {}
            }
            let file_name = format!("{}.vraf", entry.video_id);
            write_feature_file(&store_root.join(&file_name), &matrix)?;
            stored.entries.push(VideoManifestEntry {
                feature_file: PathBuf::from(file_name),
                ..entry.clone()
            });
        }
        write_manifest(&store_root.join(STORE_MANIFEST_NAME), &stored)?;
        Self::open(store_root)
    }

    /// Open an existing store directory.
    pub fn open(store_root: &Path) -> Result<FeatureStore> {
        let manifest = read_manifest(&store_root.join(STORE_MANIFEST_NAME))?;
        if manifest.entries.is_empty() {
            return Err(VraError::EmptyInput("store manifest has no entries"));
        }
        let index = manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.video_id.clone(), i))
            .collect();
        let mut store = FeatureStore {
            root: store_root.to_owned(),
            manifest,
            dim: 0,
            index,
        };
        let first_id = store.manifest.entries[0].video_id.clone();
        store.dim = store.load(&first_id)?.dim();
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn entry(&self, video_id: &str) -> Result<&VideoManifestEntry> {
        self.index
            .get(video_id)
            .map(|&i| &self.manifest.entries[i])
            .ok_or_else(|| VraError::UnknownVideoId(video_id.to_owned()))
    }

    /// Load one video's features from disk.
    pub fn load(&self, video_id: &str) -> Result<FrameFeatureMatrix> {
        let entry = self.entry(video_id)?;
        read_feature_file(&self.root.join(&entry.feature_file), video_id)
    }

    /// Load and cache features for a set of ids, keyed by id.
    pub fn load_all(&self, ids: &[String]) -> Result<HashMap<String, FrameFeatureMatrix>> {
        let mut map = HashMap::with_capacity(ids.len());
        for id in ids {
            map.insert(id.clone(), self.load(id)?);
        }
        Ok(map)
    }
}

/// A seeded partition of the manifest's ids into train/test/val.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub seed: u64,
    pub ratios: (f64, f64, f64),
}

/// Shuffle the manifest's ids with a seeded permutation and partition them
/// 70/20/10. Train and test counts round down; validation takes the rest.
pub fn split_dataset(manifest: &Manifest, seed: u64) -> Result<SplitAssignment> {
    let mut ids = manifest.ids();
    if ids.is_empty() {
        return Err(VraError::EmptyInput("manifest has no entries"));
    }
    let mut rng = make_rng(seed, 0, "dataset-split");
    rng.shuffle(&mut ids);

    let n = ids.len();
    // Integer arithmetic: 0.7 * 700.0 rounds to 489.99..., which would floor
    // to 489 instead of the exact floor(7n/10) = 490.
    let n_train = n * 7 / 10;
    let n_test = n * 2 / 10;
    let test_end = n_train + n_test;

    Ok(SplitAssignment {
        train_ids: ids[..n_train].to_vec(),
        test_ids: ids[n_train..test_end].to_vec(),
        val_ids: ids[test_end..].to_vec(),
        seed,
        ratios: SPLIT_RATIOS,
    })
}

/// Write a split assignment back into the manifest's `split` column.
pub fn apply_split(manifest: &mut Manifest, assignment: &SplitAssignment) -> Result<()> {
    let mut by_id: HashMap<&str, Split> = HashMap::new();
    for id in &assignment.train_ids {
        by_id.insert(id, Split::Train);
    }
    for id in &assignment.test_ids {
        by_id.insert(id, Split::Test);
    }
    for id in &assignment.val_ids {
        by_id.insert(id, Split::Val);
    }
    for entry in &mut manifest.entries {
        let split = by_id
            .get(entry.video_id.as_str())
            .ok_or_else(|| VraError::UnknownVideoId(entry.video_id.clone()))?;
        entry.split = *split;
    }
    Ok(())
}
