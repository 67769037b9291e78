//! Checkpoint persistence. Binary layout, little-endian throughout:
//! magic `VRAC`, version u16, length-prefixed config JSON, input dim,
//! layer shape table, f64 parameter arrays (weights then biases per layer),
//! optimizer step counter and learning rate, first/second moment arrays,
//! best validation loss and epoch, and a trailing CRC-32 over everything
//! before it. Round-trips are bit-exact.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::error::{Result, VraError};
use crate::optim::OptimizerState;
use crate::regressor::{Gradients, Layer, RegressorParams};
use crate::trainer::{TrainConfig, TrainedModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VRAC";
pub const CHECKPOINT_VERSION: u16 = 1;

fn push_layers(buf: &mut Vec<u8>, layers: &[Layer]) {
    for layer in layers {
        for v in layer.weights.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in layer.biases.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    model.params.validate()?;
    let config_json = serde_json::to_vec(&model.config)
        .map_err(|e| VraError::InvalidConfig(format!("unserializable config: {e}")))?;

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.write_u16::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
    buf.write_u32::<LittleEndian>(config_json.len() as u32).unwrap();
    buf.extend_from_slice(&config_json);

    buf.write_u32::<LittleEndian>(model.params.input_dim as u32).unwrap();
    buf.write_u32::<LittleEndian>(model.params.layers.len() as u32).unwrap();
    for layer in &model.params.layers {
        buf.write_u32::<LittleEndian>(layer.weights.nrows() as u32).unwrap();
        buf.write_u32::<LittleEndian>(layer.weights.ncols() as u32).unwrap();
    }
    push_layers(&mut buf, &model.params.layers);

    buf.write_u64::<LittleEndian>(model.optimizer.t).unwrap();
    buf.extend_from_slice(&model.optimizer.learning_rate.to_le_bytes());
    push_layers(&mut buf, &model.optimizer.m.layers);
    push_layers(&mut buf, &model.optimizer.v.layers);

    buf.extend_from_slice(&model.best_val_loss.to_le_bytes());
    buf.write_u64::<LittleEndian>(model.best_epoch as u64).unwrap();

    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc).unwrap();

    std::fs::write(path, &buf).map_err(|e| VraError::io(path, e))?;
    Ok(())
}

struct CheckpointReader<'a> {
    cursor: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl<'a> CheckpointReader<'a> {
    fn corrupt(&self, reason: &str) -> VraError {
        VraError::CorruptFile {
            path: self.path.to_owned(),
            reason: reason.to_owned(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.cursor
            .read_u32::<LittleEndian>()
            .map_err(|_| self.corrupt(&format!("short read on {what}")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.cursor
            .read_u64::<LittleEndian>()
            .map_err(|_| self.corrupt(&format!("short read on {what}")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.cursor
            .read_f64::<LittleEndian>()
            .map_err(|_| self.corrupt(&format!("short read on {what}")))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64(what)?);
        }
        Ok(out)
    }

    fn layers(&mut self, shapes: &[(usize, usize)], what: &str) -> Result<Vec<Layer>> {
        let mut layers = Vec::with_capacity(shapes.len());
        for &(rows, cols) in shapes {
            let w = self.f64_vec(rows * cols, what)?;
            let b = self.f64_vec(rows, what)?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((rows, cols), w)
                    .expect("shape matches buffer length"),
                biases: Array1::from_vec(b),
            });
        }
        Ok(layers)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| VraError::io(path, e))?;
    let corrupt = |reason: &str| VraError::CorruptFile {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };

    if bytes.len() < 10 {
        return Err(corrupt("file shorter than any valid checkpoint"));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(VraError::VersionMismatch {
            path: path.to_owned(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let payload = &bytes[..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(payload) != stored_crc {
        return Err(VraError::ChecksumMismatch {
            path: path.to_owned(),
        });
    }

    let mut r = CheckpointReader {
        cursor: Cursor::new(&payload[6..]),
        path,
    };
    let config_len = r.u32("config length")? as usize;
    let mut config_json = vec![0u8; config_len];
    r.cursor
        .read_exact(&mut config_json)
        .map_err(|_| corrupt("short read on config"))?;
    let config: TrainConfig = serde_json::from_slice(&config_json)
        .map_err(|e| corrupt(&format!("bad config JSON: {e}")))?;

    let input_dim = r.u32("input dim")? as usize;
    let n_layers = r.u32("layer count")? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(corrupt("implausible layer count"));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.u32("layer rows")? as usize;
        let cols = r.u32("layer cols")? as usize;
        if rows == 0 || cols == 0 {
            return Err(corrupt("zero layer extent"));
        }
        shapes.push((rows, cols));
    }

    let params = RegressorParams {
        layers: r.layers(&shapes, "parameters")?,
        input_dim,
        dropout_rate: config.dropout_rate,
    };
    params.validate()?;

    let t = r.u64("step counter")?;
    let learning_rate = r.f64("learning rate")?;
    let m = Gradients {
        layers: r.layers(&shapes, "first moments")?,
    };
    let v = Gradients {
        layers: r.layers(&shapes, "second moments")?,
    };
    let best_val_loss = r.f64("best validation loss")?;
    let best_epoch = r.u64("best epoch")? as usize;

    if r.cursor.position() as usize != payload.len() - 6 {
        return Err(corrupt("trailing bytes after checkpoint body"));
    }

    Ok(TrainedModel {
        params,
        optimizer: OptimizerState {
            m,
            v,
            t,
            learning_rate,
        },
        config,
        best_val_loss,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::{init_params, predict};
    use crate::sampler::make_rng;
    use ndarray::Array1;
    use tempfile::TempDir;

    fn sample_model(seed: u64) -> TrainedModel {
        let config = TrainConfig {
            learning_rate: 3e-4,
            hidden_dims: vec![6, 3],
            seed,
            ..TrainConfig::default()
        };
        let mut rng = make_rng(seed, 0, "ckpt");
        let params = init_params(8, &config.hidden_dims, config.dropout_rate, &mut rng).unwrap();
        let mut optimizer = OptimizerState::new(&params, config.learning_rate);
        optimizer.t = 41;
        for layer in &mut optimizer.m.layers {
            layer.weights.mapv_inplace(|_| rng.next_f64() - 0.5);
            layer.biases.mapv_inplace(|_| rng.next_f64() - 0.5);
        }
        for layer in &mut optimizer.v.layers {
            layer.weights.mapv_inplace(|_| rng.next_f64());
            layer.biases.mapv_inplace(|_| rng.next_f64());
        }
        TrainedModel {
            params,
            optimizer,
            config,
            best_val_loss: 0.31415,
            best_epoch: 12,
        }
    }

    fn assert_bit_identical(a: &TrainedModel, b: &TrainedModel) {
        for (la, lb) in a.params.layers.iter().zip(&b.params.layers) {
            for (x, y) in la.weights.iter().zip(lb.weights.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in la.biases.iter().zip(lb.biases.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (ga, gb) in [(&a.optimizer.m, &b.optimizer.m), (&a.optimizer.v, &b.optimizer.v)] {
            for (la, lb) in ga.layers.iter().zip(&gb.layers) {
                for (x, y) in la.weights.iter().zip(lb.weights.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
                for (x, y) in la.biases.iter().zip(lb.biases.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
        assert_eq!(a.optimizer.t, b.optimizer.t);
        assert_eq!(
            a.optimizer.learning_rate.to_bits(),
            b.optimizer.learning_rate.to_bits()
        );
        assert_eq!(a.best_val_loss.to_bits(), b.best_val_loss.to_bits());
        assert_eq!(a.best_epoch, b.best_epoch);
        assert_eq!(a.config, b.config);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tmp = TempDir::new().unwrap();
        let model = sample_model(1);
        let path = tmp.path().join("m.vrac");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_bit_identical(&model, &back);
    }

    #[test]
    fn infinite_best_loss_round_trips() {
        let tmp = TempDir::new().unwrap();
        let mut model = sample_model(2);
        model.best_val_loss = f64::INFINITY;
        model.best_epoch = 0;
        let path = tmp.path().join("m.vrac");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert!(back.best_val_loss.is_infinite());
    }

    #[test]
    fn reloaded_model_predicts_identically() {
        let tmp = TempDir::new().unwrap();
        let model = sample_model(3);
        let path = tmp.path().join("m.vrac");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let mut rng = make_rng(99, 0, "inputs");
        for _ in 0..100 {
            let x = Array1::from_shape_fn(8, |_| rng.next_f64() * 4.0 - 2.0);
            let a = predict(&model.params, &x).unwrap();
            let b = predict(&back.params, &x).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn flipped_version_byte_is_a_version_error() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("m.vrac");
        save_checkpoint(&sample_model(4), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(VraError::VersionMismatch { found, expected: 1, .. }) if found != 1
        ));
    }

    #[test]
    fn corrupted_payload_fails_the_checksum() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("m.vrac");
        save_checkpoint(&sample_model(5), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(VraError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("m.vrac");
        save_checkpoint(&sample_model(6), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..8]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(VraError::CorruptFile { .. })
        ));

        // Losing the tail invalidates the checksum.
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(VraError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("m.vrac");
        std::fs::write(&path, b"NOPEnope n").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(VraError::CorruptFile { .. })
        ));
    }
}
