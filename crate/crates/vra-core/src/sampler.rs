//! Seeded frame-window sampling.
//!
//! Every random choice in the pipeline flows through [`RngStream`], a
//! SplitMix64 generator whose state is derived from an explicit provenance
//! triple `(base_seed, repeat_index, video_id)`. Identical provenance yields
//! an identical stream, which is what makes repeated inference and parallel
//! execution reproducible.

use ndarray::Array2;

use crate::error::{Result, VraError};
use crate::store::FrameFeatureMatrix;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

/// SplitMix64 finalizer: a full-avalanche bijection on u64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a hash of a byte string.
#[inline]
fn fnv1a64(s: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Where a stream came from. Identical provenance means identical draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub base_seed: u64,
    pub repeat_index: u32,
    pub video_id: String,
}

/// A deterministic 64-bit random stream (SplitMix64).
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    provenance: Provenance,
}

/// Derive a stream from its provenance triple. Each component is folded in
/// through the SplitMix64 finalizer, so any change to the seed, the repeat
/// index, or the video id yields an unrelated stream.
pub fn make_rng(base_seed: u64, repeat_index: u32, video_id: &str) -> RngStream {
    let mut z = mix64(base_seed);
    z = mix64(z ^ u64::from(repeat_index));
    z = mix64(z ^ fnv1a64(video_id));
    RngStream {
        state: z,
        provenance: Provenance {
            base_seed,
            repeat_index,
            video_id: video_id.to_owned(),
        },
    }
}

impl RngStream {
    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, rejection-sampled to avoid modulo bias.
    pub fn uniform_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "uniform_below requires n > 0");
        // 2^64 mod n; draws at or above the last full multiple of n are rejected.
        let rem = (u64::MAX % n).wrapping_add(1) % n;
        let limit = u64::MAX - rem;
        loop {
            let v = self.next_u64();
            if v <= limit {
                return v % n;
            }
        }
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.uniform_below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}

/// A contiguous window of `L` frames sliced out of one video's features.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    pub video_id: String,
    pub start: usize,
    pub features: Array2<f32>,
    pub mos_label: f64,
}

impl SequenceSample {
    pub fn length(&self) -> usize {
        self.features.nrows()
    }
}

/// Pick a random contiguous window of `length` frames. The start index is
/// uniform over `[0, n_frames - length]`, both ends inclusive, so every frame
/// of the video is reachable.
pub fn sample_sequence(
    features: &FrameFeatureMatrix,
    mos_label: f64,
    length: usize,
    rng: &mut RngStream,
) -> Result<SequenceSample> {
    if length == 0 {
        return Err(VraError::InvalidConfig(
            "sequence length must be at least 1".into(),
        ));
    }
    let n = features.n_frames();
    if n < length {
        return Err(VraError::TooFewFrames {
            video_id: features.video_id().to_owned(),
            n_frames: n,
            needed: length,
        });
    }
    let start = rng.uniform_below((n - length + 1) as u64) as usize;
    let window = features
        .values()
        .slice(ndarray::s![start..start + length, ..])
        .to_owned();
    Ok(SequenceSample {
        video_id: features.video_id().to_owned(),
        start,
        features: window,
        mos_label,
    })
}
