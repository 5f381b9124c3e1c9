//! Shared domain types: coefficient sequences, style codes, codebooks,
//! windowing and normalization.
//!
//! All sequence types are immutable after construction and can be shared
//! read-only across workers.

use crate::error::{Error, Result};
use crate::real::Real;
use ndarray::{s, Array1, Array2, ArrayView2};

/// Width of an expression coefficient frame.
pub const EXPR_DIM: usize = 64;
/// Width of a head-pose coefficient frame (3 rotation + 3 translation).
pub const POSE_DIM: usize = 6;
/// Leading expression coefficients designated as the mouth block: they carry
/// lip articulation and are the target of lip-preservation losses/metrics.
pub const MOUTH_DIMS: usize = 16;

fn check_finite<R: Real>(frames: &Array2<R>, what: &str) -> Result<()> {
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Per-frame expression coefficient vectors, `T x 64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionSequence<R: Real> {
    frames: Array2<R>,
    frame_rate: f64,
}

impl<R: Real> ExpressionSequence<R> {
    pub fn new(frames: Array2<R>, frame_rate: f64) -> Result<Self> {
        if frames.ncols() != EXPR_DIM {
            return Err(Error::shape(format!(
                "expression frames must have {} coefficients, got {}",
                EXPR_DIM,
                frames.ncols()
            )));
        }
        if frames.nrows() == 0 {
            return Err(Error::shape("expression sequence must have at least one frame"));
        }
        check_finite(&frames, "expression sequence")?;
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> ArrayView2<'_, R> {
        self.frames.view()
    }

    pub fn into_frames(self) -> Array2<R> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // T >= 1 by construction
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    /// A single-frame sequence taken from frame `idx`, used as the reference
    /// parameter conditioning identity.
    pub fn single_frame(&self, idx: usize) -> Result<Self> {
        if idx >= self.len() {
            return Err(Error::invalid(format!(
                "frame index {idx} out of range for sequence of length {}",
                self.len()
            )));
        }
        let row = self.frames.slice(s![idx..idx + 1, ..]).to_owned();
        Self::new(row, self.frame_rate)
    }
}

/// Per-frame head-pose coefficient vectors, `T x 6`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence<R: Real> {
    frames: Array2<R>,
}

impl<R: Real> PoseSequence<R> {
    pub fn new(frames: Array2<R>) -> Result<Self> {
        if frames.ncols() != POSE_DIM {
            return Err(Error::shape(format!(
                "pose frames must have {} coefficients, got {}",
                POSE_DIM,
                frames.ncols()
            )));
        }
        check_finite(&frames, "pose sequence")?;
        Ok(Self { frames })
    }

    pub fn frames(&self) -> ArrayView2<'_, R> {
        self.frames.view()
    }

    pub fn into_frames(self) -> Array2<R> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }
}

/// Per-frame acoustic feature vectors, aligned 1:1 with motion frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence<R: Real> {
    frames: Array2<R>,
}

impl<R: Real> AudioFeatureSequence<R> {
    pub fn new(frames: Array2<R>) -> Result<Self> {
        check_finite(&frames, "audio feature sequence")?;
        Ok(Self { frames })
    }

    pub fn frames(&self) -> ArrayView2<'_, R> {
        self.frames.view()
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// A single vector summarizing a speaking style.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleCode<R: Real> {
    vector: Array1<R>,
}

impl<R: Real> StyleCode<R> {
    pub fn new(vector: Array1<R>) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("style code".to_string()));
        }
        Ok(Self { vector })
    }

    pub fn vector(&self) -> &Array1<R> {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// As a `1 x d` row matrix for graph inputs.
    pub fn as_row(&self) -> Array2<R> {
        self.vector.clone().insert_axis(ndarray::Axis(0))
    }
}

/// A learned discrete latent dictionary: `N x d`. Entries are only ever
/// updated in place, never removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<R: Real> {
    entries: Array2<R>,
}

impl<R: Real> Codebook<R> {
    pub fn new(entries: Array2<R>) -> Result<Self> {
        if entries.nrows() < 2 {
            return Err(Error::invalid(format!(
                "codebook needs at least 2 entries, got {}",
                entries.nrows()
            )));
        }
        check_finite(&entries, "codebook")?;
        Ok(Self { entries })
    }

    pub fn entries(&self) -> ArrayView2<'_, R> {
        self.entries.view()
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }
}

/// Split a sequence into consecutive `window`-frame chunks.
///
/// Rejects lengths that are not a multiple of `window`; there is no silent
/// truncation. Concatenating the result reproduces the input in order.
pub fn window_split<R: Real>(frames: ArrayView2<'_, R>, window: usize) -> Result<Vec<Array2<R>>> {
    if window == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    let t = frames.nrows();
    if t % window != 0 {
        return Err(Error::invalid(format!(
            "sequence length {t} is not divisible by window {window}; refusing to truncate"
        )));
    }
    Ok((0..t / window)
        .map(|i| frames.slice(s![i * window..(i + 1) * window, ..]).to_owned())
        .collect())
}

/// Per-dimension mean/std statistics for normalization. Computed on the
/// training split only; std is floored at 1e-6 so constant dimensions never
/// produce NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<R: Real> {
    pub mean: Array1<R>,
    pub std: Array1<R>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl<R: Real> NormStats<R> {
    /// Fit statistics over the rows of every array in `data`.
    pub fn fit<'a>(data: impl IntoIterator<Item = ArrayView2<'a, R>>) -> Result<Self> {
        let mut sum: Option<Array1<f64>> = None;
        let mut sumsq: Option<Array1<f64>> = None;
        let mut count = 0usize;
        for arr in data {
            let d = arr.ncols();
            let sum = sum.get_or_insert_with(|| Array1::zeros(d));
            let sumsq = sumsq.get_or_insert_with(|| Array1::zeros(d));
            if sum.len() != d {
                return Err(Error::shape("inconsistent dimension count across arrays"));
            }
            for row in arr.rows() {
                for (j, v) in row.iter().enumerate() {
                    let x = v.as_f64();
                    sum[j] += x;
                    sumsq[j] += x * x;
                }
            }
            count += arr.nrows();
        }
        let sum = sum.ok_or_else(|| Error::invalid("cannot fit stats on empty data"))?;
        let sumsq = sumsq.expect("set together with sum");
        if count == 0 {
            return Err(Error::invalid("cannot fit stats on zero frames"));
        }
        let n = count as f64;
        let mean = sum.mapv(|s| s / n);
        let var = sumsq
            .iter()
            .zip(mean.iter())
            .map(|(&sq, &m)| (sq / n - m * m).max(0.0))
            .collect::<Array1<f64>>();
        Ok(Self {
            mean: mean.mapv(R::from_f64),
            std: var.mapv(|v| R::from_f64(v.sqrt().max(STD_FLOOR))),
        })
    }

    /// Stats that leave data unchanged (zero mean, unit std).
    pub fn identity(d: usize) -> Self {
        Self { mean: Array1::zeros(d), std: Array1::from_elem(d, R::one()) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::shape(format!(
                "normalization stats cover {} dimensions, data has {d}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, frames: ArrayView2<'_, R>) -> Result<Array2<R>> {
        self.check_dim(frames.ncols())?;
        let mut out = frames.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, frames: ArrayView2<'_, R>) -> Result<Array2<R>> {
        self.check_dim(frames.ncols())?;
        let mut out = frames.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_frames(t: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::stream(seed, "types-test", 0);
        Array::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn window_split_paper_shape() {
        // T'=32, window 8 -> 4 windows.
        let frames = random_frames(32, EXPR_DIM, 1);
        let windows = window_split(frames.view(), 8).unwrap();
        assert_eq!(windows.len(), 4);
        assert!(windows.iter().all(|w| w.dim() == (8, EXPR_DIM)));
    }

    #[test]
    fn window_split_identity_case() {
        let frames = random_frames(8, EXPR_DIM, 2);
        let windows = window_split(frames.view(), 8).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0], frames);
    }

    #[test]
    fn window_split_concat_roundtrip() {
        let frames = random_frames(24, EXPR_DIM, 3);
        let windows = window_split(frames.view(), 8).unwrap();
        assert_eq!(windows.len(), 3);
        let views: Vec<_> = windows.iter().map(|w| w.view()).collect();
        let back = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn window_split_rejects_non_divisible() {
        let frames = random_frames(30, EXPR_DIM, 4);
        let err = window_split(frames.view(), 8).unwrap_err();
        assert!(err.to_string().contains("not divisible"));
    }

    #[test]
    fn normalize_constant_dimension_is_floored() {
        let frames = Array2::<f64>::from_elem((10, 3), 2.5);
        let stats = NormStats::fit([frames.view()]).unwrap();
        let normed = stats.normalize(frames.view()).unwrap();
        assert!(normed.iter().all(|v| v.is_finite()));
        let back = stats.denormalize(normed.view()).unwrap();
        for (a, b) in back.iter().zip(frames.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_rejects_dim_mismatch() {
        let frames = random_frames(10, 4, 5);
        let stats = NormStats::fit([frames.view()]).unwrap();
        let other = random_frames(10, 5, 6);
        assert!(stats.normalize(other.view()).is_err());
    }

    #[test]
    fn normalize_roundtrip_random() {
        let frames = random_frames(100, EXPR_DIM, 7);
        let stats = NormStats::fit([frames.view()]).unwrap();
        let normed = stats.normalize(frames.view()).unwrap();
        let back = stats.denormalize(normed.view()).unwrap();
        let max_err = back
            .iter()
            .zip(frames.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-5, "round-trip error {max_err}");
    }

    #[test]
    fn expression_sequence_validates() {
        assert!(ExpressionSequence::new(random_frames(4, 63, 8), 25.0).is_err());
        let mut bad = random_frames(4, EXPR_DIM, 9);
        bad[(1, 3)] = f64::NAN;
        assert!(ExpressionSequence::new(bad, 25.0).is_err());
        assert!(ExpressionSequence::new(random_frames(1, EXPR_DIM, 10), 25.0).is_ok());
    }

    #[test]
    fn codebook_rejects_degenerate() {
        assert!(Codebook::new(random_frames(1, 8, 11)).is_err());
        assert!(Codebook::new(random_frames(2, 8, 12)).is_ok());
    }

    proptest! {
        #[test]
        fn window_split_concat_identity(t_mult in 1usize..6, window in 1usize..9, seed in 0u64..50) {
            let t = t_mult * window;
            let frames = random_frames(t, 5, seed);
            let windows = window_split(frames.view(), window).unwrap();
            prop_assert_eq!(windows.len(), t_mult);
            let views: Vec<_> = windows.iter().map(|w| w.view()).collect();
            let back = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
            prop_assert_eq!(back, frames);
        }

        #[test]
        fn normalize_roundtrip_property(t in 2usize..40, d in 1usize..10, seed in 0u64..50) {
            let frames = random_frames(t, d, seed + 1000);
            let stats = NormStats::fit([frames.view()]).unwrap();
            let back = stats
                .denormalize(stats.normalize(frames.view()).unwrap().view())
                .unwrap();
            for (a, b) in back.iter().zip(frames.iter()) {
                let rel = (a - b).abs() / b.abs().max(1.0);
                prop_assert!(rel < 1e-6);
            }
        }
    }
}
