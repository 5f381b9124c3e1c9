//! Evaluation metrics. Landmark distances are computed in coefficient space
//! through the blendshape basis: the mouth variant restricts to the lip
//! vertex sets, the face variant uses every vertex. Both are proper means of
//! per-vertex Euclidean distances, so identical sequences score exactly 0.

use crate::blendshape::BlendshapeBasis;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::style::StyleModel;
use crate::types::ExpressionSequence;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Scalar metric bundle for one evaluation pass.
#[derive(Serialize, Deserialize, Clone, Debug, Default)]
pub struct EvalReport {
    /// Mean lip-landmark distance between generated and reference.
    pub mlmd_proxy: f64,
    /// Mean all-landmark distance between generated and reference.
    pub flmd_proxy: f64,
    /// Frozen-classifier accuracy of generated clips against target labels.
    pub style_accuracy: f64,
    /// Round-trip transfer error (fraction of clip variance).
    pub cycle_error: f64,
    /// Fraction of style codebook entries touched on the split.
    pub codebook_usage: f64,
    /// Distinct sampled pose index sequences across seeds.
    pub pose_diversity: usize,
    /// Largest per-dimension spread (max - min) across sampled poses.
    pub pose_range: f64,
}

/// Per-clip landmark distances backing the report means.
#[derive(Serialize, Deserialize, Clone, Debug, Default)]
pub struct PerClipBreakdown {
    pub mlmd: Vec<f64>,
    pub flmd: Vec<f64>,
    pub style_hit: Vec<bool>,
}

/// Mean per-vertex Euclidean distance between two coefficient sequences,
/// restricted to the given flattened vertex coordinates. The mean shape
/// cancels, so this is a pure function of the coefficient difference.
fn landmark_distance_on<R: Real>(
    deltas: &Array2<f64>, // EXPR_DIM x 3k
    gen: &ExpressionSequence<R>,
    reference: &ExpressionSequence<R>,
) -> Result<f64> {
    if gen.len() != reference.len() {
        return Err(Error::invalid(format!(
            "sequences differ in length: {} vs {}",
            gen.len(),
            reference.len()
        )));
    }
    let k = deltas.ncols() / 3;
    let diff = gen.frames().mapv(|v| v.as_f64()) - reference.frames().mapv(|v| v.as_f64());
    let coords = diff.dot(deltas); // T x 3k
    let mut total = 0.0;
    for row in coords.rows() {
        for v in 0..k {
            let (x, y, z) = (row[3 * v], row[3 * v + 1], row[3 * v + 2]);
            total += (x * x + y * y + z * z).sqrt();
        }
    }
    Ok(total / (gen.len() * k) as f64)
}

/// Mouth landmark distance: lip vertices only.
pub fn mlmd_proxy<R: Real>(
    basis: &BlendshapeBasis,
    gen: &ExpressionSequence<R>,
    reference: &ExpressionSequence<R>,
) -> Result<f64> {
    landmark_distance_on(&basis.lip_restricted_deltas(), gen, reference)
}

/// Face landmark distance: every vertex in the basis.
pub fn flmd_proxy<R: Real>(
    basis: &BlendshapeBasis,
    gen: &ExpressionSequence<R>,
    reference: &ExpressionSequence<R>,
) -> Result<f64> {
    landmark_distance_on(&basis.deltas, gen, reference)
}

/// Landmark and style metrics over paired generated/reference clips: a pure
/// function of its inputs. The pose and transfer fields of the report are
/// filled by the harness (they need other checkpoints) and stay zero here.
pub fn eval_metrics<R: Real>(
    generated: &[ExpressionSequence<R>],
    reference: &[ExpressionSequence<R>],
    target_labels: &[usize],
    basis: &BlendshapeBasis,
    style: &StyleModel<R>,
) -> Result<(EvalReport, PerClipBreakdown)> {
    if generated.len() != reference.len() || generated.len() != target_labels.len() {
        return Err(Error::invalid("generated/reference/label counts must match"));
    }
    if generated.is_empty() {
        return Err(Error::invalid("evaluation needs at least one clip"));
    }
    let mut per = PerClipBreakdown::default();
    let mut used = std::collections::BTreeSet::new();
    for ((gen, re), &label) in generated.iter().zip(reference).zip(target_labels) {
        per.mlmd.push(mlmd_proxy(basis, gen, re)?);
        per.flmd.push(flmd_proxy(basis, gen, re)?);
        per.style_hit.push(style.predict(gen)? == label);
        used.extend(style.window_indices(gen)?);
    }
    let n = generated.len() as f64;
    let report = EvalReport {
        mlmd_proxy: per.mlmd.iter().sum::<f64>() / n,
        flmd_proxy: per.flmd.iter().sum::<f64>() / n,
        style_accuracy: per.style_hit.iter().filter(|&&h| h).count() as f64 / n,
        codebook_usage: used.len() as f64 / style.config.n as f64,
        ..EvalReport::default()
    };
    Ok((report, per))
}

/// Largest per-dimension spread (max - min) over a stack of pose frames.
pub fn pose_range<R: Real>(frames: &Array2<R>) -> f64 {
    let mut worst = 0.0f64;
    for col in frames.columns() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in col {
            lo = lo.min(v.as_f64());
            hi = hi.max(v.as_f64());
        }
        worst = worst.max(hi - lo);
    }
    worst
}

/// Count distinct index sequences.
pub fn distinct_sequences(seqs: &[Vec<usize>]) -> usize {
    let set: std::collections::BTreeSet<&Vec<usize>> = seqs.iter().collect();
    set.len()
}
