//! Blendshape basis mapping expression coefficients to 3-d vertex positions:
//! `Ver(beta) = mean + sum_j beta_j * delta_j`.
//!
//! The shipped synthetic basis is seeded and orthonormal, with localized
//! supports: the mouth block of coefficients moves only the lip vertices and
//! the remaining coefficients never touch them. That keeps lip-preservation
//! metrics meaningful while styles reshape the rest of the face. Real bases
//! can be supplied through the same container layout.

use crate::container::{ArrayContainer, NamedArray};
use crate::error::{Error, Result};
use crate::rng::{normal, stream};
use crate::types::{EXPR_DIM, MOUTH_DIMS};
use ndarray::{Array1, Array2};
use std::path::Path;

pub const VERTEX_COUNT: usize = 468;
pub const LIP_SET_SIZE: usize = 20;

pub struct BlendshapeBasis {
    /// V x 3 rest positions.
    pub mean: Array2<f64>,
    /// EXPR_DIM x 3V basis deltas, one flattened (x0,y0,z0,x1,...) row per
    /// coefficient.
    pub deltas: Array2<f64>,
    pub upper_lip: Vec<usize>,
    pub lower_lip: Vec<usize>,
}

impl BlendshapeBasis {
    pub fn synthetic(seed: u64) -> Self {
        let mut rng = stream(seed, "blendshape", 0);
        let mean = Array2::from_shape_fn((VERTEX_COUNT, 3), |_| normal(&mut rng, 0.0, 0.5));
        let upper_lip: Vec<usize> = (100..100 + LIP_SET_SIZE).collect();
        let lower_lip: Vec<usize> = (200..200 + LIP_SET_SIZE).collect();
        let lip_coords: Vec<usize> = upper_lip
            .iter()
            .chain(lower_lip.iter())
            .flat_map(|&v| (0..3).map(move |c| 3 * v + c))
            .collect();
        let is_lip = {
            let mut mask = vec![false; 3 * VERTEX_COUNT];
            for &c in &lip_coords {
                mask[c] = true;
            }
            mask
        };
        let rest_coords: Vec<usize> =
            (0..3 * VERTEX_COUNT).filter(|&c| !is_lip[c]).collect();

        let mut deltas = Array2::zeros((EXPR_DIM, 3 * VERTEX_COUNT));
        // mouth-block deltas live on lip coordinates, the rest elsewhere;
        // orthonormalize within each group (disjoint supports keep the whole
        // set orthonormal)
        fill_orthonormal_rows(&mut deltas, 0..MOUTH_DIMS, &lip_coords, &mut rng);
        fill_orthonormal_rows(&mut deltas, MOUTH_DIMS..EXPR_DIM, &rest_coords, &mut rng);

        BlendshapeBasis { mean, deltas, upper_lip, lower_lip }
    }

    pub fn validate(&self) -> Result<()> {
        if self.upper_lip.is_empty() || self.lower_lip.is_empty() {
            return Err(Error::invalid("lip vertex sets must be nonempty"));
        }
        for &v in self.upper_lip.iter().chain(self.lower_lip.iter()) {
            if v >= VERTEX_COUNT {
                return Err(Error::invalid(format!("lip vertex {v} out of range")));
            }
        }
        let upper: std::collections::BTreeSet<_> = self.upper_lip.iter().collect();
        if self.lower_lip.iter().any(|v| upper.contains(v)) {
            return Err(Error::invalid("upper and lower lip sets must be disjoint"));
        }
        if self.mean.dim() != (VERTEX_COUNT, 3)
            || self.deltas.dim() != (EXPR_DIM, 3 * VERTEX_COUNT)
        {
            return Err(Error::shape("blendshape basis has wrong dimensions"));
        }
        Ok(())
    }

    /// Vertex positions for one coefficient frame.
    pub fn vertices(&self, frame: &[f64]) -> Array2<f64> {
        assert_eq!(frame.len(), EXPR_DIM, "coefficient frame width");
        let mut flat: Array1<f64> = Array1::zeros(3 * VERTEX_COUNT);
        for (j, &b) in frame.iter().enumerate() {
            if b != 0.0 {
                flat.scaled_add(b, &self.deltas.row(j));
            }
        }
        let mut out = self.mean.clone();
        for v in 0..VERTEX_COUNT {
            for c in 0..3 {
                out[(v, c)] += flat[3 * v + c];
            }
        }
        out
    }

    /// The fixed linear map `A` with lip_difference(beta) = A beta + const:
    /// mean upper-lip position minus mean lower-lip position, 3 x EXPR_DIM.
    pub fn lip_difference_map(&self) -> Array2<f64> {
        let mut a = Array2::zeros((3, EXPR_DIM));
        for j in 0..EXPR_DIM {
            for c in 0..3 {
                let up: f64 = self
                    .upper_lip
                    .iter()
                    .map(|&v| self.deltas[(j, 3 * v + c)])
                    .sum::<f64>()
                    / self.upper_lip.len() as f64;
                let lo: f64 = self
                    .lower_lip
                    .iter()
                    .map(|&v| self.deltas[(j, 3 * v + c)])
                    .sum::<f64>()
                    / self.lower_lip.len() as f64;
                a[(c, j)] = up - lo;
            }
        }
        a
    }

    /// Row-per-coefficient matrix of lip-vertex coordinates only (used by the
    /// mouth landmark metric): EXPR_DIM x 3*(|upper|+|lower|).
    pub fn lip_restricted_deltas(&self) -> Array2<f64> {
        let coords: Vec<usize> = self
            .upper_lip
            .iter()
            .chain(self.lower_lip.iter())
            .flat_map(|&v| (0..3).map(move |c| 3 * v + c))
            .collect();
        Array2::from_shape_fn((EXPR_DIM, coords.len()), |(j, k)| self.deltas[(j, coords[k])])
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut c = ArrayContainer::new();
        c.push(NamedArray::from_array2_f32("mean", &self.mean.mapv(|v| v as f32)))?;
        c.push(NamedArray::from_array2_f32("deltas", &self.deltas.mapv(|v| v as f32)))?;
        c.push(NamedArray::i64(
            "upper_lip",
            vec![self.upper_lip.len()],
            self.upper_lip.iter().map(|&v| v as i64).collect(),
        ))?;
        c.push(NamedArray::i64(
            "lower_lip",
            vec![self.lower_lip.len()],
            self.lower_lip.iter().map(|&v| v as i64).collect(),
        ))?;
        c.set_meta("kind", "blendshape_basis");
        c.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let c = ArrayContainer::load(dir)?;
        let mean = c.get("mean")?.to_array2_f32()?.mapv(|v| v as f64);
        let deltas = c.get("deltas")?.to_array2_f32()?.mapv(|v| v as f64);
        let idx = |name: &str| -> Result<Vec<usize>> {
            Ok(c.get(name)?.as_i64()?.iter().map(|&v| v as usize).collect())
        };
        let basis = BlendshapeBasis {
            mean,
            deltas,
            upper_lip: idx("upper_lip")?,
            lower_lip: idx("lower_lip")?,
        };
        basis.validate()?;
        Ok(basis)
    }
}

fn fill_orthonormal_rows(
    deltas: &mut Array2<f64>,
    rows: std::ops::Range<usize>,
    support: &[usize],
    rng: &mut rand_chacha::ChaCha20Rng,
) {
    assert!(rows.len() <= support.len(), "support too small for orthonormal set");
    let start = rows.start;
    for j in rows {
        let mut v: Array1<f64> = Array1::zeros(support.len());
        for x in v.iter_mut() {
            *x = normal(rng, 0.0, 1.0);
        }
        // Gram-Schmidt against earlier rows in the same group
        for prev in start..j {
            let dot: f64 = support
                .iter()
                .enumerate()
                .map(|(k, &c)| v[k] * deltas[(prev, c)])
                .sum();
            for (k, &c) in support.iter().enumerate() {
                v[k] -= dot * deltas[(prev, c)];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 1e-8, "degenerate draw during orthonormalization");
        for (k, &c) in support.iter().enumerate() {
            deltas[(j, c)] = v[k] / norm;
        }
    }
}
