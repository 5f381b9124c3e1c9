//! Vector quantization with a straight-through gradient estimator, shared by
//! the style and head-pose models.
//!
//! Assignment is an exact nearest-neighbour scan (ties break to the lowest
//! index, so results are reproducible bit for bit). The quantized value used
//! downstream is `f + stop_grad(q - f)`: forward it equals the codebook
//! entry, backward it passes gradients to the encoder unchanged. The
//! codebook itself learns only through the explicit codebook loss term.

use crate::graph::{Graph, NodeId};
use crate::nn::ParamStore;
use crate::real::{rr, Real};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

#[derive(Clone)]
pub struct VectorQuantizer {
    pub codebook: usize,
    pub n: usize,
    pub d: usize,
    steps_unused: Vec<u32>,
}

impl VectorQuantizer {
    /// Codebook entries start uniform in `[-1/n, 1/n]`.
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        n: usize,
        d: usize,
    ) -> Self {
        assert!(n >= 2, "codebook needs at least two entries");
        let lim = 1.0 / n as f64;
        let init = Array2::from_shape_fn((n, d), |_| rr(rng.gen_range(-lim..lim)));
        let codebook = ps.add(&format!("{prefix}.codebook"), init);
        VectorQuantizer { codebook, n, d, steps_unused: vec![0; n] }
    }

    /// Nearest codebook entry per row by squared Euclidean distance.
    pub fn assign<R: Real>(&self, ps: &ParamStore<R>, f: &ArrayView2<R>) -> Vec<usize> {
        let cb = ps.value(self.codebook);
        assert_eq!(f.ncols(), self.d, "query dim mismatch");
        nearest_rows(&cb.view(), f)
    }

    /// Quantize rows of `f` with straight-through gradients. Returns the
    /// straight-through node, the raw codebook gather (for the codebook
    /// loss), and the chosen indices.
    pub fn quantize_st<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        f: NodeId,
    ) -> (NodeId, NodeId, Vec<usize>) {
        let idx = {
            let fv = g.value(f).view();
            let cb = ps.value(self.codebook);
            nearest_rows(&cb.view(), &fv)
        };
        let cb_node = ps.bind(g, self.codebook);
        let q_raw = g.gather_rows(cb_node, &idx);
        let f_detached = g.detach(f);
        let gap = g.sub(q_raw, f_detached);
        let gap_detached = g.detach(gap);
        let q_st = g.add(f, gap_detached);
        (q_st, q_raw, idx)
    }

    /// Codebook and commitment terms: `||sg(f) - q||^2` pulls entries toward
    /// encodings, `||f - sg(q)||^2` pulls encodings toward their entry.
    pub fn vq_terms<R: Real>(
        &self,
        g: &mut Graph<R>,
        f: NodeId,
        q_raw: NodeId,
    ) -> (NodeId, NodeId) {
        let f_sg = g.detach(f);
        let codebook_loss = g.mse(q_raw, f_sg);
        let q_sg = g.detach(q_raw);
        let commitment_loss = g.mse(f, q_sg);
        (codebook_loss, commitment_loss)
    }

    /// Record one optimization step's assignments for dead-entry tracking.
    pub fn note_usage(&mut self, idx: &[usize]) {
        for c in &mut self.steps_unused {
            *c = c.saturating_add(1);
        }
        for &i in idx {
            self.steps_unused[i] = 0;
        }
    }

    /// Re-seed entries unused for `threshold` consecutive steps with random
    /// recent encoder outputs (plus a little noise so duplicates split).
    /// Returns how many entries were replaced.
    pub fn reseed_dead<R: Real>(
        &mut self,
        ps: &mut ParamStore<R>,
        rng: &mut ChaCha20Rng,
        recent: &ArrayView2<R>,
        threshold: u32,
    ) -> usize {
        assert!(recent.nrows() > 0, "need recent encodings to reseed from");
        let mut replaced = 0;
        for entry in 0..self.n {
            if self.steps_unused[entry] < threshold {
                continue;
            }
            let src = rng.gen_range(0..recent.nrows());
            let cb = ps.value_mut(self.codebook);
            for j in 0..self.d {
                let noise: f64 = rng.gen_range(-1e-3..1e-3);
                cb[(entry, j)] = recent[(src, j)] + rr(noise);
            }
            self.steps_unused[entry] = 0;
            replaced += 1;
        }
        replaced
    }
}

/// Exact nearest-row scan; ties break to the lowest index.
pub fn nearest_rows<R: Real>(codebook: &ArrayView2<R>, queries: &ArrayView2<R>) -> Vec<usize> {
    assert_eq!(codebook.ncols(), queries.ncols(), "dim mismatch");
    queries
        .rows()
        .into_iter()
        .map(|q| {
            let mut best = 0usize;
            let mut best_d = R::infinity();
            for (k, entry) in codebook.rows().into_iter().enumerate() {
                let d: R = q
                    .iter()
                    .zip(entry.iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fraction of codebook entries hit at least once by `assignments`.
pub fn usage_fraction(n: usize, assignments: impl IntoIterator<Item = usize>) -> f64 {
    let mut seen = vec![false; n];
    for a in assignments {
        seen[a] = true;
    }
    seen.iter().filter(|&&s| s).count() as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_max_rel_err;
    use crate::rng::stream;
    use ndarray::{arr2, Array};
    use rand::Rng;

    fn rand_arr(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, "vq-test", 0);
        Array::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let cb = arr2(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let q = arr2(&[[1.0, 0.0], [0.5, 0.5]]);
        let idx = nearest_rows(&cb.view(), &q.view());
        assert_eq!(idx[0], 0, "exact duplicate entries: lowest wins");
        assert_eq!(idx[1], 0, "equidistant: lowest wins");
    }

    #[test]
    fn assignment_matches_naive_scan() {
        let cb = rand_arr(50, 8, 1);
        let q = rand_arr(200, 8, 2);
        let got = nearest_rows(&cb.view(), &q.view());
        for (i, row) in q.rows().into_iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..cb.nrows() {
                let d: f64 = row
                    .iter()
                    .zip(cb.row(k).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            assert_eq!(got[i], best, "query {i}");
        }
    }

    #[test]
    fn straight_through_value_and_gradient() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = stream(3, "vq-test", 1);
        let vq = VectorQuantizer::new(&mut ps, &mut rng, "vq", 8, 4);
        // spread the codebook so assignments are stable
        *ps.value_mut(vq.codebook) = rand_arr(8, 4, 4);

        let f0 = rand_arr(3, 4, 5);
        let mut g = Graph::new();
        let f = g.input_with_grad(f0.clone());
        let (q_st, q_raw, idx) = vq.quantize_st(&mut g, &ps, f);
        // forward: quantized value equals the gathered entries
        assert_eq!(g.value(q_st), g.value(q_raw));
        for (i, &k) in idx.iter().enumerate() {
            for j in 0..4 {
                assert_eq!(g.value(q_st)[(i, j)], ps.value(vq.codebook)[(k, j)]);
            }
        }
        // backward: d sum(q_st * c) / d f == c (identity pass-through)
        let c = rand_arr(3, 4, 6);
        let cn = g.input(c.clone());
        let prod = g.mul(q_st, cn);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        let gf = grads.get(f).unwrap();
        for (a, b) in gf.iter().zip(c.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn codebook_learns_only_from_codebook_term() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = stream(7, "vq-test", 2);
        let vq = VectorQuantizer::new(&mut ps, &mut rng, "vq", 4, 3);
        *ps.value_mut(vq.codebook) = rand_arr(4, 3, 8);
        let f0 = rand_arr(2, 3, 9);

        // commitment term alone: no codebook gradient
        let mut g = Graph::new();
        let f = g.input_with_grad(f0.clone());
        let (_q_st, q_raw, _) = vq.quantize_st(&mut g, &ps, f);
        let (cb_loss, commit_loss) = vq.vq_terms(&mut g, f, q_raw);
        let grads = g.backward(commit_loss);
        let pg = g.param_grads(&grads, ps.len());
        assert!(pg[vq.codebook].is_none(), "commitment must not move codebook");
        assert!(grads.get(f).is_some(), "commitment moves the encoder");

        // codebook term alone: gradient points from entry toward encoding
        let grads2 = g.backward(cb_loss);
        let pg2 = g.param_grads(&grads2, ps.len());
        assert!(pg2[vq.codebook].is_some(), "codebook term moves codebook");
        assert!(grads2.get(f).is_none(), "codebook term must not move encoder");
    }

    #[test]
    fn straight_through_composite_matches_surrogate() {
        // Finite differences of the quantized network measure the true local
        // derivative, which is zero through the codebook gather; the
        // straight-through estimator is instead the exact gradient of a
        // surrogate in which the quantization gap and the stop-gradient
        // targets are frozen constants. So: check the real graph against the
        // surrogate analytically, then check the (smooth) surrogate against
        // finite differences.
        let mut ps = ParamStore::<f64>::new();
        let mut rng = stream(11, "vq-test", 3);
        let enc = crate::nn::Linear::new(&mut ps, &mut rng, "enc", 4, 3);
        let dec = crate::nn::Linear::new(&mut ps, &mut rng, "dec", 3, 4);
        let vq = VectorQuantizer::new(&mut ps, &mut rng, "vq", 6, 3);
        *ps.value_mut(vq.codebook) = rand_arr(6, 3, 12);
        let x = rand_arr(5, 4, 13);

        // real graph
        let mut g = Graph::new();
        let xn = g.input(x.clone());
        let f = enc.apply(&mut g, &ps, xn);
        let ft = g.tanh(f);
        let (q_st, q_raw, idx) = vq.quantize_st(&mut g, &ps, ft);
        let (cb_l, com_l) = vq.vq_terms(&mut g, ft, q_raw);
        let y = dec.apply(&mut g, &ps, q_st);
        let rec = g.mse(y, xn);
        let com_s = g.scale(com_l, 0.25);
        let a = g.add(rec, cb_l);
        let loss = g.add(a, com_s);
        let loss_val = g.value(loss)[(0, 0)];
        let grads = g.backward(loss);
        let real_pg = g.param_grads(&grads, ps.len());

        let ft_vals = g.value(ft).to_owned();
        let q_vals = g.value(q_raw).to_owned();
        let gap_vals = &q_vals - &ft_vals;

        let build = move |g: &mut Graph<f64>, ps: &ParamStore<f64>| {
            let xn = g.input(x.clone());
            let f = enc.apply(g, ps, xn);
            let ft = g.tanh(f);
            let gap = g.input(gap_vals.clone());
            let q_st = g.add(ft, gap);
            let cb_node = ps.bind(g, vq.codebook);
            let q_ref = g.gather_rows(cb_node, &idx);
            let f_frozen = g.input(ft_vals.clone());
            let cb_l = g.mse(q_ref, f_frozen);
            let q_frozen = g.input(q_vals.clone());
            let com_l = g.mse(ft, q_frozen);
            let y = dec.apply(g, ps, q_st);
            let rec = g.mse(y, xn);
            let com_s = g.scale(com_l, 0.25);
            let a = g.add(rec, cb_l);
            g.add(a, com_s)
        };

        let mut g2 = Graph::new();
        let loss2 = build(&mut g2, &ps);
        assert_eq!(g2.value(loss2)[(0, 0)], loss_val, "surrogate value differs");
        let grads2 = g2.backward(loss2);
        let sur_pg = g2.param_grads(&grads2, ps.len());
        for (slot, pair) in real_pg.iter().zip(sur_pg.iter()).enumerate() {
            match pair {
                (Some(a), Some(b)) => {
                    let gap = a
                        .iter()
                        .zip(b.iter())
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max);
                    assert!(gap < 1e-12, "slot {slot} gradient gap {gap}");
                }
                (None, None) => {}
                _ => panic!("slot {slot}: gradient presence differs"),
            }
        }

        let worst = finite_diff_max_rel_err(&ps, build, 1e-6, 8, 45);
        assert!(worst < 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn dead_entries_reseed_after_threshold() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = stream(15, "vq-test", 4);
        let mut vq = VectorQuantizer::new(&mut ps, &mut rng, "vq", 4, 2);
        let before = ps.value(vq.codebook).clone();
        for _ in 0..200 {
            vq.note_usage(&[0, 1]); // entries 2 and 3 never used
        }
        let recent = arr2(&[[5.0, 5.0], [-5.0, -5.0]]);
        let replaced = vq.reseed_dead(&mut ps, &mut rng, &recent.view(), 200);
        assert_eq!(replaced, 2);
        let after = ps.value(vq.codebook);
        for j in 0..2 {
            assert_eq!(before[(0, j)], after[(0, j)], "live entry untouched");
            assert_eq!(before[(1, j)], after[(1, j)], "live entry untouched");
            assert!(after[(2, j)].abs() > 1.0, "dead entry moved to data");
            assert!(after[(3, j)].abs() > 1.0, "dead entry moved to data");
        }
    }

    #[test]
    fn init_range_shrinks_with_codebook_size() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = stream(20, "vq-test", 5);
        let vq = VectorQuantizer::new(&mut ps, &mut rng, "vq", 100, 6);
        assert!(ps.value(vq.codebook).iter().all(|v| v.abs() <= 0.01));
    }

    #[test]
    fn usage_fraction_counts_distinct_entries() {
        assert_eq!(usage_fraction(4, vec![0, 0, 1]), 0.5);
        assert_eq!(usage_fraction(4, vec![0, 1, 2, 3, 3]), 1.0);
    }
}
