//! Discrete speaking-style representation.
//!
//! Expression clips are cut into fixed windows, embedded per window, run
//! through a small transformer encoder, vector-quantized against a learned
//! codebook, and pooled into a single style code. Training combines
//! reconstruction, the two codebook terms, a triplet loss over style codes,
//! and a style classification loss. There is no positional encoding
//! anywhere in this tower: the style code is meant to describe *how* a clip
//! moves, not *when*, so window order must not matter.

use std::path::Path;

use crate::config::RunConfig;
use crate::container::ArrayContainer;
use crate::corpus::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{
    clip_global_norm, push_stats, read_stats, Adam, AttentionPool, EncoderLayer, Linear,
    ParamStore,
};
use crate::real::{rr, Real};
use crate::rng::stream;
use crate::types::{ExpressionSequence, NormStats, StyleCode, EXPR_DIM};
use crate::vq::VectorQuantizer;
use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

/// Network half of the style model: parameter handles plus shape info.
#[derive(Clone)]
pub struct StyleExtractor {
    embed: Linear,
    layers: Vec<EncoderLayer>,
    pub vq: VectorQuantizer,
    pool: AttentionPool,
    decoder: Linear,
    classifier: Linear,
    pub omega: usize,
    pub t_prime: usize,
    pub d_s: usize,
    pub m: usize,
    pub use_codebook: bool,
}

impl StyleExtractor {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut rand_chacha::ChaCha20Rng,
        cfg: &RunConfig,
    ) -> Self {
        let d = cfg.d_s;
        let embed = Linear::new(ps, rng, "style.embed", cfg.omega * EXPR_DIM, d);
        let layers = (0..cfg.style_layers)
            .map(|i| {
                EncoderLayer::new(ps, rng, &format!("style.enc{i}"), d, cfg.style_heads, 2 * d)
            })
            .collect();
        let vq = VectorQuantizer::new(ps, rng, "style.vq", cfg.n, d);
        let pool = AttentionPool::new(ps, rng, "style.pool", d);
        let decoder = Linear::new(ps, rng, "style.dec", d, cfg.omega * EXPR_DIM);
        let classifier = Linear::new(ps, rng, "style.cls", d, cfg.m_styles);
        StyleExtractor {
            embed,
            layers,
            vq,
            pool,
            decoder,
            classifier,
            omega: cfg.omega,
            t_prime: cfg.t_prime,
            d_s: d,
            m: cfg.m_styles,
            use_codebook: cfg.use_codebook,
        }
    }

    pub fn tokens_per_window(&self) -> usize {
        self.t_prime / self.omega
    }

    /// Encoder features for one normalized window (`T' x 64` -> `tau x d_s`).
    pub fn encode<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, window: NodeId) -> NodeId {
        let (t, d) = g.shape(window);
        assert_eq!(t, self.t_prime, "window must be exactly T' frames");
        assert_eq!(d, EXPR_DIM, "window must hold expression coefficients");
        let flat = g.reshape(window, self.tokens_per_window(), self.omega * EXPR_DIM);
        let mut x = self.embed.apply(g, ps, flat);
        for layer in &self.layers {
            x = layer.apply(g, ps, x, None);
        }
        x
    }

    /// Quantize encoder features. Returns the straight-through grid, the raw
    /// codebook gather (absent when the codebook is disabled), and the
    /// chosen indices.
    pub fn quantize<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        f: NodeId,
    ) -> (NodeId, Option<NodeId>, Vec<usize>) {
        if self.use_codebook {
            let (q, raw, idx) = self.vq.quantize_st(g, ps, f);
            (q, Some(raw), idx)
        } else {
            (f, None, Vec::new())
        }
    }

    /// Pool a (possibly quantized) feature grid into a `1 x d_s` style code.
    pub fn pool_code<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, q: NodeId) -> NodeId {
        self.pool.apply(g, ps, q)
    }

    /// Pooled style code (`1 x d_s`) of one normalized window, plus the
    /// codebook indices it used.
    pub fn window_code<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        window: NodeId,
    ) -> (NodeId, Vec<usize>) {
        let f = self.encode(g, ps, window);
        let (q, _, idx) = self.quantize(g, ps, f);
        (self.pool.apply(g, ps, q), idx)
    }

    /// Decode a quantized grid back to a `T' x 64` window.
    pub fn reconstruct<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, q: NodeId) -> NodeId {
        let y = self.decoder.apply(g, ps, q);
        g.reshape(y, self.t_prime, EXPR_DIM)
    }

    /// Style-class logits (`1 x M`) for a style code.
    pub fn classify<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, s: NodeId) -> NodeId {
        self.classifier.apply(g, ps, s)
    }
}

/// One training example: three normalized `T' x 64` windows with labels.
/// The positive must share the anchor's style, the negative must differ.
pub struct StyleTriple<R: Real> {
    pub anchor: Array2<R>,
    pub positive: Array2<R>,
    pub negative: Array2<R>,
    pub anchor_label: usize,
    pub positive_label: usize,
    pub negative_label: usize,
}

/// Scalar graph nodes for the five loss terms and their weighted total.
pub struct StyleLossNodes {
    pub total: NodeId,
    pub recon: NodeId,
    pub codebook: NodeId,
    pub commitment: NodeId,
    pub triplet: NodeId,
    pub ce: NodeId,
}

pub struct StyleBatchOut {
    pub loss: StyleLossNodes,
    /// Codebook indices hit anywhere in the batch.
    pub used: Vec<usize>,
    /// Anchor encoder features, kept for dead-entry reseeding.
    pub anchor_features: Vec<NodeId>,
}

fn mean_of<R: Real>(g: &mut Graph<R>, parts: &[NodeId]) -> NodeId {
    let sum = parts[1..].iter().fold(parts[0], |acc, &p| g.add(acc, p));
    g.scale(sum, rr::<R>(1.0 / parts.len() as f64))
}

/// Batched style loss. Reconstruction, codebook, commitment and
/// classification act on the anchor; the triplet compares pooled codes of
/// all three windows. Total = recon + codebook + commitment
/// + alpha_trip * triplet + alpha_c * ce.
pub fn style_loss<R: Real>(
    net: &StyleExtractor,
    g: &mut Graph<R>,
    ps: &ParamStore<R>,
    triples: &[StyleTriple<R>],
    cfg: &RunConfig,
) -> Result<StyleBatchOut> {
    if triples.is_empty() {
        return Err(Error::invalid("style loss needs at least one triple"));
    }
    let mut used = Vec::new();
    let mut anchor_features = Vec::new();
    let (mut recons, mut cbs, mut commits, mut trips, mut ces) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for tr in triples {
        if tr.positive_label != tr.anchor_label {
            return Err(Error::invalid(format!(
                "positive labeled {} does not match anchor labeled {}",
                tr.positive_label, tr.anchor_label
            )));
        }
        if tr.negative_label == tr.anchor_label {
            return Err(Error::invalid(format!(
                "negative shares the anchor label {}",
                tr.anchor_label
            )));
        }
        let a = g.input(tr.anchor.clone());
        let f = net.encode(g, ps, a);
        anchor_features.push(f);
        let (q, raw, idx) = net.quantize(g, ps, f);
        used.extend_from_slice(&idx);

        let rec_out = net.reconstruct(g, ps, q);
        recons.push(g.mse(rec_out, a));

        if let Some(raw) = raw {
            let (cb, commit) = net.vq.vq_terms(g, f, raw);
            cbs.push(cb);
            commits.push(commit);
        } else {
            let zero = g.input(Array2::zeros((1, 1)));
            cbs.push(zero);
            commits.push(zero);
        }

        let s = net.pool.apply(g, ps, q);
        let logits = net.classify(g, ps, s);
        ces.push(g.cross_entropy(logits, &[tr.anchor_label]));

        let p = g.input(tr.positive.clone());
        let (sp, idx_p) = net.window_code(g, ps, p);
        used.extend_from_slice(&idx_p);
        let nw = g.input(tr.negative.clone());
        let (sn, idx_n) = net.window_code(g, ps, nw);
        used.extend_from_slice(&idx_n);
        let d_ap = g.euclid(s, sp);
        let d_an = g.euclid(s, sn);
        let gap = g.sub(d_ap, d_an);
        let margin = g.input(Array2::from_elem((1, 1), rr::<R>(cfg.gamma_triplet)));
        let shifted = g.add(gap, margin);
        trips.push(g.relu(shifted));
    }
    let recon = mean_of(g, &recons);
    let codebook = mean_of(g, &cbs);
    let commitment = mean_of(g, &commits);
    let triplet = mean_of(g, &trips);
    let ce = mean_of(g, &ces);

    let trip_w = g.scale(triplet, rr::<R>(cfg.alpha_trip));
    let ce_w = g.scale(ce, rr::<R>(cfg.alpha_c));
    let mut total = g.add(recon, codebook);
    total = g.add(total, commitment);
    total = g.add(total, trip_w);
    total = g.add(total, ce_w);

    Ok(StyleBatchOut {
        loss: StyleLossNodes { total, recon, codebook, commitment, triplet, ce },
        used,
        anchor_features,
    })
}

/// Starts of sliding `t_prime`-frame windows with stride `t_prime / 2`.
pub fn window_starts(t: usize, t_prime: usize) -> Vec<usize> {
    let stride = (t_prime / 2).max(1);
    (0..)
        .map(|k| k * stride)
        .take_while(|start| start + t_prime <= t)
        .collect()
}

/// Trained (or freshly initialized) style model: parameters, network
/// layout, input normalization, and the config it was built from.
pub struct StyleModel<R: Real> {
    pub ps: ParamStore<R>,
    pub net: StyleExtractor,
    pub stats: NormStats<R>,
    pub config: RunConfig,
}

pub const STYLE_KIND: &str = "style_extractor";

impl<R: Real> StyleModel<R> {
    pub fn init(cfg: &RunConfig, stats: NormStats<R>) -> Result<Self> {
        cfg.validate()?;
        if stats.dim() != EXPR_DIM {
            return Err(Error::shape("style normalization must cover 64 coefficients"));
        }
        let mut ps = ParamStore::new();
        let mut rng = stream(cfg.seed, "style-init", 0);
        let net = StyleExtractor::new(&mut ps, &mut rng, cfg);
        Ok(StyleModel { ps, net, stats, config: cfg.clone() })
    }

    /// A copy whose parameters are all frozen, for use as a fixed judge
    /// inside other models' losses.
    pub fn frozen_clone(&self) -> Self {
        let mut ps = self.ps.clone();
        ps.freeze_all();
        StyleModel { ps, net: self.net.clone(), stats: self.stats.clone(), config: self.config.clone() }
    }

    /// Style code of one normalized window, off-graph.
    fn window_code_values(&self, window: ArrayView2<'_, R>) -> (Array1<R>, Vec<usize>) {
        let mut g = Graph::new();
        let w = g.input(window.to_owned());
        let (code, idx) = self.net.window_code(&mut g, &self.ps, w);
        (g.value(code).row(0).to_owned(), idx)
    }

    /// Mean style code over sliding windows (stride T'/2). Clips shorter
    /// than one window are rejected.
    pub fn extract_style(&self, clip: &ExpressionSequence<R>) -> Result<StyleCode<R>> {
        let normed = self.stats.normalize(clip.frames())?;
        let starts = window_starts(clip.len(), self.net.t_prime);
        if starts.is_empty() {
            return Err(Error::invalid(format!(
                "clip of {} frames is shorter than the style window {}",
                clip.len(),
                self.net.t_prime
            )));
        }
        let mut acc = Array1::<R>::zeros(self.net.d_s);
        for &start in &starts {
            let win = normed.slice(s![start..start + self.net.t_prime, ..]);
            let (code, _) = self.window_code_values(win);
            acc += &code;
        }
        acc.mapv_inplace(|v| v / rr::<R>(starts.len() as f64));
        StyleCode::new(acc)
    }

    /// Codebook indices selected across a clip's sliding windows.
    pub fn window_indices(&self, clip: &ExpressionSequence<R>) -> Result<Vec<usize>> {
        let normed = self.stats.normalize(clip.frames())?;
        let starts = window_starts(clip.len(), self.net.t_prime);
        if starts.is_empty() {
            return Err(Error::invalid("clip shorter than the style window"));
        }
        let mut all = Vec::new();
        for &start in &starts {
            let win = normed.slice(s![start..start + self.net.t_prime, ..]);
            let (_, idx) = self.window_code_values(win);
            all.extend(idx);
        }
        Ok(all)
    }

    /// Class logits for a style code.
    pub fn classify(&self, code: &StyleCode<R>) -> Array1<R> {
        let mut g = Graph::new();
        let s = g.input(code.as_row());
        let logits = self.net.classify(&mut g, &self.ps, s);
        g.value(logits).row(0).to_owned()
    }

    /// Predicted style label for a clip (argmax of the classifier).
    pub fn predict(&self, clip: &ExpressionSequence<R>) -> Result<usize> {
        let logits = self.classify(&self.extract_style(clip)?);
        Ok(argmax(&logits))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut c = self.ps.to_container();
        push_stats(&mut c, "norm.expr", &self.stats)?;
        c.set_meta("kind", STYLE_KIND);
        c.set_meta("config", self.config.to_toml()?);
        c.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let c = ArrayContainer::load(dir)?;
        match c.meta("kind") {
            Some(k) if k == STYLE_KIND => {}
            other => {
                return Err(Error::invalid(format!(
                    "checkpoint at {} is {:?}, expected {STYLE_KIND}",
                    dir.display(),
                    other
                )))
            }
        }
        let toml = c.meta("config").ok_or_else(|| Error::invalid("checkpoint missing config"))?;
        let cfg = RunConfig::from_toml(toml)?;
        let stats = read_stats(&c, "norm.expr")?;
        let mut model = StyleModel::init(&cfg, stats)?;
        model.ps.load_from_container(&c)?;
        Ok(model)
    }
}

pub fn argmax<R: Real>(v: &Array1<R>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Clone, Debug)]
pub struct StyleStepRecord {
    pub step: usize,
    pub total: f64,
    pub recon: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub triplet: f64,
    pub ce: f64,
}

#[derive(Serialize, Clone, Debug)]
pub struct StyleEpochRecord {
    pub epoch: usize,
    pub mean_total: f64,
    pub codebook_usage: f64,
    pub reseeded: usize,
}

#[derive(Default)]
pub struct StyleTrainReport {
    pub steps: Vec<StyleStepRecord>,
    pub epochs: Vec<StyleEpochRecord>,
}

/// A window address inside the training split: (position in `clips`, start
/// frame, style label).
struct WindowRef {
    clip: usize,
    start: usize,
    label: usize,
}

const DEAD_ENTRY_STEPS: u32 = 200;

/// Train the style extractor on the labeled corpus. Requires at least two
/// styles and at least two clips per style in the train split (triplet
/// sampling needs a same-style positive from a different clip).
pub fn train_style_extractor<R: Real>(
    ds: &Dataset,
    cfg: &RunConfig,
) -> Result<(StyleModel<R>, StyleTrainReport)> {
    cfg.validate()?;
    if ds.config.t_frames < cfg.t_prime {
        return Err(Error::invalid("corpus clips are shorter than the style window"));
    }
    let train = ds.split(Split::Train)?;
    let mut by_style: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in &train {
        by_style.entry(ds.clips[i].style).or_default().push(i);
    }
    if by_style.len() < 2 {
        return Err(Error::invalid(
            "style training needs at least two styles in the train split; triplet sampling is impossible otherwise",
        ));
    }
    for (style, clips) in &by_style {
        if clips.len() < 2 {
            return Err(Error::invalid(format!(
                "style {style} has a single train clip; positives must come from a different clip"
            )));
        }
    }

    let as_r: Vec<Array2<R>> = train.iter().map(|&i| ds.clips[i].expr.mapv(R::from_f32)).collect();
    let stats = NormStats::fit(as_r.iter().map(|a| a.view()))?;
    let normed: Vec<Array2<R>> =
        as_r.iter().map(|a| stats.normalize(a.view()).expect("dims fit")).collect();
    // clip index in `train` order -> label, and per-style window pools
    let labels: Vec<usize> = train.iter().map(|&i| ds.clips[i].style).collect();
    let style_ids: Vec<usize> = by_style.keys().copied().collect();
    let mut clips_of: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (pos, &label) in labels.iter().enumerate() {
        clips_of.entry(label).or_default().push(pos);
    }
    let starts = window_starts(ds.config.t_frames, cfg.t_prime);
    let mut anchors: Vec<WindowRef> = Vec::new();
    for (pos, &label) in labels.iter().enumerate() {
        for &start in &starts {
            anchors.push(WindowRef { clip: pos, start, label });
        }
    }

    let mut model = StyleModel::<R>::init(cfg, stats)?;
    let mut adam = Adam::new(&model.ps, rr::<R>(cfg.lr)).with_betas(rr(cfg.beta1), rr(cfg.beta2));
    let mut report = StyleTrainReport::default();
    let mut step = 0usize;

    let window_of = |pool: &[Array2<R>], clip: usize, start: usize| -> Array2<R> {
        pool[clip].slice(s![start..start + cfg.t_prime, ..]).to_owned()
    };

    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, "style-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..anchors.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        let mut epoch_used: std::collections::BTreeSet<usize> = Default::default();
        let mut reseeded = 0usize;

        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut triples = Vec::with_capacity(chunk.len());
            for &ai in chunk {
                let a = &anchors[ai];
                let peers = &clips_of[&a.label];
                let pos_clip = loop {
                    let c = peers[rng.gen_range(0..peers.len())];
                    if c != a.clip || peers.len() == 1 {
                        break c;
                    }
                };
                let neg_label = loop {
                    let l = style_ids[rng.gen_range(0..style_ids.len())];
                    if l != a.label {
                        break l;
                    }
                };
                let neg_pool = &clips_of[&neg_label];
                let neg_clip = neg_pool[rng.gen_range(0..neg_pool.len())];
                let pos_start = starts[rng.gen_range(0..starts.len())];
                let neg_start = starts[rng.gen_range(0..starts.len())];
                triples.push(StyleTriple {
                    anchor: window_of(&normed, a.clip, a.start),
                    positive: window_of(&normed, pos_clip, pos_start),
                    negative: window_of(&normed, neg_clip, neg_start),
                    anchor_label: a.label,
                    positive_label: a.label,
                    negative_label: neg_label,
                });
            }

            let mut g = Graph::new();
            let out = style_loss(&model.net, &mut g, &model.ps, &triples, cfg)?;
            let grads = g.backward(out.loss.total);
            let mut pg = g.param_grads(&grads, model.ps.len());
            clip_global_norm(&mut pg, rr::<R>(cfg.grad_clip));
            adam.step(&mut model.ps, &pg);

            if cfg.use_codebook {
                model.net.vq.note_usage(&out.used);
                epoch_used.extend(out.used.iter().copied());
                let views: Vec<_> = out.anchor_features.iter().map(|&f| g.value(f)).collect();
                let mut recent =
                    Array2::<R>::zeros((views.len() * model.net.tokens_per_window(), cfg.d_s));
                for (i, v) in views.iter().enumerate() {
                    let rows = model.net.tokens_per_window();
                    recent.slice_mut(s![i * rows..(i + 1) * rows, ..]).assign(v);
                }
                reseeded += model.net.vq.reseed_dead(
                    &mut model.ps,
                    &mut rng,
                    &recent.view(),
                    DEAD_ENTRY_STEPS,
                );
            }

            let total = g.scalar(out.loss.total).as_f64();
            epoch_total += total * chunk.len() as f64;
            report.steps.push(StyleStepRecord {
                step,
                total,
                recon: g.scalar(out.loss.recon).as_f64(),
                codebook: g.scalar(out.loss.codebook).as_f64(),
                commitment: g.scalar(out.loss.commitment).as_f64(),
                triplet: g.scalar(out.loss.triplet).as_f64(),
                ce: g.scalar(out.loss.ce).as_f64(),
            });
            step += 1;
        }

        report.epochs.push(StyleEpochRecord {
            epoch,
            mean_total: epoch_total / anchors.len() as f64,
            codebook_usage: epoch_used.len() as f64 / cfg.n as f64,
            reseeded,
        });
    }

    Ok((model, report))
}

/// Fraction of clips in a split whose predicted label matches the truth.
pub fn classification_accuracy<R: Real>(
    model: &StyleModel<R>,
    ds: &Dataset,
    split: Split,
) -> Result<f64> {
    let idx = ds.split(split)?;
    let mut hits = 0usize;
    for &i in &idx {
        let clip = ExpressionSequence::new(ds.clips[i].expr.mapv(R::from_f32), 25.0)?;
        if model.predict(&clip)? == ds.clips[i].style {
            hits += 1;
        }
    }
    Ok(hits as f64 / idx.len() as f64)
}
