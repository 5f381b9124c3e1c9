//! Audio-driven stylized motion synthesis.
//!
//! The generator splits into a canonical branch (audio only) and a style
//! branch whose recurrent weights are shifted by low-rank offsets predicted
//! from the style code; their sum is decoded to expression coefficients.
//! Training pairs a soft-DTW reconstruction term with three style terms: a
//! triplet on extracted codes, a frozen-classifier cross-entropy, and a
//! class-conditional adversarial hinge.

use std::path::Path;

use crate::config::RunConfig;
use crate::container::ArrayContainer;
use crate::corpus::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{
    clip_global_norm, push_stats, read_stats, xavier, Adam, Linear, Lstm, Mlp, ParamStore,
};
use crate::real::{rr, Real};
use crate::rng::stream;
use crate::softdtw::soft_dtw_node;
use crate::style::{window_starts, StyleExtractor, StyleModel};
use crate::types::{
    AudioFeatureSequence, ExpressionSequence, NormStats, StyleCode, EXPR_DIM,
};
use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

/// Number of recurrent layers in the style branch; the middle four carry
/// hypernetwork offsets.
const STYLE_STACK: usize = 6;
const MODULATED: usize = 4;
const CANON_STACK: usize = 2;
/// Hidden width of the hypernetwork trunk.
const HYPER_HIDDEN: usize = 64;
const LEAKY_SLOPE: f64 = 0.2;
/// Temporal receptive field of the discriminator's convolution stage.
const DISC_KERNEL: usize = 5;

/// Generator: audio encoder, canonical branch, modulated style branch,
/// hypernetwork, and coefficient decoder.
pub struct MotionSynthesizer {
    audio_in: Linear,
    audio_lstm: Lstm,
    canon: Vec<Lstm>,
    style_stack: Vec<Lstm>,
    style_head: Linear,
    hyper_trunk: Linear,
    hyper_u: Vec<Linear>,
    hyper_v: Vec<Linear>,
    dec: Mlp,
    pub d_z: usize,
    pub d_s: usize,
    pub d_a: usize,
    pub rank: usize,
    pub hyper_scale: f64,
    pub use_hyper: bool,
}

impl MotionSynthesizer {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut rand_chacha::ChaCha20Rng,
        cfg: &RunConfig,
    ) -> Self {
        let (d_z, d_s, d_a, r) = (cfg.d_z, cfg.d_s, cfg.d_a, cfg.rank);
        let audio_in = Linear::new(ps, rng, "motion.audio_in", d_a + EXPR_DIM, d_z);
        let audio_lstm = Lstm::new(ps, rng, "motion.audio_lstm", d_z, d_z);
        let canon = (0..CANON_STACK)
            .map(|i| Lstm::new(ps, rng, &format!("motion.canon{i}"), d_z, d_z))
            .collect();
        let style_stack = (0..STYLE_STACK)
            .map(|i| {
                let din = if i == 0 { d_z + d_s } else { d_z };
                Lstm::new(ps, rng, &format!("motion.style{i}"), din, d_z)
            })
            .collect();
        // Zero output head: the style branch contributes nothing at init, so
        // the whole model starts as its canonical branch.
        let style_head = Linear::zeroed(ps, "motion.style_head", d_z, d_z);
        let hyper_trunk = Linear::new(ps, rng, "motion.hyper.trunk", d_s, HYPER_HIDDEN);
        let hyper_u = (0..MODULATED)
            .map(|i| {
                Linear::new(ps, rng, &format!("motion.hyper.u{i}"), HYPER_HIDDEN, 2 * d_z * r)
            })
            .collect();
        // Only the V heads start at zero: offsets vanish at init but still
        // receive gradient through the nonzero U factors.
        let hyper_v = (0..MODULATED)
            .map(|i| Linear::zeroed(ps, &format!("motion.hyper.v{i}"), HYPER_HIDDEN, r * 4 * d_z))
            .collect();
        let dec = Mlp::new(ps, rng, "motion.dec", &[d_z + d_s, d_z, EXPR_DIM]);
        MotionSynthesizer {
            audio_in,
            audio_lstm,
            canon,
            style_stack,
            style_head,
            hyper_trunk,
            hyper_u,
            hyper_v,
            dec,
            d_z,
            d_s,
            d_a,
            rank: r,
            hyper_scale: cfg.hyper_scale,
            use_hyper: cfg.use_hyper,
        }
    }

    /// Audio latents conditioned on the reference frame: the `1 x 64`
    /// reference is appended to every audio frame before encoding.
    pub fn encode_audio<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        audio: NodeId,
        reference: NodeId,
    ) -> NodeId {
        let (t, da) = g.shape(audio);
        assert_eq!(da, self.d_a, "audio feature width");
        assert_eq!(g.shape(reference), (1, EXPR_DIM), "reference frame");
        let ref_rows = g.broadcast_row(reference, t);
        let x = g.concat_cols(&[audio, ref_rows]);
        let h = self.audio_in.apply(g, ps, x);
        let h = g.tanh(h);
        self.audio_lstm.apply(g, ps, h)
    }

    /// Low-rank weight offsets for the four modulated layers, a pure
    /// function of the style code.
    pub fn hyper_offsets<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        s: NodeId,
    ) -> Vec<(NodeId, NodeId)> {
        assert_eq!(g.shape(s), (1, self.d_s), "style code row");
        let h = self.hyper_trunk.apply(g, ps, s);
        let h = g.tanh(h);
        (0..MODULATED)
            .map(|l| {
                let u_flat = self.hyper_u[l].apply(g, ps, h);
                let v_flat = self.hyper_v[l].apply(g, ps, h);
                let u = g.reshape(u_flat, 2 * self.d_z, self.rank);
                let v = g.reshape(v_flat, self.rank, 4 * self.d_z);
                (u, v)
            })
            .collect()
    }

    /// Canonical plus style branch: returns `(z_s, z_c)` where
    /// `z_s = z_c + style_branch(z_a, s, offsets)`.
    pub fn stylize<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        z_a: NodeId,
        s: NodeId,
    ) -> (NodeId, NodeId) {
        let (t, dz) = g.shape(z_a);
        assert_eq!(dz, self.d_z, "latent width");

        let mut c = z_a;
        for layer in &self.canon {
            c = layer.apply(g, ps, c);
        }

        let s_rows = g.broadcast_row(s, t);
        let mut y = g.concat_cols(&[z_a, s_rows]);
        if self.use_hyper {
            let offsets = self.hyper_offsets(g, ps, s);
            for (i, layer) in self.style_stack.iter().enumerate() {
                y = if (1..=MODULATED).contains(&i) {
                    let (u, v) = offsets[i - 1];
                    layer.apply_modulated(g, ps, y, u, v, rr::<R>(self.hyper_scale))
                } else {
                    layer.apply(g, ps, y)
                };
            }
        } else {
            for layer in &self.style_stack {
                y = layer.apply(g, ps, y);
            }
        }
        let sb = self.style_head.apply(g, ps, y);
        (g.add(c, sb), c)
    }

    /// Decode stylized latents (plus the style code) to `T x 64`
    /// normalized coefficients.
    pub fn decode_expressions<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        z_s: NodeId,
        s: NodeId,
    ) -> NodeId {
        let (t, _) = g.shape(z_s);
        let s_rows = g.broadcast_row(s, t);
        let x = g.concat_cols(&[z_s, s_rows]);
        self.dec.apply(g, ps, x)
    }

    /// Full generator pass: audio + reference + style code -> normalized
    /// coefficient sequence.
    pub fn generate<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        audio: NodeId,
        reference: NodeId,
        s: NodeId,
    ) -> NodeId {
        let z_a = self.encode_audio(g, ps, audio, reference);
        let (z_s, _) = self.stylize(g, ps, z_a, s);
        self.decode_expressions(g, ps, z_s, s)
    }
}

/// Class-conditional temporal discriminator: per-frame features, one
/// temporal convolution stage, mean pooling, and a projection head.
pub struct StyleDiscriminator {
    frame: Linear,
    temporal: Linear,
    out: Linear,
    embed: usize,
    pub hidden: usize,
    pub m: usize,
}

impl StyleDiscriminator {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut rand_chacha::ChaCha20Rng,
        cfg: &RunConfig,
    ) -> Self {
        let h = cfg.disc_hidden;
        let frame = Linear::new(ps, rng, "disc.frame", EXPR_DIM, h);
        let temporal = Linear::new(ps, rng, "disc.temporal", DISC_KERNEL * h, h);
        let out = Linear::new(ps, rng, "disc.out", h, 1);
        let embed = ps.add("disc.embed", xavier(rng, cfg.m_styles, h));
        StyleDiscriminator { frame, temporal, out, embed, hidden: h, m: cfg.m_styles }
    }

    /// Realism score of a normalized coefficient sequence under a class label.
    pub fn score<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        x: NodeId,
        label: usize,
    ) -> NodeId {
        assert!(label < self.m, "label out of range");
        let (t, d) = g.shape(x);
        assert_eq!(d, EXPR_DIM, "discriminator input width");
        let h1 = self.frame.apply(g, ps, x);
        let h1 = g.leaky_relu(h1, rr::<R>(LEAKY_SLOPE));
        let unfolded = g.unfold_rows(h1, DISC_KERNEL);
        let h2 = self.temporal.apply(g, ps, unfolded);
        let h2 = g.leaky_relu(h2, rr::<R>(LEAKY_SLOPE));
        let pooled = g.mean_pool_rows(h2, t);
        let base = self.out.apply(g, ps, pooled);
        let embed = ps.bind(g, self.embed);
        let class_row = g.gather_rows(embed, &[label]);
        let prod = g.mul(pooled, class_row);
        let proj = g.sum_all(prod);
        g.add(base, proj)
    }
}

/// One training example, already normalized and with style codes baked in.
pub struct MotionBatchItem<R: Real> {
    pub audio: Array2<R>,
    pub reference: Array2<R>,
    pub target: Array2<R>,
    pub style_code: Array1<R>,
    pub label: usize,
    pub positive_code: Array1<R>,
    pub negative_code: Array1<R>,
}

pub struct MotionLossNodes {
    pub total: NodeId,
    pub rec: NodeId,
    pub triplet: NodeId,
    pub style1: NodeId,
    pub style2: NodeId,
}

pub struct MotionBatchOut {
    pub loss: MotionLossNodes,
    pub disc_loss: NodeId,
    pub score_real: NodeId,
    pub score_fake: NodeId,
}

fn mean_of<R: Real>(g: &mut Graph<R>, parts: &[NodeId]) -> NodeId {
    let sum = parts[1..].iter().fold(parts[0], |acc, &p| g.add(acc, p));
    g.scale(sum, rr::<R>(1.0 / parts.len() as f64))
}

/// Style code of a generated sequence, differentiably, with the frozen
/// extractor: mean pooled code over sliding windows.
fn extract_code_on_graph<R: Real>(
    g: &mut Graph<R>,
    judge: &StyleExtractor,
    judge_ps: &ParamStore<R>,
    seq: NodeId,
) -> NodeId {
    let (t, _) = g.shape(seq);
    let starts = window_starts(t, judge.t_prime);
    assert!(!starts.is_empty(), "sequence shorter than the style window");
    let codes: Vec<NodeId> = starts
        .iter()
        .map(|&start| {
            let win = g.slice_rows(seq, start, start + judge.t_prime);
            let (code, _) = judge.window_code(g, judge_ps, win);
            code
        })
        .collect();
    mean_of(g, &codes)
}

/// The four-term generator loss plus the discriminator's own hinge loss.
/// `judge` must be the frozen style model; its parameters receive no
/// gradient. Total = rec + alpha_trip * triplet + alpha_style1 * style1
/// + alpha_style2 * style2, with rec = soft-DTW / T.
pub fn motion_total_loss<R: Real>(
    g: &mut Graph<R>,
    net: &MotionSynthesizer,
    disc: &StyleDiscriminator,
    ps: &ParamStore<R>,
    judge: &StyleModel<R>,
    items: &[MotionBatchItem<R>],
    cfg: &RunConfig,
) -> Result<MotionBatchOut> {
    if items.is_empty() {
        return Err(Error::invalid("motion loss needs at least one item"));
    }
    let (mut recs, mut trips, mut s1s, mut s2s) = (vec![], vec![], vec![], vec![]);
    let (mut d_losses, mut d_reals, mut d_fakes) = (vec![], vec![], vec![]);
    for item in items {
        let t = item.target.nrows();
        let audio = g.input(item.audio.clone());
        let reference = g.input(item.reference.clone());
        let s = g.input(item.style_code.clone().insert_axis(ndarray::Axis(0)));
        let target = g.input(item.target.clone());

        let gen = net.generate(g, ps, audio, reference, s);

        let dtw = soft_dtw_node(g, gen, target, rr::<R>(cfg.gamma_dtw));
        recs.push(g.scale(dtw, rr::<R>(1.0 / t as f64)));

        let anchor = extract_code_on_graph(g, &judge.net, &judge.ps, gen);
        let logits = judge.net.classify(g, &judge.ps, anchor);
        s1s.push(g.cross_entropy(logits, &[item.label]));

        let pos = g.input(item.positive_code.clone().insert_axis(ndarray::Axis(0)));
        let neg = g.input(item.negative_code.clone().insert_axis(ndarray::Axis(0)));
        let d_ap = g.euclid(anchor, pos);
        let d_an = g.euclid(anchor, neg);
        let gap = g.sub(d_ap, d_an);
        let margin = g.input(Array2::from_elem((1, 1), rr::<R>(cfg.gamma_triplet)));
        let shifted = g.add(gap, margin);
        trips.push(g.relu(shifted));

        let fake_score = disc.score(g, ps, gen, item.label);
        s2s.push(g.scale(fake_score, rr::<R>(-1.0)));

        let real_score = disc.score(g, ps, target, item.label);
        let gen_detached = g.detach(gen);
        let fake_score_d = disc.score(g, ps, gen_detached, item.label);
        let one = g.input(Array2::from_elem((1, 1), R::one()));
        let real_margin = g.sub(one, real_score);
        let real_hinge = g.relu(real_margin);
        let fake_margin = g.add(one, fake_score_d);
        let fake_hinge = g.relu(fake_margin);
        d_losses.push(g.add(real_hinge, fake_hinge));
        d_reals.push(real_score);
        d_fakes.push(fake_score_d);
    }
    let rec = mean_of(g, &recs);
    let triplet = mean_of(g, &trips);
    let style1 = mean_of(g, &s1s);
    let style2 = mean_of(g, &s2s);
    let trip_w = g.scale(triplet, rr::<R>(cfg.alpha_trip));
    let s1_w = g.scale(style1, rr::<R>(cfg.alpha_style1));
    let s2_w = g.scale(style2, rr::<R>(cfg.alpha_style2));
    let mut total = g.add(rec, trip_w);
    total = g.add(total, s1_w);
    total = g.add(total, s2_w);

    Ok(MotionBatchOut {
        loss: MotionLossNodes { total, rec, triplet, style1, style2 },
        disc_loss: mean_of(g, &d_losses),
        score_real: mean_of(g, &d_reals),
        score_fake: mean_of(g, &d_fakes),
    })
}

pub const MOTION_KIND: &str = "motion_synthesizer";

/// Trained motion model: generator + discriminator parameters, the input
/// normalizations, and the resolved config.
pub struct MotionModel<R: Real> {
    pub ps: ParamStore<R>,
    pub net: MotionSynthesizer,
    pub disc: StyleDiscriminator,
    pub expr_stats: NormStats<R>,
    pub audio_stats: NormStats<R>,
    pub config: RunConfig,
}

impl<R: Real> MotionModel<R> {
    pub fn init(
        cfg: &RunConfig,
        expr_stats: NormStats<R>,
        audio_stats: NormStats<R>,
    ) -> Result<Self> {
        cfg.validate()?;
        if expr_stats.dim() != EXPR_DIM || audio_stats.dim() != cfg.d_a {
            return Err(Error::shape("normalization widths do not match the config"));
        }
        let mut ps = ParamStore::new();
        let mut rng = stream(cfg.seed, "motion-init", 0);
        let net = MotionSynthesizer::new(&mut ps, &mut rng, cfg);
        let disc = StyleDiscriminator::new(&mut ps, &mut rng, cfg);
        Ok(MotionModel { ps, net, disc, expr_stats, audio_stats, config: cfg.clone() })
    }

    /// Synthesize a stylized coefficient sequence from audio, a reference
    /// frame, and a style code. Inputs are raw (unnormalized).
    pub fn synthesize(
        &self,
        audio: &AudioFeatureSequence<R>,
        reference: &ExpressionSequence<R>,
        style: &StyleCode<R>,
    ) -> Result<ExpressionSequence<R>> {
        if reference.len() != 1 {
            return Err(Error::invalid("reference must be a single frame"));
        }
        if style.dim() != self.net.d_s {
            return Err(Error::shape("style code width mismatch"));
        }
        let audio_n = self.audio_stats.normalize(audio.frames())?;
        let ref_n = self.expr_stats.normalize(reference.frames())?;
        let mut g = Graph::new();
        let a = g.input(audio_n);
        let r = g.input(ref_n);
        let s = g.input(style.as_row());
        let gen = self.net.generate(&mut g, &self.ps, a, r, s);
        let out = self.expr_stats.denormalize(g.value(gen).view())?;
        ExpressionSequence::new(out, 25.0)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut c = self.ps.to_container();
        push_stats(&mut c, "norm.expr", &self.expr_stats)?;
        push_stats(&mut c, "norm.audio", &self.audio_stats)?;
        c.set_meta("kind", MOTION_KIND);
        c.set_meta("config", self.config.to_toml()?);
        c.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let c = ArrayContainer::load(dir)?;
        match c.meta("kind") {
            Some(k) if k == MOTION_KIND => {}
            other => {
                return Err(Error::invalid(format!(
                    "checkpoint at {} is {:?}, expected {MOTION_KIND}",
                    dir.display(),
                    other
                )))
            }
        }
        let toml = c.meta("config").ok_or_else(|| Error::invalid("checkpoint missing config"))?;
        let cfg = RunConfig::from_toml(toml)?;
        let expr_stats = read_stats(&c, "norm.expr")?;
        let audio_stats = read_stats(&c, "norm.audio")?;
        let mut model = MotionModel::init(&cfg, expr_stats, audio_stats)?;
        model.ps.load_from_container(&c)?;
        Ok(model)
    }
}

#[derive(Serialize, Clone, Debug)]
pub struct MotionStepRecord {
    pub step: usize,
    pub total: f64,
    pub rec: f64,
    pub triplet: f64,
    pub style1: f64,
    pub style2: f64,
    pub disc: f64,
    pub score_real: f64,
    pub score_fake: f64,
}

#[derive(Default)]
pub struct MotionTrainReport {
    pub steps: Vec<MotionStepRecord>,
}

/// Train generator and discriminator with paired 1:1 updates per batch.
/// The style model is used frozen, both to condition the generator and as
/// the judge inside the style losses.
pub fn train_motion_stylizer<R: Real>(
    ds: &Dataset,
    style: &StyleModel<R>,
    cfg: &RunConfig,
) -> Result<(MotionModel<R>, MotionTrainReport)> {
    cfg.validate()?;
    if style.net.d_s != cfg.d_s {
        return Err(Error::invalid("style checkpoint width disagrees with the config"));
    }
    if ds.config.t_frames < cfg.t_prime {
        return Err(Error::invalid("clips are shorter than the style window"));
    }
    let judge = style.frozen_clone();

    let train = ds.split(Split::Train)?;
    let expr_r: Vec<Array2<R>> =
        train.iter().map(|&i| ds.clips[i].expr.mapv(R::from_f32)).collect();
    let audio_r: Vec<Array2<R>> =
        train.iter().map(|&i| ds.clips[i].audio.mapv(R::from_f32)).collect();
    let audio_stats = NormStats::fit(audio_r.iter().map(|a| a.view()))?;
    // Expressions reuse the style checkpoint's normalization so the frozen
    // judge sees its native input distribution.
    let expr_stats = style.stats.clone();

    let expr_n: Vec<Array2<R>> =
        expr_r.iter().map(|a| expr_stats.normalize(a.view()).expect("dims")).collect();
    let audio_n: Vec<Array2<R>> =
        audio_r.iter().map(|a| audio_stats.normalize(a.view()).expect("dims")).collect();
    let labels: Vec<usize> = train.iter().map(|&i| ds.clips[i].style).collect();
    let speakers: Vec<usize> = train.iter().map(|&i| ds.clips[i].speaker).collect();

    // Frozen style codes for every train clip.
    let codes: Vec<Array1<R>> = train
        .iter()
        .map(|&i| {
            let clip = ExpressionSequence::new(ds.clips[i].expr.mapv(R::from_f32), 25.0)?;
            Ok(style.extract_style(&clip)?.vector().clone())
        })
        .collect::<Result<_>>()?;

    let mut by_style: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut by_speaker: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (pos, (&label, &speaker)) in labels.iter().zip(speakers.iter()).enumerate() {
        by_style.entry(label).or_default().push(pos);
        by_speaker.entry(speaker).or_default().push(pos);
    }
    if by_style.len() < 2 {
        return Err(Error::invalid("motion training needs at least two styles for negatives"));
    }
    for (speaker, clips) in &by_speaker {
        if clips.len() < 2 {
            return Err(Error::invalid(format!(
                "speaker {speaker} has a single clip; the reference frame must come from another clip"
            )));
        }
    }
    let style_ids: Vec<usize> = by_style.keys().copied().collect();

    let mut model = MotionModel::<R>::init(cfg, expr_stats, audio_stats)?;
    let disc_slots: Vec<bool> =
        (0..model.ps.len()).map(|i| model.ps.name(i).starts_with("disc.")).collect();
    let mut adam_g =
        Adam::new(&model.ps, rr::<R>(cfg.lr)).with_betas(rr(cfg.beta1), rr(cfg.beta2));
    let mut adam_d =
        Adam::new(&model.ps, rr::<R>(cfg.lr)).with_betas(rr(cfg.beta1), rr(cfg.beta2));
    let mut report = MotionTrainReport::default();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, "motion-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut items = Vec::with_capacity(chunk.len());
            for &pos in chunk {
                let peers = &by_speaker[&speakers[pos]];
                let ref_clip = loop {
                    let c = peers[rng.gen_range(0..peers.len())];
                    if c != pos {
                        break c;
                    }
                };
                let ref_frame = rng.gen_range(0..expr_n[ref_clip].nrows());
                let neg_label = loop {
                    let l = style_ids[rng.gen_range(0..style_ids.len())];
                    if l != labels[pos] {
                        break l;
                    }
                };
                let neg_pool = &by_style[&neg_label];
                let neg_clip = neg_pool[rng.gen_range(0..neg_pool.len())];
                items.push(MotionBatchItem {
                    audio: audio_n[pos].clone(),
                    reference: expr_n[ref_clip]
                        .slice(s![ref_frame..ref_frame + 1, ..])
                        .to_owned(),
                    target: expr_n[pos].clone(),
                    style_code: codes[pos].clone(),
                    label: labels[pos],
                    positive_code: codes[pos].clone(),
                    negative_code: codes[neg_clip].clone(),
                });
            }

            let mut g = Graph::new();
            let out = motion_total_loss(&mut g, &model.net, &model.disc, &model.ps, &judge, &items, cfg)?;

            // Discriminator first, then generator, both from this forward.
            let d_grads = g.backward(out.disc_loss);
            let mut d_pg = g.param_grads(&d_grads, model.ps.len());
            for (i, pg) in d_pg.iter_mut().enumerate() {
                if !disc_slots[i] {
                    *pg = None;
                }
            }
            clip_global_norm(&mut d_pg, rr::<R>(cfg.grad_clip));
            adam_d.step(&mut model.ps, &d_pg);

            let g_grads = g.backward(out.loss.total);
            let mut g_pg = g.param_grads(&g_grads, model.ps.len());
            for (i, pg) in g_pg.iter_mut().enumerate() {
                if disc_slots[i] {
                    *pg = None;
                }
            }
            clip_global_norm(&mut g_pg, rr::<R>(cfg.grad_clip));
            adam_g.step(&mut model.ps, &g_pg);

            report.steps.push(MotionStepRecord {
                step,
                total: g.scalar(out.loss.total).as_f64(),
                rec: g.scalar(out.loss.rec).as_f64(),
                triplet: g.scalar(out.loss.triplet).as_f64(),
                style1: g.scalar(out.loss.style1).as_f64(),
                style2: g.scalar(out.loss.style2).as_f64(),
                disc: g.scalar(out.disc_loss).as_f64(),
                score_real: g.scalar(out.score_real).as_f64(),
                score_fake: g.scalar(out.score_fake).as_f64(),
            });
            step += 1;
        }
    }

    Ok((model, report))
}
