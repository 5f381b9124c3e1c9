//! Video-driven style transfer: re-style an expression sequence toward a
//! target style code while keeping the lip articulation of the source.
//!
//! The network mirrors the audio-driven synthesizer — canonical branch,
//! hypernetwork-modulated style branch, shared decoder — with a temporal
//! video encoder replacing the audio encoder and entirely separate weights.
//! No paired ground truth exists, so training leans on a cycle
//! reconstruction (transfer to the target style, then back to the source's
//! own style) plus a lip-difference preservation term and the usual style
//! supervision from the frozen extractor and a class-conditional critic.

use std::path::Path;

use crate::blendshape::BlendshapeBasis;
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
use crate::style::{StyleModel, window_starts};
use crate::types::{ExpressionSequence, NormStats, StyleCode, EXPR_DIM};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

const STYLE_STACK: usize = 6;
const MODULATED: usize = 4;
const CANON_STACK: usize = 2;
const HYPER_HIDDEN: usize = 64;
const LEAKY_SLOPE: f64 = 0.2;
const DISC_KERNEL: usize = 5;

/// Re-styling network. Same residual layout as the audio-driven generator;
/// the encoder consumes coefficient frames directly.
pub struct VideoStylizer {
    enc_in: Linear,
    enc_lstm: Lstm,
    canon: Vec<Lstm>,
    style_stack: Vec<Lstm>,
    style_head: Linear,
    hyper_trunk: Linear,
    hyper_u: Vec<Linear>,
    hyper_v: Vec<Linear>,
    dec: Mlp,
    pub d_z: usize,
    pub d_s: usize,
    pub hyper_scale: f64,
    pub use_hyper: bool,
}

impl VideoStylizer {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut rand_chacha::ChaCha20Rng,
        cfg: &RunConfig,
    ) -> Self {
        let (d_z, d_s, r) = (cfg.d_z, cfg.d_s, cfg.rank);
        let enc_in = Linear::new(ps, rng, "video.enc_in", EXPR_DIM, d_z);
        let enc_lstm = Lstm::new(ps, rng, "video.enc_lstm", d_z, d_z);
        let canon = (0..CANON_STACK)
            .map(|i| Lstm::new(ps, rng, &format!("video.canon{i}"), d_z, d_z))
            .collect();
        let style_stack = (0..STYLE_STACK)
            .map(|i| {
                let din = if i == 0 { d_z + d_s } else { d_z };
                Lstm::new(ps, rng, &format!("video.style{i}"), din, d_z)
            })
            .collect();
        let style_head = Linear::zeroed(ps, "video.style_head", d_z, d_z);
        let hyper_trunk = Linear::new(ps, rng, "video.hyper.trunk", d_s, HYPER_HIDDEN);
        let hyper_u = (0..MODULATED)
            .map(|i| Linear::new(ps, rng, &format!("video.hyper.u{i}"), HYPER_HIDDEN, 2 * d_z * r))
            .collect();
        let hyper_v = (0..MODULATED)
            .map(|i| Linear::zeroed(ps, &format!("video.hyper.v{i}"), HYPER_HIDDEN, r * 4 * d_z))
            .collect();
        let dec = Mlp::new(ps, rng, "video.dec", &[d_z + d_s, d_z, EXPR_DIM]);
        VideoStylizer {
            enc_in,
            enc_lstm,
            canon,
            style_stack,
            style_head,
            hyper_trunk,
            hyper_u,
            hyper_v,
            dec,
            d_z,
            d_s,
            hyper_scale: cfg.hyper_scale,
            use_hyper: cfg.use_hyper,
        }
    }

    /// Temporal latents of a normalized coefficient sequence (`T x 64` ->
    /// `T x d_z`). The recurrence makes this order-sensitive on purpose:
    /// the latents carry the source's motion, not a bag of frames.
    pub fn encode_video<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, x: NodeId) -> NodeId {
        assert_eq!(g.shape(x).1, EXPR_DIM, "video encoder expects coefficient frames");
        let h = self.enc_in.apply(g, ps, x);
        let h = g.tanh(h);
        self.enc_lstm.apply(g, ps, h)
    }

    fn hyper_offsets<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        s: NodeId,
    ) -> Vec<(NodeId, NodeId)> {
        let rank = {
            // infer from the head width: v maps HYPER_HIDDEN -> r * 4 d_z
            let v_cols = 4 * self.d_z;
            move |flat_cols: usize| flat_cols / v_cols
        };
        let h = self.hyper_trunk.apply(g, ps, s);
        let h = g.tanh(h);
        (0..MODULATED)
            .map(|l| {
                let u_flat = self.hyper_u[l].apply(g, ps, h);
                let v_flat = self.hyper_v[l].apply(g, ps, h);
                let r = rank(g.shape(v_flat).1);
                let u = g.reshape(u_flat, 2 * self.d_z, r);
                let v = g.reshape(v_flat, r, 4 * self.d_z);
                (u, v)
            })
            .collect()
    }

    /// Re-style latents: canonical path plus the modulated style branch.
    pub fn stylize<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        z_v: NodeId,
        s: NodeId,
    ) -> NodeId {
        let (t, dz) = g.shape(z_v);
        assert_eq!(dz, self.d_z, "latent width");
        let mut c = z_v;
        for layer in &self.canon {
            c = layer.apply(g, ps, c);
        }
        let s_rows = g.broadcast_row(s, t);
        let mut y = g.concat_cols(&[z_v, s_rows]);
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
        g.add(c, sb)
    }

    /// Full transfer pass on normalized coefficients.
    pub fn transfer<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        x: NodeId,
        s: NodeId,
    ) -> NodeId {
        let z = self.encode_video(g, ps, x);
        let z_s = self.stylize(g, ps, z, s);
        let (t, _) = g.shape(z_s);
        let s_rows = g.broadcast_row(s, t);
        let cat = g.concat_cols(&[z_s, s_rows]);
        self.dec.apply(g, ps, cat)
    }
}

/// Critic over coefficient sequences, conditioned on the style label.
/// Identical layout to the audio-driven one, separate weights ("vdisc.").
pub struct VideoDiscriminator {
    frame: Linear,
    temporal: Linear,
    out: Linear,
    embed: usize,
    pub m: usize,
}

impl VideoDiscriminator {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut rand_chacha::ChaCha20Rng,
        cfg: &RunConfig,
    ) -> Self {
        let h = cfg.disc_hidden;
        let frame = Linear::new(ps, rng, "vdisc.frame", EXPR_DIM, h);
        let temporal = Linear::new(ps, rng, "vdisc.temporal", DISC_KERNEL * h, h);
        let out = Linear::new(ps, rng, "vdisc.out", h, 1);
        let embed = ps.add("vdisc.embed", xavier(rng, cfg.m_styles, h));
        VideoDiscriminator { frame, temporal, out, embed, m: cfg.m_styles }
    }

    pub fn score<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        x: NodeId,
        label: usize,
    ) -> NodeId {
        assert!(label < self.m, "label out of range");
        let (t, d) = g.shape(x);
        assert_eq!(d, EXPR_DIM, "critic input width");
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

/// Lip-difference preservation between two normalized sequences. Both are
/// denormalized on-graph (the lip map acts on raw coefficients), projected
/// through the fixed `3 x 64` lip-difference map, and compared as a mean
/// over frames of squared L2 gaps.
pub fn mouth_loss_node<R: Real>(
    g: &mut Graph<R>,
    source_n: NodeId,
    restyled_n: NodeId,
    stats: &NormStats<R>,
    lip_map: &Array2<f64>,
) -> NodeId {
    let (t, d) = g.shape(source_n);
    assert_eq!(g.shape(restyled_n), (t, d), "sequences must align frame for frame");
    assert_eq!(lip_map.dim(), (3, EXPR_DIM), "lip-difference map shape");
    // denormalization constants enter the graph as plain inputs
    let std_row = g.input(stats.std.clone().insert_axis(ndarray::Axis(0)));
    let mean_row = g.input(stats.mean.clone().insert_axis(ndarray::Axis(0)));
    let denorm = |g: &mut Graph<R>, x: NodeId| {
        let scaled = g.mul_row(x, std_row);
        g.add_row(scaled, mean_row)
    };
    let src = denorm(g, source_n);
    let out = denorm(g, restyled_n);
    let diff = g.sub(src, out);
    let map_t = g.input(lip_map.t().mapv(|v| rr::<R>(v)).to_owned());
    let gaps = g.matmul(diff, map_t);
    let sq = g.mul(gaps, gaps);
    let sum = g.sum_all(sq);
    g.scale(sum, rr::<R>(1.0 / t as f64))
}

/// One transfer training example on normalized frames.
pub struct TransferItem<R: Real> {
    pub source: Array2<R>,
    /// Code of the target style (acts as triplet positive).
    pub target_code: Array1<R>,
    pub target_label: usize,
    /// The source's own code (cycle destination and triplet negative).
    pub source_code: Array1<R>,
    /// A real sequence of the target style, for the critic.
    pub target_real: Array2<R>,
}

pub struct TransferLossNodes {
    pub total: NodeId,
    pub mouth: NodeId,
    pub cycle: NodeId,
    pub triplet: NodeId,
    pub style1: NodeId,
    pub style2: NodeId,
}

pub struct TransferBatchOut {
    pub loss: TransferLossNodes,
    pub disc_loss: NodeId,
    /// First-pass outputs (normalized), one per item.
    pub restyled: Vec<NodeId>,
}

fn mean_of<R: Real>(g: &mut Graph<R>, parts: &[NodeId]) -> NodeId {
    let sum = parts[1..].iter().fold(parts[0], |acc, &p| g.add(acc, p));
    g.scale(sum, rr::<R>(1.0 / parts.len() as f64))
}

fn code_on_graph<R: Real>(
    g: &mut Graph<R>,
    judge: &StyleModel<R>,
    seq: NodeId,
) -> NodeId {
    let (t, _) = g.shape(seq);
    let starts = window_starts(t, judge.net.t_prime);
    assert!(!starts.is_empty(), "sequence shorter than the style window");
    let codes: Vec<NodeId> = starts
        .iter()
        .map(|&start| {
            let win = g.slice_rows(seq, start, start + judge.net.t_prime);
            let (code, _) = judge.net.window_code(g, &judge.ps, win);
            code
        })
        .collect();
    mean_of(g, &codes)
}

/// Eq-style objective: mouth + alpha_cyc * cycle + alpha_trip * triplet
/// + alpha_style1 * style1 + alpha_style2 * style2. Style supervision acts
/// on the first pass only; the cycle re-encodes the first pass's output
/// under the source's own code. Also returns the critic's hinge loss over
/// (real target-style sequence, detached transfer output).
pub fn video_total_loss<R: Real>(
    g: &mut Graph<R>,
    net: &VideoStylizer,
    disc: &VideoDiscriminator,
    ps: &ParamStore<R>,
    judge: &StyleModel<R>,
    items: &[TransferItem<R>],
    stats: &NormStats<R>,
    lip_map: &Array2<f64>,
    cfg: &RunConfig,
) -> Result<TransferBatchOut> {
    if items.is_empty() {
        return Err(Error::invalid("transfer loss needs at least one item"));
    }
    let (mut mouths, mut cycles, mut trips, mut s1s, mut s2s) =
        (vec![], vec![], vec![], vec![], vec![]);
    let mut d_losses = vec![];
    let mut restyled = vec![];
    for item in items {
        let x = g.input(item.source.clone());
        let s_t = g.input(item.target_code.clone().insert_axis(ndarray::Axis(0)));
        let s_r = g.input(item.source_code.clone().insert_axis(ndarray::Axis(0)));

        let first = net.transfer(g, ps, x, s_t);
        restyled.push(first);
        let second = net.transfer(g, ps, first, s_r);

        mouths.push(mouth_loss_node(g, x, first, stats, lip_map));
        cycles.push(g.euclid(x, second));

        let anchor = code_on_graph(g, judge, first);
        let logits = judge.net.classify(g, &judge.ps, anchor);
        s1s.push(g.cross_entropy(logits, &[item.target_label]));

        let d_ap = g.euclid(anchor, s_t);
        let d_an = g.euclid(anchor, s_r);
        let gap = g.sub(d_ap, d_an);
        let margin = g.input(Array2::from_elem((1, 1), rr::<R>(cfg.gamma_triplet)));
        let shifted = g.add(gap, margin);
        trips.push(g.relu(shifted));

        let fake_score = disc.score(g, ps, first, item.target_label);
        s2s.push(g.scale(fake_score, rr::<R>(-1.0)));

        let real = g.input(item.target_real.clone());
        let real_score = disc.score(g, ps, real, item.target_label);
        let first_detached = g.detach(first);
        let fake_score_d = disc.score(g, ps, first_detached, item.target_label);
        let one = g.input(Array2::from_elem((1, 1), R::one()));
        let real_margin = g.sub(one, real_score);
        let real_hinge = g.relu(real_margin);
        let fake_margin = g.add(one, fake_score_d);
        let fake_hinge = g.relu(fake_margin);
        d_losses.push(g.add(real_hinge, fake_hinge));
    }
    let mouth = mean_of(g, &mouths);
    let cycle = mean_of(g, &cycles);
    let triplet = mean_of(g, &trips);
    let style1 = mean_of(g, &s1s);
    let style2 = mean_of(g, &s2s);
    let cyc_w = g.scale(cycle, rr::<R>(cfg.alpha_cyc));
    let trip_w = g.scale(triplet, rr::<R>(cfg.alpha_trip));
    let s1_w = g.scale(style1, rr::<R>(cfg.alpha_style1));
    let s2_w = g.scale(style2, rr::<R>(cfg.alpha_style2));
    let mut total = g.add(mouth, cyc_w);
    total = g.add(total, trip_w);
    total = g.add(total, s1_w);
    total = g.add(total, s2_w);
    Ok(TransferBatchOut {
        loss: TransferLossNodes { total, mouth, cycle, triplet, style1, style2 },
        disc_loss: mean_of(g, &d_losses),
        restyled,
    })
}

pub const TRANSFER_KIND: &str = "video_transfer";

/// Trained transfer model. Expression normalization is inherited from the
/// style checkpoint so the frozen judge sees its native distribution.
pub struct TransferModel<R: Real> {
    pub ps: ParamStore<R>,
    pub net: VideoStylizer,
    pub disc: VideoDiscriminator,
    pub stats: NormStats<R>,
    pub config: RunConfig,
}

impl<R: Real> TransferModel<R> {
    pub fn init(cfg: &RunConfig, stats: NormStats<R>) -> Result<Self> {
        cfg.validate()?;
        if stats.dim() != EXPR_DIM {
            return Err(Error::shape("transfer normalization must cover 64 coefficients"));
        }
        let mut ps = ParamStore::new();
        let mut rng = stream(cfg.seed, "transfer-init", 0);
        let net = VideoStylizer::new(&mut ps, &mut rng, cfg);
        let disc = VideoDiscriminator::new(&mut ps, &mut rng, cfg);
        Ok(TransferModel { ps, net, disc, stats, config: cfg.clone() })
    }

    /// Re-style a raw coefficient sequence toward `target`.
    pub fn transfer_style(
        &self,
        source: &ExpressionSequence<R>,
        target: &StyleCode<R>,
    ) -> Result<ExpressionSequence<R>> {
        if target.dim() != self.net.d_s {
            return Err(Error::shape("style code width mismatch"));
        }
        let normed = self.stats.normalize(source.frames())?;
        let mut g = Graph::new();
        let x = g.input(normed);
        let s = g.input(target.as_row());
        let out = self.net.transfer(&mut g, &self.ps, x, s);
        let frames = self.stats.denormalize(g.value(out).view())?;
        ExpressionSequence::new(frames, source.frame_rate())
    }

    /// Cycle error for probes: transfer to `target`, back to `source_code`,
    /// Euclidean distance to the source (all off-graph).
    pub fn cycle_error(
        &self,
        source: &ExpressionSequence<R>,
        target: &StyleCode<R>,
        source_code: &StyleCode<R>,
    ) -> Result<f64> {
        let there = self.transfer_style(source, target)?;
        let back = self.transfer_style(&there, source_code)?;
        let diff = &source.frames().to_owned() - &back.frames();
        Ok(diff.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut c = self.ps.to_container();
        push_stats(&mut c, "norm.expr", &self.stats)?;
        c.set_meta("kind", TRANSFER_KIND);
        c.set_meta("config", self.config.to_toml()?);
        c.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let c = ArrayContainer::load(dir)?;
        match c.meta("kind") {
            Some(k) if k == TRANSFER_KIND => {}
            other => {
                return Err(Error::invalid(format!(
                    "checkpoint at {} is {:?}, expected {TRANSFER_KIND}",
                    dir.display(),
                    other
                )))
            }
        }
        let toml = c.meta("config").ok_or_else(|| Error::invalid("checkpoint missing config"))?;
        let cfg = RunConfig::from_toml(toml)?;
        let stats = read_stats(&c, "norm.expr")?;
        let mut model = TransferModel::init(&cfg, stats)?;
        model.ps.load_from_container(&c)?;
        Ok(model)
    }
}

#[derive(Serialize, Clone, Debug)]
pub struct TransferStepRecord {
    pub step: usize,
    pub total: f64,
    pub mouth: f64,
    pub cycle: f64,
    pub triplet: f64,
    pub style1: f64,
    pub style2: f64,
    pub disc: f64,
}

#[derive(Default)]
pub struct TransferTrainReport {
    pub steps: Vec<TransferStepRecord>,
}

/// Train the transfer network against a frozen style model. Each step pairs
/// a source clip with a random clip of a *different* style as the target;
/// the target's frozen code doubles as the triplet positive and the
/// source's own code as the negative.
pub fn train_video_transfer<R: Real>(
    ds: &Dataset,
    style: &StyleModel<R>,
    basis: &BlendshapeBasis,
    cfg: &RunConfig,
) -> Result<(TransferModel<R>, TransferTrainReport)> {
    cfg.validate()?;
    if style.net.d_s != cfg.d_s {
        return Err(Error::invalid("style checkpoint width disagrees with the config"));
    }
    if ds.config.t_frames < cfg.t_prime {
        return Err(Error::invalid("clips are shorter than the style window"));
    }
    basis.validate()?;
    let judge = style.frozen_clone();
    let stats = style.stats.clone();
    let lip_map = basis.lip_difference_map();

    let train = ds.split(Split::Train)?;
    let expr_n: Vec<Array2<R>> = train
        .iter()
        .map(|&i| stats.normalize(ds.clips[i].expr.mapv(R::from_f32).view()).expect("dims"))
        .collect();
    let labels: Vec<usize> = train.iter().map(|&i| ds.clips[i].style).collect();
    let codes: Vec<Array1<R>> = train
        .iter()
        .map(|&i| {
            let clip = ExpressionSequence::new(ds.clips[i].expr.mapv(R::from_f32), 25.0)?;
            Ok(style.extract_style(&clip)?.vector().clone())
        })
        .collect::<Result<_>>()?;

    let mut by_style: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (pos, &label) in labels.iter().enumerate() {
        by_style.entry(label).or_default().push(pos);
    }
    if by_style.len() < 2 {
        return Err(Error::invalid("transfer training needs at least two styles"));
    }
    let style_ids: Vec<usize> = by_style.keys().copied().collect();

    let mut model = TransferModel::<R>::init(cfg, stats)?;
    let disc_slots: Vec<bool> =
        (0..model.ps.len()).map(|i| model.ps.name(i).starts_with("vdisc.")).collect();
    let mut adam_g =
        Adam::new(&model.ps, rr::<R>(cfg.lr)).with_betas(rr(cfg.beta1), rr(cfg.beta2));
    let mut adam_d =
        Adam::new(&model.ps, rr::<R>(cfg.lr)).with_betas(rr(cfg.beta1), rr(cfg.beta2));
    let mut report = TransferTrainReport::default();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, "transfer-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut items = Vec::with_capacity(chunk.len());
            for &pos in chunk {
                let target_label = loop {
                    let l = style_ids[rng.gen_range(0..style_ids.len())];
                    if l != labels[pos] {
                        break l;
                    }
                };
                let pool = &by_style[&target_label];
                let target_clip = pool[rng.gen_range(0..pool.len())];
                let real_clip = pool[rng.gen_range(0..pool.len())];
                items.push(TransferItem {
                    source: expr_n[pos].clone(),
                    target_code: codes[target_clip].clone(),
                    target_label,
                    source_code: codes[pos].clone(),
                    target_real: expr_n[real_clip].clone(),
                });
            }

            let mut g = Graph::new();
            let out = video_total_loss(
                &mut g, &model.net, &model.disc, &model.ps, &judge, &items, &model.stats,
                &lip_map, cfg,
            )?;

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

            report.steps.push(TransferStepRecord {
                step,
                total: g.scalar(out.loss.total).as_f64(),
                mouth: g.scalar(out.loss.mouth).as_f64(),
                cycle: g.scalar(out.loss.cycle).as_f64(),
                triplet: g.scalar(out.loss.triplet).as_f64(),
                style1: g.scalar(out.loss.style1).as_f64(),
                style2: g.scalar(out.loss.style2).as_f64(),
                disc: g.scalar(out.disc_loss).as_f64(),
            });
            step += 1;
        }
    }

    Ok((model, report))
}
