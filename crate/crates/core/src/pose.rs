//! Discrete head-pose prior and cross-modal sampling.
//!
//! Stage one learns a small vector-quantized autoencoder over fixed pose
//! windows, so every decodable token is literally a codebook row. Stage two
//! freezes that codebook, fuses audio with a style code through a
//! transformer encoder, and trains a causal decoder to predict the next
//! pose token index. Generation samples indices step by step (greedy or
//! with a temperature), gathers the codebook rows, and decodes them back to
//! pose coefficients, which keeps even very long rollouts inside the range
//! the codebook has seen.

use std::path::Path;

use crate::config::RunConfig;
use crate::container::ArrayContainer;
use crate::corpus::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{
    clip_global_norm, push_stats, read_stats, sinusoidal_positions, Adam, DecoderLayer,
    EncoderLayer, Linear, Mlp, ParamStore,
};
use crate::real::{rr, Real};
use crate::rng::stream;
use crate::types::{AudioFeatureSequence, NormStats, PoseSequence, StyleCode, POSE_DIM};
use crate::vq::VectorQuantizer;
use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::Serialize;

/// Sampling policy for index generation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Always take the argmax index.
    Greedy,
    /// Softmax sampling with logits divided by the given temperature.
    Temperature(f64),
}

/// Pose tokenizer: encoder, codebook, decoder over `omega_p`-frame windows.
#[derive(Clone)]
pub struct PoseCodec {
    enc: Mlp,
    pub vq: VectorQuantizer,
    dec: Mlp,
    pub omega_p: usize,
    pub d_p: usize,
    pub n_p: usize,
}

impl PoseCodec {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut rand_chacha::ChaCha20Rng,
        cfg: &RunConfig,
    ) -> Self {
        let flat = cfg.omega_p * POSE_DIM;
        let enc = Mlp::new(ps, rng, "pose.enc", &[flat, cfg.d_p, cfg.d_p]);
        let vq = VectorQuantizer::new(ps, rng, "pose.vq", cfg.n_p, cfg.d_p);
        let dec = Mlp::new(ps, rng, "pose.dec", &[cfg.d_p, cfg.d_p, flat]);
        PoseCodec { enc, vq, dec, omega_p: cfg.omega_p, d_p: cfg.d_p, n_p: cfg.n_p }
    }

    /// Window a `T x 6` pose node into `T/omega_p` flat rows and encode each
    /// to a `d_p` latent.
    pub fn encode<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, pose: NodeId) -> NodeId {
        let (t, d) = g.shape(pose);
        assert_eq!(d, POSE_DIM, "pose input must have 6 coefficients");
        assert!(t % self.omega_p == 0, "pose length must divide by the token window");
        let flat = g.reshape(pose, t / self.omega_p, self.omega_p * POSE_DIM);
        self.enc.apply(g, ps, flat)
    }

    /// Decode token latents (`tau x d_p`) back to a `tau*omega_p x 6` pose.
    pub fn decode<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, z: NodeId) -> NodeId {
        let tau = g.shape(z).0;
        let flat = self.dec.apply(g, ps, z);
        g.reshape(flat, tau * self.omega_p, POSE_DIM)
    }
}

/// Cross-modal half: fuse audio + style into context tokens and predict the
/// next-index distribution causally.
#[derive(Clone)]
pub struct PosePredictor {
    audio_in: Linear,
    style_in: Linear,
    fuse: Vec<EncoderLayer>,
    token_in: Linear,
    decoder: Vec<DecoderLayer>,
    out: Linear,
    /// Learned start-of-sequence token embedding (`1 x d_p`).
    sos: usize,
    pub d_p: usize,
    pub n_p: usize,
    pub omega_p: usize,
}

impl PosePredictor {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut rand_chacha::ChaCha20Rng,
        cfg: &RunConfig,
    ) -> Self {
        let d = cfg.d_p;
        let audio_in = Linear::new(ps, rng, "posep.audio", cfg.d_a, d);
        let style_in = Linear::new(ps, rng, "posep.style", cfg.d_s, d);
        let fuse = (0..cfg.pose_layers)
            .map(|i| EncoderLayer::new(ps, rng, &format!("posep.fuse{i}"), d, cfg.pose_heads, 2 * d))
            .collect();
        let token_in = Linear::new(ps, rng, "posep.token", cfg.d_p, d);
        let decoder = (0..cfg.pose_layers)
            .map(|i| DecoderLayer::new(ps, rng, &format!("posep.dec{i}"), d, cfg.pose_heads, 2 * d))
            .collect();
        let out = Linear::new(ps, rng, "posep.out", d, cfg.n_p);
        let sos = ps.add("posep.sos", crate::nn::xavier(rng, 1, d));
        PosePredictor { audio_in, style_in, fuse, token_in, decoder, out, sos, d_p: d, n_p: cfg.n_p, omega_p: cfg.omega_p }
    }

    /// Fused context (`tau_p x d_p`): audio frames are pooled down to the
    /// pose token rate, the style code is prepended as an extra token, the
    /// stack runs with sinusoidal positions, and the style slot is dropped
    /// again afterwards.
    pub fn fuse_context<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        audio: NodeId,
        style: NodeId,
    ) -> NodeId {
        let t = g.shape(audio).0;
        assert!(t % self.omega_p == 0, "audio length must divide by the token window");
        let a = self.audio_in.apply(g, ps, audio);
        let pooled = g.mean_pool_rows(a, self.omega_p);
        let s_tok = self.style_in.apply(g, ps, style);
        let mut x = g.concat_rows(&[s_tok, pooled]);
        let pos = g.input(sinusoidal_positions::<R>(g.shape(x).0, self.d_p));
        x = g.add(x, pos);
        for layer in &self.fuse {
            x = layer.apply(g, ps, x, None);
        }
        let tau = g.shape(x).0;
        g.slice_rows(x, 1, tau)
    }

    /// Next-index logits (`steps x N_p`) given context and the already
    /// chosen token embeddings. Row `t` sees embeddings `< t` only: the
    /// input sequence is [SOS, e_0, .., e_{k-2}] under a causal mask.
    pub fn logits<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        context: NodeId,
        past: &[NodeId],
        steps: usize,
    ) -> NodeId {
        assert!(steps >= 1 && past.len() >= steps - 1, "need one past embedding per later step");
        let sos = ps.bind(g, self.sos);
        let mut rows = vec![sos];
        for &e in &past[..steps - 1] {
            rows.push(self.token_in.apply(g, ps, e));
        }
        let mut x = g.concat_rows(&rows);
        let pos = g.input(sinusoidal_positions::<R>(steps, self.d_p));
        x = g.add(x, pos);
        for layer in &self.decoder {
            x = layer.apply(g, ps, x, context);
        }
        self.out.apply(g, ps, x)
    }
}

pub const POSE_KIND: &str = "pose_generator";

/// Trained pose model: tokenizer + predictor, their normalizers, and the
/// config they were built from.
pub struct PoseModel<R: Real> {
    pub ps: ParamStore<R>,
    pub codec: PoseCodec,
    pub predictor: PosePredictor,
    pub pose_stats: NormStats<R>,
    pub audio_stats: NormStats<R>,
    pub config: RunConfig,
}

impl<R: Real> PoseModel<R> {
    pub fn init(cfg: &RunConfig, pose_stats: NormStats<R>, audio_stats: NormStats<R>) -> Result<Self> {
        cfg.validate()?;
        if pose_stats.dim() != POSE_DIM {
            return Err(Error::shape("pose normalization must cover 6 coefficients"));
        }
        if audio_stats.dim() != cfg.d_a {
            return Err(Error::shape("audio normalization dimension mismatch"));
        }
        let mut ps = ParamStore::new();
        let mut rng = stream(cfg.seed, "pose-init", 0);
        let codec = PoseCodec::new(&mut ps, &mut rng, cfg);
        let predictor = PosePredictor::new(&mut ps, &mut rng, cfg);
        Ok(PoseModel { ps, codec, predictor, pose_stats, audio_stats, config: cfg.clone() })
    }

    /// Deterministic tokenization of a pose sequence into codebook indices.
    pub fn encode_indices(&self, pose: &PoseSequence<R>) -> Result<Vec<usize>> {
        if pose.len() % self.codec.omega_p != 0 {
            return Err(Error::invalid(format!(
                "pose length {} not divisible by the token window {}",
                pose.len(),
                self.codec.omega_p
            )));
        }
        let normed = self.pose_stats.normalize(pose.frames())?;
        let mut g = Graph::new();
        let p = g.input(normed);
        let z = self.codec.encode(&mut g, &self.ps, p);
        Ok(self.codec.vq.assign(&self.ps, &g.value(z).view()))
    }

    /// Decode codebook indices back to a pose sequence.
    pub fn decode_indices(&self, indices: &[usize]) -> Result<PoseSequence<R>> {
        if indices.is_empty() {
            return Err(Error::invalid("cannot decode an empty index sequence"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.codec.n_p) {
            return Err(Error::invalid(format!(
                "index {bad} outside the codebook of {} entries",
                self.codec.n_p
            )));
        }
        let mut g = Graph::new();
        let cb = self.ps.bind(&mut g, self.codec.vq.codebook);
        let rows = g.gather_rows(cb, indices);
        let decoded = self.codec.decode(&mut g, &self.ps, rows);
        let frames = self.pose_stats.denormalize(g.value(decoded).view())?;
        PoseSequence::new(frames)
    }

    /// Reconstruction through the tokenizer (encode -> quantize -> decode).
    pub fn reconstruct(&self, pose: &PoseSequence<R>) -> Result<PoseSequence<R>> {
        self.decode_indices(&self.encode_indices(pose)?)
    }

    /// Per-step logits for teacher forcing: the target indices provide the
    /// shifted input embeddings (looked up frozen from the codebook).
    fn teacher_logits(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        audio: &Array2<R>,
        style: &Array2<R>,
        targets: &[usize],
    ) -> NodeId {
        let a = g.input(audio.clone());
        let s = g.input(style.clone());
        let ctx = self.predictor.fuse_context(g, ps, a, s);
        let cb = ps.bind(g, self.codec.vq.codebook);
        let past: Vec<NodeId> = targets[..targets.len() - 1]
            .iter()
            .map(|&i| {
                let row = g.gather_rows(cb, &[i]);
                g.detach(row)
            })
            .collect();
        self.predictor.logits(g, ps, ctx, &past, targets.len())
    }

    /// Sample a pose sequence for `t_frames` of audio. Greedy always takes
    /// the argmax; temperature sampling is deterministic in the seed.
    pub fn sample(
        &self,
        audio: &AudioFeatureSequence<R>,
        style: &StyleCode<R>,
        sampling: Sampling,
        seed: u64,
    ) -> Result<PoseSequence<R>> {
        let indices = self.sample_indices(audio, style, sampling, seed)?;
        self.decode_indices(&indices)
    }

    /// The index-level half of `sample`, exposed for diversity probes.
    pub fn sample_indices(
        &self,
        audio: &AudioFeatureSequence<R>,
        style: &StyleCode<R>,
        sampling: Sampling,
        seed: u64,
    ) -> Result<Vec<usize>> {
        if audio.len() % self.codec.omega_p != 0 {
            return Err(Error::invalid(format!(
                "audio length {} not divisible by the token window {}",
                audio.len(),
                self.codec.omega_p
            )));
        }
        if let Sampling::Temperature(t) = sampling {
            if t <= 0.0 || !t.is_finite() {
                return Err(Error::invalid(format!(
                    "temperature must be positive and finite, got {t}"
                )));
            }
        }
        let steps = audio.len() / self.codec.omega_p;
        let normed_audio = self.audio_stats.normalize(audio.frames())?;
        let style_row = style.as_row();
        let mut rng = stream(seed, "pose-sample", 0);
        let mut chosen: Vec<usize> = Vec::with_capacity(steps);
        for step in 1..=steps {
            let mut g = Graph::new();
            let a = g.input(normed_audio.clone());
            let s = g.input(style_row.clone());
            let ctx = self.predictor.fuse_context(&mut g, &self.ps, a, s);
            let cb = self.ps.bind(&mut g, self.codec.vq.codebook);
            let past: Vec<NodeId> =
                chosen.iter().map(|&i| g.gather_rows(cb, &[i])).collect();
            let logits = self.predictor.logits(&mut g, &self.ps, ctx, &past, step);
            let last = g.value(logits).row(step - 1).to_owned();
            chosen.push(match sampling {
                Sampling::Greedy => crate::style::argmax(&last),
                Sampling::Temperature(t) => sample_categorical(&last, t, &mut rng),
            });
        }
        Ok(chosen)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut c = self.ps.to_container();
        push_stats(&mut c, "norm.pose", &self.pose_stats)?;
        push_stats(&mut c, "norm.audio", &self.audio_stats)?;
        c.set_meta("kind", POSE_KIND);
        c.set_meta("config", self.config.to_toml()?);
        c.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let c = ArrayContainer::load(dir)?;
        match c.meta("kind") {
            Some(k) if k == POSE_KIND => {}
            other => {
                return Err(Error::invalid(format!(
                    "checkpoint at {} is {:?}, expected {POSE_KIND}",
                    dir.display(),
                    other
                )))
            }
        }
        let toml = c.meta("config").ok_or_else(|| Error::invalid("checkpoint missing config"))?;
        let cfg = RunConfig::from_toml(toml)?;
        let pose_stats = read_stats(&c, "norm.pose")?;
        let audio_stats = read_stats(&c, "norm.audio")?;
        let mut model = PoseModel::init(&cfg, pose_stats, audio_stats)?;
        model.ps.load_from_container(&c)?;
        Ok(model)
    }
}

/// Draw one index from softmax(logits / temperature). f64 throughout so the
/// draw does not depend on the training precision.
fn sample_categorical<R: Real>(logits: &Array1<R>, temperature: f64, rng: &mut impl Rng) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|&l| l.as_f64() / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

#[derive(Serialize, Clone, Debug)]
pub struct PoseStepRecord {
    pub stage: &'static str,
    pub step: usize,
    pub total: f64,
    pub recon: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub ce: f64,
}

#[derive(Serialize, Clone, Debug)]
pub struct PoseEpochRecord {
    pub stage: &'static str,
    pub epoch: usize,
    pub mean_total: f64,
    pub codebook_usage: f64,
}

#[derive(Default)]
pub struct PoseTrainReport {
    pub steps: Vec<PoseStepRecord>,
    pub epochs: Vec<PoseEpochRecord>,
}

const DEAD_ENTRY_STEPS: u32 = 200;

/// Two-stage training: the tokenizer first (reconstruction + codebook +
/// commitment over pose windows), then the predictor with the codebook
/// frozen (cross-entropy against the tokenizer's own indices). Style codes
/// come from the caller per clip, usually a trained style model.
pub fn train_pose_generator<R: Real>(
    ds: &Dataset,
    style_of_clip: &dyn Fn(usize) -> Result<StyleCode<R>>,
    cfg: &RunConfig,
) -> Result<(PoseModel<R>, PoseTrainReport)> {
    cfg.validate()?;
    if ds.config.t_frames % cfg.omega_p != 0 {
        return Err(Error::invalid("corpus clip length must divide by the pose token window"));
    }
    let train = ds.split(Split::Train)?;
    if train.is_empty() {
        return Err(Error::invalid("pose training needs a non-empty train split"));
    }

    let poses: Vec<Array2<R>> = train.iter().map(|&i| ds.clips[i].pose.mapv(R::from_f32)).collect();
    let audios: Vec<Array2<R>> = train.iter().map(|&i| ds.clips[i].audio.mapv(R::from_f32)).collect();
    let pose_stats = NormStats::fit(poses.iter().map(|a| a.view()))?;
    let audio_stats = NormStats::fit(audios.iter().map(|a| a.view()))?;
    let normed_poses: Vec<Array2<R>> =
        poses.iter().map(|a| pose_stats.normalize(a.view()).expect("dims fit")).collect();
    let normed_audios: Vec<Array2<R>> =
        audios.iter().map(|a| audio_stats.normalize(a.view()).expect("dims fit")).collect();
    let styles: Vec<Array2<R>> = train
        .iter()
        .map(|&i| Ok(style_of_clip(i)?.as_row()))
        .collect::<Result<_>>()?;

    let mut model = PoseModel::<R>::init(cfg, pose_stats, audio_stats)?;
    let mut report = PoseTrainReport::default();

    // Stage one: pose tokenizer. Only pose.* parameters receive gradients
    // by construction (the predictor is not in the graph).
    let mut adam = Adam::new(&model.ps, rr::<R>(cfg.lr)).with_betas(rr(cfg.beta1), rr(cfg.beta2));
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, "pose-codec-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..normed_poses.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let mut epoch_total = 0.0;
        let mut epoch_used: std::collections::BTreeSet<usize> = Default::default();

        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Graph::new();
            let mut recons = Vec::new();
            let mut cbs = Vec::new();
            let mut commits = Vec::new();
            let mut used = Vec::new();
            let mut features = Vec::new();
            for &ci in chunk {
                let p = g.input(normed_poses[ci].clone());
                let f = model.codec.encode(&mut g, &model.ps, p);
                features.push(f);
                let (q, raw, idx) = model.codec.vq.quantize_st(&mut g, &model.ps, f);
                used.extend_from_slice(&idx);
                let rec = model.codec.decode(&mut g, &model.ps, q);
                recons.push(g.mse(rec, p));
                let (cb, commit) = model.codec.vq.vq_terms(&mut g, f, raw);
                cbs.push(cb);
                commits.push(commit);
            }
            let recon = mean_nodes(&mut g, &recons);
            let codebook = mean_nodes(&mut g, &cbs);
            let commitment = mean_nodes(&mut g, &commits);
            let mut total = g.add(recon, codebook);
            total = g.add(total, commitment);

            let grads = g.backward(total);
            let mut pg = g.param_grads(&grads, model.ps.len());
            clip_global_norm(&mut pg, rr::<R>(cfg.grad_clip));
            adam.step(&mut model.ps, &pg);

            model.codec.vq.note_usage(&used);
            epoch_used.extend(used.iter().copied());
            let views: Vec<_> = features.iter().map(|&f| g.value(f)).collect();
            let rows_per = views[0].nrows();
            let mut recent = Array2::<R>::zeros((views.len() * rows_per, cfg.d_p));
            for (i, v) in views.iter().enumerate() {
                recent.slice_mut(s![i * rows_per..(i + 1) * rows_per, ..]).assign(v);
            }
            model.codec.vq.reseed_dead(&mut model.ps, &mut rng, &recent.view(), DEAD_ENTRY_STEPS);

            let total_v = g.scalar(total).as_f64();
            epoch_total += total_v * chunk.len() as f64;
            report.steps.push(PoseStepRecord {
                stage: "codec",
                step,
                total: total_v,
                recon: g.scalar(recon).as_f64(),
                codebook: g.scalar(codebook).as_f64(),
                commitment: g.scalar(commitment).as_f64(),
                ce: 0.0,
            });
            step += 1;
        }
        report.epochs.push(PoseEpochRecord {
            stage: "codec",
            epoch,
            mean_total: epoch_total / normed_poses.len().max(1) as f64,
            codebook_usage: epoch_used.len() as f64 / cfg.n_p as f64,
        });
    }

    // Stage two: freeze the tokenizer, train the predictor on its indices.
    for idx in 0..model.ps.len() {
        if model.ps.name(idx).starts_with("pose.") {
            model.ps.set_trainable(idx, false);
        }
    }
    let targets: Vec<Vec<usize>> = normed_poses
        .iter()
        .map(|p| {
            let mut g = Graph::new();
            let node = g.input(p.clone());
            let z = model.codec.encode(&mut g, &model.ps, node);
            model.codec.vq.assign(&model.ps, &g.value(z).view())
        })
        .collect();

    let mut adam_p = Adam::new(&model.ps, rr::<R>(cfg.lr)).with_betas(rr(cfg.beta1), rr(cfg.beta2));
    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, "pose-pred-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..normed_poses.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let mut epoch_total = 0.0;

        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Graph::new();
            let mut ces = Vec::new();
            for &ci in chunk {
                let logits =
                    model.teacher_logits(&mut g, &model.ps, &normed_audios[ci], &styles[ci], &targets[ci]);
                ces.push(g.cross_entropy(logits, &targets[ci]));
            }
            let total = mean_nodes(&mut g, &ces);
            let grads = g.backward(total);
            let mut pg = g.param_grads(&grads, model.ps.len());
            clip_global_norm(&mut pg, rr::<R>(cfg.grad_clip));
            adam_p.step(&mut model.ps, &pg);

            let total_v = g.scalar(total).as_f64();
            epoch_total += total_v * chunk.len() as f64;
            report.steps.push(PoseStepRecord {
                stage: "predictor",
                step,
                total: total_v,
                recon: 0.0,
                codebook: 0.0,
                commitment: 0.0,
                ce: total_v,
            });
            step += 1;
        }
        report.epochs.push(PoseEpochRecord {
            stage: "predictor",
            epoch,
            mean_total: epoch_total / normed_poses.len().max(1) as f64,
            codebook_usage: 0.0,
        });
    }

    for idx in 0..model.ps.len() {
        model.ps.set_trainable(idx, true);
    }
    Ok((model, report))
}

fn mean_nodes<R: Real>(g: &mut Graph<R>, parts: &[NodeId]) -> NodeId {
    let sum = parts[1..].iter().fold(parts[0], |acc, &p| g.add(acc, p));
    g.scale(sum, rr::<R>(1.0 / parts.len() as f64))
}

/// Held-out top-1 accuracy of the index predictor under teacher forcing.
pub fn predictor_accuracy<R: Real>(
    model: &PoseModel<R>,
    ds: &Dataset,
    style_of_clip: &dyn Fn(usize) -> Result<StyleCode<R>>,
    split: Split,
) -> Result<f64> {
    let clips = ds.split(split)?;
    if clips.is_empty() {
        return Err(Error::invalid("split is empty"));
    }
    let mut hits = 0usize;
    let mut seen = 0usize;
    for &i in &clips {
        let pose = PoseSequence::new(ds.clips[i].pose.mapv(R::from_f32))?;
        let targets = model.encode_indices(&pose)?;
        let audio = model.audio_stats.normalize(ds.clips[i].audio.mapv(R::from_f32).view())?;
        let style = style_of_clip(i)?.as_row();
        let mut g = Graph::new();
        let logits = model.teacher_logits(&mut g, &model.ps, &audio, &style, &targets);
        let vals = g.value(logits);
        for (row, &want) in vals.rows().into_iter().zip(&targets) {
            if crate::style::argmax(&row.to_owned()) == want {
                hits += 1;
            }
        }
        seen += targets.len();
    }
    Ok(hits as f64 / seen as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, CorpusConfig};
    use crate::nn::finite_diff_max_rel_err;
    use ndarray::Array2;

    fn toy_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.d_a = 5;
        cfg.d_s = 8;
        cfg.d_p = 12;
        cfg.n_p = 16;
        cfg.omega_p = 4;
        cfg.pose_layers = 1;
        cfg.pose_heads = 2;
        cfg.t_frames = 16;
        cfg.t_prime = 8;
        cfg.omega = 4;
        cfg.validate().unwrap();
        cfg
    }

    fn toy_model(cfg: &RunConfig) -> PoseModel<f64> {
        PoseModel::init(cfg, NormStats::identity(POSE_DIM), NormStats::identity(cfg.d_a)).unwrap()
    }

    fn toy_audio(cfg: &RunConfig, t: usize, seed: u64) -> AudioFeatureSequence<f64> {
        let mut rng = stream(seed, "pose-test-audio", 0);
        AudioFeatureSequence::new(Array2::from_shape_fn((t, cfg.d_a), |_| rng.gen::<f64>() - 0.5))
            .unwrap()
    }

    fn toy_style(cfg: &RunConfig, seed: u64) -> StyleCode<f64> {
        let mut rng = stream(seed, "pose-test-style", 0);
        StyleCode::new(Array1::from_shape_fn(cfg.d_s, |_| rng.gen::<f64>() - 0.5)).unwrap()
    }

    fn toy_pose(t: usize, seed: u64) -> PoseSequence<f64> {
        let mut rng = stream(seed, "pose-test-pose", 0);
        PoseSequence::new(Array2::from_shape_fn((t, POSE_DIM), |_| rng.gen::<f64>() - 0.5)).unwrap()
    }

    use rand::Rng;

    #[test]
    fn token_count_matches_window_arithmetic() {
        let cfg = toy_config();
        let model = toy_model(&cfg);
        let pose = toy_pose(32, 7);
        let idx = model.encode_indices(&pose).unwrap();
        assert_eq!(idx.len(), 32 / cfg.omega_p);
        assert!(idx.iter().all(|&i| i < cfg.n_p));
    }

    #[test]
    fn indivisible_lengths_are_rejected() {
        let cfg = toy_config();
        let model = toy_model(&cfg);
        let pose = toy_pose(30, 7);
        assert!(model.encode_indices(&pose).is_err());
        let audio = toy_audio(&cfg, 30, 3);
        let style = toy_style(&cfg, 4);
        assert!(model.sample(&audio, &style, Sampling::Greedy, 0).is_err());
    }

    #[test]
    fn decoded_tokens_are_codebook_rows() {
        let cfg = toy_config();
        let model = toy_model(&cfg);
        let pose = toy_pose(16, 9);
        let idx = model.encode_indices(&pose).unwrap();
        // Every decodable latent is bitwise a codebook row: decoding the
        // index sequence equals decoding the gathered rows directly.
        let via_indices = model.decode_indices(&idx).unwrap();
        let cb = crate::nn::raw(&model.ps, model.codec.vq.codebook);
        let mut rows = Array2::zeros((idx.len(), cfg.d_p));
        for (r, &i) in idx.iter().enumerate() {
            rows.row_mut(r).assign(&cb.row(i));
        }
        let mut g = Graph::new();
        let z = g.input(rows);
        let dec = model.codec.decode(&mut g, &model.ps, z);
        let direct = model.pose_stats.denormalize(g.value(dec).view()).unwrap();
        assert_eq!(via_indices.frames(), direct.view());
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let cfg = toy_config();
        let model = toy_model(&cfg);
        assert!(model.decode_indices(&[0, cfg.n_p]).is_err());
        assert!(model.decode_indices(&[]).is_err());
    }

    #[test]
    fn context_token_rate_and_style_sensitivity() {
        let cfg = toy_config();
        let model = toy_model(&cfg);
        let audio = toy_audio(&cfg, 32, 1);
        let normed = model.audio_stats.normalize(audio.frames()).unwrap();
        let mut g = Graph::new();
        let a = g.input(normed.clone());
        let s1 = g.input(toy_style(&cfg, 2).as_row());
        let ctx1 = model.predictor.fuse_context(&mut g, &model.ps, a, s1);
        assert_eq!(g.shape(ctx1), (32 / cfg.omega_p, cfg.d_p));

        let a2 = g.input(normed);
        let s2 = g.input(toy_style(&cfg, 3).as_row());
        let ctx2 = model.predictor.fuse_context(&mut g, &model.ps, a2, s2);
        let diff = (&g.value(ctx1).to_owned() - &g.value(ctx2).to_owned())
            .iter()
            .map(|d| d.abs())
            .fold(0.0f64, f64::max);
        assert!(diff > 1e-9, "same audio under two styles must give different contexts");
    }

    #[test]
    fn future_index_perturbation_leaves_earlier_logits_alone() {
        let cfg = toy_config();
        let model = toy_model(&cfg);
        let audio = toy_audio(&cfg, 16, 5);
        let style = toy_style(&cfg, 6);
        let normed = model.audio_stats.normalize(audio.frames()).unwrap();
        let style_row = style.as_row();
        let base: Vec<usize> = vec![1, 2, 3, 4];
        let mut changed = base.clone();
        changed[3] = 9; // only the last target moves; it feeds no input row

        let run = |targets: &[usize]| {
            let mut g = Graph::new();
            let logits = model.teacher_logits(&mut g, &model.ps, &normed, &style_row, targets);
            g.value(logits).to_owned()
        };
        let a = run(&base);
        let b = run(&changed);
        // Rows 0..3 depend on SOS and embeddings of targets[0..2] only.
        assert_eq!(a, b, "all rows: the final target never enters the input");

        // Perturbing an *earlier* target must change later rows but not row 0.
        let mut early = base.clone();
        early[0] = 7;
        let c = run(&early);
        assert_eq!(a.row(0), c.row(0), "step 0 sees only SOS");
        let later_diff = (&a.slice(s![1.., ..]).to_owned() - &c.slice(s![1.., ..]).to_owned())
            .iter()
            .map(|d| d.abs())
            .fold(0.0f64, f64::max);
        assert!(later_diff > 1e-12, "later steps must react to an earlier index change");
    }

    #[test]
    fn untrained_uniform_logits_give_ln_np_cross_entropy() {
        let mut cfg = toy_config();
        cfg.n_p = 8;
        let mut model = toy_model(&cfg);
        // Zero the output head: logits are exactly uniform regardless of
        // everything upstream.
        let w = model.ps.index_of("posep.out.w").unwrap();
        model.ps.value_mut(w).fill(0.0);
        let b = model.ps.index_of("posep.out.b").unwrap();
        model.ps.value_mut(b).fill(0.0);
        let audio = toy_audio(&cfg, 16, 11);
        let normed = model.audio_stats.normalize(audio.frames()).unwrap();
        let style_row = toy_style(&cfg, 12).as_row();
        let targets = vec![0, 5, 2, 7];
        let mut g = Graph::new();
        let logits = model.teacher_logits(&mut g, &model.ps, &normed, &style_row, &targets);
        let ce = g.cross_entropy(logits, &targets);
        let want = (cfg.n_p as f64).ln();
        assert!((g.scalar(ce) - want).abs() < 1e-12, "uniform CE must equal ln N_p");
    }

    #[test]
    fn greedy_sampling_matches_argmax_decoding() {
        let cfg = toy_config();
        let model = toy_model(&cfg);
        let audio = toy_audio(&cfg, 16, 21);
        let style = toy_style(&cfg, 22);
        let greedy = model.sample_indices(&audio, &style, Sampling::Greedy, 0).unwrap();
        // A vanishing temperature concentrates all mass on the argmax.
        let cold =
            model.sample_indices(&audio, &style, Sampling::Temperature(1e-9), 123).unwrap();
        assert_eq!(greedy, cold);
        // Seed must not matter for greedy.
        let greedy2 = model.sample_indices(&audio, &style, Sampling::Greedy, 42).unwrap();
        assert_eq!(greedy, greedy2);
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let cfg = toy_config();
        let model = toy_model(&cfg);
        let audio = toy_audio(&cfg, 16, 31);
        let style = toy_style(&cfg, 32);
        let a = model.sample(&audio, &style, Sampling::Temperature(1.0), 7).unwrap();
        let b = model.sample(&audio, &style, Sampling::Temperature(1.0), 7).unwrap();
        assert_eq!(a.frames(), b.frames());
    }

    #[test]
    fn nonpositive_temperature_is_rejected() {
        let cfg = toy_config();
        let model = toy_model(&cfg);
        let audio = toy_audio(&cfg, 16, 41);
        let style = toy_style(&cfg, 42);
        assert!(model.sample(&audio, &style, Sampling::Temperature(0.0), 0).is_err());
        assert!(model.sample(&audio, &style, Sampling::Temperature(-1.0), 0).is_err());
    }

    #[test]
    fn categorical_sampler_respects_extreme_logits() {
        let logits = Array1::from(vec![0.0f64, 50.0, 0.0]);
        let mut rng = stream(0, "pose-test-cat", 0);
        for _ in 0..20 {
            assert_eq!(sample_categorical(&logits, 1.0, &mut rng), 1);
        }
    }

    #[test]
    fn predictor_loss_gradients_match_finite_differences() {
        let cfg = toy_config();
        let mut model = toy_model(&cfg);
        // The tokenizer is frozen whenever this loss runs (stage two). Its
        // codebook feeds the teacher-forced inputs through a stop-gradient,
        // so finite differences on those entries would measure a dependence
        // the training update never uses.
        for idx in 0..model.ps.len() {
            if model.ps.name(idx).starts_with("pose.") {
                model.ps.set_trainable(idx, false);
            }
        }
        let audio = toy_audio(&cfg, 16, 51);
        let normed = model.audio_stats.normalize(audio.frames()).unwrap();
        let style_row = toy_style(&cfg, 52).as_row();
        let targets = vec![3, 1, 4, 1];
        let worst = finite_diff_max_rel_err(
            &model.ps,
            |g, ps| {
                let logits = model.teacher_logits(g, ps, &normed, &style_row, &targets);
                g.cross_entropy(logits, &targets)
            },
            1e-5,
            3,
            53,
        );
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn epochs_zero_returns_initialized_model() {
        let mut cfg = toy_config();
        cfg.epochs = 0;
        cfg.speakers = 2;
        cfg.m_styles = 2;
        cfg.clips_per_speaker_style = 2;
        let ds = generate(&CorpusConfig::from_run(&cfg)).unwrap();
        let style = toy_style(&cfg, 61);
        let (model, report) =
            train_pose_generator::<f64>(&ds, &|_| Ok(style.clone()), &cfg).unwrap();
        assert!(report.steps.is_empty());
        assert!(model.ps.len() > 0);
        assert!((0..model.ps.len()).all(|i| model.ps.is_trainable(i)));
    }

    #[test]
    fn save_load_round_trip_preserves_samples() {
        // f32 model: the container payload is f32, so the round trip is
        // bit-exact at this precision.
        let cfg = toy_config();
        let model =
            PoseModel::<f32>::init(&cfg, NormStats::identity(POSE_DIM), NormStats::identity(cfg.d_a))
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = PoseModel::<f32>::load(dir.path()).unwrap();
        let audio = AudioFeatureSequence::new(toy_audio(&cfg, 16, 71).frames().mapv(|v| v as f32))
            .unwrap();
        let style =
            StyleCode::new(toy_style(&cfg, 72).vector().mapv(|v| v as f32)).unwrap();
        let a = model.sample(&audio, &style, Sampling::Temperature(0.7), 5).unwrap();
        let b = back.sample(&audio, &style, Sampling::Temperature(0.7), 5).unwrap();
        assert_eq!(a.frames(), b.frames());
    }

    #[test]
    fn short_training_run_reconstructs_and_beats_chance() {
        let mut cfg = toy_config();
        cfg.epochs = 400;
        cfg.n_p = 48;
        cfg.d_p = 24;
        cfg.speakers = 3;
        cfg.m_styles = 2;
        cfg.clips_per_speaker_style = 2;
        cfg.t_frames = 16;
        cfg.noise_std = 0.0;
        cfg.lr = 3e-3;
        let ds = generate(&CorpusConfig::from_run(&cfg)).unwrap();
        // A per-style constant code is enough signal for the probe.
        let styles: Vec<StyleCode<f64>> =
            (0..cfg.m_styles).map(|m| toy_style(&cfg, 100 + m as u64)).collect();
        let style_of = |i: usize| Ok(styles[ds.clips[i].style].clone());
        let (model, report) = train_pose_generator::<f64>(&ds, &style_of, &cfg).unwrap();

        // Tokenizer: reconstruction error under 10% of per-dim variance.
        let train = ds.split(Split::Train).unwrap();
        let mut err = 0.0f64;
        let mut var = 0.0f64;
        let mut count = 0usize;
        for &i in &train {
            let pose = PoseSequence::new(ds.clips[i].pose.mapv(f64::from)).unwrap();
            let rec = model.reconstruct(&pose).unwrap();
            let normed = model.pose_stats.normalize(pose.frames()).unwrap();
            let rec_n = model.pose_stats.normalize(rec.frames()).unwrap();
            err += (&normed - &rec_n).mapv(|d| d * d).sum();
            var += normed.mapv(|d| d * d).sum();
            count += normed.len();
        }
        let rel = err / var.max(1e-12);
        assert!(rel < 0.10, "tokenizer reconstructs {:.1}% of variance", 100.0 * (1.0 - rel));
        let _ = count;

        // Predictor: teacher-forced accuracy well above the 1/N_p chance.
        let acc = predictor_accuracy(&model, &ds, &style_of, Split::Train).unwrap();
        let chance = 1.0 / cfg.n_p as f64;
        assert!(acc >= 10.0 * chance, "accuracy {acc} vs chance {chance}");

        // Long-horizon: sample 10x training length, poses stay bounded.
        let audio = toy_audio(&cfg, cfg.t_frames * 10, 81);
        let style = styles[0].clone();
        let long = model.sample(&audio, &style, Sampling::Temperature(1.0), 3).unwrap();
        let mut max_train = 0.0f64;
        for &i in &train {
            for &v in &ds.clips[i].pose {
                max_train = max_train.max((v as f64).abs());
            }
        }
        let sigma = model
            .pose_stats
            .std
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        let bound = max_train + 3.0 * sigma;
        let max_gen = long.frames().iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(max_gen <= bound, "long rollout max {max_gen} exceeds {bound}");

        // Diversity: several seeds at temperature 1.0 give several distinct
        // index sequences.
        let mut distinct = std::collections::BTreeSet::new();
        let short_audio = toy_audio(&cfg, cfg.t_frames, 82);
        for seed in 0..10 {
            distinct
                .insert(model.sample_indices(&short_audio, &style, Sampling::Temperature(1.0), seed).unwrap());
        }
        assert!(distinct.len() >= 3, "only {} distinct sequences", distinct.len());

        assert!(report.epochs.iter().any(|e| e.stage == "codec"));
        assert!(report.epochs.iter().any(|e| e.stage == "predictor"));
    }
}
