//! Deterministic synthetic stylized-motion corpus.
//!
//! Every clip starts from a smooth latent trajectory (a sum of seeded
//! low-frequency sinusoids). Audio features are a fixed linear projection of
//! the same latents, so the audio-to-lip task is solvable by construction.
//! A designated mouth block of expression coefficients is driven only by the
//! latents and left untouched by style transforms; styles act on the
//! remaining coefficients through a near-identity affine map, a bias, and a
//! temporal amplitude envelope, plus a tendency (bias + amplitude) on head
//! pose. Style 0 is the neutral identity. Speakers add constant offsets so
//! splits held out by speaker are a real generalization test.

use crate::container::{ArrayContainer, NamedArray};
use crate::error::{Error, Result};
use crate::rng::{normal, stream, uniform};
use crate::types::{EXPR_DIM, MOUTH_DIMS, POSE_DIM};
use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Latent channels per clip; the first `MOUTH_LATENTS` drive the mouth block.
const LATENTS: usize = 8;
const MOUTH_LATENTS: usize = 5;
const REST_DIM: usize = EXPR_DIM - MOUTH_DIMS;

const MAX_CONDITION: f64 = 100.0;
const MIN_TRANSFORM_SEPARATION: f64 = 1.0;
const MIN_BIAS_SEPARATION: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub m_styles: usize,
    pub speakers: usize,
    pub clips_per_speaker_style: usize,
    pub t_frames: usize,
    pub noise_std: f64,
    pub d_a: usize,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn from_run(cfg: &crate::config::RunConfig) -> Self {
        CorpusConfig {
            m_styles: cfg.m_styles,
            speakers: cfg.speakers,
            clips_per_speaker_style: cfg.clips_per_speaker_style,
            t_frames: cfg.t_frames,
            noise_std: cfg.noise_std,
            d_a: cfg.d_a,
            seed: cfg.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_styles < 2 {
            return Err(Error::Config(format!(
                "corpus needs at least 2 styles, got {}",
                self.m_styles
            )));
        }
        if self.speakers < 2 {
            return Err(Error::Config("corpus needs at least 2 speakers".into()));
        }
        if self.clips_per_speaker_style == 0 || self.t_frames == 0 || self.d_a == 0 {
            return Err(Error::Config("corpus sizes must be positive".into()));
        }
        if self.t_frames % 8 != 0 {
            return Err(Error::Config(format!(
                "t_frames {} not divisible by the window size 8",
                self.t_frames
            )));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn clip_count(&self) -> usize {
        self.m_styles * self.speakers * self.clips_per_speaker_style
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split {other:?}"))),
        }
    }
}

/// Per-style generative transform. The affine part is the identity on the
/// mouth block, so lip content is style-invariant by construction.
#[derive(Clone, Debug)]
pub struct StyleTransform {
    pub affine: Array2<f64>, // EXPR_DIM x EXPR_DIM
    pub bias: Array1<f64>,   // EXPR_DIM
    pub env_amp: f64,
    pub env_freq: f64,
    pub env_phase: f64,
    pub pose_bias: Array1<f64>, // POSE_DIM
    pub pose_amp: f64,
}

impl StyleTransform {
    fn neutral() -> Self {
        StyleTransform {
            affine: Array2::eye(EXPR_DIM),
            bias: Array1::zeros(EXPR_DIM),
            env_amp: 0.0,
            env_freq: 1.0,
            env_phase: 0.0,
            pose_bias: Array1::zeros(POSE_DIM),
            pose_amp: 1.0,
        }
    }

    fn parameter_distance(&self, other: &Self) -> f64 {
        let aff: f64 = (&self.affine - &other.affine).iter().map(|v| v * v).sum::<f64>().sqrt();
        let bias = self.bias_distance(other);
        let env = (self.env_amp - other.env_amp).abs() + (self.env_freq - other.env_freq).abs();
        let pose: f64 =
            (&self.pose_bias - &other.pose_bias).iter().map(|v| v * v).sum::<f64>().sqrt()
                + (self.pose_amp - other.pose_amp).abs();
        aff + bias + env + pose
    }

    fn bias_distance(&self, other: &Self) -> f64 {
        (&self.bias - &other.bias).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct Clip {
    pub expr: Array2<f32>,
    pub pose: Array2<f32>,
    pub audio: Array2<f32>,
    pub style: usize,
    pub speaker: usize,
    pub split: Split,
}

pub struct Dataset {
    pub config: CorpusConfig,
    pub clips: Vec<Clip>,
}

#[derive(Serialize, Deserialize)]
struct ClipRecord {
    style: usize,
    speaker: usize,
    split: Split,
}

/// Fixed global projections shared by every clip of a corpus.
struct GlobalMaps {
    mouth: Array2<f64>,  // MOUTH_DIMS x MOUTH_LATENTS
    rest: Array2<f64>,   // REST_DIM x (LATENTS - MOUTH_LATENTS)
    pose: Array2<f64>,   // POSE_DIM x LATENTS
    audio: Array2<f64>,  // d_a x LATENTS
}

fn global_maps(cfg: &CorpusConfig) -> GlobalMaps {
    let mut rng = stream(cfg.seed, "corpus/global", 0);
    let gauss = |rng: &mut _, rows: usize, cols: usize, scale: f64| {
        Array2::from_shape_fn((rows, cols), |_| normal(rng, 0.0, scale))
    };
    let mouth = gauss(&mut rng, MOUTH_DIMS, MOUTH_LATENTS, 1.0 / (MOUTH_LATENTS as f64).sqrt());
    let rest_latents = LATENTS - MOUTH_LATENTS;
    let rest = gauss(&mut rng, REST_DIM, rest_latents, 0.7 / (rest_latents as f64).sqrt());
    let pose = gauss(&mut rng, POSE_DIM, LATENTS, 0.3 / (LATENTS as f64).sqrt());
    let audio = gauss(&mut rng, cfg.d_a, LATENTS, 1.0 / (LATENTS as f64).sqrt());
    GlobalMaps { mouth, rest, pose, audio }
}

/// All style transforms for a corpus, with invertibility and pairwise
/// separation enforced.
pub fn style_transforms(cfg: &CorpusConfig) -> Vec<StyleTransform> {
    let mut out = vec![StyleTransform::neutral()];
    for g in 1..cfg.m_styles {
        let mut attempt = 0u64;
        loop {
            let t = draw_transform(cfg.seed, g as u64, attempt);
            let cond = condition_number(&t.affine);
            let separated = out.iter().all(|prev| {
                t.parameter_distance(prev) >= MIN_TRANSFORM_SEPARATION
                    && t.bias_distance(prev) >= MIN_BIAS_SEPARATION
            });
            if cond < MAX_CONDITION && separated {
                out.push(t);
                break;
            }
            attempt += 1;
            assert!(attempt < 64, "could not draw a separated style transform");
        }
    }
    out
}

fn draw_transform(seed: u64, style: u64, attempt: u64) -> StyleTransform {
    let mut rng = stream(seed, "corpus/style", style * 1000 + attempt);
    let mut affine = Array2::eye(EXPR_DIM);
    // near-identity mixing on the non-mouth block only
    for i in MOUTH_DIMS..EXPR_DIM {
        affine[(i, i)] = uniform(&mut rng, 0.8, 1.25);
        for j in MOUTH_DIMS..EXPR_DIM {
            if i != j {
                affine[(i, j)] += normal(&mut rng, 0.0, 0.22 / (REST_DIM as f64).sqrt());
            }
        }
    }
    let mut bias = Array1::zeros(EXPR_DIM);
    for j in MOUTH_DIMS..EXPR_DIM {
        bias[j] = normal(&mut rng, 0.0, 0.55);
    }
    let env_amp = uniform(&mut rng, 0.15, 0.35);
    let env_freq = uniform(&mut rng, 0.5, 2.0);
    let env_phase = uniform(&mut rng, 0.0, std::f64::consts::TAU);
    let pose_bias = Array1::from_shape_fn(POSE_DIM, |_| normal(&mut rng, 0.0, 0.3));
    let pose_amp = uniform(&mut rng, 0.7, 1.5);
    StyleTransform { affine, bias, env_amp, env_freq, env_phase, pose_bias, pose_amp }
}

/// Smooth per-clip latent trajectories: two low-frequency sinusoids summed
/// per channel.
fn clip_latents(cfg: &CorpusConfig, clip_index: u64) -> Array2<f64> {
    let mut rng = stream(cfg.seed, "corpus/clip", clip_index);
    let t_len = cfg.t_frames;
    let mut u = Array2::zeros((t_len, LATENTS));
    for k in 0..LATENTS {
        for _ in 0..2 {
            let amp = uniform(&mut rng, 0.25, 0.6);
            let freq = uniform(&mut rng, 0.4, 2.2);
            let phase = uniform(&mut rng, 0.0, std::f64::consts::TAU);
            for t in 0..t_len {
                let x = std::f64::consts::TAU * freq * (t as f64 / t_len as f64) + phase;
                u[(t, k)] += amp * x.sin();
            }
        }
    }
    u
}

fn speaker_offset(cfg: &CorpusConfig, speaker: usize) -> Array1<f64> {
    let mut rng = stream(cfg.seed, "corpus/speaker", speaker as u64);
    let mut off = Array1::zeros(EXPR_DIM);
    for j in MOUTH_DIMS..EXPR_DIM {
        off[j] = normal(&mut rng, 0.0, 0.12);
    }
    off
}

/// Speaker split: the last fifth of speakers is the test set, one speaker
/// before them validation (when there are enough), the rest train.
fn speaker_split(cfg: &CorpusConfig, speaker: usize) -> Split {
    let n_test = (cfg.speakers / 5).max(1);
    let n_val = if cfg.speakers >= 4 { 1 } else { 0 };
    if speaker >= cfg.speakers - n_test {
        Split::Test
    } else if speaker >= cfg.speakers - n_test - n_val {
        Split::Val
    } else {
        Split::Train
    }
}

pub fn generate(cfg: &CorpusConfig) -> Result<Dataset> {
    cfg.validate()?;
    let maps = global_maps(cfg);
    let transforms = style_transforms(cfg);
    let t_len = cfg.t_frames;
    let mut clips = Vec::with_capacity(cfg.clip_count());
    let mut clip_index = 0u64;
    for speaker in 0..cfg.speakers {
        let spk_off = speaker_offset(cfg, speaker);
        let split = speaker_split(cfg, speaker);
        for style in 0..cfg.m_styles {
            let tr = &transforms[style];
            for _ in 0..cfg.clips_per_speaker_style {
                let u = clip_latents(cfg, clip_index);
                let mut noise_rng = stream(cfg.seed, "corpus/noise", clip_index);

                let u_mouth = u.slice(s![.., 0..MOUTH_LATENTS]);
                let u_rest = u.slice(s![.., MOUTH_LATENTS..]);
                let mouth = u_mouth.dot(&maps.mouth.t()); // T x MOUTH_DIMS
                let rest = u_rest.dot(&maps.rest.t()); // T x REST_DIM

                let mut expr = Array2::zeros((t_len, EXPR_DIM));
                for t in 0..t_len {
                    let env = 1.0
                        + tr.env_amp
                            * (std::f64::consts::TAU * tr.env_freq * (t as f64 / t_len as f64)
                                + tr.env_phase)
                                .sin();
                    let mut frame = Array1::zeros(EXPR_DIM);
                    for j in 0..MOUTH_DIMS {
                        frame[j] = mouth[(t, j)];
                    }
                    for j in 0..REST_DIM {
                        frame[MOUTH_DIMS + j] = env * rest[(t, j)];
                    }
                    let styled = tr.affine.dot(&frame) + &tr.bias + &spk_off;
                    for j in 0..EXPR_DIM {
                        expr[(t, j)] = styled[j] + normal(&mut noise_rng, 0.0, cfg.noise_std);
                    }
                }

                let pose_base = u.dot(&maps.pose.t()); // T x POSE_DIM
                let mut pose = Array2::zeros((t_len, POSE_DIM));
                for t in 0..t_len {
                    for j in 0..POSE_DIM {
                        pose[(t, j)] = tr.pose_bias[j]
                            + tr.pose_amp * pose_base[(t, j)]
                            + normal(&mut noise_rng, 0.0, cfg.noise_std * 0.3);
                    }
                }

                let audio64 = u.dot(&maps.audio.t()); // T x d_a, kept noise-free

                clips.push(Clip {
                    expr: expr.mapv(|v| v as f32),
                    pose: pose.mapv(|v| v as f32),
                    audio: audio64.mapv(|v| v as f32),
                    style,
                    speaker,
                    split,
                });
                clip_index += 1;
            }
        }
    }
    Ok(Dataset { config: cfg.clone(), clips })
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut c = ArrayContainer::new();
        for (i, clip) in self.clips.iter().enumerate() {
            c.push(NamedArray::from_array2_f32(&format!("clip_{i:05}.expr"), &clip.expr))?;
            c.push(NamedArray::from_array2_f32(&format!("clip_{i:05}.pose"), &clip.pose))?;
            c.push(NamedArray::from_array2_f32(&format!("clip_{i:05}.audio"), &clip.audio))?;
        }
        let records: Vec<ClipRecord> = self
            .clips
            .iter()
            .map(|cl| ClipRecord { style: cl.style, speaker: cl.speaker, split: cl.split })
            .collect();
        c.set_meta("kind", "dataset");
        c.set_meta("corpus_config", &serde_json::to_string(&self.config)?);
        c.set_meta("clips", &serde_json::to_string(&records)?);
        c.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let c = ArrayContainer::load(dir)?;
        let config: CorpusConfig = serde_json::from_str(
            c.meta("corpus_config")
                .ok_or_else(|| Error::Dataset("missing corpus_config metadata".into()))?,
        )?;
        let records: Vec<ClipRecord> = serde_json::from_str(
            c.meta("clips")
                .ok_or_else(|| Error::Dataset("missing clips metadata".into()))?,
        )?;
        let mut clips = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let get = |suffix: &str| -> Result<Array2<f32>> {
                c.get(&format!("clip_{i:05}.{suffix}"))?.to_array2_f32()
            };
            clips.push(Clip {
                expr: get("expr")?,
                pose: get("pose")?,
                audio: get("audio")?,
                style: rec.style,
                speaker: rec.speaker,
                split: rec.split,
            });
        }
        let ds = Dataset { config, clips };
        ds.verify_split_disjointness()?;
        Ok(ds)
    }

    fn verify_split_disjointness(&self) -> Result<()> {
        use std::collections::BTreeSet;
        let speakers_of = |split: Split| -> BTreeSet<usize> {
            self.clips.iter().filter(|c| c.split == split).map(|c| c.speaker).collect()
        };
        let train = speakers_of(Split::Train);
        let val = speakers_of(Split::Val);
        let test = speakers_of(Split::Test);
        if train.intersection(&test).next().is_some()
            || train.intersection(&val).next().is_some()
            || val.intersection(&test).next().is_some()
        {
            return Err(Error::Dataset("speaker overlap across splits".into()));
        }
        Ok(())
    }

    /// Clip indices in a split, in stable order. Missing splits are an error.
    pub fn split(&self, split: Split) -> Result<Vec<usize>> {
        let idx: Vec<usize> = self
            .clips
            .iter()
            .enumerate()
            .filter(|(_, c)| c.split == split)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::Dataset(format!("split {split:?} is empty")));
        }
        Ok(idx)
    }

    pub fn clips_of_style(&self, split: Split, style: usize) -> Vec<usize> {
        self.clips
            .iter()
            .enumerate()
            .filter(|(_, c)| c.split == split && c.style == style)
            .map(|(i, _)| i)
            .collect()
    }
}

// ---- oracles ----

/// Nearest-class-mean classifier on per-clip mean frames: fit on train,
/// score on test. The linear-separability dial for the corpus.
pub fn oracle_style_accuracy(ds: &Dataset) -> Result<f64> {
    let train = ds.split(Split::Train)?;
    let test = ds.split(Split::Test)?;
    let m = ds.config.m_styles;
    let mut centroids = vec![Array1::<f64>::zeros(EXPR_DIM); m];
    let mut counts = vec![0usize; m];
    for &i in &train {
        let clip = &ds.clips[i];
        centroids[clip.style] += &mean_frame(&clip.expr);
        counts[clip.style] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        if *n == 0 {
            return Err(Error::Dataset("style missing from train split".into()));
        }
        *c /= *n as f64;
    }
    let mut hits = 0usize;
    for &i in &test {
        let clip = &ds.clips[i];
        let f = mean_frame(&clip.expr);
        let pred = centroids
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da: f64 = (*a - &f).iter().map(|v| v * v).sum();
                let db: f64 = (*b - &f).iter().map(|v| v * v).sum();
                da.partial_cmp(&db).expect("finite distances")
            })
            .map(|(k, _)| k)
            .expect("at least one centroid");
        if pred == clip.style {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

fn mean_frame(expr: &Array2<f32>) -> Array1<f64> {
    let t = expr.nrows() as f64;
    let mut mean = Array1::zeros(expr.ncols());
    for row in expr.rows() {
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += v as f64 / t;
        }
    }
    mean
}

/// Lower bound on audio-to-mouth canonical correlation: per mouth dimension,
/// the correlation between the dimension and its least-squares prediction
/// from the audio features; the minimum over dimensions is returned.
pub fn audio_mouth_correlation(ds: &Dataset) -> Result<f64> {
    let train = ds.split(Split::Train)?;
    let rows: usize = train.iter().map(|&i| ds.clips[i].expr.nrows()).sum();
    let d_a = ds.config.d_a;
    let mut a = Array2::<f64>::zeros((rows, d_a + 1)); // audio + intercept
    let mut y = Array2::<f64>::zeros((rows, MOUTH_DIMS));
    let mut r = 0;
    for &i in &train {
        let clip = &ds.clips[i];
        for t in 0..clip.expr.nrows() {
            for j in 0..d_a {
                a[(r, j)] = clip.audio[(t, j)] as f64;
            }
            a[(r, d_a)] = 1.0;
            for j in 0..MOUTH_DIMS {
                y[(r, j)] = clip.expr[(t, j)] as f64;
            }
            r += 1;
        }
    }
    // ridge-regularized normal equations: the audio features are a linear
    // image of a lower-dimensional latent, so A^T A is rank deficient.
    let mut ata = a.t().dot(&a);
    let scale = (ata.diag().sum() / ata.nrows() as f64).max(1.0);
    for i in 0..ata.nrows() {
        ata[(i, i)] += 1e-8 * scale;
    }
    let aty = a.t().dot(&y);
    let inv = invert(&ata).ok_or_else(|| Error::Dataset("degenerate audio features".into()))?;
    let w = inv.dot(&aty);
    let pred = a.dot(&w);
    let mut min_corr = f64::INFINITY;
    for j in 0..MOUTH_DIMS {
        let c = correlation(&pred.column(j).to_owned(), &y.column(j).to_owned());
        min_corr = min_corr.min(c);
    }
    Ok(min_corr)
}

fn correlation(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt()).max(1e-12)
}

// ---- small dense linear algebra for validation oracles ----

/// Gauss-Jordan inverse with partial pivoting; None if singular.
pub(crate) fn invert(m: &Array2<f64>) -> Option<Array2<f64>> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "inverse needs a square matrix");
    let mut a = m.clone();
    let mut inv = Array2::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().partial_cmp(&a[(j, col)].abs()).expect("finite"))
            .expect("nonempty");
        if a[(pivot, col)].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap((pivot, j), (col, j));
                inv.swap((pivot, j), (col, j));
            }
        }
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(i, j)] -= f * a[(col, j)];
                inv[(i, j)] -= f * inv[(col, j)];
            }
        }
    }
    Some(inv)
}

fn spectral_norm(m: &Array2<f64>) -> f64 {
    // power iteration on M^T M from a fixed start vector
    let n = m.ncols();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..100 {
        let mv = m.dot(&v);
        let mtv = m.t().dot(&mv);
        let norm = mtv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        v = mtv / norm;
        sigma = norm.sqrt();
    }
    sigma
}

/// 2-norm condition number estimate via power iteration on M and M^{-1}.
pub fn condition_number(m: &Array2<f64>) -> f64 {
    match invert(m) {
        Some(inv) => spectral_norm(m) * spectral_norm(&inv),
        None => f64::INFINITY,
    }
}
