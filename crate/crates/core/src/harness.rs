//! Run directories and the operations behind the CLI subcommands. A run
//! directory always ends up holding the resolved config, the seed, JSONL
//! training logs, checkpoint and dataset hashes, and plots — enough to
//! reproduce the run from disk alone.

use crate::blendshape::BlendshapeBasis;
use crate::config::RunConfig;
use crate::corpus::{self, CorpusConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport, PerClipBreakdown};
use crate::motion::{train_motion_stylizer, MotionModel};
use crate::plot;
use crate::pose::{train_pose_generator, PoseModel, Sampling};
use crate::real::Real;
use crate::style::{classification_accuracy, train_style_extractor, StyleModel};
use crate::transfer::{train_video_transfer, TransferModel};
use crate::types::{AudioFeatureSequence, ExpressionSequence, StyleCode};
use ndarray::{Array1, Array2};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const POSE_DIVERSITY_SEEDS: u64 = 10;

/// A single run's output directory.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Create the directory (parents included) and record the resolved
    /// config and seed.
    pub fn create(root: &Path, cfg: &RunConfig) -> Result<RunDir> {
        std::fs::create_dir_all(root)?;
        cfg.save(&root.join("config.resolved.toml"))?;
        std::fs::write(root.join("seed"), format!("{}\n", cfg.seed))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut out = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut out, row)
                .map_err(|e| Error::invalid(format!("serialize {name}: {e}")))?;
            out.push(b'\n');
        }
        std::fs::write(self.file(name), out)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::invalid(format!("serialize {name}: {e}")))?;
        std::fs::write(self.file(name), text + "\n")?;
        Ok(())
    }

    /// Append `label  <sha256>` to hashes.txt and return the digest.
    pub fn record_hash(&self, label: &str, target: &Path) -> Result<String> {
        let digest = sha256_path(target)?;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.file("hashes.txt"))?;
        writeln!(f, "{label}  {digest}")?;
        Ok(digest)
    }
}

/// SHA-256 of a file, or of a directory tree (sorted relative paths and
/// contents), so byte-identical trees hash identically.
pub fn sha256_path(path: &Path) -> Result<String> {
    fn walk(path: &Path, rel: &Path, files: &mut Vec<(String, PathBuf)>) -> Result<()> {
        if path.is_file() {
            files.push((rel.to_string_lossy().into_owned(), path.to_path_buf()));
            return Ok(());
        }
        let mut entries: Vec<_> =
            std::fs::read_dir(path)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            walk(&e.path(), &rel.join(e.file_name()), files)?;
        }
        Ok(())
    }
    if !path.exists() {
        return Err(Error::invalid(format!("nothing to hash at {}", path.display())));
    }
    let mut files = Vec::new();
    walk(path, Path::new(""), &mut files)?;
    let mut h = Sha256::new();
    for (rel, p) in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(std::fs::read(p)?);
        h.update([0]);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn expr_seq<R: Real>(clip: &corpus::Clip) -> Result<ExpressionSequence<R>> {
    ExpressionSequence::new(clip.expr.mapv(R::from_f32), 25.0)
}

fn audio_seq<R: Real>(clip: &corpus::Clip) -> Result<AudioFeatureSequence<R>> {
    AudioFeatureSequence::new(clip.audio.mapv(R::from_f32))
}

fn first_frame<R: Real>(clip: &corpus::Clip) -> Result<ExpressionSequence<R>> {
    let row = clip.expr.row(0).mapv(R::from_f32).insert_axis(ndarray::Axis(0));
    ExpressionSequence::new(row, 25.0)
}

/// Mean style code per label over the train split: the fixed "style
/// reference" bank used when a target style is named by label.
pub fn style_exemplars<R: Real>(
    ds: &Dataset,
    style: &StyleModel<R>,
) -> Result<Vec<StyleCode<R>>> {
    let train = ds.split(Split::Train)?;
    let mut sums: Vec<Array1<R>> = vec![Array1::zeros(style.net.d_s); ds.config.m_styles];
    let mut counts = vec![0usize; ds.config.m_styles];
    for &i in &train {
        let code = style.extract_style(&expr_seq(&ds.clips[i])?)?;
        sums[ds.clips[i].style] += code.vector();
        counts[ds.clips[i].style] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(label, (sum, cnt))| {
            if cnt == 0 {
                return Err(Error::invalid(format!("style {label} has no train clips")));
            }
            StyleCode::new(sum.mapv(|v| v / crate::real::rr::<R>(cnt as f64)))
        })
        .collect()
}

/// Everything `evaluate` can consume. Metrics whose model is absent stay at
/// their default in the report.
pub struct EvalModels<'a, R: Real> {
    pub style: &'a StyleModel<R>,
    pub motion: Option<&'a MotionModel<R>>,
    pub pose: Option<&'a PoseModel<R>>,
    pub transfer: Option<&'a TransferModel<R>>,
}

/// Restyle every clip toward the label after its own, then back. Returns
/// (mean MSE fraction of clip variance, mean lip-difference drift of the
/// one-way restyled clip against the source).
pub fn transfer_round_trip<R: Real>(
    ds: &Dataset,
    split: Split,
    model: &TransferModel<R>,
    style: &StyleModel<R>,
    basis: &BlendshapeBasis,
) -> Result<(f64, f64)> {
    let idx = ds.split(split)?;
    let exemplars = style_exemplars(ds, style)?;
    let lip_map = basis.lip_difference_map();
    let mut mse_frac = 0.0;
    let mut lip_err = 0.0;
    for &i in &idx {
        let clip = &ds.clips[i];
        let source = expr_seq::<R>(clip)?;
        let own = style.extract_style(&source)?;
        let target = &exemplars[(clip.style + 1) % ds.config.m_styles];
        let there = model.transfer_style(&source, target)?;
        let back = model.transfer_style(&there, &own)?;

        let x = source.frames().mapv(|v| v.as_f64());
        let b = back.frames().mapv(|v| v.as_f64());
        let mse = (&x - &b).mapv(|v| v * v).mean().unwrap_or(0.0);
        let mean = x.mean().unwrap_or(0.0);
        let var = x.mapv(|v| (v - mean) * (v - mean)).mean().unwrap_or(1.0).max(1e-12);
        mse_frac += mse / var;

        // lip difference must survive the one-way restyle
        let y = there.frames().mapv(|v| v.as_f64());
        let drift = (&x - &y).dot(&lip_map.t()); // T x 3
        lip_err += drift
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / x.nrows() as f64;
    }
    let n = idx.len().max(1) as f64;
    Ok((mse_frac / n, lip_err / n))
}

/// Full evaluation pass over one split. With a motion model, generated clips
/// are synthesized from each clip's audio, first frame, and own style code;
/// without one, the split's real clips stand in (landmark distances are then
/// zero and style accuracy measures the extractor itself).
pub fn evaluate<R: Real>(
    ds: &Dataset,
    split: Split,
    basis: &BlendshapeBasis,
    models: &EvalModels<'_, R>,
    seed: u64,
) -> Result<(EvalReport, PerClipBreakdown)> {
    let idx = ds.split(split)?;
    if idx.is_empty() {
        return Err(Error::invalid(format!("{split:?} split is empty")));
    }
    let mut generated = Vec::with_capacity(idx.len());
    let mut reference = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for &i in &idx {
        let clip = &ds.clips[i];
        let re = expr_seq::<R>(clip)?;
        let gen = match models.motion {
            Some(m) => {
                let code = models.style.extract_style(&re)?;
                m.synthesize(&audio_seq(clip)?, &first_frame(clip)?, &code)?
            }
            None => re.clone(),
        };
        generated.push(gen);
        reference.push(re);
        labels.push(clip.style);
    }
    let (mut report, per) =
        metrics::eval_metrics(&generated, &reference, &labels, basis, models.style)?;

    if let Some(t) = models.transfer {
        let (mse_frac, _) = transfer_round_trip(ds, split, t, models.style, basis)?;
        report.cycle_error = mse_frac;
    }
    if let Some(p) = models.pose {
        let clip = &ds.clips[idx[0]];
        let code = models.style.extract_style(&expr_seq(clip)?)?;
        let audio = audio_seq::<R>(clip)?;
        let mut seqs = Vec::new();
        let mut frames: Vec<Array2<R>> = Vec::new();
        for k in 0..POSE_DIVERSITY_SEEDS {
            let temp = Sampling::Temperature(p.config.temperature);
            seqs.push(p.sample_indices(&audio, &code, temp, seed + k)?);
            frames.push(p.sample(&audio, &code, temp, seed + k)?.frames().to_owned());
        }
        report.pose_diversity = metrics::distinct_sequences(&seqs);
        let stacked = ndarray::concatenate(
            ndarray::Axis(0),
            &frames.iter().map(|f| f.view()).collect::<Vec<_>>(),
        )
        .map_err(|e| Error::shape(format!("stack pose samples: {e}")))?;
        report.pose_range = metrics::pose_range(&stacked);
    }
    Ok((report, per))
}

fn loss_curve(run: &RunDir, name: &str, series: Vec<(String, Vec<f64>)>) -> Result<()> {
    if series.iter().all(|(_, v)| v.is_empty()) {
        return Ok(());
    }
    plot::write_svg(&run.file(name), &plot::line_chart("training loss", &series)?)
}

pub fn load_basis(data: &Path) -> Result<BlendshapeBasis> {
    BlendshapeBasis::load(&data.join("basis"))
}

/// `gen-data`: corpus + blendshape basis, byte-deterministic in the config.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ccfg = CorpusConfig::from_run(cfg);
    let ds = corpus::generate(&ccfg)?;
    ds.save(out)?;
    BlendshapeBasis::synthetic(cfg.seed).save(&out.join("basis"))?;
    cfg.save(&out.join("config.resolved.toml"))?;
    Ok(())
}

pub fn cmd_train_style<R: Real>(data: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = Dataset::load(data)?;
    let run = RunDir::create(out, cfg)?;
    let (model, report) = train_style_extractor::<R>(&ds, cfg)?;
    model.save(&run.file("checkpoint"))?;
    run.write_jsonl("steps.jsonl", &report.steps)?;
    run.write_jsonl("epochs.jsonl", &report.epochs)?;
    loss_curve(
        &run,
        "loss.svg",
        vec![
            ("total".into(), report.steps.iter().map(|s| s.total).collect()),
            ("recon".into(), report.steps.iter().map(|s| s.recon).collect()),
            ("triplet".into(), report.steps.iter().map(|s| s.triplet).collect()),
            ("ce".into(), report.steps.iter().map(|s| s.ce).collect()),
        ],
    )?;
    let val_acc = classification_accuracy(&model, &ds, Split::Val)?;
    run.write_json(
        "final.json",
        &serde_json::json!({
            "final_total": report.steps.last().map(|s| s.total),
            "val_accuracy": val_acc,
            "codebook_usage": report.epochs.last().map(|e| e.codebook_usage),
        }),
    )?;
    run.record_hash("dataset", data)?;
    run.record_hash("checkpoint", &run.file("checkpoint"))?;
    Ok(())
}

pub fn cmd_train_motion<R: Real>(
    data: &Path,
    style_ckpt: &Path,
    cfg: &RunConfig,
    out: &Path,
) -> Result<()> {
    let ds = Dataset::load(data)?;
    let style = StyleModel::<R>::load(style_ckpt)?;
    let run = RunDir::create(out, cfg)?;
    let (model, report) = train_motion_stylizer(&ds, &style, cfg)?;
    model.save(&run.file("checkpoint"))?;
    run.write_jsonl("steps.jsonl", &report.steps)?;
    loss_curve(
        &run,
        "loss.svg",
        vec![
            ("total".into(), report.steps.iter().map(|s| s.total).collect()),
            ("rec".into(), report.steps.iter().map(|s| s.rec).collect()),
            ("disc".into(), report.steps.iter().map(|s| s.disc).collect()),
        ],
    )?;
    run.write_json(
        "final.json",
        &serde_json::json!({ "final_total": report.steps.last().map(|s| s.total) }),
    )?;
    run.record_hash("dataset", data)?;
    run.record_hash("style_checkpoint", style_ckpt)?;
    run.record_hash("checkpoint", &run.file("checkpoint"))?;
    Ok(())
}

pub fn cmd_train_pose<R: Real>(
    data: &Path,
    style_ckpt: &Path,
    cfg: &RunConfig,
    out: &Path,
) -> Result<()> {
    let ds = Dataset::load(data)?;
    let style = StyleModel::<R>::load(style_ckpt)?;
    let run = RunDir::create(out, cfg)?;
    let style_of_clip = |i: usize| style.extract_style(&expr_seq(&ds.clips[i])?);
    let (model, report) = train_pose_generator(&ds, &style_of_clip, cfg)?;
    model.save(&run.file("checkpoint"))?;
    run.write_jsonl("steps.jsonl", &report.steps)?;
    run.write_jsonl("epochs.jsonl", &report.epochs)?;
    let stage_totals = |stage: &str| -> Vec<f64> {
        report.steps.iter().filter(|s| s.stage == stage).map(|s| s.total).collect()
    };
    loss_curve(
        &run,
        "loss.svg",
        vec![
            ("codec".into(), stage_totals("codec")),
            ("predictor".into(), stage_totals("predictor")),
        ],
    )?;
    run.write_json(
        "final.json",
        &serde_json::json!({
            "final_codec": stage_totals("codec").last(),
            "final_ce": stage_totals("predictor").last(),
        }),
    )?;
    run.record_hash("dataset", data)?;
    run.record_hash("style_checkpoint", style_ckpt)?;
    run.record_hash("checkpoint", &run.file("checkpoint"))?;
    Ok(())
}

pub fn cmd_train_transfer<R: Real>(
    data: &Path,
    style_ckpt: &Path,
    cfg: &RunConfig,
    out: &Path,
) -> Result<()> {
    let ds = Dataset::load(data)?;
    let style = StyleModel::<R>::load(style_ckpt)?;
    let basis = load_basis(data)?;
    let run = RunDir::create(out, cfg)?;
    let (model, report) = train_video_transfer(&ds, &style, &basis, cfg)?;
    model.save(&run.file("checkpoint"))?;
    run.write_jsonl("steps.jsonl", &report.steps)?;
    loss_curve(
        &run,
        "loss.svg",
        vec![
            ("total".into(), report.steps.iter().map(|s| s.total).collect()),
            ("mouth".into(), report.steps.iter().map(|s| s.mouth).collect()),
            ("cycle".into(), report.steps.iter().map(|s| s.cycle).collect()),
        ],
    )?;
    run.write_json(
        "final.json",
        &serde_json::json!({ "final_total": report.steps.last().map(|s| s.total) }),
    )?;
    run.record_hash("dataset", data)?;
    run.record_hash("style_checkpoint", style_ckpt)?;
    run.record_hash("checkpoint", &run.file("checkpoint"))?;
    Ok(())
}

fn clip_container<R: Real>(
    expr: &ExpressionSequence<R>,
    pose: Option<&crate::types::PoseSequence<R>>,
    kind: &str,
) -> Result<crate::container::ArrayContainer> {
    use crate::container::{ArrayContainer, NamedArray};
    let mut c = ArrayContainer::new();
    c.push(NamedArray::from_array2_f32("expr", &expr.frames().mapv(|v| v.as_f32())))?;
    if let Some(p) = pose {
        c.push(NamedArray::from_array2_f32("pose", &p.frames().mapv(|v| v.as_f32())))?;
    }
    c.set_meta("kind", kind);
    Ok(c)
}

/// `infer`: synthesize stylized motion (and optionally pose) for one clip's
/// audio. `target_style` picks the train-split exemplar code; `None` uses the
/// clip's own extracted code.
#[allow(clippy::too_many_arguments)]
pub fn cmd_infer<R: Real>(
    data: &Path,
    style_ckpt: &Path,
    motion_ckpt: &Path,
    pose_ckpt: Option<&Path>,
    clip: usize,
    target_style: Option<usize>,
    cfg: &RunConfig,
    out: &Path,
) -> Result<()> {
    let ds = Dataset::load(data)?;
    let style = StyleModel::<R>::load(style_ckpt)?;
    let motion = MotionModel::<R>::load(motion_ckpt)?;
    let basis = load_basis(data)?;
    if clip >= ds.clips.len() {
        return Err(Error::invalid(format!(
            "clip {clip} out of range ({} clips)",
            ds.clips.len()
        )));
    }
    let run = RunDir::create(out, cfg)?;
    let item = &ds.clips[clip];
    let reference = expr_seq::<R>(item)?;
    let code = match target_style {
        Some(label) => {
            if label >= ds.config.m_styles {
                return Err(Error::invalid(format!("style label {label} out of range")));
            }
            style_exemplars(&ds, &style)?.swap_remove(label)
        }
        None => style.extract_style(&reference)?,
    };
    let generated = motion.synthesize(&audio_seq(item)?, &first_frame(item)?, &code)?;
    let pose = match pose_ckpt {
        Some(p) => {
            let pm = PoseModel::<R>::load(p)?;
            Some(pm.sample(
                &audio_seq(item)?,
                &code,
                Sampling::Temperature(cfg.temperature),
                cfg.seed,
            )?)
        }
        None => None,
    };
    clip_container(&generated, pose.as_ref(), "inference_output")?
        .save(&run.file("generated"))?;
    run.write_json(
        "report.json",
        &serde_json::json!({
            "clip": clip,
            "source_style": item.style,
            "target_style": target_style,
            "predicted_style": style.predict(&generated)?,
            "mlmd_vs_reference": metrics::mlmd_proxy(&basis, &generated, &reference)?,
            "flmd_vs_reference": metrics::flmd_proxy(&basis, &generated, &reference)?,
        }),
    )?;
    run.record_hash("generated", &run.file("generated"))?;
    Ok(())
}

/// `transfer`: restyle one clip toward a labeled exemplar and report the
/// round trip back to its own style.
#[allow(clippy::too_many_arguments)]
pub fn cmd_transfer<R: Real>(
    data: &Path,
    style_ckpt: &Path,
    transfer_ckpt: &Path,
    clip: usize,
    target_style: usize,
    cfg: &RunConfig,
    out: &Path,
) -> Result<()> {
    let ds = Dataset::load(data)?;
    let style = StyleModel::<R>::load(style_ckpt)?;
    let model = TransferModel::<R>::load(transfer_ckpt)?;
    let basis = load_basis(data)?;
    if clip >= ds.clips.len() || target_style >= ds.config.m_styles {
        return Err(Error::invalid("clip or style label out of range"));
    }
    let run = RunDir::create(out, cfg)?;
    let item = &ds.clips[clip];
    let source = expr_seq::<R>(item)?;
    let own = style.extract_style(&source)?;
    let target = style_exemplars(&ds, &style)?.swap_remove(target_style);
    let restyled = model.transfer_style(&source, &target)?;
    let back = model.transfer_style(&restyled, &own)?;
    clip_container(&restyled, None, "transfer_output")?.save(&run.file("restyled"))?;
    let x = source.frames().mapv(|v| v.as_f64());
    let b = back.frames().mapv(|v| v.as_f64());
    run.write_json(
        "report.json",
        &serde_json::json!({
            "clip": clip,
            "source_style": item.style,
            "target_style": target_style,
            "predicted_style": style.predict(&restyled)?,
            "round_trip_mse": (&x - &b).mapv(|v| v * v).mean(),
            "mlmd_restyled_vs_source": metrics::mlmd_proxy(&basis, &restyled, &source)?,
        }),
    )?;
    run.record_hash("restyled", &run.file("restyled"))?;
    Ok(())
}

/// `eval`: full metric pass over one split with whatever checkpoints are
/// given. Writes the report as JSON, the per-clip breakdown as JSONL, a
/// plain-text table, and a bar chart.
#[allow(clippy::too_many_arguments)]
pub fn cmd_eval<R: Real>(
    data: &Path,
    style_ckpt: &Path,
    motion_ckpt: Option<&Path>,
    pose_ckpt: Option<&Path>,
    transfer_ckpt: Option<&Path>,
    split: Split,
    cfg: &RunConfig,
    out: &Path,
) -> Result<EvalReport> {
    let ds = Dataset::load(data)?;
    let style = StyleModel::<R>::load(style_ckpt)?;
    let motion = motion_ckpt.map(MotionModel::<R>::load).transpose()?;
    let pose = pose_ckpt.map(PoseModel::<R>::load).transpose()?;
    let transfer = transfer_ckpt.map(TransferModel::<R>::load).transpose()?;
    let basis = load_basis(data)?;
    let run = RunDir::create(out, cfg)?;
    let models = EvalModels {
        style: &style,
        motion: motion.as_ref(),
        pose: pose.as_ref(),
        transfer: transfer.as_ref(),
    };
    let (report, per) = evaluate(&ds, split, &basis, &models, cfg.seed)?;
    run.write_json("report.json", &report)?;
    let per_rows: Vec<serde_json::Value> = (0..per.mlmd.len())
        .map(|i| {
            serde_json::json!({
                "clip": i,
                "mlmd": per.mlmd[i],
                "flmd": per.flmd[i],
                "style_hit": per.style_hit[i],
            })
        })
        .collect();
    run.write_jsonl("per_clip.jsonl", &per_rows)?;
    std::fs::write(run.file("table.txt"), report_table(&report))?;
    let bars = vec![
        ("mlmd".to_string(), report.mlmd_proxy),
        ("flmd".to_string(), report.flmd_proxy),
        ("style_acc".to_string(), report.style_accuracy),
        ("usage".to_string(), report.codebook_usage),
        ("cycle".to_string(), report.cycle_error),
    ];
    plot::write_svg(&run.file("metrics.svg"), &plot::bar_chart("evaluation", &bars)?)?;
    run.record_hash("dataset", data)?;
    Ok(report)
}

pub fn report_table(r: &EvalReport) -> String {
    format!(
        "metric            value\n\
         mlmd_proxy        {:.6}\n\
         flmd_proxy        {:.6}\n\
         style_accuracy    {:.4}\n\
         cycle_error       {:.6}\n\
         codebook_usage    {:.4}\n\
         pose_diversity    {}\n\
         pose_range        {:.4}\n",
        r.mlmd_proxy,
        r.flmd_proxy,
        r.style_accuracy,
        r.cycle_error,
        r.codebook_usage,
        r.pose_diversity,
        r.pose_range
    )
}

/// One ablation arm: a named tweak on the base config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Arm {
    Full,
    NoCodebook,
    NoHyper,
    NoTriplet,
    NoStyle1,
    NoStyle2,
    CodebookSize(usize),
}

impl Arm {
    pub fn name(&self) -> String {
        match self {
            Arm::Full => "full".into(),
            Arm::NoCodebook => "no_codebook".into(),
            Arm::NoHyper => "no_hyper".into(),
            Arm::NoTriplet => "no_triplet".into(),
            Arm::NoStyle1 => "no_style1".into(),
            Arm::NoStyle2 => "no_style2".into(),
            Arm::CodebookSize(n) => format!("n{n}"),
        }
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Arm::Full => {}
            Arm::NoCodebook => cfg.use_codebook = false,
            Arm::NoHyper => cfg.use_hyper = false,
            Arm::NoTriplet => cfg.alpha_trip = 0.0,
            Arm::NoStyle1 => cfg.alpha_style1 = 0.0,
            Arm::NoStyle2 => cfg.alpha_style2 = 0.0,
            Arm::CodebookSize(n) => cfg.n = *n,
        }
    }

    /// The component/loss arms compared against the full model.
    pub fn default_set() -> Vec<Arm> {
        vec![
            Arm::Full,
            Arm::NoCodebook,
            Arm::NoHyper,
            Arm::NoTriplet,
            Arm::NoStyle1,
            Arm::NoStyle2,
        ]
    }
}

#[derive(Serialize, Clone, Debug)]
pub struct ArmRun {
    pub arm: String,
    pub seed: u64,
    pub flmd: f64,
    pub mlmd: f64,
    pub style_accuracy: f64,
}

#[derive(Serialize, Clone, Debug)]
pub struct ArmSummary {
    pub arm: String,
    pub median_flmd: f64,
    pub median_style_accuracy: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Train style + motion per arm and seed on one shared dataset, score every
/// arm's generated motion with one fixed judge, and summarize medians. The
/// judge is trained once from the unablated base config and reused across
/// arms, so scores are comparable.
pub fn run_ablation<R: Real>(
    ds: &Dataset,
    basis: &BlendshapeBasis,
    base: &RunConfig,
    arms: &[Arm],
    seeds: &[u64],
) -> Result<(Vec<ArmRun>, Vec<ArmSummary>)> {
    if arms.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one arm and one seed"));
    }
    let (judge, _) = train_style_extractor::<R>(ds, base)?;
    let judge = judge.frozen_clone();

    let mut runs = Vec::new();
    for arm in arms {
        for &seed in seeds {
            let mut cfg = base.clone();
            arm.apply(&mut cfg);
            cfg.seed = seed;
            cfg.validate()?;
            let (style, _) = train_style_extractor::<R>(ds, &cfg)?;
            let (motion, _) = train_motion_stylizer(ds, &style, &cfg)?;

            // generation protocol mirrors `evaluate`: own audio, first
            // frame, own extracted code; the fixed judge scores the result
            let idx = ds.split(Split::Val)?;
            let mut mlmd = 0.0;
            let mut flmd = 0.0;
            let mut hits = 0usize;
            for &i in &idx {
                let clip = &ds.clips[i];
                let re = expr_seq::<R>(clip)?;
                let code = style.extract_style(&re)?;
                let gen = motion.synthesize(&audio_seq(clip)?, &first_frame(clip)?, &code)?;
                mlmd += metrics::mlmd_proxy(basis, &gen, &re)?;
                flmd += metrics::flmd_proxy(basis, &gen, &re)?;
                if judge.predict(&gen)? == clip.style {
                    hits += 1;
                }
            }
            let n = idx.len() as f64;
            runs.push(ArmRun {
                arm: arm.name(),
                seed,
                flmd: flmd / n,
                mlmd: mlmd / n,
                style_accuracy: hits as f64 / n,
            });
        }
    }
    let summaries = arms
        .iter()
        .map(|arm| {
            let name = arm.name();
            let of = |f: &dyn Fn(&ArmRun) -> f64| {
                let vals: Vec<f64> =
                    runs.iter().filter(|r| r.arm == name).map(|r| f(r)).collect();
                median(&vals)
            };
            ArmSummary {
                arm: name.clone(),
                median_flmd: of(&|r| r.flmd),
                median_style_accuracy: of(&|r| r.style_accuracy),
            }
        })
        .collect();
    Ok((runs, summaries))
}

/// `ablate`: run the arms, write per-run JSONL, the median table, and a bar
/// chart of style accuracy per arm.
pub fn cmd_ablate<R: Real>(
    data: &Path,
    cfg: &RunConfig,
    arms: &[Arm],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<ArmSummary>> {
    let ds = Dataset::load(data)?;
    let basis = load_basis(data)?;
    let run = RunDir::create(out, cfg)?;
    let (runs, summaries) = run_ablation::<R>(&ds, &basis, cfg, arms, seeds)?;
    run.write_jsonl("runs.jsonl", &runs)?;
    run.write_jsonl("summary.jsonl", &summaries)?;
    let mut table = String::from("arm           median_flmd   median_style_acc\n");
    for s in &summaries {
        table.push_str(&format!(
            "{:<13} {:<13.6} {:.4}\n",
            s.arm, s.median_flmd, s.median_style_accuracy
        ));
    }
    std::fs::write(run.file("table.txt"), &table)?;
    let bars: Vec<(String, f64)> =
        summaries.iter().map(|s| (s.arm.clone(), s.median_style_accuracy)).collect();
    plot::write_svg(
        &run.file("style_accuracy.svg"),
        &plot::bar_chart("median style accuracy by arm", &bars)?,
    )?;
    run.record_hash("dataset", data)?;
    Ok(summaries)
}
