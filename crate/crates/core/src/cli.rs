//! Command-line surface. Every subcommand resolves its config the same way
//! (defaults < file < `--set key=value` overrides), dispatches on the
//! configured precision, and writes into a run directory.

use crate::config::{Precision, RunConfig};
use crate::corpus::Split;
use crate::error::Result;
use crate::harness;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "stylemotion",
    version,
    about = "Coefficient-space stylized talking-head motion toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML config file; missing keys fall back to defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set epochs=20 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                crate::error::Error::Config(format!("--set expects key=value, got {kv:?}"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the synthetic labeled corpus (plus its blendshape basis)
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the style extractor
    TrainStyle {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the stylized motion synthesizer against a style checkpoint
    TrainMotion {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the discrete head-pose generator
    TrainPose {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the video-driven style transfer network
    TrainTransfer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize motion (and optionally pose) for one clip's audio
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        pose: Option<PathBuf>,
        /// Index into the dataset's clip list
        #[arg(long)]
        clip: usize,
        /// Target style label; defaults to the clip's own extracted style
        #[arg(long)]
        target_style: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-style one clip toward a labeled exemplar
    Transfer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        style: PathBuf,
        /// Transfer-network checkpoint
        #[arg(long = "transfer")]
        transfer_ckpt: PathBuf,
        #[arg(long)]
        clip: usize,
        #[arg(long)]
        target_style: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metric pass over one split with whatever checkpoints are given
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        motion: Option<PathBuf>,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long = "transfer")]
        transfer_ckpt: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train style+motion per arm and seed, score with one fixed judge
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Ablation axis: "components" (default) or "codebook_size"
        #[arg(long, default_value = "components")]
        axis: String,
        /// Comma-separated values for the axis (codebook_size only)
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        /// Comma-separated seeds, one full run per arm and seed
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

macro_rules! dispatch {
    ($cfg:expr, $f:ident ( $($arg:expr),* $(,)? )) => {
        match $cfg.precision {
            Precision::F32 => harness::$f::<f32>($($arg),*),
            Precision::F64 => harness::$f::<f64>($($arg),*),
        }
    };
}

fn arms_for(axis: &str, values: &[usize]) -> Result<Vec<harness::Arm>> {
    match axis {
        "components" => Ok(harness::Arm::default_set()),
        "codebook_size" => {
            if values.is_empty() {
                return Err(crate::error::Error::Config(
                    "codebook_size axis needs --values, e.g. --values 250,500,750".into(),
                ));
            }
            Ok(values.iter().map(|&n| harness::Arm::CodebookSize(n)).collect())
        }
        other => Err(crate::error::Error::Config(format!(
            "unknown ablation axis {other:?} (components|codebook_size)"
        ))),
    }
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { config, out } => {
            let cfg = config.resolve()?;
            harness::cmd_gen_data(&cfg, &out)
        }
        Cmd::TrainStyle { config, data, out } => {
            let cfg = config.resolve()?;
            dispatch!(cfg, cmd_train_style(&data, &cfg, &out))
        }
        Cmd::TrainMotion { config, data, style, out } => {
            let cfg = config.resolve()?;
            dispatch!(cfg, cmd_train_motion(&data, &style, &cfg, &out))
        }
        Cmd::TrainPose { config, data, style, out } => {
            let cfg = config.resolve()?;
            dispatch!(cfg, cmd_train_pose(&data, &style, &cfg, &out))
        }
        Cmd::TrainTransfer { config, data, style, out } => {
            let cfg = config.resolve()?;
            dispatch!(cfg, cmd_train_transfer(&data, &style, &cfg, &out))
        }
        Cmd::Infer { config, data, style, motion, pose, clip, target_style, out } => {
            let cfg = config.resolve()?;
            dispatch!(
                cfg,
                cmd_infer(
                    &data,
                    &style,
                    &motion,
                    pose.as_deref(),
                    clip,
                    target_style,
                    &cfg,
                    &out,
                )
            )
        }
        Cmd::Transfer { config, data, style, transfer_ckpt, clip, target_style, out } => {
            let cfg = config.resolve()?;
            dispatch!(
                cfg,
                cmd_transfer(&data, &style, &transfer_ckpt, clip, target_style, &cfg, &out)
            )
        }
        Cmd::Eval { config, data, style, motion, pose, transfer_ckpt, split, out } => {
            let cfg = config.resolve()?;
            let report = dispatch!(
                cfg,
                cmd_eval(
                    &data,
                    &style,
                    motion.as_deref(),
                    pose.as_deref(),
                    transfer_ckpt.as_deref(),
                    split,
                    &cfg,
                    &out,
                )
            )?;
            print!("{}", harness::report_table(&report));
            Ok(())
        }
        Cmd::Ablate { config, data, axis, values, seeds, out } => {
            let cfg = config.resolve()?;
            let arms = arms_for(&axis, &values)?;
            let summaries = dispatch!(cfg, cmd_ablate(&data, &cfg, &arms, &seeds, &out))?;
            for s in &summaries {
                println!(
                    "{:<13} flmd={:.6} style_acc={:.4}",
                    s.arm, s.median_flmd, s.median_style_accuracy
                );
            }
            Ok(())
        }
    }
}

/// Parse and run. Unknown flags or subcommands print usage and return a
/// nonzero exit code; runtime failures report on stderr and return 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap treats --help/--version as "errors" with exit code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_and_flag_fail_with_usage() {
        assert_ne!(run(["stylemotion", "frobnicate"]), 0);
        assert_ne!(run(["stylemotion", "gen-data", "--nope", "x"]), 0);
        assert_ne!(run(["stylemotion"]), 0, "missing subcommand");
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(["stylemotion", "--help"]), 0);
        assert_eq!(run(["stylemotion", "--version"]), 0);
        assert_eq!(run(["stylemotion", "eval", "--help"]), 0);
    }

    #[test]
    fn bad_set_override_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        let code = run([
            "stylemotion",
            "gen-data",
            "--set",
            "epochs", // no '='
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert_ne!(
            run([
                "stylemotion",
                "gen-data",
                "--set",
                "no_such_key=3",
                "--out",
                out.to_str().unwrap(),
            ]),
            0
        );
    }

    #[test]
    fn gen_data_cli_round_trip_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let args = |out: &str| {
            vec![
                "stylemotion".to_string(),
                "gen-data".into(),
                "--set".into(),
                "m_styles=2".into(),
                "--set".into(),
                "speakers=4".into(),
                "--set".into(),
                "clips_per_speaker_style=2".into(),
                "--set".into(),
                "t_frames=32".into(),
                "--set".into(),
                "t_prime=16".into(),
                "--set".into(),
                "omega=4".into(),
                "--set".into(),
                "omega_p=4".into(),
                "--out".into(),
                dir.path().join(out).to_str().unwrap().to_string(),
            ]
        };
        assert_eq!(run(args("a")), 0);
        assert_eq!(run(args("b")), 0);
        assert_eq!(
            harness::sha256_path(&dir.path().join("a")).unwrap(),
            harness::sha256_path(&dir.path().join("b")).unwrap()
        );
    }

    #[test]
    fn split_parses_all_names() {
        assert_eq!("train".parse::<Split>().unwrap(), Split::Train);
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
        assert!("other".parse::<Split>().is_err());
    }
}
