//! Flat run configuration: one TOML file of typed key-value pairs covering
//! every module, with CLI `--set key=value` overrides. The resolved config is
//! written back into each run directory so runs are reproducible from disk.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => write!(f, "f32"),
            Precision::F64 => write!(f, "f64"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // run
    pub seed: u64,
    pub precision: Precision,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub grad_clip: f64,

    // corpus
    pub m_styles: usize,
    pub speakers: usize,
    pub clips_per_speaker_style: usize,
    pub t_frames: usize,
    pub noise_std: f64,
    pub d_a: usize,

    // style representation
    pub n: usize,
    pub d_s: usize,
    pub omega: usize,
    pub t_prime: usize,
    pub style_layers: usize,
    pub style_heads: usize,
    pub gamma_triplet: f64,
    pub alpha_trip: f64,
    pub alpha_c: f64,
    pub use_codebook: bool,

    // motion synthesis
    pub d_z: usize,
    pub rank: usize,
    pub hyper_scale: f64,
    pub use_hyper: bool,
    pub gamma_dtw: f64,
    pub alpha_style1: f64,
    pub alpha_style2: f64,
    pub disc_hidden: usize,

    // head pose
    pub n_p: usize,
    pub d_p: usize,
    pub omega_p: usize,
    pub pose_layers: usize,
    pub pose_heads: usize,
    pub temperature: f64,

    // video transfer
    pub alpha_cyc: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            epochs: 100,
            batch_size: 8,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            grad_clip: 5.0,

            m_styles: 6,
            speakers: 10,
            clips_per_speaker_style: 4,
            t_frames: 64,
            noise_std: 0.1,
            d_a: 28,

            n: 500,
            d_s: 256,
            omega: 8,
            t_prime: 32,
            style_layers: 2,
            style_heads: 4,
            gamma_triplet: 0.2,
            alpha_trip: 1.0,
            alpha_c: 0.1,
            use_codebook: true,

            d_z: 256,
            rank: 4,
            hyper_scale: 1.0,
            use_hyper: true,
            gamma_dtw: 0.1,
            alpha_style1: 0.1,
            alpha_style2: 0.05,
            disc_hidden: 64,

            n_p: 128,
            d_p: 128,
            omega_p: 8,
            pose_layers: 2,
            pose_heads: 4,
            temperature: 1.0,

            alpha_cyc: 1.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m_styles < 2 {
            return bad(format!("m_styles must be >= 2, got {}", self.m_styles));
        }
        if self.omega == 0 || self.omega_p == 0 {
            return bad("window sizes must be positive".into());
        }
        if self.t_prime % self.omega != 0 {
            return bad(format!(
                "t_prime {} not divisible by omega {}",
                self.t_prime, self.omega
            ));
        }
        if self.t_frames % self.omega != 0 || self.t_frames % self.omega_p != 0 {
            return bad(format!(
                "t_frames {} must divide by omega {} and omega_p {}",
                self.t_frames, self.omega, self.omega_p
            ));
        }
        if self.t_frames < self.t_prime {
            return bad(format!(
                "t_frames {} shorter than style window t_prime {}",
                self.t_frames, self.t_prime
            ));
        }
        if self.n < 2 || self.n_p < 2 {
            return bad("codebooks need at least two entries".into());
        }
        if self.d_s % self.style_heads != 0 {
            return bad(format!(
                "d_s {} not divisible by style_heads {}",
                self.d_s, self.style_heads
            ));
        }
        if self.d_p % self.pose_heads != 0 {
            return bad(format!(
                "d_p {} not divisible by pose_heads {}",
                self.d_p, self.pose_heads
            ));
        }
        if self.gamma_triplet <= 0.0 {
            return bad("gamma_triplet must be positive".into());
        }
        if self.gamma_dtw <= 0.0 {
            return bad("gamma_dtw must be positive".into());
        }
        if self.hyper_scale <= 0.0 {
            return bad("hyper_scale must be positive".into());
        }
        if self.temperature <= 0.0 {
            return bad("temperature must be positive (use greedy mode explicitly)".into());
        }
        if self.lr <= 0.0 || self.batch_size == 0 {
            return bad("lr and batch_size must be positive".into());
        }
        for (name, v) in [
            ("alpha_trip", self.alpha_trip),
            ("alpha_c", self.alpha_c),
            ("alpha_style1", self.alpha_style1),
            ("alpha_style2", self.alpha_style2),
            ("alpha_cyc", self.alpha_cyc),
            ("noise_std", self.noise_std),
        ] {
            if v < 0.0 || !v.is_finite() {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.rank == 0 {
            return bad("rank must be positive".into());
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| {
                Error::Config(format!("cannot parse {v:?} for key {key}"))
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => {
                        return Err(Error::Config(format!(
                            "precision must be f32 or f64, got {other}"
                        )))
                    }
                }
            }
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "m_styles" => self.m_styles = parse(key, value)?,
            "speakers" => self.speakers = parse(key, value)?,
            "clips_per_speaker_style" => self.clips_per_speaker_style = parse(key, value)?,
            "t_frames" => self.t_frames = parse(key, value)?,
            "noise_std" => self.noise_std = parse(key, value)?,
            "d_a" => self.d_a = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "d_s" => self.d_s = parse(key, value)?,
            "omega" => self.omega = parse(key, value)?,
            "t_prime" => self.t_prime = parse(key, value)?,
            "style_layers" => self.style_layers = parse(key, value)?,
            "style_heads" => self.style_heads = parse(key, value)?,
            "gamma_triplet" => self.gamma_triplet = parse(key, value)?,
            "alpha_trip" => self.alpha_trip = parse(key, value)?,
            "alpha_c" => self.alpha_c = parse(key, value)?,
            "use_codebook" => self.use_codebook = parse(key, value)?,
            "d_z" => self.d_z = parse(key, value)?,
            "rank" => self.rank = parse(key, value)?,
            "hyper_scale" => self.hyper_scale = parse(key, value)?,
            "use_hyper" => self.use_hyper = parse(key, value)?,
            "gamma_dtw" => self.gamma_dtw = parse(key, value)?,
            "alpha_style1" => self.alpha_style1 = parse(key, value)?,
            "alpha_style2" => self.alpha_style2 = parse(key, value)?,
            "disc_hidden" => self.disc_hidden = parse(key, value)?,
            "n_p" => self.n_p = parse(key, value)?,
            "d_p" => self.d_p = parse(key, value)?,
            "omega_p" => self.omega_p = parse(key, value)?,
            "pose_layers" => self.pose_layers = parse(key, value)?,
            "pose_heads" => self.pose_heads = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "alpha_cyc" => self.alpha_cyc = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Number of style windows per clip under the sliding policy.
    pub fn style_windows_per_clip(&self) -> usize {
        if self.t_frames == self.t_prime {
            1
        } else {
            (self.t_frames - self.t_prime) / (self.t_prime / 2) + 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_contract() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n, 500);
        assert_eq!(c.d_s, 256);
        assert_eq!(c.omega, 8);
        assert_eq!(c.t_prime, 32);
        assert_eq!(c.lr, 2e-4);
        assert_eq!(c.m_styles, 6);
        assert_eq!(c.noise_std, 0.1);
    }

    #[test]
    fn toml_roundtrip_preserves_everything() {
        let mut c = RunConfig::default();
        c.seed = 99;
        c.d_z = 32;
        c.precision = Precision::F64;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("config.toml");
        c.save(&p).unwrap();
        let loaded = RunConfig::load(&p).unwrap();
        assert_eq!(c, loaded);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 7\nd_s = 64\nstyle_heads = 4\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.d_s, 64);
        assert_eq!(c.n, 500, "untouched fields keep defaults");
    }

    #[test]
    fn unknown_key_rejected_in_file_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "not_a_key = 1\n").unwrap();
        assert!(RunConfig::load(&p).is_err());
        let mut c = RunConfig::default();
        assert!(c.set("not_a_key", "1").is_err());
    }

    #[test]
    fn overrides_parse_typed_values() {
        let mut c = RunConfig::default();
        c.set("epochs", "5").unwrap();
        c.set("lr", "0.001").unwrap();
        c.set("use_hyper", "false").unwrap();
        c.set("precision", "f64").unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.lr, 0.001);
        assert!(!c.use_hyper);
        assert_eq!(c.precision, Precision::F64);
        assert!(c.set("lr", "fast").is_err());
    }

    #[test]
    fn validation_catches_divisibility_and_ranges() {
        let mut c = RunConfig::default();
        c.t_prime = 33;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.m_styles = 1;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.gamma_dtw = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.t_frames = 16; // shorter than t_prime
        assert!(c.validate().is_err());
    }

    #[test]
    fn sliding_window_count_matches_defaults() {
        let c = RunConfig::default(); // T=64, T'=32 -> offsets 0,16,32
        assert_eq!(c.style_windows_per_clip(), 3);
        let mut c2 = c.clone();
        c2.t_frames = 32;
        assert_eq!(c2.style_windows_per_clip(), 1);
    }
}
