//! Coefficient-space stylized talking-head motion synthesis.
//!
//! The pipeline works entirely on 3DMM-style coefficient sequences: per-frame
//! expression vectors (64 dims) and head-pose vectors (6 dims), driven by
//! per-frame acoustic feature vectors. It provides:
//!
//! - a multi-task vector-quantized style extractor that condenses a clip into
//!   a single style code via a learned codebook ([`style`]),
//! - an audio-driven motion synthesizer with a canonical branch plus a
//!   hypernetwork-modulated style branch ([`motion`]),
//! - a discrete head-pose prior with an autoregressive cross-modal index
//!   predictor for sampling diverse head motion ([`pose`]),
//! - video-driven style transfer with cycle and mouth-preservation losses
//!   ([`transfer`]),
//! - a deterministic labeled synthetic corpus so every training claim is
//!   testable on a desk machine ([`corpus`]),
//! - and a CLI harness with metrics, checkpointing and ablation runs
//!   ([`harness`], [`metrics`], [`cli`]).
//!
//! All learnable modules are built on a small reverse-mode autodiff tape
//! ([`graph`]) that is generic over `f32`/`f64`; training runs in `f32`
//! while gradient-check tests run the same code in `f64`.

pub mod blendshape;
pub mod cli;
pub mod config;
pub mod container;
pub mod corpus;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod plot;
pub mod pose;
pub mod real;
pub mod rng;
pub mod softdtw;
pub mod style;
pub mod transfer;
pub mod types;
pub mod vq;

pub use error::{Error, Result};
pub use real::Real;
