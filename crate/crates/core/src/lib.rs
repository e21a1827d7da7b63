//! Range-constrained conditional GAN for inverse design.
//!
//! A generator conditioned on per-label `[lower, upper]` bounds is trained
//! against an unconditional discriminator, with a frozen label estimator
//! supplying a range loss (push violators into the window) and a uniformity
//! loss (spread satisfying samples across the window). Designs live in a
//! six-parameter planform space whose labels (aspect ratio, area ratio) have
//! a closed-form evaluator, so exact satisfaction can be measured and used
//! for label-aware self-augmentation.
//!
//! Module map:
//!
//! - [`netcore`]: dense layers, (conditional) batch norm, Adam, gradient checks, checkpoints
//! - [`models`]: generator, discriminator and residual estimator
//! - [`losses`]: GAN, range and uniformity objectives
//! - [`sampling`]: condition sampling, label normalization, uniform-label batches
//! - [`domain`]: planform geometry, dataset generation and I/O, SVG rendering
//! - [`trainer`]: estimator pretraining, GAN training, self-augmentation
//! - [`metrics`]: satisfaction, quadratic entropy, condition sweeps

pub mod domain;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod netcore;
pub mod sampling;
pub mod trainer;

pub use domain::{exact_evaluate, Dataset, DesignParams, LabelVector, Provenance};
pub use error::{Error, Result};
pub use losses::{LossWeights, RangeCondition};
pub use metrics::{quadratic_entropy, satisfaction, SweepReport};
pub use models::{Discriminator, Estimator, Generator, LabelSet};
pub use netcore::{AdamConfig, AdamState, Matrix, Mode};
pub use sampling::LabelNormalizer;
pub use trainer::TrainConfig;
