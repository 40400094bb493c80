//! Controllable machine unlearning at desk scale.
//!
//! The pipeline removes the influence of a forget set `D_f` from a classifier
//! trained on `D_o = D_f ∪ D_r`, and measures how close the result is to a
//! model retrained from scratch on `D_r` alone.
//!
//! The unlearning method is built from three tunable stages:
//!
//! - [`selection`]: keep only samples whose normed-loss score lies inside a
//!   band around the dataset mean, separately for `D_f` and `D_r`.
//! - [`noise`]: obfuscate the kept forget samples with scaled Gaussian noise.
//! - [`proxy`]: a same-architecture model trained briefly on `D_r` whose
//!   output distribution is distilled into the unlearned model via KL.
//!
//! [`engine`] composes them into the fine-tuning loop and also provides the
//! retrain, fine-tune and gradient-ascent baselines. [`metrics`] implements
//! TA/FA/RA, confidence-based membership inference and the FRM score, and
//! [`harness`] drives trials and sweeps from JSON configs.
//!
//! # Parallelism
//!
//! Batch evaluation (forward passes, scoring, trials and sweep points) runs on
//! rayon when the `parallel` feature is enabled (the default). A single
//! training call is always sequential so parameter trajectories are exactly
//! reproducible. Results never depend on the execution mode; see [`par`].

pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod par;
pub mod proxy;
pub mod rng;
pub mod selection;

pub use data::{ForgetMode, ForgetSplit, LabeledDataset, SyntheticSpec};
pub use engine::{ControlKnobs, UnlearnRun};
pub use error::{Error, Result};
pub use metrics::{MetricsReport, MiaPredictor};
pub use model::{Activation, ArchitectureSpec, ClassifierState, TrainConfig};
pub use noise::NoiseConfig;
pub use par::Execution;
pub use proxy::ProxyConfig;
pub use selection::{SelectionBound, SelectionResult};
