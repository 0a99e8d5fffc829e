//! Core algorithms for synthesizing tabular network-traffic records with
//! WGAN-GP variants and measuring how the synthetic data changes the
//! behaviour of downstream intrusion detectors.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense `f64` arrays and a reverse-mode tape
//!   that supports the second-order terms of the gradient penalty.
//! * [`layers`]: dense, activation, batch-norm and tabular self-attention
//!   blocks assembled into [`layers::Network`]s.
//! * [`losses`], [`optim`] and [`trainer`]: adversarial objectives, Adam and
//!   the critic / JS-discriminator / generator training loop.
//! * [`data`]: NSL-KDD style ingestion, `[-1, 1]` encoding and training-set
//!   mixing.
//! * [`ids`]: linear SVM, C4.5-style decision tree and a small MLP.
//! * [`metrics`]: confusion metrics, ROC/AUROC, JS divergence, MMD and
//!   nearest-neighbour alignment diagnostics.
//! * [`toy`]: Gaussian rings and uniform noise for convergence checks.
//! * [`gradcheck`]: finite-difference checks of the graph gradients.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod ids;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod tensor;
pub mod toy;
pub mod trainer;

pub use autodiff::{Graph, Var};
pub use data::{Class, DatasetTable, FeatureSchema, MixPlan, Task};
pub use error::{Error, Result};
pub use ids::{IdsModel, ModelKind};
pub use tensor::Tensor;
pub use trainer::{GanBundle, TrainConfig, Trainer, Variant};
