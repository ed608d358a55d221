//! Weakly-supervised and self-supervised contrastive pretraining for
//! binary 2D-slice classification, with the full preprocessing,
//! cross-validation, linear-probe and fine-tuning protocols, verifiable
//! end-to-end on a built-in synthetic cohort generator.

pub mod augment;
pub mod cohort;
pub mod config;
pub mod eval;
pub mod harness;
pub mod losses;
pub mod network;
pub mod num;
pub mod optim;
pub mod probe;
pub mod seeding;
