//! Continual few-shot adaptation of a real-vs-synthetic patch detector.
//!
//! A small dense detector is trained from scratch on procedurally generated
//! "real" and "synthetic" patch styles with cross-entropy, then adapted to a
//! sequence of unseen synthetic styles from a handful of shots using
//! cross-entropy plus a supervised contrastive term, with experience replay
//! of earlier styles. The [`harness`] module runs the full protocol and its
//! ablations and writes adaptation matrices.

pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod optim;
pub mod replay;
pub mod styledata;
