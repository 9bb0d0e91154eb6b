// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arbitration;
pub mod catalog;
pub mod controller;
pub mod error;
pub mod ids;
pub mod knn;
pub mod monitor;
pub mod reachability;
pub mod reference;
pub mod scenario;
pub mod sim;
pub mod space;
pub mod training;
pub mod uncertainty;
pub mod harness;

pub use error::{Error, Result};
pub use ids::{ControllerId, FailureId};
