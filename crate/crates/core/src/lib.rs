//! Multiple stable integrals of extremal type: LePage series, integrability
//! checks, tail asymptotics and regenerative models.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod expr;
pub mod harness;
pub mod integrability;
pub mod integrals;
pub mod integrand;
pub mod lepage;
pub mod measure;
pub mod quad;
pub mod regenerative;
pub mod suite;
pub mod tail;
