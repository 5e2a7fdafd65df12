//! Signalized-intersection crash-risk modelling: feature extraction from
//! high-resolution detector streams, matched case-control sampling,
//! Bayesian conditional logistic regression and crash-risk scoring.

pub mod domain;
pub mod features;
pub mod io;
pub mod matching;
pub mod rng;
pub mod screening;
pub mod inference;
pub mod risk;
pub mod simgen;
