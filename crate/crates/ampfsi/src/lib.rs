//! Partitioned solver for 2D incompressible flow coupled to an Euler-Bernoulli
//! beam, with added-mass partitioned (AMP) interface conditions, a traditional
//! partitioned (TP/TP-SI) scheme, a Fourier-mode stability analyzer for the
//! flat-interface model problem, and the benchmark problems used to verify the
//! implementation.

pub mod band;
pub mod beam;
pub mod bench;
pub mod config;
pub mod coupling;
pub mod fluid;
pub mod geometry;
pub mod modal;
pub mod sim;
