//! Core of the forge-judge assessment engine.

pub mod analytics;
pub mod builtin_judge;
pub mod diff;
pub mod feedback;
pub mod judge;
pub mod repo;
pub mod sandbox;
pub mod scheduler;

/// Scores in `[0, 1]` as floats.
pub type Score = f64;
/// Scores in `[0, 1]` as exact fractions.
pub type ExactScore = num_rational::Ratio<i64>;
