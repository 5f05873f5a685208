//! Unit and final scores. Generic over the number type so the same
//! arithmetic runs on floats and on exact rationals.

use num_traits::{FromPrimitive, Num};
use thiserror::Error;

/// Exam weight, in tenths.
pub const EXAM_WEIGHT: u8 = 8;
/// Weight of each unit, in tenths.
pub const UNIT_WEIGHT: u8 = 1;
pub const UNITS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("{0} must lie in [0, 1]")]
    OutOfRange(&'static str),
    #[error("expected {UNITS} unit scores, got {0}")]
    UnitCount(usize),
}

fn check<T: Num + PartialOrd>(x: &T, name: &'static str) -> Result<(), ScoreError> {
    if *x >= T::zero() && *x <= T::one() {
        Ok(())
    } else {
        Err(ScoreError::OutOfRange(name))
    }
}

fn clamp<T: Num + PartialOrd>(x: T) -> T {
    if x < T::zero() {
        T::zero()
    } else if x > T::one() {
        T::one()
    } else {
        x
    }
}

/// `s * f`: the test score of a unit scaled by the fraction of mandatory
/// exercises solved.
pub fn unit_score<T: Num + PartialOrd + Copy>(s: T, f: T) -> Result<T, ScoreError> {
    check(&s, "s")?;
    check(&f, "f")?;
    Ok(clamp(s * f))
}

/// `0.8 * exam + 0.1 * unit1 + 0.1 * unit2`.
pub fn final_score<T: Num + PartialOrd + Copy + FromPrimitive>(exam: T, units: &[T]) -> Result<T, ScoreError> {
    check(&exam, "exam")?;
    if units.len() != UNITS {
        return Err(ScoreError::UnitCount(units.len()));
    }
    for u in units {
        check(u, "unit score")?;
    }
    let tenth = |w: u8| T::from_u8(w).expect("small weights are representable");
    // Summing in tenths first keeps the all-ones case exact in floating point.
    let weighted = units
        .iter()
        .fold(tenth(EXAM_WEIGHT) * exam, |acc, u| acc + tenth(UNIT_WEIGHT) * *u);
    Ok(clamp(weighted / tenth(10)))
}
