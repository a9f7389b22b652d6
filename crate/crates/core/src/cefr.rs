//! The CEFR difficulty scale and measured difficulty scores.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ScoreError;

/// A discrete CEFR goal level, ordered from beginner to expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CefrLevel {
    A1,
    A2,
    B1,
    B2,
    C1,
    C2,
}

impl CefrLevel {
    pub const ALL: [CefrLevel; 6] = [
        CefrLevel::A1,
        CefrLevel::A2,
        CefrLevel::B1,
        CefrLevel::B2,
        CefrLevel::C1,
        CefrLevel::C2,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            CefrLevel::A1 => "A1",
            CefrLevel::A2 => "A2",
            CefrLevel::B1 => "B1",
            CefrLevel::B2 => "B2",
            CefrLevel::C1 => "C1",
            CefrLevel::C2 => "C2",
        }
    }

    /// Position on the 1..=6 scale, A1 = 1 and C2 = 6.
    pub const fn scalar(self) -> u8 {
        match self {
            CefrLevel::A1 => 1,
            CefrLevel::A2 => 2,
            CefrLevel::B1 => 3,
            CefrLevel::B2 => 4,
            CefrLevel::C1 => 5,
            CefrLevel::C2 => 6,
        }
    }

    pub const fn from_scalar(value: u8) -> Option<CefrLevel> {
        match value {
            1 => Some(CefrLevel::A1),
            2 => Some(CefrLevel::A2),
            3 => Some(CefrLevel::B1),
            4 => Some(CefrLevel::B2),
            5 => Some(CefrLevel::C1),
            6 => Some(CefrLevel::C2),
            _ => None,
        }
    }
}

impl fmt::Display for CefrLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error for a token that is not one of the six level names.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown CEFR level `{0}` (expected one of A1, A2, B1, B2, C1, C2)")]
pub struct UnknownLevel(pub alloc::string::String);

impl FromStr for CefrLevel {
    type Err = UnknownLevel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        CefrLevel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| UnknownLevel(t.into()))
    }
}

pub fn level_to_scalar(level: CefrLevel) -> u8 {
    level.scalar()
}

/// Quantizes a continuous score: round half up, clamp to 1..=6.
pub fn scalar_to_level(score: f64) -> Result<CefrLevel, ScoreError> {
    if !score.is_finite() {
        return Err(ScoreError::NonFinite);
    }
    let rounded = libm::floor(score + 0.5).clamp(1.0, 6.0);
    Ok(CefrLevel::from_scalar(rounded as u8).expect("clamped to 1..=6"))
}

/// A measured difficulty on the continuous 1..=6 scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct DifficultyScore(f64);

impl DifficultyScore {
    pub const MIN: f64 = 1.0;
    pub const MAX: f64 = 6.0;

    pub fn new(value: f64) -> Result<Self, ScoreError> {
        if !value.is_finite() {
            return Err(ScoreError::NonFinite);
        }
        if !(Self::MIN..=Self::MAX).contains(&value) {
            return Err(ScoreError::OutOfRange(value));
        }
        Ok(DifficultyScore(value))
    }

    /// Clamps a finite value into range.
    pub fn clamped(value: f64) -> Result<Self, ScoreError> {
        if !value.is_finite() {
            return Err(ScoreError::NonFinite);
        }
        Ok(DifficultyScore(value.clamp(Self::MIN, Self::MAX)))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn level(self) -> CefrLevel {
        scalar_to_level(self.0).expect("score is finite")
    }
}

impl<'de> Deserialize<'de> for DifficultyScore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        DifficultyScore::new(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for DifficultyScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Squared distance between the measured score and the target's scalar.
pub fn squared_error(target: CefrLevel, measured: DifficultyScore) -> f64 {
    let d = measured.value() - f64::from(target.scalar());
    d * d
}
