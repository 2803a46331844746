//! Actuation errors.
//!
//! With an agent-level probability the performed arrow differs from the
//! intended one. The severity is an angle drawn from an exponential density
//! truncated to `[0, π]`, then binned into a shift count along the ring in
//! uniform angular bins of width `π / (ring_len / 2)`. The rotation direction
//! is a fair coin.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{ActionRing, Rotation};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorLabel {
    N,
    L,
    M,
    H,
}

impl ErrorLabel {
    pub const ALL: [ErrorLabel; 4] = [ErrorLabel::N, ErrorLabel::L, ErrorLabel::M, ErrorLabel::H];

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'N' => Some(ErrorLabel::N),
            'L' => Some(ErrorLabel::L),
            'M' => Some(ErrorLabel::M),
            'H' => Some(ErrorLabel::H),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            ErrorLabel::N => 'N',
            ErrorLabel::L => 'L',
            ErrorLabel::M => 'M',
            ErrorLabel::H => 'H',
        }
    }
}

impl fmt::Display for ErrorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for ErrorLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next().and_then(ErrorLabel::from_char), chars.next()) {
            (Some(l), None) => Ok(l),
            _ => Err(Error::InvalidErrorLevel(format!("unknown label {s:?}"))),
        }
    }
}

/// Error likelihood and severity decay of one agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorLevel {
    pub label: ErrorLabel,
    pub probability: f64,
    pub rate: f64,
}

impl ErrorLevel {
    pub fn new(label: ErrorLabel, probability: f64, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::InvalidErrorLevel(format!(
                "{label}: probability {probability} not in [0, 1]"
            )));
        }
        if rate.is_nan() || rate <= 0.0 {
            return Err(Error::InvalidErrorLevel(format!(
                "{label}: rate {rate} must be positive"
            )));
        }
        if label == ErrorLabel::N && probability != 0.0 {
            return Err(Error::InvalidErrorLevel("N must have probability 0".into()));
        }
        Ok(Self {
            label,
            probability,
            rate,
        })
    }

    pub fn none() -> Self {
        Self {
            label: ErrorLabel::N,
            probability: 0.0,
            rate: DEFAULT_RATE,
        }
    }

    pub fn is_error_free(&self) -> bool {
        self.probability == 0.0
    }
}

pub const DEFAULT_RATE: f64 = 2.0;

/// Probability and decay for one configurable level (`error_levels.L` etc.).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelParams {
    pub p: f64,
    #[serde(default = "default_rate")]
    pub lambda: f64,
}

fn default_rate() -> f64 {
    DEFAULT_RATE
}

/// The L/M/H table. N is always error free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorLevels {
    #[serde(rename = "L")]
    pub low: LevelParams,
    #[serde(rename = "M")]
    pub medium: LevelParams,
    #[serde(rename = "H")]
    pub high: LevelParams,
}

impl Default for ErrorLevels {
    fn default() -> Self {
        Self {
            low: LevelParams {
                p: 0.1,
                lambda: DEFAULT_RATE,
            },
            medium: LevelParams {
                p: 0.25,
                lambda: DEFAULT_RATE,
            },
            high: LevelParams {
                p: 0.5,
                lambda: DEFAULT_RATE,
            },
        }
    }
}

impl ErrorLevels {
    pub fn validate(&self) -> Result<()> {
        for label in [ErrorLabel::L, ErrorLabel::M, ErrorLabel::H] {
            self.level(label)?;
        }
        if !(self.low.p < self.medium.p && self.medium.p < self.high.p) {
            return Err(Error::InvalidErrorLevel(format!(
                "probabilities must satisfy L < M < H, got {} / {} / {}",
                self.low.p, self.medium.p, self.high.p
            )));
        }
        Ok(())
    }

    pub fn level(&self, label: ErrorLabel) -> Result<ErrorLevel> {
        let params = match label {
            ErrorLabel::N => return Ok(ErrorLevel::none()),
            ErrorLabel::L => self.low,
            ErrorLabel::M => self.medium,
            ErrorLabel::H => self.high,
        };
        ErrorLevel::new(label, params.p, params.lambda)
    }
}

/// Draws a severity angle from `rate · e^{-rate θ}` renormalised on `[0, π]`.
///
/// Panics when called for an error-free level.
pub fn sample_severity<R: Rng + ?Sized>(level: &ErrorLevel, rng: &mut R) -> f64 {
    assert!(
        level.label != ErrorLabel::N,
        "sample_severity called for an error-free level"
    );
    let u: f64 = rng.gen();
    let mass = -(-level.rate * PI).exp_m1(); // 1 - e^{-λπ}
    let theta = -(-u * mass).ln_1p() / level.rate;
    theta.clamp(0.0, PI)
}

/// Bins a severity angle into a ring shift in `1..=ring_len / 2`.
pub fn shift_count(theta: f64, ring_len: usize) -> usize {
    let half = (ring_len / 2).max(1);
    let width = PI / half as f64;
    ((theta / width).ceil() as usize).clamp(1, half)
}

/// Probability mass of each shift count `1..=half`, index 0 being shift 1.
pub fn shift_distribution(level: &ErrorLevel, ring_len: usize) -> Vec<f64> {
    let half = (ring_len / 2).max(1);
    let width = PI / half as f64;
    let total = -(-level.rate * PI).exp_m1();
    let cdf = |theta: f64| -(-level.rate * theta).exp_m1() / total;
    (1..=half)
        .map(|j| {
            let hi = if j == half {
                1.0
            } else {
                cdf(j as f64 * width)
            };
            hi - cdf((j - 1) as f64 * width)
        })
        .collect()
}

/// Replaces the intended arrow with a shifted one with the level's error
/// probability. Returns the performed ring index and whether it differs.
pub fn apply_error<R: Rng + ?Sized>(
    ring: &ActionRing,
    intended: usize,
    level: &ErrorLevel,
    rng: &mut R,
) -> (usize, bool) {
    if level.probability <= 0.0 || rng.gen::<f64>() >= level.probability {
        return (intended, false);
    }
    let steps = shift_count(sample_severity(level, rng), ring.len());
    let rotation = if rng.gen_bool(0.5) {
        Rotation::Clockwise
    } else {
        Rotation::Anticlockwise
    };
    let performed = ring.shift_index(intended, steps, rotation);
    (performed, performed != intended)
}

/// Distribution over performed ring indices when `intended` is chosen.
pub fn performed_distribution(ring_len: usize, intended: usize, level: &ErrorLevel) -> Vec<f64> {
    let mut dist = vec![0.0; ring_len];
    dist[intended] += 1.0 - level.probability;
    if level.probability > 0.0 {
        for (j, mass) in shift_distribution(level, ring_len).into_iter().enumerate() {
            let steps = j + 1;
            let half_mass = 0.5 * level.probability * mass;
            dist[(intended + steps) % ring_len] += half_mass;
            dist[(intended + ring_len - steps % ring_len) % ring_len] += half_mass;
        }
    }
    dist
}

/// Sparse form of [`performed_distribution`], skipping zero entries.
pub fn performed_support(
    ring_len: usize,
    intended: usize,
    level: &ErrorLevel,
) -> BTreeMap<usize, f64> {
    performed_distribution(ring_len, intended, level)
        .into_iter()
        .enumerate()
        .filter(|(_, p)| *p > 0.0)
        .collect()
}
