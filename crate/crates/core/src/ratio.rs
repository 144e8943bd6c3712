//! Exact non-negative fractions and pre-multiplied share thresholds.
//!
//! No floating-point value ever takes part in a fairness comparison. A
//! factor such as `2/3` is a [`Ratio`]; scaling it by an agent's maximin
//! share gives a [`Share`], and testing a bundle value against a share is a
//! single cross-multiplication in 128-bit arithmetic.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RatioError {
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("cannot parse `{0}` as a fraction p/q")]
    Parse(String),
    #[error("fraction {0} does not fit in 64-bit components")]
    Overflow(String),
    #[error("{0} is negative")]
    Negative(String),
}

/// A reduced non-negative fraction `p/q` with `q >= 1`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    numer: u64,
    denom: u64,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { numer: 0, denom: 1 };
    pub const ONE: Ratio = Ratio { numer: 1, denom: 1 };
    pub const TWO_THIRDS: Ratio = Ratio { numer: 2, denom: 3 };

    pub fn new(numer: u64, denom: u64) -> Result<Self, RatioError> {
        Self::from_wide(numer as u128, denom as u128)
    }

    fn from_wide(numer: u128, denom: u128) -> Result<Self, RatioError> {
        if denom == 0 {
            return Err(RatioError::ZeroDenominator);
        }
        let g = numer.gcd(&denom);
        let (p, q) = if g == 0 { (0, 1) } else { (numer / g, denom / g) };
        match (u64::try_from(p), u64::try_from(q)) {
            (Ok(numer), Ok(denom)) => Ok(Ratio { numer, denom }),
            _ => Err(RatioError::Overflow(format!("{numer}/{denom}"))),
        }
    }

    pub fn integer(value: u64) -> Self {
        Ratio { numer: value, denom: 1 }
    }

    pub fn numer(&self) -> u64 {
        self.numer
    }

    pub fn denom(&self) -> u64 {
        self.denom
    }

    pub fn is_zero(&self) -> bool {
        self.numer == 0
    }

    /// `true` when `0 <= self < 1`.
    pub fn is_proper(&self) -> bool {
        self.numer < self.denom
    }

    pub fn checked_sub(&self, other: &Ratio) -> Result<Ratio, RatioError> {
        let lhs = self.numer as u128 * other.denom as u128;
        let rhs = other.numer as u128 * self.denom as u128;
        if lhs < rhs {
            return Err(RatioError::Negative(format!("{self} - {other}")));
        }
        Self::from_wide(lhs - rhs, self.denom as u128 * other.denom as u128)
    }

    pub fn checked_mul(&self, other: &Ratio) -> Result<Ratio, RatioError> {
        Self::from_wide(
            self.numer as u128 * other.numer as u128,
            self.denom as u128 * other.denom as u128,
        )
    }

    /// `1 - self`; fails when `self > 1`.
    pub fn complement(&self) -> Result<Ratio, RatioError> {
        Ratio::ONE.checked_sub(self)
    }

    /// The threshold `self * base`, kept as an unreduced integer pair.
    pub fn of(&self, base: u64) -> Share {
        Share {
            numer: self.numer as u128 * base as u128,
            denom: self.denom as u128,
        }
    }

    /// `lhs >= self * rhs`, by cross-multiplication.
    pub fn le_ratio_of(&self, lhs: u64, rhs: u64) -> bool {
        self.denom as u128 * lhs as u128 >= self.numer as u128 * rhs as u128
    }

    /// `self * lhs > rhs`, by cross-multiplication.
    pub fn scaled_exceeds(&self, lhs: u64, rhs: u64) -> bool {
        self.numer as u128 * lhs as u128 > self.denom as u128 * rhs as u128
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.numer as u128 * other.denom as u128).cmp(&(other.numer as u128 * self.denom as u128))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer, self.denom)
    }
}

impl fmt::Debug for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Ratio {
    type Err = RatioError;

    /// Accepts `p/q` or a bare integer `p`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parse = |part: &str| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| RatioError::Parse(s.to_string()))
        };
        match s.split_once('/') {
            Some((p, q)) => Ratio::new(parse(p)?, parse(q)?),
            None => Ok(Ratio::integer(parse(s)?)),
        }
    }
}

impl TryFrom<String> for Ratio {
    type Error = RatioError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Ratio> for String {
    fn from(value: Ratio) -> Self {
        value.to_string()
    }
}

/// A threshold `numer / denom` in value units, e.g. `(2 * MMS_i) / 3`.
///
/// Kept unreduced so that it can be compared against integer bundle values
/// without any division.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Share {
    pub numer: u128,
    pub denom: u128,
}

impl Share {
    pub const ZERO: Share = Share { numer: 0, denom: 1 };

    pub fn new(numer: u128, denom: u128) -> Self {
        assert!(denom > 0, "share with zero denominator");
        Share { numer, denom }
    }

    /// `value >= self`.
    pub fn met_by(&self, value: u64) -> bool {
        self.denom * value as u128 >= self.numer
    }

    /// `value < self`.
    pub fn exceeds(&self, value: u64) -> bool {
        !self.met_by(value)
    }

    pub fn is_zero(&self) -> bool {
        self.numer == 0
    }
}

impl fmt::Display for Share {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer, self.denom)
    }
}
