//! Seeded random instance generation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Instance, ModelError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("need at least one agent")]
    NoAgents,
    #[error("empty range {lo}..={hi}")]
    EmptyRange { lo: u64, hi: u64 },
    #[error("bi-valued distribution needs two distinct values, got {0} twice")]
    SameValues(u64),
    #[error("probability {numer}/{denom} is not in [0, 1]")]
    Probability { numer: u64, denom: u64 },
    #[error("cannot parse distribution `{0}`")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Value distribution. String form: `uniform:LO:HI`, `identical:LO:HI`,
/// `bivalued:A:B:P/Q` (value `A` with probability `P/Q`, else `B`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Distribution {
    Uniform { lo: u64, hi: u64 },
    Bivalued { a: u64, b: u64, p_numer: u64, p_denom: u64 },
    /// One uniform row copied to every agent.
    Identical { lo: u64, hi: u64 },
}

impl Distribution {
    fn validate(&self) -> Result<(), GenError> {
        match *self {
            Distribution::Uniform { lo, hi } | Distribution::Identical { lo, hi } if lo > hi => {
                Err(GenError::EmptyRange { lo, hi })
            }
            Distribution::Bivalued { a, b, .. } if a == b => Err(GenError::SameValues(a)),
            Distribution::Bivalued { p_numer, p_denom, .. } if p_denom == 0 || p_numer > p_denom => {
                Err(GenError::Probability { numer: p_numer, denom: p_denom })
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            Distribution::Identical { lo, hi } => write!(f, "identical:{lo}:{hi}"),
            Distribution::Bivalued { a, b, p_numer, p_denom } => write!(f, "bivalued:{a}:{b}:{p_numer}/{p_denom}"),
        }
    }
}

impl FromStr for Distribution {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GenError::Parse(s.to_string());
        let num = |x: &str| x.trim().parse::<u64>().map_err(|_| bad());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let d = match parts.as_slice() {
            ["uniform", lo, hi] => Distribution::Uniform { lo: num(lo)?, hi: num(hi)? },
            ["identical", lo, hi] => Distribution::Identical { lo: num(lo)?, hi: num(hi)? },
            ["bivalued", a, b, p] => {
                let (pn, pd) = p.split_once('/').ok_or_else(bad)?;
                Distribution::Bivalued { a: num(a)?, b: num(b)?, p_numer: num(pn)?, p_denom: num(pd)? }
            }
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

impl TryFrom<String> for Distribution {
    type Error = GenError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Distribution> for String {
    fn from(value: Distribution) -> Self {
        value.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSpec {
    pub agents: usize,
    pub goods: usize,
    pub distribution: Distribution,
    pub seed: u64,
}

/// Deterministic for a fixed `GenSpec` (ChaCha8 seeded from `seed`).
pub fn generate(spec: &GenSpec) -> Result<Instance, GenError> {
    if spec.agents == 0 {
        return Err(GenError::NoAgents);
    }
    spec.distribution.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows = match spec.distribution {
        Distribution::Uniform { lo, hi } => (0..spec.agents)
            .map(|_| (0..spec.goods).map(|_| rng.gen_range(lo..=hi)).collect())
            .collect(),
        Distribution::Identical { lo, hi } => {
            let row: Vec<u64> = (0..spec.goods).map(|_| rng.gen_range(lo..=hi)).collect();
            vec![row; spec.agents]
        }
        Distribution::Bivalued { a, b, p_numer, p_denom } => (0..spec.agents)
            .map(|_| {
                (0..spec.goods)
                    .map(|_| if rng.gen_range(0..p_denom) < p_numer { a } else { b })
                    .collect()
            })
            .collect(),
    };
    Ok(Instance::new(rows)?)
}
