//! Turns rational valuations ("0.25", "1/3", 7) into an integer instance by
//! multiplying every value by the LCM of the reduced denominators.

use fairshare::model::ModelError;
use fairshare::Instance;
use num_integer::Integer;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScaleError {
    #[error("value {text:?} at row {row}, column {col} is not a non-negative decimal or p/q fraction")]
    Malformed { row: usize, col: usize, text: String },
    #[error("value at row {row}, column {col} is a JSON float; quote it as a decimal string")]
    Float { row: usize, col: usize },
    #[error("value at row {row}, column {col} has denominator {denom}, above the bound {bound}")]
    DenominatorBound { row: usize, col: usize, denom: u128, bound: u128 },
    #[error("scaled values overflow")]
    Overflow,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Deserialize)]
pub struct RationalFile {
    #[serde(default)]
    pub agents: Option<usize>,
    #[serde(default)]
    pub goods: Option<usize>,
    pub valuations: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleMetadata {
    pub scale_factor: u64,
}

/// An instance file plus the factor it was scaled by. Readers that only want
/// the instance ignore `metadata`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaledFile {
    pub agents: usize,
    pub goods: usize,
    pub valuations: Vec<Vec<u64>>,
    pub metadata: ScaleMetadata,
}

impl ScaledFile {
    pub fn instance(&self) -> Result<Instance, ModelError> {
        Instance::new(self.valuations.clone())
    }
}

/// Reduced `(numer, denom)` of one entry.
fn parse_entry(v: &Value, row: usize, col: usize) -> Result<(u128, u128), ScaleError> {
    let malformed = |text: String| ScaleError::Malformed { row, col, text };
    let text = match v {
        Value::String(s) => s.trim().to_string(),
        Value::Number(n) => match n.as_u64() {
            Some(u) => return Ok((u as u128, 1)),
            None if n.is_f64() => return Err(ScaleError::Float { row, col }),
            None => return Err(malformed(n.to_string())),
        },
        other => return Err(malformed(other.to_string())),
    };
    let digits = |s: &str| -> Result<u128, ScaleError> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed(text.clone()));
        }
        s.parse::<u128>().map_err(|_| ScaleError::Overflow)
    };
    let (numer, denom) = if let Some((p, q)) = text.split_once('/') {
        (digits(p.trim())?, digits(q.trim())?)
    } else if let Some((int, frac)) = text.split_once('.') {
        if int.is_empty() && frac.is_empty() {
            return Err(malformed(text.clone()));
        }
        let int = if int.is_empty() { 0 } else { digits(int)? };
        let (frac_v, scale) = if frac.is_empty() {
            (0, 1)
        } else {
            let exp = u32::try_from(frac.len()).map_err(|_| ScaleError::Overflow)?;
            (digits(frac)?, 10u128.checked_pow(exp).ok_or(ScaleError::Overflow)?)
        };
        let numer = int.checked_mul(scale).and_then(|x| x.checked_add(frac_v)).ok_or(ScaleError::Overflow)?;
        (numer, scale)
    } else {
        (digits(&text)?, 1)
    };
    if denom == 0 {
        return Err(malformed(text));
    }
    let g = numer.gcd(&denom);
    Ok((numer / g, denom / g))
}

pub fn scale(file: &RationalFile, denominator_bound: u128) -> Result<ScaledFile, ScaleError> {
    let mut parsed = Vec::with_capacity(file.valuations.len());
    let mut factor: u128 = 1;
    for (row, values) in file.valuations.iter().enumerate() {
        let mut out = Vec::with_capacity(values.len());
        for (col, v) in values.iter().enumerate() {
            let (numer, denom) = parse_entry(v, row, col)?;
            if denom > denominator_bound {
                return Err(ScaleError::DenominatorBound { row, col, denom, bound: denominator_bound });
            }
            factor = factor.lcm(&denom);
            if factor > u64::MAX as u128 {
                return Err(ScaleError::Overflow);
            }
            out.push((numer, denom));
        }
        parsed.push(out);
    }
    let valuations: Vec<Vec<u64>> = parsed
        .iter()
        .map(|row| {
            row.iter()
                .map(|&(p, q)| {
                    p.checked_mul(factor / q)
                        .and_then(|v| u64::try_from(v).ok())
                        .ok_or(ScaleError::Overflow)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let inst = Instance::new(valuations.clone())?;
    if let Some(declared) = file.agents {
        if declared != inst.agents() {
            return Err(ModelError::HeaderMismatch { what: "agents", declared, found: inst.agents() }.into());
        }
    }
    if let Some(declared) = file.goods {
        if declared != inst.goods() {
            return Err(ModelError::HeaderMismatch { what: "goods", declared, found: inst.goods() }.into());
        }
    }
    Ok(ScaledFile {
        agents: inst.agents(),
        goods: inst.goods(),
        valuations,
        metadata: ScaleMetadata { scale_factor: factor as u64 },
    })
}
