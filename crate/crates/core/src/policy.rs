//! Per-unit bit-width assignments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantizer::{MAX_BITS, MIN_BITS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("bit width {bits} of unit {unit} is outside [1, 8]")]
    BitsOutOfRange { unit: usize, bits: u8 },
    #[error("malformed policy string: {0}")]
    Parse(String),
    #[error("policy has {got} units, expected {expected}")]
    UnitCount { got: usize, expected: usize },
}

/// Weight and activation bit widths of one MLP layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerBits {
    pub weight: u8,
    pub activation: u8,
}

/// One bit width per hash level and a `(weight, activation)` pair per MLP
/// layer.
///
/// Units are numbered globally: hash levels first (coarse to fine), then for
/// each MLP layer its weight unit followed by its activation unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantPolicy {
    pub hash_bits: Vec<u8>,
    pub mlp_bits: Vec<LayerBits>,
}

/// Identifies one quantizable unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unit {
    HashLevel(usize),
    Weight(usize),
    Activation(usize),
}

impl QuantPolicy {
    pub fn uniform(num_levels: usize, num_layers: usize, bits: u8) -> Self {
        Self {
            hash_bits: vec![bits; num_levels],
            mlp_bits: vec![
                LayerBits {
                    weight: bits,
                    activation: bits
                };
                num_layers
            ],
        }
    }

    /// Builds a policy from bit widths listed in global unit order.
    pub fn from_unit_bits(num_levels: usize, bits: &[u8]) -> Result<Self, PolicyError> {
        if bits.len() < num_levels || !(bits.len() - num_levels).is_multiple_of(2) {
            return Err(PolicyError::UnitCount {
                got: bits.len(),
                expected: num_levels,
            });
        }
        let policy = Self {
            hash_bits: bits[..num_levels].to_vec(),
            mlp_bits: bits[num_levels..]
                .chunks_exact(2)
                .map(|c| LayerBits {
                    weight: c[0],
                    activation: c[1],
                })
                .collect(),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn num_units(&self) -> usize {
        self.hash_bits.len() + 2 * self.mlp_bits.len()
    }

    pub fn unit(&self, index: usize) -> Unit {
        let n = self.hash_bits.len();
        if index < n {
            Unit::HashLevel(index)
        } else if (index - n).is_multiple_of(2) {
            Unit::Weight((index - n) / 2)
        } else {
            Unit::Activation((index - n) / 2)
        }
    }

    pub fn bits(&self, unit: Unit) -> u8 {
        match unit {
            Unit::HashLevel(l) => self.hash_bits[l],
            Unit::Weight(l) => self.mlp_bits[l].weight,
            Unit::Activation(l) => self.mlp_bits[l].activation,
        }
    }

    pub fn bits_mut(&mut self, unit: Unit) -> &mut u8 {
        match unit {
            Unit::HashLevel(l) => &mut self.hash_bits[l],
            Unit::Weight(l) => &mut self.mlp_bits[l].weight,
            Unit::Activation(l) => &mut self.mlp_bits[l].activation,
        }
    }

    /// Bit widths in global unit order.
    pub fn unit_bits(&self) -> Vec<u8> {
        let mut out = self.hash_bits.clone();
        out.extend(self.mlp_bits.iter().flat_map(|l| [l.weight, l.activation]));
        out
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self
            .unit_bits()
            .into_iter()
            .enumerate()
            .find(|&(_, b)| !(MIN_BITS..=MAX_BITS).contains(&b))
        {
            Some((unit, bits)) => Err(PolicyError::BitsOutOfRange { unit, bits }),
            None => Ok(()),
        }
    }

    /// Checks that the policy covers exactly the given architecture.
    pub fn check_shape(&self, num_levels: usize, num_layers: usize) -> Result<(), PolicyError> {
        if self.hash_bits.len() != num_levels || self.mlp_bits.len() != num_layers {
            return Err(PolicyError::UnitCount {
                got: self.num_units(),
                expected: num_levels + 2 * num_layers,
            });
        }
        self.validate()
    }
}

/// Slash-separated form: hash bits, then `w<bits>a<bits>` per layer, e.g.
/// `8/8/4/w6a8/w4a4`.
impl fmt::Display for QuantPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts = self.hash_bits.iter().map(|b| b.to_string()).chain(
            self.mlp_bits
                .iter()
                .map(|l| format!("w{}a{}", l.weight, l.activation)),
        );
        let mut first = true;
        for p in parts {
            if !first {
                f.write_str("/")?;
            }
            f.write_str(&p)?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for QuantPolicy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PolicyError::Parse(s.to_string());
        let mut policy = QuantPolicy {
            hash_bits: Vec::new(),
            mlp_bits: Vec::new(),
        };
        for tok in s.trim().split('/') {
            if let Some(rest) = tok.strip_prefix('w') {
                let (w, a) = rest.split_once('a').ok_or_else(bad)?;
                policy.mlp_bits.push(LayerBits {
                    weight: w.parse().map_err(|_| bad())?,
                    activation: a.parse().map_err(|_| bad())?,
                });
            } else {
                if !policy.mlp_bits.is_empty() {
                    return Err(bad());
                }
                policy.hash_bits.push(tok.parse().map_err(|_| bad())?);
            }
        }
        policy.validate()?;
        Ok(policy)
    }
}
