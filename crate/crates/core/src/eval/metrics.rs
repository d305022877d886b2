//! RMSE and Kendall's rank correlation.
//!
//! Kendall's τ is computed with Knight's O(n log n) algorithm. The pair
//! counts it produces are exact integers, so τ-a and τ-b come out
//! bit-identical to a direct enumeration of all pairs.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TauVariant {
    TauA,
    #[default]
    TauB,
}

impl fmt::Display for TauVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TauVariant::TauA => "tau_a",
            TauVariant::TauB => "tau_b",
        })
    }
}

impl FromStr for TauVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tau_a" | "a" => Ok(TauVariant::TauA),
            "tau_b" | "b" => Ok(TauVariant::TauB),
            other => Err(format!("unknown tau variant `{other}`")),
        }
    }
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target, 1)?;
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < min {
        return Err(Error::TooFewSamples {
            needed: min,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input"));
    }
    Ok(())
}

/// Pair counts underlying both τ variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    /// n(n−1)/2
    pub total: u64,
    /// Pairs tied in the first argument.
    pub tied_x: u64,
    /// Pairs tied in the second argument.
    pub tied_y: u64,
    /// Concordant minus discordant pairs.
    pub net_concordant: i64,
}

impl PairCounts {
    pub fn tau(&self, variant: TauVariant) -> Result<f64> {
        let s = self.net_concordant as f64;
        match variant {
            TauVariant::TauA => Ok(s / self.total as f64),
            TauVariant::TauB => {
                let lx = self.total - self.tied_x;
                let ly = self.total - self.tied_y;
                if lx == 0 || ly == 0 {
                    return Err(Error::UndefinedTau);
                }
                Ok(s / (lx as f64 * ly as f64).sqrt())
            }
        }
    }
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite inputs")
}

fn tied_pairs(sorted: impl Iterator<Item = f64>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<f64> = None;
    for v in sorted {
        if prev == Some(v) {
            run += 1;
        } else {
            total += run * run.saturating_sub(1) / 2;
            run = 1;
        }
        prev = Some(v);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Merge sort by `y`, returning the number of strictly inverted pairs.
fn sort_counting_swaps(v: &mut [(f64, f64)], buf: &mut Vec<(f64, f64)>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], buf) + sort_counting_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if cmp(v[j].1, v[i].1) == Ordering::Less {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

pub fn pair_counts(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    check_pair(x, y, 2)?;
    let n = x.len() as u64;
    let total = n * (n - 1) / 2;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp(a.0, b.0).then(cmp(a.1, b.1)));

    let tied_x = tied_pairs(pairs.iter().map(|p| p.0));
    // joint ties: runs equal in both coordinates
    let mut tied_xy = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            tied_xy += run * (run - 1) / 2;
            run = 1;
        }
    }
    tied_xy += run * (run - 1) / 2;

    let mut buf = Vec::with_capacity(pairs.len());
    let swaps = sort_counting_swaps(&mut pairs, &mut buf);
    let tied_y = tied_pairs(pairs.iter().map(|p| p.1));

    let net = total as i64 - tied_x as i64 - tied_y as i64 + tied_xy as i64 - 2 * swaps as i64;
    Ok(PairCounts {
        total,
        tied_x,
        tied_y,
        net_concordant: net,
    })
}

pub fn kendall_tau(pred: &[f64], target: &[f64], variant: TauVariant) -> Result<f64> {
    pair_counts(pred, target)?.tau(variant)
}
