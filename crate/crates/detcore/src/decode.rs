//! Deterministic token selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arith::tree_sum;
use crate::error::{DetError, Result};
use crate::prng::PrngState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeKind {
    Greedy,
    TopK { k: u32 },
    Nucleus { p: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodePolicy {
    pub kind: DecodeKind,
    pub max_tokens: u32,
}

impl DecodePolicy {
    pub fn greedy(max_tokens: u32) -> Self {
        Self { kind: DecodeKind::Greedy, max_tokens }
    }

    pub fn top_k(k: u32, max_tokens: u32) -> Self {
        Self { kind: DecodeKind::TopK { k }, max_tokens }
    }

    pub fn nucleus(p: f32, max_tokens: u32) -> Self {
        Self { kind: DecodeKind::Nucleus { p }, max_tokens }
    }

    /// Enumerated kind name: `greedy`, `top_k` or `nucleus`.
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            DecodeKind::Greedy => "greedy",
            DecodeKind::TopK { .. } => "top_k",
            DecodeKind::Nucleus { .. } => "nucleus",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DecodeKind::Greedy => Ok(()),
            DecodeKind::TopK { k } if k >= 1 => Ok(()),
            DecodeKind::TopK { k } => Err(DetError::InvalidPolicy(format!("top_k needs k >= 1, got {k}"))),
            DecodeKind::Nucleus { p } if p > 0.0 && p <= 1.0 => Ok(()),
            DecodeKind::Nucleus { p } => Err(DetError::InvalidPolicy(format!("nucleus needs p in (0, 1], got {p}"))),
        }
    }
}

/// Text form used in receipts: `greedy;max_tokens=8`, `top_k;k=5;max_tokens=8`,
/// `nucleus;p=0.9;max_tokens=8`. `p` is printed in shortest round-trip form.
impl fmt::Display for DecodePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DecodeKind::Greedy => write!(f, "greedy")?,
            DecodeKind::TopK { k } => write!(f, "top_k;k={k}")?,
            DecodeKind::Nucleus { p } => write!(f, "nucleus;p={p}")?,
        }
        write!(f, ";max_tokens={}", self.max_tokens)
    }
}

impl FromStr for DecodePolicy {
    type Err = DetError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| DetError::InvalidPolicy(format!("{why} in `{s}`"));
        let mut parts = s.split(';');
        let kind = parts.next().unwrap_or_default();
        let mut k = None;
        let mut p = None;
        let mut max_tokens = None;
        for part in parts {
            let (key, value) = part.split_once('=').ok_or_else(|| bad("missing `=`"))?;
            match key {
                "k" => k = Some(value.parse::<u32>().map_err(|_| bad("bad k"))?),
                "p" => p = Some(value.parse::<f32>().map_err(|_| bad("bad p"))?),
                "max_tokens" => max_tokens = Some(value.parse::<u32>().map_err(|_| bad("bad max_tokens"))?),
                _ => return Err(bad("unknown key")),
            }
        }
        let kind = match (kind, k, p) {
            ("greedy", None, None) => DecodeKind::Greedy,
            ("top_k", Some(k), None) => DecodeKind::TopK { k },
            ("nucleus", None, Some(p)) => DecodeKind::Nucleus { p },
            ("greedy" | "top_k" | "nucleus", _, _) => return Err(bad("parameters do not match kind")),
            _ => return Err(bad("kind not in {greedy, top_k, nucleus}")),
        };
        let policy = DecodePolicy { kind, max_tokens: max_tokens.ok_or_else(|| bad("missing max_tokens"))? };
        policy.validate()?;
        Ok(policy)
    }
}

fn check_probs(probs: &[f32]) -> Result<()> {
    if probs.is_empty() {
        return Err(DetError::EmptyInput);
    }
    match probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
        Some(index) => Err(DetError::InvalidProbability { index, value: probs[index] }),
        None => Ok(()),
    }
}

/// Argmax; the smallest index wins ties.
pub fn argmax(probs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Smallest 0-based index `k` with `p_0 + ... + p_k >= r`, accumulating left
/// to right. If rounding leaves the running sum short of `r`, the last token
/// with non-zero mass is chosen.
pub fn select_cumulative(probs: &[f32], r: f32) -> Result<usize> {
    check_probs(probs)?;
    let mut cum = 0.0f32;
    let mut last_positive = None;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if p > 0.0 {
            last_positive = Some(i);
        }
        if p > 0.0 && cum >= r {
            return Ok(i);
        }
    }
    last_positive.ok_or(DetError::ZeroMass)
}

/// Indices ordered by probability descending, then index ascending.
fn ranked(probs: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// Zeroes every entry outside `keep` and rescales by the canonical-tree sum.
fn renormalize(probs: &[f32], keep: &[usize]) -> Result<Vec<f32>> {
    let mut masked = vec![0.0f32; probs.len()];
    for &i in keep {
        masked[i] = probs[i];
    }
    let total = tree_sum(&masked);
    if total <= 0.0 {
        return Err(DetError::ZeroMass);
    }
    Ok(masked.iter().map(|&p| p / total).collect())
}

/// Probability vector actually sampled from under `policy`, in token order.
pub fn truncate(probs: &[f32], policy: &DecodePolicy) -> Result<Vec<f32>> {
    check_probs(probs)?;
    policy.validate()?;
    match policy.kind {
        DecodeKind::Greedy => Ok(probs.to_vec()),
        DecodeKind::TopK { k } => {
            let order = ranked(probs);
            let keep = &order[..(k as usize).min(order.len())];
            renormalize(probs, keep)
        }
        DecodeKind::Nucleus { p } => {
            let order = ranked(probs);
            let mut cum = 0.0f32;
            let mut cut = order.len();
            for (n, &i) in order.iter().enumerate() {
                cum += probs[i];
                if cum >= p {
                    cut = n + 1;
                    break;
                }
            }
            renormalize(probs, &order[..cut])
        }
    }
}

/// Chooses the next token and returns the generator advanced by exactly one
/// step, for every policy including greedy.
pub fn decode_step(probs: &[f32], policy: &DecodePolicy, prng: PrngState) -> Result<(u32, PrngState)> {
    let (r, next) = prng.next_unit();
    let token = match policy.kind {
        DecodeKind::Greedy => {
            check_probs(probs)?;
            if probs.iter().all(|&p| p == 0.0) {
                return Err(DetError::ZeroMass);
            }
            argmax(probs)
        }
        _ => select_cumulative(&truncate(probs, policy)?, r)?,
    };
    Ok((token as u32, next))
}
