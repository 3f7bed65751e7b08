//! Byte-wise t-of-n Shamir sharing over GF(256).

use std::collections::BTreeSet;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

use super::gf256;
use crate::encoding::{Canonical, DecodeError, Reader, Writer, TAG_KEY_SHARE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShamirError {
    #[error("threshold {t} and share count {n} must satisfy 1 <= t <= n <= 255")]
    BadParameters { t: usize, n: usize },
    #[error("{got} shares supplied, {need} required")]
    InsufficientShares { got: usize, need: usize },
    #[error("duplicate share index {0}")]
    DuplicateIndex(u8),
    #[error("shares disagree on epoch, threshold or length")]
    Mismatched,
}

/// One shard's share of a byte-string secret. `x` is the evaluation point.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize, Zeroize, ZeroizeOnDrop)]
pub struct KeyShare {
    pub shard_id: u8,
    pub epoch: u32,
    pub threshold: u8,
    pub x: u8,
    pub y: Vec<u8>,
}

impl std::fmt::Debug for KeyShare {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyShare")
            .field("shard_id", &self.shard_id)
            .field("epoch", &self.epoch)
            .field("threshold", &self.threshold)
            .field("x", &self.x)
            .finish_non_exhaustive()
    }
}

impl Canonical for KeyShare {
    fn encode_into(&self, w: &mut Writer) {
        w.u8(TAG_KEY_SHARE).u8(self.shard_id).u32(self.epoch).u8(self.threshold).u8(self.x).bytes(&self.y);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag("key share", TAG_KEY_SHARE)?;
        Ok(Self { shard_id: r.u8()?, epoch: r.u32()?, threshold: r.u8()?, x: r.u8()?, y: r.bytes()?.to_vec() })
    }
}

/// Splits `secret` into `n` shares at x = 1..=n, any `t` of which recover it.
pub fn split_secret(secret: &[u8], t: usize, n: usize, epoch: u32, rng: &mut dyn RngCore) -> Result<Vec<KeyShare>, ShamirError> {
    if t == 0 || t > n || n > 255 {
        return Err(ShamirError::BadParameters { t, n });
    }
    let mut shares: Vec<KeyShare> = (1..=n as u8)
        .map(|x| KeyShare { shard_id: x, epoch, threshold: t as u8, x, y: Vec::with_capacity(secret.len()) })
        .collect();
    let mut coeffs = vec![0u8; t];
    for &byte in secret {
        coeffs[0] = byte;
        rng.fill_bytes(&mut coeffs[1..]);
        for share in &mut shares {
            share.y.push(gf256::eval_poly(&coeffs, share.x));
        }
    }
    coeffs.zeroize();
    Ok(shares)
}

/// Recovers the secret from at least `threshold` consistent shares.
pub fn reconstruct(shares: &[KeyShare]) -> Result<Vec<u8>, ShamirError> {
    let first = shares.first().ok_or(ShamirError::InsufficientShares { got: 0, need: 1 })?;
    let need = first.threshold as usize;
    if shares.iter().any(|s| s.epoch != first.epoch || s.threshold != first.threshold || s.y.len() != first.y.len()) {
        return Err(ShamirError::Mismatched);
    }
    if shares.len() < need {
        return Err(ShamirError::InsufficientShares { got: shares.len(), need });
    }
    let mut seen = BTreeSet::new();
    for s in shares {
        if s.x == 0 || !seen.insert(s.x) {
            return Err(ShamirError::DuplicateIndex(s.x));
        }
    }
    let used = &shares[..need];
    let mut points: Vec<(u8, u8)> = vec![(0, 0); need];
    let secret = (0..first.y.len())
        .map(|i| {
            for (p, s) in points.iter_mut().zip(used) {
                *p = (s.x, s.y[i]);
            }
            gf256::interpolate_at_zero(&points)
        })
        .collect();
    points.zeroize();
    Ok(secret)
}
