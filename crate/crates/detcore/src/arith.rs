//! Canonical-order floating-point kernels.
//!
//! Every reduction in the engine goes through [`canonical_reduce`] or
//! [`det_dot`], so the rounding path of each output element is fixed by the
//! [`ArchProfile`] alone and never by batch shape, thread count or call site.
//!
//! The canonical tree pairs adjacent operands level by level, carrying an odd
//! trailing operand up unchanged: `((p0 + p1) + (p2 + p3)) + (p4 + ...)`. This
//! is the same tree as splitting at the largest power of two below the length
//! and recursing, which is how it is evaluated here.

use serde::{Deserialize, Serialize};

use crate::error::{DetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionOrder {
    /// Fixed left-complete binary tree with rounding at every node.
    CanonicalTree,
    /// Strict left-to-right accumulation.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FmaEmulation {
    /// Multiply-add with a single rounding.
    Fused,
    /// Round after the multiply, then again after the add.
    Split,
}

/// Emulated hardware profile. Two profiles with the same
/// `(reduction_order, fma_emulation)` pair compute identical bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchProfile {
    pub name: String,
    pub reduction_order: ReductionOrder,
    pub fma_emulation: FmaEmulation,
}

/// Names and settings of the built-in profiles.
pub const BUILTIN_PROFILES: &[(&str, ReductionOrder, FmaEmulation)] = &[
    ("archA", ReductionOrder::CanonicalTree, FmaEmulation::Fused),
    ("archB", ReductionOrder::Sequential, FmaEmulation::Split),
    ("archC", ReductionOrder::CanonicalTree, FmaEmulation::Split),
];

impl ArchProfile {
    pub fn new(name: impl Into<String>, reduction_order: ReductionOrder, fma_emulation: FmaEmulation) -> Self {
        Self { name: name.into(), reduction_order, fma_emulation }
    }

    /// Looks up a built-in profile by name.
    pub fn builtin(name: &str) -> Result<Self> {
        BUILTIN_PROFILES
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|&(n, r, f)| Self::new(n, r, f))
            .ok_or_else(|| DetError::UnknownArch(name.to_string()))
    }

    pub fn canonical_tree() -> Self {
        Self::builtin("archA").expect("archA is built in")
    }

    pub fn sequential() -> Self {
        Self::builtin("archB").expect("archB is built in")
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(DetError::NonFinite { index, value: values[index] }),
        None => Ok(()),
    }
}

/// Largest power of two strictly below `n` (n >= 2).
#[inline]
fn split_point(n: usize) -> usize {
    debug_assert!(n >= 2);
    1 << (usize::BITS - 1 - (n - 1).leading_zeros())
}

pub(crate) fn tree_sum(values: &[f32]) -> f32 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let h = split_point(n);
            tree_sum(&values[..h]) + tree_sum(&values[h..])
        }
    }
}

pub(crate) fn sequential_sum(values: &[f32]) -> f32 {
    match values.split_first() {
        None => 0.0,
        Some((&first, rest)) => rest.iter().fold(first, |acc, &v| acc + v),
    }
}

/// Sums `values` in the order fixed by `profile`.
///
/// An empty input sums to `+0.0` and a singleton is returned unchanged.
pub fn canonical_reduce(values: &[f32], profile: &ArchProfile) -> Result<f32> {
    check_finite(values)?;
    Ok(match profile.reduction_order {
        ReductionOrder::CanonicalTree => tree_sum(values),
        ReductionOrder::Sequential => sequential_sum(values),
    })
}

/// Inner product with the profile's reduction order and FMA emulation.
///
/// Under `Split` every product is rounded and the products are reduced with
/// [`canonical_reduce`]. Under `Fused` the sequential order accumulates with
/// `fma(a_i, x_i, acc)`; the tree order fuses each leaf pair as
/// `fma(a_2j, x_2j, a_2j+1 * x_2j+1)` before reducing the pair sums.
fn dot_unchecked(a: &[f32], x: &[f32], profile: &ArchProfile, scratch: &mut Vec<f32>) -> f32 {
    debug_assert_eq!(a.len(), x.len());
    scratch.clear();
    match (profile.reduction_order, profile.fma_emulation) {
        (order, FmaEmulation::Split) => {
            scratch.extend(a.iter().zip(x).map(|(p, q)| p * q));
            match order {
                ReductionOrder::CanonicalTree => tree_sum(scratch),
                ReductionOrder::Sequential => sequential_sum(scratch),
            }
        }
        (ReductionOrder::Sequential, FmaEmulation::Fused) => match a.len() {
            0 => 0.0,
            _ => (1..a.len()).fold(a[0] * x[0], |acc, i| a[i].mul_add(x[i], acc)),
        },
        (ReductionOrder::CanonicalTree, FmaEmulation::Fused) => {
            let pairs = a.chunks(2).zip(x.chunks(2));
            scratch.extend(pairs.map(|(pa, px)| match pa.len() {
                2 => pa[0].mul_add(px[0], pa[1] * px[1]),
                _ => pa[0] * px[0],
            }));
            tree_sum(scratch)
        }
    }
}

/// Inner product of two equal-length vectors under `profile`.
pub fn det_dot(a: &[f32], x: &[f32], profile: &ArchProfile) -> Result<f32> {
    if a.len() != x.len() {
        return Err(DetError::DimensionMismatch { expected: a.len(), got: x.len() });
    }
    check_finite(a)?;
    check_finite(x)?;
    let out = dot_unchecked(a, x, profile, &mut Vec::with_capacity(a.len()));
    finite_result(out, 0)
}

fn finite_result(v: f32, index: usize) -> Result<f32> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DetError::NonFinite { index, value: v })
    }
}

/// Dense row-major matrix of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DetError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Matrix-vector product; each output element is one [`det_dot`].
pub fn det_matvec(matrix: &Matrix, vector: &[f32], profile: &ArchProfile) -> Result<Vec<f32>> {
    if vector.len() != matrix.cols {
        return Err(DetError::DimensionMismatch { expected: matrix.cols, got: vector.len() });
    }
    check_finite(vector)?;
    let mut scratch = Vec::with_capacity(matrix.cols);
    (0..matrix.rows)
        .map(|i| finite_result(dot_unchecked(matrix.row(i), vector, profile, &mut scratch), i))
        .collect()
}

/// Batched product `matrix * [v_0 .. v_b]`, returning one output vector per
/// input column.
///
/// The loop nest is row-major over the batch, unlike [`det_matvec`], but every
/// element still reduces over the full inner dimension with the same kernel,
/// so each column equals `det_matvec(matrix, v_j)` bit for bit whatever the
/// batch size or grouping.
pub fn det_matmul(matrix: &Matrix, columns: &[Vec<f32>], profile: &ArchProfile) -> Result<Vec<Vec<f32>>> {
    for c in columns {
        if c.len() != matrix.cols {
            return Err(DetError::DimensionMismatch { expected: matrix.cols, got: c.len() });
        }
        check_finite(c)?;
    }
    let mut out = vec![Vec::with_capacity(matrix.rows); columns.len()];
    let mut scratch = Vec::with_capacity(matrix.cols);
    for i in 0..matrix.rows {
        let row = matrix.row(i);
        for (j, c) in columns.iter().enumerate() {
            out[j].push(finite_result(dot_unchecked(row, c, profile, &mut scratch), i)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_singleton() {
        for p in [ArchProfile::canonical_tree(), ArchProfile::sequential()] {
            assert_eq!(canonical_reduce(&[], &p).unwrap().to_bits(), 0.0f32.to_bits());
            for x in [3.5f32, -0.0, f32::MIN_POSITIVE, -1e30] {
                assert_eq!(canonical_reduce(&[x], &p).unwrap().to_bits(), x.to_bits());
            }
        }
    }

    #[test]
    fn tree_and_sequential_differ_on_cancellation_witness() {
        // Hand evaluation in binary32: 1e8 + 1 rounds back to 1e8 (ulp is 8),
        // so the tree gives (1e8) + (-1e8) = 0 while the left fold ends with 0 + 1.
        let v = [1e8f32, 1.0, -1e8, 1.0];
        let tree = canonical_reduce(&v, &ArchProfile::canonical_tree()).unwrap();
        let seq = canonical_reduce(&v, &ArchProfile::sequential()).unwrap();
        assert_eq!(tree.to_bits(), 0x0000_0000);
        assert_eq!(seq.to_bits(), 0x3f80_0000);
    }

    #[test]
    fn tree_shape_matches_level_pairing() {
        fn level_pairing(v: &[f32]) -> f32 {
            if v.is_empty() {
                return 0.0;
            }
            let mut level = v.to_vec();
            while level.len() > 1 {
                level = level.chunks(2).map(|c| if c.len() == 2 { c[0] + c[1] } else { c[0] }).collect();
            }
            level[0]
        }
        let mut g = crate::prng::PrngState::from_seed(11);
        for n in 0..70 {
            let v: Vec<f32> = (0..n).map(|_| (g.unit_f32() - 0.5) * 1e4).collect();
            assert_eq!(tree_sum(&v).to_bits(), level_pairing(&v).to_bits(), "n={n}");
        }
    }

    #[test]
    fn rejects_non_finite() {
        let p = ArchProfile::canonical_tree();
        assert!(matches!(
            canonical_reduce(&[1.0, f32::NAN], &p),
            Err(DetError::NonFinite { index: 1, .. })
        ));
        assert!(canonical_reduce(&[f32::INFINITY], &p).is_err());
    }

    #[test]
    fn identity_matvec_is_exact() {
        let v = vec![1.5f32, -2.25, 1e-30, 7.0, -0.0];
        for name in ["archA", "archB", "archC"] {
            let p = ArchProfile::builtin(name).unwrap();
            let out = det_matvec(&Matrix::identity(5), &v, &p).unwrap();
            let bits: Vec<u32> = out.iter().map(|x| x.to_bits()).collect();
            // -0.0 * 1 + 0 sums to +0.0 once a zero product joins it.
            let expect: Vec<u32> = v.iter().map(|x| (x + 0.0).to_bits()).collect();
            assert_eq!(bits, expect, "{name}");
        }
    }

    #[test]
    fn ones_row_equals_reduction() {
        let v = [1e8f32, 1.0, -1e8, 1.0];
        let m = Matrix::new(1, 4, vec![1.0; 4]).unwrap();
        for name in ["archA", "archB", "archC"] {
            let p = ArchProfile::builtin(name).unwrap();
            let mv = det_matvec(&m, &v, &p).unwrap()[0];
            assert_eq!(mv.to_bits(), canonical_reduce(&v, &p).unwrap().to_bits());
        }
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = Matrix::identity(3);
        assert!(matches!(
            det_matvec(&m, &[1.0, 2.0], &ArchProfile::canonical_tree()),
            Err(DetError::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn repeated_matvec_is_bit_stable() {
        let mut g = crate::prng::PrngState::from_seed(5);
        let data: Vec<f32> = (0..64).map(|_| g.unit_f32() * 2.0 - 1.0).collect();
        let v: Vec<f32> = (0..8).map(|_| g.unit_f32() * 2.0 - 1.0).collect();
        let m = Matrix::new(8, 8, data).unwrap();
        for name in ["archA", "archB", "archC"] {
            let p = ArchProfile::builtin(name).unwrap();
            let first = det_matvec(&m, &v, &p).unwrap();
            for _ in 0..1000 {
                let again = det_matvec(&m, &v, &p).unwrap();
                assert!(first.iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn fused_and_split_differ_somewhere() {
        let a = [1.0f32 + f32::EPSILON, 1.0];
        let x = [1.0f32 - f32::EPSILON, -1.0];
        let fused = det_dot(&a, &x, &ArchProfile::builtin("archA").unwrap()).unwrap();
        let split = det_dot(&a, &x, &ArchProfile::builtin("archC").unwrap()).unwrap();
        // Exact value is -eps^2; rounding the product first loses it.
        assert_eq!(fused, -(f32::EPSILON * f32::EPSILON));
        assert_eq!(split, 0.0);
    }

    #[test]
    fn matmul_columns_match_matvec() {
        let mut g = crate::prng::PrngState::from_seed(8);
        let m = Matrix::new(5, 7, (0..35).map(|_| g.unit_f32() - 0.5).collect()).unwrap();
        let cols: Vec<Vec<f32>> = (0..6).map(|_| (0..7).map(|_| g.unit_f32() * 9.0).collect()).collect();
        for name in ["archA", "archB", "archC"] {
            let p = ArchProfile::builtin(name).unwrap();
            let batched = det_matmul(&m, &cols, &p).unwrap();
            for (c, out) in cols.iter().zip(&batched) {
                assert_eq!(out, &det_matvec(&m, c, &p).unwrap());
            }
        }
    }

    #[test]
    fn unknown_profile() {
        assert_eq!(ArchProfile::builtin("H200"), Err(DetError::UnknownArch("H200".into())));
    }
}
