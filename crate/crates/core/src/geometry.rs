//! Hyperplanes, arrangements, bounded domains and sign vectors.
//!
//! A hyperplane is `{x : a·x = b}` with `+` meaning `a·x > b`. Normals are
//! rescaled to unit length on construction, so `a·x - b` is a signed
//! Euclidean distance and a single absolute tolerance works at every scale.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute on-plane tolerance for `|a·p - b|` on a unit normal.
pub const ON_PLANE_TOL: f64 = 1e-9;

/// Normals shorter than this are treated as identically zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    // Declaration order matches the byte order of '+', '-', '0'.
    Pos,
    Neg,
    Zero,
}

impl Sign {
    pub fn as_char(self) -> char {
        match self {
            Sign::Pos => '+',
            Sign::Neg => '-',
            Sign::Zero => '0',
        }
    }

    pub fn from_char(c: char) -> Option<Sign> {
        match c {
            '+' => Some(Sign::Pos),
            '-' | '−' => Some(Sign::Neg),
            '0' => Some(Sign::Zero),
            _ => None,
        }
    }

    /// `+1.0`, `-1.0`, or `0.0`.
    pub fn factor(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
            Sign::Zero => 0.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
            Sign::Zero => Sign::Zero,
        }
    }

    /// Classify a signed distance with the on-plane tolerance.
    pub fn of_value(v: f64) -> Sign {
        if v > ON_PLANE_TOL {
            Sign::Pos
        } else if v < -ON_PLANE_TOL {
            Sign::Neg
        } else {
            Sign::Zero
        }
    }
}

/// Position code of a point or face with respect to an ordered arrangement.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignVector(Vec<Sign>);

impl SignVector {
    /// The empty vector ε.
    pub fn empty() -> Self {
        SignVector(Vec::new())
    }

    pub fn new(signs: Vec<Sign>) -> Self {
        SignVector(signs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn signs(&self) -> &[Sign] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Option<Sign> {
        self.0.get(i).copied()
    }

    /// `s[1..k]`. Panics if `k > len`.
    pub fn prefix(&self, k: usize) -> SignVector {
        SignVector(self.0[..k].to_vec())
    }

    /// `s ⧺ sign`.
    pub fn extended(&self, sign: Sign) -> SignVector {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.extend_from_slice(&self.0);
        v.push(sign);
        SignVector(v)
    }

    pub fn push(&mut self, sign: Sign) {
        self.0.push(sign);
    }

    /// True if no entry is 0, i.e. the vector can name a cell.
    pub fn is_cell(&self) -> bool {
        !self.0.contains(&Sign::Zero)
    }

    pub fn count(&self, sign: Sign) -> usize {
        self.0.iter().filter(|&&s| s == sign).count()
    }

    /// The `index`-th vector of `{+,-}^n` in binary-counting order, where bit
    /// `n-1-i` set means entry `i` is `-`. Index 0 is all `+`.
    pub fn from_index(index: u64, n: usize) -> SignVector {
        SignVector(
            (0..n)
                .map(|i| {
                    if (index >> (n - 1 - i)) & 1 == 1 {
                        Sign::Neg
                    } else {
                        Sign::Pos
                    }
                })
                .collect(),
        )
    }
}

impl fmt::Display for SignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{}", s.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for SignVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| {
                Sign::from_char(c).ok_or_else(|| Error::format("sign vector", format!("bad sign character {c:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(SignVector)
    }
}

impl From<Vec<Sign>> for SignVector {
    fn from(v: Vec<Sign>) -> Self {
        SignVector(v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An oriented affine hyperplane `{x : normal·x = offset}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    normal: Vec<f64>,
    offset: f64,
    degenerate: bool,
}

impl Hyperplane {
    /// Builds and normalizes `{x : normal·x = offset}`. A normal shorter than
    /// [`DEGENERATE_NORM`] yields a degenerate hyperplane whose normal is
    /// zeroed and whose offset is kept unscaled.
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        if normal.is_empty() {
            return Err(Error::usage("hyperplane normal must have dimension >= 1"));
        }
        if !offset.is_finite() || normal.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("hyperplane entries must be finite"));
        }
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM {
            return Ok(Hyperplane {
                normal: vec![0.0; normal.len()],
                offset,
                degenerate: true,
            });
        }
        Ok(Hyperplane {
            normal: normal.iter().map(|v| v / norm).collect(),
            offset: offset / norm,
            degenerate: false,
        })
    }

    /// The boundary of `weights·x + bias > 0`, oriented so that `+` is the
    /// side where the affine form is positive.
    pub fn from_affine(weights: Vec<f64>, bias: f64) -> Result<Self> {
        Hyperplane::new(weights, -bias)
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// `normal·p - offset`; a signed distance for non-degenerate planes.
    pub fn eval(&self, p: &[f64]) -> f64 {
        dot(&self.normal, p) - self.offset
    }

    /// Same hyperplane with both orientation and offset negated.
    pub fn negated(&self) -> Hyperplane {
        Hyperplane {
            normal: self.normal.iter().map(|v| -v).collect(),
            offset: -self.offset,
            degenerate: self.degenerate,
        }
    }

    /// Constant side of a degenerate hyperplane: the sign of `0 - offset`.
    /// A constant within tolerance of zero resolves to `-` (inactive ReLU).
    /// Returns `None` for non-degenerate hyperplanes.
    pub fn constant_sign(&self) -> Option<Sign> {
        if !self.degenerate {
            return None;
        }
        Some(if -self.offset > ON_PLANE_TOL {
            Sign::Pos
        } else {
            Sign::Neg
        })
    }

    pub fn side_of(&self, p: &[f64]) -> Result<Sign> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        if self.degenerate {
            return Err(Error::DegenerateHyperplane);
        }
        Ok(Sign::of_value(self.eval(p)))
    }
}

/// An ordered set of hyperplanes in a common ambient dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Arrangement {
    dim: usize,
    hyperplanes: Vec<Hyperplane>,
}

impl Arrangement {
    pub fn new(dim: usize, hyperplanes: Vec<Hyperplane>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("arrangement dimension must be >= 1"));
        }
        if let Some(h) = hyperplanes.iter().find(|h| h.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: h.dim(),
            });
        }
        Ok(Arrangement { dim, hyperplanes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.hyperplanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyperplanes.is_empty()
    }

    pub fn hyperplanes(&self) -> &[Hyperplane] {
        &self.hyperplanes
    }

    pub fn get(&self, i: usize) -> Option<&Hyperplane> {
        self.hyperplanes.get(i)
    }

    /// The sub-arrangement of the first `k` hyperplanes.
    pub fn prefix(&self, k: usize) -> Arrangement {
        Arrangement {
            dim: self.dim,
            hyperplanes: self.hyperplanes[..k].to_vec(),
        }
    }

    /// Sign vector of `p`. Degenerate members contribute their constant sign.
    pub fn sign_vector(&self, p: &[f64]) -> Result<SignVector> {
        if p.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        Ok(SignVector(
            self.hyperplanes
                .iter()
                .map(|h| match h.constant_sign() {
                    Some(s) => s,
                    None => Sign::of_value(h.eval(p)),
                })
                .collect(),
        ))
    }
}

/// Convex domain: the intersection of the closed `+` half-spaces of its
/// halfspaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedDomain {
    dim: usize,
    halfspaces: Vec<Hyperplane>,
}

impl BoundedDomain {
    pub fn new(dim: usize, halfspaces: Vec<Hyperplane>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("domain dimension must be >= 1"));
        }
        if let Some(h) = halfspaces.iter().find(|h| h.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: h.dim(),
            });
        }
        if halfspaces.iter().any(Hyperplane::is_degenerate) {
            return Err(Error::usage("domain halfspaces must have non-zero normals"));
        }
        Ok(BoundedDomain { dim, halfspaces })
    }

    /// `[0,1]^d` as `x_i >= 0` and `-x_i >= -1` for each coordinate.
    pub fn unit_box(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("unit box dimension must be >= 1"));
        }
        let mut halfspaces = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            halfspaces.push(Hyperplane::new(e.clone(), 0.0)?);
            e[i] = -1.0;
            halfspaces.push(Hyperplane::new(e, -1.0)?);
        }
        Ok(BoundedDomain { dim, halfspaces })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn halfspaces(&self) -> &[Hyperplane] {
        &self.halfspaces
    }

    /// Closed membership test with the on-plane tolerance.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim && self.halfspaces.iter().all(|h| h.eval(p) >= -ON_PLANE_TOL)
    }

    /// Axis-aligned bounding box if every coordinate is bounded by some
    /// axis-aligned halfspace, as `(lower, upper)` per coordinate.
    pub fn axis_bounds(&self) -> Vec<(f64, f64)> {
        let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); self.dim];
        for h in &self.halfspaces {
            if let Some((axis, coef)) = single_axis(h.normal()) {
                let v = h.offset() / coef;
                if coef > 0.0 {
                    bounds[axis].0 = bounds[axis].0.max(v);
                } else {
                    bounds[axis].1 = bounds[axis].1.min(v);
                }
            }
        }
        bounds
    }
}

/// `(axis, coefficient)` if exactly one entry of `normal` is non-zero.
pub(crate) fn single_axis(normal: &[f64]) -> Option<(usize, f64)> {
    let mut found = None;
    for (i, &v) in normal.iter().enumerate() {
        if v != 0.0 {
            if found.is_some() {
                return None;
            }
            found = Some((i, v));
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h(normal: &[f64], offset: f64) -> Hyperplane {
        Hyperplane::new(normal.to_vec(), offset).unwrap()
    }

    #[test]
    fn side_of_examples() {
        assert_eq!(h(&[1.0], 0.5).side_of(&[0.9]).unwrap(), Sign::Pos);
        assert_eq!(h(&[1.0], 0.5).side_of(&[0.5]).unwrap(), Sign::Zero);
        assert_eq!(h(&[1.0, -1.0], 0.0).side_of(&[0.2, 0.7]).unwrap(), Sign::Neg);
    }

    #[test]
    fn side_of_rejects_bad_input() {
        assert!(matches!(
            h(&[1.0, 0.0], 0.0).side_of(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        let degenerate = h(&[0.0, 0.0], 1.0);
        assert!(degenerate.is_degenerate());
        assert!(matches!(
            degenerate.side_of(&[0.0, 0.0]),
            Err(Error::DegenerateHyperplane)
        ));
    }

    #[test]
    fn normalization_preserves_orientation() {
        let a = h(&[3.0, 4.0], 5.0);
        assert!((a.normal()[0] - 0.6).abs() < 1e-15);
        assert!((a.offset() - 1.0).abs() < 1e-15);
        assert_eq!(a.side_of(&[10.0, 10.0]).unwrap(), Sign::Pos);
        // Tolerance is applied after scaling: 1e-8 away on a huge normal is still off-plane.
        let big = h(&[1e6], 0.0);
        assert_eq!(big.side_of(&[1e-8]).unwrap(), Sign::Pos);
    }

    #[test]
    fn degenerate_constant_sign() {
        assert_eq!(
            Hyperplane::from_affine(vec![0.0], 0.3).unwrap().constant_sign(),
            Some(Sign::Pos)
        );
        assert_eq!(
            Hyperplane::from_affine(vec![0.0], -0.3).unwrap().constant_sign(),
            Some(Sign::Neg)
        );
        // Ties go to the inactive side.
        assert_eq!(
            Hyperplane::from_affine(vec![0.0], 0.0).unwrap().constant_sign(),
            Some(Sign::Neg)
        );
        assert_eq!(h(&[1.0], 0.0).constant_sign(), None);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Hyperplane::new(vec![f64::NAN], 0.0).is_err());
        assert!(Hyperplane::new(vec![1.0], f64::INFINITY).is_err());
    }

    #[test]
    fn sign_vector_examples() {
        let a = Arrangement::new(2, vec![h(&[1.0, 0.0], 0.5), h(&[0.0, 1.0], 0.5)]).unwrap();
        assert_eq!(a.sign_vector(&[0.9, 0.1]).unwrap().to_string(), "+-");
        let empty = Arrangement::new(2, vec![]).unwrap();
        assert_eq!(empty.sign_vector(&[0.3, 0.3]).unwrap(), SignVector::empty());
        assert!(a.sign_vector(&[0.1]).is_err());
    }

    #[test]
    fn generic_three_lines_have_seven_cells_by_grid_sampling() {
        // Three lines in general position crossing inside [-2,2]^2.
        let a = Arrangement::new(2, vec![h(&[1.0, 0.2], 0.1), h(&[-0.3, 1.0], 0.2), h(&[1.0, 1.0], -0.4)]).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let n = 400;
        for i in 0..=n {
            for j in 0..=n {
                let p = [-4.0 + 8.0 * i as f64 / n as f64, -4.0 + 8.0 * j as f64 / n as f64];
                let s = a.sign_vector(&p).unwrap();
                if s.is_cell() {
                    seen.insert(s);
                }
            }
        }
        assert_eq!(seen.len(), 7);
    }

    #[test]
    fn unit_box_examples() {
        let b1 = BoundedDomain::unit_box(1).unwrap();
        assert_eq!(b1.halfspaces().len(), 2);
        assert_eq!(b1.halfspaces()[0], h(&[1.0], 0.0));
        assert_eq!(b1.halfspaces()[1], h(&[-1.0], -1.0));
        let b2 = BoundedDomain::unit_box(2).unwrap();
        assert_eq!(b2.halfspaces().len(), 4);
        assert!(b2.contains(&[0.5, 0.5]));
        assert!(!b2.contains(&[1.5, 0.5]));
        assert_eq!(BoundedDomain::unit_box(784).unwrap().halfspaces().len(), 1568);
        assert!(BoundedDomain::unit_box(0).is_err());
        assert_eq!(b2.axis_bounds(), vec![(0.0, 1.0), (0.0, 1.0)]);
    }

    #[test]
    fn sign_vector_parsing_and_index_order() {
        let s: SignVector = "+-0".parse().unwrap();
        assert_eq!(s.signs(), &[Sign::Pos, Sign::Neg, Sign::Zero]);
        assert!(!s.is_cell());
        assert!("+x".parse::<SignVector>().is_err());
        assert_eq!(SignVector::from_index(0, 3).to_string(), "+++");
        assert_eq!(SignVector::from_index(1, 3).to_string(), "++-");
        assert_eq!(SignVector::from_index(6, 3).to_string(), "--+");
        assert_eq!(SignVector::from_index(0, 0), SignVector::empty());
        assert_eq!(s.prefix(0), SignVector::empty());
    }

    fn finite_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, d)
    }

    proptest! {
        #[test]
        fn antisymmetry(n in finite_vec(3), b in -3.0f64..3.0, p in finite_vec(3)) {
            let plane = Hyperplane::new(n, b).unwrap();
            prop_assume!(!plane.is_degenerate());
            let s = plane.side_of(&p).unwrap();
            prop_assume!(s != Sign::Zero);
            prop_assert_eq!(plane.negated().side_of(&p).unwrap(), s.flip());
        }

        #[test]
        fn prefix_coherence(
            planes in proptest::collection::vec((finite_vec(2), -2.0f64..2.0), 0..8),
            p in finite_vec(2),
            k in 0usize..8,
        ) {
            let hs: Vec<_> = planes.into_iter().map(|(n, b)| Hyperplane::new(n, b).unwrap()).collect();
            let a = Arrangement::new(2, hs).unwrap();
            let k = k.min(a.len());
            let full = a.sign_vector(&p).unwrap();
            prop_assert_eq!(a.prefix(k).sign_vector(&p).unwrap(), full.prefix(k));
        }
    }
}
