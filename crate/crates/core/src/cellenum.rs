//! Bounded cell enumeration for a single hyperplane arrangement.
//!
//! Both subroutines return exactly the sign vectors `s ∈ {+,-}^n` whose
//! open cell meets the interior of the bounding region. The region is a
//! closed domain plus an optional set of strict constraints (the parent
//! cell when enumerating a deeper layer).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{Arrangement, BoundedDomain, Sign, SignVector};
use crate::witness::{
    find_witness, is_strict_witness, witness_in_domain, SignedConstraint, WitnessResult, STRICT_MARGIN,
};

/// Bounding region `T`: a closed domain intersected with an open cell.
#[derive(Clone, Copy, Debug)]
pub struct Region<'a> {
    pub domain: &'a BoundedDomain,
    pub cell: &'a [SignedConstraint],
}

impl<'a> Region<'a> {
    pub fn new(domain: &'a BoundedDomain, cell: &'a [SignedConstraint]) -> Self {
        Region { domain, cell }
    }

    pub fn domain_only(domain: &'a BoundedDomain) -> Self {
        Region { domain, cell: &[] }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// A strict interior witness of the region.
    pub fn witness(&self) -> Result<WitnessResult> {
        if self.cell.is_empty() {
            witness_in_domain(self.domain)
        } else {
            find_witness(self.cell, self.domain)
        }
    }

    fn accepts(&self, p: &[f64]) -> bool {
        if self.cell.is_empty() {
            // Domain-only regions need a point off the domain boundary too.
            p.len() == self.dim() && self.domain.halfspaces().iter().all(|h| h.eval(p) >= STRICT_MARGIN)
        } else {
            p.len() == self.dim() && is_strict_witness(p, self.cell, self.domain, STRICT_MARGIN)
        }
    }
}

/// Sign vectors found by a bounded enumeration, each with a strict witness.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellSet {
    cells: BTreeMap<SignVector, Vec<f64>>,
    lp_calls: u64,
}

impl CellSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, s: &SignVector) -> bool {
        self.cells.contains_key(s)
    }

    /// Sign vectors in lexicographic order.
    pub fn sign_vectors(&self) -> impl Iterator<Item = &SignVector> {
        self.cells.keys()
    }

    pub fn witness(&self, s: &SignVector) -> Option<&[f64]> {
        self.cells.get(s).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SignVector, &[f64])> {
        self.cells.iter().map(|(s, w)| (s, w.as_slice()))
    }

    pub fn into_cells(self) -> impl Iterator<Item = (SignVector, Vec<f64>)> {
        self.cells.into_iter()
    }

    /// Number of LP solves performed to produce the set.
    pub fn lp_calls(&self) -> u64 {
        self.lp_calls
    }

    /// Same cells, ignoring witnesses and counters.
    pub fn same_cells(&self, other: &CellSet) -> bool {
        self.cells.keys().eq(other.cells.keys())
    }
}

/// Per-hyperplane constraints for both orientations, or the constant sign
/// of a degenerate hyperplane.
enum Side {
    Constant(Sign),
    Split {
        pos: SignedConstraint,
        neg: SignedConstraint,
    },
}

impl Side {
    fn constraint(&self, s: Sign) -> Option<&SignedConstraint> {
        match (self, s) {
            (Side::Split { pos, .. }, Sign::Pos) => Some(pos),
            (Side::Split { neg, .. }, Sign::Neg) => Some(neg),
            _ => None,
        }
    }
}

fn sides(arr: &Arrangement) -> Result<Vec<Side>> {
    arr.hyperplanes()
        .iter()
        .map(|h| {
            Ok(match h.constant_sign() {
                Some(s) => Side::Constant(s),
                None => Side::Split {
                    pos: SignedConstraint::new(h.clone(), Sign::Pos)?,
                    neg: SignedConstraint::new(h.clone(), Sign::Neg)?,
                },
            })
        })
        .collect()
}

fn check_dims(arr: &Arrangement, region: &Region<'_>) -> Result<()> {
    if arr.dim() != region.dim() {
        return Err(Error::DimensionMismatch {
            expected: region.dim(),
            got: arr.dim(),
        });
    }
    Ok(())
}

fn prefix_constraints<'s>(
    region: &'s Region<'_>,
    sides: &'s [Side],
    signs: &'s [Sign],
) -> impl Iterator<Item = &'s SignedConstraint> {
    region
        .cell
        .iter()
        .chain(sides.iter().zip(signs).filter_map(|(side, &s)| side.constraint(s)))
}

/// Exhaustive enumeration: one witness LP for each of the `2^n` sign
/// vectors. Only sensible for small `n`.
pub fn bound_exh_enum(arr: &Arrangement, region: &Region<'_>) -> Result<CellSet> {
    check_dims(arr, region)?;
    let n = arr.len();
    if n >= 63 {
        return Err(Error::usage(format!("exhaustive enumeration over 2^{n} sign vectors")));
    }
    let mut out = CellSet::default();
    out.lp_calls += 1;
    let Some(root) = region.witness()?.into_point() else {
        return Ok(out);
    };
    if n == 0 {
        out.cells.insert(SignVector::empty(), root);
        return Ok(out);
    }
    let sides = sides(arr)?;
    'candidates: for index in 0..(1u64 << n) {
        let s = SignVector::from_index(index, n);
        for (side, &sign) in sides.iter().zip(s.signs()) {
            if let Side::Constant(c) = side {
                if *c != sign {
                    continue 'candidates;
                }
            }
        }
        out.lp_calls += 1;
        let r = find_witness(prefix_constraints(region, &sides, s.signs()), region.domain)?;
        if let Some(p) = r.into_point() {
            out.cells.insert(s, p);
        }
    }
    Ok(out)
}

/// Incremental enumeration: extends sign vector prefixes one hyperplane at
/// a time, carrying a witness along each branch.
///
/// `hint` is an optional known interior point of the region; it is used in
/// place of the initial LP when it is a valid strict witness.
pub fn bound_inc_enum(arr: &Arrangement, region: &Region<'_>, hint: Option<&[f64]>) -> Result<CellSet> {
    check_dims(arr, region)?;
    let mut out = CellSet::default();
    let root = match hint {
        Some(p) if region.accepts(p) => p.to_vec(),
        _ => {
            out.lp_calls += 1;
            match region.witness()?.into_point() {
                Some(p) => p,
                None => return Ok(out),
            }
        }
    };
    let n = arr.len();
    let sides = sides(arr)?;

    let mut stack: Vec<(Vec<Sign>, Vec<f64>)> = vec![(Vec::with_capacity(n), root)];
    while let Some((prefix, w)) = stack.pop() {
        let k = prefix.len();
        if k == n {
            out.cells.insert(SignVector::new(prefix), w);
            continue;
        }
        match &sides[k] {
            Side::Constant(c) => {
                let mut next = prefix;
                next.push(*c);
                stack.push((next, w));
            }
            Side::Split { pos, .. } => {
                let v = pos.slack_at(&w);
                let sigma = if v > 0.0 { Sign::Pos } else { Sign::Neg };

                let mut flipped = prefix.clone();
                flipped.push(sigma.flip());
                out.lp_calls += 1;
                let r = find_witness(prefix_constraints(region, &sides, &flipped), region.domain)?;
                if let Some(w2) = r.into_point() {
                    stack.push((flipped, w2));
                }

                let mut same = prefix;
                same.push(sigma);
                if v.abs() >= STRICT_MARGIN {
                    stack.push((same, w));
                } else {
                    // w sits on (or too close to) H_{k+1}; it does not certify either side.
                    out.lp_calls += 1;
                    let r = find_witness(prefix_constraints(region, &sides, &same), region.domain)?;
                    if let Some(w1) = r.into_point() {
                        stack.push((same, w1));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Which subroutine to use for the first layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subroutine {
    #[default]
    Exh,
    Inc,
}

impl Subroutine {
    pub fn run(self, arr: &Arrangement, region: &Region<'_>) -> Result<CellSet> {
        match self {
            Subroutine::Exh => bound_exh_enum(arr, region),
            Subroutine::Inc => bound_inc_enum(arr, region, None),
        }
    }
}

impl std::str::FromStr for Subroutine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exh" => Ok(Subroutine::Exh),
            "inc" => Ok(Subroutine::Inc),
            other => Err(Error::usage(format!("unknown subroutine {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Hyperplane;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn plane(n: &[f64], b: f64) -> Hyperplane {
        Hyperplane::new(n.to_vec(), b).unwrap()
    }

    fn square() -> BoundedDomain {
        BoundedDomain::unit_box(2).unwrap()
    }

    fn both(arr: &Arrangement, dom: &BoundedDomain) -> (CellSet, CellSet) {
        let r = Region::domain_only(dom);
        (bound_exh_enum(arr, &r).unwrap(), bound_inc_enum(arr, &r, None).unwrap())
    }

    /// Cell sign vectors seen on a regular grid over the unit square.
    fn grid_cells(arr: &Arrangement, n: usize) -> BTreeSet<SignVector> {
        let mut seen = BTreeSet::new();
        for i in 0..n {
            for j in 0..n {
                let p = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                let s = arr.sign_vector(&p).unwrap();
                if s.is_cell() {
                    seen.insert(s);
                }
            }
        }
        seen
    }

    #[test]
    fn contract_examples() {
        let dom = square();
        let through = Arrangement::new(2, vec![plane(&[1.0, 0.0], 0.5)]).unwrap();
        let outside = Arrangement::new(2, vec![plane(&[1.0, 0.0], 2.0)]).unwrap();
        for arr in [&through, &outside] {
            let (e, i) = both(arr, &dom);
            assert!(e.same_cells(&i));
        }
        assert_eq!(both(&through, &dom).0.len(), 2);
        let (e, _) = both(&outside, &dom);
        assert_eq!(e.sign_vectors().map(|s| s.to_string()).collect::<Vec<_>>(), vec!["-"]);

        // n <= d generic hyperplanes through an interior point: 2^n cells.
        let dom4 = BoundedDomain::unit_box(4).unwrap();
        let c = [0.4, 0.6, 0.5, 0.45];
        let normals = [[1.0, 0.3, -0.2, 0.1], [-0.4, 1.0, 0.5, 0.2], [0.2, -0.1, 1.0, 0.7]];
        let hs = normals
            .iter()
            .map(|n| plane(n, n.iter().zip(&c).map(|(a, b)| a * b).sum()))
            .collect();
        let arr = Arrangement::new(4, hs).unwrap();
        let (e, i) = both(&arr, &dom4);
        assert_eq!(e.len(), 8);
        assert!(e.same_cells(&i));
    }

    #[test]
    fn exhaustive_examples() {
        let dom = square();
        let cross = Arrangement::new(2, vec![plane(&[1.0, 0.0], 0.5), plane(&[0.0, 1.0], 0.5)]).unwrap();
        let (e, i) = both(&cross, &dom);
        assert_eq!(e.len(), 4);
        assert_eq!(
            e.sign_vectors().cloned().collect::<BTreeSet<_>>(),
            grid_cells(&cross, 100)
        );
        assert!(e.same_cells(&i));

        let three = Arrangement::new(
            2,
            vec![
                plane(&[1.0, 0.2], 0.5),
                plane(&[-0.3, 1.0], 0.3),
                plane(&[1.0, 1.0], 1.1),
            ],
        )
        .unwrap();
        let (e, i) = both(&three, &dom);
        assert_eq!(e.len(), 7);
        assert_eq!(
            e.sign_vectors().cloned().collect::<BTreeSet<_>>(),
            grid_cells(&three, 200)
        );
        assert!(e.same_cells(&i));

        let none = Arrangement::new(2, vec![]).unwrap();
        let (e, i) = both(&none, &dom);
        assert_eq!(e.sign_vectors().cloned().collect::<Vec<_>>(), vec![SignVector::empty()]);
        assert!(e.same_cells(&i));
    }

    #[test]
    fn degenerate_hyperplane_has_constant_sign() {
        let dom = square();
        let arr = Arrangement::new(
            2,
            vec![
                plane(&[1.0, 0.0], 0.5),
                Hyperplane::from_affine(vec![0.0, 0.0], 0.7).unwrap(),
                plane(&[0.0, 1.0], 0.5),
            ],
        )
        .unwrap();
        let (e, i) = both(&arr, &dom);
        assert_eq!(i.len(), 4);
        assert!(i.sign_vectors().all(|s| s.get(1) == Some(Sign::Pos)));
        assert!(e.same_cells(&i));
    }

    #[test]
    fn empty_region_yields_no_cells() {
        let empty = BoundedDomain::new(1, vec![plane(&[1.0], 0.0), plane(&[-1.0], 1.0)]).unwrap();
        let arr = Arrangement::new(1, vec![plane(&[1.0], 0.5)]).unwrap();
        let (e, i) = both(&arr, &empty);
        assert!(e.is_empty() && i.is_empty());
    }

    #[test]
    fn strict_cell_region_restricts_cells() {
        // Parent cell x > 0.5; the line y = 0.5 splits it, x = 0.25 misses it.
        let dom = square();
        let parent = [SignedConstraint::new(plane(&[1.0, 0.0], 0.5), Sign::Pos).unwrap()];
        let region = Region::new(&dom, &parent);
        let arr = Arrangement::new(2, vec![plane(&[0.0, 1.0], 0.5), plane(&[1.0, 0.0], 0.25)]).unwrap();
        let e = bound_exh_enum(&arr, &region).unwrap();
        let i = bound_inc_enum(&arr, &region, Some(&[0.9, 0.9])).unwrap();
        assert_eq!(e.len(), 2);
        assert!(e.same_cells(&i));
        assert!(i.sign_vectors().all(|s| s.get(1) == Some(Sign::Pos)));
    }

    #[test]
    fn hint_outside_region_is_ignored() {
        let dom = square();
        let parent = [SignedConstraint::new(plane(&[1.0, 0.0], 0.5), Sign::Pos).unwrap()];
        let region = Region::new(&dom, &parent);
        let arr = Arrangement::new(2, vec![plane(&[0.0, 1.0], 0.5)]).unwrap();
        let i = bound_inc_enum(&arr, &region, Some(&[0.1, 0.1])).unwrap();
        assert_eq!(i.len(), 2);
        for (_, w) in i.iter() {
            assert!(w[0] > 0.5);
        }
    }

    fn fat_random_lines(rng: &mut ChaCha8Rng, n: usize) -> Arrangement {
        let hs = (0..n)
            .map(|_| {
                let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let c = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
                let nrm = [th.cos(), th.sin()];
                plane(&nrm, nrm[0] * c[0] + nrm[1] * c[1])
            })
            .collect();
        Arrangement::new(2, hs).unwrap()
    }

    #[test]
    fn ten_lines_match_grid_oracle() {
        let dom = square();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 5 {
            let arr = fat_random_lines(&mut rng, 10);
            let i = bound_inc_enum(&arr, &Region::domain_only(&dom), None).unwrap();
            // Generator control: keep only arrangements whose cells are all fat
            // enough for a 500x500 grid (inradius above ~2 grid pitches).
            let thin = i.iter().any(|(s, _)| {
                let cons: Vec<_> = arr
                    .hyperplanes()
                    .iter()
                    .zip(s.signs())
                    .map(|(h, &g)| SignedConstraint::new(h.clone(), g).unwrap())
                    .collect();
                find_witness(&cons, &dom).unwrap().margin.unwrap() < 4e-3
            });
            if thin {
                continue;
            }
            let grid = grid_cells(&arr, 500);
            assert_eq!(i.sign_vectors().cloned().collect::<BTreeSet<_>>(), grid);
            checked += 1;
        }
    }

    fn distinct_prefixes(cells: &CellSet) -> usize {
        let mut set = BTreeSet::new();
        for s in cells.sign_vectors() {
            for k in 0..=s.len() {
                set.insert(s.prefix(k));
            }
        }
        set.len()
    }

    #[test]
    fn random_arrangements_agree_and_respect_lp_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let d = rng.random_range(1..=4);
            let n = rng.random_range(0..=9);
            let dom = BoundedDomain::unit_box(d).unwrap();
            let hs = (0..n)
                .map(|_| {
                    let nrm: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let c: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..1.2)).collect();
                    let b = nrm.iter().zip(&c).map(|(a, x)| a * x).sum();
                    plane(&nrm, b)
                })
                .collect();
            let arr = Arrangement::new(d, hs).unwrap();
            let (e, i) = both(&arr, &dom);
            assert!(e.same_cells(&i), "d={d} n={n}");
            // The initial domain LP is extra; every other LP belongs to a realized prefix.
            assert!(i.lp_calls() <= 2 * distinct_prefixes(&i) as u64 + 1);
            // Soundness: witnesses reproduce their sign vectors.
            for (s, w) in i.iter() {
                assert!(dom.contains(w));
                assert_eq!(&arr.sign_vector(w).unwrap(), s);
            }
        }
    }

    #[test]
    fn sampled_points_are_covered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dom = BoundedDomain::unit_box(3).unwrap();
        let hs = (0..8)
            .map(|_| {
                let nrm: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                plane(&nrm, rng.random_range(-0.5..0.5))
            })
            .collect();
        let arr = Arrangement::new(3, hs).unwrap();
        let cells = bound_inc_enum(&arr, &Region::domain_only(&dom), None).unwrap();
        for _ in 0..100_000 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let s = arr.sign_vector(&p).unwrap();
            if s.is_cell() {
                assert!(cells.contains(&s), "missing {s}");
            }
        }
    }

    #[test]
    fn duplicate_hyperplanes_force_correlated_signs() {
        let dom = square();
        let h = plane(&[1.0, -1.0], 0.1);
        let arr = Arrangement::new(2, vec![h.clone(), h.clone(), h.negated()]).unwrap();
        let (e, i) = both(&arr, &dom);
        let got: Vec<String> = i.sign_vectors().map(|s| s.to_string()).collect();
        assert_eq!(got, vec!["++-", "--+"]);
        assert!(e.same_cells(&i));
    }
}
