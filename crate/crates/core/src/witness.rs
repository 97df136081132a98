//! Strict witness points via a slack-maximizing LP.
//!
//! For signed constraints `σ_i (a_i·x - b_i) > 0` and a closed domain
//! `a_j·x >= b_j` we solve
//!
//! ```text
//! maximize t  s.t.  σ_i (a_i·x - b_i) >= t,  a_j·x >= b_j,  t <= 1
//! ```
//!
//! and accept the query when the optimum `t*` reaches [`STRICT_MARGIN`].
//! Because every hyperplane has a unit normal, `t*` is the radius of the
//! largest ball (clipped by the domain) that fits inside the open cell.

use std::panic::{catch_unwind, AssertUnwindSafe};

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use crate::error::{Error, Result};
use crate::geometry::{single_axis, BoundedDomain, Hyperplane, Sign, ON_PLANE_TOL};

/// Minimum slack for a witness to count as strictly inside a cell.
pub const STRICT_MARGIN: f64 = 1e-7;

/// Upper cap on the slack variable; keeps the LP bounded.
const SLACK_CAP: f64 = 1.0;

/// How far outside a closed domain halfspace a returned point may sit before
/// the solve is reported as a numerical failure.
const DOMAIN_FEAS_TOL: f64 = 1e-7;

/// Requirement that a point lie strictly on one side of a hyperplane.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedConstraint {
    hyperplane: Hyperplane,
    sign: Sign,
}

impl SignedConstraint {
    pub fn new(hyperplane: Hyperplane, sign: Sign) -> Result<Self> {
        if sign == Sign::Zero {
            return Err(Error::usage("signed constraint requires + or -"));
        }
        if hyperplane.is_degenerate() {
            return Err(Error::usage("signed constraint on a degenerate hyperplane"));
        }
        Ok(SignedConstraint { hyperplane, sign })
    }

    pub fn hyperplane(&self) -> &Hyperplane {
        &self.hyperplane
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    /// `σ (a·p - b)`: positive iff `p` is strictly on the required side.
    pub fn slack_at(&self, p: &[f64]) -> f64 {
        self.sign.factor() * self.hyperplane.eval(p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WitnessResult {
    pub feasible: bool,
    pub point: Option<Vec<f64>>,
    /// Smallest slack achieved over the strict constraints at `point`.
    pub margin: Option<f64>,
}

impl WitnessResult {
    fn infeasible() -> Self {
        WitnessResult {
            feasible: false,
            point: None,
            margin: None,
        }
    }

    /// The witness point if the query was feasible.
    pub fn into_point(self) -> Option<Vec<f64>> {
        if self.feasible {
            self.point
        } else {
            None
        }
    }
}

struct SlackLp {
    problem: Problem,
    xs: Vec<Variable>,
    t: Variable,
    empty: bool,
}

impl SlackLp {
    /// Domain halfspaces on a single axis become variable bounds unless
    /// `slack_on_domain` asks for every halfspace to carry the slack.
    fn new(domain: &BoundedDomain, slack_on_domain: bool) -> Self {
        let dim = domain.dim();
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); dim];
        let mut rows: Vec<&Hyperplane> = Vec::new();
        for h in domain.halfspaces() {
            match single_axis(h.normal()) {
                Some((axis, coef)) if !slack_on_domain => {
                    let v = h.offset() / coef;
                    if coef > 0.0 {
                        bounds[axis].0 = bounds[axis].0.max(v);
                    } else {
                        bounds[axis].1 = bounds[axis].1.min(v);
                    }
                }
                _ => rows.push(h),
            }
        }
        let empty = bounds.iter().any(|(lo, hi)| lo > hi);
        let xs: Vec<Variable> = bounds
            .iter()
            .map(|&(lo, hi)| problem.add_var(0.0, if lo > hi { (lo, lo) } else { (lo, hi) }))
            .collect();
        let t = problem.add_var(1.0, (f64::NEG_INFINITY, SLACK_CAP));
        let mut lp = SlackLp { problem, xs, t, empty };
        for h in rows {
            lp.add_row(h, 1.0, slack_on_domain);
        }
        lp
    }

    /// Adds `factor (a·x - b) [- t] >= 0`.
    fn add_row(&mut self, h: &Hyperplane, factor: f64, with_slack: bool) {
        let mut expr: Vec<(Variable, f64)> = self
            .xs
            .iter()
            .zip(h.normal())
            .filter(|(_, &c)| c != 0.0)
            .map(|(&v, &c)| (v, factor * c))
            .collect();
        if with_slack {
            expr.push((self.t, -1.0));
        }
        self.problem
            .add_constraint(&expr[..], ComparisonOp::Ge, factor * h.offset());
    }

    /// Returns `(x, t*)` or `None` if the LP is infeasible.
    fn solve(self) -> Result<Option<(Vec<f64>, f64)>> {
        if self.empty {
            return Ok(None);
        }
        let SlackLp { problem, xs, t, .. } = self;
        match catch_unwind(AssertUnwindSafe(|| problem.solve())) {
            Ok(Ok(sol)) => {
                let x: Vec<f64> = xs.iter().map(|&v| sol[v]).collect();
                let t_star = sol[t];
                if x.iter().any(|v| !v.is_finite()) || !t_star.is_finite() {
                    return Err(Error::Solver("non-finite LP solution".into()));
                }
                Ok(Some((x, t_star)))
            }
            Ok(Err(minilp::Error::Infeasible)) => Ok(None),
            Ok(Err(minilp::Error::Unbounded)) => Err(Error::Solver("slack LP reported unbounded".into())),
            Err(_) => Err(Error::Solver("LP solver panicked".into())),
        }
    }
}

fn check_dims(constraints: &[&SignedConstraint], domain: &BoundedDomain) -> Result<()> {
    for c in constraints {
        if c.hyperplane.dim() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: c.hyperplane.dim(),
            });
        }
    }
    Ok(())
}

/// Finds a point strictly inside every signed constraint and inside the
/// closed domain, maximizing the smallest slack.
pub fn find_witness<'c>(
    constraints: impl IntoIterator<Item = &'c SignedConstraint>,
    domain: &BoundedDomain,
) -> Result<WitnessResult> {
    let constraints: Vec<&SignedConstraint> = constraints.into_iter().collect();
    check_dims(&constraints, domain)?;

    let mut lp = SlackLp::new(domain, false);
    for c in &constraints {
        lp.add_row(&c.hyperplane, c.sign.factor(), true);
    }
    let Some((x, t_star)) = lp.solve()? else {
        return Ok(WitnessResult::infeasible());
    };
    if t_star < STRICT_MARGIN {
        return Ok(WitnessResult::infeasible());
    }
    if domain.halfspaces().iter().any(|h| h.eval(&x) < -DOMAIN_FEAS_TOL) {
        return Err(Error::Solver("LP point violates the domain".into()));
    }
    // Recompute the margin at the returned point rather than trusting t*.
    let margin = constraints
        .iter()
        .map(|c| c.slack_at(&x))
        .fold(t_star.min(SLACK_CAP), f64::min);
    Ok(WitnessResult {
        feasible: margin >= STRICT_MARGIN,
        point: Some(x),
        margin: Some(margin),
    })
}

/// A point in the interior of the domain, found with the slack applied to
/// every domain halfspace. Infeasible when the domain is empty or flat.
pub fn witness_in_domain(domain: &BoundedDomain) -> Result<WitnessResult> {
    let lp = SlackLp::new(domain, true);
    let Some((x, t_star)) = lp.solve()? else {
        return Ok(WitnessResult::infeasible());
    };
    let margin = domain
        .halfspaces()
        .iter()
        .map(|h| h.eval(&x))
        .fold(t_star.min(SLACK_CAP), f64::min);
    Ok(WitnessResult {
        feasible: margin >= STRICT_MARGIN,
        point: Some(x),
        margin: Some(margin),
    })
}

/// True if `p` satisfies every constraint with at least `min_slack` and lies
/// in the closed domain.
pub fn is_strict_witness<'c>(
    p: &[f64],
    constraints: impl IntoIterator<Item = &'c SignedConstraint>,
    domain: &BoundedDomain,
    min_slack: f64,
) -> bool {
    domain
        .halfspaces()
        .iter()
        .all(|h| h.eval(p) >= -ON_PLANE_TOL.max(DOMAIN_FEAS_TOL))
        && constraints.into_iter().all(|c| c.slack_at(p) >= min_slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Arrangement;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(n: &[f64], b: f64) -> Hyperplane {
        Hyperplane::new(n.to_vec(), b).unwrap()
    }

    fn sc(n: &[f64], b: f64, s: Sign) -> SignedConstraint {
        SignedConstraint::new(plane(n, b), s).unwrap()
    }

    #[test]
    fn half_interval_is_feasible() {
        let dom = BoundedDomain::unit_box(1).unwrap();
        let c = sc(&[1.0], 0.5, Sign::Pos);
        let r = find_witness([&c], &dom).unwrap();
        assert!(r.feasible);
        let p = r.point.unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9, "{p:?}");
        assert!(r.margin.unwrap() >= 0.25);
    }

    #[test]
    fn contradictory_signs_are_infeasible() {
        let dom = BoundedDomain::unit_box(1).unwrap();
        let a = sc(&[1.0], 0.5, Sign::Pos);
        let b = sc(&[1.0], 0.5, Sign::Neg);
        assert!(!find_witness([&a, &b], &dom).unwrap().feasible);
    }

    #[test]
    fn boundary_only_contact_is_rejected() {
        // x > 1 touches [0,1] only at x = 1.
        let dom = BoundedDomain::unit_box(1).unwrap();
        let c = sc(&[1.0], 1.0, Sign::Pos);
        assert!(!find_witness([&c], &dom).unwrap().feasible);
    }

    #[test]
    fn constraint_sign_rules() {
        assert!(SignedConstraint::new(plane(&[1.0], 0.0), Sign::Zero).is_err());
        assert!(SignedConstraint::new(plane(&[0.0], 1.0), Sign::Pos).is_err());
        let dom = BoundedDomain::unit_box(2).unwrap();
        let c = sc(&[1.0], 0.0, Sign::Pos);
        assert!(matches!(find_witness([&c], &dom), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn domain_interior_witness() {
        let r = witness_in_domain(&BoundedDomain::unit_box(2).unwrap()).unwrap();
        assert!(r.feasible);
        assert!(r.point.unwrap().iter().all(|&v| v > 0.0 && v < 1.0));

        let empty = BoundedDomain::new(1, vec![plane(&[1.0], 0.0), plane(&[-1.0], 1.0)]).unwrap();
        assert!(!witness_in_domain(&empty).unwrap().feasible);

        // A flat domain has no interior even though it is non-empty.
        let flat = BoundedDomain::new(1, vec![plane(&[1.0], 0.5), plane(&[-1.0], -0.5)]).unwrap();
        assert!(!witness_in_domain(&flat).unwrap().feasible);

        let big = witness_in_domain(&BoundedDomain::unit_box(784).unwrap()).unwrap();
        assert!(big.feasible);
        assert!(big.point.unwrap().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn general_domain_halfspaces() {
        // Triangle x >= 0, y >= 0, x + y <= 1 given with a non-axis row.
        let dom = BoundedDomain::new(
            2,
            vec![
                plane(&[1.0, 0.0], 0.0),
                plane(&[0.0, 1.0], 0.0),
                plane(&[-1.0, -1.0], -1.0),
            ],
        )
        .unwrap();
        let c = sc(&[1.0, 1.0], 0.9, Sign::Pos);
        let r = find_witness([&c], &dom).unwrap();
        assert!(r.feasible);
        assert!(dom.contains(r.point.as_ref().unwrap()));
        let c2 = sc(&[1.0, 1.0], 1.1, Sign::Pos);
        assert!(!find_witness([&c2], &dom).unwrap().feasible);
    }

    /// Grid-sampling oracle: does any point of a 200x200 grid realize `target`?
    fn grid_realizes(arr: &Arrangement, target: &str) -> bool {
        let n = 200;
        (0..n).any(|i| {
            (0..n).any(|j| {
                let p = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                arr.sign_vector(&p).unwrap().to_string() == target
            })
        })
    }

    #[test]
    fn all_positive_cell_agrees_with_grid_oracle() {
        let dom = BoundedDomain::unit_box(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 40 {
            let planes: Vec<Hyperplane> = (0..3)
                .map(|_| {
                    let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let c = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
                    let n = [th.cos(), th.sin()];
                    plane(&n, n[0] * c[0] + n[1] * c[1])
                })
                .collect();
            let arr = Arrangement::new(2, planes.clone()).unwrap();
            let cons: Vec<_> = planes
                .iter()
                .map(|h| SignedConstraint::new(h.clone(), Sign::Pos).unwrap())
                .collect();
            let r = find_witness(&cons, &dom).unwrap();
            // Skip cells thinner than the grid pitch; the oracle cannot see them.
            if r.feasible && r.margin.unwrap() < 0.01 {
                continue;
            }
            if !r.feasible {
                let thin = find_witness_relaxed(&cons, &dom);
                if thin {
                    continue;
                }
            }
            assert_eq!(r.feasible, grid_realizes(&arr, "+++"), "{planes:?}");
            checked += 1;
        }
    }

    /// Feasible with a tiny positive slack but below the strict margin?
    fn find_witness_relaxed(cons: &[SignedConstraint], dom: &BoundedDomain) -> bool {
        let mut lp = SlackLp::new(dom, false);
        for c in cons {
            lp.add_row(c.hyperplane(), c.sign().factor(), true);
        }
        matches!(lp.solve().unwrap(), Some((_, t)) if t > -0.01)
    }

    #[test]
    fn soundness_and_monotonicity_on_random_queries() {
        let dom = BoundedDomain::unit_box(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.random_range(1..8);
            let cons: Vec<_> = (0..k)
                .map(|_| {
                    let n: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let s = if rng.random_bool(0.5) { Sign::Pos } else { Sign::Neg };
                    sc(&n, rng.random_range(-0.5..0.5), s)
                })
                .collect();
            let all = find_witness(&cons, &dom).unwrap();
            if all.feasible {
                let p = all.point.as_ref().unwrap();
                assert!(dom.contains(p));
                for c in &cons {
                    assert_eq!(c.hyperplane().side_of(p).unwrap(), c.sign());
                }
            }
            // Dropping the last constraint can only help.
            let fewer = find_witness(&cons[..k - 1], &dom).unwrap();
            assert!(!all.feasible || fewer.feasible);
        }
    }
}
