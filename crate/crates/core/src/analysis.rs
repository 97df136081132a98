//! Statistics over finished enumeration reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::format::{Dataset, Report};
use crate::geometry::{Sign, SignVector};
use crate::network::{Mlp, NetworkSignVector};

/// Number of active neurons in a layer-1 sign vector.
pub fn region_dimension(s1: &SignVector) -> usize {
    s1.count(Sign::Pos)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DimensionRow {
    pub dim: usize,
    pub cells: u64,
    /// Layer-2 cells inside those layer-1 cells, summed.
    pub subcells: u64,
    pub mean_task_time: Option<f64>,
}

impl DimensionRow {
    pub fn mean_subcells(&self) -> f64 {
        self.subcells as f64 / self.cells as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionStats {
    pub layer_cells: Vec<u64>,
    /// Empty when the network has a single hidden layer.
    pub dimensions: Vec<DimensionRow>,
    pub single_layer: bool,
}

impl RegionStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dim,layer1_cells,layer2_cells,mean_subcells,mean_task_time\n");
        for r in &self.dimensions {
            let t = r.mean_task_time.map_or(String::new(), |t| t.to_string());
            let _ = writeln!(s, "{},{},{},{},{}", r.dim, r.cells, r.subcells, r.mean_subcells(), t);
        }
        s
    }
}

/// Layer-2 cell count under each layer-1 cell.
fn subcells_by_parent(report: &Report) -> BTreeMap<&SignVector, u64> {
    let mut seen: BTreeSet<(&SignVector, &SignVector)> = BTreeSet::new();
    let mut out = BTreeMap::new();
    for v in &report.sign_vectors {
        let (s1, s2) = (v.layer(1), v.layer(2));
        if seen.insert((s1, s2)) {
            *out.entry(s1).or_insert(0) += 1;
        }
    }
    out
}

/// Groups layer-1 cells by region dimension. `task_times` maps a layer-1
/// sign vector to its task wall time, when known.
pub fn subcell_histogram(report: &Report, task_times: Option<&HashMap<SignVector, f64>>) -> RegionStats {
    if report.depth() < 2 {
        return RegionStats {
            layer_cells: report.layer_cells.clone(),
            dimensions: Vec::new(),
            single_layer: true,
        };
    }
    let mut rows: BTreeMap<usize, (DimensionRow, f64, u64)> = BTreeMap::new();
    for (s1, n) in subcells_by_parent(report) {
        let dim = region_dimension(s1);
        let entry = rows.entry(dim).or_insert_with(|| {
            (
                DimensionRow {
                    dim,
                    cells: 0,
                    subcells: 0,
                    mean_task_time: None,
                },
                0.0,
                0,
            )
        });
        entry.0.cells += 1;
        entry.0.subcells += n;
        if let Some(t) = task_times.and_then(|m| m.get(s1)) {
            entry.1 += t;
            entry.2 += 1;
        }
    }
    RegionStats {
        layer_cells: report.layer_cells.clone(),
        dimensions: rows
            .into_values()
            .map(|(mut r, t, k)| {
                r.mean_task_time = (k > 0).then(|| t / k as f64);
                r
            })
            .collect(),
        single_layer: false,
    }
}

/// `ratio(n) ≈ amplitude · exp(−rate · n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub amplitude: f64,
    pub rate: f64,
    /// `log(ratio) − log(fitted)` per input point.
    pub residuals: Vec<f64>,
}

impl DecayFit {
    /// Cell factor `ζ(n) = exp(−rate·n)`.
    pub fn zeta(&self, n: f64) -> f64 {
        (-self.rate * n).exp()
    }

    pub fn predict(&self, n: f64) -> f64 {
        self.amplitude * self.zeta(n)
    }
}

/// Ordinary least squares `y ≈ slope·x + intercept`, with R².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::usage("linear fit needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::usage("linear fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Log-linear least squares on `(width, ratio)` points.
pub fn fit_decay(points: &[(f64, f64)]) -> Result<DecayFit> {
    if let Some(&(n, r)) = points.iter().find(|(_, r)| !(*r > 0.0 && *r <= 1.0)) {
        return Err(Error::usage(format!("ratio {r} at width {n} is outside (0, 1]")));
    }
    let distinct: BTreeSet<u64> = points.iter().map(|(n, _)| n.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(Error::usage("decay fit needs at least three distinct widths"));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let fit = linear_fit(&x, &y)?;
    let residuals = x
        .iter()
        .zip(&y)
        .map(|(a, b)| b - (fit.slope * a + fit.intercept))
        .collect();
    let out = DecayFit {
        amplitude: fit.intercept.exp(),
        rate: -fit.slope,
        residuals,
    };
    if !out.amplitude.is_finite() || !out.rate.is_finite() {
        return Err(Error::usage("decay fit did not converge to finite parameters"));
    }
    Ok(out)
}

/// Per layer `l >= 2`: `(l, n_l, max_i |C^l | C^{l-1}_i| / |C^l|)`.
pub fn decay_ratios(report: &Report) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for l in 2..=report.depth() {
        let mut children: HashMap<NetworkSignVector, BTreeSet<&SignVector>> = HashMap::new();
        for v in &report.sign_vectors {
            children.entry(v.prefix(l - 1)).or_default().insert(v.layer(l));
        }
        let total: usize = children.values().map(BTreeSet::len).sum();
        let max = children.values().map(BTreeSet::len).max().unwrap_or(0);
        if total > 0 {
            out.push((l, report.widths[l], max as f64 / total as f64));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeStats {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator).
    pub std: f64,
    /// Fisher-Pearson `g1 = m3 / m2^{3/2}`; 0 when the variance is 0.
    pub skew: f64,
    pub zero_variance: bool,
}

pub fn task_time_stats(times: &[f64]) -> Result<TimeStats> {
    if times.len() < 2 {
        return Err(Error::usage("task time statistics need at least two tasks"));
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let m2 = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let m3 = times.iter().map(|t| (t - mean).powi(3)).sum::<f64>() / n;
    let zero_variance = m2 == 0.0;
    Ok(TimeStats {
        mean,
        std: (m2 * n / (n - 1.0)).sqrt(),
        skew: if zero_variance { 0.0 } else { m3 / m2.powf(1.5) },
        zero_variance,
    })
}

/// Equal-width histogram of task times: `(lower, upper, count)` rows.
pub fn time_histogram(times: &[f64], bins: usize) -> Vec<(f64, f64, u64)> {
    if times.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0u64; bins];
    for t in times {
        let i = (((t - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

/// `Σ_{k=0}^{d} C(n, k)`, saturating at `u128::MAX`.
pub fn schlafli_bound(n: u64, d: u64) -> u128 {
    let mut total: u128 = 0;
    let mut term: u128 = 1;
    for k in 0..=d.min(n) {
        if k > 0 {
            // C(n,k) = C(n,k-1)·(n-k+1)/k, exact in integers.
            term = match term.checked_mul((n - k + 1) as u128) {
                Some(v) => v / k as u128,
                None => return u128::MAX,
            };
        }
        total = match total.checked_add(term) {
            Some(v) => v,
            None => return u128::MAX,
        };
    }
    total
}

/// Fraction of samples whose output argmax equals the label.
pub fn accuracy_eval(mlp: &Mlp, data: &Dataset) -> Result<f64> {
    if data.inputs.is_empty() {
        return Err(Error::usage("accuracy needs a non-empty dataset"));
    }
    let m = mlp.output_dim();
    let mut correct = 0usize;
    for (x, &label) in data.inputs.iter().zip(&data.labels) {
        if label >= m {
            return Err(Error::usage(format!("label {label} is not below the output width {m}")));
        }
        let (y, _) = mlp.forward(x)?;
        let arg = y
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > y[best] { i } else { best });
        correct += usize::from(arg == label);
    }
    Ok(correct as f64 / data.inputs.len() as f64)
}
