//! Layerwise region enumeration, serial and with a work pool.

mod checkpoint;
mod parallel;
pub mod pool;
pub mod remote;

use std::time::Instant;

use crate::cellenum::{bound_inc_enum, Region, Subroutine};
use crate::error::{Error, Result};
use crate::format::{domain_sha256, model_sha256, Report};
use crate::geometry::{Arrangement, BoundedDomain, Sign, SignVector};
use crate::network::{EffectiveAffine, Mlp, NetworkSignVector};
use crate::witness::SignedConstraint;

pub use checkpoint::{read_task_times, write_outputs, Checkpoint};
pub use parallel::{par_layerwise1, PoolOptions};

/// One layer-1 sign vector to expand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub id: u64,
    pub s1: SignVector,
}

impl Task {
    /// All `2^{n_1}` tasks in binary-counting order.
    pub fn all(n1: usize) -> Result<Vec<Task>> {
        if n1 >= 40 {
            return Err(Error::usage(format!("2^{n1} layer-1 tasks is too many")));
        }
        Ok((0..1u64 << n1)
            .map(|id| Task {
                id,
                s1: SignVector::from_index(id, n1),
            })
            .collect())
    }
}

/// Inverse of the binary-counting task order.
pub fn task_id(s1: &SignVector) -> u64 {
    s1.signs()
        .iter()
        .fold(0, |id, &s| (id << 1) | u64::from(s == Sign::Neg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskResult {
    pub task_id: u64,
    pub s1: SignVector,
    /// Sorted full network sign vectors whose layer-1 part is `s1`.
    pub sign_vectors: Vec<NetworkSignVector>,
    /// Seconds.
    pub wall_time: f64,
    /// Cells found under `s1` at layers `1..=L`.
    pub layer_counts: Vec<u64>,
    pub lp_calls: u64,
}

impl TaskResult {
    /// True if both results name the same cells (timing aside).
    pub fn same_cells(&self, other: &TaskResult) -> bool {
        self.task_id == other.task_id
            && self.sign_vectors == other.sign_vectors
            && self.layer_counts == other.layer_counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskTiming {
    pub task_id: u64,
    pub s1: SignVector,
    pub cells: u64,
    pub wall_time: f64,
    pub lp_calls: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnumerationReport {
    pub report: Report,
    /// Per task in id order. Serial runs list realized layer-1 cells only.
    pub tasks: Vec<TaskTiming>,
    pub workers: usize,
    pub wall_time: f64,
    pub lp_calls: u64,
}

impl EnumerationReport {
    pub fn sign_vectors(&self) -> &[NetworkSignVector] {
        &self.report.sign_vectors
    }

    pub fn layer_cells(&self) -> &[u64] {
        &self.report.layer_cells
    }
}

pub(crate) fn check_inputs(mlp: &Mlp, domain: &BoundedDomain) -> Result<()> {
    if mlp.input_dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: mlp.input_dim(),
            got: domain.dim(),
        });
    }
    Ok(())
}

/// Strict constraints for the non-degenerate hyperplanes of `arr` under `s`,
/// or `None` if a degenerate member contradicts `s`.
fn signed_constraints(arr: &Arrangement, s: &SignVector) -> Result<Option<Vec<SignedConstraint>>> {
    let mut out = Vec::with_capacity(arr.len());
    for (h, &sign) in arr.hyperplanes().iter().zip(s.signs()) {
        match h.constant_sign() {
            Some(c) if c != sign => return Ok(None),
            Some(_) => {}
            None => out.push(SignedConstraint::new(h.clone(), sign)?),
        }
    }
    Ok(Some(out))
}

/// Depth-first expansion state below one layer-1 cell.
struct Expander<'a> {
    mlp: &'a Mlp,
    domain: &'a BoundedDomain,
    out: Vec<NetworkSignVector>,
    counts: Vec<u64>,
    lp_calls: u64,
}

impl Expander<'_> {
    /// `prefix` is a realized cell of depth `k` with effective map `eff`
    /// (layer `k`), region constraints `cell` and strict witness `w`.
    fn expand(
        &mut self,
        prefix: NetworkSignVector,
        eff: &EffectiveAffine,
        cell: &[SignedConstraint],
        w: &[f64],
    ) -> Result<()> {
        let k = prefix.depth();
        self.counts[k - 1] += 1;
        if k == self.mlp.depth() {
            self.out.push(prefix);
            return Ok(());
        }
        let next = eff.next(self.mlp, k + 1, prefix.layer(k))?;
        let arr = next.arrangement()?;
        let found = bound_inc_enum(&arr, &Region::new(self.domain, cell), Some(w))?;
        self.lp_calls += found.lp_calls();
        for (s, wit) in found.into_cells() {
            let Some(extra) = signed_constraints(&arr, &s)? else {
                continue;
            };
            let mut child_cell = cell.to_vec();
            child_cell.extend(extra);
            self.expand(prefix.extended(s), &next, &child_cell, &wit)?;
        }
        Ok(())
    }
}

/// All full network sign vectors below one realized layer-1 cell.
fn expand_cell(
    mlp: &Mlp,
    domain: &BoundedDomain,
    first: &EffectiveAffine,
    s1: &SignVector,
    cell: &[SignedConstraint],
    w: &[f64],
) -> Result<(Vec<NetworkSignVector>, Vec<u64>, u64)> {
    let mut ex = Expander {
        mlp,
        domain,
        out: Vec::new(),
        counts: vec![0; mlp.depth()],
        lp_calls: 0,
    };
    ex.expand(NetworkSignVector::new(vec![s1.clone()]), first, cell, w)?;
    Ok((ex.out, ex.counts, ex.lp_calls))
}

/// Runs the layer-2..L expansion for one layer-1 sign vector. An
/// unrealizable `s1` gives an empty result.
pub fn expand_task(mlp: &Mlp, domain: &BoundedDomain, task: &Task) -> Result<TaskResult> {
    check_inputs(mlp, domain)?;
    if task.s1.len() != mlp.width(1) || !task.s1.is_cell() {
        return Err(Error::usage(format!(
            "task {} needs a {{+,-}} vector of length {}",
            task.id,
            mlp.width(1)
        )));
    }
    let start = Instant::now();
    let first = EffectiveAffine::first(mlp);
    let arr = first.arrangement()?;
    let mut result = TaskResult {
        task_id: task.id,
        s1: task.s1.clone(),
        sign_vectors: Vec::new(),
        wall_time: 0.0,
        layer_counts: vec![0; mlp.depth()],
        lp_calls: 0,
    };
    if let Some(cell) = signed_constraints(&arr, &task.s1)? {
        result.lp_calls += 1;
        if let Some(w) = Region::new(domain, &cell).witness()?.into_point() {
            let (mut vs, counts, lps) = expand_cell(mlp, domain, &first, &task.s1, &cell, &w)?;
            vs.sort();
            result.sign_vectors = vs;
            result.layer_counts = counts;
            result.lp_calls += lps;
        }
    }
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Serial layerwise enumeration: layer 1 with the chosen subroutine, deeper
/// layers incrementally inside each parent cell.
pub fn layerwise_serial(mlp: &Mlp, domain: &BoundedDomain, layer1: Subroutine) -> Result<EnumerationReport> {
    check_inputs(mlp, domain)?;
    let start = Instant::now();
    let first = EffectiveAffine::first(mlp);
    let arr = first.arrangement()?;
    let cells1 = layer1.run(&arr, &Region::domain_only(domain))?;
    let mut lp_calls = cells1.lp_calls();
    let mut all = Vec::new();
    let mut counts = vec![0u64; mlp.depth()];
    let mut tasks = Vec::new();
    for (s1, w) in cells1.into_cells() {
        let Some(cell) = signed_constraints(&arr, &s1)? else {
            continue;
        };
        let cell_start = Instant::now();
        let (vs, c, lps) = expand_cell(mlp, domain, &first, &s1, &cell, &w)?;
        tasks.push(TaskTiming {
            task_id: task_id(&s1),
            s1,
            cells: vs.len() as u64,
            wall_time: cell_start.elapsed().as_secs_f64(),
            lp_calls: lps,
        });
        all.extend(vs);
        for (t, x) in counts.iter_mut().zip(c) {
            *t += x;
        }
        lp_calls += lps;
    }
    all.sort();
    Ok(EnumerationReport {
        report: Report {
            model_sha256: model_sha256(mlp),
            domain_sha256: domain_sha256(domain),
            widths: mlp.all_widths(),
            layer_cells: counts,
            sign_vectors: all,
        },
        tasks,
        workers: 1,
        wall_time: start.elapsed().as_secs_f64(),
        lp_calls,
    })
}

/// Merges per-task results into a report. Results must cover distinct tasks.
pub(crate) fn merge(
    mlp: &Mlp,
    domain: &BoundedDomain,
    mut results: Vec<TaskResult>,
    workers: usize,
    wall_time: f64,
) -> EnumerationReport {
    results.sort_by_key(|r| r.task_id);
    let mut counts = vec![0u64; mlp.depth()];
    let mut lp_calls = 0;
    let mut all = Vec::new();
    let mut tasks = Vec::with_capacity(results.len());
    for r in results {
        for (t, x) in counts.iter_mut().zip(&r.layer_counts) {
            *t += x;
        }
        lp_calls += r.lp_calls;
        tasks.push(TaskTiming {
            task_id: r.task_id,
            s1: r.s1,
            cells: r.sign_vectors.len() as u64,
            wall_time: r.wall_time,
            lp_calls: r.lp_calls,
        });
        all.extend(r.sign_vectors);
    }
    all.sort();
    EnumerationReport {
        report: Report {
            model_sha256: model_sha256(mlp),
            domain_sha256: domain_sha256(domain),
            widths: mlp.all_widths(),
            layer_cells: counts,
            sign_vectors: all,
        },
        tasks,
        workers,
        wall_time,
        lp_calls,
    }
}
