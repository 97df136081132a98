#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relucell_core::format::{domain_sha256, model_sha256, Report};
use relucell_core::network::CellConstraints;
use relucell_core::{find_witness, BoundedDomain, Mlp, NetworkSignVector, SignVector};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_relucell"))
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn relucell")
}

/// Every full network sign vector whose cell has a strict witness, found by
/// testing all `∏ 2^{n_l}` candidates.
pub fn brute_force(mlp: &Mlp, domain: &BoundedDomain) -> BTreeSet<NetworkSignVector> {
    let widths = mlp.widths();
    let total: usize = widths[1..].iter().sum();
    assert!(total <= 20, "oracle over 2^{total} candidates is too slow");
    let mut out = BTreeSet::new();
    for idx in 0..1u64 << total {
        let flat = SignVector::from_index(idx, total);
        let mut layers = Vec::new();
        let mut at = 0;
        for &n in &widths[1..] {
            layers.push(SignVector::new(flat.signs()[at..at + n].to_vec()));
            at += n;
        }
        let v = NetworkSignVector::new(layers);
        if let CellConstraints::Constraints(c) = mlp.cell_constraints(&v).unwrap() {
            if find_witness(&c, domain).unwrap().feasible {
                out.insert(v);
            }
        }
    }
    out
}

pub fn oracle_report(mlp: &Mlp, domain: &BoundedDomain) -> Report {
    let vs = brute_force(mlp, domain);
    let layer_cells = (1..=mlp.depth())
        .map(|l| vs.iter().map(|v| v.prefix(l)).collect::<BTreeSet<_>>().len() as u64)
        .collect();
    Report {
        model_sha256: model_sha256(mlp),
        domain_sha256: domain_sha256(domain),
        widths: mlp.all_widths(),
        layer_cells,
        sign_vectors: vs.into_iter().collect(),
    }
}

/// Golden fixture directories, each holding `model.json` and `report.txt`.
pub fn golden_models() -> Vec<PathBuf> {
    ["golden2", "golden3"].iter().map(|n| fixtures().join(n)).collect()
}
