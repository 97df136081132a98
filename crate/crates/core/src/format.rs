//! On-disk formats: weights (JSON and binary), domains, datasets and the
//! canonical enumeration report. Schemas are documented in `docs/formats.md`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{BoundedDomain, Hyperplane};
use crate::network::{Layer, Matrix, Mlp, NetworkSignVector};

pub const WEIGHTS_FORMAT: &str = "relucell-weights";
pub const DOMAIN_FORMAT: &str = "relucell-domain";
pub const REPORT_HEADER: &str = "relucell-report v1";
const BINARY_MAGIC: &[u8; 4] = b"RCWB";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightsDoc {
    format: String,
    version: u32,
    widths: Vec<usize>,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn weights_to_json(mlp: &Mlp) -> String {
    let doc = WeightsDoc {
        format: WEIGHTS_FORMAT.into(),
        version: VERSION,
        widths: mlp.all_widths(),
        layers: mlp
            .layers()
            .iter()
            .map(|l| LayerDoc {
                weights: (0..l.weights.rows()).map(|i| l.weights.row(i).to_vec()).collect(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("weights serialize");
    s.push('\n');
    s
}

fn mlp_from_parts(widths: &[usize], layers: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Mlp> {
    if widths.len() < 3 {
        return Err(Error::format(
            "weights",
            "widths must list input, hidden and output sizes",
        ));
    }
    if layers.len() != widths.len() - 1 {
        return Err(Error::format(
            "weights",
            format!(
                "{} widths need {} layers, found {}",
                widths.len(),
                widths.len() - 1,
                layers.len()
            ),
        ));
    }
    let built = layers
        .into_iter()
        .zip(widths.windows(2))
        .enumerate()
        .map(|(i, ((w, b), pair))| {
            if w.len() != pair[0] * pair[1] || b.len() != pair[1] {
                return Err(Error::format(
                    "weights",
                    format!("layer {} does not match declared widths {}x{}", i + 1, pair[1], pair[0]),
                ));
            }
            Layer::new(Matrix::new(pair[1], pair[0], w)?, b)
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(built).map_err(|e| Error::format("weights", e.to_string()))
}

pub fn weights_from_json(text: &str) -> Result<Mlp> {
    let doc: WeightsDoc = serde_json::from_str(text).map_err(|e| Error::format("weights", e.to_string()))?;
    if doc.format != WEIGHTS_FORMAT || doc.version != VERSION {
        return Err(Error::format(
            "weights",
            format!("unsupported format {:?} version {}", doc.format, doc.version),
        ));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.into_iter().enumerate() {
        let cols = doc.widths.get(i).copied().unwrap_or(0);
        if l.weights.iter().any(|r| r.len() != cols) {
            return Err(Error::format(
                "weights",
                format!("layer {} rows must have {cols} entries", i + 1),
            ));
        }
        layers.push((l.weights.concat(), l.bias));
    }
    mlp_from_parts(&doc.widths, layers)
}

pub fn weights_to_binary(mlp: &Mlp) -> Vec<u8> {
    let widths = mlp.all_widths();
    let mut out = Vec::new();
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        out.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    for l in mlp.layers() {
        for v in l.weights.data().iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn weights_from_binary(bytes: &[u8]) -> Result<Mlp> {
    let bad = |r: &str| Error::format("binary weights", r.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != BINARY_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    if count > 1024 {
        return Err(bad("implausible layer count"));
    }
    let widths = (0..count)
        .map(|_| take(4).map(|s| u32_at(s) as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::new();
    for pair in widths.windows(2) {
        let mut floats = |n: usize| -> Result<Vec<f64>> {
            let raw = take(n.checked_mul(8).ok_or_else(|| bad("overflow"))?)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let w = floats(pair[0] * pair[1])?;
        let b = floats(pair[1])?;
        layers.push((w, b));
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    mlp_from_parts(&widths, layers)
}

/// Loads weights, choosing the binary container when the file starts with
/// its magic bytes.
pub fn load_weights(path: &Path) -> Result<Mlp> {
    let bytes = read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        weights_from_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Error::format("weights", e.to_string()))?;
        weights_from_json(&text)
    }
}

pub fn save_weights(mlp: &Mlp, path: &Path) -> Result<()> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => weights_to_binary(mlp),
        _ => weights_to_json(mlp).into_bytes(),
    };
    write_atomic(path, &bytes)
}

/// Content hash of the model, independent of the file container.
pub fn model_sha256(mlp: &Mlp) -> String {
    hex::encode(Sha256::digest(weights_to_binary(mlp)))
}

pub fn domain_sha256(domain: &BoundedDomain) -> String {
    let mut h = Sha256::new();
    h.update((domain.dim() as u64).to_le_bytes());
    for hs in domain.halfspaces() {
        for v in hs.normal() {
            h.update(v.to_le_bytes());
        }
        h.update(hs.offset().to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct DomainDoc {
    format: String,
    version: u32,
    dim: usize,
    halfspaces: Vec<HalfspaceDoc>,
}

#[derive(Serialize, Deserialize)]
struct HalfspaceDoc {
    normal: Vec<f64>,
    offset: f64,
}

pub fn domain_to_json(domain: &BoundedDomain) -> String {
    let doc = DomainDoc {
        format: DOMAIN_FORMAT.into(),
        version: VERSION,
        dim: domain.dim(),
        halfspaces: domain
            .halfspaces()
            .iter()
            .map(|h| HalfspaceDoc {
                normal: h.normal().to_vec(),
                offset: h.offset(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("domain serialize");
    s.push('\n');
    s
}

pub fn domain_from_json(text: &str) -> Result<BoundedDomain> {
    let doc: DomainDoc = serde_json::from_str(text).map_err(|e| Error::format("domain", e.to_string()))?;
    if doc.format != DOMAIN_FORMAT || doc.version != VERSION {
        return Err(Error::format(
            "domain",
            format!("unsupported format {:?} version {}", doc.format, doc.version),
        ));
    }
    let hs = doc
        .halfspaces
        .into_iter()
        .map(|h| Hyperplane::new(h.normal, h.offset))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format("domain", e.to_string()))?;
    BoundedDomain::new(doc.dim, hs).map_err(|e| Error::format("domain", e.to_string()))
}

/// `unit-box` (dimension taken from `dim`) or a domain JSON file.
pub fn load_domain(source: &str, dim: usize) -> Result<BoundedDomain> {
    if source == "unit-box" {
        return BoundedDomain::unit_box(dim);
    }
    let path = Path::new(source);
    let text = String::from_utf8(read(path)?).map_err(|e| Error::format("domain", e.to_string()))?;
    let d = domain_from_json(&text)?;
    if d.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: d.dim(),
        });
    }
    Ok(d)
}

/// Labeled vectors: CSV with header `label,x0,...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub labels: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
}

pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let bad = |line: usize, r: String| Error::format("dataset", format!("line {line}: {r}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::format("dataset", "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(bad(1, "header must be label,x0,...".into()));
    }
    let dim = cols.len() - 1;
    let mut ds = Dataset {
        labels: Vec::new(),
        inputs: Vec::new(),
    };
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(bad(i + 1, format!("expected {} fields, got {}", dim + 1, fields.len())));
        }
        ds.labels
            .push(fields[0].parse().map_err(|e| bad(i + 1, format!("{e}")))?);
        ds.inputs.push(
            fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| bad(i + 1, format!("{e}"))))
                .collect::<Result<_>>()?,
        );
    }
    Ok(ds)
}

pub fn dataset_to_csv(ds: &Dataset) -> String {
    let dim = ds.inputs.first().map_or(0, Vec::len);
    let mut s = String::from("label");
    for j in 0..dim {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (l, x) in ds.labels.iter().zip(&ds.inputs) {
        let _ = write!(s, "{l}");
        for v in x {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = String::from_utf8(read(path)?).map_err(|e| Error::format("dataset", e.to_string()))?;
    dataset_from_csv(&text)
}

/// Canonical enumeration report. Contains nothing that depends on the run
/// mode or scheduling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub model_sha256: String,
    pub domain_sha256: String,
    /// `n_0, ..., n_L, m`.
    pub widths: Vec<usize>,
    /// `|C^1|, ..., |C^L|`.
    pub layer_cells: Vec<u64>,
    /// Sorted, distinct.
    pub sign_vectors: Vec<NetworkSignVector>,
}

impl Report {
    pub fn depth(&self) -> usize {
        self.widths.len().saturating_sub(2)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let mut s = String::new();
        let _ = writeln!(s, "{REPORT_HEADER}");
        let _ = writeln!(s, "model_sha256 {}", self.model_sha256);
        let _ = writeln!(s, "domain_sha256 {}", self.domain_sha256);
        let _ = writeln!(
            s,
            "widths {}",
            join(&self.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(
            s,
            "layer_cells {}",
            join(&self.layer_cells.iter().map(|c| c.to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(s, "cells {}", self.sign_vectors.len());
        for v in &self.sign_vectors {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Report> {
        let (report, cells) = Report::parse_unchecked(text)?;
        if report.sign_vectors.len() != cells {
            return Err(Error::format(
                "report",
                format!("header says {cells} cells, found {}", report.sign_vectors.len()),
            ));
        }
        Ok(report)
    }

    /// Parses without checking the declared cell count, which is returned
    /// alongside.
    pub fn parse_unchecked(text: &str) -> Result<(Report, usize)> {
        let bad = |r: String| Error::format("report", r);
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(format!("expected {key}, got {line:?}")))
        };
        let nums = |s: &str| -> Result<Vec<u64>> {
            if s.is_empty() {
                return Ok(vec![]);
            }
            s.split(',')
                .map(|v| v.parse().map_err(|e| bad(format!("{v:?}: {e}"))))
                .collect()
        };
        if text.lines().next() != Some(REPORT_HEADER) {
            return Err(bad("missing header".into()));
        }
        let _ = field("relucell-report");
        let model_sha256 = field("model_sha256")?;
        let domain_sha256 = field("domain_sha256")?;
        let widths = nums(&field("widths")?)?.into_iter().map(|w| w as usize).collect();
        let layer_cells = nums(&field("layer_cells")?)?;
        let cells: usize = field("cells")?.parse().map_err(|e| bad(format!("cells: {e}")))?;
        let sign_vectors = lines
            .map(|l| l.parse::<NetworkSignVector>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| bad(e.to_string()))?;
        Ok((
            Report {
                model_sha256,
                domain_sha256,
                widths,
                layer_cells,
                sign_vectors,
            },
            cells,
        ))
    }

    pub fn load(path: &Path) -> Result<Report> {
        let text = String::from_utf8(read(path)?).map_err(|e| Error::format("report", e.to_string()))?;
        Report::parse(&text)
    }
}
