//! Result directory: one file per finished task plus a manifest of
//! acknowledged ids, enough to resume an interrupted run.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::json;

use super::{EnumerationReport, TaskResult};
use crate::error::{Error, Result};
use crate::format::write_atomic;
use crate::geometry::SignVector;
use crate::network::NetworkSignVector;

const MANIFEST_HEADER: &str = "relucell-manifest v1";

pub struct Checkpoint {
    dir: PathBuf,
    manifest: Mutex<File>,
}

fn task_file(dir: &Path, id: u64) -> PathBuf {
    dir.join("tasks").join(format!("t{id:08}.txt"))
}

fn task_to_text(r: &TaskResult) -> String {
    let counts: Vec<String> = r.layer_counts.iter().map(u64::to_string).collect();
    let mut s = String::new();
    let _ = writeln!(s, "task {} {}", r.task_id, r.s1);
    let _ = writeln!(s, "wall_time {}", r.wall_time);
    let _ = writeln!(s, "lp_calls {}", r.lp_calls);
    let _ = writeln!(s, "layer_counts {}", counts.join(","));
    let _ = writeln!(s, "cells {}", r.sign_vectors.len());
    for v in &r.sign_vectors {
        let _ = writeln!(s, "{v}");
    }
    s
}

fn task_from_text(text: &str) -> Result<TaskResult> {
    let bad = |r: &str| Error::format("task file", r.to_string());
    let mut lines = text.lines();
    let mut field = |key: &str| -> Result<String> {
        lines
            .next()
            .and_then(|l| l.strip_prefix(key))
            .and_then(|l| l.strip_prefix(' '))
            .map(str::to_owned)
            .ok_or_else(|| bad(&format!("missing {key}")))
    };
    let head = field("task")?;
    let (id, s1) = head.split_once(' ').ok_or_else(|| bad("bad task line"))?;
    let task_id: u64 = id.parse().map_err(|_| bad("bad task id"))?;
    let s1: SignVector = s1.parse()?;
    let wall_time: f64 = field("wall_time")?.parse().map_err(|_| bad("bad wall_time"))?;
    let lp_calls: u64 = field("lp_calls")?.parse().map_err(|_| bad("bad lp_calls"))?;
    let counts = field("layer_counts")?;
    let layer_counts = counts
        .split(',')
        .map(|c| c.parse().map_err(|_| bad("bad layer_counts")))
        .collect::<Result<Vec<u64>>>()?;
    let cells: usize = field("cells")?.parse().map_err(|_| bad("bad cells"))?;
    let sign_vectors = lines.map(str::parse::<NetworkSignVector>).collect::<Result<Vec<_>>>()?;
    if sign_vectors.len() != cells {
        return Err(bad("truncated"));
    }
    if sign_vectors
        .iter()
        .any(|v| v.depth() != layer_counts.len() || v.layer(1) != &s1)
    {
        return Err(bad("sign vector does not fit the task"));
    }
    Ok(TaskResult {
        task_id,
        s1,
        sign_vectors,
        wall_time,
        layer_counts,
        lp_calls,
    })
}

impl Checkpoint {
    /// Opens `dir` for a run over `n1` layer-1 neurons. With `resume`, the
    /// results already listed in a matching manifest are returned; otherwise
    /// any previous state is discarded.
    pub fn open(
        dir: &Path,
        model_sha256: &str,
        domain_sha256: &str,
        n1: usize,
        resume: bool,
    ) -> Result<(Checkpoint, Vec<TaskResult>)> {
        let header = format!("{MANIFEST_HEADER} {model_sha256} {domain_sha256} {n1}");
        let tasks = dir.join("tasks");
        let manifest_path = dir.join("manifest.txt");
        let mut done = Vec::new();
        let existing = if resume && manifest_path.exists() {
            Some(fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?)
        } else {
            None
        };
        match existing {
            Some(text) => {
                let mut lines = text.split_inclusive('\n');
                if lines.next().map(str::trim_end) != Some(header.as_str()) {
                    return Err(Error::usage(format!(
                        "{} belongs to a different model, domain or width; refusing to resume",
                        manifest_path.display()
                    )));
                }
                let mut ids: Vec<u64> = lines
                    .filter(|l| l.ends_with('\n'))
                    .filter_map(|l| l.trim().parse().ok())
                    .collect();
                ids.sort_unstable();
                ids.dedup();
                for id in ids {
                    let path = task_file(dir, id);
                    match fs::read_to_string(&path)
                        .map_err(|e| Error::io(&path, e))
                        .and_then(|t| task_from_text(&t))
                    {
                        Ok(r) if r.task_id == id => done.push(r),
                        Ok(_) | Err(_) => {
                            log::warn!("task {id} listed in manifest but its file is unusable; redoing it")
                        }
                    }
                }
                // Rewrite so a torn trailing line cannot corrupt later appends.
                let mut clean = header.clone();
                clean.push('\n');
                for r in &done {
                    let _ = writeln!(clean, "{}", r.task_id);
                }
                write_atomic(&manifest_path, clean.as_bytes())?;
            }
            None => {
                if tasks.exists() {
                    fs::remove_dir_all(&tasks).map_err(|e| Error::io(&tasks, e))?;
                }
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_atomic(&manifest_path, format!("{header}\n").as_bytes())?;
            }
        }
        fs::create_dir_all(&tasks).map_err(|e| Error::io(&tasks, e))?;
        let manifest = OpenOptions::new()
            .append(true)
            .open(&manifest_path)
            .map_err(|e| Error::io(&manifest_path, e))?;
        Ok((
            Checkpoint {
                dir: dir.to_path_buf(),
                manifest: Mutex::new(manifest),
            },
            done,
        ))
    }

    /// Persists a result, then lists it in the manifest.
    pub fn record(&self, r: &TaskResult) -> Result<()> {
        let path = task_file(&self.dir, r.task_id);
        write_atomic(&path, task_to_text(r).as_bytes())?;
        let mut m = self.manifest.lock().unwrap_or_else(|p| p.into_inner());
        let manifest_path = self.dir.join("manifest.txt");
        m.write_all(format!("{}\n", r.task_id).as_bytes())
            .and_then(|_| m.sync_data())
            .map_err(|e| Error::io(manifest_path, e))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Writes `report.txt`, `tasks.csv` and `run.json` into `dir`.
pub fn write_outputs(dir: &Path, rep: &EnumerationReport, mode: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("report.txt"), rep.report.to_text().as_bytes())?;
    let mut csv = String::from("task_id,s1,cells,wall_time,lp_calls\n");
    for t in &rep.tasks {
        let _ = writeln!(csv, "{},{},{},{},{}", t.task_id, t.s1, t.cells, t.wall_time, t.lp_calls);
    }
    write_atomic(&dir.join("tasks.csv"), csv.as_bytes())?;
    let run = json!({
        "mode": mode,
        "workers": rep.workers,
        "wall_time": rep.wall_time,
        "lp_calls": rep.lp_calls,
        "tasks": rep.tasks.len(),
        "layer_cells": rep.report.layer_cells,
        "cells": rep.report.sign_vectors.len(),
    });
    let mut text = serde_json::to_string_pretty(&run).expect("run.json serialize");
    text.push('\n');
    write_atomic(&dir.join("run.json"), text.as_bytes())
}

/// Reads `tasks.csv` back as `(task_id, cells, wall_time)` rows.
pub fn read_task_times(path: &Path) -> Result<Vec<(u64, u64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |i: usize| Error::format("tasks.csv", format!("line {}", i + 1));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i));
            }
            Ok((
                f[0].parse().map_err(|_| bad(i))?,
                f[2].parse().map_err(|_| bad(i))?,
                f[3].parse().map_err(|_| bad(i))?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: u64) -> TaskResult {
        TaskResult {
            task_id: id,
            s1: SignVector::from_index(id, 2),
            sign_vectors: vec![format!("{}|+-", SignVector::from_index(id, 2)).parse().unwrap()],
            wall_time: 0.5,
            layer_counts: vec![1, 1],
            lp_calls: 4,
        }
    }

    #[test]
    fn task_text_round_trip() {
        let r = result(2);
        assert_eq!(task_from_text(&task_to_text(&r)).unwrap(), r);
        let text = task_to_text(&r);
        assert!(task_from_text(&text[..text.len() - 4]).is_err());
    }

    #[test]
    fn resume_restores_recorded_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let (cp, done) = Checkpoint::open(dir.path(), "m", "d", 2, false).unwrap();
        assert!(done.is_empty());
        cp.record(&result(1)).unwrap();
        cp.record(&result(3)).unwrap();
        drop(cp);
        // Torn trailing write.
        let mut f = OpenOptions::new()
            .append(true)
            .open(dir.path().join("manifest.txt"))
            .unwrap();
        f.write_all(b"2").unwrap();
        drop(f);
        let (_, done) = Checkpoint::open(dir.path(), "m", "d", 2, true).unwrap();
        assert_eq!(done, vec![result(1), result(3)]);
        assert!(Checkpoint::open(dir.path(), "other", "d", 2, true).is_err());
        let (_, done) = Checkpoint::open(dir.path(), "m", "d", 2, false).unwrap();
        assert!(done.is_empty());
    }

    #[test]
    fn missing_task_file_is_redone() {
        let dir = tempfile::tempdir().unwrap();
        let (cp, _) = Checkpoint::open(dir.path(), "m", "d", 2, false).unwrap();
        cp.record(&result(0)).unwrap();
        cp.record(&result(1)).unwrap();
        fs::remove_file(task_file(dir.path(), 0)).unwrap();
        let (_, done) = Checkpoint::open(dir.path(), "m", "d", 2, true).unwrap();
        assert_eq!(done, vec![result(1)]);
    }
}
