//! Result files. Every CSV has a header row and a fixed column set.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mmr_core::grid::GridHierarchy;
use mmr_core::mmr::MmrTrace;
use serde::Serialize;

use crate::experiment::{MethodSummary, SampleRecord};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    // written explicitly so that an empty file still has its header
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `x y;x y;...` with full precision.
pub fn encode_positions(p: &[Vec<f64>]) -> String {
    p.iter()
        .map(|x| x.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Serialize)]
struct TraceRow<'a> {
    seed: u64,
    level: usize,
    stage: &'a str,
    pass: usize,
    upper_bound: f64,
    eta: f64,
    solved_total: usize,
    kept_total: usize,
    kept_max: usize,
    status: String,
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
    gap: f64,
    objective: f64,
    seconds: f64,
}

const TRACE_HEADER: &[&str] = &[
    "seed",
    "level",
    "stage",
    "pass",
    "upper_bound",
    "eta",
    "solved_total",
    "kept_total",
    "kept_max",
    "status",
    "iterations",
    "primal_residual",
    "dual_residual",
    "gap",
    "objective",
    "seconds",
];

pub fn write_trace(dir: &Path, traces: &[(u64, &MmrTrace)]) -> Result<PathBuf> {
    let path = dir.join("trace.csv");
    let rows = traces.iter().flat_map(|&(seed, t)| {
        t.levels.iter().flat_map(move |l| {
            l.passes.iter().enumerate().map(move |(k, p)| TraceRow {
                seed,
                level: l.level,
                stage: &p.stage,
                pass: k,
                upper_bound: l.upper_bound,
                eta: l.eta,
                solved_total: p.solved_sizes.iter().sum(),
                kept_total: p.kept_sizes.iter().sum(),
                kept_max: p.kept_sizes.iter().copied().max().unwrap_or(0),
                status: format!("{:?}", p.status),
                iterations: p.iterations,
                primal_residual: p.primal_residual,
                dual_residual: p.dual_residual,
                gap: p.gap,
                objective: p.objective,
                seconds: p.seconds,
            })
        })
    });
    write_rows(&path, rows, TRACE_HEADER)?;
    Ok(path)
}

#[derive(Serialize)]
struct SupportRow {
    seed: u64,
    particle: usize,
    part: usize,
    x: f64,
    y: f64,
}

/// One `supports_k<k>.csv` per level with the centroids of the selected
/// parts. Identical particles share the list under particle 0.
pub fn write_supports(dir: &Path, h: &GridHierarchy, traces: &[(u64, &MmrTrace)]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for level in 1..=h.levels() {
        let path = dir.join(format!("supports_k{level}.csv"));
        let mut rows = Vec::new();
        for &(seed, t) in traces {
            let Some(l) = t.levels.iter().find(|l| l.level == level) else {
                continue;
            };
            for (i, parts) in l.selected.iter().enumerate() {
                for &part in parts {
                    let c = h.part_centroid(level, part);
                    rows.push(SupportRow {
                        seed,
                        particle: i,
                        part,
                        x: c[0],
                        y: if h.dim() > 1 { c[1] } else { 0.0 },
                    });
                }
            }
        }
        write_rows(&path, rows, &["seed", "particle", "part", "x", "y"])?;
        out.push(path);
    }
    Ok(out)
}

#[derive(Serialize)]
struct SampleRow {
    seed: u64,
    lambda: f64,
    grid_energy: f64,
    refined_energy: f64,
    exact: bool,
    grid_positions: String,
    refined_positions: String,
}

pub fn write_samples(dir: &Path, samples: &[SampleRecord]) -> Result<PathBuf> {
    let path = dir.join("samples.csv");
    let rows = samples.iter().map(|s| SampleRow {
        seed: s.seed,
        lambda: s.lambda,
        grid_energy: s.grid_energy,
        refined_energy: s.refined_energy,
        exact: s.exact,
        grid_positions: encode_positions(&s.grid_positions),
        refined_positions: encode_positions(&s.refined_positions),
    });
    let header = ["seed", "lambda", "grid_energy", "refined_energy", "exact", "grid_positions", "refined_positions"];
    write_rows(&path, rows, &header)?;
    Ok(path)
}

pub fn write_comparison(dir: &Path, summary: &[MethodSummary]) -> Result<PathBuf> {
    let path = dir.join("comparison.csv");
    let header = ["method", "runs", "eps_p_mean", "eps_p_std", "eps_e_mean", "eps_e_std", "exact_rate"];
    write_rows(&path, summary, &header)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_round_trip_through_text() {
        let p = vec![vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-17]];
        let s = encode_positions(&p);
        let back: Vec<Vec<f64>> = s
            .split(';')
            .map(|x| x.split(' ').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(back, p);
    }
}
