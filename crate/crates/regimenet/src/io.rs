//! File formats: sparse panel edge lists, covariate tables, truth files,
//! line-delimited draw records, run manifests and the flat summary tables.
//!
//! All numeric output is written with 17 significant digits so re-ingestion
//! is lossless; indices are 1-based on disk and 0-based in memory.

use crate::gibbs::{ChainConfig, Draw};
use crate::model::{NetworkPanel, PriorConfig};
use crate::pooled::PooledDraw;
use crate::simulate::SimTruth;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at byte offset {offset} (line {line}): {detail}")]
    Parse {
        path: PathBuf,
        offset: usize,
        line: usize,
        detail: String,
    },
    #[error("validation: {0}")]
    Validation(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// Full-precision float formatting (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

// ---------------------------------------------------------------------------
// Panel and covariates.
// ---------------------------------------------------------------------------

/// Sparse edge list: a shape line, a header, then one `t,i,j,k` row per
/// nonzero entry (1-based). Zeros are implicit.
pub fn write_panel(path: &Path, panel: &NetworkPanel) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut inner = || -> std::io::Result<()> {
        writeln!(w, "shape,{},{},{},{}", panel.i, panel.j, panel.k, panel.t)?;
        writeln!(w, "t,i,j,k")?;
        for t in 0..panel.t {
            for k in 0..panel.k {
                for j in 0..panel.j {
                    for i in 0..panel.i {
                        if panel.entry(i, j, k, t) == 1 {
                            writeln!(w, "{},{},{},{}", t + 1, i + 1, j + 1, k + 1)?;
                        }
                    }
                }
            }
        }
        w.flush()
    };
    inner().map_err(io_err(path))
}

/// Covariate table: header `t,z1..zQ`, then one row per time (1-based).
pub fn write_covariates(path: &Path, panel: &NetworkPanel) -> Result<(), IoError> {
    write_covariate_matrix(path, panel.t, panel.q, panel.raw_z())
}

pub fn write_covariate_matrix(path: &Path, t_len: usize, q: usize, z: &[f64]) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut inner = || -> std::io::Result<()> {
        let header: Vec<String> = (1..=q).map(|c| format!("z{c}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for t in 0..t_len {
            let row: Vec<String> = z[t * q..(t + 1) * q].iter().map(|&v| fmt_f64(v)).collect();
            writeln!(w, "{},{}", t + 1, row.join(","))?;
        }
        w.flush()
    };
    inner().map_err(io_err(path))
}

/// Read a panel from its edge list and covariate table.
pub fn read_panel(panel_path: &Path, covariates_path: &Path) -> Result<NetworkPanel, IoError> {
    let (dims, edges) = read_edge_list(panel_path)?;
    let (i, j, k, t) = dims;
    let (t_cov, q, z) = read_covariate_table(covariates_path)?;
    if t_cov != t {
        return Err(IoError::Validation(format!(
            "panel shape (I={i}, J={j}, K={k}, T={t}) does not match covariate table with {t_cov} rows of {q} covariates"
        )));
    }
    let cells = i * j * k;
    let mut x = vec![0u8; cells * t];
    for (et, ei, ej, ek) in edges {
        x[(et - 1) * cells + (ei - 1) + i * ((ej - 1) + j * (ek - 1))] = 1;
    }
    NetworkPanel::new((i, j, k, t, q), x, z).map_err(|e| IoError::Validation(e.to_string()))
}

#[allow(clippy::type_complexity)]
fn read_edge_list(path: &Path) -> Result<((usize, usize, usize, usize), Vec<(usize, usize, usize, usize)>), IoError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(f);
    let mut offset = 0usize;
    let mut dims = None;
    let mut edges = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let parse_fail = |detail: String| IoError::Parse {
            path: path.to_path_buf(),
            offset,
            line: line_no + 1,
            detail,
        };
        let trimmed = line.trim();
        if line_no == 0 {
            let parts: Vec<&str> = trimmed.split(',').collect();
            if parts.len() != 5 || parts[0] != "shape" {
                return Err(parse_fail("expected `shape,I,J,K,T`".into()));
            }
            let vals: Result<Vec<usize>, _> = parts[1..].iter().map(|p| p.parse()).collect();
            let vals = vals.map_err(|e| parse_fail(format!("bad shape entry: {e}")))?;
            dims = Some((vals[0], vals[1], vals[2], vals[3]));
        } else if line_no == 1 {
            if trimmed != "t,i,j,k" {
                return Err(parse_fail("expected header `t,i,j,k`".into()));
            }
        } else if !trimmed.is_empty() {
            let vals: Result<Vec<usize>, _> = trimmed.split(',').map(|p| p.trim().parse()).collect();
            let vals = vals.map_err(|e| parse_fail(format!("bad edge row: {e}")))?;
            if vals.len() != 4 {
                return Err(parse_fail("edge rows need four entries".into()));
            }
            let (i, j, k, t) = dims.expect("shape line first");
            let (et, ei, ej, ek) = (vals[0], vals[1], vals[2], vals[3]);
            if et == 0 || et > t || ei == 0 || ei > i || ej == 0 || ej > j || ek == 0 || ek > k {
                return Err(parse_fail(format!(
                    "edge ({et},{ei},{ej},{ek}) outside shape (T={t}, I={i}, J={j}, K={k})"
                )));
            }
            edges.push((et, ei, ej, ek));
        }
        offset += line.len() + 1;
    }
    let dims = dims.ok_or_else(|| IoError::Parse {
        path: path.to_path_buf(),
        offset: 0,
        line: 1,
        detail: "empty panel file".into(),
    })?;
    Ok((dims, edges))
}

fn read_covariate_table(path: &Path) -> Result<(usize, usize, Vec<f64>), IoError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(f);
    let mut offset = 0usize;
    let mut q = 0usize;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let parse_fail = |detail: String| IoError::Parse {
            path: path.to_path_buf(),
            offset,
            line: line_no + 1,
            detail,
        };
        let trimmed = line.trim();
        if line_no == 0 {
            let parts: Vec<&str> = trimmed.split(',').collect();
            if parts.len() < 2 || parts[0] != "t" {
                return Err(parse_fail("expected header `t,z1..zQ`".into()));
            }
            q = parts.len() - 1;
        } else if !trimmed.is_empty() {
            let parts: Vec<&str> = trimmed.split(',').collect();
            if parts.len() != q + 1 {
                return Err(parse_fail(format!("expected {} columns", q + 1)));
            }
            let t: usize = parts[0]
                .trim()
                .parse()
                .map_err(|e| parse_fail(format!("bad time index: {e}")))?;
            let vals: Result<Vec<f64>, _> = parts[1..].iter().map(|p| p.trim().parse()).collect();
            let vals = vals.map_err(|e| parse_fail(format!("bad covariate value: {e}")))?;
            if let Some(bad) = vals.iter().position(|v: &f64| !v.is_finite()) {
                return Err(IoError::Validation(format!(
                    "non-finite covariate z{} at row t = {t}",
                    bad + 1
                )));
            }
            rows.push((t, vals));
        }
        offset += line.len() + 1;
    }
    rows.sort_by_key(|(t, _)| *t);
    let t_len = rows.len();
    for (expect, (t, _)) in rows.iter().enumerate() {
        if *t != expect + 1 {
            return Err(IoError::Validation(format!(
                "covariate rows must cover t = 1..{t_len} exactly; missing or duplicate row near t = {}",
                expect + 1
            )));
        }
    }
    let mut z = Vec::with_capacity(t_len * q);
    for (_, vals) in rows {
        z.extend(vals);
    }
    Ok((t_len, q, z))
}

// ---------------------------------------------------------------------------
// Truth, draws and manifests.
// ---------------------------------------------------------------------------

pub fn write_truth(path: &Path, truth: &SimTruth) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(truth)
        .map_err(|e| IoError::Validation(format!("truth serialization: {e}")))?;
    fs::write(path, json).map_err(io_err(path))
}

pub fn read_truth(path: &Path) -> Result<SimTruth, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        offset: 0,
        line: e.line(),
        detail: e.to_string(),
    })
}

/// One JSON record per stored draw.
pub fn write_draws(path: &Path, draws: &[Draw]) -> Result<(), IoError> {
    write_jsonl(path, draws)
}

pub fn read_draws(path: &Path) -> Result<Vec<Draw>, IoError> {
    read_jsonl(path)
}

pub fn write_pooled_draws(path: &Path, draws: &[PooledDraw]) -> Result<(), IoError> {
    write_jsonl(path, draws)
}

pub fn read_pooled_draws(path: &Path) -> Result<Vec<PooledDraw>, IoError> {
    read_jsonl(path)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| IoError::Validation(format!("draw serialization: {e}")))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    let mut offset = 0usize;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            let rec = serde_json::from_str(&line).map_err(|e| IoError::Parse {
                path: path.to_path_buf(),
                offset: offset + e.column().saturating_sub(1),
                line: line_no + 1,
                detail: e.to_string(),
            })?;
            out.push(rec);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

/// Run manifest: configuration echo plus timing and acceptance statistics.
/// Re-running with the recorded configuration and seed reproduces the draw
/// file bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub dims: (usize, usize, usize, usize, usize),
    pub prior: PriorConfig,
    pub chain: ChainConfig,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub block_seconds: [f64; 4],
    pub hmc_acceptance: f64,
    pub stored_draws: usize,
    /// Layout of the flattened `gamma` field in each draw record.
    pub gamma_layout: String,
}

pub const GAMMA_LAYOUT_LEGEND: &str = "regime-major, then rank, then mode (1..4), then coordinate; \
     mode lengths are (I, J, K, Q)";

/// Manifests are written atomically: serialized to a sibling temp file and
/// renamed into place.
pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| IoError::Validation(format!("manifest serialization: {e}")))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, json).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        offset: 0,
        line: e.line(),
        detail: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Summary tables.
// ---------------------------------------------------------------------------

/// Posterior mean and central quantiles of every coefficient-tensor entry,
/// in long matricized format. Row count is I*J*K*Q*L.
pub fn write_coefficient_summary(
    path: &Path,
    draws: &[Draw],
    dims: [usize; 4],
    rank: usize,
    regimes: usize,
) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "i,j,k,covariate,regime,mean,q05,q95").map_err(io_err(path))?;
    let marg_per_draw: Vec<Vec<crate::tensor::ParafacMarginals>> = draws
        .iter()
        .map(|d| crate::gibbs::unflatten_marginals(&d.gamma, regimes, rank, dims))
        .collect();
    let n = draws.len();
    let mut samples = vec![0.0; n];
    for l in 0..regimes {
        for q in 0..dims[3] {
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        for (di, margs) in marg_per_draw.iter().enumerate() {
                            let m = &margs[l];
                            let mut v = 0.0;
                            for r in 0..rank {
                                v += m.factor(0, r)[i]
                                    * m.factor(1, r)[j]
                                    * m.factor(2, r)[k]
                                    * m.factor(3, r)[q];
                            }
                            samples[di] = v;
                        }
                        let mean = samples.iter().sum::<f64>() / n as f64;
                        let mut sorted = samples.clone();
                        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let q05 = crate::diagnostics::quantile(&sorted, 0.05);
                        let q95 = crate::diagnostics::quantile(&sorted, 0.95);
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{},{}",
                            i + 1,
                            j + 1,
                            k + 1,
                            q + 1,
                            l + 1,
                            fmt_f64(mean),
                            fmt_f64(q05),
                            fmt_f64(q95)
                        )
                        .map_err(io_err(path))?;
                    }
                }
            }
        }
    }
    w.flush().map_err(io_err(path))
}

/// Posterior regime probabilities per time.
pub fn write_regime_probs(path: &Path, draws: &[Draw], regimes: usize) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let header: Vec<String> = (1..=regimes).map(|l| format!("p{l}")).collect();
    writeln!(w, "t,{}", header.join(",")).map_err(io_err(path))?;
    if draws.is_empty() {
        return w.flush().map_err(io_err(path));
    }
    let t_len = draws[0].s.len();
    for t in 0..t_len {
        let mut counts = vec![0usize; regimes];
        for d in draws {
            counts[d.s[t]] += 1;
        }
        let row: Vec<String> = counts
            .iter()
            .map(|&c| fmt_f64(c as f64 / draws.len() as f64))
            .collect();
        writeln!(w, "{},{}", t + 1, row.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Raw posterior samples of the zero-inflation probabilities.
pub fn write_rho_samples(path: &Path, draws: &[Draw]) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let regimes = draws.first().map(|d| d.rho.len()).unwrap_or(0);
    let header: Vec<String> = (1..=regimes).map(|l| format!("rho{l}")).collect();
    writeln!(w, "iteration,{}", header.join(",")).map_err(io_err(path))?;
    for d in draws {
        let row: Vec<String> = d.rho.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{},{}", d.iteration, row.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Total degree of the observed panel per time.
pub fn write_degree_series(path: &Path, panel: &NetworkPanel) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "t,total_degree").map_err(io_err(path))?;
    for (t, deg) in panel.degree_series().iter().enumerate() {
        writeln!(w, "{},{}", t + 1, deg).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Effective sample sizes per scalar parameter.
pub fn write_ess_table(path: &Path, ess: &[(String, f64)]) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "parameter,ess").map_err(io_err(path))?;
    for (name, value) in ess {
        writeln!(w, "{},{}", name, fmt_f64(*value)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
