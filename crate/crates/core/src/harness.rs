//! Compression, speed-up and error measurements against uniform reference
//! solutions, plus convergence studies.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fvcore::{cfl_max_dt, run_uniform_dt, StepRule, UniformState};
use crate::models::presets::{ModelParams, Preset};
use crate::models::{Boundary, ModelSpec};
use crate::mrsolver::{run_mr_dt, MrResult, MrSnapshot};
use crate::mrtree::{reference_tolerance, GradedTree, LeafCell, MRConfig};

/// Bumped whenever the uniform scheme changes in a way that alters results.
pub const SCHEME_REVISION: u32 = 1;

/// `N_L / (N_0 + #leaves)`.
pub fn compression_rate(tree: &GradedTree) -> f64 {
    let fine = tree.width(tree.max_level()) as f64;
    fine / (tree.roots() as f64 + tree.leaf_count() as f64)
}

pub fn compression_rate_from_counts(max_level: u32, roots: usize, leaves: usize) -> f64 {
    (roots << max_level) as f64 / (roots + leaves) as f64
}

pub fn speedup(fv_seconds: f64, mr_seconds: f64) -> Result<f64> {
    if !(mr_seconds > 0.0) {
        return Err(Error::OutOfRange(format!("multiresolution time must be positive, got {mr_seconds}")));
    }
    Ok(fv_seconds / mr_seconds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

/// Averages of `fine` on every coarser level, coarsest first.
fn projections(fine: &[f64], levels: u32) -> Vec<Vec<f64>> {
    let mut out = vec![fine.to_vec()];
    for _ in 0..levels {
        let last = out.last().unwrap();
        let up = last.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        out.push(up);
    }
    out.reverse();
    out
}

/// Errors of cell data against a finer uniform reference projected onto the
/// cells. L1 and L2 are domain-normalized; all are divided by `u_max`.
pub fn error_norms_on_cells(cells: &[LeafCell], reference: &UniformState, u_max: f64) -> Result<ErrorNorms> {
    let ref_level = reference.level;
    let levels = projections(&reference.averages, ref_level);
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut linf: f64 = 0.0;
    let mut width = 0.0;
    for c in cells {
        if c.level > ref_level {
            return Err(Error::Grid(format!("cell level {} finer than reference level {ref_level}", c.level)));
        }
        let row = &levels[c.level as usize];
        if c.index >= row.len() {
            return Err(Error::Grid(format!("cell index {} outside reference level {}", c.index, c.level)));
        }
        let e = c.average - row[c.index];
        let h = c.hi - c.lo;
        l1 += e.abs() * h;
        l2 += e * e * h;
        linf = linf.max(e.abs());
        width += h;
    }
    if cells.is_empty() || width <= 0.0 {
        return Err(Error::Grid("no cells to compare".into()));
    }
    Ok(ErrorNorms { l1: l1 / width / u_max, l2: (l2 / width).sqrt() / u_max, linf: linf / u_max })
}

fn check_compatible(roots: usize, lo: f64, r: &UniformState) -> Result<()> {
    if roots != r.roots || (lo - r.lo).abs() > 1e-12 * r.dx {
        return Err(Error::Grid("grids are not nested".into()));
    }
    Ok(())
}

fn check_time(t: f64, dt: f64, r: &UniformState) -> Result<()> {
    let tol = dt.max(r.dt) * (1.0 + 1e-9);
    if (t - r.time()).abs() > tol {
        return Err(Error::TimeMismatch { left: t, right: r.time() });
    }
    Ok(())
}

/// Errors of an adaptive snapshot against a uniform reference.
pub fn error_norms(snap: &MrSnapshot, dt: f64, reference: &UniformState, m: &ModelSpec) -> Result<ErrorNorms> {
    check_time(snap.time, dt, reference)?;
    check_compatible(snap.tree.roots(), snap.tree.domain().lo, reference)?;
    error_norms_on_cells(&snap.tree.leaf_grid()?, reference, m.u_max())
}

/// Errors of a uniform solution against a finer (or equal) one.
pub fn error_norms_uniform(coarse: &UniformState, reference: &UniformState, u_max: f64) -> Result<ErrorNorms> {
    check_time(coarse.time(), coarse.dt, reference)?;
    check_compatible(coarse.roots, coarse.lo, reference)?;
    let cells: Vec<LeafCell> = coarse
        .averages
        .iter()
        .enumerate()
        .map(|(i, &a)| LeafCell {
            lo: coarse.lo + i as f64 * coarse.dx,
            hi: coarse.lo + (i + 1) as f64 * coarse.dx,
            average: a,
            level: coarse.level,
            index: i,
        })
        .collect();
    error_norms_on_cells(&cells, reference, u_max)
}

/// Everything that defines one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub params: ModelParams,
    pub cfg: MRConfig,
    pub step: StepRule,
    pub t_final: f64,
    pub snapshots: Vec<f64>,
    pub reference_level: u32,
    /// Replaces the model's own boundary condition.
    pub boundary: Option<Boundary>,
}

impl Experiment {
    pub fn from_preset(p: &Preset) -> Self {
        Experiment {
            name: p.name.to_string(),
            params: p.params.clone(),
            cfg: p.mr_config(),
            step: p.step,
            t_final: p.t_final,
            snapshots: p.snapshots.clone(),
            reference_level: p.reference_level,
            boundary: None,
        }
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let m = self.params.build()?;
        match self.boundary {
            Some(b) if b != m.boundary() => m.with_boundary(b),
            _ => Ok(m),
        }
    }

    pub fn dx(&self, m: &ModelSpec, level: u32) -> f64 {
        m.domain().length() / (self.cfg.roots << level) as f64
    }
}

/// Step count divisor that makes a reference run at `level` stable while
/// staying commensurate with `dt`.
pub fn reference_substeps(m: &ModelSpec, dx: f64, dt: f64) -> u64 {
    let bound = cfl_max_dt(m, dx);
    ((dt / bound) * (1.0 - 1e-12)).ceil().max(1.0) as u64
}

pub fn cache_dir() -> PathBuf {
    std::env::var_os("MRFV_CACHE_DIR").map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mrfv-cache"))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    level: u32,
    roots: usize,
    lo: f64,
    dx: f64,
    dt: f64,
    steps: Vec<u64>,
}

fn fingerprint(params: &ModelParams, boundary: Boundary, level: u32, roots: usize, dt: f64, times: &[f64]) -> Result<String> {
    let mut key = serde_json::to_string(params)?;
    let _ = write!(key, "|{boundary:?}");
    let _ = write!(key, "|rev={SCHEME_REVISION}|level={level}|roots={roots}|dt={:016x}", dt.to_bits());
    for t in times {
        let _ = write!(key, "|{:016x}", t.to_bits());
    }
    let digest = Sha256::digest(key.as_bytes());
    Ok(digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn load_cached(path: &std::path::Path) -> Option<Vec<UniformState>> {
    let bytes = fs::read(path).ok()?;
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    let header: CacheHeader = serde_json::from_slice(&bytes[..nl]).ok()?;
    let body = &bytes[nl + 1..];
    let n = header.roots << header.level;
    if body.len() != 8 * n * header.steps.len() {
        return None;
    }
    let mut out = Vec::new();
    for (k, &steps) in header.steps.iter().enumerate() {
        let chunk = &body[8 * n * k..8 * n * (k + 1)];
        let averages = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(UniformState {
            level: header.level,
            roots: header.roots,
            lo: header.lo,
            dx: header.dx,
            dt: header.dt,
            steps,
            averages,
        });
    }
    Some(out)
}

fn store_cached(path: &std::path::Path, states: &[UniformState]) -> Result<()> {
    let first = &states[0];
    let header = CacheHeader {
        level: first.level,
        roots: first.roots,
        lo: first.lo,
        dx: first.dx,
        dt: first.dt,
        steps: states.iter().map(|s| s.steps).collect(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for s in states {
        for v in &s.averages {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    crate::io::write_file(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Uniform reference snapshots, computed once per configuration and kept on
/// disk under [`cache_dir`].
pub fn reference_solution(
    params: &ModelParams,
    m: &ModelSpec,
    level: u32,
    roots: usize,
    dt: f64,
    times: &[f64],
) -> Result<Vec<UniformState>> {
    let path = cache_dir().join(format!("{}.bin", fingerprint(params, m.boundary(), level, roots, dt, times)?));
    if let Some(states) = load_cached(&path) {
        return Ok(states);
    }
    let t_final = times.iter().copied().fold(0.0, f64::max);
    let run = run_uniform_dt(m, level, roots, dt, t_final, times)?;
    // caching is best effort
    let _ = store_cached(&path, &run.snapshots);
    Ok(run.snapshots)
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub t_final: f64,
    pub eta: f64,
    /// Speed-up including tree initialization.
    pub speedup: f64,
    /// Speed-up of the evolution loops alone.
    pub speedup_loop: f64,
    pub err_l1: f64,
    pub err_l2: f64,
    pub err_linf: f64,
    pub leaf_count: usize,
    pub n_fine: usize,
    pub mr_total_seconds: f64,
    pub mr_loop_seconds: f64,
    pub fv_total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: Vec<MetricsReport>,
    pub mr: MrResult,
    pub fv: Vec<UniformState>,
    pub reference: Vec<UniformState>,
    pub dt: f64,
    pub reference_dt: f64,
}

/// Runs the adaptive solver, the uniform solver on the same finest grid,
/// and a fine reference, and tabulates errors, compression and speed-up.
pub fn compare(exp: &Experiment) -> Result<CompareReport> {
    let m = exp.model()?;
    let cfg = &exp.cfg;
    let dt = exp.step.dt(exp.dx(&m, cfg.max_level));
    let mr = run_mr_dt(&m, cfg, dt, exp.t_final, &exp.snapshots)?;
    let fv = run_uniform_dt(&m, cfg.max_level, cfg.roots, dt, exp.t_final, &exp.snapshots)?;

    if exp.reference_level < cfg.max_level {
        return Err(Error::Config("reference level below the finest adaptive level".into()));
    }
    let sub = reference_substeps(&m, exp.dx(&m, exp.reference_level), dt);
    let reference_dt = dt / sub as f64;
    let times: Vec<f64> = mr.snapshots.iter().map(|s| s.steps as f64 * dt).collect();
    let reference = reference_solution(&exp.params, &m, exp.reference_level, cfg.roots, reference_dt, &times)?;

    let mut rows = Vec::new();
    for (k, snap) in mr.snapshots.iter().enumerate() {
        let err = error_norms(snap, dt, &reference[k], &m)?;
        let mr_loop = mr.snapshot_seconds[k];
        let mr_total = mr.init_seconds + mr_loop;
        let fv_total = fv.setup_seconds + fv.snapshot_seconds[k];
        rows.push(MetricsReport {
            t_final: snap.time,
            eta: compression_rate(&snap.tree),
            speedup: if mr_total > 0.0 { fv_total / mr_total } else { f64::INFINITY },
            speedup_loop: if mr_loop > 0.0 { fv.snapshot_seconds[k] / mr_loop } else { f64::INFINITY },
            err_l1: err.l1,
            err_l2: err.l2,
            err_linf: err.linf,
            leaf_count: snap.leaf_count(),
            n_fine: cfg.finest_cells(),
            mr_total_seconds: mr_total,
            mr_loop_seconds: mr_loop,
            fv_total_seconds: fv_total,
        });
    }
    Ok(CompareReport { rows, mr, fv: fv.snapshots, reference, dt, reference_dt })
}

/// Deterministic table columns; timings go to [`timings_csv`].
pub fn metrics_csv(rows: &[MetricsReport]) -> String {
    let mut s = String::from("t_final,eta,L1,L2,Linf,leaves,N_L\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{},{}",
            r.t_final, r.eta, r.err_l1, r.err_l2, r.err_linf, r.leaf_count, r.n_fine
        );
    }
    s
}

pub fn timings_csv(rows: &[MetricsReport]) -> String {
    let mut s = String::from("t_final,V,V_loop,mr_total_seconds,mr_loop_seconds,fv_total_seconds\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{:?}",
            r.t_final, r.speedup, r.speedup_loop, r.mr_total_seconds, r.mr_loop_seconds, r.fv_total_seconds
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<u32>,
    pub epsilons: Vec<f64>,
    pub fv_l1: Vec<f64>,
    pub mr_l1: Vec<f64>,
    pub fv_rate: f64,
    pub mr_rate: f64,
    /// Set when some error is zero or not finite, so no rate is meaningful.
    pub degenerate: bool,
}

/// `-slope` of the least-squares line through `(level, log2 err)`.
pub fn fitted_rate(levels: &[u32], errors: &[f64]) -> (f64, bool) {
    let degenerate = errors.iter().any(|e| !e.is_finite() || *e < 1e-14) || levels.len() < 2;
    if degenerate {
        return (f64::NAN, true);
    }
    let n = levels.len() as f64;
    let xs: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (-sxy / sxx, false)
}

/// L1 errors of uniform and adaptive runs at several finest levels against
/// one fine reference at `exp.t_final`. Each level thresholds with its own
/// reference tolerance, from the constant and order in `exp.cfg`.
pub fn convergence_study(exp: &Experiment, levels: &[u32]) -> Result<ConvergenceReport> {
    let m = exp.model()?;
    let top = levels.iter().copied().max().ok_or_else(|| Error::Config("no levels given".into()))?;
    if exp.reference_level <= top {
        return Err(Error::Config("reference level must exceed every studied level".into()));
    }
    let ref_dx = exp.dx(&m, exp.reference_level);
    let ref_dt0 = exp.step.dt(ref_dx);
    let ref_dt = ref_dt0 / reference_substeps(&m, ref_dx, ref_dt0) as f64;
    let reference = reference_solution(&exp.params, &m, exp.reference_level, exp.cfg.roots, ref_dt, &[exp.t_final])?;
    let reference = &reference[0];

    let mut epsilons = Vec::new();
    let mut fv_l1 = Vec::new();
    let mut mr_l1 = Vec::new();
    for &level in levels {
        let mut cfg = exp.cfg.clone();
        cfg.max_level = level;
        cfg.min_level = cfg.min_level.min(level);
        cfg.epsilon = reference_tolerance(&m, &cfg)?;
        let dt = exp.step.dt(exp.dx(&m, level));
        let fv = run_uniform_dt(&m, level, cfg.roots, dt, exp.t_final, &[])?;
        let mr = run_mr_dt(&m, &cfg, dt, exp.t_final, &[])?;
        fv_l1.push(error_norms_uniform(&fv.snapshots[0], reference, m.u_max())?.l1);
        mr_l1.push(error_norms(&mr.snapshots[0], dt, reference, &m)?.l1);
        epsilons.push(cfg.epsilon);
    }
    let (fv_rate, d1) = fitted_rate(levels, &fv_l1);
    let (mr_rate, d2) = fitted_rate(levels, &mr_l1);
    Ok(ConvergenceReport {
        levels: levels.to_vec(),
        epsilons,
        fv_l1,
        mr_l1,
        fv_rate,
        mr_rate,
        degenerate: d1 || d2,
    })
}
