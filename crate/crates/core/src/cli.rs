//! Command-line front end: presets, TOML run configs, and the files each
//! run leaves behind.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fvcore::{cfl_max_dt, normalize_snapshots, run_uniform_dt, StepRule, UniformState};
use crate::harness::{compare, convergence_study, metrics_csv, timings_csv, CompareReport, Experiment};
use crate::io::{time_tag, write_file, write_xy_csv};
use crate::models::presets::{preset, ModelParams, PRESET_NAMES};
use crate::models::Boundary;
use crate::mrsolver::{run_mr_dt, MrSnapshot};
use crate::mrtree::{reference_tolerance, GradedTree};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Uniform,
    Mr,
    Compare,
}

/// Contents of a run config file. Every field is optional; missing ones
/// fall back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_level: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roots: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_level: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// With `alpha`, derives epsilon from the reference tolerance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_level: Option<u32>,
    /// Finest levels of a convergence study.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
    /// Model parameter overrides, by field name of the preset's family.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<toml::Table>,
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
}

pub fn emit_config(c: &RunConfig) -> Result<String> {
    toml::to_string(c).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Fully spelled-out defaults of a preset.
    pub fn from_preset(name: &str) -> Result<RunConfig> {
        let p = preset(name)?;
        let (lambda, mu) = match p.step {
            StepRule::Lambda(l) => (Some(l), None),
            StepRule::Mu(m) => (None, Some(m)),
        };
        let model = match toml::Value::try_from(&p.params) {
            Ok(toml::Value::Table(mut t)) => {
                t.remove("family");
                Some(t)
            }
            _ => return Err(Error::Config("preset parameters do not serialize".into())),
        };
        Ok(RunConfig {
            preset: Some(p.name.to_string()),
            solver: Some(SolverKind::Mr),
            max_level: Some(p.max_level),
            roots: Some(p.roots),
            min_level: Some(p.mr_config().min_level),
            epsilon: Some(p.epsilon),
            tolerance_factor: None,
            alpha: None,
            lambda,
            mu,
            t_final: Some(p.t_final),
            snapshots: Some(p.snapshots.clone()),
            out: None,
            reference_level: Some(p.reference_level),
            levels: None,
            boundary: None,
            model,
        })
    }

    /// Fields set in `other` replace those here.
    pub fn overlay(&mut self, other: &RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => {$(if other.$f.is_some() { self.$f = other.$f.clone(); })*};
        }
        take!(preset, solver, max_level, roots, min_level, t_final, snapshots, out, reference_level, levels, boundary);
        // the two tolerance forms and the two step rules exclude each other,
        // so a setting on one side drops the other side's value
        if other.epsilon.is_some() {
            self.epsilon = other.epsilon;
            self.tolerance_factor = None;
            self.alpha = None;
        }
        if other.tolerance_factor.is_some() || other.alpha.is_some() {
            self.tolerance_factor = other.tolerance_factor;
            self.alpha = other.alpha;
            if other.epsilon.is_none() {
                self.epsilon = None;
            }
        }
        if other.lambda.is_some() || other.mu.is_some() {
            self.lambda = other.lambda;
            self.mu = other.mu;
        }
        if let Some(m) = &other.model {
            let base = self.model.get_or_insert_with(Default::default);
            for (k, v) in m {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// A validated run.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub solver: SolverKind,
    pub exp: Experiment,
    pub out: PathBuf,
    pub levels: Vec<u32>,
    /// The merged config, as written next to the artifacts.
    pub config: RunConfig,
}

fn apply_model_overrides(params: &ModelParams, overrides: &toml::Table) -> Result<ModelParams> {
    let mut value = serde_json::to_value(params)?;
    let fields = value.as_object_mut().ok_or_else(|| Error::Config("model parameters are not a table".into()))?;
    for (k, v) in overrides {
        if k == "family" || !fields.contains_key(k) {
            return Err(Error::Config(format!("unknown model parameter '{k}'")));
        }
        let v = serde_json::to_value(v).map_err(|e| Error::Config(format!("model parameter '{k}': {e}")))?;
        fields.insert(k.clone(), v);
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("model parameters: {e}")))
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Applies `cfg` over the defaults of its preset and checks the result.
pub fn resolve(cfg: &RunConfig) -> Result<Resolved> {
    let name = cfg.preset.as_deref().ok_or_else(|| {
        Error::Config(format!("no preset given, expected one of {}", PRESET_NAMES.join(", ")))
    })?;
    let mut merged = RunConfig::from_preset(name)?;
    merged.overlay(cfg);
    let c = &merged;

    let p = preset(name)?;
    let mut exp = Experiment::from_preset(&p);
    if let Some(m) = &c.model {
        exp.params = apply_model_overrides(&p.params, m)?;
    }
    exp.boundary = c.boundary;
    if let Some(l) = c.max_level {
        exp.cfg.max_level = l;
    }
    if let Some(r) = c.roots {
        exp.cfg.roots = r;
    }
    if let Some(l) = c.min_level {
        exp.cfg.min_level = l;
    }
    if let Some(l) = c.reference_level {
        exp.reference_level = l;
    }
    exp.step = match (c.lambda, c.mu) {
        (Some(l), None) => StepRule::Lambda(positive("lambda", l)?),
        (None, Some(m)) => StepRule::Mu(positive("mu", m)?),
        (Some(_), Some(_)) => return Err(Error::Config("give either lambda or mu, not both".into())),
        (None, None) => return Err(Error::Config("no time step rule (lambda or mu)".into())),
    };
    let model = exp.model()?;
    match (c.epsilon, c.tolerance_factor, c.alpha) {
        (Some(e), None, None) => exp.cfg.epsilon = e,
        (None, Some(cf), Some(a)) => {
            exp.cfg.tolerance_factor = positive("tolerance_factor", cf)?;
            exp.cfg.alpha = positive("alpha", a)?;
            exp.cfg.epsilon = reference_tolerance(&model, &exp.cfg)?;
        }
        (Some(_), _, _) => {
            return Err(Error::Config("give either epsilon or tolerance_factor with alpha, not both".into()))
        }
        _ => return Err(Error::Config("tolerance_factor and alpha must be given together".into())),
    }
    exp.cfg.validate()?;
    if exp.reference_level < exp.cfg.max_level {
        return Err(Error::Config(format!(
            "reference_level {} is below max_level {}",
            exp.reference_level, exp.cfg.max_level
        )));
    }
    model.check_alignment(exp.cfg.finest_cells())?;

    if let Some(t) = c.t_final {
        exp.t_final = t;
    }
    if !(exp.t_final >= 0.0 && exp.t_final.is_finite()) {
        return Err(Error::Config(format!("t_final must be finite and >= 0, got {}", exp.t_final)));
    }
    exp.snapshots = c.snapshots.clone().unwrap_or_default();
    if cfg.t_final.is_some() && cfg.snapshots.is_none() {
        // preset snapshot times are meaningless for another final time
        exp.snapshots.clear();
    }
    if exp.snapshots.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("snapshot times must be sorted".into()));
    }
    if let Some(&t) = exp.snapshots.iter().find(|&&t| !(t >= 0.0 && t <= exp.t_final)) {
        return Err(Error::Config(format!("snapshot time {t} outside [0, t_final = {}]", exp.t_final)));
    }
    let levels = c.levels.clone().unwrap_or_default();
    if let Some(&l) = levels.iter().find(|&&l| l == 0 || l >= exp.reference_level) {
        return Err(Error::Config(format!(
            "study level {l} must be positive and below reference_level {}",
            exp.reference_level
        )));
    }
    // the reference run sub-steps as needed, the others must fit the bound
    for &l in levels.iter().chain([exp.cfg.max_level].iter()) {
        let dx = exp.dx(&model, l);
        let (dt, max_dt) = (exp.step.dt(dx), cfl_max_dt(&model, dx));
        if dt > max_dt * (1.0 + 1e-12) {
            return Err(Error::Config(format!("time step {dt:e} at level {l} exceeds the CFL bound {max_dt:e}")));
        }
    }
    Ok(Resolved {
        solver: c.solver.unwrap_or(SolverKind::Mr),
        exp,
        out: c.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        levels,
        config: merged,
    })
}

#[derive(Debug, Parser)]
#[command(name = "mrfv", version, about = "Adaptive multiresolution finite volume solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one solver and write snapshots.
    Run(RunArgs),
    /// Run both solvers and a fine reference; write error and speed-up tables.
    Compare(RunArgs),
    /// Errors of both solvers over several finest levels.
    Convergence(RunArgs),
    /// Built-in experiments.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum PresetAction {
    List,
    /// Print a preset's full config.
    Describe { name: String },
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML run config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverKind>,
    /// Finest level, or a comma-separated list for `convergence`.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u32>>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<f64>>,
}

impl RunArgs {
    fn to_config(&self, study: bool) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        let mut flags = RunConfig {
            preset: self.preset.clone(),
            solver: self.solver,
            epsilon: self.epsilon,
            t_final: self.t_final,
            snapshots: self.snapshots.clone(),
            out: self.out.clone(),
            ..Default::default()
        };
        if let Some(levels) = &self.levels {
            if study {
                flags.levels = Some(levels.clone());
            } else if let [l] = levels[..] {
                flags.max_level = Some(l);
            } else {
                return Err(Error::Config("--levels takes a single level here".into()));
            }
        }
        c.overlay(&flags);
        Ok(c)
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() || matches!(e, Error::Io(_)) {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => {
            let r = resolve(&a.to_config(false)?)?;
            match r.solver {
                SolverKind::Compare => cmd_compare(&r),
                _ => cmd_run(&r),
            }
        }
        Command::Compare(a) => cmd_compare(&resolve(&a.to_config(false)?)?),
        Command::Convergence(a) => cmd_convergence(&resolve(&a.to_config(true)?)?),
        Command::Presets { action: PresetAction::List } => {
            for name in PRESET_NAMES {
                println!("{name}\t{}", preset(name)?.description);
            }
            Ok(())
        }
        Command::Presets { action: PresetAction::Describe { name } } => {
            let p = preset(name)?;
            println!("# {}", p.description);
            print!("{}", emit_config(&RunConfig::from_preset(name)?)?);
            Ok(())
        }
    }
}

fn prepare_out(r: &Resolved) -> Result<()> {
    fs::create_dir_all(&r.out)?;
    write_file(&r.out.join("config.toml"), emit_config(&r.config)?.as_bytes())
}

/// Snapshot files are named by the requested time, which the stored state
/// reaches within one step.
fn requested_times(exp: &Experiment) -> Result<Vec<f64>> {
    normalize_snapshots(exp.t_final, &exp.snapshots)
}

fn write_uniform(dir: &Path, t: f64, s: &UniformState) -> Result<()> {
    s.write_csv(&dir.join(format!("fv_t{}.csv", time_tag(t))))
}

/// Leaf mesh, fine-grid reconstruction and tree dump of one snapshot.
pub fn write_mr_snapshot(dir: &Path, t: f64, snap: &MrSnapshot) -> Result<()> {
    let tag = time_tag(t);
    write_leaf_csv(&dir.join(format!("leaves_t{tag}.csv")), &snap.tree)?;
    let fine = snap.tree.reconstruct_fine();
    let d = snap.tree.domain();
    let dx = d.length() / fine.len() as f64;
    let xs: Vec<f64> = (0..fine.len()).map(|j| d.lo + (j as f64 + 0.5) * dx).collect();
    write_xy_csv(&dir.join(format!("mr_t{tag}.csv")), ("x", "u"), &xs, &fine)?;
    let mut buf = Vec::new();
    snap.tree.write_ndjson(&mut buf)?;
    write_file(&dir.join(format!("tree_t{tag}.ndjson")), &buf)
}

pub fn write_leaf_csv(path: &Path, tree: &GradedTree) -> Result<()> {
    let mut s = String::from("lo,hi,level,index,average\n");
    for c in tree.leaf_grid()? {
        let _ = writeln!(s, "{:?},{:?},{},{},{:?}", c.lo, c.hi, c.level, c.index, c.average);
    }
    write_file(path, s.as_bytes())
}

pub fn cmd_run(r: &Resolved) -> Result<()> {
    prepare_out(r)?;
    let exp = &r.exp;
    let m = exp.model()?;
    let dt = exp.step.dt(exp.dx(&m, exp.cfg.max_level));
    let mut json = serde_json::Map::new();
    json.insert("preset".into(), exp.name.clone().into());
    json.insert("dt".into(), dt.into());
    match r.solver {
        SolverKind::Uniform => {
            let run = run_uniform_dt(&m, exp.cfg.max_level, exp.cfg.roots, dt, exp.t_final, &exp.snapshots)?;
            for (&t, s) in requested_times(exp)?.iter().zip(&run.snapshots) {
                write_uniform(&r.out, t, s)?;
            }
            json.insert("loop_seconds".into(), run.loop_seconds.into());
            json.insert("clamped".into(), run.clamped.into());
        }
        _ => {
            let run = run_mr_dt(&m, &exp.cfg, dt, exp.t_final, &exp.snapshots)?;
            let mut s = String::from("t_final,eta,leaves,N_L\n");
            for (&t, snap) in requested_times(exp)?.iter().zip(&run.snapshots) {
                write_mr_snapshot(&r.out, t, snap)?;
                let eta = crate::harness::compression_rate(&snap.tree);
                let _ = writeln!(s, "{:?},{:?},{},{}", snap.time, eta, snap.leaf_count(), exp.cfg.finest_cells());
            }
            write_file(&r.out.join("metrics.csv"), s.as_bytes())?;
            json.insert("epsilon".into(), exp.cfg.epsilon.into());
            json.insert("init_seconds".into(), run.init_seconds.into());
            json.insert("loop_seconds".into(), run.loop_seconds.into());
            json.insert("clamped".into(), run.clamped.into());
        }
    }
    write_file(&r.out.join("metrics.json"), serde_json::to_string_pretty(&json)?.as_bytes())
}

pub fn cmd_compare(r: &Resolved) -> Result<()> {
    prepare_out(r)?;
    let report: CompareReport = compare(&r.exp)?;
    let times = requested_times(&r.exp)?;
    for (&t, snap) in times.iter().zip(&report.mr.snapshots) {
        write_mr_snapshot(&r.out, t, snap)?;
    }
    for (&t, s) in times.iter().zip(&report.fv) {
        write_uniform(&r.out, t, s)?;
    }
    write_file(&r.out.join("metrics.csv"), metrics_csv(&report.rows).as_bytes())?;
    write_file(&r.out.join("timings.csv"), timings_csv(&report.rows).as_bytes())?;
    let json = serde_json::json!({
        "preset": r.exp.name,
        "epsilon": r.exp.cfg.epsilon,
        "dt": report.dt,
        "reference_level": r.exp.reference_level,
        "reference_dt": report.reference_dt,
        "config": emit_config(&r.config)?,
        "rows": report.rows,
    });
    write_file(&r.out.join("metrics.json"), serde_json::to_string_pretty(&json)?.as_bytes())?;
    println!("t_final\tV\teta\tL1\tL2\tLinf");
    for row in &report.rows {
        println!(
            "{}\t{:.2}\t{:.4}\t{:.3e}\t{:.3e}\t{:.3e}",
            row.t_final, row.speedup, row.eta, row.err_l1, row.err_l2, row.err_linf
        );
    }
    Ok(())
}

pub fn cmd_convergence(r: &Resolved) -> Result<()> {
    if r.levels.len() < 2 {
        return Err(Error::Config("a convergence study needs at least two levels".into()));
    }
    prepare_out(r)?;
    let c = convergence_study(&r.exp, &r.levels)?;
    let mut s = String::from("level,epsilon,fv_L1,mr_L1\n");
    for k in 0..c.levels.len() {
        let _ = writeln!(s, "{},{:?},{:?},{:?}", c.levels[k], c.epsilons[k], c.fv_l1[k], c.mr_l1[k]);
    }
    write_file(&r.out.join("convergence.csv"), s.as_bytes())?;
    write_file(&r.out.join("convergence.json"), serde_json::to_string_pretty(&c)?.as_bytes())?;
    println!("fv slope {:.4}  mr slope {:.4}{}", c.fv_rate, c.mr_rate, if c.degenerate { "  (degenerate)" } else { "" });
    Ok(())
}
