//! Time stepping on the adaptive leaf mesh.
//!
//! Each interface between consecutive leaves is evaluated once, at the
//! finer of the two levels, using a predicted child of the coarser leaf
//! whose offset is bounded by its neighbours (so updates stay monotone).
//! Leaves whose two interfaces both sit on their own level get exactly the
//! uniform-grid update, so a fully refined tree reproduces the uniform
//! solver bit for bit.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fvcore::{check_cfl, eo_from_values, normalize_snapshots, steps_to_reach, update_value, StepRule};
use crate::models::{Boundary, ModelSpec};
use crate::mrtree::{GradedTree, LeafCell, MRConfig, NodeKey};

#[derive(Debug, Clone, Copy)]
struct Interface {
    flux: f64,
    diffusion: f64,
    level: u32,
}

/// Last flux and integrated-diffusion evaluation, reused by the next
/// interface when the argument repeats.
#[derive(Debug, Clone, Copy)]
struct Memo {
    u: f64,
    branch: usize,
    f: f64,
    a: f64,
}

/// Adaptive solution together with the data needed to advance it.
#[derive(Debug, Clone)]
pub struct MrRun {
    pub tree: GradedTree,
    pub model: ModelSpec,
    pub cfg: MRConfig,
    pub dt: f64,
    pub steps: u64,
    /// Leaf values found outside `[0, u_max]` before a step.
    pub clamped: u64,
    /// Real leaf count after every step.
    pub leaf_history: Vec<usize>,
    /// Branch index per finest-grid interface `0..=N_L`.
    fine_branch: Vec<usize>,
    /// `dt / dx_l` per level.
    lambda: Vec<f64>,
    /// `dt / (dx_l dx_m)` indexed by `l * (L + 1) + m`.
    mu: Vec<f64>,
    leaves: Vec<NodeKey>,
    /// Values seen by the left and right interface of each leaf.
    edges: Vec<(f64, f64)>,
    faces: Vec<Interface>,
    next: Vec<f64>,
}

impl MrRun {
    pub fn new(model: &ModelSpec, cfg: &MRConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.finest_cells();
        let dx = model.domain().length() / n as f64;
        check_cfl(model, dx, dt)?;
        let tree = GradedTree::init(model, cfg)?;
        let lo = model.domain().lo;
        let fine_branch = (0..=n).map(|k| model.branch_index(lo + k as f64 * dx)).collect();
        let len = model.domain().length();
        let widths: Vec<f64> = (0..=cfg.max_level).map(|l| len / (cfg.roots << l) as f64).collect();
        let lambda = widths.iter().map(|w| dt / w).collect();
        let mu = widths.iter().flat_map(|a| widths.iter().map(move |b| dt / (a * b))).collect();
        Ok(MrRun {
            tree,
            model: model.clone(),
            cfg: cfg.clone(),
            dt,
            steps: 0,
            clamped: 0,
            leaf_history: Vec::new(),
            fine_branch,
            lambda,
            mu,
            leaves: Vec::new(),
            edges: Vec::new(),
            faces: Vec::new(),
            next: Vec::new(),
        })
    }

    pub fn with_rule(model: &ModelSpec, cfg: &MRConfig, rule: StepRule) -> Result<Self> {
        let dx = model.domain().length() / cfg.finest_cells() as f64;
        Self::new(model, cfg, rule.dt(dx))
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Leaf-weighted total of the solution.
    pub fn mass(&self) -> f64 {
        let t = &self.tree;
        t.leaf_keys().iter().map(|k| t.average(k.level, k.index) * t.cell_width(k.level)).sum()
    }

    pub fn leaf_grid(&self) -> Result<Vec<LeafCell>> {
        self.tree.leaf_grid()
    }

    pub fn reconstruct_fine(&self) -> Vec<f64> {
        self.tree.reconstruct_fine()
    }

    /// Flux pair at finest-grid position `pos` between values `ul` and `ur`.
    fn interface(&self, memo: &mut Option<Memo>, pos: usize, ul: f64, ur: f64, level: u32) -> Interface {
        let m = &self.model;
        let b = self.fine_branch[pos];
        let branch = &m.gamma_field().branches()[b];
        let f = m.flux_function();
        let diffusion = m.diffusion();
        let u_max = m.u_max();
        let eval = |u: f64| Memo {
            u,
            branch: b,
            f: f.value(branch.gamma(), u.clamp(0.0, u_max)),
            a: diffusion.map_or(0.0, |d| d.integrated(u)),
        };
        let left = match *memo {
            Some(c) if c.branch == b && c.u.to_bits() == ul.to_bits() => c,
            _ => eval(ul),
        };
        let right = if ur.to_bits() == ul.to_bits() { left } else { eval(ur) };
        *memo = Some(right);
        let flux = eo_from_values(branch, ul.clamp(0.0, u_max), ur.clamp(0.0, u_max), left.f, right.f);
        let diffusion = if diffusion.is_some() { branch.gamma().diffusion * (right.a - left.a) } else { 0.0 };
        Interface { flux, diffusion, level }
    }

    /// Advances every leaf by one step and adapts the tree.
    pub fn step(&mut self) -> Result<()> {
        let mut leaves = std::mem::take(&mut self.leaves);
        self.tree.leaf_keys_into(&mut leaves);
        let n = leaves.len();
        let top = self.tree.max_level();
        let u_max = self.model.u_max();

        // a leaf facing a finer neighbour is seen through its bounded
        // predicted child on that side
        let mut edges = std::mem::take(&mut self.edges);
        edges.clear();
        let periodic = self.model.boundary() == Boundary::Periodic;
        for k in 0..n {
            let key = leaves[k];
            let u = self.tree.average(key.level, key.index);
            if u < 0.0 || u > u_max {
                self.clamped += 1;
            }
            let finer = |j: Option<usize>| j.is_some_and(|j| leaves[j].level > key.level);
            let left_n = if k > 0 { Some(k - 1) } else { periodic.then_some(n - 1) };
            let right_n = if k + 1 < n { Some(k + 1) } else { periodic.then_some(0) };
            let (fl, fr) = (finer(left_n), finer(right_n));
            let e = if fl || fr {
                let (a, b) = self.tree.bounded_children(key.level, key.index);
                (if fl { a } else { u }, if fr { b } else { u })
            } else {
                (u, u)
            };
            edges.push(e);
        }

        let mut faces = std::mem::take(&mut self.faces);
        faces.clear();
        let mut memo = None;
        let fine = self.fine_branch.len() - 1;
        let wrap = if periodic {
            let (a, b) = (leaves[n - 1], leaves[0]);
            Some(self.interface(&mut memo, fine, edges[n - 1].1, edges[0].0, a.level.max(b.level)))
        } else {
            None
        };
        match wrap {
            Some(w) => faces.push(w),
            None => faces.push(self.interface(&mut memo, 0, edges[0].0, edges[0].0, leaves[0].level)),
        }
        memo = None;
        for k in 1..n {
            let (a, b) = (leaves[k - 1], leaves[k]);
            let pos = b.index << (top - b.level);
            faces.push(self.interface(&mut memo, pos, edges[k - 1].1, edges[k].0, a.level.max(b.level)));
        }
        match wrap {
            Some(w) => faces.push(w),
            None => {
                let last = edges[n - 1].1;
                faces.push(self.interface(&mut memo, fine, last, last, leaves[n - 1].level))
            }
        }

        let stride = top as usize + 1;
        self.next.clear();
        for (k, key) in leaves.iter().enumerate() {
            let u = self.tree.average(key.level, key.index);
            let l = key.level as usize;
            let lambda = self.lambda[l];
            let (fl, fr) = (faces[k], faces[k + 1]);
            let v = if fl.level == key.level && fr.level == key.level {
                let mu = self.mu[l * stride + l];
                update_value(u, lambda, mu, fl.flux, fr.flux, fl.diffusion, fr.diffusion)
            } else {
                let c = |m: u32| self.mu[l * stride + m as usize];
                u - lambda * (fr.flux - fl.flux) + (c(fr.level) * fr.diffusion - c(fl.level) * fl.diffusion)
            };
            if !v.is_finite() {
                return Err(Error::NonFinite { time: self.time() + self.dt, index: k });
            }
            self.next.push(v);
        }
        for (key, &v) in leaves.iter().zip(&self.next) {
            self.tree.set_average(key.level, key.index, v);
        }
        self.leaves = leaves;
        self.edges = edges;
        self.faces = faces;
        self.steps += 1;
        self.tree.update(&self.cfg)?;
        self.leaf_history.push(self.tree.leaf_count());
        Ok(())
    }
}

/// Tree state kept at a requested time.
#[derive(Debug, Clone)]
pub struct MrSnapshot {
    pub steps: u64,
    pub time: f64,
    pub tree: GradedTree,
}

impl MrSnapshot {
    pub fn leaf_count(&self) -> usize {
        self.tree.leaf_count()
    }
}

#[derive(Debug, Clone)]
pub struct MrResult {
    pub snapshots: Vec<MrSnapshot>,
    pub dt: f64,
    pub init_seconds: f64,
    pub loop_seconds: f64,
    /// Loop wall-clock elapsed when each snapshot was taken.
    pub snapshot_seconds: Vec<f64>,
    pub clamped: u64,
    pub leaf_history: Vec<usize>,
}

pub fn run_mr_dt(m: &ModelSpec, cfg: &MRConfig, dt: f64, t_final: f64, snapshots: &[f64]) -> Result<MrResult> {
    let times = normalize_snapshots(t_final, snapshots)?;
    let init = Instant::now();
    let mut run = MrRun::new(m, cfg, dt)?;
    let init_seconds = init.elapsed().as_secs_f64();

    let clock = Instant::now();
    let mut out = Vec::with_capacity(times.len());
    let mut at = Vec::with_capacity(times.len());
    for &t in &times {
        let target = steps_to_reach(t, dt);
        while run.steps < target {
            run.step()?;
        }
        at.push(clock.elapsed().as_secs_f64());
        out.push(MrSnapshot { steps: run.steps, time: run.time(), tree: run.tree.clone() });
    }
    Ok(MrResult {
        snapshots: out,
        dt,
        init_seconds,
        loop_seconds: clock.elapsed().as_secs_f64(),
        snapshot_seconds: at,
        clamped: run.clamped,
        leaf_history: run.leaf_history,
    })
}

pub fn run_mr(m: &ModelSpec, cfg: &MRConfig, rule: StepRule, t_final: f64, snapshots: &[f64]) -> Result<MrResult> {
    let dx = m.domain().length() / cfg.finest_cells() as f64;
    run_mr_dt(m, cfg, rule.dt(dx), t_final, snapshots)
}
