//! First-order explicit finite volume scheme on a uniform grid with the
//! Engquist-Osher flux and a conservative diffusion difference.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Boundary, FluxBranch, ModelSpec};

/// How the fixed time step is derived from the finest cell width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// `dt = lambda * dx`
    Lambda(f64),
    /// `dt = mu * dx^2`
    Mu(f64),
}

impl StepRule {
    pub fn dt(&self, dx: f64) -> f64 {
        match *self {
            StepRule::Lambda(l) => l * dx,
            StepRule::Mu(m) => m * dx * dx,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformState {
    pub level: u32,
    pub roots: usize,
    pub lo: f64,
    pub dx: f64,
    pub dt: f64,
    pub steps: u64,
    pub averages: Vec<f64>,
}

impl UniformState {
    /// Exact cell averages of the model's initial datum.
    pub fn initial(m: &ModelSpec, level: u32, roots: usize, dt: f64) -> Self {
        let n = roots << level;
        let d = m.domain();
        let dx = d.length() / n as f64;
        let init = m.initial();
        let averages = (0..n).map(|j| init.cell_average(d.lo + j as f64 * dx, d.lo + (j + 1) as f64 * dx)).collect();
        UniformState { level, roots, lo: d.lo, dx, dt, steps: 0, averages }
    }

    pub fn cells(&self) -> usize {
        self.averages.len()
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn lambda(&self) -> f64 {
        self.dt / self.dx
    }

    pub fn mu(&self) -> f64 {
        self.dt / (self.dx * self.dx)
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells()).map(|j| self.lo + (j as f64 + 0.5) * self.dx).collect()
    }

    pub fn mass(&self) -> f64 {
        self.averages.iter().sum::<f64>() * self.dx
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_xy_csv(path, ("x", "u"), &self.centers(), &self.averages)
    }
}

/// Engquist-Osher flux on one branch; inputs are clamped to `[0, u_max]`.
#[inline]
pub fn eo_flux(m: &ModelSpec, branch: &FluxBranch, u_left: f64, u_right: f64) -> f64 {
    let a = u_left.clamp(0.0, m.u_max());
    let b = u_right.clamp(0.0, m.u_max());
    let f = m.flux_function();
    let fa = f.value(branch.gamma(), a);
    if a == b {
        return fa;
    }
    let fb = f.value(branch.gamma(), b);
    eo_from_values(branch, a, b, fa, fb)
}

#[inline]
pub(crate) fn eo_from_values(branch: &FluxBranch, a: f64, b: f64, fa: f64, fb: f64) -> f64 {
    if a == b {
        return fa;
    }
    if a < b {
        0.5 * (fa + fb - branch.variation(a, b, fa, fb))
    } else {
        0.5 * (fa + fb + branch.variation(b, a, fb, fa))
    }
}

/// Largest `dt` with `dt/dx * max|f_u| + dt/dx^2 * max|A'| <= 1/2`.
pub fn cfl_max_dt(m: &ModelSpec, dx: f64) -> f64 {
    cfl_bound(m.max_flux_derivative(), m.max_diffusion_coefficient(), dx)
}

pub fn cfl_bound(max_flux: f64, max_diffusion: f64, dx: f64) -> f64 {
    let rate = max_flux / dx + max_diffusion / (dx * dx);
    if rate == 0.0 {
        f64::INFINITY
    } else {
        0.5 / rate
    }
}

pub fn check_cfl(m: &ModelSpec, dx: f64, dt: f64) -> Result<()> {
    let max_dt = cfl_max_dt(m, dx);
    if !(dt > 0.0) || dt > max_dt * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, max_dt });
    }
    Ok(())
}

/// `x - lambda (h_r - h_l) + mu (d_r - d_l)`, shared by every solver.
#[inline(always)]
pub(crate) fn update_value(u: f64, lambda: f64, mu: f64, h_l: f64, h_r: f64, d_l: f64, d_r: f64) -> f64 {
    u - lambda * (h_r - h_l) + mu * (d_r - d_l)
}

/// Precomputed interface data and scratch space for repeated steps.
#[derive(Debug, Clone)]
pub struct UniformStepper<'m> {
    model: &'m ModelSpec,
    /// Branch index per interface `j - 1/2`, `j = 0..=N`.
    branch: Vec<usize>,
    weight: Vec<f64>,
    flux: Vec<f64>,
    diff: Vec<f64>,
    integrated: Vec<f64>,
    next: Vec<f64>,
    pub clamped: u64,
}

impl<'m> UniformStepper<'m> {
    pub fn new(model: &'m ModelSpec, state: &UniformState) -> Result<Self> {
        let n = state.cells();
        model.check_alignment(n)?;
        let branch: Vec<usize> =
            (0..=n).map(|j| model.branch_index(state.lo + j as f64 * state.dx)).collect();
        let branches = model.gamma_field().branches();
        let weight = branch.iter().map(|&b| branches[b].gamma().diffusion).collect();
        Ok(UniformStepper {
            model,
            branch,
            weight,
            flux: vec![0.0; n + 1],
            diff: vec![0.0; n + 1],
            integrated: vec![0.0; n],
            next: vec![0.0; n],
            clamped: 0,
        })
    }

    /// One explicit Euler step in place.
    pub fn step(&mut self, state: &mut UniformState) -> Result<()> {
        let m = self.model;
        let n = state.cells();
        if self.branch.len() != n + 1 {
            return Err(Error::LengthMismatch { expected: self.branch.len() - 1, actual: n });
        }
        check_cfl(m, state.dx, state.dt)?;
        let u = &state.averages;
        let u_max = m.u_max();
        let f = m.flux_function();
        let branches = m.gamma_field().branches();
        let periodic = m.boundary() == Boundary::Periodic;

        self.clamped += u.iter().filter(|&&v| v < 0.0 || v > u_max).count() as u64;

        let diffusive = m.diffusion().is_some();
        if let Some(d) = m.diffusion() {
            for (a, &v) in self.integrated.iter_mut().zip(u) {
                *a = d.integrated(v);
            }
        }

        // interior interfaces, reusing f(u_j) when the branch does not change
        let mut cached: Option<(usize, f64)> = None;
        for j in 1..n {
            let b = self.branch[j];
            let br = &branches[b];
            let ul = u[j - 1].clamp(0.0, u_max);
            let ur = u[j].clamp(0.0, u_max);
            let fl = match cached {
                Some((cb, v)) if cb == b => v,
                _ => f.value(br.gamma(), ul),
            };
            let fr = f.value(br.gamma(), ur);
            cached = Some((b, fr));
            self.flux[j] = eo_from_values(br, ul, ur, fl, fr);
            if diffusive {
                self.diff[j] = self.weight[j] * (self.integrated[j] - self.integrated[j - 1]);
            }
        }
        if periodic {
            let h = eo_flux(m, &branches[self.branch[n]], u[n - 1], u[0]);
            self.flux[0] = h;
            self.flux[n] = h;
            if diffusive {
                let d = self.weight[n] * (self.integrated[0] - self.integrated[n - 1]);
                self.diff[0] = d;
                self.diff[n] = d;
            }
        } else {
            self.flux[0] = eo_flux(m, &branches[self.branch[0]], u[0], u[0]);
            self.flux[n] = eo_flux(m, &branches[self.branch[n]], u[n - 1], u[n - 1]);
            if diffusive {
                // ghost cells copy their neighbour
                self.diff[0] = 0.0;
                self.diff[n] = 0.0;
            }
        }

        let lambda = state.lambda();
        let mu = state.mu();
        for j in 0..n {
            self.next[j] =
                update_value(u[j], lambda, mu, self.flux[j], self.flux[j + 1], self.diff[j], self.diff[j + 1]);
        }
        std::mem::swap(&mut state.averages, &mut self.next);
        state.steps += 1;
        if let Some(j) = state.averages.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: state.time(), index: j });
        }
        Ok(())
    }
}

/// One step on a fresh copy of `state`.
pub fn step_uniform(state: &UniformState, m: &ModelSpec, dt: f64) -> Result<UniformState> {
    let mut next = state.clone();
    next.dt = dt;
    UniformStepper::new(m, &next)?.step(&mut next)?;
    Ok(next)
}

/// Validates snapshot times and fills in the default `[t_final]`.
pub fn normalize_snapshots(t_final: f64, snapshots: &[f64]) -> Result<Vec<f64>> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::Config(format!("t_final must be finite and >= 0, got {t_final}")));
    }
    if snapshots.is_empty() {
        return Ok(vec![t_final]);
    }
    if snapshots.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("snapshot times must be sorted".into()));
    }
    if let Some(&t) = snapshots.iter().find(|&&t| t < 0.0 || t > t_final * (1.0 + 1e-12)) {
        return Err(Error::Config(format!("snapshot time {t} outside [0, {t_final}]")));
    }
    Ok(snapshots.to_vec())
}

/// First step count whose time reaches `t`.
pub fn steps_to_reach(t: f64, dt: f64) -> u64 {
    let n = (t / dt - 1e-9).ceil();
    if n <= 0.0 {
        0
    } else {
        n as u64
    }
}

#[derive(Debug, Clone)]
pub struct UniformRun {
    pub snapshots: Vec<UniformState>,
    pub dt: f64,
    pub setup_seconds: f64,
    pub loop_seconds: f64,
    /// Loop wall-clock elapsed when each snapshot was taken.
    pub snapshot_seconds: Vec<f64>,
    pub clamped: u64,
}

/// Marches with a fixed step, keeping the state at the first step whose
/// time reaches each snapshot time.
pub fn run_uniform_dt(
    m: &ModelSpec,
    level: u32,
    roots: usize,
    dt: f64,
    t_final: f64,
    snapshots: &[f64],
) -> Result<UniformRun> {
    let setup = Instant::now();
    let times = normalize_snapshots(t_final, snapshots)?;
    let mut state = UniformState::initial(m, level, roots, dt);
    check_cfl(m, state.dx, dt)?;
    let mut stepper = UniformStepper::new(m, &state)?;
    let setup_seconds = setup.elapsed().as_secs_f64();

    let clock = Instant::now();
    let mut out = Vec::with_capacity(times.len());
    let mut at = Vec::with_capacity(times.len());
    for &t in &times {
        let target = steps_to_reach(t, dt);
        while state.steps < target {
            stepper.step(&mut state)?;
        }
        at.push(clock.elapsed().as_secs_f64());
        out.push(state.clone());
    }
    Ok(UniformRun {
        snapshots: out,
        dt,
        setup_seconds,
        loop_seconds: clock.elapsed().as_secs_f64(),
        snapshot_seconds: at,
        clamped: stepper.clamped,
    })
}

pub fn run_uniform(
    m: &ModelSpec,
    level: u32,
    roots: usize,
    rule: StepRule,
    t_final: f64,
    snapshots: &[f64],
) -> Result<UniformRun> {
    let dx = m.domain().length() / (roots << level) as f64;
    run_uniform_dt(m, level, roots, rule.dt(dx), t_final, snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{presets, ClarifierParams, InitialData, TrafficParams};

    #[test]
    fn eo_examples() {
        let m = crate::models::clarifier_model(&ClarifierParams::example2()).unwrap();
        // branch 1: inside the vessel above the feed, gamma_2 = q_L
        let mut p = ClarifierParams::example2();
        p.q_l = 0.0;
        p.q_r = 0.0;
        let pure = crate::models::clarifier_model(&p).unwrap();
        let br = &pure.gamma_field().branches()[1];
        assert!((eo_flux(&pure, br, 0.0, 1.0) + 1.0).abs() < 1e-12);
        let f01 = 6.75 * 0.1 * 0.81;
        assert!((eo_flux(&pure, br, 0.1, 0.2) - f01).abs() < 1e-15);
        assert!((f01 - 0.54675).abs() < 1e-15);
        for br in m.gamma_field().branches() {
            for c in [0.0, 0.2, 0.5, 0.9, 1.0] {
                assert_eq!(eo_flux(&m, br, c, c), m.flux_function().value(br.gamma(), c));
            }
        }
    }

    #[test]
    fn cfl_examples() {
        let m = crate::models::clarifier_model(&ClarifierParams::example2()).unwrap();
        let dx = 1.0 / 256.0;
        assert!((cfl_max_dt(&m, dx) - dx / (2.0 * 7.35)).abs() < 1e-15);
        assert_eq!(cfl_bound(0.0, 1.0, 0.1), 0.5 * 0.1 * 0.1);
        assert_eq!(cfl_bound(0.0, 0.0, 0.1), f64::INFINITY);
    }

    #[test]
    fn constant_state_is_stationary() {
        let m = presets::linear_advection(-1.0, Boundary::Periodic, InitialData::constant(0.4));
        let s = UniformState::initial(&m, 6, 1, 0.001);
        let next = step_uniform(&s, &m, 0.001).unwrap();
        assert_eq!(next.averages, s.averages);
    }

    #[test]
    fn traffic_step_conserves_mass() {
        let m = crate::models::traffic_model(&TrafficParams::example1()).unwrap();
        let mut s = UniformState::initial(&m, 9, 1, 0.0003 * 8.0 / 512.0);
        let mut st = UniformStepper::new(&m, &s).unwrap();
        let m0 = s.mass();
        for _ in 0..50 {
            st.step(&mut s).unwrap();
        }
        assert!((s.mass() - m0).abs() < 1e-10 * m0);
    }

    #[test]
    fn feed_activates_only_near_feed_point() {
        let m = crate::models::clarifier_model(&ClarifierParams::example2()).unwrap();
        let dx = 4.0 / 512.0;
        let s = UniformState::initial(&m, 9, 1, dx / 16.0);
        let next = step_uniform(&s, &m, dx / 16.0).unwrap();
        let changed: Vec<usize> = (0..512).filter(|&j| next.averages[j] != 0.0).collect();
        // interface 256 sits at x = 0
        assert!(!changed.is_empty());
        assert!(changed.iter().all(|&j| j == 255 || j == 256), "{changed:?}");
        assert!(next.averages.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cfl_violation_refused() {
        let m = crate::models::clarifier_model(&ClarifierParams::example2()).unwrap();
        let s = UniformState::initial(&m, 6, 1, 1.0);
        assert!(matches!(step_uniform(&s, &m, 1.0), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn snapshot_bookkeeping() {
        let m = presets::linear_advection(1.0, Boundary::Periodic, InitialData::constant(0.5));
        let run = run_uniform(&m, 5, 1, StepRule::Lambda(0.25), 0.0, &[]).unwrap();
        assert_eq!(run.snapshots.len(), 1);
        assert_eq!(run.snapshots[0].steps, 0);
        let run = run_uniform(&m, 5, 1, StepRule::Lambda(0.25), 0.1, &[0.05, 0.1]).unwrap();
        let dt = 0.25 / 32.0;
        assert_eq!(run.snapshots[0].steps, steps_to_reach(0.05, dt));
        assert!(run.snapshots[1].time() >= 0.1 - 1e-12);
        assert!(run_uniform(&m, 5, 1, StepRule::Lambda(0.25), 0.1, &[0.2]).is_err());
    }
}
