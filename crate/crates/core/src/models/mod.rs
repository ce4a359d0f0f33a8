//! Problem data for `u_t + f(gamma(x), u)_x = (gamma_1(x) A(u)_x)_x` on a
//! bounded interval: fluxes, degenerate diffusion, piecewise constant
//! parameter fields and initial data.

mod clarifier;
pub mod presets;
mod traffic;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, gauss3_mean};

pub use clarifier::{
    clarifier_batch_flux, clarifier_flux, clarifier_integrated_diffusion, clarifier_model,
    BatchSettlingFlux, ClarifierDiffusion, ClarifierFlux, ClarifierParams,
};
pub use traffic::{
    traffic_diffusion, traffic_flux, traffic_integrated_diffusion, traffic_model, DickGreenbergFlux,
    TrafficParams, GRAVITY_MI_H2,
};

/// Number of samples used when scanning `f_u` for sign changes.
pub const CRITICAL_SCAN_POINTS: usize = 10_000;

const SUP_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Transparent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Self {
        Domain { lo, hi }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Parameter vector on one piece of the spatial field. `flux` feeds the
/// convective flux, `diffusion` is the multiplier `gamma_1` of the
/// diffusive term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gamma {
    pub flux: [f64; 2],
    pub diffusion: f64,
}

impl Gamma {
    pub fn new(flux: [f64; 2], diffusion: f64) -> Self {
        Gamma { flux, diffusion }
    }
}

/// Convective flux `f(gamma, u)` together with its derivative in `u`.
pub trait FluxFunction: Send + Sync + fmt::Debug {
    fn value(&self, gamma: &Gamma, u: f64) -> f64;

    fn derivative(&self, gamma: &Gamma, u: f64) -> f64;

    /// Points in `(0, u_max)` where `derivative` is discontinuous.
    fn kinks(&self, _gamma: &Gamma) -> Vec<f64> {
        Vec::new()
    }
}

/// Integrated diffusion `A(u)` and its derivative `a(u) = A'(u) >= 0`.
pub trait DiffusionFunction: Send + Sync + fmt::Debug {
    fn integrated(&self, u: f64) -> f64;

    fn coefficient(&self, u: f64) -> f64;

    /// Upper end `u_c` of the degeneracy interval `[0, u_c]`.
    fn degeneracy_limit(&self) -> f64;
}

/// One branch of the flux, i.e. `u -> f(gamma, u)` for a fixed parameter
/// vector, with the points where `f` changes monotonicity.
#[derive(Debug, Clone)]
pub struct FluxBranch {
    gamma: Gamma,
    critical: Vec<f64>,
    critical_flux: Vec<f64>,
}

impl FluxBranch {
    pub fn new(flux: &dyn FluxFunction, gamma: Gamma, u_max: f64) -> Self {
        let mut points = sign_changes(|u| flux.derivative(&gamma, u), u_max);
        points.extend(flux.kinks(&gamma).into_iter().filter(|&k| k > 0.0 && k < u_max));
        points.sort_by(f64::total_cmp);
        points.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * u_max);
        let critical_flux = points.iter().map(|&u| flux.value(&gamma, u)).collect();
        FluxBranch { gamma, critical: points, critical_flux }
    }

    pub fn gamma(&self) -> &Gamma {
        &self.gamma
    }

    /// Ordered points in `(0, u_max)` separating intervals of monotonicity.
    pub fn critical_points(&self) -> &[f64] {
        &self.critical
    }

    /// Total variation of `f` over `[lo, hi]`, given `f(lo)` and `f(hi)`.
    #[inline]
    pub(crate) fn variation(&self, lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> f64 {
        let mut tv = 0.0;
        let mut prev = f_lo;
        for (&c, &fc) in self.critical.iter().zip(&self.critical_flux) {
            if c <= lo {
                continue;
            }
            if c >= hi {
                break;
            }
            tv += (fc - prev).abs();
            prev = fc;
        }
        tv + (f_hi - prev).abs()
    }
}

fn sign_changes<F: Fn(f64) -> f64>(g: F, u_max: f64) -> Vec<f64> {
    let n = CRITICAL_SCAN_POINTS;
    let du = u_max / n as f64;
    let mut out = Vec::new();
    let mut prev_u = 0.0;
    let mut prev = g(0.0);
    for k in 1..=n {
        let u = if k == n { u_max } else { k as f64 * du };
        let d = g(u);
        if d == 0.0 {
            if k < n {
                out.push(u);
            }
        } else if prev != 0.0 && prev.signum() != d.signum() {
            out.push(bisect(&g, prev_u, u, prev));
        }
        prev_u = u;
        prev = d;
    }
    out
}

fn bisect<F: Fn(f64) -> f64>(g: &F, mut a: f64, mut b: f64, ga: f64) -> f64 {
    let sa = ga.signum();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if gm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Supremum of `|g|` on `[0, u_max]`: dense sampling plus golden-section
/// refinement around the best sample.
fn sup_abs<F: Fn(f64) -> f64>(g: F, u_max: f64, extra: &[f64]) -> f64 {
    let n = SUP_SAMPLES;
    let mut samples: Vec<f64> = (0..=n).map(|k| u_max * k as f64 / n as f64).collect();
    let nudge = 1e-12 * u_max;
    for &e in extra {
        for u in [e - nudge, e, e + nudge] {
            if (0.0..=u_max).contains(&u) {
                samples.push(u);
            }
        }
    }
    samples.sort_by(f64::total_cmp);
    let (best_k, best) = samples
        .iter()
        .enumerate()
        .map(|(k, &u)| (k, g(u).abs()))
        .fold((0, 0.0), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    let a = samples[best_k.saturating_sub(1)];
    let b = samples[(best_k + 1).min(samples.len() - 1)];
    best.max(golden_max(|u| g(u).abs(), a, b))
}

fn golden_max<F: Fn(f64) -> f64>(h: F, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut hc, mut hd) = (h(c), h(d));
    for _ in 0..100 {
        if hc > hd {
            b = d;
            d = c;
            hd = hc;
            c = b - r * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + r * (b - a);
            hd = h(d);
        }
        if b - a < 1e-15 * (1.0 + b.abs()) {
            break;
        }
    }
    hc.max(hd)
}

/// `gamma.flux[1] * u`.
#[derive(Debug, Clone, Copy)]
pub struct LinearFlux;

impl FluxFunction for LinearFlux {
    fn value(&self, g: &Gamma, u: f64) -> f64 {
        g.flux[1] * u
    }

    fn derivative(&self, g: &Gamma, _u: f64) -> f64 {
        g.flux[1]
    }
}

/// Piecewise constant parameter field with jumps at `breaks`.
#[derive(Debug, Clone)]
pub struct GammaField {
    breaks: Vec<f64>,
    branches: Vec<FluxBranch>,
}

impl GammaField {
    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn branches(&self) -> &[FluxBranch] {
        &self.branches
    }

    /// Index of the branch seen from the left at `x`, i.e. `gamma(x^-)`.
    pub fn left_limit_index(&self, x: f64, tol: f64) -> usize {
        self.breaks.iter().take_while(|&&b| b < x - tol).count()
    }
}

/// One piece of the initial datum.
#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant(c) => write!(f, "Constant({c})"),
            Profile::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Piecewise smooth initial datum with jumps at known positions.
#[derive(Debug, Clone)]
pub struct InitialData {
    breaks: Vec<f64>,
    pieces: Vec<Profile>,
}

impl InitialData {
    pub fn new(breaks: Vec<f64>, pieces: Vec<Profile>) -> Result<Self> {
        if pieces.len() != breaks.len() + 1 {
            return Err(Error::Model(format!(
                "initial data has {} breaks but {} pieces",
                breaks.len(),
                pieces.len()
            )));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Model("initial data breaks must increase".into()));
        }
        Ok(InitialData { breaks, pieces })
    }

    pub fn constant(c: f64) -> Self {
        InitialData { breaks: Vec::new(), pieces: vec![Profile::Constant(c)] }
    }

    pub fn piecewise_constant(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(breaks, values.into_iter().map(Profile::Constant).collect())
    }

    pub fn smooth<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        InitialData { breaks: Vec::new(), pieces: vec![Profile::Function(Arc::new(f))] }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn value(&self, x: f64) -> f64 {
        let k = self.breaks.iter().take_while(|&&b| b <= x).count();
        match &self.pieces[k] {
            Profile::Constant(c) => *c,
            Profile::Function(f) => f(x),
        }
    }

    /// Mean of the datum over `[a, b]`: exact on constant pieces, three-point
    /// Gauss on smooth pieces.
    pub fn cell_average(&self, a: f64, b: f64) -> f64 {
        let first = self.breaks.iter().take_while(|&&x| x <= a).count();
        let mut total = 0.0;
        let mut left = a;
        let mut k = first;
        loop {
            let right = match self.breaks.get(k) {
                Some(&x) if x < b => x,
                _ => b,
            };
            if right > left {
                let mean = match &self.pieces[k] {
                    Profile::Constant(c) => *c,
                    Profile::Function(f) => gauss3_mean(&|x| f(x), left, right),
                };
                total += mean * (right - left);
            }
            if right >= b {
                break;
            }
            left = right;
            k += 1;
        }
        if self.breaks.is_empty() || first == k {
            // single piece: avoid the round trip through the width
            return match &self.pieces[first] {
                Profile::Constant(c) => *c,
                Profile::Function(f) => gauss3_mean(&|x| f(x), a, b),
            };
        }
        total / (b - a)
    }
}

/// Everything needed to build a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub name: String,
    pub flux: Arc<dyn FluxFunction>,
    pub diffusion: Option<Arc<dyn DiffusionFunction>>,
    pub gamma_breaks: Vec<f64>,
    pub gammas: Vec<Gamma>,
    pub u_max: f64,
    pub domain: Domain,
    pub boundary: Boundary,
    pub initial: InitialData,
}

/// Complete, immutable problem definition.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    name: String,
    flux: Arc<dyn FluxFunction>,
    diffusion: Option<Arc<dyn DiffusionFunction>>,
    gamma: GammaField,
    u_max: f64,
    domain: Domain,
    boundary: Boundary,
    initial: InitialData,
    max_flux_derivative: f64,
    max_diffusion: f64,
}

impl ModelSpec {
    pub fn new(parts: ModelParts) -> Result<Self> {
        let ModelParts { name, flux, diffusion, gamma_breaks, gammas, u_max, domain, boundary, initial } =
            parts;
        if !(u_max > 0.0 && u_max.is_finite()) {
            return Err(Error::Model(format!("u_max must be positive, got {u_max}")));
        }
        if !(domain.lo < domain.hi) {
            return Err(Error::Model(format!("empty domain [{}, {}]", domain.lo, domain.hi)));
        }
        if gammas.len() != gamma_breaks.len() + 1 {
            return Err(Error::Model(format!(
                "{} parameter jumps need {} pieces, got {}",
                gamma_breaks.len(),
                gamma_breaks.len() + 1,
                gammas.len()
            )));
        }
        if gamma_breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Model("parameter jumps must be strictly increasing".into()));
        }
        if gamma_breaks.iter().any(|&b| b <= domain.lo || b >= domain.hi) {
            return Err(Error::Model("parameter jumps must lie inside the domain".into()));
        }
        if boundary == Boundary::Periodic && gammas.first() != gammas.last() {
            return Err(Error::Model("periodic domain needs matching end pieces".into()));
        }
        let branches: Vec<FluxBranch> =
            gammas.iter().map(|g| FluxBranch::new(flux.as_ref(), *g, u_max)).collect();

        let max_flux_derivative = branches
            .iter()
            .map(|b| {
                let mut extra = b.critical.clone();
                extra.extend(flux.kinks(&b.gamma));
                sup_abs(|u| flux.derivative(&b.gamma, u), u_max, &extra)
            })
            .fold(0.0, f64::max);
        let max_diffusion = match &diffusion {
            Some(d) => {
                let uc = d.degeneracy_limit();
                sup_abs(|u| d.coefficient(u), u_max, &[uc])
            }
            None => 0.0,
        };

        Ok(ModelSpec {
            name,
            flux,
            diffusion,
            gamma: GammaField { breaks: gamma_breaks, branches },
            u_max,
            domain,
            boundary,
            initial,
            max_flux_derivative,
            max_diffusion,
        })
    }

    /// Same problem under another boundary condition.
    pub fn with_boundary(&self, boundary: Boundary) -> Result<ModelSpec> {
        let g = &self.gamma.branches;
        if boundary == Boundary::Periodic && g.first().map(|b| b.gamma) != g.last().map(|b| b.gamma) {
            return Err(Error::Model("periodic domain needs matching end pieces".into()));
        }
        Ok(ModelSpec { boundary, ..self.clone() })
    }

    /// Same problem with a different initial datum.
    pub fn with_initial(&self, initial: InitialData) -> ModelSpec {
        ModelSpec { initial, ..self.clone() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn flux_function(&self) -> &dyn FluxFunction {
        self.flux.as_ref()
    }

    pub fn diffusion(&self) -> Option<&dyn DiffusionFunction> {
        self.diffusion.as_deref()
    }

    pub fn gamma_field(&self) -> &GammaField {
        &self.gamma
    }

    pub fn initial(&self) -> &InitialData {
        &self.initial
    }

    /// Branch index of `gamma(x^-)`; at a jump the left piece is returned.
    pub fn branch_index(&self, x: f64) -> usize {
        self.gamma.left_limit_index(x, 1e-12 * self.domain.length())
    }

    pub fn gamma_at(&self, x: f64) -> Gamma {
        self.gamma.branches[self.branch_index(x)].gamma
    }

    pub fn flux(&self, x: f64, u: f64) -> f64 {
        self.flux.value(&self.gamma_at(x), u)
    }

    pub fn flux_du(&self, x: f64, u: f64) -> f64 {
        self.flux.derivative(&self.gamma_at(x), u)
    }

    pub fn flux_critical_points(&self, x: f64) -> &[f64] {
        self.gamma.branches[self.branch_index(x)].critical_points()
    }

    pub fn diffusion_integrated(&self, u: f64) -> f64 {
        self.diffusion.as_ref().map_or(0.0, |d| d.integrated(u))
    }

    pub fn diffusion_coefficient(&self, u: f64) -> f64 {
        self.diffusion.as_ref().map_or(0.0, |d| d.coefficient(u))
    }

    /// `sup |f_u(gamma(x), u)|` over all branches and `u` in `[0, u_max]`.
    pub fn max_flux_derivative(&self) -> f64 {
        self.max_flux_derivative
    }

    /// `sup |A'(u)|` over `[0, u_max]`; zero without diffusion.
    pub fn max_diffusion_coefficient(&self) -> f64 {
        self.max_diffusion
    }

    /// Rejects parameter jumps that do not sit on an interface of a uniform
    /// grid with `cells` cells.
    pub fn check_alignment(&self, cells: usize) -> Result<()> {
        let dx = self.domain.length() / cells as f64;
        for &b in &self.gamma.breaks {
            let k = ((b - self.domain.lo) / dx).round();
            if ((self.domain.lo + k * dx) - b).abs() > 1e-9 * dx {
                return Err(Error::Model(format!(
                    "parameter jump at x = {b} is not a cell interface of the {cells}-cell grid"
                )));
            }
        }
        Ok(())
    }

    /// Finest-grid interface indices of the parameter jumps.
    pub fn jump_interfaces(&self, cells: usize) -> Vec<usize> {
        let dx = self.domain.length() / cells as f64;
        self.gamma.breaks.iter().map(|&b| ((b - self.domain.lo) / dx).round() as usize).collect()
    }
}

/// `A(u)` tabulated on `[u_c, u_max]` from a nonnegative coefficient by
/// adaptive quadrature, evaluated by linear interpolation.
#[derive(Clone)]
pub struct TabulatedDiffusion {
    coefficient: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    u_c: f64,
    u_max: f64,
    du: f64,
    table: Vec<f64>,
}

impl fmt::Debug for TabulatedDiffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TabulatedDiffusion")
            .field("u_c", &self.u_c)
            .field("u_max", &self.u_max)
            .field("entries", &self.table.len())
            .finish()
    }
}

impl TabulatedDiffusion {
    pub const ENTRIES: usize = 4096;

    pub fn new(coefficient: Arc<dyn Fn(f64) -> f64 + Send + Sync>, u_c: f64, u_max: f64) -> Result<Self> {
        if !(0.0..u_max).contains(&u_c) {
            return Err(Error::Model(format!("degeneracy limit {u_c} outside [0, {u_max})")));
        }
        let n = Self::ENTRIES;
        let du = (u_max - u_c) / n as f64;
        let scale = (0..=n)
            .map(|k| coefficient(u_c + (k as f64 + 0.5).min(n as f64) * du).abs())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut table = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        table.push(0.0);
        for k in 0..n {
            let a = u_c + k as f64 * du;
            let b = if k + 1 == n { u_max } else { a + du };
            acc += adaptive_simpson(&|s| coefficient(s), a, b, 1e-13 * scale * du);
            table.push(acc);
        }
        Ok(TabulatedDiffusion { coefficient, u_c, u_max, du, table })
    }
}

impl DiffusionFunction for TabulatedDiffusion {
    fn integrated(&self, u: f64) -> f64 {
        if u <= self.u_c {
            return 0.0;
        }
        if u >= self.u_max {
            return self.table[self.table.len() - 1];
        }
        let s = (u - self.u_c) / self.du;
        let k = (s as usize).min(self.table.len() - 2);
        let w = s - k as f64;
        self.table[k] + w * (self.table[k + 1] - self.table[k])
    }

    fn coefficient(&self, u: f64) -> f64 {
        if u <= self.u_c || u > self.u_max {
            0.0
        } else {
            (self.coefficient)(u)
        }
    }

    fn degeneracy_limit(&self) -> f64 {
        self.u_c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct Linear;

    impl FluxFunction for Linear {
        fn value(&self, g: &Gamma, u: f64) -> f64 {
            g.flux[1] * (u - 0.5)
        }
        fn derivative(&self, g: &Gamma, _u: f64) -> f64 {
            g.flux[1]
        }
    }

    fn linear_model(speed: f64) -> ModelSpec {
        ModelSpec::new(ModelParts {
            name: "linear".into(),
            flux: Arc::new(Linear),
            diffusion: None,
            gamma_breaks: vec![],
            gammas: vec![Gamma::new([0.0, speed], 0.0)],
            u_max: 1.0,
            domain: Domain::new(0.0, 1.0),
            boundary: Boundary::Periodic,
            initial: InitialData::constant(0.2),
        })
        .unwrap()
    }

    #[test]
    fn linear_flux_derivative_bound() {
        assert_eq!(linear_model(-1.0).max_flux_derivative(), 1.0);
        assert_eq!(linear_model(0.0).max_flux_derivative(), 0.0);
        assert!(linear_model(-1.0).flux_critical_points(0.3).is_empty());
    }

    #[test]
    fn cell_average_of_jump_is_length_weighted() {
        let init = InitialData::piecewise_constant(vec![0.25], vec![1.0, 3.0]).unwrap();
        assert_eq!(init.cell_average(0.0, 0.5), 2.0);
        assert_eq!(init.cell_average(0.5, 1.0), 3.0);
        assert_eq!(init.cell_average(-1.0, 0.0), 1.0);
    }

    #[test]
    fn smooth_average_exact_for_quadratic() {
        let init = InitialData::smooth(|x| x * x);
        let m = init.cell_average(0.5, 0.75);
        let exact = (0.75f64.powi(3) - 0.5f64.powi(3)) / 3.0 / 0.25;
        assert!((m - exact).abs() < 1e-15);
    }

    #[test]
    fn left_limit_takes_left_piece_at_jump() {
        let field = GammaField {
            breaks: vec![0.0],
            branches: vec![
                FluxBranch::new(&Linear, Gamma::new([0.0, -1.0], 0.0), 1.0),
                FluxBranch::new(&Linear, Gamma::new([0.0, 2.0], 0.0), 1.0),
            ],
        };
        assert_eq!(field.left_limit_index(0.0, 1e-12), 0);
        assert_eq!(field.left_limit_index(1e-6, 1e-12), 1);
        assert_eq!(field.left_limit_index(-3.0, 1e-12), 0);
    }

    #[test]
    fn tabulated_diffusion_of_constant_coefficient() {
        let d = TabulatedDiffusion::new(Arc::new(|_| 2.0), 0.25, 1.0).unwrap();
        assert_eq!(d.integrated(0.1), 0.0);
        assert!((d.integrated(0.75) - 1.0).abs() < 1e-12);
        assert!((d.integrated(1.0) - 1.5).abs() < 1e-12);
        assert_eq!(d.coefficient(0.2), 0.0);
    }

    #[test]
    fn misaligned_jump_is_rejected() {
        let mut parts = ModelParts {
            name: "t".into(),
            flux: Arc::new(Linear),
            diffusion: None,
            gamma_breaks: vec![0.3],
            gammas: vec![Gamma::new([0.0, 1.0], 0.0), Gamma::new([0.0, 2.0], 0.0)],
            u_max: 1.0,
            domain: Domain::new(0.0, 1.0),
            boundary: Boundary::Transparent,
            initial: InitialData::constant(0.0),
        };
        let m = ModelSpec::new(parts.clone()).unwrap();
        assert!(m.check_alignment(16).is_err());
        parts.gamma_breaks = vec![0.375];
        let m = ModelSpec::new(parts).unwrap();
        assert!(m.check_alignment(16).is_ok());
        assert_eq!(m.jump_interfaces(16), vec![6]);
    }
}
