//! Clarifier-thickener: batch settling flux, bulk transport with
//! discontinuous velocity, and sediment compressibility.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Boundary, DiffusionFunction, Domain, FluxFunction, Gamma, InitialData, ModelParts, ModelSpec,
    TabulatedDiffusion,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClarifierParams {
    /// Settling velocity scale (m/s).
    pub v_inf: f64,
    pub c_exp: f64,
    pub u_max: f64,
    /// Effective stress scale (Pa); zero gives an incompressible suspension.
    pub sigma_0: f64,
    /// Gel point.
    pub u_c: f64,
    pub beta: f64,
    /// Solid-fluid density difference (kg/m^3).
    pub delta_rho: f64,
    pub g: f64,
    /// Overflow level (m).
    pub x_l: f64,
    /// Underflow level (m).
    pub x_r: f64,
    /// Bulk velocity above the feed (m/s).
    pub q_l: f64,
    /// Bulk velocity below the feed (m/s).
    pub q_r: f64,
    pub u_feed: f64,
    pub u_init_inside: f64,
    pub u_init_outside: f64,
    /// Width of the outflow zones added on each side of the vessel (m).
    pub margin: f64,
}

impl ClarifierParams {
    /// Ideal suspension filling an initially empty vessel.
    pub fn example2() -> Self {
        ClarifierParams {
            v_inf: 27.0 / 4.0,
            c_exp: 2.0,
            u_max: 1.0,
            sigma_0: 0.0,
            u_c: 0.1,
            beta: 6.0,
            delta_rho: 1660.0,
            g: 9.81,
            x_l: -1.0,
            x_r: 1.0,
            q_l: -1.0,
            q_r: 0.6,
            u_feed: 0.8,
            u_init_inside: 0.0,
            u_init_outside: 0.0,
            margin: 1.0,
        }
    }

    /// Flocculated suspension forming a compressible sediment.
    pub fn example3() -> Self {
        ClarifierParams {
            v_inf: 1.0e-4,
            c_exp: 5.0,
            sigma_0: 1.0,
            q_l: -1.0e-5,
            q_r: 2.5e-6,
            u_feed: 0.086,
            u_init_inside: 0.1,
            ..Self::example2()
        }
    }

    pub fn has_diffusion(&self) -> bool {
        self.sigma_0 > 0.0
    }

    /// Prefactor of `a(s) = K s^(beta-1) (1-s)^C` above the gel point.
    fn stress_prefactor(&self) -> f64 {
        self.v_inf * self.sigma_0 * self.beta / (self.delta_rho * self.g * self.u_c.powf(self.beta))
    }

    /// `a(u) = f_b(u) sigma_e'(u) / (delta_rho g u)`.
    pub fn diffusion_coefficient(&self, u: f64) -> f64 {
        if !self.has_diffusion() || u <= self.u_c || u >= self.u_max {
            return 0.0;
        }
        self.stress_prefactor() * u.powf(self.beta - 1.0) * (1.0 - u).powf(self.c_exp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v_inf", self.v_inf), ("u_max", self.u_max), ("c_exp", self.c_exp)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Model(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sigma_0 < 0.0 {
            return Err(Error::Model("sigma_0 must be nonnegative".into()));
        }
        if self.has_diffusion() {
            if !(self.u_c > 0.0 && self.u_c < self.u_max) {
                return Err(Error::Model(format!("gel point {} outside (0, u_max)", self.u_c)));
            }
            if !(self.beta >= 1.0 && self.delta_rho > 0.0 && self.g > 0.0) {
                return Err(Error::Model("need beta >= 1, delta_rho > 0, g > 0".into()));
            }
        }
        if !(self.x_l < 0.0 && 0.0 < self.x_r) {
            return Err(Error::Model("vessel must satisfy x_l < 0 < x_r".into()));
        }
        if !(self.q_l <= 0.0 && self.q_r >= 0.0) {
            return Err(Error::Model("bulk velocities need q_l <= 0 <= q_r".into()));
        }
        for (name, v) in [
            ("u_feed", self.u_feed),
            ("u_init_inside", self.u_init_inside),
            ("u_init_outside", self.u_init_outside),
        ] {
            if !(0.0..=self.u_max).contains(&v) {
                return Err(Error::Model(format!("{name} = {v} outside [0, u_max]")));
            }
        }
        if !(self.margin > 0.0) {
            return Err(Error::Model("margin must be positive".into()));
        }
        Ok(())
    }
}

/// `v_inf u (1-u)^C` on `(0, u_max)`, zero elsewhere.
pub fn clarifier_batch_flux(p: &ClarifierParams, u: f64) -> f64 {
    BatchSettlingFlux::from_params(p).value(u)
}

/// `gamma_2(x) (u - u_F) + gamma_1(x) f_b(u)`.
pub fn clarifier_flux(p: &ClarifierParams, x: f64, u: f64) -> f64 {
    let g1 = if p.x_l < x && x < p.x_r { 1.0 } else { 0.0 };
    let g2 = if x <= 0.0 { p.q_l } else { p.q_r };
    ClarifierFlux::from_params(p).value(&Gamma::new([g1, g2], g1), u)
}

#[derive(Debug, Clone, Copy)]
pub struct BatchSettlingFlux {
    v_inf: f64,
    c_exp: f64,
    u_max: f64,
}

impl BatchSettlingFlux {
    pub fn from_params(p: &ClarifierParams) -> Self {
        BatchSettlingFlux { v_inf: p.v_inf, c_exp: p.c_exp, u_max: p.u_max }
    }

    pub fn value(&self, u: f64) -> f64 {
        if u <= 0.0 || u >= self.u_max {
            0.0
        } else {
            self.v_inf * u * (1.0 - u).powf(self.c_exp)
        }
    }

    /// Right derivative at 0, left derivative at `u_max`.
    pub fn derivative(&self, u: f64) -> f64 {
        if u < 0.0 || u > self.u_max {
            return 0.0;
        }
        let w = 1.0 - u;
        if self.c_exp == 1.0 {
            return self.v_inf * (w - u);
        }
        self.v_inf * w.powf(self.c_exp - 1.0) * (w - self.c_exp * u)
    }
}

/// Flux `gamma.flux[1] (u - u_F) + gamma.flux[0] f_b(u)`.
#[derive(Debug, Clone)]
pub struct ClarifierFlux {
    batch: BatchSettlingFlux,
    u_feed: f64,
}

impl ClarifierFlux {
    pub fn from_params(p: &ClarifierParams) -> Self {
        ClarifierFlux { batch: BatchSettlingFlux::from_params(p), u_feed: p.u_feed }
    }
}

impl FluxFunction for ClarifierFlux {
    fn value(&self, g: &Gamma, u: f64) -> f64 {
        g.flux[1] * (u - self.u_feed) + g.flux[0] * self.batch.value(u)
    }

    fn derivative(&self, g: &Gamma, u: f64) -> f64 {
        g.flux[1] + g.flux[0] * self.batch.derivative(u)
    }
}

/// `A(u)` for the power-law effective stress. Integer `beta` and `C` give a
/// polynomial integrand and an exact antiderivative; otherwise a table.
#[derive(Debug, Clone)]
pub enum ClarifierDiffusion {
    Polynomial { u_c: f64, u_max: f64, prefactor: f64, beta: i32, c_exp: i32, params: ClarifierParams },
    Tabulated(TabulatedDiffusion),
}

fn as_small_int(v: f64) -> Option<i32> {
    (v.fract() == 0.0 && (0.0..=64.0).contains(&v)).then_some(v as i32)
}

fn binomial(n: i32, k: i32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * f64::from(n - j) / f64::from(j + 1))
}

impl ClarifierDiffusion {
    pub fn new(p: &ClarifierParams) -> Result<Self> {
        p.validate()?;
        if !p.has_diffusion() {
            return Err(Error::Model("sigma_0 = 0 has no diffusion".into()));
        }
        match (as_small_int(p.beta), as_small_int(p.c_exp)) {
            (Some(beta), Some(c_exp)) if p.u_max <= 1.0 => Ok(ClarifierDiffusion::Polynomial {
                u_c: p.u_c,
                u_max: p.u_max,
                prefactor: p.stress_prefactor(),
                beta,
                c_exp,
                params: p.clone(),
            }),
            _ => {
                let q = p.clone();
                Ok(ClarifierDiffusion::Tabulated(TabulatedDiffusion::new(
                    Arc::new(move |u| q.diffusion_coefficient(u)),
                    p.u_c,
                    p.u_max,
                )?))
            }
        }
    }
}

impl DiffusionFunction for ClarifierDiffusion {
    fn integrated(&self, u: f64) -> f64 {
        match self {
            ClarifierDiffusion::Polynomial { u_c, u_max, prefactor, beta, c_exp, .. } => {
                if u <= *u_c {
                    return 0.0;
                }
                let u = u.min(*u_max);
                // (1-s)^C = sum_k binom(C,k) (-1)^k s^k
                let mut sum = 0.0;
                for k in 0..=*c_exp {
                    let p = beta + k;
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sum += sign * binomial(*c_exp, k) * (u.powi(p) - u_c.powi(p)) / f64::from(p);
                }
                prefactor * sum
            }
            ClarifierDiffusion::Tabulated(t) => t.integrated(u),
        }
    }

    fn coefficient(&self, u: f64) -> f64 {
        match self {
            ClarifierDiffusion::Polynomial { params, .. } => params.diffusion_coefficient(u),
            ClarifierDiffusion::Tabulated(t) => t.coefficient(u),
        }
    }

    fn degeneracy_limit(&self) -> f64 {
        match self {
            ClarifierDiffusion::Polynomial { u_c, .. } => *u_c,
            ClarifierDiffusion::Tabulated(t) => t.degeneracy_limit(),
        }
    }
}

/// `A(u)`; zero for an incompressible suspension.
pub fn clarifier_integrated_diffusion(p: &ClarifierParams, u: f64) -> Result<f64> {
    if !(0.0..=p.u_max).contains(&u) {
        return Err(Error::OutOfRange(format!("u = {u} outside [0, {}]", p.u_max)));
    }
    if !p.has_diffusion() {
        return Ok(0.0);
    }
    Ok(ClarifierDiffusion::new(p)?.integrated(u))
}

pub fn clarifier_model(p: &ClarifierParams) -> Result<ModelSpec> {
    p.validate()?;
    let diffusion: Option<Arc<dyn DiffusionFunction>> = if p.has_diffusion() {
        Some(Arc::new(ClarifierDiffusion::new(p)?))
    } else {
        None
    };
    let gammas = vec![
        Gamma::new([0.0, p.q_l], 0.0),
        Gamma::new([1.0, p.q_l], 1.0),
        Gamma::new([1.0, p.q_r], 1.0),
        Gamma::new([0.0, p.q_r], 0.0),
    ];
    ModelSpec::new(ModelParts {
        name: "clarifier".into(),
        flux: Arc::new(ClarifierFlux::from_params(p)),
        diffusion,
        gamma_breaks: vec![p.x_l, 0.0, p.x_r],
        gammas,
        u_max: p.u_max,
        domain: Domain::new(p.x_l - p.margin, p.x_r + p.margin),
        boundary: Boundary::Transparent,
        initial: InitialData::piecewise_constant(
            vec![p.x_l, p.x_r],
            vec![p.u_init_outside, p.u_init_inside, p.u_init_outside],
        )?,
    })
}
