//! Kinematic traffic model with Dick-Greenberg velocity, driver reaction
//! and anticipation distance, on a circular road.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Boundary, DiffusionFunction, Domain, FluxFunction, Gamma, InitialData, ModelParts, ModelSpec,
    TabulatedDiffusion,
};
use crate::error::{Error, Result};

/// Standard gravity in mi/h^2.
pub const GRAVITY_MI_H2: f64 = 9.80665 * 3600.0 * 3600.0 / 1609.344;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficParams {
    /// Maximum density (cars/mi).
    pub u_max: f64,
    pub c_log: f64,
    /// mph
    pub v_max_normal: f64,
    /// mph, on the reduced segment
    pub v_max_reduced: f64,
    pub reduced_start: f64,
    pub reduced_end: f64,
    /// Left end of the circular road (mi).
    pub road_start: f64,
    pub road_length: f64,
    /// Reaction time (h).
    pub tau: f64,
    /// Deceleration (mi/h^2).
    pub a_decel: f64,
    /// Minimal anticipation distance (mi).
    pub l_min: f64,
    pub convoy_start: f64,
    pub convoy_end: f64,
    pub convoy_density: f64,
}

impl TrafficParams {
    /// Convoy passing a slow segment on an 8 mi ring.
    pub fn example1() -> Self {
        TrafficParams {
            u_max: 220.0,
            c_log: std::f64::consts::E / 7.0,
            v_max_normal: 70.0,
            v_max_reduced: 25.0,
            reduced_start: 0.0,
            reduced_end: 1.0,
            road_start: -4.0,
            road_length: 8.0,
            tau: 2.0 / 3600.0,
            a_decel: 0.5 * GRAVITY_MI_H2,
            l_min: 0.05,
            convoy_start: -2.0,
            convoy_end: -1.0,
            convoy_density: 100.0,
        }
    }

    pub fn critical_density(&self) -> f64 {
        self.u_max * (-1.0 / self.c_log).exp()
    }

    pub fn v_max_at(&self, x: f64) -> f64 {
        if self.reduced_start <= x && x <= self.reduced_end {
            self.v_max_reduced
        } else {
            self.v_max_normal
        }
    }

    /// Dimensionless velocity `min(1, C ln(u_max/u))`.
    pub fn hindrance(&self, u: f64) -> f64 {
        if u <= self.critical_density() {
            1.0
        } else {
            self.c_log * (self.u_max / u).ln()
        }
    }

    /// Diffusion coefficient `a(u)`, using `v_max_normal` throughout.
    pub fn diffusion_coefficient(&self, u: f64) -> f64 {
        let uc = self.critical_density();
        if u <= uc || u > self.u_max {
            return 0.0;
        }
        let v = self.v_max_normal;
        let dv = -self.c_log / u;
        let speed = v * self.hindrance(u);
        let anticipation = (speed * speed / (2.0 * self.a_decel)).max(self.l_min);
        -u * v * dv * (anticipation + self.tau * v * u * dv)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("u_max", self.u_max),
            ("c_log", self.c_log),
            ("v_max_normal", self.v_max_normal),
            ("v_max_reduced", self.v_max_reduced),
            ("road_length", self.road_length),
            ("a_decel", self.a_decel),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Model(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tau >= 0.0 && self.l_min >= 0.0) {
            return Err(Error::Model("tau and l_min must be nonnegative".into()));
        }
        let end = self.road_start + self.road_length;
        if !(self.road_start < self.reduced_start
            && self.reduced_start < self.reduced_end
            && self.reduced_end < end)
        {
            return Err(Error::Model(format!(
                "reduced segment [{}, {}] must lie inside the road ({}, {end})",
                self.reduced_start, self.reduced_end, self.road_start
            )));
        }
        if !(self.convoy_start < self.convoy_end) {
            return Err(Error::Model("convoy interval is empty".into()));
        }
        if !(0.0..=self.u_max).contains(&self.convoy_density) {
            return Err(Error::Model("convoy density outside [0, u_max]".into()));
        }
        let uc = self.critical_density();
        let n = 10_000;
        for k in 1..=n {
            let u = uc + (self.u_max - uc) * k as f64 / n as f64;
            let a = self.diffusion_coefficient(u);
            if a < 0.0 {
                return Err(Error::Model(format!(
                    "diffusion coefficient negative ({a:e}) at u = {u}; increase l_min or decrease tau"
                )));
            }
        }
        Ok(())
    }
}

/// `gamma * u * V(u)` with the Dick-Greenberg velocity; `gamma.flux[0]`
/// carries the local speed limit.
#[derive(Debug, Clone)]
pub struct DickGreenbergFlux {
    u_max: f64,
    c_log: f64,
    u_c: f64,
}

impl DickGreenbergFlux {
    pub fn new(u_max: f64, c_log: f64) -> Self {
        DickGreenbergFlux { u_max, c_log, u_c: u_max * (-1.0 / c_log).exp() }
    }
}

impl FluxFunction for DickGreenbergFlux {
    fn value(&self, g: &Gamma, u: f64) -> f64 {
        if u <= 0.0 || u >= self.u_max {
            0.0
        } else if u <= self.u_c {
            g.flux[0] * u
        } else {
            g.flux[0] * self.c_log * u * (self.u_max / u).ln()
        }
    }

    fn derivative(&self, g: &Gamma, u: f64) -> f64 {
        if u < 0.0 || u > self.u_max {
            0.0
        } else if u <= self.u_c {
            g.flux[0]
        } else {
            g.flux[0] * self.c_log * ((self.u_max / u).ln() - 1.0)
        }
    }

    fn kinks(&self, _g: &Gamma) -> Vec<f64> {
        vec![self.u_c]
    }
}

pub fn traffic_flux(p: &TrafficParams, x: f64, u: f64) -> f64 {
    let g = Gamma::new([p.v_max_at(x), 0.0], 1.0);
    DickGreenbergFlux::new(p.u_max, p.c_log).value(&g, u)
}

/// Tabulated `A(u)` for the traffic model.
pub fn traffic_diffusion(p: &TrafficParams) -> Result<TabulatedDiffusion> {
    p.validate()?;
    let q = p.clone();
    TabulatedDiffusion::new(Arc::new(move |u| q.diffusion_coefficient(u)), p.critical_density(), p.u_max)
}

/// `A(u)`; builds the table on every call, so prefer [`traffic_diffusion`]
/// for repeated evaluation.
pub fn traffic_integrated_diffusion(p: &TrafficParams, u: f64) -> Result<f64> {
    if !(0.0..=p.u_max).contains(&u) {
        return Err(Error::OutOfRange(format!("u = {u} outside [0, {}]", p.u_max)));
    }
    Ok(traffic_diffusion(p)?.integrated(u))
}

pub fn traffic_model(p: &TrafficParams) -> Result<ModelSpec> {
    let diffusion = traffic_diffusion(p)?;
    let normal = Gamma::new([p.v_max_normal, 0.0], 1.0);
    let reduced = Gamma::new([p.v_max_reduced, 0.0], 1.0);
    ModelSpec::new(ModelParts {
        name: "traffic".into(),
        flux: Arc::new(DickGreenbergFlux::new(p.u_max, p.c_log)),
        diffusion: Some(Arc::new(diffusion)),
        gamma_breaks: vec![p.reduced_start, p.reduced_end],
        gammas: vec![normal, reduced, normal],
        u_max: p.u_max,
        domain: Domain::new(p.road_start, p.road_start + p.road_length),
        boundary: Boundary::Periodic,
        initial: InitialData::piecewise_constant(
            vec![p.convoy_start, p.convoy_end],
            vec![0.0, p.convoy_density, 0.0],
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_density_matches_known_value() {
        let p = TrafficParams::example1();
        assert!((p.critical_density() - 16.7512).abs() < 1e-4);
    }

    #[test]
    fn flux_values() {
        let p = TrafficParams::example1();
        let uc = p.critical_density();
        assert_eq!(traffic_flux(&p, 3.0, 0.0), 0.0);
        assert!((traffic_flux(&p, 3.0, uc) - 70.0 * uc).abs() < 1e-9);
        assert!((traffic_flux(&p, 3.0, 16.7512) - 1172.58).abs() < 0.01);
        assert_eq!(traffic_flux(&p, 3.0, 220.0), 0.0);
        assert!((traffic_flux(&p, 0.5, uc) - 25.0 * uc).abs() < 1e-9);
    }

    #[test]
    fn flux_continuous_at_critical_density() {
        let p = TrafficParams::example1();
        let uc = p.critical_density();
        let below = traffic_flux(&p, 3.0, uc * (1.0 - 1e-12));
        let above = traffic_flux(&p, 3.0, uc * (1.0 + 1e-12));
        assert!((below - above).abs() < 1e-6);
    }

    #[test]
    fn diffusion_degenerate_and_increasing() {
        let p = TrafficParams::example1();
        let d = traffic_diffusion(&p).unwrap();
        assert_eq!(d.integrated(0.0), 0.0);
        assert_eq!(d.integrated(p.critical_density()), 0.0);
        assert!(d.integrated(100.0) > d.integrated(50.0));
        assert!(traffic_integrated_diffusion(&p, 300.0).is_err());
    }

    #[test]
    fn negative_coefficient_rejected() {
        let mut p = TrafficParams::example1();
        p.l_min = 0.0;
        p.a_decel = 1e9;
        assert!(traffic_model(&p).is_err());
    }

    #[test]
    fn model_bounds() {
        let m = traffic_model(&TrafficParams::example1()).unwrap();
        assert!((m.max_flux_derivative() - 70.0).abs() < 1e-9);
        let a = m.max_diffusion_coefficient();
        assert!(a > 1.2 && a < 1.35, "{a}");
    }
}
