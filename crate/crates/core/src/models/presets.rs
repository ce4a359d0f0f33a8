//! Named experiment setups with their default grid and solver controls.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    clarifier_model, traffic_model, Boundary, ClarifierParams, Domain, Gamma, InitialData, LinearFlux,
    ModelParts, ModelSpec, TrafficParams,
};
use crate::error::{Error, Result};
use crate::fvcore::StepRule;

pub const PRESET_NAMES: [&str; 3] = ["traffic-ex1", "clarifier-ex2", "clarifier-ex3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParams {
    Traffic(TrafficParams),
    Clarifier(ClarifierParams),
}

impl ModelParams {
    pub fn build(&self) -> Result<ModelSpec> {
        match self {
            ModelParams::Traffic(p) => traffic_model(p),
            ModelParams::Clarifier(p) => clarifier_model(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub params: ModelParams,
    pub max_level: u32,
    pub roots: usize,
    pub epsilon: f64,
    pub alpha: f64,
    /// Constant of the reference tolerance, where one is known.
    pub tolerance_factor: Option<f64>,
    pub step: StepRule,
    pub t_final: f64,
    pub snapshots: Vec<f64>,
    /// Level of the uniform reference solution.
    pub reference_level: u32,
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "traffic-ex1" => Ok(Preset {
            name: "traffic-ex1",
            description: "convoy of cars crossing a reduced-speed segment on a circular road (mi, h)",
            params: ModelParams::Traffic(TrafficParams::example1()),
            max_level: 10,
            roots: 1,
            epsilon: 0.301,
            alpha: 0.5,
            tolerance_factor: Some(1e5),
            step: StepRule::Lambda(0.0003),
            t_final: 0.2,
            snapshots: vec![0.05, 0.1, 0.15, 0.2],
            reference_level: 13,
        }),
        "clarifier-ex2" => Ok(Preset {
            name: "clarifier-ex2",
            description: "clarifier-thickener filled with an ideal suspension (m, s, no compression)",
            params: ModelParams::Clarifier(ClarifierParams::example2()),
            max_level: 9,
            roots: 1,
            epsilon: 4.15e-3,
            alpha: 0.5,
            tolerance_factor: None,
            step: StepRule::Lambda(1.0 / 16.0),
            t_final: 4.0,
            snapshots: vec![1.0, 2.0, 3.0, 4.0],
            reference_level: 13,
        }),
        "clarifier-ex3" => Ok(Preset {
            name: "clarifier-ex3",
            description: "clarifier-thickener with a flocculated, compressible suspension (m, s)",
            params: ModelParams::Clarifier(ClarifierParams::example3()),
            max_level: 9,
            roots: 1,
            epsilon: 2.24e-4,
            alpha: 0.5,
            tolerance_factor: Some(1e-3),
            step: StepRule::Lambda(40.0),
            t_final: 50_000.0,
            snapshots: vec![10_000.0, 25_000.0, 50_000.0],
            reference_level: 11,
        }),
        other => Err(Error::Config(format!(
            "unknown preset '{other}', expected one of {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

impl Preset {
    pub fn model(&self) -> Result<ModelSpec> {
        self.params.build()
    }

    pub fn mr_config(&self) -> crate::mrtree::MRConfig {
        crate::mrtree::MRConfig {
            max_level: self.max_level,
            roots: self.roots,
            epsilon: self.epsilon,
            alpha: self.alpha,
            tolerance_factor: self.tolerance_factor.unwrap_or(1.0),
            ..Default::default()
        }
    }
}

/// `u_t + speed u_x = 0` on `[0, 1]`, used for tests and manufactured runs.
pub fn linear_advection(speed: f64, boundary: Boundary, initial: InitialData) -> ModelSpec {
    ModelSpec::new(ModelParts {
        name: "linear-advection".into(),
        flux: Arc::new(LinearFlux),
        diffusion: None,
        gamma_breaks: vec![],
        gammas: vec![Gamma::new([0.0, speed], 0.0)],
        u_max: 1.0,
        domain: Domain::new(0.0, 1.0),
        boundary,
        initial,
    })
    .expect("linear advection parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            let m = p.model().unwrap();
            m.check_alignment(p.roots << p.max_level).unwrap();
            m.check_alignment(p.roots << p.reference_level).unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn example2_step_rule_satisfies_cfl() {
        let p = preset("clarifier-ex2").unwrap();
        let m = p.model().unwrap();
        let StepRule::Lambda(lam) = p.step else { panic!() };
        assert!((lam * m.max_flux_derivative() - 0.459375).abs() < 1e-9);
    }

    #[test]
    fn example3_reference_tolerance_near_pinned_value() {
        let p = preset("clarifier-ex3").unwrap();
        let m = p.model().unwrap();
        let eps = crate::mrtree::reference_tolerance(&m, &p.mr_config()).unwrap();
        assert!(eps > 0.5 * 2.24e-4 && eps < 2.0 * 2.24e-4, "{eps}");
    }
}
