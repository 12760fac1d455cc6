//! Two-state benchmark
//!
//! ```text
//! ẋ1 = −x1 − x2 + w
//! ẋ2 = 1 − e^{−x2} + u
//! ```
//!
//! with equilibria `x_e = (0, w)`, `u_e = e^{−w} − 1`, scheduled by
//! `σ = e^{−w}` (reference) or `σ = e^{−x2}` (state), and three tracking
//! controllers: two realizations of the same LPV gain and a CCM design.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeodesicSettings, Metric};
use crate::lpv::{EquilibriumFamily, GainScheduledController, SchedulingMode};
use crate::model::SystemModel;
use crate::realization::CcmController;
use crate::sim::{self, Controller, ReferenceSignal, SimOptions, SimResult, Target};

/// Decay rate the CCM design is certified for.
pub const CCM_LAMBDA: f64 = 1.9;
/// LPV gain placing both closed-loop poles at −2, over `σ = e^{−w}`.
pub const LPV_GAIN: [&str; 2] = ["1", "-3 - sigma"];
/// Same gain written over `σ = w`.
pub const LPV_GAIN_W: [&str; 2] = ["1", "-3 - exp(-sigma)"];
/// Differential gain of the CCM design.
pub const CCM_GAIN: [&str; 2] = ["1", "-(3 + exp(-x2))"];
pub const X0: [f64; 2] = [1.0, 1.0];

pub fn model() -> SystemModel {
    SystemModel::builtin("rugh1991").expect("built-in model")
}

/// Family scheduled by `σ = e^{−w}`.
pub fn family(model: &SystemModel) -> EquilibriumFamily {
    EquilibriumFamily::builtin("rugh1991", model).expect("built-in family")
}

/// Family scheduled by `σ = w`.
pub fn family_w(model: &SystemModel) -> EquilibriumFamily {
    EquilibriumFamily::builtin("rugh1991_w", model).expect("built-in family")
}

/// Closed-loop differential matrix `A + B K`, the same at every state.
pub fn closed_loop_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, -3.0])
}

/// Constant metric with `He{M 𝒜} + 2·1.9·M = −I`.
pub fn ccm_metric_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[555.0, -500.0, -500.0, 455.0])
}

pub fn ccm_metric() -> Metric {
    Metric::constant(&ccm_metric_matrix()).expect("metric is positive definite")
}

pub fn gsc(family: &EquilibriumFamily, mode: SchedulingMode) -> GainScheduledController {
    let (name, gain) = match (family.name(), mode) {
        ("rugh1991_w", SchedulingMode::ReferenceScheduled) => ("gsc1", LPV_GAIN_W),
        ("rugh1991_w", SchedulingMode::StateScheduled) => ("gsc2", LPV_GAIN_W),
        (_, SchedulingMode::ReferenceScheduled) => ("gsc1", LPV_GAIN),
        (_, SchedulingMode::StateScheduled) => ("gsc2", LPV_GAIN),
    };
    GainScheduledController::parse(name, family, &[gain.to_vec()], mode).expect("gain parses")
}

pub fn ccm_controller(model: &SystemModel) -> CcmController {
    CcmController::parse(model, &[CCM_GAIN.to_vec()], ccm_metric(), GeodesicSettings::default())
        .expect("gain parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `w` steps through 0, 1, −2 at t = 0, 7, 14.
    Step,
    /// `w = 0.5 sin t`.
    Sine,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Step, Scenario::Sine];

    pub fn reference(self) -> ReferenceSignal {
        match self {
            Scenario::Step => ReferenceSignal::PiecewiseConstant {
                breakpoints: vec![0.0, 7.0, 14.0],
                levels: vec![vec![0.0], vec![1.0], vec![-2.0]],
            },
            Scenario::Sine => ReferenceSignal::Sinusoid {
                amplitude: vec![0.5],
                frequency: 1.0,
                phase: 0.0,
                offset: vec![0.0],
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Step => "step",
            Scenario::Sine => "sine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Gsc1,
    Gsc2,
    Ccm,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Gsc1, ControllerKind::Gsc2, ControllerKind::Ccm];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Gsc1 => "gsc1",
            ControllerKind::Gsc2 => "gsc2",
            ControllerKind::Ccm => "ccm",
        }
    }

    pub fn build(self, model: &SystemModel) -> Controller {
        let fam = family(model);
        match self {
            ControllerKind::Gsc1 => Controller::GainScheduled {
                controller: gsc(&fam, SchedulingMode::ReferenceScheduled),
                family: fam,
            },
            ControllerKind::Gsc2 => Controller::GainScheduled {
                controller: gsc(&fam, SchedulingMode::StateScheduled),
                family: fam,
            },
            ControllerKind::Ccm => Controller::Ccm(ccm_controller(model)),
        }
    }
}

macro_rules! name_parsing {
    ($t:ty) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                <$t>::ALL
                    .into_iter()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| format!("unknown value `{s}`"))
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

name_parsing!(Scenario);
name_parsing!(ControllerKind);

/// Runs one benchmark scenario from `x0` with the family-based target.
pub fn run(scenario: Scenario, controller: ControllerKind, x0: &[f64], options: &SimOptions) -> Result<SimResult, sim::SimError> {
    let m = model();
    let target = Target::Family(family(&m));
    sim::simulate(&m, &controller.build(&m), &target, &scenario.reference(), x0, options)
}
