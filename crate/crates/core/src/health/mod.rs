//! The worked stroke/diabetes/mortality scenario: status variables, event
//! parameters with shipped defaults, the five daily events, the
//! initial-population generator, logistic-regression analysis, and the
//! mortality calibration problem.

pub mod calibration;
pub mod events;
pub mod experiment;
pub mod init;
mod linalg;
pub mod logistic;
pub mod survival;

use std::collections::HashMap;
use std::sync::Arc;

use crate::domain::{SimulationDomain, VarKind};
use crate::engine::Simulator;
use crate::error::Result;
use crate::event::{EventOrder, ManipulationEvent};
use crate::params::ParameterVector;

pub use events::ten_year_to_daily;
pub use init::{init_population, InitConfig};
pub use logistic::{fit_logistic, LogisticFit};
pub use survival::{fit_late_survival, LateSurvivalFit};

/// Status variables of the scenario, in column order.
pub const VARIABLES: &[(&str, VarKind, f64)] = &[
    ("alive", VarKind::Binary, 1.0),
    ("sex", VarKind::Binary, 0.0), // 1 = woman
    ("age", VarKind::Real, 0.0),   // years; advances by 1/365 per step
    ("smoking", VarKind::Binary, 0.0),
    ("sbp", VarKind::Real, 0.0), // systolic blood pressure, mmHg
    ("tchol", VarKind::Real, 0.0),
    ("hdl", VarKind::Real, 0.0),
    ("bmi", VarKind::Real, 0.0),
    ("waist", VarKind::Real, 0.0),
    ("glucose_high", VarKind::Binary, 0.0),
    ("bp_med", VarKind::Binary, 0.0),
    ("diabetes", VarKind::Binary, 0.0),
    ("parent_stroke", VarKind::Binary, 0.0),
    ("stroke", VarKind::Binary, 0.0),
    ("stroke_day", VarKind::Real, 0.0), // step index; negative = before step 0
    ("death_day", VarKind::Real, 0.0),
    ("death_cause", VarKind::Integer, 0.0), // 0 none, 1 stroke, 2 other
    (crate::intervene::VAR_ADVICE_COMPLIER, VarKind::Binary, 0.0),
];

/// Parameter names with shipped defaults. Stroke log-odds-ratios follow
/// the published 10-year risk score (per-sex vectors over age, smoking,
/// systolic blood pressure, HDL, diabetes, parents' stroke); intercepts
/// are not published and ship as values tuned so the default initial
/// population produces a full-population stroke incidence near 723 per
/// 100 000 per year. Diabetes coefficients are placeholder values, not
/// authoritative.
pub fn default_parameters() -> Vec<(&'static str, f64)> {
    vec![
        ("stroke_m_intercept", -13.40),
        ("stroke_m_age", 1.12f64.ln()),
        ("stroke_m_smoking", 1.65f64.ln()),
        ("stroke_m_sbp", 1.02f64.ln()),
        ("stroke_m_hdl", 0.64f64.ln()),
        ("stroke_m_diabetes", 2.41f64.ln()),
        ("stroke_m_parent_stroke", 1.34f64.ln()),
        ("stroke_f_intercept", -8.10),
        ("stroke_f_age", 1.07f64.ln()),
        ("stroke_f_smoking", 1.52f64.ln()),
        ("stroke_f_sbp", 1.01f64.ln()),
        ("stroke_f_hdl", 0.47f64.ln()),
        ("stroke_f_diabetes", 3.45f64.ln()),
        ("stroke_f_parent_stroke", 1.73f64.ln()),
        ("diab_intercept", -9.8),
        ("diab_age", 0.035),
        ("diab_bmi", 0.09),
        ("diab_waist", 0.035),
        ("diab_bp_med", 0.6),
        ("diab_glucose", 1.6),
        // 28-day post-stroke daily survival logit: logit(1 - q) with
        // 1 - (1-q)^28 = 0.28.
        ("stroke_alpha0", 4.439538691556100),
        // Late post-stroke survival, fitted to the 1/5/10/15-year
        // cumulative risks 0.41/0.60/0.76/0.86 (see survival::fit_late_survival).
        ("stroke_alpha1", 8.194347657),
        ("stroke_alpha2", -6.277518145),
        ("stroke_alpha3", -0.175766412),
        ("mort_weibull_shape", 6.0),
        ("mort_weibull_scale", 360.0),
        (crate::intervene::PARAM_INDUSTRY_SBP_EFFECT, 0.97),
        (crate::intervene::PARAM_ADVICE_SBP_EFFECT, 2.0),
        (crate::intervene::PARAM_ADVICE_COMPLIANCE, 0.5),
        (crate::intervene::PARAM_SBP_THRESHOLD, 140.0),
    ]
}

/// Builds the scenario domain.
pub fn build_domain() -> SimulationDomain {
    let mut b = SimulationDomain::builder().alive_variable("alive");
    for (name, kind, default) in VARIABLES {
        b = b.variable_with_default(name, *kind, *default);
    }
    for (name, _) in default_parameters() {
        b = b.parameter(name);
    }
    b.build().expect("scenario domain is well-formed")
}

/// Domain, default theta and event list bundled so that every component
/// shares the same domain instance.
#[derive(Clone)]
pub struct ScenarioBundle {
    pub domain: SimulationDomain,
    pub theta: ParameterVector,
    pub events: Vec<Arc<dyn ManipulationEvent>>,
    pub order: EventOrder,
}

impl ScenarioBundle {
    pub fn standard() -> Result<Self> {
        Self::with_overrides(&HashMap::new())
    }

    /// Standard scenario with individual parameter defaults replaced.
    pub fn with_overrides(overrides: &HashMap<String, f64>) -> Result<Self> {
        let domain = build_domain();
        let mut map: HashMap<String, f64> = default_parameters()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        for (k, v) in overrides {
            if !map.contains_key(k) {
                return Err(crate::error::SimError::UndeclaredParameter(k.clone()));
            }
            map.insert(k.clone(), *v);
        }
        let theta = ParameterVector::from_map(&domain, &map)?;
        let events = events::standard_events(&domain)?;
        Ok(ScenarioBundle {
            domain,
            theta,
            events,
            order: EventOrder::default(),
        })
    }

    pub fn simulator(&self, seed: u64) -> Simulator {
        Simulator::new(
            self.domain.clone(),
            self.events.clone(),
            Vec::new(),
            self.order,
            seed,
        )
    }
}
