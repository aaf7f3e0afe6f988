//! Scenario files: a declarative TOML description of the shipped
//! stroke/diabetes/mortality scenario — initial population, parameter
//! overrides, run plan, calibration, interventions and sampling design.
//! The schema is static and unknown keys are rejected; events beyond the
//! shipped library require recompilation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::calibrate::TargetTable;
use crate::engine::{CmpOp, RunPlan, SnapshotPolicy, Tracker};
use crate::error::{Result, SimError};
use crate::event::OrderMode;
use crate::health::init::InitConfig;
use crate::health::ScenarioBundle;
use crate::intervene::{Intervention, InterventionKind, Scenario, TargetPredicate};
use crate::params::ParameterVector;
use crate::population::Population;
use crate::sample::{MissingKind, MissingScope, MissingnessMechanism, NonParticipationCoeffs};
use crate::transition::State;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub domain: DomainSection,
    pub run: RunSection,
    pub init: InitConfig,
    /// Overrides of the shipped parameter defaults.
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub events: EventsSection,
    #[serde(default)]
    pub coefficients: CoefficientsSection,
    #[serde(default)]
    pub calibration: Option<CalibrationSection>,
    #[serde(default)]
    pub interventions: Vec<InterventionSection>,
    #[serde(default)]
    pub sampling: Option<SamplingSection>,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    #[serde(default = "default_order")]
    pub order: OrderMode,
}

fn default_order() -> OrderMode {
    OrderMode::Shared
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: u64,
    #[serde(default = "default_partitions")]
    pub partitions: usize,
    #[serde(default = "default_snapshots")]
    pub snapshots: SnapshotPolicy,
    #[serde(default)]
    pub trackers: Vec<Tracker>,
}

fn default_partitions() -> usize {
    1
}

fn default_snapshots() -> SnapshotPolicy {
    SnapshotPolicy::None
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsSection {
    /// Subset of the shipped event library to run, in declaration order.
    pub enabled: Vec<String>,
}

impl Default for EventsSection {
    fn default() -> Self {
        EventsSection {
            enabled: ["aging", "stroke", "diabetes", "stroke-death", "background-death"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Optional coefficient files (CSV: term,estimate) replacing shipped
/// defaults; paths are resolved relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    pub stroke_male: Option<PathBuf>,
    pub stroke_female: Option<PathBuf>,
    pub diabetes: Option<PathBuf>,
    pub nonparticipation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Target table CSV (key,value,weight; scalars keyed `*name`).
    /// Omitted means the shipped paper-shaped defaults.
    pub targets: Option<PathBuf>,
    #[serde(default = "default_free")]
    pub free: Vec<String>,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    /// Population size for calibration runs; defaults to init.size.
    pub population: Option<usize>,
    #[serde(default = "default_cal_horizon")]
    pub horizon: u64,
}

fn default_free() -> Vec<String> {
    crate::health::calibration::MORTALITY_FREE
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn default_max_evals() -> usize {
    120
}

fn default_cal_horizon() -> u64 {
    365
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSection {
    pub var: String,
    pub op: CmpOp,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSection {
    pub at: u64,
    /// "salt-industry", "salt-advice", "do" or "policy".
    pub kind: String,
    #[serde(default)]
    pub variable: Option<String>,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub target: Option<PredicateSection>,
    #[serde(default)]
    pub updates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessSection {
    /// "mcar", "mar" or "mnar".
    pub kind: String,
    #[serde(default)]
    pub prob: Option<f64>,
    #[serde(default)]
    pub intercept: Option<f64>,
    #[serde(default)]
    pub predictors: BTreeMap<String, f64>,
    pub columns: Vec<String>,
    /// "cells" or "whole-row".
    #[serde(default = "default_scope")]
    pub scope: String,
}

fn default_scope() -> String {
    "cells".into()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub invitees: usize,
    #[serde(default = "default_follow_up")]
    pub horizon: u64,
    #[serde(default = "default_true")]
    pub exclude_prior_stroke: bool,
    /// Inline non-participation coefficients; omitted means the shipped
    /// baseline model (or the coefficients CSV when configured).
    #[serde(default)]
    pub nonparticipation: Option<NonParticipationCoeffs>,
    #[serde(default)]
    pub missingness: Option<MissingnessSection>,
    #[serde(default = "default_true")]
    pub fit_models: bool,
}

fn default_follow_up() -> u64 {
    3650
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default = "default_true")]
    pub population_csv: bool,
    #[serde(default = "default_true")]
    pub population_binary: bool,
    #[serde(default = "default_true")]
    pub trackers_csv: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection {
            population_csv: true,
            population_binary: true,
            trackers_csv: true,
        }
    }
}

/// Term -> parameter-name mapping for the coefficient CSVs.
const STROKE_TERMS: [&str; 7] = [
    "intercept",
    "age",
    "smoking",
    "sbp",
    "hdl",
    "diabetes",
    "parent_stroke",
];
const DIABETES_TERMS: [&str; 6] = ["intercept", "age", "bmi", "waist", "bp_med", "glucose"];

fn read_coeff_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::BadConfig(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("term")) {
            continue;
        }
        let (term, value) = line.split_once(',').ok_or_else(|| {
            SimError::Format(format!("{}:{}: expected term,estimate", path.display(), i + 1))
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            SimError::Format(format!("{}:{}: bad estimate", path.display(), i + 1))
        })?;
        out.insert(term.trim().to_string(), value);
    }
    Ok(out)
}

fn apply_coeffs(
    overrides: &mut BTreeMap<String, f64>,
    path: &Path,
    prefix: &str,
    terms: &[&str],
) -> Result<()> {
    let map = read_coeff_csv(path)?;
    for (term, value) in &map {
        if !terms.contains(&term.as_str()) {
            return Err(SimError::BadConfig(format!(
                "{}: unknown term `{term}`",
                path.display()
            )));
        }
        overrides.insert(format!("{prefix}_{term}"), *value);
    }
    Ok(())
}

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text)
            .map_err(|e| SimError::BadConfig(format!("scenario file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::BadConfig(format!("{}: {e}", path.display())))?;
        let mut file = Self::from_toml_str(&text)?;
        file.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(file)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&path);
                }
            }
        };
        fix(&mut self.coefficients.stroke_male);
        fix(&mut self.coefficients.stroke_female);
        fix(&mut self.coefficients.diabetes);
        fix(&mut self.coefficients.nonparticipation);
        if let Some(cal) = &mut self.calibration {
            fix(&mut cal.targets);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.init.validate()?;
        for iv in &self.interventions {
            match iv.kind.as_str() {
                "salt-industry" | "salt-advice" | "policy" => {}
                "do" => {
                    if iv.variable.is_none() || iv.value.is_none() {
                        return Err(SimError::BadConfig(
                            "do-intervention needs `variable` and `value`".into(),
                        ));
                    }
                }
                other => {
                    return Err(SimError::BadConfig(format!(
                        "unknown intervention kind `{other}`"
                    )))
                }
            }
            if iv.at > self.run.horizon {
                return Err(SimError::BadConfig(format!(
                    "intervention at step {} beyond horizon {}",
                    iv.at, self.run.horizon
                )));
            }
        }
        if let Some(s) = &self.sampling {
            if s.horizon > self.run.horizon {
                return Err(SimError::BadConfig(format!(
                    "sampling horizon {} beyond run horizon {}",
                    s.horizon, self.run.horizon
                )));
            }
            if let Some(m) = &s.missingness {
                match m.kind.as_str() {
                    "mcar" => {
                        if m.prob.is_none() {
                            return Err(SimError::BadConfig("mcar needs `prob`".into()));
                        }
                    }
                    "mar" | "mnar" => {
                        if m.intercept.is_none() {
                            return Err(SimError::BadConfig(format!(
                                "{} needs `intercept`",
                                m.kind
                            )));
                        }
                    }
                    other => {
                        return Err(SimError::BadConfig(format!(
                            "unknown missingness kind `{other}`"
                        )))
                    }
                }
                if !matches!(m.scope.as_str(), "cells" | "whole-row") {
                    return Err(SimError::BadConfig(format!(
                        "unknown missingness scope `{}`",
                        m.scope
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parameter overrides merged from the `[parameters]` table and any
    /// coefficient CSV files.
    pub fn parameter_overrides(&self) -> Result<std::collections::HashMap<String, f64>> {
        let mut merged: BTreeMap<String, f64> = BTreeMap::new();
        if let Some(p) = &self.coefficients.stroke_male {
            apply_coeffs(&mut merged, p, "stroke_m", &STROKE_TERMS)?;
        }
        if let Some(p) = &self.coefficients.stroke_female {
            apply_coeffs(&mut merged, p, "stroke_f", &STROKE_TERMS)?;
        }
        if let Some(p) = &self.coefficients.diabetes {
            apply_coeffs(&mut merged, p, "diab", &DIABETES_TERMS)?;
        }
        for (k, v) in &self.parameters {
            merged.insert(k.clone(), *v);
        }
        Ok(merged.into_iter().collect())
    }

    /// Builds the scenario bundle with overrides applied and the event
    /// list filtered to the enabled subset.
    pub fn bundle(&self) -> Result<ScenarioBundle> {
        let mut bundle = ScenarioBundle::with_overrides(&self.parameter_overrides()?)?;
        bundle.order.mode = self.domain.order;
        let enabled = &self.events.enabled;
        for name in enabled {
            if !bundle.events.iter().any(|e| e.name() == name) {
                return Err(SimError::BadConfig(format!(
                    "unknown event `{name}` (shipped library: {:?})",
                    bundle.events.iter().map(|e| e.name()).collect::<Vec<_>>()
                )));
            }
        }
        bundle.events.retain(|e| enabled.iter().any(|n| n == e.name()));
        Ok(bundle)
    }

    /// Generates the initial state (population seeded from the scenario
    /// seed, parameters from the merged overrides).
    pub fn build_start(&self, bundle: &ScenarioBundle, seed: u64) -> Result<State> {
        let pop: Population =
            crate::health::init::init_population(&self.init, &bundle.domain, &bundle.theta, seed)?;
        State::new(pop, bundle.theta.clone())
    }

    pub fn run_plan(&self) -> RunPlan {
        RunPlan {
            horizon: self.run.horizon,
            snapshots: self.run.snapshots,
            partitions: self.run.partitions.max(1),
            trackers: self.run.trackers.clone(),
        }
    }

    /// Builds the engine-level intervention list.
    pub fn build_interventions(&self, bundle: &ScenarioBundle) -> Result<Vec<Intervention>> {
        self.interventions
            .iter()
            .map(|s| s.build(bundle))
            .collect()
    }

    /// The named scenario: base plan plus all configured interventions.
    pub fn scenario(&self, bundle: &ScenarioBundle) -> Result<Scenario> {
        Ok(Scenario {
            name: self.name.clone(),
            plan: self.run_plan(),
            interventions: self.build_interventions(bundle)?,
        })
    }

    pub fn calibration_targets(&self) -> Result<TargetTable> {
        match self.calibration.as_ref().and_then(|c| c.targets.as_ref()) {
            Some(path) => TargetTable::from_csv_path(path),
            None => Ok(crate::health::calibration::default_mortality_targets()),
        }
    }

    pub fn nonparticipation_coeffs(&self) -> Result<NonParticipationCoeffs> {
        if let Some(s) = &self.sampling {
            if let Some(c) = &s.nonparticipation {
                return Ok(*c);
            }
        }
        if let Some(path) = &self.coefficients.nonparticipation {
            let map = read_coeff_csv(path)?;
            let get = |term: &str| -> Result<f64> {
                map.get(term).copied().ok_or_else(|| {
                    SimError::BadConfig(format!("{}: missing term `{term}`", path.display()))
                })
            };
            return Ok(NonParticipationCoeffs {
                intercept: get("intercept")?,
                gender: get("gender")?,
                age: get("age")?,
                bmi: get("bmi")?,
                smoking: get("smoking")?,
                waist: get("waist")?,
            });
        }
        Ok(NonParticipationCoeffs::default_health())
    }
}

impl InterventionSection {
    pub fn build(&self, bundle: &ScenarioBundle) -> Result<Intervention> {
        let kind = match self.kind.as_str() {
            "salt-industry" => InterventionKind::PopulationChange {
                manipulation: vec![crate::intervene::salt_industry_event(&bundle.domain)?],
                accumulation: vec![],
            },
            "salt-advice" => InterventionKind::PopulationChange {
                manipulation: vec![crate::intervene::salt_advice_event(&bundle.domain)?],
                accumulation: vec![],
            },
            "do" => InterventionKind::Do {
                var: self.variable.clone().expect("validated"),
                value: self.value.expect("validated"),
                target: match &self.target {
                    None => TargetPredicate::All,
                    Some(p) => TargetPredicate::Compare {
                        var: p.var.clone(),
                        op: p.op,
                        value: p.value,
                    },
                },
            },
            "policy" => InterventionKind::Policy {
                updates: self.updates.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            },
            other => return Err(SimError::BadConfig(format!("unknown intervention `{other}`"))),
        };
        Ok(Intervention { at: self.at, kind })
    }
}

impl MissingnessSection {
    pub fn build(&self) -> Result<(MissingnessMechanism, Vec<String>)> {
        let kind = match self.kind.as_str() {
            "mcar" => MissingKind::Mcar {
                prob: self.prob.expect("validated"),
            },
            "mar" => MissingKind::Mar {
                intercept: self.intercept.expect("validated"),
                predictors: self.predictors.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            },
            "mnar" => MissingKind::Mnar {
                intercept: self.intercept.expect("validated"),
                predictors: self.predictors.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            },
            other => return Err(SimError::BadConfig(format!("unknown missingness `{other}`"))),
        };
        let scope = match self.scope.as_str() {
            "cells" => MissingScope::Cells,
            "whole-row" => MissingScope::WholeRow,
            other => return Err(SimError::BadConfig(format!("unknown scope `{other}`"))),
        };
        Ok((MissingnessMechanism { kind, scope }, self.columns.clone()))
    }
}

/// The desk-scale default scenario shipped with the repository.
pub fn default_scenario_file() -> ScenarioFile {
    ScenarioFile {
        name: "stroke-desk".into(),
        seed: 1,
        domain: DomainSection::default(),
        run: RunSection {
            horizon: 3650,
            partitions: 2,
            snapshots: SnapshotPolicy::None,
            trackers: vec![
                Tracker::Count {
                    name: "alive".into(),
                    var: "alive".into(),
                    op: CmpOp::Eq,
                    value: 1.0,
                },
                Tracker::Count {
                    name: "strokes".into(),
                    var: "stroke".into(),
                    op: CmpOp::Eq,
                    value: 1.0,
                },
                Tracker::Count {
                    name: "diabetes".into(),
                    var: "diabetes".into(),
                    op: CmpOp::Eq,
                    value: 1.0,
                },
            ],
        },
        init: crate::health::init::default_init_config(100_000),
        parameters: BTreeMap::new(),
        events: EventsSection::default(),
        coefficients: CoefficientsSection::default(),
        calibration: Some(CalibrationSection {
            targets: None,
            free: default_free(),
            max_evals: default_max_evals(),
            population: None,
            horizon: 365,
        }),
        interventions: Vec::new(),
        sampling: Some(SamplingSection {
            invitees: 10_000,
            horizon: 3650,
            exclude_prior_stroke: true,
            nonparticipation: None,
            missingness: None,
            fit_models: true,
        }),
        outputs: OutputsSection::default(),
    }
}
