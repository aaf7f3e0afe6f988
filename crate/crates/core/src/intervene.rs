//! Interventions: population changes, policy reconfigurations, and
//! do-style variable forcing, plus counterfactual twin runs that share
//! latent draws so outcome differences are attributable to the
//! interventions alone.

use std::sync::Arc;

use crate::domain::VarId;
use crate::engine::{CmpOp, RunPlan, Runner, SimulationRecord, Simulator};
use crate::error::{Result, SimError};
use crate::event::{AccumulationEvent, FnEvent, ManipulationEvent};
use crate::params::ParameterVector;
use crate::population::Population;
use crate::rng::LatentDraws;
use crate::transition::{accumulate_in_place, apply_manipulation, configure, State};

/// Row predicate for do-interventions.
#[derive(Debug, Clone)]
pub enum TargetPredicate {
    All,
    Compare { var: String, op: CmpOp, value: f64 },
}

impl TargetPredicate {
    pub fn matching_ids(&self, pop: &Population) -> Result<Vec<u64>> {
        match self {
            TargetPredicate::All => Ok(pop.ids().to_vec()),
            TargetPredicate::Compare { var, op, value } => {
                let col = pop.column_by_name(var)?;
                Ok(pop
                    .ids()
                    .iter()
                    .zip(col)
                    .filter(|(_, &x)| match op {
                        CmpOp::Eq => x == *value,
                        CmpOp::Ge => x >= *value,
                        CmpOp::Le => x <= *value,
                    })
                    .map(|(&id, _)| id)
                    .collect())
            }
        }
    }
}

#[derive(Clone)]
pub enum InterventionKind {
    /// Events applied once at the scheduled step (accumulation first,
    /// then manipulations composed in listed order).
    PopulationChange {
        manipulation: Vec<Arc<dyn ManipulationEvent>>,
        accumulation: Vec<Arc<dyn AccumulationEvent>>,
    },
    /// Parameter reconfiguration via the configuration function.
    Policy { updates: Vec<(String, f64)> },
    /// Force `var <- value` on the rows matching `target` at the scheduled
    /// step. The targeted ids are frozen at intervention time and the
    /// value is re-asserted after every later manipulation phase, severing
    /// whatever mechanism would otherwise drive the variable.
    Do {
        var: String,
        value: f64,
        target: TargetPredicate,
    },
}

#[derive(Clone)]
pub struct Intervention {
    pub at: u64,
    pub kind: InterventionKind,
}

/// A run plan plus its ordered intervention list.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub plan: RunPlan,
    pub interventions: Vec<Intervention>,
}

impl Scenario {
    pub fn bare(name: &str, plan: RunPlan) -> Self {
        Scenario {
            name: name.to_string(),
            plan,
            interventions: Vec::new(),
        }
    }

    pub fn with(mut self, at: u64, kind: InterventionKind) -> Self {
        self.interventions.push(Intervention { at, kind });
        self
    }

    pub fn validate(&self) -> Result<()> {
        for iv in &self.interventions {
            if iv.at > self.plan.horizon {
                return Err(SimError::BadConfig(format!(
                    "intervention scheduled at step {} beyond horizon {}",
                    iv.at, self.plan.horizon
                )));
            }
        }
        Ok(())
    }
}

/// A do-intervention that has fired and keeps being re-asserted.
struct ActiveDo {
    var: VarId,
    value: f64,
    /// Frozen at intervention time, sorted.
    ids: Vec<u64>,
}

impl ActiveDo {
    fn assert_on(&self, pop: &mut Population) {
        let ids = pop.ids().to_vec();
        let col = pop.column_mut(self.var);
        for (i, id) in ids.iter().enumerate() {
            if self.ids.binary_search(id).is_ok() {
                col[i] = self.value;
            }
        }
    }
}

/// Applies one intervention to a state. `t` must match the schedule; the
/// scenario loop drives timing and re-assertion.
pub fn intervene(state: &State, iv: &Intervention, psi: &LatentDraws, t: u64) -> Result<State> {
    if t != iv.at {
        return Err(SimError::BadConfig(format!(
            "intervention scheduled for step {} applied at {t}",
            iv.at
        )));
    }
    match &iv.kind {
        InterventionKind::PopulationChange {
            manipulation,
            accumulation,
        } => {
            let mut pop = state.population.clone();
            for acc in accumulation {
                accumulate_in_place(acc, &mut pop, &state.theta, psi, t)?;
            }
            for ev in manipulation {
                pop = apply_manipulation(ev, &pop, &state.theta, psi, t)?;
            }
            Ok(State {
                population: pop,
                theta: state.theta.clone(),
            })
        }
        InterventionKind::Policy { updates } => configure(state, state.theta.with_all(updates)?),
        InterventionKind::Do { var, value, target } => {
            let var_id = state.domain().var(var)?;
            let mut ids = target.matching_ids(&state.population)?;
            ids.sort_unstable();
            let mut pop = state.population.clone();
            ActiveDo {
                var: var_id,
                value: *value,
                ids,
            }
            .assert_on(&mut pop);
            Ok(State {
                population: pop,
                theta: state.theta.clone(),
            })
        }
    }
}

/// Runs one scenario: the base plan with interventions applied at their
/// scheduled steps (step 0 means the initial state, before any
/// transition) and active do-interventions re-asserted after every
/// manipulation phase.
pub fn run_scenario(sim: &Simulator, start: &State, scenario: &Scenario) -> Result<SimulationRecord> {
    scenario.validate()?;
    let mut runner = Runner::new(sim, start, &scenario.plan)?;
    let psi = runner.psi();
    let mut state = start.clone();
    let mut active: Vec<ActiveDo> = Vec::new();

    fn apply_at(
        scenario: &Scenario,
        state: &mut State,
        runner: &mut Runner<'_>,
        active: &mut Vec<ActiveDo>,
        psi: &LatentDraws,
        t: u64,
    ) -> Result<()> {
        for iv in scenario.interventions.iter().filter(|iv| iv.at == t) {
            *state = intervene(state, iv, psi, t)?;
            match &iv.kind {
                InterventionKind::Policy { .. } => runner.reprepare(&state.theta)?,
                InterventionKind::Do { var, value, target } => {
                    // intervene already forced the value; keep the frozen
                    // target set for re-assertion on later steps.
                    let var_id = state.domain().var(var)?;
                    let mut ids = target.matching_ids(&state.population)?;
                    ids.sort_unstable();
                    active.push(ActiveDo {
                        var: var_id,
                        value: *value,
                        ids,
                    });
                }
                InterventionKind::PopulationChange { .. } => {}
            }
        }
        Ok(())
    }

    apply_at(scenario, &mut state, &mut runner, &mut active, &psi, 0)?;
    for t in 1..=scenario.plan.horizon {
        runner.step(&mut state, t)?;
        apply_at(scenario, &mut state, &mut runner, &mut active, &psi, t)?;
        for d in &active {
            d.assert_on(&mut state.population);
        }
        runner.observe(&state, t)?;
    }
    Ok(runner.finish(state))
}

/// Runs every scenario against the same start state and master seed; all
/// runs consume identical latent draws per (individual, step, consumer).
pub fn run_counterfactuals(
    sim: &Simulator,
    start: &State,
    scenarios: &[Scenario],
) -> Result<Vec<SimulationRecord>> {
    scenarios
        .iter()
        .map(|sc| run_scenario(sim, start, sc))
        .collect()
}

// ── Salt-intake interventions of the worked scenario ─────────────────────
//
// Industry: population-wide sodium reduction lowering systolic blood
// pressure by a fixed amount for everyone. Advice: individuals at or above
// the treatment threshold are advised to stop adding salt; the complier
// subset (drawn once, stored in a status column) gets a fixed reduction.

pub const PARAM_INDUSTRY_SBP_EFFECT: &str = "salt_industry_sbp_effect";
pub const PARAM_ADVICE_SBP_EFFECT: &str = "salt_advice_sbp_effect";
pub const PARAM_ADVICE_COMPLIANCE: &str = "salt_advice_compliance";
pub const PARAM_SBP_THRESHOLD: &str = "salt_sbp_threshold";
pub const VAR_ADVICE_COMPLIER: &str = "salt_advice_complier";

/// Event form of the industry-wide salt reduction.
pub fn salt_industry_event(
    domain: &crate::domain::SimulationDomain,
) -> Result<Arc<dyn ManipulationEvent>> {
    let sbp = domain.var("sbp")?;
    let effect_idx = domain.param_index(PARAM_INDUSTRY_SBP_EFFECT)?;
    Ok(FnEvent::new("salt-industry", move |row, theta: &ParameterVector| {
        row.set(sbp, row.get(sbp) - theta.get_index(effect_idx));
    })
    .into_arc())
}

/// Event form of the targeted salt advice. Compliance is drawn once per
/// individual at intervention time and stored as a status column.
pub fn salt_advice_event(
    domain: &crate::domain::SimulationDomain,
) -> Result<Arc<dyn ManipulationEvent>> {
    let sbp = domain.var("sbp")?;
    let complier = domain.var(VAR_ADVICE_COMPLIER)?;
    let effect_idx = domain.param_index(PARAM_ADVICE_SBP_EFFECT)?;
    let compliance_idx = domain.param_index(PARAM_ADVICE_COMPLIANCE)?;
    let threshold_idx = domain.param_index(PARAM_SBP_THRESHOLD)?;
    Ok(FnEvent::new("salt-advice", move |row, theta: &ParameterVector| {
        if row.get(sbp) >= theta.get_index(threshold_idx)
            && row.draw(0) < theta.get_index(compliance_idx)
        {
            row.set(complier, 1.0);
            row.set(sbp, row.get(sbp) - theta.get_index(effect_idx));
        }
    })
    .into_arc())
}

/// One-shot state-level application of the industry intervention.
pub fn salt_industry(state: &State, psi: &LatentDraws, t: u64) -> Result<State> {
    let ev = salt_industry_event(state.domain())?;
    Ok(State {
        population: apply_manipulation(&ev, &state.population, &state.theta, psi, t)?,
        theta: state.theta.clone(),
    })
}

/// One-shot state-level application of the advice intervention.
pub fn salt_advice(state: &State, psi: &LatentDraws, t: u64) -> Result<State> {
    let ev = salt_advice_event(state.domain())?;
    Ok(State {
        population: apply_manipulation(&ev, &state.population, &state.theta, psi, t)?,
        theta: state.theta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SimulationDomain, VarKind};
    use crate::engine::Tracker;
    use crate::event::{EventOrder, FnAccumulation};

    fn domain() -> SimulationDomain {
        SimulationDomain::builder()
            .variable("x", VarKind::Real)
            .variable("sbp", VarKind::Real)
            .variable_with_default("alive", VarKind::Binary, 1.0)
            .variable(VAR_ADVICE_COMPLIER, VarKind::Binary)
            .parameter(PARAM_INDUSTRY_SBP_EFFECT)
            .parameter(PARAM_ADVICE_SBP_EFFECT)
            .parameter(PARAM_ADVICE_COMPLIANCE)
            .parameter(PARAM_SBP_THRESHOLD)
            .parameter("drift")
            .alive_variable("alive")
            .build()
            .unwrap()
    }

    fn theta(d: &SimulationDomain) -> ParameterVector {
        ParameterVector::zeros(d)
            .with_all(&[
                (PARAM_INDUSTRY_SBP_EFFECT.into(), 0.97),
                (PARAM_ADVICE_SBP_EFFECT.into(), 2.0),
                (PARAM_ADVICE_COMPLIANCE.into(), 0.5),
                (PARAM_SBP_THRESHOLD.into(), 140.0),
            ])
            .unwrap()
    }

    fn state_in(d: &SimulationDomain, values: &[f64]) -> State {
        let mut pop = Population::with_defaults(d, values.len());
        let sbp = d.var("sbp").unwrap();
        for (i, &v) in values.iter().enumerate() {
            pop.set(sbp, i, v);
        }
        State::new(pop, theta(d)).unwrap()
    }

    fn state_with_sbp(values: &[f64]) -> State {
        state_in(&domain(), values)
    }

    fn drift_sim(d: &SimulationDomain, seed: u64) -> Simulator {
        let x = d.var("x").unwrap();
        let drift_idx = d.param_index("drift").unwrap();
        let drift = FnEvent::new("drift", move |row: &mut crate::event::RowCtx<'_>, th: &ParameterVector| {
            row.set(x, row.get(x) + th.get_index(drift_idx) + row.draw(0) * 0.1);
        })
        .into_arc();
        Simulator::new(d.clone(), vec![drift], vec![], EventOrder::default(), seed)
    }

    #[test]
    fn do_on_all_rows_overwrites_column() {
        let s = state_with_sbp(&[120.0, 130.0, 140.0, 150.0]);
        let iv = Intervention {
            at: 0,
            kind: InterventionKind::Do {
                var: "x".into(),
                value: 3.0,
                target: TargetPredicate::All,
            },
        };
        let psi = LatentDraws::new(1);
        let out = intervene(&s, &iv, &psi, 0).unwrap();
        assert_eq!(out.population.column_by_name("x").unwrap(), &[3.0; 4]);
        // other columns untouched
        assert_eq!(
            out.population.column_by_name("sbp").unwrap(),
            s.population.column_by_name("sbp").unwrap()
        );
    }

    #[test]
    fn policy_swaps_theta_only() {
        let s = state_with_sbp(&[120.0]);
        let iv = Intervention {
            at: 0,
            kind: InterventionKind::Policy {
                updates: vec![(PARAM_SBP_THRESHOLD.into(), 130.0)],
            },
        };
        let out = intervene(&s, &iv, &LatentDraws::new(1), 0).unwrap();
        assert!(out.population.bit_identical(&s.population));
        assert_eq!(out.theta.get(PARAM_SBP_THRESHOLD).unwrap(), 130.0);
    }

    #[test]
    fn population_change_adds_rows_only_at_its_step() {
        let d = domain();
        let s = State::new(Population::with_defaults(&d, 10), theta(&d)).unwrap();
        let sim = drift_sim(&d, 5);
        let add5 = FnAccumulation::new("five-newcomers", |_, _, _| 5, |_, _, _, _, _, _| {}).into_arc();
        let plan = RunPlan::new(20).with_tracker(Tracker::Size { name: "n".into() });
        let scenario = Scenario::bare("grow", plan.clone()).with(
            10,
            InterventionKind::PopulationChange {
                manipulation: vec![],
                accumulation: vec![add5],
            },
        );
        let base = run_scenario(&sim, &s, &Scenario::bare("null", plan)).unwrap();
        let grown = run_scenario(&sim, &s, &scenario).unwrap();
        let base_n = &base.trackers[0].values;
        let grown_n = &grown.trackers[0].values;
        for t in 0..20 {
            let expect = if t >= 9 { base_n[t] + 5.0 } else { base_n[t] };
            assert_eq!(grown_n[t], expect, "step {}", t + 1);
        }
    }

    #[test]
    fn null_intervention_is_identity_on_records() {
        let d = domain();
        let s = State::new(Population::with_defaults(&d, 25), theta(&d)).unwrap();
        let sim = drift_sim(&d, 11);
        let plan = RunPlan::new(15).with_tracker(Tracker::Mean {
            name: "mean-x".into(),
            var: "x".into(),
        });
        let null1 = Scenario::bare("a", plan.clone());
        // A no-op do (forcing sbp onto its current constant) on zero rows.
        let null2 = Scenario::bare("b", plan).with(
            0,
            InterventionKind::Do {
                var: "sbp".into(),
                value: 0.0,
                target: TargetPredicate::Compare {
                    var: "sbp".into(),
                    op: CmpOp::Ge,
                    value: 1e12,
                },
            },
        );
        let recs = run_counterfactuals(&sim, &s, &[null1, null2]).unwrap();
        assert!(recs[0].final_state.bit_identical(&recs[1].final_state));
        assert_eq!(recs[0].trackers[0].values, recs[1].trackers[0].values);
    }

    #[test]
    fn do_persists_against_overwriting_events() {
        let d = domain();
        let s = State::new(Population::with_defaults(&d, 4), theta(&d)).unwrap();
        let sim = drift_sim(&d, 2).with_seed(7);
        let plan = RunPlan::new(10);
        let forced = Scenario::bare("forced", plan).with(
            3,
            InterventionKind::Do {
                var: "x".into(),
                value: -5.0,
                target: TargetPredicate::All,
            },
        );
        let rec = run_scenario(&sim, &s, &forced).unwrap();
        // The drift event keeps adding to x every step, but the do-value
        // is re-asserted after each manipulation phase.
        assert_eq!(
            rec.final_state.population.column_by_name("x").unwrap(),
            &[-5.0; 4]
        );
    }

    #[test]
    fn do_commutes_with_row_permutation() {
        let s = state_with_sbp(&[150.0, 120.0, 145.0, 100.0]);
        let iv = Intervention {
            at: 0,
            kind: InterventionKind::Do {
                var: "sbp".into(),
                value: 135.0,
                target: TargetPredicate::Compare {
                    var: "sbp".into(),
                    op: CmpOp::Ge,
                    value: 140.0,
                },
            },
        };
        let psi = LatentDraws::new(3);
        let perm = [2usize, 0, 3, 1];
        let permuted = State {
            population: s.population.take_rows(&perm),
            theta: s.theta.clone(),
        };
        let a = intervene(&permuted, &iv, &psi, 0).unwrap();
        let b = intervene(&s, &iv, &psi, 0).unwrap();
        assert!(a.population.bit_identical(&b.population.take_rows(&perm)));
    }

    #[test]
    fn salt_industry_shifts_everyone() {
        let s = state_with_sbp(&[120.0, 150.0]);
        let out = salt_industry(&s, &LatentDraws::new(42), 0).unwrap();
        let sbp = out.population.column_by_name("sbp").unwrap();
        assert!((sbp[0] - 119.03).abs() < 1e-12);
        assert!((sbp[1] - 149.03).abs() < 1e-12);
    }

    #[test]
    fn salt_advice_hits_compliers_above_threshold() {
        // Forced compliance draws: compliance = 1 makes both targeted rows
        // compliers; compliance = 0 makes none.
        let s = state_with_sbp(&[150.0, 150.0, 120.0]);
        let all = State {
            population: s.population.clone(),
            theta: s.theta.with(PARAM_ADVICE_COMPLIANCE, 1.0).unwrap(),
        };
        let out = salt_advice(&all, &LatentDraws::new(8), 0).unwrap();
        assert_eq!(
            out.population.column_by_name("sbp").unwrap(),
            &[148.0, 148.0, 120.0]
        );
        assert_eq!(
            out.population.column_by_name(VAR_ADVICE_COMPLIER).unwrap(),
            &[1.0, 1.0, 0.0]
        );

        let none = State {
            population: s.population.clone(),
            theta: s.theta.with(PARAM_ADVICE_COMPLIANCE, 0.0).unwrap(),
        };
        let out = salt_advice(&none, &LatentDraws::new(8), 0).unwrap();
        assert!(out.population.bit_identical(&s.population));
    }

    #[test]
    fn salt_advice_empty_target_is_identity() {
        let s = state_with_sbp(&[120.0, 130.0]);
        let out = salt_advice(&s, &LatentDraws::new(9), 0).unwrap();
        assert!(out.population.bit_identical(&s.population));
    }

    #[test]
    fn counterfactual_pairing_on_untargeted_variables() {
        // The intervened variable (sbp) feeds no event, so every other
        // column must match the baseline at the final state.
        let d = domain();
        let s = state_in(&d, &[150.0, 120.0, 141.0]);
        let sim = drift_sim(&d, 31);
        let plan = RunPlan::new(12);
        let baseline = Scenario::bare("baseline", plan.clone());
        let dosed = Scenario::bare("dosed", plan).with(
            0,
            InterventionKind::Do {
                var: "sbp".into(),
                value: 110.0,
                target: TargetPredicate::All,
            },
        );
        let recs = run_counterfactuals(&sim, &s, &[baseline, dosed]).unwrap();
        let a = &recs[0].final_state.population;
        let b = &recs[1].final_state.population;
        assert_eq!(
            a.column_by_name("x").unwrap(),
            b.column_by_name("x").unwrap()
        );
        assert_ne!(
            a.column_by_name("sbp").unwrap(),
            b.column_by_name("sbp").unwrap()
        );
    }
}
