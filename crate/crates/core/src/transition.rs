//! State and the transition function: accumulation phase first, then the
//! manipulation events composed per row in the drawn order.

use std::sync::Arc;

use crate::domain::SimulationDomain;
use crate::error::{Result, SimError};
use crate::event::{
    individual_permutation_into, shared_permutation, AccumulationEvent, EventOrder,
    ManipulationEvent, OrderMode, RowCtx,
};
use crate::params::ParameterVector;
use crate::population::Population;
use crate::rng::{LatentDraws, StreamKey};

/// A population plus the parameter vector driving its events.
#[derive(Debug, Clone)]
pub struct State {
    pub population: Population,
    pub theta: ParameterVector,
}

impl State {
    pub fn new(population: Population, theta: ParameterVector) -> Result<Self> {
        if !population.domain().same_as(theta.domain()) {
            return Err(SimError::BadConfig(
                "population and theta belong to different domains".into(),
            ));
        }
        Ok(State { population, theta })
    }

    pub fn domain(&self) -> &SimulationDomain {
        self.population.domain()
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()
    }

    pub fn bit_identical(&self, other: &State) -> bool {
        self.population.bit_identical(&other.population) && self.theta.bit_identical(&other.theta)
    }
}

/// Exchanges the parameter vector, leaving the population bit-identical.
pub fn configure(state: &State, theta_new: ParameterVector) -> Result<State> {
    if !state.domain().same_as(theta_new.domain()) {
        return Err(SimError::ParameterMismatch(
            "replacement theta built against a different domain".into(),
        ));
    }
    Ok(State {
        population: state.population.clone(),
        theta: theta_new,
    })
}

/// Per-run prepared form of the manipulation event list: parameter values
/// and derived constants resolved once, since theta is fixed along a
/// simulation sequence.
pub struct PreparedEvents {
    pub(crate) events: Vec<Arc<dyn ManipulationEvent>>,
    scratches: Vec<Vec<f64>>,
    may_touch_dead: Vec<bool>,
    pub(crate) any_touch_dead: bool,
}

impl PreparedEvents {
    pub fn prepare(events: &[Arc<dyn ManipulationEvent>], theta: &ParameterVector) -> Result<Self> {
        let mut scratches = Vec::with_capacity(events.len());
        for e in events {
            let scratch = e.prepare(theta).map_err(|err| SimError::EventFailed {
                step: 0,
                event: e.name().to_string(),
                source: Box::new(err),
            })?;
            scratches.push(scratch);
        }
        let may_touch_dead: Vec<bool> = events.iter().map(|e| e.may_touch_dead()).collect();
        let any_touch_dead = may_touch_dead.iter().any(|&b| b);
        Ok(PreparedEvents {
            events: events.to_vec(),
            scratches,
            may_touch_dead,
            any_touch_dead,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn step_keys(&self, psi: &LatentDraws, t: u64) -> Vec<StreamKey> {
        self.events.iter().map(|e| psi.key(t, e.tag())).collect()
    }
}

/// Runs the manipulation phase over rows `[row_lo, row_lo + len)` of the
/// chunk column slices. `ids` and `cols` are chunk-local and equal-length.
pub(crate) fn manipulate_chunk(
    ids: &[u64],
    cols: &mut [&mut [f64]],
    domain: &SimulationDomain,
    prepared: &PreparedEvents,
    keys: &[StreamKey],
    theta: &ParameterVector,
    order: &EventOrder,
    shared_perm: &[usize],
    psi: &LatentDraws,
    t: u64,
) -> Result<()> {
    let m = domain.n_variables();
    let alive = domain.alive_var().map(|v| v.0);
    let mut start = vec![0.0f64; m];
    let mut work = vec![0.0f64; m];
    let mut prev = vec![0.0f64; m];
    let mut own_perm: Vec<usize> = Vec::with_capacity(prepared.len());

    for (i, &id) in ids.iter().enumerate() {
        let dead = alive.map(|a| cols[a][i] == 0.0).unwrap_or(false);
        if dead && !prepared.any_touch_dead {
            continue;
        }
        for (j, col) in cols.iter().enumerate() {
            start[j] = col[i];
        }
        work.copy_from_slice(&start);

        let perm: &[usize] = match order.mode {
            OrderMode::Shared => shared_perm,
            OrderMode::PerIndividual => {
                individual_permutation_into(&mut own_perm, order, prepared.len(), id, psi, t);
                &own_perm
            }
        };

        let mut ctx = RowCtx::new(id, t, &start, &mut work, keys[0]);
        for &e in perm {
            ctx.set_stream(keys[e]);
            if dead && !prepared.may_touch_dead[e] {
                // Slow path: only reached when another event in the list
                // declared may_touch_dead. Catch undeclared writes.
                for j in 0..m {
                    prev[j] = ctx.work_value(j);
                }
                prepared.events[e].apply(&mut ctx, theta, &prepared.scratches[e]);
                for j in 0..m {
                    if ctx.work_value(j).to_bits() != prev[j].to_bits() {
                        return Err(SimError::DeadRowModified {
                            event: prepared.events[e].name().to_string(),
                            id,
                        });
                    }
                }
            } else {
                prepared.events[e].apply(&mut ctx, theta, &prepared.scratches[e]);
            }
        }

        if ctx.any_written() {
            for (j, col) in cols.iter_mut().enumerate() {
                if ctx.is_written(j) {
                    let v = ctx.work_value(j);
                    if !v.is_finite() {
                        return Err(SimError::NonFinite {
                            id,
                            variable: domain.var_name(crate::domain::VarId(j)).to_string(),
                        });
                    }
                    col[i] = v;
                }
            }
        }
    }
    Ok(())
}

fn wrap_event_err(err: SimError, t: u64, event: &str) -> SimError {
    match err {
        e @ SimError::EventFailed { .. } => e,
        other => SimError::EventFailed {
            step: t,
            event: event.to_string(),
            source: Box::new(other),
        },
    }
}

/// Applies one manipulation event to every row independently, returning a
/// population of identical size and ids.
pub fn apply_manipulation(
    event: &Arc<dyn ManipulationEvent>,
    pop: &Population,
    theta: &ParameterVector,
    psi: &LatentDraws,
    t: u64,
) -> Result<Population> {
    let mut out = pop.clone();
    let domain = pop.domain().clone();
    let prepared = PreparedEvents::prepare(std::slice::from_ref(event), theta)?;
    let keys = prepared.step_keys(psi, t);
    let order = EventOrder::default();
    let perm = vec![0usize];
    let ids: Vec<u64> = out.ids().to_vec();
    let mut cols = out.columns_mut();
    manipulate_chunk(
        &ids, &mut cols, &domain, &prepared, &keys, theta, &order, &perm, psi, t,
    )
    .map_err(|e| wrap_event_err(e, t, event.name()))?;
    Ok(out)
}

/// Applies one accumulation event: original rows unchanged and first, new
/// rows appended with strictly increasing fresh ids.
pub fn apply_accumulation(
    event: &Arc<dyn AccumulationEvent>,
    pop: &Population,
    theta: &ParameterVector,
    psi: &LatentDraws,
    t: u64,
) -> Result<Population> {
    let mut out = pop.clone();
    accumulate_in_place(event, &mut out, theta, psi, t)?;
    Ok(out)
}

pub(crate) fn accumulate_in_place(
    event: &Arc<dyn AccumulationEvent>,
    pop: &mut Population,
    theta: &ParameterVector,
    psi: &LatentDraws,
    t: u64,
) -> Result<()> {
    let k = event.count(theta, psi, t);
    if k == 0 {
        return Ok(());
    }
    let defaults: Vec<f64> = pop.domain().variables().iter().map(|v| v.default).collect();
    let rows = event.generate_rows(k, pop.next_id(), &defaults, theta, psi, t);
    if rows.len() as u64 != k {
        return Err(SimError::BadAccumulationCount {
            event: event.name().to_string(),
            expected: k,
            got: rows.len() as u64,
        });
    }
    pop.append_rows(&rows)
        .map_err(|e| wrap_event_err(e, t, event.name()))
}

/// One state transition: accumulation events in declared order, then the
/// manipulation phase over every row (including freshly accumulated ones)
/// in the drawn order. Theta is untouched.
pub fn transition(
    state: &State,
    psi: &LatentDraws,
    t: u64,
    manipulation: &[Arc<dyn ManipulationEvent>],
    accumulation: &[Arc<dyn AccumulationEvent>],
    order: &EventOrder,
) -> Result<State> {
    let mut pop = state.population.clone();
    transition_in_place(&mut pop, &state.theta, psi, t, manipulation, accumulation, order)?;
    Ok(State {
        population: pop,
        theta: state.theta.clone(),
    })
}

pub(crate) fn transition_in_place(
    pop: &mut Population,
    theta: &ParameterVector,
    psi: &LatentDraws,
    t: u64,
    manipulation: &[Arc<dyn ManipulationEvent>],
    accumulation: &[Arc<dyn AccumulationEvent>],
    order: &EventOrder,
) -> Result<()> {
    for acc in accumulation {
        accumulate_in_place(acc, pop, theta, psi, t).map_err(|e| wrap_event_err(e, t, acc.name()))?;
    }
    if manipulation.is_empty() || pop.is_empty() {
        return Ok(());
    }
    let prepared = PreparedEvents::prepare(manipulation, theta)?;
    let keys = prepared.step_keys(psi, t);
    let shared_perm = shared_permutation(order, prepared.len(), psi, t);
    let domain = pop.domain().clone();
    let ids: Vec<u64> = pop.ids().to_vec();
    let mut cols = pop.columns_mut();
    manipulate_chunk(
        &ids,
        &mut cols,
        &domain,
        &prepared,
        &keys,
        theta,
        order,
        &shared_perm,
        psi,
        t,
    )
    .map_err(|e| wrap_event_err(e, t, "manipulation-phase"))
}
