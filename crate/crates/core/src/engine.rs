//! Simulation runner: drives sequences of length T with deterministic
//! keyed draws, per-step trackers, copy-on-write snapshots and
//! partition-parallel execution over row chunks.

use std::sync::Arc;

use crate::domain::SimulationDomain;
use crate::error::{Result, SimError};
use crate::event::{shared_permutation, AccumulationEvent, EventOrder, ManipulationEvent};
use crate::params::ParameterVector;
use crate::population::Population;
use crate::rng::LatentDraws;
use crate::transition::{accumulate_in_place, manipulate_chunk, PreparedEvents, State};

/// A simulator: the events, their order, and the master seed. The event
/// lists are immutable during a run.
#[derive(Clone)]
pub struct Simulator {
    domain: SimulationDomain,
    manipulation: Vec<Arc<dyn ManipulationEvent>>,
    accumulation: Vec<Arc<dyn AccumulationEvent>>,
    order: EventOrder,
    master_seed: u64,
}

impl Simulator {
    pub fn new(
        domain: SimulationDomain,
        manipulation: Vec<Arc<dyn ManipulationEvent>>,
        accumulation: Vec<Arc<dyn AccumulationEvent>>,
        order: EventOrder,
        master_seed: u64,
    ) -> Self {
        Simulator {
            domain,
            manipulation,
            accumulation,
            order,
            master_seed,
        }
    }

    pub fn domain(&self) -> &SimulationDomain {
        &self.domain
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn psi(&self) -> LatentDraws {
        LatentDraws::new(self.master_seed)
    }

    pub fn manipulation_events(&self) -> &[Arc<dyn ManipulationEvent>] {
        &self.manipulation
    }

    pub fn accumulation_events(&self) -> &[Arc<dyn AccumulationEvent>] {
        &self.accumulation
    }

    pub fn order(&self) -> &EventOrder {
        &self.order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotPolicy {
    None,
    FinalOnly,
    Every(u64),
}

/// Comparison used by count trackers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmpOp {
    Eq,
    Ge,
    Le,
}

impl CmpOp {
    #[inline]
    fn holds(self, x: f64, v: f64) -> bool {
        match self {
            CmpOp::Eq => x == v,
            CmpOp::Ge => x >= v,
            CmpOp::Le => x <= v,
        }
    }
}

/// Named per-step reduction over the population.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Tracker {
    /// Number of rows (accumulation makes this non-constant).
    Size { name: String },
    /// Rows where `var <op> value`; exact integer count.
    Count {
        name: String,
        var: String,
        op: CmpOp,
        value: f64,
    },
    /// Pairwise sum of a column.
    Sum { name: String, var: String },
    /// Pairwise mean of a column (0 on the empty population).
    Mean { name: String, var: String },
}

impl Tracker {
    pub fn name(&self) -> &str {
        match self {
            Tracker::Size { name }
            | Tracker::Count { name, .. }
            | Tracker::Sum { name, .. }
            | Tracker::Mean { name, .. } => name,
        }
    }

    fn evaluate(&self, pop: &Population) -> Result<f64> {
        Ok(match self {
            Tracker::Size { .. } => pop.len() as f64,
            Tracker::Count { var, op, value, .. } => {
                let col = pop.column_by_name(var)?;
                col.iter().filter(|&&x| op.holds(x, *value)).count() as f64
            }
            Tracker::Sum { var, .. } => pairwise_sum(pop.column_by_name(var)?),
            Tracker::Mean { var, .. } => {
                let col = pop.column_by_name(var)?;
                if col.is_empty() {
                    0.0
                } else {
                    pairwise_sum(col) / col.len() as f64
                }
            }
        })
    }
}

/// Pairwise summation; deterministic and independent of chunking because
/// it always runs on the full column on the coordinator.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunPlan {
    /// Number of steps; one step is one simulated day in the shipped
    /// scenario, but the engine itself is unitless.
    pub horizon: u64,
    pub snapshots: SnapshotPolicy,
    /// Worker count for the manipulation phase; results are identical for
    /// any value.
    pub partitions: usize,
    pub trackers: Vec<Tracker>,
}

impl RunPlan {
    pub fn new(horizon: u64) -> Self {
        RunPlan {
            horizon,
            snapshots: SnapshotPolicy::None,
            partitions: 1,
            trackers: Vec::new(),
        }
    }

    pub fn with_partitions(mut self, partitions: usize) -> Self {
        self.partitions = partitions.max(1);
        self
    }

    pub fn with_snapshots(mut self, policy: SnapshotPolicy) -> Self {
        self.snapshots = policy;
        self
    }

    pub fn with_tracker(mut self, tracker: Tracker) -> Self {
        self.trackers.push(tracker);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.partitions < 1 {
            return Err(SimError::BadConfig("partition count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrackerSeries {
    pub name: String,
    /// One value per step t = 1..=T, recorded after the transition.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulationRecord {
    pub final_state: State,
    /// (t, state) pairs ordered by time.
    pub snapshots: Vec<(u64, State)>,
    pub trackers: Vec<TrackerSeries>,
}

/// Per-run stepping context. Drives one transition at a time so that the
/// intervention layer can act between steps.
pub struct Runner<'a> {
    sim: &'a Simulator,
    plan: &'a RunPlan,
    prepared: PreparedEvents,
    psi: LatentDraws,
    tracker_values: Vec<Vec<f64>>,
    snapshots: Vec<(u64, State)>,
}

impl<'a> Runner<'a> {
    pub fn new(sim: &'a Simulator, start: &State, plan: &'a RunPlan) -> Result<Self> {
        plan.validate()?;
        start.validate()?;
        if !start.domain().same_as(sim.domain()) {
            return Err(SimError::BadConfig(
                "start state does not belong to the simulator's domain".into(),
            ));
        }
        let prepared = PreparedEvents::prepare(&sim.manipulation, &start.theta)?;
        Ok(Runner {
            sim,
            plan,
            prepared,
            psi: sim.psi(),
            tracker_values: vec![Vec::with_capacity(plan.horizon as usize); plan.trackers.len()],
            snapshots: Vec::new(),
        })
    }

    pub fn psi(&self) -> LatentDraws {
        self.psi
    }

    /// Re-resolves event scratches after the parameter vector changed
    /// (policy interventions).
    pub fn reprepare(&mut self, theta: &ParameterVector) -> Result<()> {
        self.prepared = PreparedEvents::prepare(&self.sim.manipulation, theta)?;
        Ok(())
    }

    /// Advances the state by one transition (step `t`).
    pub fn step(&mut self, state: &mut State, t: u64) -> Result<()> {
        for acc in self.sim.accumulation_events() {
            accumulate_in_place(acc, &mut state.population, &state.theta, &self.psi, t)?;
        }
        if self.prepared.is_empty() || state.population.is_empty() {
            return Ok(());
        }
        let keys: Vec<_> = self
            .prepared
            .events
            .iter()
            .map(|e| self.psi.key(t, e.tag()))
            .collect();
        let shared_perm = shared_permutation(self.sim.order(), self.prepared.len(), &self.psi, t);
        let domain = self.sim.domain().clone();
        let n = state.population.len();
        let parts = self.plan.partitions.min(n.max(1));
        let ids: Vec<u64> = state.population.ids().to_vec();
        let mut cols = state.population.columns_mut();

        if parts <= 1 {
            let mut slices: Vec<&mut [f64]> = cols.iter_mut().map(|c| &mut **c).collect();
            manipulate_chunk(
                &ids,
                &mut slices,
                &domain,
                &self.prepared,
                &keys,
                &state.theta,
                self.sim.order(),
                &shared_perm,
                &self.psi,
                t,
            )?;
        } else {
            let bounds = chunk_bounds(n, parts);
            let mut chunks: Vec<(usize, Vec<&mut [f64]>)> =
                bounds.iter().map(|r| (r.start, Vec::new())).collect();
            for col in cols.iter_mut() {
                let mut rest: &mut [f64] = col;
                let mut offset = 0usize;
                for (ci, r) in bounds.iter().enumerate() {
                    let (head, tail) = rest.split_at_mut(r.end - offset);
                    chunks[ci].1.push(head);
                    rest = tail;
                    offset = r.end;
                }
            }
            let prepared = &self.prepared;
            let order = self.sim.order();
            let theta = &state.theta;
            let psi = &self.psi;
            let keys = &keys;
            let shared_perm = &shared_perm;
            let domain = &domain;
            let ids = &ids;
            let bounds = &bounds;
            let results: Vec<Result<()>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .into_iter()
                    .enumerate()
                    .map(|(ci, (_, mut chunk_cols))| {
                        scope.spawn(move || {
                            manipulate_chunk(
                                &ids[bounds[ci].clone()],
                                &mut chunk_cols,
                                domain,
                                prepared,
                                keys,
                                theta,
                                order,
                                shared_perm,
                                psi,
                                t,
                            )
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            for r in results {
                r?;
            }
        }
        Ok(())
    }

    /// Records trackers and any due snapshot after step `t` completed.
    pub fn observe(&mut self, state: &State, t: u64) -> Result<()> {
        for (series, tracker) in self.tracker_values.iter_mut().zip(&self.plan.trackers) {
            series.push(tracker.evaluate(&state.population)?);
        }
        if let SnapshotPolicy::Every(k) = self.plan.snapshots {
            if k > 0 && t % k == 0 {
                self.snapshots.push((t, state.clone()));
            }
        }
        Ok(())
    }

    pub fn finish(mut self, final_state: State) -> SimulationRecord {
        match self.plan.snapshots {
            SnapshotPolicy::FinalOnly => {
                self.snapshots.push((self.plan.horizon, final_state.clone()));
            }
            SnapshotPolicy::Every(_) => {
                if self.snapshots.last().map(|(t, _)| *t) != Some(self.plan.horizon) {
                    self.snapshots.push((self.plan.horizon, final_state.clone()));
                }
            }
            SnapshotPolicy::None => {}
        }
        let trackers = self
            .plan
            .trackers
            .iter()
            .zip(self.tracker_values)
            .map(|(tr, values)| TrackerSeries {
                name: tr.name().to_string(),
                values,
            })
            .collect();
        SimulationRecord {
            final_state,
            snapshots: self.snapshots,
            trackers,
        }
    }
}

fn chunk_bounds(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let k = k.max(1);
    let base = n / k;
    let rem = n % k;
    let mut bounds = Vec::with_capacity(k);
    let mut lo = 0usize;
    for i in 0..k {
        let len = base + usize::from(i < rem);
        bounds.push(lo..lo + len);
        lo += len;
    }
    bounds
}

/// Runs a full simulation sequence. Output is bit-identical for identical
/// (simulator, start, plan) including across partition counts.
pub fn run(sim: &Simulator, start: &State, plan: &RunPlan) -> Result<SimulationRecord> {
    let mut runner = Runner::new(sim, start, plan)?;
    let mut state = start.clone();
    for t in 1..=plan.horizon {
        runner.step(&mut state, t)?;
        runner.observe(&state, t)?;
    }
    Ok(runner.finish(state))
}

/// Splits the population into `k` contiguous chunks whose sizes differ by
/// at most one. Disjoint, union equals the input.
pub fn partition(pop: &Population, k: usize) -> Vec<Population> {
    chunk_bounds(pop.len(), k.max(1))
        .into_iter()
        .map(|r| pop.slice(r))
        .collect()
}

/// Concatenates chunks and sorts rows by id. Duplicate ids are an error.
pub fn merge(chunks: &[Population]) -> Result<Population> {
    if chunks.is_empty() {
        return Err(SimError::BadConfig("merge of zero chunks".into()));
    }
    let domain = chunks[0].domain().clone();
    for c in chunks {
        if !c.domain().same_as(&domain) {
            return Err(SimError::BadConfig("chunks from different domains".into()));
        }
    }
    let mut keyed: Vec<(u64, usize, usize)> = Vec::new();
    for (ci, c) in chunks.iter().enumerate() {
        for (ri, &id) in c.ids().iter().enumerate() {
            keyed.push((id, ci, ri));
        }
    }
    keyed.sort_unstable();
    if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(SimError::DuplicateId(w[0].0));
    }
    let m = domain.n_variables();
    let ids: Vec<u64> = keyed.iter().map(|&(id, _, _)| id).collect();
    let columns: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            keyed
                .iter()
                .map(|&(_, ci, ri)| chunks[ci].column(crate::domain::VarId(j))[ri])
                .collect()
        })
        .collect();
    let next_id = chunks
        .iter()
        .map(|c| c.next_id())
        .chain(ids.last().map(|&i| i + 1))
        .max()
        .unwrap_or(0);
    Ok(Population::from_parts(domain, ids, columns, next_id))
}
