//! Manipulation and accumulation events, the row view they operate on,
//! and the (possibly random, possibly per-individual) event order.

use std::sync::Arc;

use crate::domain::VarId;
use crate::error::Result;
use crate::params::ParameterVector;
use crate::rng::{LatentDraws, StreamKey, StreamTag, NO_INDIVIDUAL};

/// View of one individual's row while manipulation events run.
///
/// `get` reads the composed value (later events see earlier events' writes
/// within the same step); `get_start` reads the step-start snapshot, which
/// is what the shipped health events use so that an event firing at step t
/// becomes visible to other events at step t+1.
pub struct RowCtx<'a> {
    pub id: u64,
    pub t: u64,
    start: &'a [f64],
    work: &'a mut [f64],
    written_lo: u64,
    written_hi: u64,
    all_dirty: bool,
    stream: StreamKey,
}

impl<'a> RowCtx<'a> {
    pub(crate) fn new(id: u64, t: u64, start: &'a [f64], work: &'a mut [f64], stream: StreamKey) -> Self {
        let all_dirty = start.len() > 128;
        RowCtx {
            id,
            t,
            start,
            work,
            written_lo: 0,
            written_hi: 0,
            all_dirty,
            stream,
        }
    }

    pub(crate) fn set_stream(&mut self, stream: StreamKey) {
        self.stream = stream;
    }

    #[inline(always)]
    pub fn get(&self, var: VarId) -> f64 {
        self.work[var.0]
    }

    #[inline(always)]
    pub fn get_start(&self, var: VarId) -> f64 {
        self.start[var.0]
    }

    #[inline(always)]
    pub fn set(&mut self, var: VarId, value: f64) {
        self.work[var.0] = value;
        if !self.all_dirty {
            if var.0 < 64 {
                self.written_lo |= 1u64 << var.0;
            } else {
                self.written_hi |= 1u64 << (var.0 - 64);
            }
        }
    }

    /// The event's own uniform draw stream for this (individual, step).
    #[inline(always)]
    pub fn draw(&self, index: u64) -> f64 {
        self.stream.draw(self.id, index)
    }

    #[inline(always)]
    pub(crate) fn is_written(&self, j: usize) -> bool {
        if self.all_dirty {
            return true;
        }
        if j < 64 {
            self.written_lo & (1u64 << j) != 0
        } else {
            self.written_hi & (1u64 << (j - 64)) != 0
        }
    }

    pub(crate) fn any_written(&self) -> bool {
        self.all_dirty || self.written_lo != 0 || self.written_hi != 0
    }

    pub(crate) fn work_value(&self, j: usize) -> f64 {
        self.work[j]
    }
}

/// A pure per-row rewrite applied each time step. May not add rows, read
/// other rows, or consult anything beyond (own row, theta, own draws).
pub trait ManipulationEvent: Send + Sync {
    fn name(&self) -> &str;

    fn description(&self) -> &str {
        ""
    }

    /// Resolves parameter values and derived constants once per run
    /// (theta is fixed along a simulation sequence). The returned scratch
    /// is handed back to every `apply` call.
    fn prepare(&self, _theta: &ParameterVector) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn apply(&self, row: &mut RowCtx<'_>, theta: &ParameterVector, scratch: &[f64]);

    /// Events leave rows with alive = 0 untouched unless they declare
    /// otherwise; the engine enforces this.
    fn may_touch_dead(&self) -> bool {
        false
    }

    fn tag(&self) -> StreamTag {
        StreamTag::from_name(self.name())
    }
}

/// Adapter turning a closure into a [`ManipulationEvent`].
pub struct FnEvent<F>
where
    F: Fn(&mut RowCtx<'_>, &ParameterVector) + Send + Sync,
{
    name: String,
    f: F,
    may_touch_dead: bool,
}

impl<F> FnEvent<F>
where
    F: Fn(&mut RowCtx<'_>, &ParameterVector) + Send + Sync,
{
    pub fn new(name: &str, f: F) -> Self {
        FnEvent {
            name: name.to_string(),
            f,
            may_touch_dead: false,
        }
    }

    pub fn touching_dead(name: &str, f: F) -> Self {
        FnEvent {
            name: name.to_string(),
            f,
            may_touch_dead: true,
        }
    }

    pub fn into_arc(self) -> Arc<dyn ManipulationEvent>
    where
        F: 'static,
    {
        Arc::new(self)
    }
}

impl<F> ManipulationEvent for FnEvent<F>
where
    F: Fn(&mut RowCtx<'_>, &ParameterVector) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn apply(&self, row: &mut RowCtx<'_>, theta: &ParameterVector, _scratch: &[f64]) {
        (self.f)(row, theta)
    }

    fn may_touch_dead(&self) -> bool {
        self.may_touch_dead
    }
}

/// A per-step generator appending new individuals; cannot modify existing
/// rows. `count` is the eta function, `generate_rows` the b_k family.
pub trait AccumulationEvent: Send + Sync {
    fn name(&self) -> &str;

    fn count(&self, theta: &ParameterVector, psi: &LatentDraws, t: u64) -> u64;

    /// Produces exactly `k` full-width rows. `first_id` is the id the
    /// first generated row will receive; `defaults` holds the domain's
    /// per-variable defaults.
    fn generate_rows(
        &self,
        k: u64,
        first_id: u64,
        defaults: &[f64],
        theta: &ParameterVector,
        psi: &LatentDraws,
        t: u64,
    ) -> Vec<Vec<f64>>;

    fn tag(&self) -> StreamTag {
        StreamTag::from_name(self.name())
    }
}

/// Accumulation event from a pair of closures.
pub struct FnAccumulation<C, G>
where
    C: Fn(&ParameterVector, &LatentDraws, u64) -> u64 + Send + Sync,
    G: Fn(u64, u64, &mut [f64], &ParameterVector, &LatentDraws, u64) + Send + Sync,
{
    name: String,
    count: C,
    generate: G,
}

impl<C, G> FnAccumulation<C, G>
where
    C: Fn(&ParameterVector, &LatentDraws, u64) -> u64 + Send + Sync,
    G: Fn(u64, u64, &mut [f64], &ParameterVector, &LatentDraws, u64) + Send + Sync,
{
    pub fn new(name: &str, count: C, generate: G) -> Self {
        FnAccumulation {
            name: name.to_string(),
            count,
            generate,
        }
    }

    pub fn into_arc(self) -> Arc<dyn AccumulationEvent>
    where
        C: 'static,
        G: 'static,
    {
        Arc::new(self)
    }
}

impl<C, G> AccumulationEvent for FnAccumulation<C, G>
where
    C: Fn(&ParameterVector, &LatentDraws, u64) -> u64 + Send + Sync,
    G: Fn(u64, u64, &mut [f64], &ParameterVector, &LatentDraws, u64) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn count(&self, theta: &ParameterVector, psi: &LatentDraws, t: u64) -> u64 {
        (self.count)(theta, psi, t)
    }

    fn generate_rows(
        &self,
        k: u64,
        first_id: u64,
        defaults: &[f64],
        theta: &ParameterVector,
        psi: &LatentDraws,
        t: u64,
    ) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(k as usize);
        for i in 0..k {
            let mut row = defaults.to_vec();
            (self.generate)(i, first_id + i, &mut row, theta, psi, t);
            rows.push(row);
        }
        rows
    }
}

/// How the application order of manipulation events is drawn each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderMode {
    /// One permutation per step, shared by every row. The default.
    #[default]
    Shared,
    /// A fresh permutation per individual, a function of (seed, id, t).
    PerIndividual,
}

#[derive(Debug, Clone, Copy)]
pub struct EventOrder {
    pub mode: OrderMode,
    pub tag: StreamTag,
}

impl Default for EventOrder {
    fn default() -> Self {
        EventOrder {
            mode: OrderMode::Shared,
            tag: StreamTag::from_name("event-order"),
        }
    }
}

impl EventOrder {
    pub fn per_individual() -> Self {
        EventOrder {
            mode: OrderMode::PerIndividual,
            ..Default::default()
        }
    }
}

/// Fisher-Yates permutation of 0..r driven by keyed draws.
fn permutation_into(out: &mut Vec<usize>, r: usize, key: StreamKey, id: u64) {
    out.clear();
    out.extend(0..r);
    for i in (1..r).rev() {
        let u = key.draw(id, (r - 1 - i) as u64);
        let j = (u * (i + 1) as f64) as usize;
        out.swap(i, j);
    }
}

/// Shared-mode permutation for step `t`.
pub fn shared_permutation(order: &EventOrder, r: usize, psi: &LatentDraws, t: u64) -> Vec<usize> {
    let mut p = Vec::with_capacity(r);
    permutation_into(&mut p, r, psi.key(t, order.tag), NO_INDIVIDUAL);
    p
}

/// Per-individual permutation for (id, t); a pure function of
/// (seed, id, t) regardless of partitioning.
pub fn individual_permutation_into(
    out: &mut Vec<usize>,
    order: &EventOrder,
    r: usize,
    id: u64,
    psi: &LatentDraws,
    t: u64,
) {
    permutation_into(out, r, psi.key(t, order.tag), id);
}

/// One permutation per id (identical clones in shared mode).
pub fn make_event_order(
    order: &EventOrder,
    r: usize,
    ids: &[u64],
    psi: &LatentDraws,
    t: u64,
) -> Vec<Vec<usize>> {
    match order.mode {
        OrderMode::Shared => {
            let p = shared_permutation(order, r, psi, t);
            ids.iter().map(|_| p.clone()).collect()
        }
        OrderMode::PerIndividual => ids
            .iter()
            .map(|&id| {
                let mut p = Vec::with_capacity(r);
                individual_permutation_into(&mut p, order, r, id, psi, t);
                p
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_event_order_is_identity() {
        let psi = LatentDraws::new(1);
        let orders = make_event_order(&EventOrder::default(), 1, &[0, 1, 2], &psi, 5);
        assert_eq!(orders, vec![vec![0], vec![0], vec![0]]);
    }

    #[test]
    fn shared_order_is_deterministic_and_valid() {
        let psi = LatentDraws::new(9);
        let a = shared_permutation(&EventOrder::default(), 5, &psi, 3);
        let b = shared_permutation(&EventOrder::default(), 5, &psi, 3);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        // a different step gives (almost surely) a different permutation eventually
        let later: Vec<_> = (0..50)
            .map(|t| shared_permutation(&EventOrder::default(), 5, &psi, t))
            .collect();
        assert!(later.iter().any(|p| p != &a));
    }

    #[test]
    fn per_individual_orders_are_uniform() {
        // r = 3: each of the 6 permutations should appear with frequency
        // 1/6 within 3 sigma of the binomial over 10^4 individuals.
        let psi = LatentDraws::new(4);
        let order = EventOrder::per_individual();
        let n = 10_000usize;
        let ids: Vec<u64> = (0..n as u64).collect();
        let orders = make_event_order(&order, 3, &ids, &psi, 1);
        let mut counts = std::collections::HashMap::new();
        for p in &orders {
            *counts.entry(p.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expect = n as f64 / 6.0;
        let sigma = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for (p, c) in counts {
            assert!(
                (c as f64 - expect).abs() < 3.0 * sigma,
                "permutation {p:?} count {c} outside 3 sigma of {expect}"
            );
        }
    }

    #[test]
    fn per_individual_order_depends_only_on_seed_id_step() {
        let psi = LatentDraws::new(11);
        let order = EventOrder::per_individual();
        let mut a = Vec::new();
        let mut b = Vec::new();
        individual_permutation_into(&mut a, &order, 4, 77, &psi, 2);
        individual_permutation_into(&mut b, &order, 4, 77, &psi, 2);
        assert_eq!(a, b);
        individual_permutation_into(&mut b, &order, 4, 78, &psi, 2);
        // different ids usually differ; at minimum they must stay valid
        let mut sorted = b.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn zero_events_is_legal() {
        let psi = LatentDraws::new(0);
        let p = shared_permutation(&EventOrder::default(), 0, &psi, 0);
        assert!(p.is_empty());
    }
}
