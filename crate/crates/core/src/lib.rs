//! Deterministic population microsimulation engine.
//!
//! A population is a columnar table of individuals by real-valued status
//! variables. Manipulation events rewrite rows, accumulation events append
//! rows, and one transition per time step composes them. All randomness is
//! a pure function of `(seed, individual, step, consumer, index)`, so runs
//! replay exactly and do not depend on how work is partitioned across
//! threads. On top of the engine sit calibration (derivative-free, with
//! common random numbers), interventions with counterfactual twin runs, a
//! data-collection sampler with missingness mechanisms, and a worked
//! stroke/diabetes/mortality scenario.

pub mod calibrate;
pub mod config;
pub mod domain;
pub mod engine;
pub mod error;
pub mod event;
pub mod export;
pub mod health;
pub mod intervene;
pub mod params;
pub mod population;
pub mod rng;
pub mod sample;
pub mod transition;

pub use domain::{DomainBuilder, SimulationDomain, VarId, VarKind};
pub use engine::{run, RunPlan, SimulationRecord, Simulator, SnapshotPolicy, Tracker};
pub use error::{Result, SimError};
pub use event::{AccumulationEvent, EventOrder, FnEvent, ManipulationEvent, OrderMode, RowCtx};
pub use params::ParameterVector;
pub use population::Population;
pub use rng::{uniform_draw, Dist, LatentDraws, StreamTag};
pub use transition::{apply_accumulation, apply_manipulation, configure, transition, State};
