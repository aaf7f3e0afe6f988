//! The five daily events: aging, stroke, diabetes, post-stroke death and
//! background death.
//!
//! Risk factors are read from the step-start snapshot, so a status change
//! becomes visible to other events the next day; guards on alive/stroke
//! read the composed row so at most one terminal event fires per
//! individual per day.

use std::sync::Arc;

use crate::domain::SimulationDomain;
use crate::error::{Result, SimError};
use crate::event::{ManipulationEvent, RowCtx};
use crate::params::ParameterVector;
use crate::rng::inverse_logit;

const DAYS_PER_TEN_YEARS: f64 = 3650.0;
const LN2: f64 = std::f64::consts::LN_2;
/// Ages are asserted below this bound so the background-death rejection
/// bound stays valid.
const AGE_CAP: f64 = 150.0;
/// Days of the constant-hazard window after a stroke (day indices 0..28).
const EARLY_WINDOW: f64 = 28.0;

/// Converts a ten-year event probability to the matching one-day
/// probability under a constant-intensity counting process:
/// tau = -ln(1 - p10) / 3650 and p1 = 1 - exp(-tau).
pub fn ten_year_to_daily(p10: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p10) {
        return Err(SimError::BadDistribution(format!(
            "ten-year probability {p10} outside [0, 1)"
        )));
    }
    let tau = -(-p10).ln_1p() / DAYS_PER_TEN_YEARS;
    Ok(-(-tau).exp_m1())
}

/// One-day probability straight from the ten-year logit: numerically this
/// is ten_year_to_daily(inverse_logit(lp)) with the intermediate
/// probability eliminated (-ln(1 - sigmoid(lp)) = softplus(lp)).
#[inline]
pub fn daily_event_prob(lp: f64) -> f64 {
    let softplus = lp.max(0.0) + (-lp.abs()).exp().ln_1p();
    -(-softplus / DAYS_PER_TEN_YEARS).exp_m1()
}

/// Cheap certified upper bound for `daily_event_prob`; lets the hot path
/// reject draws without evaluating any transcendental beyond the linear
/// predictor.
#[inline]
fn daily_prob_bound(lp: f64) -> f64 {
    (LN2 + lp.max(0.0)) / DAYS_PER_TEN_YEARS
}

struct Vars {
    alive: usize,
    sex: usize,
    age: usize,
    smoking: usize,
    sbp: usize,
    hdl: usize,
    bmi: usize,
    waist: usize,
    glucose_high: usize,
    bp_med: usize,
    diabetes: usize,
    parent_stroke: usize,
    stroke: usize,
    stroke_day: usize,
    death_day: usize,
    death_cause: usize,
}

impl Vars {
    fn resolve(domain: &SimulationDomain) -> Result<Self> {
        let v = |name: &str| domain.var(name).map(|v| v.0);
        Ok(Vars {
            alive: v("alive")?,
            sex: v("sex")?,
            age: v("age")?,
            smoking: v("smoking")?,
            sbp: v("sbp")?,
            hdl: v("hdl")?,
            bmi: v("bmi")?,
            waist: v("waist")?,
            glucose_high: v("glucose_high")?,
            bp_med: v("bp_med")?,
            diabetes: v("diabetes")?,
            parent_stroke: v("parent_stroke")?,
            stroke: v("stroke")?,
            stroke_day: v("stroke_day")?,
            death_day: v("death_day")?,
            death_cause: v("death_cause")?,
        })
    }
}

macro_rules! var {
    ($row:expr, get_start, $idx:expr) => {
        $row.get_start(crate::domain::VarId($idx))
    };
    ($row:expr, get, $idx:expr) => {
        $row.get(crate::domain::VarId($idx))
    };
    ($row:expr, set, $idx:expr, $v:expr) => {
        $row.set(crate::domain::VarId($idx), $v)
    };
}

// ── aging ─────────────────────────────────────────────────────────────────

struct AgingEvent {
    vars: Vars,
}

impl ManipulationEvent for AgingEvent {
    fn name(&self) -> &str {
        "aging"
    }

    fn description(&self) -> &str {
        "advances age by one day"
    }

    fn apply(&self, row: &mut RowCtx<'_>, _theta: &ParameterVector, _scratch: &[f64]) {
        var!(row, set, self.vars.age, var!(row, get, self.vars.age) + 1.0 / 365.0);
    }
}

// ── stroke ────────────────────────────────────────────────────────────────

struct StrokeEvent {
    vars: Vars,
    param_idx: [usize; 14], // male 7 then female 7
}

impl StrokeEvent {
    fn new(domain: &SimulationDomain) -> Result<Self> {
        let names = [
            "stroke_m_intercept",
            "stroke_m_age",
            "stroke_m_smoking",
            "stroke_m_sbp",
            "stroke_m_hdl",
            "stroke_m_diabetes",
            "stroke_m_parent_stroke",
            "stroke_f_intercept",
            "stroke_f_age",
            "stroke_f_smoking",
            "stroke_f_sbp",
            "stroke_f_hdl",
            "stroke_f_diabetes",
            "stroke_f_parent_stroke",
        ];
        let mut param_idx = [0usize; 14];
        for (slot, name) in param_idx.iter_mut().zip(names) {
            *slot = domain.param_index(name)?;
        }
        Ok(StrokeEvent {
            vars: Vars::resolve(domain)?,
            param_idx,
        })
    }
}

impl ManipulationEvent for StrokeEvent {
    fn name(&self) -> &str {
        "stroke"
    }

    fn description(&self) -> &str {
        "daily first-stroke incidence from the sex-specific ten-year risk model"
    }

    fn prepare(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        Ok(self
            .param_idx
            .iter()
            .map(|&i| theta.get_index(i))
            .collect())
    }

    fn apply(&self, row: &mut RowCtx<'_>, _theta: &ParameterVector, scratch: &[f64]) {
        let v = &self.vars;
        if var!(row, get, v.alive) == 0.0 || var!(row, get, v.stroke) != 0.0 {
            return;
        }
        let beta = if var!(row, get_start, v.sex) == 0.0 {
            &scratch[..7]
        } else {
            &scratch[7..14]
        };
        let lp = beta[0]
            + beta[1] * var!(row, get_start, v.age)
            + beta[2] * var!(row, get_start, v.smoking)
            + beta[3] * var!(row, get_start, v.sbp)
            + beta[4] * var!(row, get_start, v.hdl)
            + beta[5] * var!(row, get_start, v.diabetes)
            + beta[6] * var!(row, get_start, v.parent_stroke);
        let u = row.draw(0);
        if u >= daily_prob_bound(lp) {
            return;
        }
        if u < daily_event_prob(lp) {
            var!(row, set, v.stroke, 1.0);
            var!(row, set, v.stroke_day, row.t as f64);
        }
    }
}

// ── diabetes ──────────────────────────────────────────────────────────────

struct DiabetesEvent {
    vars: Vars,
    param_idx: [usize; 6],
}

impl DiabetesEvent {
    fn new(domain: &SimulationDomain) -> Result<Self> {
        let names = [
            "diab_intercept",
            "diab_age",
            "diab_bmi",
            "diab_waist",
            "diab_bp_med",
            "diab_glucose",
        ];
        let mut param_idx = [0usize; 6];
        for (slot, name) in param_idx.iter_mut().zip(names) {
            *slot = domain.param_index(name)?;
        }
        Ok(DiabetesEvent {
            vars: Vars::resolve(domain)?,
            param_idx,
        })
    }
}

impl ManipulationEvent for DiabetesEvent {
    fn name(&self) -> &str {
        "diabetes"
    }

    fn description(&self) -> &str {
        "daily type 2 diabetes incidence, shared coefficients for both sexes"
    }

    fn prepare(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        Ok(self
            .param_idx
            .iter()
            .map(|&i| theta.get_index(i))
            .collect())
    }

    fn apply(&self, row: &mut RowCtx<'_>, _theta: &ParameterVector, scratch: &[f64]) {
        let v = &self.vars;
        if var!(row, get, v.alive) == 0.0 || var!(row, get, v.diabetes) != 0.0 {
            return;
        }
        let lp = scratch[0]
            + scratch[1] * var!(row, get_start, v.age)
            + scratch[2] * var!(row, get_start, v.bmi)
            + scratch[3] * var!(row, get_start, v.waist)
            + scratch[4] * var!(row, get_start, v.bp_med)
            + scratch[5] * var!(row, get_start, v.glucose_high);
        let u = row.draw(0);
        if u >= daily_prob_bound(lp) {
            return;
        }
        if u < daily_event_prob(lp) {
            var!(row, set, v.diabetes, 1.0);
        }
    }
}

// ── post-stroke death ─────────────────────────────────────────────────────

struct StrokeDeathEvent {
    vars: Vars,
    alpha_idx: [usize; 4],
}

impl StrokeDeathEvent {
    fn new(domain: &SimulationDomain) -> Result<Self> {
        Ok(StrokeDeathEvent {
            vars: Vars::resolve(domain)?,
            alpha_idx: [
                domain.param_index("stroke_alpha0")?,
                domain.param_index("stroke_alpha1")?,
                domain.param_index("stroke_alpha2")?,
                domain.param_index("stroke_alpha3")?,
            ],
        })
    }
}

/// Daily post-stroke death probability at `days_since` days after the
/// stroke: constant inside the early window, then the late survival
/// model 1 - sigmoid(a1 + a2 * exp(a3 * (days_since - 27))).
pub fn stroke_death_prob(alpha: &[f64; 4], days_since: f64) -> f64 {
    if days_since < EARLY_WINDOW {
        1.0 - inverse_logit(alpha[0])
    } else {
        1.0 - inverse_logit(alpha[1] + alpha[2] * (alpha[3] * (days_since - 27.0)).exp())
    }
}

impl ManipulationEvent for StrokeDeathEvent {
    fn name(&self) -> &str {
        "stroke-death"
    }

    fn description(&self) -> &str {
        "mortality of stroke survivors: constant 28-day hazard, then the late survival model"
    }

    fn prepare(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        let a: Vec<f64> = self.alpha_idx.iter().map(|&i| theta.get_index(i)).collect();
        let alpha = [a[0], a[1], a[2], a[3]];
        // Upper bound over the whole late window; z is monotone in time so
        // it is attained at one of the ends.
        let q_early = stroke_death_prob(&alpha, 0.0);
        let q_late_lo = stroke_death_prob(&alpha, EARLY_WINDOW);
        let q_late_hi = stroke_death_prob(&alpha, 100.0 * 365.0);
        let bound = q_early.max(q_late_lo).max(q_late_hi);
        Ok(vec![alpha[0], alpha[1], alpha[2], alpha[3], q_early, bound])
    }

    fn apply(&self, row: &mut RowCtx<'_>, _theta: &ParameterVector, scratch: &[f64]) {
        let v = &self.vars;
        // Visibility: a stroke fired this step is handled from tomorrow.
        if var!(row, get, v.alive) == 0.0 || var!(row, get_start, v.stroke) != 1.0 {
            return;
        }
        let u = row.draw(0);
        if u >= scratch[5] {
            return;
        }
        let days_since = row.t as f64 - var!(row, get_start, v.stroke_day);
        let q = if days_since < EARLY_WINDOW {
            scratch[4]
        } else {
            let alpha = [scratch[0], scratch[1], scratch[2], scratch[3]];
            stroke_death_prob(&alpha, days_since)
        };
        if u < q {
            var!(row, set, v.alive, 0.0);
            var!(row, set, v.death_day, row.t as f64);
            var!(row, set, v.death_cause, 1.0);
        }
    }
}

// ── background death ──────────────────────────────────────────────────────

struct BackgroundDeathEvent {
    vars: Vars,
    shape_idx: usize,
    scale_idx: usize,
}

impl BackgroundDeathEvent {
    fn new(domain: &SimulationDomain) -> Result<Self> {
        Ok(BackgroundDeathEvent {
            vars: Vars::resolve(domain)?,
            shape_idx: domain.param_index("mort_weibull_shape")?,
            scale_idx: domain.param_index("mort_weibull_scale")?,
        })
    }
}

/// Daily probability of death from other causes at age `age` (years):
/// the Weibull CDF 1 - exp(-(age / scale)^shape).
pub fn background_death_prob(age: f64, shape: f64, scale: f64) -> Result<f64> {
    if shape <= 0.0 || scale <= 0.0 {
        return Err(SimError::BadDistribution(format!(
            "weibull shape = {shape}, scale = {scale}"
        )));
    }
    if age <= 0.0 {
        return Ok(0.0);
    }
    Ok(-(-(age / scale).powf(shape)).exp_m1())
}

impl ManipulationEvent for BackgroundDeathEvent {
    fn name(&self) -> &str {
        "background-death"
    }

    fn description(&self) -> &str {
        "mortality from other causes for stroke-free individuals"
    }

    fn prepare(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        let shape = theta.get_index(self.shape_idx);
        let scale = theta.get_index(self.scale_idx);
        let bound = background_death_prob(AGE_CAP, shape, scale)?;
        Ok(vec![shape, scale, bound])
    }

    fn apply(&self, row: &mut RowCtx<'_>, _theta: &ParameterVector, scratch: &[f64]) {
        let v = &self.vars;
        if var!(row, get, v.alive) == 0.0
            || var!(row, get, v.stroke) != 0.0
            || var!(row, get_start, v.stroke) != 0.0
        {
            return;
        }
        let age = var!(row, get_start, v.age);
        let u = row.draw(0);
        if age < AGE_CAP && u >= scratch[2] {
            return;
        }
        let q = background_death_prob(age, scratch[0], scratch[1]).unwrap_or(1.0);
        if u < q {
            var!(row, set, v.alive, 0.0);
            var!(row, set, v.death_day, row.t as f64);
            var!(row, set, v.death_cause, 2.0);
        }
    }
}

/// The standard five-event list, in declaration order; the per-step random
/// order permutes them.
pub fn standard_events(domain: &SimulationDomain) -> Result<Vec<Arc<dyn ManipulationEvent>>> {
    Ok(vec![
        Arc::new(AgingEvent {
            vars: Vars::resolve(domain)?,
        }),
        Arc::new(StrokeEvent::new(domain)?),
        Arc::new(DiabetesEvent::new(domain)?),
        Arc::new(StrokeDeathEvent::new(domain)?),
        Arc::new(BackgroundDeathEvent::new(domain)?),
    ])
}

/// Linear predictor of the sex-specific ten-year stroke model.
#[allow(clippy::too_many_arguments)]
pub fn stroke_linear_predictor(
    theta: &ParameterVector,
    woman: bool,
    age: f64,
    smoking: f64,
    sbp: f64,
    hdl: f64,
    diabetes: f64,
    parent_stroke: f64,
) -> Result<f64> {
    let p = if woman { "stroke_f" } else { "stroke_m" };
    Ok(theta.get(&format!("{p}_intercept"))?
        + theta.get(&format!("{p}_age"))? * age
        + theta.get(&format!("{p}_smoking"))? * smoking
        + theta.get(&format!("{p}_sbp"))? * sbp
        + theta.get(&format!("{p}_hdl"))? * hdl
        + theta.get(&format!("{p}_diabetes"))? * diabetes
        + theta.get(&format!("{p}_parent_stroke"))? * parent_stroke)
}

/// Ten-year diabetes risk of one covariate row under theta.
pub fn diabetes_ten_year_risk(
    theta: &ParameterVector,
    age: f64,
    bmi: f64,
    waist: f64,
    bp_med: f64,
    glucose_high: f64,
) -> Result<f64> {
    let lp = theta.get("diab_intercept")?
        + theta.get("diab_age")? * age
        + theta.get("diab_bmi")? * bmi
        + theta.get("diab_waist")? * waist
        + theta.get("diab_bp_med")? * bp_med
        + theta.get("diab_glucose")? * glucose_high;
    Ok(inverse_logit(lp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, RunPlan};
    use crate::health::ScenarioBundle;
    use crate::population::Population;
    use crate::rng::logit;
    use crate::transition::State;

    #[test]
    fn ten_year_to_daily_reference_values() {
        // Frozen against a 40-digit evaluation of the closed form.
        assert_eq!(ten_year_to_daily(0.0).unwrap(), 0.0);
        let p1 = ten_year_to_daily(0.1).unwrap();
        assert!((p1 - 2.886547808484456e-5).abs() / p1 < 1e-13, "p1 = {p1}");
        let p1 = ten_year_to_daily(0.05).unwrap();
        assert!((p1 - 1.405285862410937e-5).abs() / p1 < 1e-13, "p1 = {p1}");
        assert!(ten_year_to_daily(1.0).is_err());
        assert!(ten_year_to_daily(-0.1).is_err());
    }

    #[test]
    fn ten_year_to_daily_intensity_round_trip() {
        // For p10 = 1 - exp(-3650 tau) the one-day risk is 1 - exp(-tau).
        for tau in [1e-6f64, 1e-4, 5e-3] {
            let p10 = -(-3650.0 * tau).exp_m1();
            let expect = -(-tau).exp_m1();
            let got = ten_year_to_daily(p10).unwrap();
            // p10 near 1 loses tail precision in f64, hence the looser bound
            assert!((got - expect).abs() / expect < 1e-8, "tau {tau}: {got} vs {expect}");
        }
    }

    #[test]
    fn ten_year_to_daily_is_increasing_and_dominated() {
        let mut last = 0.0;
        for i in 1..1000 {
            let p10 = i as f64 / 1000.0;
            let p1 = ten_year_to_daily(p10).unwrap();
            assert!(p1 > last, "not increasing at {p10}");
            assert!(p1 <= p10, "p1 {p1} > p10 {p10}");
            last = p1;
        }
    }

    #[test]
    fn daily_event_prob_matches_two_step_composition() {
        for lp in [-30.0, -5.0, -2.5, 0.0, 3.0, 20.0] {
            let via_p10 = ten_year_to_daily(inverse_logit(lp)).unwrap();
            let direct = daily_event_prob(lp);
            // For large positive lp the intermediate ten-year probability
            // saturates toward 1 and the composed route loses tail
            // precision; the direct softplus route is the accurate one.
            let tol = if lp <= 3.0 { 1e-13 } else { 1e-7 };
            assert!(
                (direct - via_p10).abs() <= tol * via_p10.max(1e-300),
                "lp {lp}: {direct} vs {via_p10}"
            );
            assert!(direct <= daily_prob_bound(lp), "bound violated at {lp}");
        }
        // The man-aged-60 case with the intercept pinned so p10 = 0.05.
        let base = ScenarioBundle::standard().unwrap();
        let beta_x = stroke_linear_predictor(&base.theta, false, 60.0, 1.0, 150.0, 1.3, 0.0, 0.0)
            .unwrap()
            - base.theta.get("stroke_m_intercept").unwrap();
        let lp = logit(0.05);
        let _intercept = lp - beta_x; // the pinned intercept
        let p1 = daily_event_prob(lp);
        assert!((p1 - 1.405285862410937e-5).abs() < 1e-12, "p1 = {p1}");
    }

    #[test]
    fn stroke_death_prob_regimes() {
        let alpha = [4.439538691556100, 8.0, -1.5, -0.004];
        let q = 1.0 - 0.72f64.powf(1.0 / 28.0);
        for d in [0.0, 1.0, 27.0] {
            let got = stroke_death_prob(&alpha, d);
            assert!((got - q).abs() < 1e-12, "day {d}: {got} vs {q}");
        }
        // Late regime: positive, and converging toward 1 - sigmoid(a1).
        let late = stroke_death_prob(&alpha, 3650.0);
        assert!(late > 0.0 && late < q);
        let asymptote = 1.0 - inverse_logit(8.0);
        assert!((stroke_death_prob(&alpha, 200.0 * 365.0) - asymptote).abs() < 1e-9);
        // An infinite alpha0 sentinel means nobody dies in the window.
        let immortal = [f64::INFINITY, 8.0, -1.5, -0.004];
        assert_eq!(stroke_death_prob(&immortal, 5.0), 0.0);
    }

    #[test]
    fn background_death_reference_value() {
        let p = background_death_prob(100.0, 1.0, 36500.0).unwrap();
        assert!((p - 0.002735976403140715).abs() < 1e-15, "p = {p}");
        assert_eq!(background_death_prob(0.0, 6.0, 360.0).unwrap(), 0.0);
        let tiny = background_death_prob(100.0, 1.0, 1e12).unwrap();
        assert!(tiny < 1e-9);
        assert!(background_death_prob(50.0, 0.0, 1.0).is_err());
        assert!(background_death_prob(50.0, 2.0, -1.0).is_err());
    }

    fn one_person_state(bundle: &ScenarioBundle, edit: impl Fn(&mut Population)) -> State {
        let mut pop = Population::with_defaults(&bundle.domain, 1);
        let d = &bundle.domain;
        pop.set(d.var("age").unwrap(), 0, 60.0);
        pop.set(d.var("sbp").unwrap(), 0, 130.0);
        pop.set(d.var("hdl").unwrap(), 0, 1.4);
        pop.set(d.var("bmi").unwrap(), 0, 26.0);
        pop.set(d.var("waist").unwrap(), 0, 95.0);
        pop.set(d.var("tchol").unwrap(), 0, 5.4);
        edit(&mut pop);
        State::new(pop, bundle.theta.clone()).unwrap()
    }

    #[test]
    fn zero_risk_sentinel_never_fires() {
        let bundle = ScenarioBundle::standard().unwrap();
        let theta = bundle
            .theta
            .with_all(&[
                ("stroke_m_intercept".into(), f64::NEG_INFINITY),
                ("stroke_m_age".into(), 0.0),
                ("stroke_m_smoking".into(), 0.0),
                ("stroke_m_sbp".into(), 0.0),
                ("stroke_m_hdl".into(), 0.0),
                ("stroke_m_diabetes".into(), 0.0),
                ("stroke_m_parent_stroke".into(), 0.0),
            ])
            .unwrap();
        let mut state = one_person_state(&bundle, |_| {});
        state.theta = theta;
        let sim = bundle.simulator(77);
        let rec = run(&sim, &state, &RunPlan::new(365)).unwrap();
        assert_eq!(
            rec.final_state.population.column_by_name("stroke").unwrap()[0],
            0.0
        );
    }

    #[test]
    fn near_certain_ten_year_risk_fires_quickly_and_stamps_day() {
        // lp = 40 caps the one-day risk at softplus(40)/3650 ~ 1.1%, so on
        // 2000 individuals over 60 days strokes are plentiful; every
        // stroke_day must match a step in 1..=60 and the indicator stays
        // monotone.
        let bundle = ScenarioBundle::standard().unwrap();
        let theta = bundle
            .theta
            .with_all(&[
                ("stroke_m_intercept".into(), 40.0),
                ("stroke_m_age".into(), 0.0),
                ("stroke_m_smoking".into(), 0.0),
                ("stroke_m_sbp".into(), 0.0),
                ("stroke_m_hdl".into(), 0.0),
                ("stroke_m_diabetes".into(), 0.0),
                ("stroke_m_parent_stroke".into(), 0.0),
                // keep them alive to observe the stamp
                ("stroke_alpha0".into(), f64::INFINITY),
                ("stroke_alpha1".into(), f64::INFINITY),
                ("mort_weibull_scale".into(), 1e9),
            ])
            .unwrap();
        let d = &bundle.domain;
        let mut pop = Population::with_defaults(d, 2000);
        for i in 0..2000 {
            pop.set(d.var("age").unwrap(), i, 50.0);
            pop.set(d.var("sbp").unwrap(), i, 120.0);
            pop.set(d.var("hdl").unwrap(), i, 1.4);
        }
        let state = State::new(pop, theta).unwrap();
        let sim = bundle.simulator(9);
        let rec = run(&sim, &state, &RunPlan::new(60)).unwrap();
        let fin = &rec.final_state.population;
        let strokes = fin.column_by_name("stroke").unwrap();
        let days = fin.column_by_name("stroke_day").unwrap();
        let fired = strokes.iter().filter(|&&s| s == 1.0).count();
        // ~1.09% daily for 60 days: expect ~48% cumulative
        assert!(fired > 700 && fired < 1300, "fired = {fired}");
        for (s, d) in strokes.iter().zip(days) {
            if *s == 1.0 {
                assert!((1.0..=60.0).contains(d), "stroke_day = {d}");
            } else {
                assert_eq!(*d, 0.0);
            }
        }
    }

    #[test]
    fn dead_rows_are_fixed_points_of_all_events() {
        let bundle = ScenarioBundle::standard().unwrap();
        let state = one_person_state(&bundle, |pop| {
            let d = pop.domain().clone();
            pop.set(d.var("alive").unwrap(), 0, 0.0);
            pop.set(d.var("death_day").unwrap(), 0, 3.0);
            pop.set(d.var("death_cause").unwrap(), 0, 2.0);
        });
        let sim = bundle.simulator(123);
        let rec = run(&sim, &state, &RunPlan::new(200)).unwrap();
        assert!(rec.final_state.population.bit_identical(&state.population));
    }

    #[test]
    fn stroke_indicator_is_monotone_and_stamped_once() {
        let bundle = ScenarioBundle::standard().unwrap();
        let d = &bundle.domain;
        let mut pop = Population::with_defaults(d, 500);
        for i in 0..500 {
            pop.set(d.var("age").unwrap(), i, 75.0);
            pop.set(d.var("sbp").unwrap(), i, 160.0);
            pop.set(d.var("hdl").unwrap(), i, 1.0);
            pop.set(d.var("bmi").unwrap(), i, 29.0);
            pop.set(d.var("waist").unwrap(), i, 102.0);
            pop.set(d.var("smoking").unwrap(), i, (i % 2) as f64);
        }
        let state = State::new(pop, bundle.theta.clone()).unwrap();
        let sim = bundle.simulator(4242);
        let plan = RunPlan::new(730).with_snapshots(crate::engine::SnapshotPolicy::Every(73));
        let rec = run(&sim, &state, &plan).unwrap();
        let mut last: Vec<f64> = vec![0.0; 500];
        let mut last_days: Vec<f64> = vec![0.0; 500];
        for (_, snap) in &rec.snapshots {
            let s = snap.population.column_by_name("stroke").unwrap();
            let sd = snap.population.column_by_name("stroke_day").unwrap();
            for i in 0..500 {
                assert!(s[i] >= last[i], "stroke indicator regressed for {i}");
                if last[i] == 1.0 {
                    assert_eq!(sd[i], last_days[i], "stroke_day restamped for {i}");
                }
            }
            last = s.to_vec();
            last_days = sd.to_vec();
        }
    }

    #[test]
    fn at_most_one_terminal_event_per_day() {
        // Crank all hazards up; even then a person can die at most once
        // and cause/day stay consistent.
        let bundle = ScenarioBundle::standard().unwrap();
        let theta = bundle
            .theta
            .with_all(&[
                ("stroke_m_intercept".into(), 10.0),
                ("stroke_f_intercept".into(), 10.0),
                ("stroke_alpha0".into(), 2.0),
                ("mort_weibull_shape".into(), 1.0),
                ("mort_weibull_scale".into(), 20000.0),
            ])
            .unwrap();
        let d = &bundle.domain;
        let mut pop = Population::with_defaults(d, 2000);
        for i in 0..2000 {
            pop.set(d.var("age").unwrap(), i, 80.0);
            pop.set(d.var("sex").unwrap(), i, (i % 2) as f64);
            pop.set(d.var("sbp").unwrap(), i, 150.0);
            pop.set(d.var("hdl").unwrap(), i, 1.2);
        }
        let state = State::new(pop, theta).unwrap();
        let sim = bundle.simulator(31337);
        let rec = run(&sim, &state, &RunPlan::new(120)).unwrap();
        let fin = &rec.final_state.population;
        let alive = fin.column_by_name("alive").unwrap();
        let cause = fin.column_by_name("death_cause").unwrap();
        let dday = fin.column_by_name("death_day").unwrap();
        let stroke = fin.column_by_name("stroke").unwrap();
        let sday = fin.column_by_name("stroke_day").unwrap();
        let deaths = alive.iter().filter(|&&a| a == 0.0).count();
        assert!(deaths > 100, "want plenty of deaths, got {deaths}");
        for i in 0..2000 {
            if alive[i] == 1.0 {
                assert_eq!(cause[i], 0.0);
                continue;
            }
            assert!(cause[i] == 1.0 || cause[i] == 2.0);
            assert!(dday[i] >= 1.0);
            if cause[i] == 1.0 {
                // stroke deaths only for stroke sufferers, never the same
                // day as the stroke itself (next-day visibility)
                assert_eq!(stroke[i], 1.0);
                assert!(dday[i] > sday[i], "death on stroke day for {i}");
            } else {
                // background death guards on stroke-free rows
                assert_eq!(stroke[i], 0.0, "background death of a stroke sufferer {i}");
            }
        }
    }
}
