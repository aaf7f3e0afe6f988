//! The scenario's mortality calibration: fits the background-mortality
//! Weibull (shape, scale) and the 28-day post-stroke survival logit to
//! per-age-group yearly mortality targets plus the share of deaths caused
//! by fatal strokes.

use std::sync::Arc;

use crate::calibrate::{CalibrationProblem, NelderMeadOptions, OutputFn, TargetEntry, TargetTable};
use crate::engine::{RunPlan, SimulationRecord, Simulator};
use crate::error::{Result, SimError};
use crate::transition::State;

/// Age band parsed from a target key like `"30-39"`: covers ages in
/// [lo, hi].
#[derive(Debug, Clone, Copy)]
struct AgeBand {
    lo: f64,
    hi: f64,
}

fn parse_band(key: &str) -> Result<AgeBand> {
    let (lo, hi) = key
        .split_once('-')
        .ok_or_else(|| SimError::BadConfig(format!("target key `{key}` is not an age band")))?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| SimError::BadConfig(format!("bad age band `{key}`")))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| SimError::BadConfig(format!("bad age band `{key}`")))?;
    Ok(AgeBand { lo, hi })
}

/// Paper-shaped default targets: Gompertz-like yearly mortality by
/// ten-year age band plus the stroke share of deaths (7.5%). Weights are
/// 1 below age 80 and 100 from 80 on; the share carries weight 2000.
pub fn default_mortality_targets() -> TargetTable {
    let mut series = Vec::new();
    for lo in (30..100).step_by(10) {
        let hi = lo + 9;
        let mid = lo as f64 + 5.0;
        let q = (-10.3 + 0.092 * mid).exp();
        series.push(TargetEntry {
            key: format!("{lo}-{hi}"),
            value: q,
            weight: if lo < 80 { 1.0 } else { 100.0 },
        });
    }
    TargetTable {
        series,
        scalars: vec![TargetEntry {
            key: "stroke-death-share".into(),
            value: 0.075,
            weight: 2000.0,
        }],
    }
}

/// Free parameters of the mortality calibration.
pub const MORTALITY_FREE: [&str; 3] = ["mort_weibull_shape", "mort_weibull_scale", "stroke_alpha0"];

/// Predicted vector for the mortality targets from one finished run:
/// per-band yearly mortality (deaths over persons, grouped by baseline
/// age) followed by the fatal-stroke share of all deaths. A stroke death
/// counts as fatal when it occurred within 28 days of the stroke.
pub fn mortality_output(
    baseline: &State,
    targets: &TargetTable,
) -> Result<OutputFn> {
    let bands: Vec<AgeBand> = targets
        .series
        .iter()
        .map(|e| parse_band(&e.key))
        .collect::<Result<_>>()?;
    let ages: Vec<f64> = baseline.population.column_by_name("age")?.to_vec();
    let n_scalars = targets.scalars.len();
    if n_scalars > 1 {
        return Err(SimError::BadConfig(
            "mortality targets support a single scalar (the stroke share)".into(),
        ));
    }

    Ok(Arc::new(move |rec: &SimulationRecord| {
        let pop = &rec.final_state.population;
        if pop.len() != ages.len() {
            return Err(SimError::BadConfig(
                "population size changed during the mortality calibration run".into(),
            ));
        }
        let alive = pop.column_by_name("alive")?;
        let cause = pop.column_by_name("death_cause")?;
        let dday = pop.column_by_name("death_day")?;
        let sday = pop.column_by_name("stroke_day")?;

        let mut band_n = vec![0usize; bands.len()];
        let mut band_deaths = vec![0usize; bands.len()];
        let mut deaths = 0usize;
        let mut fatal = 0usize;
        for i in 0..ages.len() {
            let band = bands
                .iter()
                .position(|b| ages[i] >= b.lo && ages[i] < b.hi + 1.0);
            if let Some(bi) = band {
                band_n[bi] += 1;
            }
            if alive[i] == 0.0 {
                deaths += 1;
                if cause[i] == 1.0 && dday[i] - sday[i] <= 28.0 {
                    fatal += 1;
                }
                if let Some(bi) = band {
                    band_deaths[bi] += 1;
                }
            }
        }
        let mut out = Vec::with_capacity(bands.len() + n_scalars);
        for (bi, _) in bands.iter().enumerate() {
            if band_n[bi] == 0 {
                return Err(SimError::BadConfig(format!(
                    "no individuals in age band {bi}"
                )));
            }
            out.push(band_deaths[bi] as f64 / band_n[bi] as f64);
        }
        if n_scalars == 1 {
            if deaths == 0 {
                return Err(SimError::BadConfig("no deaths in calibration run".into()));
            }
            out.push(fatal as f64 / deaths as f64);
        }
        Ok(out)
    }))
}

/// Assembles the calibration problem over (weibull shape, weibull scale,
/// alpha0) against `targets`, evaluating each candidate on a one-year run
/// with frozen latent draws.
pub fn mortality_calibration_problem(
    simulator: Simulator,
    start: State,
    targets: TargetTable,
    partitions: usize,
    max_evals: usize,
) -> Result<CalibrationProblem> {
    for e in targets.series.iter().chain(&targets.scalars) {
        if e.value <= 0.0 {
            return Err(SimError::NonPositiveTarget {
                key: e.key.clone(),
                value: e.value,
            });
        }
    }
    let output = mortality_output(&start, &targets)?;
    Ok(CalibrationProblem {
        simulator,
        start,
        plan: RunPlan::new(365).with_partitions(partitions),
        free: MORTALITY_FREE.iter().map(|s| s.to_string()).collect(),
        targets,
        output,
        options: NelderMeadOptions {
            bounds: Some(vec![(1.0, 20.0), (100.0, 2000.0), (2.0, 9.0)]),
            tolerance: 1e-8,
            x_tolerance: 1e-4,
            max_evals,
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::{calibrate, objective_wlsq_log};
    use crate::engine::run;
    use crate::health::init::{default_init_config, init_population};
    use crate::health::ScenarioBundle;

    #[test]
    fn band_parsing_and_default_targets() {
        let t = default_mortality_targets();
        assert_eq!(t.series.len(), 7);
        assert_eq!(t.series[0].key, "30-39");
        assert_eq!(t.series[5].weight, 100.0);
        assert_eq!(t.scalars[0].value, 0.075);
        assert!(parse_band("40-49").is_ok());
        assert!(parse_band("oops").is_err());
    }

    #[test]
    fn self_targets_give_zero_objective() {
        // Evaluate the output at theta, use it as targets: objective 0.
        let bundle = ScenarioBundle::standard().unwrap();
        let cfg = default_init_config(5_000);
        let pop = init_population(&cfg, &bundle.domain, &bundle.theta, 17).unwrap();
        let start = State::new(pop, bundle.theta.clone()).unwrap();
        let sim = bundle.simulator(99);
        let mut targets = default_mortality_targets();
        let output = mortality_output(&start, &targets).unwrap();
        let rec = run(&sim, &start, &RunPlan::new(365)).unwrap();
        let yhat = output(&rec).unwrap();
        for (e, &v) in targets.series.iter_mut().zip(&yhat) {
            e.value = v;
        }
        targets.scalars[0].value = yhat[7];
        let problem =
            mortality_calibration_problem(sim, start, targets, 1, 10).unwrap();
        let mut trace_problem = problem.clone();
        trace_problem.free.clear();
        let outcome = calibrate(&trace_problem).unwrap();
        assert!(outcome.objective < 1e-18, "objective = {}", outcome.objective);
    }

    #[test]
    fn output_vector_matches_direct_objective() {
        let bundle = ScenarioBundle::standard().unwrap();
        let cfg = default_init_config(2_000);
        let pop = init_population(&cfg, &bundle.domain, &bundle.theta, 3).unwrap();
        let start = State::new(pop, bundle.theta.clone()).unwrap();
        let sim = bundle.simulator(5);
        let targets = default_mortality_targets();
        let output = mortality_output(&start, &targets).unwrap();
        let rec = run(&sim, &start, &RunPlan::new(365)).unwrap();
        let yhat = output(&rec).unwrap();
        assert_eq!(yhat.len(), 8);
        // every predicted mortality must be a sane probability
        for v in &yhat {
            assert!((0.0..=1.0).contains(v));
        }
        // non-positive prediction (empty band) is rejected by the
        // objective rather than silently logged
        if yhat.iter().all(|&v| v > 0.0) {
            assert!(objective_wlsq_log(&targets, &yhat).unwrap().is_finite());
        }
    }
}
