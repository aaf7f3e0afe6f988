//! The follow-up study: invite a random subset at baseline (excluding
//! prior strokes), apply selective non-participation, follow for the
//! horizon, and compare A) participants, B) all invitees and C) the full
//! population on stroke incidence and fitted odds ratios.

use crate::engine::{run, CmpOp, RunPlan, SimulationRecord, Simulator};
use crate::error::Result;
use crate::health::logistic::{fit_logistic, LogisticFit};
use crate::intervene::TargetPredicate;
use crate::sample::{
    draw_sample, follow_up_from_states, participation_draw, DesignKind, DesignMeta, Sample,
    SamplingDesign, NonParticipationCoeffs,
};
use crate::transition::State;

/// Baseline covariates used by the ten-year stroke analysis.
pub const ANALYSIS_COVARIATES: [&str; 6] =
    ["age", "smoking", "sbp", "hdl", "diabetes", "parent_stroke"];

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub invitees: usize,
    pub horizon_days: u64,
    pub partitions: usize,
    pub coeffs: NonParticipationCoeffs,
}

impl StudyConfig {
    pub fn new(invitees: usize, horizon_days: u64) -> Self {
        StudyConfig {
            invitees,
            horizon_days,
            partitions: 1,
            coeffs: NonParticipationCoeffs::default_health(),
        }
    }
}

/// One analysis group (participants / invitees / full population).
pub struct GroupAnalysis {
    pub label: &'static str,
    pub n: usize,
    pub strokes: usize,
    pub incidence_per_100k_year: f64,
    /// Per-sex fits; None with the error text when the fit failed
    /// (small samples can separate).
    pub fit_men: std::result::Result<LogisticFit, String>,
    pub fit_women: std::result::Result<LogisticFit, String>,
}

pub struct StudyResult {
    pub meta: DesignMeta,
    pub excluded_prior_stroke: usize,
    pub groups: Vec<GroupAnalysis>,
    pub sample: Sample,
    pub record: SimulationRecord,
}

fn analyze_group(
    label: &'static str,
    baseline: &State,
    fin: &State,
    rows: &[usize],
    horizon_days: u64,
) -> Result<GroupAnalysis> {
    let d = baseline.domain();
    let stroke_end = fin.population.column_by_name("stroke")?;
    let sex = baseline.population.column_by_name("sex")?;
    let years = horizon_days as f64 / 365.0;

    let strokes = rows.iter().filter(|&&r| stroke_end[r] == 1.0).count();
    let incidence = if rows.is_empty() || years == 0.0 {
        0.0
    } else {
        strokes as f64 / rows.len() as f64 / years * 1e5
    };

    let mut fits: Vec<std::result::Result<LogisticFit, String>> = Vec::with_capacity(2);
    for target_sex in [0.0, 1.0] {
        let members: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| sex[r] == target_sex)
            .collect();
        let outcome: Vec<f64> = members.iter().map(|&r| stroke_end[r]).collect();
        let columns: Vec<Vec<f64>> = ANALYSIS_COVARIATES
            .iter()
            .map(|name| -> Result<Vec<f64>> {
                let col = baseline.population.column(d.var(name)?);
                Ok(members.iter().map(|&r| col[r]).collect())
            })
            .collect::<Result<_>>()?;
        let named: Vec<(&str, &[f64])> = ANALYSIS_COVARIATES
            .iter()
            .zip(&columns)
            .map(|(name, col)| (*name, col.as_slice()))
            .collect();
        fits.push(fit_logistic(&outcome, &named, 60, 1e-8).map_err(|e| e.to_string()));
    }
    let fit_women = fits.pop().expect("two fits");
    let fit_men = fits.pop().expect("two fits");

    Ok(GroupAnalysis {
        label,
        n: rows.len(),
        strokes,
        incidence_per_100k_year: incidence,
        fit_men,
        fit_women,
    })
}

/// Runs the whole study on a prepared baseline state.
pub fn run_followup_study(
    sim: &Simulator,
    start: &State,
    cfg: &StudyConfig,
) -> Result<StudyResult> {
    let psi = sim.psi();
    let no_prior_stroke = TargetPredicate::Compare {
        var: "stroke".into(),
        op: CmpOp::Eq,
        value: 1.0,
    };
    // Count exclusions the way a study log would: invite first, then drop
    // prior strokes, then observe non-participation.
    let invited_any = draw_sample(
        &start.population,
        &SamplingDesign {
            kind: DesignKind::SimpleRandom { n: cfg.invitees },
            exclusion: None,
        },
        &psi,
        0,
    )?;
    let stroke_col = start.population.column_by_name("stroke")?;
    let invitees: Vec<u64> = invited_any
        .iter()
        .copied()
        .filter(|&id| {
            let row = start.population.row_of(id).expect("sampled id exists");
            stroke_col[row] == 0.0
        })
        .collect();
    let excluded_prior_stroke = invited_any.len() - invitees.len();
    let _ = no_prior_stroke; // predicate form available to config-driven designs

    let participated = participation_draw(&start.population, &invitees, &cfg.coeffs, &psi, 0)?;

    let plan = RunPlan::new(cfg.horizon_days).with_partitions(cfg.partitions);
    let record = run(sim, start, &plan)?;
    let fin = &record.final_state;

    let outcome_columns: Vec<String> = ["stroke", "stroke_day", "alive", "death_day"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let baseline_columns: Vec<String> = std::iter::once("sex".to_string())
        .chain(ANALYSIS_COVARIATES.iter().map(|s| s.to_string()))
        .chain(std::iter::once("bmi".to_string()))
        .chain(std::iter::once("waist".to_string()))
        .collect();
    let sample = follow_up_from_states(
        start,
        fin,
        &invitees,
        &participated,
        &baseline_columns,
        &outcome_columns,
    )?;

    // Group rows (indices into the baseline population).
    let row_of = |id: u64| start.population.row_of(id).expect("invitee row");
    let a_rows: Vec<usize> = invitees
        .iter()
        .zip(&participated)
        .filter(|(_, &p)| p)
        .map(|(&id, _)| row_of(id))
        .collect();
    let b_rows: Vec<usize> = invitees.iter().map(|&id| row_of(id)).collect();
    let c_rows: Vec<usize> = (0..start.population.len())
        .filter(|&r| stroke_col[r] == 0.0)
        .collect();

    let groups = vec![
        analyze_group("A", start, fin, &a_rows, cfg.horizon_days)?,
        analyze_group("B", start, fin, &b_rows, cfg.horizon_days)?,
        analyze_group("C", start, fin, &c_rows, cfg.horizon_days)?,
    ];

    Ok(StudyResult {
        meta: DesignMeta {
            invited: invitees,
            participated,
        },
        excluded_prior_stroke,
        groups,
        sample,
        record,
    })
}
