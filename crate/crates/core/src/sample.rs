//! Data-collection simulation: sampling designs, selective participation,
//! measurement error, and MCAR/MAR/MNAR missingness producing masked
//! samples from the true population.

use std::collections::HashSet;
use std::io::Write;

use crate::domain::{SimulationDomain, VarId};
use crate::engine::{run, RunPlan, SimulationRecord, Simulator};
use crate::error::{Result, SimError};
use crate::intervene::TargetPredicate;
use crate::population::Population;
use crate::rng::{inverse_logit, LatentDraws, StreamTag, NO_INDIVIDUAL};
use crate::transition::State;

/// Who was invited and who showed up.
#[derive(Debug, Clone, Default)]
pub struct DesignMeta {
    pub invited: Vec<u64>,
    pub participated: Vec<bool>,
}

impl DesignMeta {
    pub fn write_sidecar_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(b"id,invited,participated\n")?;
        for (id, p) in self.invited.iter().zip(&self.participated) {
            writeln!(out, "{id},1,{}", u8::from(*p))?;
        }
        Ok(())
    }
}

/// A population copy with a per-cell NA mask. Masked cells are unreadable
/// through `value`; the underlying (post-error) numbers survive untouched
/// and are reachable only through the debug accessor.
#[derive(Debug, Clone)]
pub struct Sample {
    population: Population,
    /// mask[column][row] = true means NA.
    mask: Vec<Vec<bool>>,
    pub meta: DesignMeta,
}

impl Sample {
    pub fn from_population(population: Population, meta: DesignMeta) -> Self {
        let mask = vec![vec![false; population.len()]; population.domain().n_variables()];
        Sample {
            population,
            mask,
            meta,
        }
    }

    pub fn domain(&self) -> &SimulationDomain {
        self.population.domain()
    }

    pub fn len(&self) -> usize {
        self.population.len()
    }

    pub fn is_empty(&self) -> bool {
        self.population.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        self.population.ids()
    }

    /// Analysis access: None for masked cells.
    pub fn value(&self, var: VarId, row: usize) -> Option<f64> {
        if self.mask[var.0][row] {
            None
        } else {
            Some(self.population.get(var, row))
        }
    }

    pub fn is_masked(&self, var: VarId, row: usize) -> bool {
        self.mask[var.0][row]
    }

    /// Debug-mode unmasking; returns the post-error value behind the mask.
    pub fn value_unmasked_debug(&self, var: VarId, row: usize) -> f64 {
        self.population.get(var, row)
    }

    pub fn mask_cell(&mut self, var: VarId, row: usize) {
        self.mask[var.0][row] = true;
    }

    pub fn mask_row(&mut self, row: usize) {
        for plane in &mut self.mask {
            plane[row] = true;
        }
    }

    pub fn na_count(&self, var: VarId) -> usize {
        self.mask[var.0].iter().filter(|&&m| m).count()
    }

    /// Rows with no NA in any of `vars`.
    pub fn complete_rows(&self, vars: &[VarId]) -> Vec<usize> {
        (0..self.len())
            .filter(|&r| vars.iter().all(|v| !self.mask[v.0][r]))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mask = |j: usize, row: usize| self.mask[j][row];
        crate::export::write_csv_masked(&self.population, Some(&mask), out)
    }

    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        let mask = |j: usize, row: usize| self.mask[j][row];
        crate::export::write_binary(&self.population, Some(&mask), out)
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn population_mut(&mut self) -> &mut Population {
        &mut self.population
    }
}

/// Subsampling designs. Exclusion applies before any sampling.
#[derive(Debug, Clone)]
pub enum DesignKind {
    /// Everyone (after exclusions) is invited.
    Census,
    SimpleRandom { n: usize },
    /// Per-stratum sample sizes keyed by the stratum variable's value.
    Stratified { var: String, sizes: Vec<(f64, usize)> },
}

#[derive(Debug, Clone)]
pub struct SamplingDesign {
    pub kind: DesignKind,
    pub exclusion: Option<TargetPredicate>,
}

impl SamplingDesign {
    pub fn simple_random(n: usize) -> Self {
        SamplingDesign {
            kind: DesignKind::SimpleRandom { n },
            exclusion: None,
        }
    }

    pub fn excluding(mut self, predicate: TargetPredicate) -> Self {
        self.exclusion = Some(predicate);
        self
    }
}

fn sample_without_replacement(
    rows: &[usize],
    n: usize,
    psi: &LatentDraws,
    t: u64,
    tag: StreamTag,
) -> Result<Vec<usize>> {
    if n > rows.len() {
        return Err(SimError::BadDesign(format!(
            "requested {n} from {} available",
            rows.len()
        )));
    }
    let key = psi.key(t, tag);
    let mut pool: Vec<usize> = rows.to_vec();
    for i in 0..n {
        let u = key.draw(NO_INDIVIDUAL, i as u64);
        let j = i + (u * (pool.len() - i) as f64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(n);
    Ok(pool)
}

/// Draws the invitee id set: without replacement, deterministic given the
/// seed, exclusions applied first.
pub fn draw_sample(
    pop: &Population,
    design: &SamplingDesign,
    psi: &LatentDraws,
    t: u64,
) -> Result<Vec<u64>> {
    let excluded: HashSet<u64> = match &design.exclusion {
        Some(p) => p.matching_ids(pop)?.into_iter().collect(),
        None => HashSet::new(),
    };
    let eligible: Vec<usize> = (0..pop.len())
        .filter(|&r| !excluded.contains(&pop.ids()[r]))
        .collect();

    let tag = StreamTag::from_name("sampling-design");
    let mut picked: Vec<usize> = match &design.kind {
        DesignKind::Census => eligible,
        DesignKind::SimpleRandom { n } => sample_without_replacement(&eligible, *n, psi, t, tag)?,
        DesignKind::Stratified { var, sizes } => {
            let col = pop.column_by_name(var)?;
            let mut picked = Vec::new();
            for (value, n) in sizes {
                let stratum: Vec<usize> = eligible
                    .iter()
                    .copied()
                    .filter(|&r| col[r] == *value)
                    .collect();
                let stratum_tag =
                    StreamTag(tag.0 ^ crate::rng::mix64(value.to_bits()));
                let chosen =
                    sample_without_replacement(&stratum, *n, psi, t, stratum_tag).map_err(|_| {
                        SimError::BadDesign(format!(
                            "stratum {var} = {value}: requested {n} from {} available",
                            stratum.len()
                        ))
                    })?;
                picked.extend(chosen);
            }
            picked
        }
    };
    picked.sort_unstable();
    Ok(picked.into_iter().map(|r| pop.ids()[r]).collect())
}

/// Baseline non-participation coefficients: intercept, gender (1 = woman),
/// age in years, BMI, smoking indicator, waist circumference in cm.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NonParticipationCoeffs {
    pub intercept: f64,
    pub gender: f64,
    pub age: f64,
    pub bmi: f64,
    pub smoking: f64,
    pub waist: f64,
}

impl NonParticipationCoeffs {
    /// Estimates from the baseline non-participation model shipped with
    /// the scenario.
    pub fn default_health() -> Self {
        NonParticipationCoeffs {
            intercept: -9.48,
            gender: -0.31,
            age: 0.11,
            bmi: -0.09,
            smoking: 0.69,
            waist: 0.04,
        }
    }
}

/// Probability of NON-participation for one covariate row.
pub fn nonparticipation_prob(
    coeffs: &NonParticipationCoeffs,
    gender: f64,
    age: f64,
    bmi: f64,
    smoking: f64,
    waist: f64,
) -> f64 {
    inverse_logit(
        coeffs.intercept
            + coeffs.gender * gender
            + coeffs.age * age
            + coeffs.bmi * bmi
            + coeffs.smoking * smoking
            + coeffs.waist * waist,
    )
}

/// Draws participation for each invitee from the non-participation model.
/// Requires sex/age/bmi/smoking/waist columns.
pub fn participation_draw(
    pop: &Population,
    invitees: &[u64],
    coeffs: &NonParticipationCoeffs,
    psi: &LatentDraws,
    t: u64,
) -> Result<Vec<bool>> {
    let d = pop.domain();
    let sex = d.var("sex")?;
    let age = d.var("age")?;
    let bmi = d.var("bmi")?;
    let smoking = d.var("smoking")?;
    let waist = d.var("waist")?;
    let key = psi.key(t, StreamTag::from_name("participation"));
    invitees
        .iter()
        .map(|&id| {
            let row = pop
                .row_of(id)
                .ok_or(SimError::BadDesign(format!("invitee {id} not in population")))?;
            let p_nonpart = nonparticipation_prob(
                coeffs,
                pop.get(sex, row),
                pop.get(age, row),
                pop.get(bmi, row),
                pop.get(smoking, row),
                pop.get(waist, row),
            );
            Ok(key.draw(id, 0) >= p_nonpart)
        })
        .collect()
}

/// Missing-data mechanism kinds. MAR predictors must stay fully observed
/// in the same design; MNAR models may read the masked variable itself.
#[derive(Debug, Clone)]
pub enum MissingKind {
    Mcar { prob: f64 },
    Mar { intercept: f64, predictors: Vec<(String, f64)> },
    Mnar { intercept: f64, predictors: Vec<(String, f64)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingScope {
    Cells,
    WholeRow,
}

#[derive(Debug, Clone)]
pub struct MissingnessMechanism {
    pub kind: MissingKind,
    pub scope: MissingScope,
}

/// Applies per-cell or per-row Bernoulli masking with the mechanism
/// probability; deterministic given the seed.
pub fn apply_missingness(
    sample: &Sample,
    mech: &MissingnessMechanism,
    columns: &[String],
    psi: &LatentDraws,
    t: u64,
) -> Result<Sample> {
    let d = sample.domain().clone();
    let targets: Vec<VarId> = columns.iter().map(|c| d.var(c)).collect::<Result<_>>()?;

    if let MissingKind::Mar { predictors, .. } = &mech.kind {
        for (p, _) in predictors {
            let pv = d.var(p)?;
            if targets.contains(&pv) {
                return Err(SimError::BadDesign(format!(
                    "MAR predictor `{p}` is itself maskable in this design"
                )));
            }
            if (0..sample.len()).any(|r| sample.is_masked(pv, r)) {
                return Err(SimError::BadDesign(format!(
                    "MAR predictor `{p}` has missing values"
                )));
            }
        }
    }

    let prob_for_row = |row: usize| -> Result<f64> {
        Ok(match &mech.kind {
            MissingKind::Mcar { prob } => *prob,
            MissingKind::Mar { intercept, predictors }
            | MissingKind::Mnar { intercept, predictors } => {
                let mut lp = *intercept;
                for (name, coef) in predictors {
                    lp += coef * sample.value_unmasked_debug(d.var(name)?, row);
                }
                inverse_logit(lp)
            }
        })
    };

    let mut out = sample.clone();
    let key = psi.key(t, StreamTag::from_name("missingness"));
    for row in 0..sample.len() {
        let id = sample.ids()[row];
        let p = prob_for_row(row)?;
        match mech.scope {
            MissingScope::WholeRow => {
                if key.draw(id, 0) < p {
                    for &v in &targets {
                        out.mask_cell(v, row);
                    }
                }
            }
            MissingScope::Cells => {
                for &v in &targets {
                    if key.draw(id, v.0 as u64 + 1) < p {
                        out.mask_cell(v, row);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Measurement-error models applied to unmasked cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorModel {
    None,
    AdditiveNormal { sd: f64 },
    Rounding { step: f64 },
}

pub fn apply_error(
    sample: &Sample,
    column: &str,
    error: ErrorModel,
    psi: &LatentDraws,
    t: u64,
) -> Result<Sample> {
    let var = sample.domain().var(column)?;
    let mut out = sample.clone();
    let key = psi.key(t, StreamTag::from_name("measurement-error"));
    let n = out.len();
    let ids: Vec<u64> = out.ids().to_vec();
    let col = out.population_mut().column_mut(var);
    for row in 0..n {
        if sample.is_masked(var, row) {
            continue;
        }
        match error {
            ErrorModel::None => {}
            ErrorModel::AdditiveNormal { sd } => {
                let u = key.draw(ids[row], var.0 as u64);
                col[row] += sd * crate::rng::normal_quantile(u);
            }
            ErrorModel::Rounding { step } => {
                col[row] = (col[row] / step).round() * step;
            }
        }
    }
    Ok(out)
}

/// A longitudinal follow-up: baseline covariates for participants plus
/// outcome values read from the end of the run. Non-participants are
/// whole-row masked (unit nonresponse) but stay in the full population.
pub struct FollowUpResult {
    pub sample: Sample,
    pub record: SimulationRecord,
}

/// Builds the longitudinal sample from explicit baseline/final states,
/// without re-running the simulation.
pub fn follow_up_from_states(
    baseline: &State,
    fin: &State,
    invitees: &[u64],
    participated: &[bool],
    baseline_columns: &[String],
    outcome_columns: &[String],
) -> Result<Sample> {
    let src = baseline.domain();
    let mut builder = SimulationDomain::builder();
    for name in baseline_columns {
        let def = &src.variables()[src.var(name)?.0];
        builder = builder.variable(name, def.kind);
    }
    for name in outcome_columns {
        let def = &src.variables()[src.var(name)?.0];
        builder = builder.variable(name, def.kind);
    }
    let sample_domain = builder.build()?;

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(sample_domain.n_variables());
    for name in baseline_columns {
        let col = baseline.population.column_by_name(name)?;
        let vals = invitees
            .iter()
            .map(|&id| {
                baseline
                    .population
                    .row_of(id)
                    .map(|r| col[r])
                    .ok_or(SimError::BadDesign(format!("invitee {id} not at baseline")))
            })
            .collect::<Result<Vec<f64>>>()?;
        columns.push(vals);
    }
    for name in outcome_columns {
        let col = fin.population.column_by_name(name)?;
        let vals = invitees
            .iter()
            .map(|&id| {
                fin.population
                    .row_of(id)
                    .map(|r| col[r])
                    .ok_or(SimError::BadDesign(format!("invitee {id} lost during follow-up")))
            })
            .collect::<Result<Vec<f64>>>()?;
        columns.push(vals);
    }

    let next_id = invitees.iter().map(|&i| i + 1).max().unwrap_or(0);
    let pop = Population::from_parts(sample_domain, invitees.to_vec(), columns, next_id);
    let meta = DesignMeta {
        invited: invitees.to_vec(),
        participated: participated.to_vec(),
    };
    let mut sample = Sample::from_population(pop, meta);
    for (row, &p) in participated.iter().enumerate() {
        if !p {
            sample.mask_row(row);
        }
    }
    Ok(sample)
}

/// Runs the simulator for `horizon` steps and assembles the longitudinal
/// sample.
#[allow(clippy::too_many_arguments)]
pub fn follow_up(
    sim: &Simulator,
    start: &State,
    invitees: &[u64],
    participated: &[bool],
    baseline_columns: &[String],
    outcome_columns: &[String],
    horizon: u64,
    partitions: usize,
) -> Result<FollowUpResult> {
    let plan = RunPlan::new(horizon).with_partitions(partitions);
    let record = run(sim, start, &plan)?;
    let sample = follow_up_from_states(
        start,
        &record.final_state,
        invitees,
        participated,
        baseline_columns,
        outcome_columns,
    )?;
    Ok(FollowUpResult { sample, record })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::VarKind;
    use crate::engine::CmpOp;
    use crate::event::{EventOrder, FnEvent};
    use crate::params::ParameterVector;

    fn survey_domain() -> SimulationDomain {
        SimulationDomain::builder()
            .variable("sex", VarKind::Binary)
            .variable("age", VarKind::Real)
            .variable("bmi", VarKind::Real)
            .variable("smoking", VarKind::Binary)
            .variable("waist", VarKind::Real)
            .variable("stroke", VarKind::Binary)
            .variable("stroke_day", VarKind::Real)
            .variable_with_default("alive", VarKind::Binary, 1.0)
            .alive_variable("alive")
            .build()
            .unwrap()
    }

    fn survey_pop_in(d: &SimulationDomain, n: usize) -> Population {
        let mut p = Population::with_defaults(d, n);
        let sex = d.var("sex").unwrap();
        let age = d.var("age").unwrap();
        for i in 0..n {
            p.set(sex, i, (i % 2) as f64);
            p.set(age, i, 30.0 + (i % 60) as f64);
        }
        p
    }

    fn survey_pop(n: usize) -> Population {
        survey_pop_in(&survey_domain(), n)
    }

    fn psi() -> LatentDraws {
        LatentDraws::new(1729)
    }

    // ── draw_sample ───────────────────────────────────────────────────────

    #[test]
    fn census_without_exclusion_returns_all_ids() {
        let p = survey_pop(20);
        let got = draw_sample(&p, &SamplingDesign { kind: DesignKind::Census, exclusion: None }, &psi(), 0).unwrap();
        assert_eq!(got, p.ids());
        let full = draw_sample(&p, &SamplingDesign::simple_random(20), &psi(), 0).unwrap();
        assert_eq!(full, p.ids());
    }

    #[test]
    fn single_candidate_single_pick() {
        let p = survey_pop(1);
        let got = draw_sample(&p, &SamplingDesign::simple_random(1), &psi(), 0).unwrap();
        assert_eq!(got, vec![0]);
    }

    #[test]
    fn oversampling_is_hard_error() {
        let p = survey_pop(5);
        assert!(matches!(
            draw_sample(&p, &SamplingDesign::simple_random(6), &psi(), 0),
            Err(SimError::BadDesign(_))
        ));
    }

    #[test]
    fn stratified_counts_are_exact() {
        let p = survey_pop(100); // 50/50 by sex
        let design = SamplingDesign {
            kind: DesignKind::Stratified {
                var: "sex".into(),
                sizes: vec![(0.0, 5), (1.0, 5)],
            },
            exclusion: None,
        };
        let ids = draw_sample(&p, &design, &psi(), 0).unwrap();
        assert_eq!(ids.len(), 10);
        let sex = p.domain().var("sex").unwrap();
        let women = ids
            .iter()
            .filter(|&&id| p.get(sex, p.row_of(id).unwrap()) == 1.0)
            .count();
        assert_eq!(women, 5);
    }

    #[test]
    fn exclusion_applies_before_sampling() {
        let d = survey_domain();
        let mut p = survey_pop(10);
        let stroke = d.var("stroke").unwrap();
        p.set(stroke, 3, 1.0);
        p.set(stroke, 7, 1.0);
        let design = SamplingDesign {
            kind: DesignKind::Census,
            exclusion: Some(TargetPredicate::Compare {
                var: "stroke".into(),
                op: CmpOp::Eq,
                value: 1.0,
            }),
        };
        let ids = draw_sample(&p, &design, &psi(), 0).unwrap();
        assert_eq!(ids.len(), 8);
        assert!(!ids.contains(&3) && !ids.contains(&7));
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let p = survey_pop(200);
        let a = draw_sample(&p, &SamplingDesign::simple_random(50), &psi(), 0).unwrap();
        let b = draw_sample(&p, &SamplingDesign::simple_random(50), &psi(), 0).unwrap();
        assert_eq!(a, b);
        let c = draw_sample(&p, &SamplingDesign::simple_random(50), &LatentDraws::new(9), 0).unwrap();
        assert_ne!(a, c);
    }

    // ── non-participation model ───────────────────────────────────────────

    #[test]
    fn zero_coefficients_give_half() {
        let c = NonParticipationCoeffs {
            intercept: 0.0,
            gender: 0.0,
            age: 0.0,
            bmi: 0.0,
            smoking: 0.0,
            waist: 0.0,
        };
        assert_eq!(nonparticipation_prob(&c, 1.0, 60.0, 25.0, 1.0, 95.0), 0.5);
    }

    #[test]
    fn default_coefficients_match_hand_computed_cases() {
        // Linear predictor for a man aged 60, BMI 25, smoker, waist 95:
        // -9.48 + 0.11*60 - 0.09*25 + 0.69 + 0.04*95 = -0.64.
        let c = NonParticipationCoeffs::default_health();
        let man = nonparticipation_prob(&c, 0.0, 60.0, 25.0, 1.0, 95.0);
        assert!((man - 0.3452465393936808).abs() < 1e-12, "man: {man}");
        let woman = nonparticipation_prob(&c, 1.0, 60.0, 25.0, 1.0, 95.0);
        assert!((woman - 0.2788848219771369).abs() < 1e-12, "woman: {woman}");
    }

    #[test]
    fn nonparticipation_increases_with_age() {
        let c = NonParticipationCoeffs::default_health();
        let mut last = 0.0;
        for age in [30.0, 45.0, 60.0, 75.0, 90.0] {
            let p = nonparticipation_prob(&c, 1.0, age, 27.0, 0.0, 90.0);
            assert!(p > last, "age {age}: {p} <= {last}");
            last = p;
        }
    }

    // ── missingness ───────────────────────────────────────────────────────

    fn base_sample(n: usize) -> Sample {
        Sample::from_population(survey_pop(n), DesignMeta::default())
    }

    #[test]
    fn mcar_zero_and_one_probabilities() {
        let s = base_sample(50);
        let cols = vec!["bmi".to_string()];
        let none = apply_missingness(
            &s,
            &MissingnessMechanism { kind: MissingKind::Mcar { prob: 0.0 }, scope: MissingScope::Cells },
            &cols,
            &psi(),
            0,
        )
        .unwrap();
        let bmi = s.domain().var("bmi").unwrap();
        assert_eq!(none.na_count(bmi), 0);
        let all = apply_missingness(
            &s,
            &MissingnessMechanism { kind: MissingKind::Mcar { prob: 1.0 }, scope: MissingScope::Cells },
            &cols,
            &psi(),
            0,
        )
        .unwrap();
        assert_eq!(all.na_count(bmi), 50);
    }

    #[test]
    fn mcar_fraction_within_binomial_bounds() {
        let s = base_sample(10_000);
        let cols = vec!["bmi".to_string()];
        let masked = apply_missingness(
            &s,
            &MissingnessMechanism { kind: MissingKind::Mcar { prob: 0.3 }, scope: MissingScope::Cells },
            &cols,
            &psi(),
            0,
        )
        .unwrap();
        let frac = masked.na_count(s.domain().var("bmi").unwrap()) as f64 / 10_000.0;
        assert!((frac - 0.3).abs() < 0.014, "fraction = {frac}");
    }

    #[test]
    fn mcar_mask_uncorrelated_with_data() {
        let s = base_sample(10_000);
        let cols = vec!["bmi".to_string()];
        let masked = apply_missingness(
            &s,
            &MissingnessMechanism { kind: MissingKind::Mcar { prob: 0.5 }, scope: MissingScope::Cells },
            &cols,
            &psi(),
            0,
        )
        .unwrap();
        let bmi = s.domain().var("bmi").unwrap();
        for probe in ["age", "sex"] {
            let col = s.population().column_by_name(probe).unwrap();
            let n = col.len() as f64;
            let mask_mean =
                (0..col.len()).filter(|&r| masked.is_masked(bmi, r)).count() as f64 / n;
            let col_mean = col.iter().sum::<f64>() / n;
            let mut cov = 0.0;
            let mut var_m = 0.0;
            let mut var_c = 0.0;
            for r in 0..col.len() {
                let m = f64::from(masked.is_masked(bmi, r)) - mask_mean;
                let c = col[r] - col_mean;
                cov += m * c;
                var_m += m * m;
                var_c += c * c;
            }
            let corr = cov / (var_m.sqrt() * var_c.sqrt());
            // 3 sigma for a correlation of independent series ~ 3/sqrt(n)
            assert!(corr.abs() < 0.03, "corr({probe}, mask) = {corr}");
        }
    }

    #[test]
    fn mar_rejects_maskable_predictor_and_reads_observed_ones() {
        let s = base_sample(2_000);
        let mech = MissingnessMechanism {
            kind: MissingKind::Mar {
                intercept: -10.0,
                predictors: vec![("age".into(), 0.12)],
            },
            scope: MissingScope::Cells,
        };
        // age itself in the masked set -> error
        assert!(apply_missingness(&s, &mech, &["age".into(), "bmi".into()], &psi(), 0).is_err());
        // masking bmi by age works and is age-graded
        let masked = apply_missingness(&s, &mech, &["bmi".into()], &psi(), 0).unwrap();
        let bmi = s.domain().var("bmi").unwrap();
        let age_col = s.population().column_by_name("age").unwrap();
        let (mut na_old, mut n_old, mut na_young, mut n_young) = (0, 0, 0, 0);
        for r in 0..s.len() {
            if age_col[r] >= 70.0 {
                n_old += 1;
                na_old += usize::from(masked.is_masked(bmi, r));
            } else if age_col[r] < 45.0 {
                n_young += 1;
                na_young += usize::from(masked.is_masked(bmi, r));
            }
        }
        let f_old = na_old as f64 / n_old as f64;
        let f_young = na_young as f64 / n_young as f64;
        assert!(f_old > f_young + 0.1, "old {f_old} vs young {f_young}");
    }

    #[test]
    fn mnar_may_depend_on_masked_variable() {
        let d = survey_domain();
        let mut pop = survey_pop(4_000);
        let bmi = d.var("bmi").unwrap();
        for i in 0..4_000 {
            pop.set(bmi, i, if i % 2 == 0 { 35.0 } else { 22.0 });
        }
        let s = Sample::from_population(pop, DesignMeta::default());
        let mech = MissingnessMechanism {
            kind: MissingKind::Mnar {
                intercept: -9.0,
                predictors: vec![("bmi".into(), 0.3)],
            },
            scope: MissingScope::Cells,
        };
        let masked = apply_missingness(&s, &mech, &["bmi".into()], &psi(), 0).unwrap();
        let bmi_col = s.population().column_by_name("bmi").unwrap();
        let (mut na_high, mut na_low) = (0, 0);
        for r in 0..s.len() {
            if masked.is_masked(s.domain().var("bmi").unwrap(), r) {
                if bmi_col[r] > 30.0 {
                    na_high += 1;
                } else {
                    na_low += 1;
                }
            }
        }
        assert!(na_high > 5 * na_low.max(1), "high {na_high}, low {na_low}");
    }

    #[test]
    fn whole_row_scope_masks_all_targets_together() {
        let s = base_sample(500);
        let cols = vec!["bmi".into(), "waist".into()];
        let masked = apply_missingness(
            &s,
            &MissingnessMechanism { kind: MissingKind::Mcar { prob: 0.4 }, scope: MissingScope::WholeRow },
            &cols,
            &psi(),
            0,
        )
        .unwrap();
        let bmi = s.domain().var("bmi").unwrap();
        let waist = s.domain().var("waist").unwrap();
        for r in 0..s.len() {
            assert_eq!(masked.is_masked(bmi, r), masked.is_masked(waist, r));
        }
    }

    #[test]
    fn masking_never_alters_underlying_values() {
        let s = base_sample(100);
        let masked = apply_missingness(
            &s,
            &MissingnessMechanism { kind: MissingKind::Mcar { prob: 0.7 }, scope: MissingScope::Cells },
            &["age".into()],
            &psi(),
            0,
        )
        .unwrap();
        let age = s.domain().var("age").unwrap();
        for r in 0..s.len() {
            assert_eq!(
                masked.value_unmasked_debug(age, r).to_bits(),
                s.population().get(age, r).to_bits()
            );
        }
    }

    // ── measurement error ─────────────────────────────────────────────────

    #[test]
    fn error_none_is_identity_and_rounding_rounds() {
        let d = survey_domain();
        let mut pop = Population::with_defaults(&d, 1);
        pop.set(d.var("bmi").unwrap(), 0, 3.7);
        let s = Sample::from_population(pop, DesignMeta::default());
        let same = apply_error(&s, "bmi", ErrorModel::None, &psi(), 0).unwrap();
        assert!(same.population().bit_identical(s.population()));
        let rounded = apply_error(&s, "bmi", ErrorModel::Rounding { step: 1.0 }, &psi(), 0).unwrap();
        assert_eq!(rounded.population().get(d.var("bmi").unwrap(), 0), 4.0);
    }

    #[test]
    fn additive_normal_error_statistics() {
        let d = survey_domain();
        let mut pop = Population::with_defaults(&d, 10_000);
        let bmi = d.var("bmi").unwrap();
        for i in 0..10_000 {
            pop.set(bmi, i, 10.0);
        }
        let s = Sample::from_population(pop, DesignMeta::default());
        let noisy = apply_error(&s, "bmi", ErrorModel::AdditiveNormal { sd: 2.0 }, &psi(), 0).unwrap();
        let col = noisy.population().column(bmi);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (col.len() - 1) as f64;
        assert!((mean - 10.0).abs() < 0.06, "mean = {mean}");
        assert!((var.sqrt() - 2.0).abs() < 0.05, "sd = {}", var.sqrt());
    }

    #[test]
    fn error_skips_masked_cells() {
        let s = base_sample(50);
        let masked = apply_missingness(
            &s,
            &MissingnessMechanism { kind: MissingKind::Mcar { prob: 0.5 }, scope: MissingScope::Cells },
            &["bmi".into()],
            &psi(),
            0,
        )
        .unwrap();
        let noisy = apply_error(&masked, "bmi", ErrorModel::AdditiveNormal { sd: 3.0 }, &psi(), 1).unwrap();
        let bmi = s.domain().var("bmi").unwrap();
        for r in 0..s.len() {
            if masked.is_masked(bmi, r) {
                assert_eq!(
                    noisy.value_unmasked_debug(bmi, r),
                    masked.value_unmasked_debug(bmi, r)
                );
            }
        }
    }

    // ── follow-up ─────────────────────────────────────────────────────────

    fn stroke_at_100_sim(d: &SimulationDomain) -> Simulator {
        let stroke = d.var("stroke").unwrap();
        let day = d.var("stroke_day").unwrap();
        let ev = FnEvent::new("stroke-at-100", move |row: &mut crate::event::RowCtx<'_>, _: &ParameterVector| {
            if row.t == 100 && row.get_start(stroke) == 0.0 {
                row.set(stroke, 1.0);
                row.set(day, row.t as f64);
            }
        })
        .into_arc();
        Simulator::new(d.clone(), vec![ev], vec![], EventOrder::default(), 55)
    }

    #[test]
    fn zero_invitees_gives_empty_sample() {
        let d = survey_domain();
        let start = State::new(survey_pop_in(&d, 10), ParameterVector::zeros(&d)).unwrap();
        let sim = stroke_at_100_sim(&d);
        let r = follow_up(&sim, &start, &[], &[], &["age".into()], &["stroke".into()], 5, 1).unwrap();
        assert!(r.sample.is_empty());
    }

    #[test]
    fn outcome_records_carry_event_day() {
        let d = survey_domain();
        let start = State::new(survey_pop_in(&d, 3), ParameterVector::zeros(&d)).unwrap();
        let sim = stroke_at_100_sim(&d);
        let r = follow_up(
            &sim,
            &start,
            &[0, 2],
            &[true, true],
            &["age".into(), "sex".into()],
            &["stroke".into(), "stroke_day".into()],
            120,
            1,
        )
        .unwrap();
        let sd = r.sample.domain().clone();
        let stroke = sd.var("stroke").unwrap();
        let day = sd.var("stroke_day").unwrap();
        assert_eq!(r.sample.len(), 2);
        assert_eq!(r.sample.value(stroke, 0), Some(1.0));
        assert_eq!(r.sample.value(day, 0), Some(100.0));
        // baseline covariate captured at baseline, not end
        let age = sd.var("age").unwrap();
        assert_eq!(r.sample.value(age, 1), Some(32.0));
    }

    #[test]
    fn nonparticipants_are_whole_row_masked() {
        let d = survey_domain();
        let start = State::new(survey_pop_in(&d, 4), ParameterVector::zeros(&d)).unwrap();
        let sim = stroke_at_100_sim(&d);
        let r = follow_up(
            &sim,
            &start,
            &[0, 1, 2, 3],
            &[true, false, true, false],
            &["age".into()],
            &["stroke".into()],
            10,
            1,
        )
        .unwrap();
        let sd = r.sample.domain().clone();
        let age = sd.var("age").unwrap();
        assert!(r.sample.value(age, 0).is_some());
        assert!(r.sample.value(age, 1).is_none());
        assert!(r.sample.value(sd.var("stroke").unwrap(), 3).is_none());
        // sidecar CSV reflects participation
        let mut out = Vec::new();
        r.sample.meta.write_sidecar_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("1,1,0") && text.contains("0,1,1"));
    }

    #[test]
    fn census_with_full_participation_matches_population_exactly() {
        let d = survey_domain();
        let start = State::new(survey_pop_in(&d, 50), ParameterVector::zeros(&d)).unwrap();
        let sim = stroke_at_100_sim(&d);
        let invitees: Vec<u64> = start.population.ids().to_vec();
        let participated = vec![true; invitees.len()];
        let r = follow_up(
            &sim,
            &start,
            &invitees,
            &participated,
            &["age".into()],
            &["stroke".into()],
            120,
            1,
        )
        .unwrap();
        let sd = r.sample.domain().clone();
        let stroke_s = sd.var("stroke").unwrap();
        let sample_incidence = (0..r.sample.len())
            .filter(|&i| r.sample.value(stroke_s, i) == Some(1.0))
            .count();
        let pop_incidence = r
            .record
            .final_state
            .population
            .column_by_name("stroke")
            .unwrap()
            .iter()
            .filter(|&&s| s == 1.0)
            .count();
        assert_eq!(sample_incidence, pop_incidence);
        assert_eq!(sample_incidence, 50);
    }
}
