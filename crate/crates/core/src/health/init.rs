//! Config-driven parametric initial population: sex, age structure,
//! smoking, correlated risk factors through per-subgroup Box-Cox
//! transformed multivariate normals with range correction, prevalent
//! strokes with accumulated survival time, and diabetes assignment
//! scaled to target prevalences.

use crate::domain::SimulationDomain;
use crate::error::{Result, SimError};
use crate::health::linalg::{cholesky, lower_mul};
use crate::params::ParameterVector;
use crate::population::Population;
use crate::rng::{normal_quantile, LatentDraws, StreamTag};

/// Risk-factor column order used by every `RiskGroup`.
pub const RISK_VARS: [&str; 5] = ["bmi", "waist", "tchol", "hdl", "sbp"];

const MAX_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeBin {
    pub lo: f64,
    pub hi: f64,
    pub weight_men: f64,
    pub weight_women: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmokingRate {
    pub age_lo: f64,
    pub age_hi: f64,
    pub rate_men: f64,
    pub rate_women: f64,
}

/// Parameters of one sex-by-age-by-smoking subgroup: Box-Cox lambdas,
/// transformed-scale mean vector and covariance, and natural-scale valid
/// ranges for (bmi, waist, tchol, hdl, sbp).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskGroup {
    pub sex: u8,
    pub smoking: u8,
    pub age_lo: f64,
    pub age_hi: f64,
    pub box_cox: [f64; 5],
    pub mean: [f64; 5],
    pub cov: [[f64; 5]; 5],
    pub range_lo: [f64; 5],
    pub range_hi: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub size: usize,
    pub women_share: f64,
    pub age_bins: Vec<AgeBin>,
    pub smoking: Vec<SmokingRate>,
    pub risk_groups: Vec<RiskGroup>,
    pub parent_stroke_prob: f64,
    pub diabetes_prevalence_men: f64,
    pub diabetes_prevalence_women: f64,
    /// Share of the initial population with a previous stroke.
    pub stroke_prevalence: f64,
    /// Weibull for the accumulated post-stroke survival time in days.
    pub stroke_survival_shape: f64,
    pub stroke_survival_scale_days: f64,
    pub bp_med_rate: f64,
    pub glucose_high_rate: f64,
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                Err(SimError::BadConfig(format!("{name} = {v} outside [0, 1]")))
            } else {
                Ok(())
            }
        };
        unit("women_share", self.women_share)?;
        unit("parent_stroke_prob", self.parent_stroke_prob)?;
        unit("diabetes_prevalence_men", self.diabetes_prevalence_men)?;
        unit("diabetes_prevalence_women", self.diabetes_prevalence_women)?;
        unit("stroke_prevalence", self.stroke_prevalence)?;
        unit("bp_med_rate", self.bp_med_rate)?;
        unit("glucose_high_rate", self.glucose_high_rate)?;
        if self.age_bins.is_empty() {
            return Err(SimError::BadConfig("no age bins".into()));
        }
        for b in &self.age_bins {
            if b.lo < 30.0 || b.hi < b.lo {
                return Err(SimError::BadConfig(format!(
                    "age bin [{}, {}) invalid; individuals are at least 30",
                    b.lo, b.hi
                )));
            }
        }
        if self.stroke_survival_shape <= 0.0 || self.stroke_survival_scale_days <= 0.0 {
            return Err(SimError::BadConfig("stroke survival weibull must be positive".into()));
        }
        for g in &self.risk_groups {
            let flat: Vec<f64> = g.cov.iter().flatten().copied().collect();
            if !is_zero_matrix(&flat) {
                cholesky(&flat, 5).map_err(|e| {
                    SimError::BadConfig(format!(
                        "risk group sex={} smoking={} age=[{},{}): {e}",
                        g.sex, g.smoking, g.age_lo, g.age_hi
                    ))
                })?;
            }
        }
        Ok(())
    }

    fn find_group(&self, sex: f64, smoking: f64, age: f64) -> Result<usize> {
        self.risk_groups
            .iter()
            .position(|g| {
                f64::from(g.sex) == sex
                    && f64::from(g.smoking) == smoking
                    && age >= g.age_lo
                    && age < g.age_hi
            })
            .ok_or_else(|| {
                SimError::BadConfig(format!(
                    "no risk group covers sex={sex} smoking={smoking} age={age}"
                ))
            })
    }
}

fn is_zero_matrix(a: &[f64]) -> bool {
    a.iter().all(|&x| x == 0.0)
}

/// Inverse Box-Cox: exp(z) for lambda = 0, (lambda z + 1)^(1/lambda)
/// otherwise. Out-of-domain values come back NaN and fail the range check.
fn inv_box_cox(lambda: f64, z: f64) -> f64 {
    if lambda == 0.0 {
        z.exp()
    } else {
        let base = lambda * z + 1.0;
        if base <= 0.0 {
            f64::NAN
        } else {
            base.powf(1.0 / lambda)
        }
    }
}

struct GroupSampler {
    lambda: [f64; 5],
    mean: [f64; 5],
    /// Lower Cholesky factor, or None for the all-zero (point mass) case.
    factor: Option<Vec<f64>>,
    range_lo: [f64; 5],
    range_hi: [f64; 5],
}

impl GroupSampler {
    fn build(g: &RiskGroup) -> Result<Self> {
        let flat: Vec<f64> = g.cov.iter().flatten().copied().collect();
        let factor = if is_zero_matrix(&flat) {
            None
        } else {
            Some(cholesky(&flat, 5)?)
        };
        Ok(GroupSampler {
            lambda: g.box_cox,
            mean: g.mean,
            factor,
            range_lo: g.range_lo,
            range_hi: g.range_hi,
        })
    }

    /// One draw attempt; `out` receives natural-scale values. Returns
    /// whether every coordinate landed inside its valid range.
    fn attempt(&self, key: crate::rng::StreamKey, id: u64, attempt: u64, out: &mut [f64; 5]) -> bool {
        let mut eps = [0.0f64; 5];
        if self.factor.is_some() {
            for (j, e) in eps.iter_mut().enumerate() {
                *e = normal_quantile(key.draw(id, attempt * 5 + j as u64));
            }
        }
        let mut z = [0.0f64; 5];
        match &self.factor {
            Some(l) => {
                lower_mul(l, 5, &eps, &mut z);
                for j in 0..5 {
                    z[j] += self.mean[j];
                }
            }
            None => z = self.mean,
        }
        let mut ok = true;
        for j in 0..5 {
            let x = inv_box_cox(self.lambda[j], z[j]);
            out[j] = x;
            ok &= x >= self.range_lo[j] && x <= self.range_hi[j];
        }
        ok
    }

    fn clamp(&self, out: &mut [f64; 5]) {
        for j in 0..5 {
            if !out[j].is_finite() {
                out[j] = self.range_lo[j];
            }
            out[j] = out[j].clamp(self.range_lo[j], self.range_hi[j]);
        }
    }
}

/// Generates the initial population. Every value is a pure function of
/// (seed, individual index), so populations replay exactly.
pub fn init_population(
    cfg: &InitConfig,
    domain: &SimulationDomain,
    theta: &ParameterVector,
    seed: u64,
) -> Result<Population> {
    cfg.validate()?;
    let psi = LatentDraws::new(seed);
    let n = cfg.size;
    let mut pop = Population::with_defaults(domain, n);

    let samplers: Vec<GroupSampler> = cfg
        .risk_groups
        .iter()
        .map(GroupSampler::build)
        .collect::<Result<_>>()?;

    let tag = |name: &str| psi.key(0, StreamTag::from_name(name));
    let k_sex = tag("init-sex");
    let k_age = tag("init-age");
    let k_smoking = tag("init-smoking");
    let k_risk = tag("init-risk");
    let k_parent = tag("init-parent-stroke");
    let k_bpmed = tag("init-bp-med");
    let k_glucose = tag("init-glucose");
    let k_prev = tag("init-prevalent-stroke");
    let k_survival = tag("init-stroke-survival");
    let k_diab = tag("init-diabetes");

    let v_sex = domain.var("sex")?;
    let v_age = domain.var("age")?;
    let v_smoking = domain.var("smoking")?;
    let v_parent = domain.var("parent_stroke")?;
    let v_bpmed = domain.var("bp_med")?;
    let v_glucose = domain.var("glucose_high")?;
    let v_stroke = domain.var("stroke")?;
    let v_stroke_day = domain.var("stroke_day")?;
    let v_diabetes = domain.var("diabetes")?;
    let v_risk: Vec<crate::domain::VarId> = RISK_VARS
        .iter()
        .map(|name| domain.var(name))
        .collect::<Result<_>>()?;

    let total_w_men: f64 = cfg.age_bins.iter().map(|b| b.weight_men).sum();
    let total_w_women: f64 = cfg.age_bins.iter().map(|b| b.weight_women).sum();
    if total_w_men <= 0.0 || total_w_women <= 0.0 {
        return Err(SimError::BadConfig("age bin weights must sum positive".into()));
    }

    for i in 0..n {
        let id = i as u64;
        let woman = k_sex.draw(id, 0) < cfg.women_share;
        pop.set(v_sex, i, f64::from(woman));

        // age: weighted bin, then uniform within the bin
        let total = if woman { total_w_women } else { total_w_men };
        let mut pick = k_age.draw(id, 0) * total;
        let mut age = cfg.age_bins[0].lo;
        for b in &cfg.age_bins {
            let w = if woman { b.weight_women } else { b.weight_men };
            if pick < w || std::ptr::eq(b, cfg.age_bins.last().unwrap()) {
                age = b.lo + k_age.draw(id, 1) * (b.hi - b.lo);
                break;
            }
            pick -= w;
        }
        pop.set(v_age, i, age);

        let smoking_rate = cfg
            .smoking
            .iter()
            .find(|r| age >= r.age_lo && age < r.age_hi)
            .map(|r| if woman { r.rate_women } else { r.rate_men })
            .unwrap_or(0.0);
        let smoking = f64::from(k_smoking.draw(id, 0) < smoking_rate);
        pop.set(v_smoking, i, smoking);

        let gi = cfg.find_group(f64::from(woman), smoking, age)?;
        let sampler = &samplers[gi];
        let mut values = [0.0f64; 5];
        let mut accepted = false;
        for attempt in 0..MAX_ATTEMPTS {
            if sampler.attempt(k_risk, id, attempt, &mut values) {
                accepted = true;
                break;
            }
        }
        if !accepted {
            sampler.clamp(&mut values);
        }
        for (j, &var) in v_risk.iter().enumerate() {
            pop.set(var, i, values[j]);
        }

        pop.set(v_parent, i, f64::from(k_parent.draw(id, 0) < cfg.parent_stroke_prob));
        pop.set(v_bpmed, i, f64::from(k_bpmed.draw(id, 0) < cfg.bp_med_rate));
        pop.set(
            v_glucose,
            i,
            f64::from(k_glucose.draw(id, 0) < cfg.glucose_high_rate),
        );

        if k_prev.draw(id, 0) < cfg.stroke_prevalence {
            // accumulated survival time, constrained so the stroke
            // happened at age >= 30 (up to one day of rounding for the
            // youngest)
            let max_days = ((age - 30.0) * 365.0).floor().max(1.0);
            let mut days = 1.0;
            let mut ok = false;
            for attempt in 0..MAX_ATTEMPTS {
                let u = k_survival.draw(id, attempt);
                days = cfg.stroke_survival_scale_days
                    * (-(-u).ln_1p()).powf(1.0 / cfg.stroke_survival_shape);
                days = days.max(1.0).round();
                if days <= max_days {
                    ok = true;
                    break;
                }
            }
            if !ok {
                days = max_days;
            }
            pop.set(v_stroke, i, 1.0);
            pop.set(v_stroke_day, i, -days);
        }
    }

    // Diabetes pass: scale individual ten-year risks so the expected
    // per-sex prevalence matches the configured targets.
    let ages = pop.column(v_age).to_vec();
    let sexes = pop.column(v_sex).to_vec();
    let mut risks = vec![0.0f64; n];
    let (mut sum_m, mut n_m, mut sum_f, mut n_f) = (0.0f64, 0usize, 0.0f64, 0usize);
    for i in 0..n {
        let p10 = crate::health::events::diabetes_ten_year_risk(
            theta,
            ages[i],
            pop.get(v_risk[0], i),
            pop.get(v_risk[1], i),
            pop.get(v_bpmed, i),
            pop.get(v_glucose, i),
        )?;
        risks[i] = p10;
        if sexes[i] == 0.0 {
            sum_m += p10;
            n_m += 1;
        } else {
            sum_f += p10;
            n_f += 1;
        }
    }
    let scale_m = if sum_m > 0.0 {
        cfg.diabetes_prevalence_men * n_m as f64 / sum_m
    } else {
        0.0
    };
    let scale_f = if sum_f > 0.0 {
        cfg.diabetes_prevalence_women * n_f as f64 / sum_f
    } else {
        0.0
    };
    for i in 0..n {
        let scale = if sexes[i] == 0.0 { scale_m } else { scale_f };
        let p = (risks[i] * scale).min(1.0);
        if k_diab.draw(i as u64, 0) < p {
            pop.set(v_diabetes, i, 1.0);
        }
    }

    Ok(pop)
}

/// Shipped default configuration: a synthetic parametric stand-in with
/// plausible Finnish-flavoured marginals and correlation structure.
pub fn default_init_config(size: usize) -> InitConfig {
    let age_bins = vec![
        AgeBin { lo: 30.0, hi: 40.0, weight_men: 0.17, weight_women: 0.16 },
        AgeBin { lo: 40.0, hi: 50.0, weight_men: 0.17, weight_women: 0.16 },
        AgeBin { lo: 50.0, hi: 60.0, weight_men: 0.18, weight_women: 0.18 },
        AgeBin { lo: 60.0, hi: 70.0, weight_men: 0.18, weight_women: 0.18 },
        AgeBin { lo: 70.0, hi: 80.0, weight_men: 0.15, weight_women: 0.16 },
        AgeBin { lo: 80.0, hi: 90.0, weight_men: 0.11, weight_women: 0.12 },
        AgeBin { lo: 90.0, hi: 100.0, weight_men: 0.04, weight_women: 0.04 },
    ];
    let smoking = vec![
        SmokingRate { age_lo: 30.0, age_hi: 50.0, rate_men: 0.25, rate_women: 0.18 },
        SmokingRate { age_lo: 50.0, age_hi: 70.0, rate_men: 0.22, rate_women: 0.15 },
        SmokingRate { age_lo: 70.0, age_hi: 100.0, rate_men: 0.10, rate_women: 0.06 },
    ];

    // Correlations on the log scale for (bmi, waist, tchol, hdl, sbp).
    const CORR: [[f64; 5]; 5] = [
        [1.00, 0.85, 0.12, -0.30, 0.25],
        [0.85, 1.00, 0.12, -0.35, 0.25],
        [0.12, 0.12, 1.00, 0.25, 0.10],
        [-0.30, -0.35, 0.25, 1.00, -0.05],
        [0.25, 0.25, 0.10, -0.05, 1.00],
    ];
    const SD: [f64; 5] = [0.15, 0.11, 0.16, 0.22, 0.105];

    let cov = {
        let mut c = [[0.0f64; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                c[i][j] = CORR[i][j] * SD[i] * SD[j];
            }
        }
        c
    };

    let mut risk_groups = Vec::new();
    for sex in 0..2u8 {
        for smoking_flag in 0..2u8 {
            for (band, (age_lo, age_hi)) in
                [(30.0, 50.0), (50.0, 70.0), (70.0, 100.0)].into_iter().enumerate()
            {
                let woman = sex == 1;
                let smoker = smoking_flag == 1;
                let bmi: f64 = [26.5, 27.5, 27.0][band] - f64::from(woman) - 0.5 * f64::from(smoker);
                let waist = if woman {
                    [82.0, 88.0, 92.0][band]
                } else {
                    [94.0, 99.0, 100.0][band]
                } - 1.0 * f64::from(smoker);
                let tchol: f64 = [5.3, 5.6, 5.4][band];
                let hdl = if woman { 1.60 } else { 1.30 } - 0.10 * f64::from(smoker);
                let sbp = if woman {
                    [120.0, 131.0, 145.0][band]
                } else {
                    [125.0, 134.0, 145.0][band]
                } + 2.0 * f64::from(smoker);
                risk_groups.push(RiskGroup {
                    sex,
                    smoking: smoking_flag,
                    age_lo,
                    age_hi,
                    box_cox: [0.0; 5],
                    mean: [bmi.ln(), waist.ln(), tchol.ln(), hdl.ln(), sbp.ln()],
                    cov,
                    range_lo: [16.0, 55.0, 2.2, 0.5, 85.0],
                    range_hi: [55.0, 170.0, 11.0, 3.8, 240.0],
                });
            }
        }
    }

    InitConfig {
        size,
        women_share: 0.5,
        age_bins,
        smoking,
        risk_groups,
        parent_stroke_prob: 0.12,
        diabetes_prevalence_men: 0.15,
        diabetes_prevalence_women: 0.10,
        stroke_prevalence: 0.025,
        stroke_survival_shape: 0.9,
        stroke_survival_scale_days: 1500.0,
        bp_med_rate: 0.18,
        glucose_high_rate: 0.07,
    }
}
