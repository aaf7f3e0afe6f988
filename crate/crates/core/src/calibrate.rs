//! Calibration: fits simulator parameters to external target tables by
//! Nelder-Mead minimization of a weighted log-least-squares objective,
//! with latent draws frozen across candidate parameter vectors.

use std::io::Write;
use std::sync::Arc;

use crate::engine::{run, RunPlan, SimulationRecord, Simulator};
use crate::error::{Result, SimError};
use crate::transition::{configure, State};

/// One calibration target: a key (age group, statistic name, ...) with its
/// value and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEntry {
    pub key: String,
    pub value: f64,
    pub weight: f64,
}

/// Named series targets plus scalar targets (keys written `*name` in CSV).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetTable {
    pub series: Vec<TargetEntry>,
    pub scalars: Vec<TargetEntry>,
}

impl TargetTable {
    pub fn len(&self) -> usize {
        self.series.len() + self.scalars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parses `key,value,weight` lines; scalar targets use a `*` key
    /// prefix. A header line is detected and skipped.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut table = TargetTable::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(SimError::Format(format!(
                    "target line {}: expected key,value,weight",
                    lineno + 1
                )));
            }
            if lineno == 0 && fields[1].parse::<f64>().is_err() {
                continue; // header
            }
            let value: f64 = fields[1]
                .parse()
                .map_err(|_| SimError::Format(format!("target line {}: bad value", lineno + 1)))?;
            let weight: f64 = fields[2]
                .parse()
                .map_err(|_| SimError::Format(format!("target line {}: bad weight", lineno + 1)))?;
            if weight < 0.0 {
                return Err(SimError::Format(format!(
                    "target line {}: negative weight",
                    lineno + 1
                )));
            }
            let entry = |key: &str| TargetEntry {
                key: key.to_string(),
                value,
                weight,
            };
            if let Some(name) = fields[0].strip_prefix('*') {
                table.scalars.push(entry(name));
            } else {
                table.series.push(entry(fields[0]));
            }
        }
        Ok(table)
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(b"key,value,weight\n")?;
        for e in &self.series {
            writeln!(out, "{},{},{}", e.key, e.value, e.weight)?;
        }
        for e in &self.scalars {
            writeln!(out, "*{},{},{}", e.key, e.value, e.weight)?;
        }
        Ok(())
    }

    fn entries(&self) -> impl Iterator<Item = &TargetEntry> {
        self.series.iter().chain(self.scalars.iter())
    }
}

/// Weighted squared log-gap between targets and predictions. `yhat` is
/// aligned with the table's series entries followed by its scalars.
pub fn objective_wlsq_log(targets: &TargetTable, yhat: &[f64]) -> Result<f64> {
    if yhat.len() != targets.len() {
        return Err(SimError::BadConfig(format!(
            "prediction vector has {} entries, targets have {}",
            yhat.len(),
            targets.len()
        )));
    }
    let mut acc = 0.0;
    for (entry, &pred) in targets.entries().zip(yhat) {
        if entry.value <= 0.0 {
            return Err(SimError::NonPositiveTarget {
                key: entry.key.clone(),
                value: entry.value,
            });
        }
        if pred <= 0.0 {
            return Err(SimError::NonPositiveTarget {
                key: format!("predicted {}", entry.key),
                value: pred,
            });
        }
        let gap = pred.ln() - entry.value.ln();
        acc += entry.weight * gap * gap;
    }
    Ok(acc)
}

/// Nelder-Mead settings. Coefficients follow the standard
/// reflection/expansion/contraction/shrink scheme.
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Initial simplex: x0 plus per-coordinate max(rel * |x0_i|, abs).
    pub init_step_rel: f64,
    pub init_step_abs: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Stop when the f-spread over the simplex falls below this.
    pub tolerance: f64,
    /// The simplex diameter must also shrink below this; guards against
    /// stopping on vertices that straddle the optimum with equal f.
    pub x_tolerance: f64,
    pub max_evals: usize,
    /// Optional per-coordinate box; candidates are clamped before
    /// evaluation.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            init_step_rel: 0.05,
            init_step_abs: 0.01,
            alpha: 1.0,
            gamma: 2.0,
            rho: 0.5,
            sigma: 0.5,
            tolerance: 1e-14,
            x_tolerance: 1e-7,
            max_evals: 2000,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// Best-so-far objective after each evaluation; non-increasing.
    pub trace: Vec<f64>,
    pub evals: usize,
}

struct Tracked<'a, F: FnMut(&[f64]) -> f64> {
    f: F,
    bounds: Option<&'a [(f64, f64)]>,
    evals: usize,
    max_evals: usize,
    best: f64,
    trace: Vec<f64>,
}

impl<'a, F: FnMut(&[f64]) -> f64> Tracked<'a, F> {
    /// Clamps, evaluates, maps non-finite to +inf, updates the trace.
    fn eval(&mut self, x: &mut Vec<f64>) -> f64 {
        if let Some(bounds) = self.bounds {
            for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
                *xi = xi.clamp(lo, hi);
            }
        }
        self.evals += 1;
        let v = (self.f)(x);
        let v = if v.is_finite() { v } else { f64::INFINITY };
        if v < self.best {
            self.best = v;
        }
        self.trace.push(self.best);
        v
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.max_evals
    }
}

/// Derivative-free simplex minimization. The best-vertex value is
/// non-increasing along the returned trace; a non-finite objective at the
/// initial point is a hard error, non-finite values at later candidates
/// are treated as +inf (rejected moves).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult> {
    let n = x0.len();
    if n == 0 {
        return Err(SimError::BadConfig("nelder-mead on zero dimensions".into()));
    }
    if let Some(bounds) = &opts.bounds {
        if bounds.len() != n {
            return Err(SimError::BadConfig("bounds length != dimension".into()));
        }
    }
    let mut tracked = Tracked {
        f,
        bounds: opts.bounds.as_deref(),
        evals: 0,
        max_evals: opts.max_evals.max(n + 2),
        best: f64::INFINITY,
        trace: Vec::new(),
    };

    // Initial simplex: x0 plus one perturbed vertex per coordinate.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut x = x0.to_vec();
    let f0 = tracked.eval(&mut x);
    if !f0.is_finite() {
        return Err(SimError::NonFiniteObjective);
    }
    simplex.push((x, f0));
    for i in 0..n {
        let mut xi = x0.to_vec();
        let step = (opts.init_step_rel * xi[i].abs()).max(opts.init_step_abs);
        xi[i] += step;
        let fi = tracked.eval(&mut xi);
        simplex.push((xi, fi));
    }

    loop {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let spread = simplex[n].1 - simplex[0].1;
        let diameter = (0..n)
            .map(|j| {
                let lo = simplex.iter().map(|(v, _)| v[j]).fold(f64::INFINITY, f64::min);
                let hi = simplex.iter().map(|(v, _)| v[j]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0f64, f64::max);
        let converged =
            spread.is_finite() && spread.abs() < opts.tolerance && diameter < opts.x_tolerance;
        if converged || tracked.exhausted() {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();

        let mut reflected: Vec<f64> = (0..n)
            .map(|j| centroid[j] + opts.alpha * (centroid[j] - worst.0[j]))
            .collect();
        let fr = tracked.eval(&mut reflected);

        if fr < simplex[0].1 {
            // Try to expand past the reflection.
            let mut expanded: Vec<f64> = (0..n)
                .map(|j| centroid[j] + opts.gamma * (reflected[j] - centroid[j]))
                .collect();
            let fe = tracked.eval(&mut expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            // Contract toward the better of reflection and worst.
            let (anchor, f_anchor) = if fr < worst.1 {
                (&reflected, fr)
            } else {
                (&worst.0, worst.1)
            };
            let mut contracted: Vec<f64> = (0..n)
                .map(|j| centroid[j] + opts.rho * (anchor[j] - centroid[j]))
                .collect();
            let fc = tracked.eval(&mut contracted);
            if fc < f_anchor {
                simplex[n] = (contracted, fc);
            } else {
                // Shrink everything toward the best vertex.
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let mut shrunk: Vec<f64> = (0..n)
                        .map(|j| best[j] + opts.sigma * (vertex.0[j] - best[j]))
                        .collect();
                    let fs = tracked.eval(&mut shrunk);
                    *vertex = (shrunk, fs);
                    if tracked.exhausted() {
                        break;
                    }
                }
            }
        }
        if tracked.exhausted() {
            break;
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, f) = simplex.swap_remove(0);
    Ok(NelderMeadResult {
        x,
        f,
        trace: tracked.trace,
        evals: tracked.evals,
    })
}

/// Maps a finished run to the prediction vector aligned with the targets.
pub type OutputFn = Arc<dyn Fn(&SimulationRecord) -> Result<Vec<f64>> + Send + Sync>;

/// A calibration problem: simulator plus start state, free parameters,
/// the target table, and the output function extracting predictions.
#[derive(Clone)]
pub struct CalibrationProblem {
    pub simulator: Simulator,
    pub start: State,
    pub plan: RunPlan,
    pub free: Vec<String>,
    pub targets: TargetTable,
    pub output: OutputFn,
    pub options: NelderMeadOptions,
}

#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub eval: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub theta: crate::params::ParameterVector,
    pub objective: f64,
    pub trace: Vec<TraceEntry>,
    pub evals: usize,
}

/// Runs the calibration loop. Every objective evaluation reconfigures the
/// start state with the candidate theta and replays the simulation with
/// the same master seed (common random numbers), so the objective is a
/// deterministic function of theta. Failed simulations reject the
/// candidate as +inf.
pub fn calibrate(problem: &CalibrationProblem) -> Result<CalibrationOutcome> {
    for name in &problem.free {
        problem.start.domain().param_index(name)?;
    }
    let theta0 = problem.start.theta.clone();

    let eval_at = |x: &[f64], trace: &mut Vec<TraceEntry>, evals: &mut usize| -> f64 {
        let updates: Vec<(String, f64)> = problem
            .free
            .iter()
            .cloned()
            .zip(x.iter().copied())
            .collect();
        let value = (|| -> Result<f64> {
            let theta = theta0.with_all(&updates)?;
            let configured = configure(&problem.start, theta)?;
            let record = run(&problem.simulator, &configured, &problem.plan)?;
            let yhat = (problem.output)(&record)?;
            objective_wlsq_log(&problem.targets, &yhat)
        })()
        .unwrap_or(f64::INFINITY);
        *evals += 1;
        let best = trace
            .last()
            .map(|e| e.best.min(value))
            .unwrap_or(value);
        trace.push(TraceEntry {
            eval: *evals,
            x: x.to_vec(),
            f: value,
            best,
        });
        value
    };

    if problem.free.is_empty() {
        let mut trace = Vec::new();
        let mut evals = 0;
        let f = eval_at(&[], &mut trace, &mut evals);
        return Ok(CalibrationOutcome {
            theta: theta0,
            objective: f,
            trace,
            evals,
        });
    }

    let x0: Vec<f64> = problem
        .free
        .iter()
        .map(|name| theta0.get(name))
        .collect::<Result<_>>()?;

    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut evals = 0usize;
    let result = nelder_mead(
        |x| eval_at(x, &mut trace, &mut evals),
        &x0,
        &problem.options,
    )?;

    let updates: Vec<(String, f64)> = problem
        .free
        .iter()
        .cloned()
        .zip(result.x.iter().copied())
        .collect();
    Ok(CalibrationOutcome {
        theta: theta0.with_all(&updates)?,
        objective: result.f,
        trace,
        evals,
    })
}

/// Trace CSV: eval_index, one column per free parameter, f, best.
pub fn write_trace_csv<W: Write>(
    trace: &[TraceEntry],
    free: &[String],
    out: &mut W,
) -> Result<()> {
    let mut header = String::from("eval");
    for name in free {
        header.push(',');
        header.push_str(name);
    }
    header.push_str(",f,best\n");
    out.write_all(header.as_bytes())?;
    for e in trace {
        let mut line = e.eval.to_string();
        use std::fmt::Write as _;
        for v in &e.x {
            let _ = write!(line, ",{v}");
        }
        let _ = write!(line, ",{},{}", e.f, e.best);
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}
