//! Replicated experiments: mean squared error against the exact value as a
//! function of samples drawn, true weight variance along the adaptation, and
//! action selection for influence diagrams.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_loop, AdaptConfig, GradientKind, ProjectionMode, DEFAULT_MIN_LOCAL_BATCH};
use crate::error::{Error, Result};
use crate::exact;
use crate::model::{Assignment, EstimationProblem, InfluenceDiagram};
use crate::sampling::{batch_estimate, replication_stream, stream, SamplerParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub alpha: f64,
    pub batch_size: usize,
    /// `Ĝ(θ^(t))`.
    pub batch_estimate: f64,
    /// `σ̂²_t` of the batch weights.
    pub sample_variance: f64,
    /// `Ĝ^t`, uniform combination of batches `1..=t`.
    pub running_estimate: f64,
    /// Parameters after the update of round `t`.
    pub theta: SamplerParams,
    pub boundary_hits: usize,
    pub skipped: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// `θ` before the first update.
    pub initial: SamplerParams,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// Parameters after `t` updates; `t = 0` is the initial sampler.
    pub fn theta_at(&self, t: usize) -> &SamplerParams {
        if t == 0 {
            &self.initial
        } else {
            &self.steps[t - 1].theta
        }
    }

    /// Samples drawn during the first `t` rounds.
    pub fn samples_through(&self, t: usize) -> usize {
        self.steps[..t].iter().map(|s| s.batch_size).sum()
    }

    /// Simplex and ε-boundary violations over every recorded sampler.
    pub fn constraint_violations(&self, gamma: f64, tolerance: f64) -> Vec<String> {
        std::iter::once((0, &self.initial))
            .chain(self.steps.iter().map(|s| (s.t, &s.theta)))
            .flat_map(|(t, theta)| {
                theta
                    .constraint_violations(gamma, tolerance)
                    .into_iter()
                    .map(move |v| format!("t={t}: {v}"))
            })
            .collect()
    }

    /// `t,alpha,batch_estimate,running_estimate,boundary_hits,warnings`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["t", "alpha", "batch_estimate", "running_estimate", "boundary_hits", "warnings"])?;
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                s.alpha.to_string(),
                s.batch_estimate.to_string(),
                s.running_estimate.to_string(),
                s.boundary_hits.to_string(),
                s.warnings.join("; "),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariancePoint {
    pub t: usize,
    pub total_samples: usize,
    pub variance: f64,
}

/// Exact `Var[ω(·|θ^(t))]` at `t = 0, stride, 2·stride, …, ≤ T`.
pub fn variance_curve(problem: &EstimationProblem, trace: &Trace, stride: usize) -> Result<Vec<VariancePoint>> {
    if stride == 0 {
        return Err(Error::Precondition("stride must be at least 1".into()));
    }
    (0..=trace.steps.len())
        .step_by(stride)
        .map(|t| {
            Ok(VariancePoint {
                t,
                total_samples: trace.samples_through(t),
                variance: exact::weight_variance(problem, trace.theta_at(t))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Likelihood weighting from the prior, with `lw_multiplier` times the
    /// sample budget.
    Lw,
    Adaptive(AdaptConfig),
    /// A fixed sampler; used as a control.
    Fixed { label: String, params: SamplerParams },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Lw => "lw".to_string(),
            Method::Adaptive(c) => c.kind.to_string(),
            Method::Fixed { label, .. } => label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub replications: usize,
    pub lw_multiplier: usize,
    pub master_seed: u64,
    /// Total samples at which the estimate is scored, increasing.
    pub checkpoints: Vec<usize>,
    pub variance_stride: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Precondition("at least one replication is required".into()));
        }
        if self.lw_multiplier == 0 {
            return Err(Error::Precondition("lw multiplier must be at least 1".into()));
        }
        if self.checkpoints.is_empty() || self.checkpoints[0] == 0 {
            return Err(Error::Precondition("checkpoints must be positive and nonempty".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Precondition("checkpoints must be increasing".into()));
        }
        if self.variance_stride == 0 {
            return Err(Error::Precondition("variance stride must be at least 1".into()));
        }
        for m in &self.methods {
            if let Method::Adaptive(c) = m {
                if let Some(cp) = self.checkpoints.iter().find(|&&cp| cp % c.batch_size != 0) {
                    return Err(Error::Precondition(format!(
                        "checkpoint {cp} is not a multiple of the {} batch size {}",
                        c.kind, c.batch_size
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub method: String,
    pub checkpoint_samples: usize,
    pub mse: f64,
    pub replications: usize,
    /// One-sided sign test of "beats LW" over paired replications.
    pub sign_test_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub method: String,
    pub t: usize,
    pub total_samples: usize,
    pub true_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub true_value: f64,
    pub mse: Vec<MseRow>,
    pub variance: Vec<VarianceRow>,
    /// Constraint violations found in any adaptive trace.
    pub violations: Vec<String>,
}

struct Replicate {
    estimates: Vec<f64>,
    curve: Vec<VariancePoint>,
    violations: Vec<String>,
}

fn prefix_means(weights: &[f64], checkpoints: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut sum = 0.0;
    let mut next = 0;
    for (i, w) in weights.iter().enumerate() {
        sum += w;
        while next < checkpoints.len() && checkpoints[next] == i + 1 {
            out.push(sum / (i + 1) as f64);
            next += 1;
        }
    }
    out
}

fn run_replicate(
    problem: &EstimationProblem,
    method: &Method,
    config: &ExperimentConfig,
    replication: usize,
) -> Result<Replicate> {
    let mut rng = replication_stream(config.master_seed, replication as u64);
    let last = *config.checkpoints.last().unwrap();
    match method {
        Method::Lw | Method::Fixed { .. } => {
            let (params, scale) = match method {
                Method::Lw => (SamplerParams::prior(problem), config.lw_multiplier),
                Method::Fixed { params, .. } => (params.clone(), 1),
                Method::Adaptive(_) => unreachable!(),
            };
            let (_, samples) = batch_estimate(problem, &params, last * scale, &mut rng)?;
            let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
            let scaled: Vec<usize> = config.checkpoints.iter().map(|c| c * scale).collect();
            Ok(Replicate {
                estimates: prefix_means(&weights, &scaled),
                curve: Vec::new(),
                violations: Vec::new(),
            })
        }
        Method::Adaptive(c) => {
            let mut c = c.clone();
            c.total_updates = last / c.batch_size;
            let (_, trace) = adapt_loop(problem, &c, &mut rng)?;
            let estimates = config
                .checkpoints
                .iter()
                .map(|cp| trace.steps[cp / c.batch_size - 1].running_estimate)
                .collect();
            Ok(Replicate {
                estimates,
                curve: variance_curve(problem, &trace, config.variance_stride)?,
                violations: trace.constraint_violations(c.gamma, 1e-9),
            })
        }
    }
}

/// P(Binomial(n, ½) ≥ wins).
fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let mut pmf = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += pmf;
        }
        pmf *= (n - k) as f64 / (k + 1) as f64;
    }
    tail.min(1.0)
}

/// Runs every method for `replications` independent streams. Replication
/// `r` of every method uses the stream seeded with `master_seed ^ r`, so
/// methods are paired. Results are reduced in replication order.
pub fn run_experiment(problem: &EstimationProblem, config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let truth = exact::true_value(problem)?;
    let lw_variance = exact::weight_variance(problem, &SamplerParams::prior(problem))?;

    let mut per_method: Vec<Vec<Replicate>> = Vec::with_capacity(config.methods.len());
    for method in &config.methods {
        let reps = (0..config.replications)
            .into_par_iter()
            .map(|r| run_replicate(problem, method, config, r))
            .collect::<Result<Vec<_>>>()?;
        per_method.push(reps);
    }

    let sq_errors = |reps: &[Replicate], c: usize| -> Vec<f64> {
        reps.iter().map(|r| (r.estimates[c] - truth).powi(2)).collect()
    };
    let lw_index = config.methods.iter().position(|m| matches!(m, Method::Lw));

    let mut mse = Vec::new();
    let mut variance = Vec::new();
    let mut violations = Vec::new();
    for (method, reps) in config.methods.iter().zip(&per_method) {
        let label = method.label();
        for (c, &cp) in config.checkpoints.iter().enumerate() {
            let errs = sq_errors(reps, c);
            let sign_test = match (method, lw_index) {
                (Method::Lw, _) | (_, None) => None,
                (_, Some(lw)) => {
                    let base = sq_errors(&per_method[lw], c);
                    let wins = errs.iter().zip(&base).filter(|(a, b)| a < b).count();
                    let losses = errs.iter().zip(&base).filter(|(a, b)| a > b).count();
                    Some(sign_test_p(wins, losses))
                }
            };
            mse.push(MseRow {
                method: label.clone(),
                checkpoint_samples: cp,
                mse: errs.iter().sum::<f64>() / errs.len() as f64,
                replications: config.replications,
                sign_test_p: sign_test,
            });
        }
        match method {
            Method::Lw => variance.push(VarianceRow {
                method: label.clone(),
                t: 0,
                total_samples: 0,
                true_variance: lw_variance,
            }),
            Method::Adaptive(_) => {
                for (i, point) in reps[0].curve.iter().enumerate() {
                    let mean = reps.iter().map(|r| r.curve[i].variance).sum::<f64>() / reps.len() as f64;
                    variance.push(VarianceRow {
                        method: label.clone(),
                        t: point.t,
                        total_samples: point.total_samples,
                        true_variance: mean,
                    });
                }
                for (r, rep) in reps.iter().enumerate() {
                    violations.extend(rep.violations.iter().map(|v| format!("{label} r={r} {v}")));
                }
            }
            Method::Fixed { .. } => {}
        }
    }

    Ok(ExperimentResult {
        true_value: truth,
        mse,
        variance,
        violations,
    })
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

impl ExperimentResult {
    /// `method,checkpoint_samples,mse,replications,sign_test_p_vs_lw`
    pub fn write_mse_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["method", "checkpoint_samples", "mse", "replications", "sign_test_p_vs_lw"])?;
        for r in &self.mse {
            w.write_record([
                r.method.clone(),
                r.checkpoint_samples.to_string(),
                r.mse.to_string(),
                r.replications.to_string(),
                r.sign_test_p.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `method,t,total_samples,true_variance`
    pub fn write_variance_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["method", "t", "total_samples", "true_variance"])?;
        for r in &self.variance {
            w.write_record([
                r.method.clone(),
                r.t.to_string(),
                r.total_samples.to_string(),
                r.true_variance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn mse_of(&self, method: &str, checkpoint: usize) -> Option<f64> {
        self.mse
            .iter()
            .find(|r| r.method == method && r.checkpoint_samples == checkpoint)
            .map(|r| r.mse)
    }
}

/// How to score each action in [`select_action`].
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluator {
    Exact,
    Lw { samples: usize, seed: u64 },
    Adaptive { config: AdaptConfig, seed: u64 },
}

/// Value of every action given the observation, and the best action (lowest
/// index among ties).
pub fn select_action(
    id: &InfluenceDiagram,
    evidence: &Assignment,
    evaluator: &Evaluator,
) -> Result<(usize, Vec<f64>)> {
    let mut values = Vec::with_capacity(id.decision.arity);
    for a in 0..id.decision.arity {
        let problem = EstimationProblem::new(id.clone(), evidence.clone(), Some(a))?;
        let v = match evaluator {
            Evaluator::Exact => exact::true_value(&problem)?,
            Evaluator::Lw { samples, seed } => {
                crate::sampling::likelihood_weighting(&problem, *samples, &mut stream(*seed))?
            }
            Evaluator::Adaptive { config, seed } => adapt_loop(&problem, config, &mut stream(*seed))?.0.value,
        };
        values.push(v);
    }
    Ok((best_action(&values), values))
}

/// Relative margin below which two action values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Index of the largest value; values within [`TIE_TOLERANCE`] (relative) of
/// the best so far do not displace it, so ties go to the lowest index.
pub fn best_action(values: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in values.iter().enumerate() {
        if v - values[best] > TIE_TOLERANCE * values[best].abs().max(1.0) {
            best = a;
        }
    }
    best
}

/// One method entry of an experiment file. `kind` is `lw` or an update rule;
/// omitted fields take the rule's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub kind: String,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub dirichlet_smoothing: Option<bool>,
    #[serde(default)]
    pub projection: Option<ProjectionMode>,
    #[serde(default)]
    pub min_local_batch: Option<usize>,
}

impl MethodEntry {
    pub fn to_method(&self) -> Result<Method> {
        if self.kind == "lw" {
            return Ok(Method::Lw);
        }
        let kind = GradientKind::ALL
            .into_iter()
            .find(|k| k.name() == self.kind)
            .ok_or_else(|| Error::Parse(format!("unknown method kind `{}`", self.kind)))?;
        let mut c = AdaptConfig::new(kind);
        if let Some(b) = self.beta {
            c.beta = b;
        }
        if let Some(g) = self.gamma {
            c.gamma = g;
        }
        if let Some(n) = self.batch_size {
            c.batch_size = n;
        }
        if let Some(s) = self.dirichlet_smoothing {
            c.dirichlet_smoothing = s;
        }
        if let Some(p) = self.projection {
            c.projection = p;
        }
        c.min_local_batch = self.min_local_batch.unwrap_or(DEFAULT_MIN_LOCAL_BATCH);
        Ok(Method::Adaptive(c))
    }
}

/// Experiment description as read from JSON. `model` is resolved relative to
/// the experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub model: String,
    #[serde(default)]
    pub evidence: Assignment,
    #[serde(default)]
    pub action: Option<usize>,
    pub replications: usize,
    #[serde(default = "default_multiplier")]
    pub lw_multiplier: usize,
    pub master_seed: u64,
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_stride")]
    pub variance_stride: usize,
    pub methods: Vec<MethodEntry>,
}

fn default_multiplier() -> usize {
    2
}

fn default_stride() -> usize {
    10
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            methods: self.methods.iter().map(MethodEntry::to_method).collect::<Result<_>>()?,
            replications: self.replications,
            lw_multiplier: self.lw_multiplier,
            master_seed: self.master_seed,
            checkpoints: self.checkpoints.clone(),
            variance_stride: self.variance_stride,
        })
    }
}
