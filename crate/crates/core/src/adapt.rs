//! Online adaptation of the sampling distribution.
//!
//! Global rules estimate `∂e/∂θ_ijk = E_f[−I(z_i = k, pa_i = j)/θ_ijk · φ(z)]`
//! from the weighted samples of the current batch. Local rules compare `Θ`
//! with the weighted empirical distribution `Θ̂` of the batch. Every gradient
//! is projected per row onto the simplex and applied with an ε-boundary
//! aware step of size `α(t) = β/t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{Trace, TraceStep};
use crate::model::EstimationProblem;
use crate::sampling::{
    batch_estimate, combined_estimate, epsilon, init_params, normalize_and_repair, repair_row,
    sample_variance, uniform_weights, Estimate, ParamTable, SamplerParams, WeightedSample,
};

/// Per-parameter partial derivatives, shaped like [`SamplerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    tables: Vec<ParamTable>,
}

impl Gradient {
    pub fn zeros_like(theta: &SamplerParams) -> Self {
        Gradient {
            tables: theta
                .tables()
                .iter()
                .map(|t| ParamTable::zeros(t.num_rows(), t.arity()))
                .collect(),
        }
    }

    pub fn from_tables(tables: Vec<ParamTable>) -> Self {
        Gradient { tables }
    }

    pub fn tables(&self) -> &[ParamTable] {
        &self.tables
    }

    pub fn table(&self, slot: usize) -> &ParamTable {
        &self.tables[slot]
    }

    pub fn table_mut(&mut self, slot: usize) -> &mut ParamTable {
        &mut self.tables[slot]
    }

    pub fn max_abs(&self) -> f64 {
        self.tables
            .iter()
            .flat_map(|t| t.values().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().all(|t| t.values().iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GradientKind {
    Var,
    L2,
    Kl1,
    Kl2,
    Kls,
    LocalL2,
    LocalKl1,
    LocalKl2,
    LocalKls,
    Sis,
}

impl GradientKind {
    pub const ALL: [GradientKind; 10] = [
        GradientKind::Var,
        GradientKind::L2,
        GradientKind::Kl1,
        GradientKind::Kl2,
        GradientKind::Kls,
        GradientKind::LocalL2,
        GradientKind::LocalKl1,
        GradientKind::LocalKl2,
        GradientKind::LocalKls,
        GradientKind::Sis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradientKind::Var => "var",
            GradientKind::L2 => "l2",
            GradientKind::Kl1 => "kl1",
            GradientKind::Kl2 => "kl2",
            GradientKind::Kls => "kls",
            GradientKind::LocalL2 => "local-l2",
            GradientKind::LocalKl1 => "local-kl1",
            GradientKind::LocalKl2 => "local-kl2",
            GradientKind::LocalKls => "local-kls",
            GradientKind::Sis => "sis",
        }
    }

    pub fn is_local(self) -> bool {
        matches!(
            self,
            GradientKind::LocalL2 | GradientKind::LocalKl1 | GradientKind::LocalKl2 | GradientKind::LocalKls
        )
    }

    /// Rules built on the approximation `f̂ = g / Ĝ`.
    pub fn needs_estimate(self) -> bool {
        matches!(
            self,
            GradientKind::L2 | GradientKind::Kl1 | GradientKind::Kl2 | GradientKind::Kls
        )
    }

    /// Default `β`; the gradient magnitudes differ between rules.
    pub fn default_beta(self) -> f64 {
        match self {
            GradientKind::L2 => 5.0,
            GradientKind::Var | GradientKind::Kl1 | GradientKind::Kl2 | GradientKind::Kls => 0.5,
            _ => 1.0,
        }
    }
}

impl std::fmt::Display for GradientKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// Subtract the signed row mean; rows of the step sum to zero.
    #[default]
    #[serde(rename = "mean")]
    #[value(name = "mean")]
    MeanCenter,
    /// Subtract the mean of the absolute row entries, then renormalize the
    /// updated row.
    #[serde(rename = "literal")]
    #[value(name = "literal")]
    AbsMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    pub kind: GradientKind,
    pub beta: f64,
    pub gamma: f64,
    /// `N(t)`, constant over updates.
    pub batch_size: usize,
    /// `T`.
    pub total_updates: usize,
    pub dirichlet_smoothing: bool,
    pub projection: ProjectionMode,
    /// Smallest batch accepted for the local rules.
    pub min_local_batch: usize,
}

pub const DEFAULT_MIN_LOCAL_BATCH: usize = 50;

impl AdaptConfig {
    pub fn new(kind: GradientKind) -> Self {
        AdaptConfig {
            kind,
            beta: kind.default_beta(),
            gamma: 0.1,
            batch_size: if kind.is_local() { DEFAULT_MIN_LOCAL_BATCH } else { 1 },
            total_updates: 100,
            dirichlet_smoothing: matches!(kind, GradientKind::LocalKl2 | GradientKind::LocalKls),
            projection: ProjectionMode::MeanCenter,
            min_local_batch: DEFAULT_MIN_LOCAL_BATCH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Precondition(format!("beta must be positive, got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Precondition(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Precondition("batch size must be at least 1".into()));
        }
        if self.total_updates == 0 {
            return Err(Error::Precondition("at least one update is required".into()));
        }
        if self.kind.is_local() && self.batch_size < self.min_local_batch {
            return Err(Error::Precondition(format!(
                "{} needs batches of at least {} samples, got {}",
                self.kind, self.min_local_batch, self.batch_size
            )));
        }
        if self.kind == GradientKind::Sis && self.beta > 1.0 {
            return Err(Error::Precondition(format!(
                "sis blends with weight beta/t and needs beta <= 1, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// `φ_var = ω²`.
pub fn phi_var(w: f64) -> f64 {
    w * w
}

fn check_estimate(g_hat: f64) -> Result<()> {
    if !(g_hat > 0.0) {
        return Err(Error::Domain(format!("estimate of G must be positive, got {g_hat}")));
    }
    Ok(())
}

/// `φ_L2 ≈ f(z|θ) (ω/Ĝ − 1)`.
pub fn phi_l2(f_z: f64, w: f64, g_hat: f64) -> Result<f64> {
    check_estimate(g_hat)?;
    Ok(f_z * (w / g_hat - 1.0))
}

/// `φ_KL1 ≈ ω/Ĝ`.
pub fn phi_kl1(w: f64, g_hat: f64) -> Result<f64> {
    check_estimate(g_hat)?;
    Ok(w / g_hat)
}

/// `φ_KL2 ≈ ln(ω/Ĝ) − 1`.
pub fn phi_kl2(w: f64, g_hat: f64) -> Result<f64> {
    check_estimate(g_hat)?;
    if !(w > 0.0) {
        return Err(Error::Domain(format!("kl2 needs a positive weight, got {w}")));
    }
    Ok((w / g_hat).ln() - 1.0)
}

/// `φ_KLs = (φ_KL1 + φ_KL2) / 2`.
pub fn phi_kls(w: f64, g_hat: f64) -> Result<f64> {
    Ok(0.5 * (phi_kl1(w, g_hat)? + phi_kl2(w, g_hat)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Gradient,
    /// Samples with zero weight dropped by the log-based rules.
    pub skipped: usize,
}

/// Sample estimate `(1/N) Σ_l −I(z_i^l = k, pa_i^l = j)/θ_ijk · φ(z^l)` for a
/// global rule. `g_hat` is ignored by [`GradientKind::Var`].
pub fn gradient_estimate_global(
    problem: &EstimationProblem,
    theta: &SamplerParams,
    samples: &[WeightedSample],
    kind: GradientKind,
    g_hat: f64,
) -> Result<GradientEstimate> {
    let mut gradient = Gradient::zeros_like(theta);
    let mut skipped = 0;
    if samples.is_empty() {
        return Ok(GradientEstimate { gradient, skipped });
    }
    for s in samples {
        let w = s.weight;
        let phi = match kind {
            GradientKind::Var => phi_var(w),
            GradientKind::L2 => phi_l2(s.log_density.exp(), w, g_hat)?,
            GradientKind::Kl1 => phi_kl1(w, g_hat)?,
            GradientKind::Kl2 | GradientKind::Kls if w <= 0.0 => {
                check_estimate(g_hat)?;
                skipped += 1;
                continue;
            }
            GradientKind::Kl2 => phi_kl2(w, g_hat)?,
            GradientKind::Kls => phi_kls(w, g_hat)?,
            other => {
                return Err(Error::Precondition(format!("{other} is not a global rule")));
            }
        };
        if phi == 0.0 {
            continue;
        }
        for slot in 0..problem.num_free() {
            let j = problem.parent_config(slot, &s.state);
            let k = problem.free_value(slot, &s.state);
            let t = theta.table(slot).get(j, k);
            *gradient.table_mut(slot).get_mut(j, k) -= phi / t;
        }
    }
    let n = samples.len() as f64;
    for t in &mut gradient.tables {
        t.values_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok(GradientEstimate { gradient, skipped })
}

/// `Θ̂` with, per row, whether it fell back to the current `Θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalParams {
    pub params: SamplerParams,
    pub fallback: Vec<Vec<bool>>,
}

/// Weighted frequency estimate of the optimal sampler's local conditionals.
/// Smoothing adds `θ_ijk` to each numerator and 1 to each denominator (a
/// Dirichlet prior at the current parameters).
pub fn empirical_distribution(
    problem: &EstimationProblem,
    theta: &SamplerParams,
    samples: &[WeightedSample],
    smoothed: bool,
) -> Result<EmpiricalParams> {
    if samples.is_empty() {
        return Err(Error::Precondition("empirical distribution needs samples".into()));
    }
    let mut numer = SamplerParams::zeros(problem);
    let mut denom: Vec<Vec<f64>> = theta.tables().iter().map(|t| vec![0.0; t.num_rows()]).collect();
    for s in samples {
        for slot in 0..problem.num_free() {
            let j = problem.parent_config(slot, &s.state);
            *numer.table_mut(slot).get_mut(j, problem.free_value(slot, &s.state)) += s.weight;
            denom[slot][j] += s.weight;
        }
    }
    let mut fallback = Vec::with_capacity(denom.len());
    for (slot, rows) in denom.iter().enumerate() {
        let mut flags = Vec::with_capacity(rows.len());
        let table = numer.table_mut(slot);
        for (j, &d) in rows.iter().enumerate() {
            let current = theta.table(slot).row(j);
            let row = table.row_mut(j);
            flags.push(d == 0.0);
            if smoothed {
                for (v, &c) in row.iter_mut().zip(current) {
                    *v = (*v + c) / (d + 1.0);
                }
            } else if d != 0.0 {
                row.iter_mut().for_each(|v| *v /= d);
            } else {
                row.copy_from_slice(current);
            }
        }
        fallback.push(flags);
    }
    Ok(EmpiricalParams {
        params: numer,
        fallback,
    })
}

fn local_phi(kind: GradientKind, hat: f64, theta: f64) -> Result<f64> {
    let kl2 = || {
        if hat > 0.0 {
            Ok((hat / theta).ln() - 1.0)
        } else {
            Err(Error::Domain(
                "local kl2 needs a strictly positive empirical distribution; enable smoothing".into(),
            ))
        }
    };
    match kind {
        GradientKind::LocalL2 => Ok(hat - theta),
        GradientKind::LocalKl1 => Ok(hat / theta),
        GradientKind::LocalKl2 => kl2(),
        GradientKind::LocalKls => Ok(0.5 * (hat / theta + kl2()?)),
        other => Err(Error::Precondition(format!("{other} is not a local rule"))),
    }
}

/// `∂e'/∂θ_ijk = −φ'(θ̂_ijk, θ_ijk)`.
pub fn gradient_local(theta: &SamplerParams, theta_hat: &EmpiricalParams, kind: GradientKind) -> Result<Gradient> {
    if !theta.same_shape(&theta_hat.params) {
        return Err(Error::Precondition("empirical parameters have the wrong shape".into()));
    }
    let mut gradient = Gradient::zeros_like(theta);
    for (slot, table) in gradient.tables.iter_mut().enumerate() {
        let cur = theta.table(slot).values();
        let hat = theta_hat.params.table(slot).values();
        for ((g, &c), &h) in table.values_mut().iter_mut().zip(cur).zip(hat) {
            *g = -local_phi(kind, h, c)?;
        }
    }
    Ok(gradient)
}

/// Removes the row-constant component of every gradient row.
pub fn project(gradient: &Gradient, mode: ProjectionMode) -> Gradient {
    let mut out = gradient.clone();
    for table in &mut out.tables {
        let arity = table.arity() as f64;
        for row in table.rows_mut() {
            let shift = match mode {
                ProjectionMode::MeanCenter => row.iter().sum::<f64>() / arity,
                ProjectionMode::AbsMean => row.iter().map(|v| v.abs()).sum::<f64>() / arity,
            };
            row.iter_mut().for_each(|v| *v -= shift);
        }
    }
    out
}

/// Result of a parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub params: SamplerParams,
    /// Rows where the full step would have crossed the ε-boundary.
    pub boundary_hits: usize,
}

/// Moves one row along `−grad` by `alpha`, or by half the largest feasible
/// step when the full step would leave some entry below `eps`.
fn step_row(row: &mut [f64], grad: &[f64], alpha: f64, eps: f64) -> bool {
    let full_ok = row.iter().zip(grad).all(|(&t, &g)| t - alpha * g >= eps);
    let step = if full_ok {
        alpha
    } else {
        let max_feasible = row
            .iter()
            .zip(grad)
            .filter(|(_, &g)| g > 0.0)
            .map(|(&t, &g)| ((t - eps) / g).max(0.0))
            .fold(f64::INFINITY, f64::min);
        0.5 * max_feasible.min(alpha)
    };
    for (t, &g) in row.iter_mut().zip(grad) {
        *t -= step * g;
    }
    !full_ok
}

/// `θ ← θ − α ∇ᵖe`, per row, with the ε-boundary rule. The gradient must be
/// projected: each row's step has to sum to zero.
pub fn apply_update(theta: &SamplerParams, gradient: &Gradient, alpha: f64, gamma: f64) -> Result<Step> {
    update_rows(theta, gradient, alpha, gamma, true, None)
}

/// [`apply_update`] for a gradient projected with `mode`. The literal mode
/// does not produce zero-sum rows, so each moved row is renormalized and
/// pulled back inside the ε-boundary.
pub fn apply_update_with(
    theta: &SamplerParams,
    gradient: &Gradient,
    alpha: f64,
    gamma: f64,
    mode: ProjectionMode,
) -> Result<Step> {
    update_rows(theta, gradient, alpha, gamma, mode == ProjectionMode::MeanCenter, None)
}

fn update_rows(
    theta: &SamplerParams,
    gradient: &Gradient,
    alpha: f64,
    gamma: f64,
    require_projected: bool,
    names: Option<&EstimationProblem>,
) -> Result<Step> {
    if theta.tables().len() != gradient.tables.len() {
        return Err(Error::LengthMismatch {
            left: theta.tables().len(),
            right: gradient.tables.len(),
        });
    }
    let mut params = theta.clone();
    let mut boundary_hits = 0;
    for (slot, g) in gradient.tables.iter().enumerate() {
        let eps = epsilon(gamma, g.arity());
        let table = params.table_mut(slot);
        for j in 0..g.num_rows() {
            let grow = g.row(j);
            if require_projected {
                let sum: f64 = grow.iter().sum::<f64>() * alpha;
                let scale: f64 = grow.iter().map(|v| v.abs()).sum::<f64>() * alpha;
                if sum.abs() > 1e-9 * scale.max(1.0) {
                    return Err(Error::UnprojectedGradient {
                        variable: names.map_or_else(|| format!("#{slot}"), |p| p.free_name(slot).to_string()),
                        row: j,
                        sum,
                    });
                }
            }
            if grow.iter().all(|&v| v == 0.0) {
                continue;
            }
            let row = table.row_mut(j);
            if step_row(row, grow, alpha, eps) {
                boundary_hits += 1;
            }
            if !require_projected {
                normalize_and_repair(row, eps);
            }
        }
    }
    Ok(Step { params, boundary_hits })
}

/// Self-importance sampling: `θ ← (1 − α) θ̂ + α θ⁽⁰⁾`.
pub fn sis_update(
    theta_hat: &SamplerParams,
    theta0: &SamplerParams,
    alpha: f64,
) -> Result<SamplerParams> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("sis weight must lie in [0, 1], got {alpha}")));
    }
    if !theta_hat.same_shape(theta0) {
        return Err(Error::Precondition("sis tables have different shapes".into()));
    }
    let mut out = theta_hat.clone();
    for (slot, table) in (0..theta0.tables().len()).map(|s| (s, theta0.table(s))) {
        for (v, &v0) in out.table_mut(slot).values_mut().iter_mut().zip(table.values()) {
            *v = (1.0 - alpha) * *v + alpha * v0;
        }
    }
    Ok(out)
}

/// `α(t) = β/t`.
pub fn step_size(t: usize, beta: f64) -> Result<f64> {
    if t < 1 {
        return Err(Error::Precondition("update index starts at 1".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Precondition(format!("beta must be positive, got {beta}")));
    }
    Ok(beta / t as f64)
}

/// Runs `T` rounds of sample, estimate, update. Returns the combined
/// estimate with `W(t) = 1/T` and the per-round trace. The same draws serve
/// both the estimate and the update.
pub fn adapt_loop<R: Rng + ?Sized>(
    problem: &EstimationProblem,
    config: &AdaptConfig,
    rng: &mut R,
) -> Result<(Estimate, Trace)> {
    config.validate()?;
    let initial = init_params(problem, config.gamma)?;
    let mut theta = initial.clone();
    let mut batch_values = Vec::with_capacity(config.total_updates);
    let mut steps = Vec::with_capacity(config.total_updates);

    for t in 1..=config.total_updates {
        let alpha = step_size(t, config.beta)?;
        let (batch, samples) = batch_estimate(problem, &theta, config.batch_size, rng)?;
        batch_values.push(batch);
        let running = combined_estimate(&batch_values, &uniform_weights(t))?;

        let mut warnings = Vec::new();
        let mut boundary_hits = 0;
        let mut skipped = false;

        let gradient = match config.kind {
            GradientKind::Var => Some(gradient_estimate_global(problem, &theta, &samples, config.kind, running)?),
            kind if kind.needs_estimate() => {
                if running > 0.0 && running.is_finite() {
                    Some(gradient_estimate_global(problem, &theta, &samples, kind, running)?)
                } else {
                    warnings.push(format!("running estimate {running} is not positive; update skipped"));
                    skipped = true;
                    None
                }
            }
            _ => None,
        };

        let next = if let Some(est) = gradient {
            if est.skipped > 0 {
                warnings.push(format!("{} zero-weight samples skipped", est.skipped));
            }
            Some(descend(problem, &theta, &est.gradient, alpha, config)?)
        } else if config.kind.is_local() {
            let hat = empirical_distribution(problem, &theta, &samples, config.dirichlet_smoothing)?;
            let g = gradient_local(&theta, &hat, config.kind)?;
            Some(descend(problem, &theta, &g, alpha, config)?)
        } else if config.kind == GradientKind::Sis {
            let hat = empirical_distribution(problem, &theta, &samples, config.dirichlet_smoothing)?;
            let mut blended = sis_update(&hat.params, &initial, alpha)?;
            for slot in 0..blended.tables().len() {
                let table = blended.table_mut(slot);
                let eps = epsilon(config.gamma, table.arity());
                for row in table.rows_mut() {
                    if row.iter().any(|&v| v < eps) {
                        boundary_hits += 1;
                        repair_row(row, eps);
                    }
                }
            }
            Some(Step {
                params: blended,
                boundary_hits,
            })
        } else {
            None
        };

        if let Some(step) = next {
            boundary_hits = step.boundary_hits;
            theta = step.params;
        }

        steps.push(TraceStep {
            t,
            alpha,
            batch_size: config.batch_size,
            batch_estimate: batch,
            sample_variance: sample_variance(&samples),
            running_estimate: running,
            theta: theta.clone(),
            boundary_hits,
            skipped,
            warnings,
        });
    }

    let estimate = Estimate::uniform(batch_values, vec![config.batch_size; config.total_updates])?;
    Ok((estimate, Trace { initial, steps }))
}

fn descend(
    problem: &EstimationProblem,
    theta: &SamplerParams,
    gradient: &Gradient,
    alpha: f64,
    config: &AdaptConfig,
) -> Result<Step> {
    let projected = project(gradient, config.projection);
    let zero_sum = config.projection == ProjectionMode::MeanCenter;
    update_rows(theta, &projected, alpha, config.gamma, zero_sum, Some(problem))
}
