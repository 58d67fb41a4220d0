//! Importance-sampling distributions with the same structure as the model,
//! forward sampling with evidence clamping, and the batch / combined
//! estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimationProblem, State};

/// Random stream used throughout.
pub type Stream = ChaCha8Rng;

/// Stream for replication `r` of an experiment: seeded with `master ^ r`.
pub fn replication_stream(master: u64, replication: u64) -> Stream {
    Stream::seed_from_u64(master ^ replication)
}

pub fn stream(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// A conditional table `rows × arity`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTable {
    arity: usize,
    values: Vec<f64>,
}

impl ParamTable {
    pub fn zeros(rows: usize, arity: usize) -> Self {
        ParamTable {
            arity,
            values: vec![0.0; rows * arity],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let arity = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == arity), "ragged table");
        ParamTable {
            arity,
            values: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn num_rows(&self) -> usize {
        if self.arity == 0 {
            0
        } else {
            self.values.len() / self.arity
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.arity..(j + 1) * self.arity]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.arity..(j + 1) * self.arity]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.arity)
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.values.chunks_exact_mut(self.arity)
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.arity + k]
    }

    pub fn get_mut(&mut self, j: usize, k: usize) -> &mut f64 {
        &mut self.values[j * self.arity + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// `Θ`: one table per free variable, indexed by the variable's original
/// parent configuration (evidence and action parents included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    tables: Vec<ParamTable>,
}

impl SamplerParams {
    pub fn new(tables: Vec<ParamTable>) -> Self {
        SamplerParams { tables }
    }

    /// The original CPTs of the free variables, unmodified.
    pub fn prior(problem: &EstimationProblem) -> Self {
        let tables = (0..problem.num_free())
            .map(|slot| {
                let rows: Vec<Vec<f64>> = (0..problem.free_rows(slot))
                    .map(|j| problem.prior_row(slot, j).to_vec())
                    .collect();
                ParamTable::from_rows(&rows)
            })
            .collect();
        SamplerParams { tables }
    }

    /// Zero tables with the shape of `problem`'s free variables.
    pub fn zeros(problem: &EstimationProblem) -> Self {
        let tables = (0..problem.num_free())
            .map(|slot| ParamTable::zeros(problem.free_rows(slot), problem.free_arity(slot)))
            .collect();
        SamplerParams { tables }
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

    pub fn same_shape(&self, other: &SamplerParams) -> bool {
        self.tables.len() == other.tables.len()
            && self
                .tables
                .iter()
                .zip(&other.tables)
                .all(|(a, b)| a.arity == b.arity && a.values.len() == b.values.len())
    }

    pub fn matches(&self, problem: &EstimationProblem) -> bool {
        self.tables.len() == problem.num_free()
            && self.tables.iter().enumerate().all(|(slot, t)| {
                t.arity == problem.free_arity(slot) && t.num_rows() == problem.free_rows(slot)
            })
    }

    /// `ln f(z | Θ)`.
    pub fn log_density(&self, problem: &EstimationProblem, state: &[usize]) -> f64 {
        (0..self.tables.len())
            .map(|slot| self.theta_at(problem, slot, state).ln())
            .sum()
    }

    pub fn density(&self, problem: &EstimationProblem, state: &[usize]) -> f64 {
        self.log_density(problem, state).exp()
    }

    /// `θ_ijk` selected by `state` for free slot `i`.
    pub fn theta_at(&self, problem: &EstimationProblem, slot: usize, state: &[usize]) -> f64 {
        self.tables[slot].get(
            problem.parent_config(slot, state),
            problem.free_value(slot, state),
        )
    }

    /// Largest deviation of a row sum from 1 and the smallest entry.
    pub fn row_stats(&self) -> (f64, f64) {
        let mut worst_sum: f64 = 0.0;
        let mut min_entry = f64::INFINITY;
        for t in &self.tables {
            for row in t.rows() {
                worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
                min_entry = row.iter().copied().fold(min_entry, f64::min);
            }
        }
        (worst_sum, min_entry)
    }

    /// Row and entry violations of the simplex and of the ε-boundary.
    pub fn constraint_violations(&self, gamma: f64, tolerance: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (slot, t) in self.tables.iter().enumerate() {
            let eps = epsilon(gamma, t.arity);
            for (j, row) in t.rows().enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > tolerance {
                    out.push(format!("slot {slot} row {j} sums to {sum}"));
                }
                for (k, &v) in row.iter().enumerate() {
                    if v < eps {
                        out.push(format!("slot {slot} row {j} entry {k} = {v} < {eps}"));
                    }
                }
            }
        }
        out
    }
}

/// `ε(|Ω|) = γ / |Ω|`.
pub fn epsilon(gamma: f64, arity: usize) -> f64 {
    gamma / arity as f64
}

/// Raises entries below `eps` to `eps` and rescales the remaining entries so
/// the row sums to 1, repeating until no entry is below `eps`. Relative odds
/// among the entries left free are preserved.
pub fn repair_row(row: &mut [f64], eps: f64) {
    let n = row.len();
    let mut clamped = vec![false; n];
    loop {
        let mut changed = false;
        for (v, c) in row.iter_mut().zip(clamped.iter_mut()) {
            if !*c && *v < eps {
                *v = eps;
                *c = true;
                changed = true;
            }
        }
        if !changed {
            return;
        }
        let fixed = eps * clamped.iter().filter(|&&c| c).count() as f64;
        let free = clamped.iter().filter(|&&c| !c).count();
        if free == 0 {
            return;
        }
        let free_sum: f64 = row.iter().zip(&clamped).filter(|(_, &c)| !c).map(|(v, _)| v).sum();
        let target = 1.0 - fixed;
        for (v, &c) in row.iter_mut().zip(&clamped) {
            if !c {
                *v = if free_sum > 0.0 {
                    *v * target / free_sum
                } else {
                    target / free as f64
                };
            }
        }
    }
}

/// Rescales a nonnegative row to sum 1, then applies [`repair_row`].
pub fn normalize_and_repair(row: &mut [f64], eps: f64) {
    for v in row.iter_mut() {
        *v = v.max(0.0);
    }
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter_mut().for_each(|v| *v /= sum);
    } else {
        let uniform = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = uniform);
    }
    repair_row(row, eps);
}

/// Initial sampler: the prior CPTs with every row repaired onto the
/// ε-boundary `γ/|Ω|`.
pub fn init_params(problem: &EstimationProblem, gamma: f64) -> Result<SamplerParams> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Precondition(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let mut theta = SamplerParams::prior(problem);
    for t in &mut theta.tables {
        let eps = epsilon(gamma, t.arity);
        for row in t.rows_mut() {
            repair_row(row, eps);
        }
    }
    Ok(theta)
}

/// Inverse-CDF draw from a probability row; never returns a zero entry.
fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            return k;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Forward-samples the free variables in topological order; evidence and the
/// action keep their clamped values.
pub fn draw<R: Rng + ?Sized>(theta: &SamplerParams, problem: &EstimationProblem, rng: &mut R) -> State {
    let mut state = problem.template();
    for slot in 0..problem.num_free() {
        let j = problem.parent_config(slot, &state);
        let k = sample_row(theta.table(slot).row(j), rng);
        problem.set_free_value(slot, &mut state, k);
    }
    state
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub state: State,
    /// `ln ω(z | Θ)`; `-inf` when `g(z) = 0`.
    pub log_weight: f64,
    pub weight: f64,
    /// `ln f(z | Θ)`.
    pub log_density: f64,
}

/// `ω(z | Θ) = g(z) / f(z | Θ)`, accumulated in log space.
pub fn weight(problem: &EstimationProblem, theta: &SamplerParams, state: State) -> Result<WeightedSample> {
    let log_density = theta.log_density(problem, &state);
    if log_density == f64::NEG_INFINITY {
        return Err(Error::ZeroProposal);
    }
    let log_weight = problem.log_weight_with(&state, |slot| theta.theta_at(problem, slot, &state).ln());
    Ok(WeightedSample {
        state,
        log_weight,
        weight: log_weight.exp(),
        log_density,
    })
}

/// `Ĝ(θ) = (1/n) Σ ω(z_l | θ)` over `n` fresh draws. The samples are returned
/// so the same draws can drive adaptation.
pub fn batch_estimate<R: Rng + ?Sized>(
    problem: &EstimationProblem,
    theta: &SamplerParams,
    n: usize,
    rng: &mut R,
) -> Result<(f64, Vec<WeightedSample>)> {
    if n == 0 {
        return Err(Error::Precondition("batch size must be at least 1".into()));
    }
    let samples = (0..n)
        .map(|_| weight(problem, theta, draw(theta, problem, rng)))
        .collect::<Result<Vec<_>>>()?;
    let mean = samples.iter().map(|s| s.weight).sum::<f64>() / n as f64;
    Ok((mean, samples))
}

/// Unbiased sample variance of the weights (0 for a single sample).
pub fn sample_variance(samples: &[WeightedSample]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().map(|s| s.weight).sum::<f64>() / n as f64;
    samples.iter().map(|s| (s.weight - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// `Ĝ^(T) = Σ_t W(t) Ĝ(θ^(t))`.
pub fn combined_estimate(batches: &[f64], weights: &[f64]) -> Result<f64> {
    if batches.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: batches.len(),
            right: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::WeightSum(total));
    }
    Ok(batches.iter().zip(weights).map(|(b, w)| b * w).sum())
}

/// `W(t) = 1/T`.
pub fn uniform_weights(count: usize) -> Vec<f64> {
    vec![1.0 / count as f64; count]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub batch_values: Vec<f64>,
    pub batch_weights: Vec<f64>,
    pub sample_counts: Vec<usize>,
}

impl Estimate {
    /// Combines batches with uniform weights.
    pub fn uniform(batch_values: Vec<f64>, sample_counts: Vec<usize>) -> Result<Self> {
        let batch_weights = uniform_weights(batch_values.len());
        let value = combined_estimate(&batch_values, &batch_weights)?;
        Ok(Estimate {
            value,
            batch_values,
            batch_weights,
            sample_counts,
        })
    }
}

/// Likelihood weighting: `n` draws from the unmodified prior.
pub fn likelihood_weighting<R: Rng + ?Sized>(
    problem: &EstimationProblem,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    let prior = SamplerParams::prior(problem);
    batch_estimate(problem, &prior, n, rng).map(|(g, _)| g)
}
