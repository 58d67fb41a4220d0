//! Exhaustive enumeration over `Ω_Z`. Ground truth for small models only.
//!
//! All sums run over [`EstimationProblem::states`] in order, so results are
//! deterministic.

use crate::adapt::Gradient;
use crate::error::{Error, Result};
use crate::model::{EstimationProblem, State};
use crate::sampling::{ParamTable, SamplerParams};

/// Default limit on `|Ω_Z|`.
pub const DEFAULT_STATE_CAP: u128 = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct JointEntry {
    pub state: State,
    /// `g(z)`.
    pub target: f64,
    /// `f(z | Θ)`.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub entries: Vec<JointEntry>,
}

impl JointTable {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.target).sum()
    }
}

fn check_cap(problem: &EstimationProblem, cap: u128) -> Result<()> {
    let states = problem.state_space_size();
    if states > cap {
        return Err(Error::StateSpaceTooLarge { states, cap });
    }
    Ok(())
}

fn check_shape(problem: &EstimationProblem, theta: &SamplerParams) -> Result<()> {
    if !theta.matches(problem) {
        return Err(Error::Precondition("sampler parameters do not match the problem".into()));
    }
    Ok(())
}

pub fn enumerate(problem: &EstimationProblem, theta: &SamplerParams) -> Result<JointTable> {
    enumerate_with_cap(problem, theta, DEFAULT_STATE_CAP)
}

pub fn enumerate_with_cap(
    problem: &EstimationProblem,
    theta: &SamplerParams,
    cap: u128,
) -> Result<JointTable> {
    check_cap(problem, cap)?;
    check_shape(problem, theta)?;
    let entries = problem
        .states()
        .map(|state| JointEntry {
            target: problem.target(&state),
            density: theta.density(problem, &state),
            state,
        })
        .collect();
    Ok(JointTable { entries })
}

/// `G = Σ_z g(z)`: `P(O = o)` for a network, `V_o(a)` for an influence diagram.
pub fn true_value(problem: &EstimationProblem) -> Result<f64> {
    check_cap(problem, DEFAULT_STATE_CAP)?;
    Ok(problem.states().map(|s| problem.target(&s)).sum())
}

/// `f*(z) = g(z) / G`, in enumeration order.
pub fn optimal_distribution(problem: &EstimationProblem) -> Result<Vec<(State, f64)>> {
    check_cap(problem, DEFAULT_STATE_CAP)?;
    let targets: Vec<(State, f64)> = problem
        .states()
        .map(|s| {
            let g = problem.target(&s);
            (s, g)
        })
        .collect();
    let total: f64 = targets.iter().map(|(_, g)| g).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroTotal);
    }
    Ok(targets.into_iter().map(|(s, g)| (s, g / total)).collect())
}

/// Conditionals of `f*` for each free variable given its parents. Exactly
/// `f*` whenever `f*` factorizes over the model structure. Rows with no mass
/// under `f*` keep the prior row.
pub fn induced_params(problem: &EstimationProblem) -> Result<SamplerParams> {
    let optimal = optimal_distribution(problem)?;
    let mut theta = SamplerParams::zeros(problem);
    for (state, p) in &optimal {
        for slot in 0..problem.num_free() {
            let j = problem.parent_config(slot, state);
            *theta.table_mut(slot).get_mut(j, problem.free_value(slot, state)) += p;
        }
    }
    for slot in 0..problem.num_free() {
        let table = theta.table_mut(slot);
        for j in 0..table.num_rows() {
            let row = table.row_mut(j);
            let mass: f64 = row.iter().sum();
            if mass > 0.0 {
                row.iter_mut().for_each(|v| *v /= mass);
            } else {
                row.copy_from_slice(problem.prior_row(slot, j));
            }
        }
    }
    Ok(theta)
}

/// Weights `ω(z | Θ)` on the support of `g`, with their densities. Errors if
/// `g > 0` somewhere `f = 0`.
fn weights_on_support(problem: &EstimationProblem, theta: &SamplerParams) -> Result<Vec<(State, f64, f64)>> {
    check_cap(problem, DEFAULT_STATE_CAP)?;
    check_shape(problem, theta)?;
    let mut out = Vec::new();
    for state in problem.states() {
        let g = problem.target(&state);
        if g == 0.0 {
            continue;
        }
        let f = theta.density(problem, &state);
        if f == 0.0 {
            return Err(Error::InfiniteVariance);
        }
        out.push((state, f, g / f));
    }
    Ok(out)
}

/// `Var[ω(Z | Θ)]` under `Z ~ f(·|Θ)`, summed in the centered form
/// `Σ_z f(z) (ω(z) − G)²`, which is nonnegative by construction.
pub fn weight_variance(problem: &EstimationProblem, theta: &SamplerParams) -> Result<f64> {
    let support = weights_on_support(problem, theta)?;
    let g_total = true_value(problem)?;
    let on_support: f64 = support.iter().map(|(_, f, w)| f * (w - g_total).powi(2)).sum();
    // states with g = 0 have ω = 0 and contribute f·G²
    let off_mass: f64 = problem
        .states()
        .filter(|s| problem.target(s) == 0.0)
        .map(|s| theta.density(problem, &s))
        .sum();
    Ok(on_support + off_mass * g_total * g_total)
}

/// `∂e_var/∂θ_ijk = Σ_z f(z|Θ) · (−I(z_i = k, pa_i = j) / θ_ijk) · ω(z|Θ)²`,
/// treating every `θ_ijk` as a free coordinate (no projection).
pub fn exact_gradient_var(problem: &EstimationProblem, theta: &SamplerParams) -> Result<Gradient> {
    let support = weights_on_support(problem, theta)?;
    let mut grad = Gradient::zeros_like(theta);
    for (state, f, w) in &support {
        for slot in 0..problem.num_free() {
            let j = problem.parent_config(slot, state);
            let k = problem.free_value(slot, state);
            let t = theta.table(slot).get(j, k);
            *grad.table_mut(slot).get_mut(j, k) -= f * w * w / t;
        }
    }
    Ok(grad)
}

/// Parameters whose single table is `rows`, for tests and examples.
pub fn single_table(rows: &[Vec<f64>]) -> SamplerParams {
    SamplerParams::new(vec![ParamTable::from_rows(rows)])
}
