//! Brute-force reference computations that read CPTs straight from a
//! `Network` and never go through `EstimationProblem`. Networks used here
//! must declare variables parents-first.

#![allow(dead_code)]

use adaptis::model::{Cpt, Network, Variable};
use rand::Rng;

/// Per-variable proposal rows, indexed `[variable][parent config][value]`.
/// Evidence variables keep an empty table.
pub type Rows = Vec<Vec<Vec<f64>>>;

pub fn parent_config(net: &Network, var: usize, values: &[usize]) -> usize {
    let mut index = 0;
    for p in &net.variables[var].parents {
        let pi = net.variables.iter().position(|v| &v.name == p).unwrap();
        index = index * net.variables[pi].arity + values[pi];
    }
    index
}

/// Every full assignment consistent with `evidence`, first variable slowest.
pub fn assignments(net: &Network, evidence: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for (i, v) in net.variables.iter().enumerate() {
        let choices: Vec<usize> = match evidence.iter().find(|(e, _)| *e == i) {
            Some(&(_, val)) => vec![val],
            None => (0..v.arity).collect(),
        };
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&c| {
                    let mut next = prefix.clone();
                    next.push(c);
                    next
                })
            })
            .collect();
    }
    out
}

pub fn joint(net: &Network, values: &[usize]) -> f64 {
    (0..net.variables.len())
        .map(|i| net.cpts[i].rows[parent_config(net, i, values)][values[i]])
        .product()
}

/// Unnormalized proposal product over the free variables.
pub fn proposal(net: &Network, rows: &Rows, values: &[usize], evidence: &[(usize, usize)]) -> f64 {
    (0..net.variables.len())
        .filter(|i| !evidence.iter().any(|(e, _)| e == i))
        .map(|i| rows[i][parent_config(net, i, values)][values[i]])
        .product()
}

pub fn total(net: &Network, evidence: &[(usize, usize)]) -> f64 {
    assignments(net, evidence).iter().map(|z| joint(net, z)).sum()
}

/// `Σ_z g²/f`, which differs from the weight variance by the constant `G²`.
pub fn second_moment(net: &Network, rows: &Rows, evidence: &[(usize, usize)]) -> f64 {
    assignments(net, evidence)
        .iter()
        .map(|z| {
            let g = joint(net, z);
            g * g / proposal(net, rows, z, evidence)
        })
        .sum()
}

pub fn weight_variance(net: &Network, rows: &Rows, evidence: &[(usize, usize)]) -> f64 {
    let g = total(net, evidence);
    second_moment(net, rows, evidence) - g * g
}

/// Central differences of the second moment, each entry perturbed on its own
/// without renormalizing its row.
pub fn finite_difference(net: &Network, rows: &Rows, evidence: &[(usize, usize)], h: f64) -> Rows {
    let mut grad = rows.clone();
    for i in 0..rows.len() {
        for j in 0..rows[i].len() {
            for k in 0..rows[i][j].len() {
                let mut up = rows.clone();
                up[i][j][k] += h;
                let mut down = rows.clone();
                down[i][j][k] -= h;
                grad[i][j][k] =
                    (second_moment(net, &up, evidence) - second_moment(net, &down, evidence)) / (2.0 * h);
            }
        }
    }
    grad
}

pub fn random_row<R: Rng>(rng: &mut R, arity: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..arity).map(|_| rng.gen_range(0.0..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let spare = 1.0 - floor * arity as f64;
    raw.iter().map(|r| floor + spare * r / sum).collect()
}

/// Random rows for every non-evidence variable, each entry at least `floor`.
pub fn random_rows<R: Rng>(rng: &mut R, net: &Network, evidence: &[(usize, usize)], floor: f64) -> Rows {
    net.variables
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if evidence.iter().any(|(e, _)| *e == i) {
                return vec![];
            }
            (0..net.cpts[i].rows.len()).map(|_| random_row(rng, v.arity, floor)).collect()
        })
        .collect()
}

/// `A → B`, `(A, B) → C`, arities 2, 3, 2, random CPT rows.
pub fn random_three<R: Rng>(rng: &mut R) -> Network {
    let variables = vec![
        Variable::new("A", 2, &[]),
        Variable::new("B", 3, &["A"]),
        Variable::new("C", 2, &["A", "B"]),
    ];
    let shapes = [(1, 2), (2, 3), (6, 2)];
    let cpts = shapes
        .iter()
        .map(|&(n, arity)| Cpt {
            rows: (0..n).map(|_| random_row(rng, arity, 0.05)).collect(),
        })
        .collect();
    Network { variables, cpts }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
