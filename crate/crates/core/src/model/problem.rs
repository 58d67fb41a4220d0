//! An estimation target `G = Σ_z g(z)` over the free chance variables.
//!
//! For a network, `g(z) = P(z, O = o)`. For an influence diagram with action
//! `a`, `g(z) = P(z, O = o | A = a) · U(z, o, a)`.

use super::{Assignment, Model};
use crate::error::{Error, Result};

/// Full instantiation: one value per chance variable (declaration order),
/// followed by the action when the model has a decision. Evidence and the
/// action are always at their clamped values.
pub type State = Vec<usize>;

#[derive(Debug, Clone)]
struct Node {
    name: String,
    arity: usize,
    parents: Vec<usize>,
    radix: Vec<usize>,
    /// Row-major `rows × arity`.
    cpt: Vec<f64>,
}

#[derive(Debug, Clone)]
struct UtilityFactor {
    parents: Vec<usize>,
    radix: Vec<usize>,
    table: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EstimationProblem {
    model: Model,
    evidence: Assignment,
    action: Option<usize>,
    nodes: Vec<Node>,
    /// Chance variables in topological order.
    order: Vec<usize>,
    /// Free chance variables in topological order; position is the free slot.
    free: Vec<usize>,
    template: State,
    utility: Option<UtilityFactor>,
}

fn mixed_radix(state: &[usize], parents: &[usize], radix: &[usize]) -> usize {
    parents
        .iter()
        .zip(radix)
        .fold(0, |acc, (&p, &r)| acc * r + state[p])
}

impl EstimationProblem {
    /// Builds the problem. For an influence diagram `action` is required and
    /// the evidence must assign every informational parent of the decision;
    /// further observations may be clamped as well.
    pub fn new(model: impl Into<Model>, evidence: Assignment, action: Option<usize>) -> Result<Self> {
        let model = model.into();
        model.validate().into_result()?;
        let net = model.network();
        let n = net.variables.len();
        let decision = model.decision();

        let lookup = |name: &str| -> usize {
            match decision {
                Some(d) if d.name == name => n,
                _ => net.index_of(name).expect("validated parent reference"),
            }
        };
        let arity_of = |idx: usize| -> usize {
            if idx == n {
                decision.unwrap().arity
            } else {
                net.variables[idx].arity
            }
        };

        let nodes: Vec<Node> = net
            .variables
            .iter()
            .zip(&net.cpts)
            .map(|(v, cpt)| {
                let parents: Vec<usize> = v.parents.iter().map(|p| lookup(p)).collect();
                Node {
                    name: v.name.clone(),
                    arity: v.arity,
                    radix: parents.iter().map(|&p| arity_of(p)).collect(),
                    parents,
                    cpt: cpt.rows.iter().flatten().copied().collect(),
                }
            })
            .collect();

        let mut template = vec![0; n + usize::from(decision.is_some())];
        for (name, value) in evidence.iter() {
            if decision.is_some_and(|d| d.name == name) {
                return Err(Error::Evidence(format!(
                    "`{name}` is the decision; pass the action separately"
                )));
            }
            let idx = net
                .index_of(name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
            if value >= nodes[idx].arity {
                return Err(Error::ValueOutOfRange {
                    variable: name.to_string(),
                    value,
                    arity: nodes[idx].arity,
                });
            }
            template[idx] = value;
        }

        let utility = match (decision, action) {
            (None, None) => None,
            (None, Some(_)) => {
                return Err(Error::Action("the model has no decision node".into()));
            }
            (Some(d), None) => {
                return Err(Error::Action(format!("decision `{}` needs an action", d.name)));
            }
            (Some(d), Some(a)) => {
                if a >= d.arity {
                    return Err(Error::Action(format!(
                        "action {a} out of range for `{}` (arity {})",
                        d.name, d.arity
                    )));
                }
                if let Some(p) = d.parents.iter().find(|p| !evidence.contains(p)) {
                    return Err(Error::Evidence(format!(
                        "informational parent `{p}` of `{}` must be observed",
                        d.name
                    )));
                }
                template[n] = a;
                let u = model.utility().unwrap();
                let parents: Vec<usize> = u.parents.iter().map(|p| lookup(p)).collect();
                Some(UtilityFactor {
                    radix: parents.iter().map(|&p| arity_of(p)).collect(),
                    parents,
                    table: u.table.clone(),
                })
            }
        };

        let order = net.topological_order()?;
        let free = order
            .iter()
            .copied()
            .filter(|&i| !evidence.contains(&nodes[i].name))
            .collect();

        Ok(EstimationProblem {
            model,
            evidence,
            action,
            nodes,
            order,
            free,
            template,
            utility,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn evidence(&self) -> &Assignment {
        &self.evidence
    }

    pub fn action(&self) -> Option<usize> {
        self.action
    }

    /// Number of free variables `Z`.
    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_name(&self, slot: usize) -> &str {
        &self.nodes[self.free[slot]].name
    }

    pub fn free_arity(&self, slot: usize) -> usize {
        self.nodes[self.free[slot]].arity
    }

    /// Number of parent configurations of a free variable.
    pub fn free_rows(&self, slot: usize) -> usize {
        self.nodes[self.free[slot]].radix.iter().product()
    }

    /// Original CPT row of a free variable.
    pub fn prior_row(&self, slot: usize, row: usize) -> &[f64] {
        let node = &self.nodes[self.free[slot]];
        &node.cpt[row * node.arity..(row + 1) * node.arity]
    }

    /// Value of a free variable in `state`.
    pub fn free_value(&self, slot: usize, state: &[usize]) -> usize {
        state[self.free[slot]]
    }

    pub fn set_free_value(&self, slot: usize, state: &mut [usize], value: usize) {
        state[self.free[slot]] = value;
    }

    /// Parent-configuration index of a free variable in `state`.
    pub fn parent_config(&self, slot: usize, state: &[usize]) -> usize {
        let node = &self.nodes[self.free[slot]];
        mixed_radix(state, &node.parents, &node.radix)
    }

    /// Instantiation with evidence and action clamped and free values at 0.
    pub fn template(&self) -> State {
        self.template.clone()
    }

    /// `ln g(state)`; `-inf` when some factor is zero. Factors are visited in
    /// topological order, utility last.
    pub fn log_target(&self, state: &[usize]) -> f64 {
        let mut acc = 0.0;
        for &i in &self.order {
            acc += self.factor(i, state).ln();
        }
        if let Some(u) = &self.utility {
            acc += u.table[mixed_radix(state, &u.parents, &u.radix)].ln();
        }
        acc
    }

    /// `g(z)` as a direct product of factors.
    pub fn target(&self, state: &[usize]) -> f64 {
        let mut acc = 1.0;
        for &i in &self.order {
            acc *= self.factor(i, state);
        }
        if let Some(u) = &self.utility {
            acc *= u.table[mixed_radix(state, &u.parents, &u.radix)];
        }
        acc
    }

    /// `P(X_i = x_i | pa)` for chance variable `node` in `state`.
    fn factor(&self, node: usize, state: &[usize]) -> f64 {
        let n = &self.nodes[node];
        n.cpt[mixed_radix(state, &n.parents, &n.radix) * n.arity + state[node]]
    }

    /// Log-weight of `state` given the per-slot log proposal factors
    /// `ln θ_i[pa_i][z_i]`, accumulated factor by factor.
    pub(crate) fn log_weight_with(&self, state: &[usize], log_theta: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        let mut slot = 0;
        for &i in &self.order {
            let p = self.factor(i, state).ln();
            if self.free.get(slot) == Some(&i) {
                acc += p - log_theta(slot);
                slot += 1;
            } else {
                acc += p;
            }
        }
        if let Some(u) = &self.utility {
            acc += u.table[mixed_radix(state, &u.parents, &u.radix)].ln();
        }
        acc
    }

    /// `|Ω_Z|`, saturating at `u128::MAX`.
    pub fn state_space_size(&self) -> u128 {
        (0..self.num_free())
            .map(|s| self.free_arity(s) as u128)
            .fold(1u128, |acc, a| acc.saturating_mul(a))
    }

    /// Every configuration of the free variables, first free variable (in
    /// topological order) most significant.
    pub fn states(&self) -> States<'_> {
        States {
            problem: self,
            next: Some(self.template.clone()),
        }
    }

    /// The free part of `state` as a name map.
    pub fn free_assignment(&self, state: &[usize]) -> Assignment {
        (0..self.num_free())
            .map(|s| (self.free_name(s).to_string(), self.free_value(s, state)))
            .collect()
    }
}

pub struct States<'a> {
    problem: &'a EstimationProblem,
    next: Option<State>,
}

impl Iterator for States<'_> {
    type Item = State;

    fn next(&mut self) -> Option<State> {
        let current = self.next.take()?;
        let p = self.problem;
        let mut succ = current.clone();
        for slot in (0..p.num_free()).rev() {
            let v = p.free_value(slot, &succ) + 1;
            if v < p.free_arity(slot) {
                p.set_free_value(slot, &mut succ, v);
                self.next = Some(succ);
                return Some(current);
            }
            p.set_free_value(slot, &mut succ, 0);
        }
        Some(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn chain2_with_evidence() {
        let p = EstimationProblem::new(fixtures::chain2(), Assignment::new().with("X2", 1), None).unwrap();
        assert_eq!(p.num_free(), 1);
        assert_eq!(p.free_name(0), "X1");
        let states: Vec<State> = p.states().collect();
        assert_eq!(states, vec![vec![0, 1], vec![1, 1]]);
        assert!((p.target(&states[0]) - 0.08).abs() < 1e-15);
        assert!((p.target(&states[1]) - 0.42).abs() < 1e-15);
    }

    #[test]
    fn gamble1_clamps_action() {
        let p = EstimationProblem::new(fixtures::gamble1(), Assignment::new(), Some(1)).unwrap();
        assert_eq!(p.num_free(), 2);
        assert_eq!(p.state_space_size(), 4);
        for s in p.states() {
            assert_eq!(s[2], 1);
        }
        // X2 rows are indexed by (X1, A); with A = 1 and X1 = 1 the row is 3
        assert_eq!(p.parent_config(1, &[1, 0, 1]), 3);
        // g(X1=1, X2=1) = 0.6 * 0.9 * 3
        assert!((p.target(&[1, 1, 1]) - 1.62).abs() < 1e-12);
    }

    #[test]
    fn problem_errors() {
        let chain = fixtures::chain2();
        assert!(matches!(
            EstimationProblem::new(chain.clone(), Assignment::new().with("Q", 0), None),
            Err(Error::UnknownVariable(_))
        ));
        assert!(matches!(
            EstimationProblem::new(chain.clone(), Assignment::new().with("X2", 2), None),
            Err(Error::ValueOutOfRange { .. })
        ));
        assert!(matches!(
            EstimationProblem::new(chain, Assignment::new(), Some(0)),
            Err(Error::Action(_))
        ));
        let id = fixtures::gamble1();
        assert!(matches!(
            EstimationProblem::new(id.clone(), Assignment::new(), None),
            Err(Error::Action(_))
        ));
        assert!(matches!(
            EstimationProblem::new(id.clone(), Assignment::new(), Some(2)),
            Err(Error::Action(_))
        ));
        assert!(matches!(
            EstimationProblem::new(id, Assignment::new().with("A", 0), Some(0)),
            Err(Error::Evidence(_))
        ));
        let s = fixtures::structured();
        assert!(matches!(
            EstimationProblem::new(s, Assignment::new().with("X4", 1), Some(0)),
            Err(Error::Evidence(_))
        ));
    }

    #[test]
    fn evidence_and_free_partition_the_chance_variables() {
        let p = EstimationProblem::new(
            fixtures::structured(),
            Assignment::new().with("X4", 1).with("X5", 0),
            Some(2),
        )
        .unwrap();
        let mut names: Vec<String> = (0..p.num_free()).map(|s| p.free_name(s).to_string()).collect();
        names.extend(p.evidence().iter().map(|(k, _)| k.to_string()));
        names.sort();
        assert_eq!(names, ["X1", "X2", "X3", "X4", "X5", "X6", "X7"]);
        assert_eq!(p.states().count() as u128, p.state_space_size());
        let a = p.free_assignment(&p.template());
        assert!(!a.contains("X4") && !a.contains("X5"));
    }
}
