//! Discrete Bayesian networks and single-decision influence diagrams.
//!
//! Parent configurations are indexed mixed-radix with the first-listed parent
//! as the most significant digit. Value indices are 0-based.

mod io;
mod problem;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load, render};
pub use problem::{EstimationProblem, State};

/// Rows of a CPT must sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variable {
    pub name: String,
    pub arity: usize,
    #[serde(default)]
    pub parents: Vec<String>,
}

impl Variable {
    pub fn new(name: impl Into<String>, arity: usize, parents: &[&str]) -> Self {
        Variable {
            name: name.into(),
            arity,
            parents: parents.iter().map(|p| p.to_string()).collect(),
        }
    }
}

/// Conditional probability table: one row per parent configuration, one
/// column per child value.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    pub rows: Vec<Vec<f64>>,
}

impl Cpt {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Cpt { rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub variables: Vec<Variable>,
    pub cpts: Vec<Cpt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decision {
    pub name: String,
    pub arity: usize,
    #[serde(default)]
    pub parents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utility {
    #[serde(default)]
    pub parents: Vec<String>,
    pub table: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceDiagram {
    pub network: Network,
    pub decision: Decision,
    pub utility: Utility,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Network(Network),
    Influence(InfluenceDiagram),
}

impl Model {
    pub fn network(&self) -> &Network {
        match self {
            Model::Network(net) => net,
            Model::Influence(id) => &id.network,
        }
    }

    pub fn decision(&self) -> Option<&Decision> {
        match self {
            Model::Network(_) => None,
            Model::Influence(id) => Some(&id.decision),
        }
    }

    pub fn utility(&self) -> Option<&Utility> {
        match self {
            Model::Network(_) => None,
            Model::Influence(id) => Some(&id.utility),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

impl From<Network> for Model {
    fn from(net: Network) -> Self {
        Model::Network(net)
    }
}

impl From<InfluenceDiagram> for Model {
    fn from(id: InfluenceDiagram) -> Self {
        Model::Influence(id)
    }
}

impl Network {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Topological order of the chance variables, ties broken by declaration
    /// order. Parents that are not chance variables (a decision) are ignored.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let names: Vec<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        let parents = self
            .variables
            .iter()
            .map(|v| v.parents.iter().filter_map(|p| self.index_of(p)).collect())
            .collect::<Vec<Vec<usize>>>();
        topological_sort(&parents).map_err(|node| Error::Cycle {
            variable: names[node].to_string(),
        })
    }
}

impl InfluenceDiagram {
    /// Topological order over chance variables and the decision. The decision
    /// has index `network.variables.len()`.
    pub fn node_order(&self) -> Result<Vec<usize>> {
        let net = &self.network;
        let n = net.variables.len();
        let lookup = |name: &str| {
            if name == self.decision.name {
                Some(n)
            } else {
                net.index_of(name)
            }
        };
        let mut parents: Vec<Vec<usize>> = net
            .variables
            .iter()
            .map(|v| v.parents.iter().filter_map(|p| lookup(p)).collect())
            .collect();
        parents.push(self.decision.parents.iter().filter_map(|p| lookup(p)).collect());
        topological_sort(&parents).map_err(|node| Error::Cycle {
            variable: if node == n {
                self.decision.name.clone()
            } else {
                net.variables[node].name.clone()
            },
        })
    }
}

/// Kahn's algorithm, always releasing the lowest-index ready node. On failure
/// returns a node that lies on a directed cycle.
fn topological_sort(parents: &[Vec<usize>]) -> std::result::Result<Vec<usize>, usize> {
    let n = parents.len();
    let mut pending: Vec<usize> = parents.iter().map(|p| p.len()).collect();
    let mut children = vec![Vec::new(); n];
    for (child, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(child);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..n).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(next) = ready.pop_first() {
        order.push(next);
        for &c in &children[next] {
            pending[c] -= 1;
            if pending[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Walk unresolved parents from any stuck node until a node repeats.
    let mut node = (0..n).find(|&i| pending[i] > 0).unwrap();
    let mut seen = HashSet::new();
    while seen.insert(node) {
        node = *parents[node].iter().find(|&&p| pending[p] > 0).unwrap();
    }
    Err(node)
}

/// Map from variable name to value index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(BTreeMap<String, usize>);

impl Assignment {
    pub fn new() -> Self {
        Assignment::default()
    }

    pub fn with(mut self, name: &str, value: usize) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: &str, value: usize) -> Option<usize> {
        self.0.insert(name.to_string(), value)
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.0.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl FromIterator<(String, usize)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (String, usize)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

/// Parses `X=1,Y=0`. Whitespace around items is ignored; the empty string is
/// the empty assignment.
impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = Assignment::new();
        for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Evidence(format!("expected NAME=VALUE, got `{item}`")))?;
            let value: usize = value.trim().parse().map_err(|_| {
                Error::Evidence(format!("value of `{}` is not an index: `{value}`", name.trim()))
            })?;
            if out.insert(name.trim(), value).is_some() {
                return Err(Error::Evidence(format!("`{}` assigned twice", name.trim())));
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&items.join(","))
    }
}

/// Mixed-radix index of a parent configuration, first parent most significant.
pub fn parent_config_index(
    assignment: &Assignment,
    parents: &[String],
    arities: &[usize],
) -> Result<usize> {
    if parents.len() != arities.len() {
        return Err(Error::LengthMismatch {
            left: parents.len(),
            right: arities.len(),
        });
    }
    let mut index = 0;
    for (parent, &arity) in parents.iter().zip(arities) {
        let value = assignment.get(parent).ok_or_else(|| Error::MissingParent {
            variable: parent.clone(),
        })?;
        if value >= arity {
            return Err(Error::ValueOutOfRange {
                variable: parent.clone(),
                value,
                arity,
            });
        }
        index = index * arity + value;
    }
    Ok(index)
}

/// Inverse of [`parent_config_index`]: the digits of `index` in the given radices.
pub fn decode_config(mut index: usize, arities: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; arities.len()];
    for (digit, &arity) in digits.iter_mut().zip(arities).rev() {
        *digit = index % arity;
        index /= arity;
    }
    digits
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateName(String),
    ZeroArity(String),
    DuplicateParent { variable: String, parent: String },
    SelfParent(String),
    UnknownParent { variable: String, parent: String },
    MissingCpt(String),
    RowCount { variable: String, expected: usize, found: usize },
    RowLength { variable: String, row: usize, expected: usize, found: usize },
    ProbabilityRange { variable: String, row: usize, column: usize, value: f64 },
    RowSum { variable: String, row: usize, sum: f64 },
    Cycle(String),
    UtilityLength { expected: usize, found: usize },
    UtilityPositivity { index: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            DuplicateName(n) => write!(f, "duplicate variable name `{n}`"),
            ZeroArity(n) => write!(f, "`{n}` has arity 0"),
            DuplicateParent { variable, parent } => {
                write!(f, "`{variable}` lists parent `{parent}` more than once")
            }
            SelfParent(n) => write!(f, "`{n}` lists itself as a parent"),
            UnknownParent { variable, parent } => {
                write!(f, "`{variable}` has undeclared parent `{parent}`")
            }
            MissingCpt(n) => write!(f, "no cpt for `{n}`"),
            RowCount { variable, expected, found } => {
                write!(f, "cpt of `{variable}` has {found} rows, expected {expected}")
            }
            RowLength { variable, row, expected, found } => write!(
                f,
                "cpt of `{variable}` row {row} has {found} entries, expected {expected}"
            ),
            ProbabilityRange { variable, row, column, value } => write!(
                f,
                "cpt of `{variable}` row {row} column {column}: {value} is not a probability"
            ),
            RowSum { variable, row, sum } => {
                write!(f, "cpt of `{variable}` row {row} sums to {sum}")
            }
            Cycle(n) => write!(f, "directed cycle through `{n}`"),
            UtilityLength { expected, found } => {
                write!(f, "utility table has {found} entries, expected {expected}")
            }
            UtilityPositivity { index, value } => {
                write!(f, "utility entry {index} is {value}; utilities must be > 0")
            }
        }
    }
}

/// Violations found by [`validate`]; empty iff the model is well formed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate(model: &Model) -> ValidationReport {
    let mut out = Vec::new();
    let net = model.network();
    let decision = model.decision();

    let mut arity: HashMap<&str, usize> = HashMap::new();
    for v in &net.variables {
        if arity.insert(&v.name, v.arity).is_some() {
            out.push(Violation::DuplicateName(v.name.clone()));
        }
        if v.arity == 0 {
            out.push(Violation::ZeroArity(v.name.clone()));
        }
    }
    if let Some(d) = decision {
        if arity.insert(&d.name, d.arity).is_some() {
            out.push(Violation::DuplicateName(d.name.clone()));
        }
        if d.arity == 0 {
            out.push(Violation::ZeroArity(d.name.clone()));
        }
    }

    let check_parents = |owner: &str, parents: &[String], allow_decision: bool, out: &mut Vec<Violation>| {
        let mut seen = HashSet::new();
        for p in parents {
            if p == owner {
                out.push(Violation::SelfParent(owner.to_string()));
            } else if !seen.insert(p.as_str()) {
                out.push(Violation::DuplicateParent {
                    variable: owner.to_string(),
                    parent: p.clone(),
                });
            }
            let is_decision = decision.is_some_and(|d| &d.name == p);
            if !arity.contains_key(p.as_str()) || (is_decision && !allow_decision) {
                out.push(Violation::UnknownParent {
                    variable: owner.to_string(),
                    parent: p.clone(),
                });
            }
        }
    };

    for v in &net.variables {
        check_parents(&v.name, &v.parents, true, &mut out);
    }
    if let Some(d) = decision {
        check_parents(&d.name, &d.parents, false, &mut out);
    }
    if let Some(u) = model.utility() {
        check_parents("utility", &u.parents, true, &mut out);
    }

    let configs = |parents: &[String]| -> Option<usize> {
        parents
            .iter()
            .map(|p| arity.get(p.as_str()).copied())
            .try_fold(1usize, |acc, a| a.and_then(|a| acc.checked_mul(a)))
    };

    for (i, v) in net.variables.iter().enumerate() {
        let Some(cpt) = net.cpts.get(i) else {
            out.push(Violation::MissingCpt(v.name.clone()));
            continue;
        };
        if let Some(expected) = configs(&v.parents) {
            if cpt.rows.len() != expected {
                out.push(Violation::RowCount {
                    variable: v.name.clone(),
                    expected,
                    found: cpt.rows.len(),
                });
            }
        }
        for (j, row) in cpt.rows.iter().enumerate() {
            if row.len() != v.arity {
                out.push(Violation::RowLength {
                    variable: v.name.clone(),
                    row: j,
                    expected: v.arity,
                    found: row.len(),
                });
            }
            for (k, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    out.push(Violation::ProbabilityRange {
                        variable: v.name.clone(),
                        row: j,
                        column: k,
                        value: p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || !sum.is_finite() {
                out.push(Violation::RowSum {
                    variable: v.name.clone(),
                    row: j,
                    sum,
                });
            }
        }
    }

    if let Some(u) = model.utility() {
        if let Some(expected) = configs(&u.parents) {
            if u.table.len() != expected {
                out.push(Violation::UtilityLength {
                    expected,
                    found: u.table.len(),
                });
            }
        }
        for (index, &value) in u.table.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                out.push(Violation::UtilityPositivity { index, value });
            }
        }
    }

    let cycle = match model {
        Model::Network(net) => net.topological_order().err(),
        Model::Influence(id) => id.node_order().err(),
    };
    if let Some(Error::Cycle { variable }) = cycle {
        out.push(Violation::Cycle(variable));
    }

    ValidationReport { violations: out }
}
