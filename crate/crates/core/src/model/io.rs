//! JSON model files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{validate, Cpt, Decision, InfluenceDiagram, Model, Network, Utility, Variable};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    variables: Vec<Variable>,
    cpts: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    utility: Option<Utility>,
}

/// Parses and validates a model file.
pub fn load(text: &str) -> Result<Model> {
    let mut file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;

    let mut cpts = Vec::with_capacity(file.variables.len());
    for v in &file.variables {
        let rows = file
            .cpts
            .remove(&v.name)
            .ok_or_else(|| Error::Parse(format!("cpts: missing table for variable `{}`", v.name)))?;
        cpts.push(Cpt::new(rows));
    }
    if let Some(extra) = file.cpts.keys().next() {
        return Err(Error::Parse(format!(
            "cpts: table given for undeclared variable `{extra}`"
        )));
    }
    let network = Network {
        variables: file.variables,
        cpts,
    };
    let model = match (file.decision, file.utility) {
        (None, None) => Model::Network(network),
        (Some(decision), Some(utility)) => Model::Influence(InfluenceDiagram {
            network,
            decision,
            utility,
        }),
        (Some(_), None) => return Err(Error::Parse("`decision` given without `utility`".into())),
        (None, Some(_)) => return Err(Error::Parse("`utility` given without `decision`".into())),
    };
    validate(&model).into_result()?;
    Ok(model)
}

pub fn render(model: &Model) -> String {
    let net = model.network();
    let file = ModelFile {
        variables: net.variables.clone(),
        cpts: net
            .variables
            .iter()
            .zip(&net.cpts)
            .map(|(v, c)| (v.name.clone(), c.rows.clone()))
            .collect(),
        decision: model.decision().cloned(),
        utility: model.utility().cloned(),
    };
    serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
}
