//! Bundled example models.
//!
//! - `chain2`: `X1 → X2`, `P(X1=1) = 0.6`, `P(X2=1 | X1) = (0.2, 0.7)`.
//! - `gamble1`: `chain2` with a binary decision `A` feeding `X2` and a
//!   utility over `X2` of `(1, 3)`.
//! - `structured`: seven binary chance variables, a three-way decision
//!   observing `X4, X5`, and a utility over `(X7, A)`.

use crate::model::{load, InfluenceDiagram, Model, Network};

pub const CHAIN2_JSON: &str = include_str!("../fixtures/chain2.json");
pub const GAMBLE1_JSON: &str = include_str!("../fixtures/gamble1.json");
pub const STRUCTURED_JSON: &str = include_str!("../fixtures/structured.json");

pub fn chain2() -> Network {
    match load(CHAIN2_JSON).expect("bundled model") {
        Model::Network(net) => net,
        Model::Influence(_) => unreachable!(),
    }
}

pub fn gamble1() -> InfluenceDiagram {
    match load(GAMBLE1_JSON).expect("bundled model") {
        Model::Influence(id) => id,
        Model::Network(_) => unreachable!(),
    }
}

pub fn structured() -> InfluenceDiagram {
    match load(STRUCTURED_JSON).expect("bundled model") {
        Model::Influence(id) => id,
        Model::Network(_) => unreachable!(),
    }
}
