//! Game-instance data and the JSON interchange format shared by every solver.
//!
//! A spec file is a single JSON document. Three variants are recognized:
//!
//! * one-sided: keys `states, actions1, actions2, payoff, rate, discount,
//!   initial_belief`; `payoff[s][a][b]` is the payoff to player 1; `rate`
//!   is `{"kind": "exogenous", "matrix": R[s][s']}` or
//!   `{"kind": "endogenous", "tensor": R[s][s'][a][b]}`.
//! * two-sided: keys `states1, states2, actions1, actions2, payoff, rate1,
//!   rate2, discount, initial_belief1, initial_belief2`; `payoff[s1][s2][a][b]`,
//!   `rate1[s][s'][a]`, `rate2[s][s'][b]`.
//! * abstract-u: keys `states, rate, discount, initial_belief,
//!   u: {grid_resolution, values}`; the one-shot value function is given as
//!   a table on the belief grid instead of through a payoff matrix.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::{Error, Result};

/// Beliefs whose L1 deviation from 1 is at most this are renormalized on
/// load; larger deviations are rejected.
pub const BELIEF_RENORM_TOL: f64 = 1e-9;
/// Post-normalization invariant for belief sums and rate row sums.
pub const EXACT_TOL: f64 = 1e-12;

/// A probability distribution over the state set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Builds a belief, renormalizing round-off up to [`BELIEF_RENORM_TOL`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let mut b = Belief(probs);
        match b.normalize() {
            Ok(()) => Ok(b),
            Err(v) => Err(Error::Validation(vec![v])),
        }
    }

    /// Uniform distribution on `dim` states.
    pub fn uniform(dim: usize) -> Self {
        Belief(vec![1.0 / dim as f64; dim])
    }

    /// Point mass on state `s`.
    pub fn vertex(dim: usize, s: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[s] = 1.0;
        Belief(v)
    }

    /// Renormalizes in place; reports a violation if entries are negative
    /// beyond round-off or the sum is off by more than [`BELIEF_RENORM_TOL`].
    fn normalize(&mut self) -> std::result::Result<(), Violation> {
        for (i, &x) in self.0.iter().enumerate() {
            if x < -EXACT_TOL || !x.is_finite() {
                return Err(Violation::new(
                    format!("belief[{i}]"),
                    format!("entry {x} is negative or non-finite"),
                ));
            }
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > BELIEF_RENORM_TOL {
            return Err(Violation::new(
                "belief".to_string(),
                format!("sums to {sum}"),
            ));
        }
        for x in &mut self.0 {
            *x = x.max(0.0) / sum;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Clamps tiny negative round-off and renormalizes; used for beliefs
    /// produced by numerical maps (matrix exponentials, Bayes updates).
    pub fn from_unnormalized(mut probs: Vec<f64>) -> Self {
        let mut sum = 0.0;
        for x in &mut probs {
            if *x < 0.0 {
                *x = 0.0;
            }
            sum += *x;
        }
        if sum <= 0.0 {
            let n = probs.len();
            return Belief::uniform(n);
        }
        for x in &mut probs {
            *x /= sum;
        }
        Belief(probs)
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A named invariant violation, reported with the field path it concerns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: String, rule: String) -> Self {
        Violation { field, rule }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Transition-rate data: a single generator, or one generator per action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateData {
    Exogenous {
        /// `matrix[s][s']`
        matrix: Vec<Vec<f64>>,
    },
    Endogenous {
        /// `tensor[s][s'][a][b]`
        tensor: Vec<Vec<Vec<Vec<f64>>>>,
    },
}

impl RateData {
    pub fn is_exogenous(&self) -> bool {
        matches!(self, RateData::Exogenous { .. })
    }

    /// Generator matrix (rows `s`, columns `s'`) for a fixed action pair.
    /// For exogenous data the actions are ignored.
    pub fn generator(&self, a: usize, b: usize) -> Vec<Vec<f64>> {
        match self {
            RateData::Exogenous { matrix } => matrix.clone(),
            RateData::Endogenous { tensor } => tensor
                .iter()
                .map(|row| row.iter().map(|e| e[a][b]).collect())
                .collect(),
        }
    }

    fn n_states(&self) -> usize {
        match self {
            RateData::Exogenous { matrix } => matrix.len(),
            RateData::Endogenous { tensor } => tensor.len(),
        }
    }
}

/// A complete one-sided game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub states: Vec<String>,
    pub actions1: Vec<String>,
    pub actions2: Vec<String>,
    /// `payoff[s][a][b]`, payoff to player 1 (the informed maximizer).
    pub payoff: Vec<Vec<Vec<f64>>>,
    pub rate: RateData,
    /// Discount rate per unit time, `r > 0`.
    pub discount: f64,
    pub initial_belief: Belief,
}

impl GameSpec {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }
    pub fn n_actions1(&self) -> usize {
        self.actions1.len()
    }
    pub fn n_actions2(&self) -> usize {
        self.actions2.len()
    }

    pub fn payoff_at(&self, s: usize, a: usize, b: usize) -> f64 {
        self.payoff[s][a][b]
    }

    pub fn max_abs_payoff(&self) -> f64 {
        self.payoff
            .iter()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, &g| m.max(g.abs()))
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let ns = self.n_states();
        let na = self.n_actions1();
        let nb = self.n_actions2();
        if ns == 0 {
            out.push(Violation::new("states".into(), "must be nonempty".into()));
        }
        if na == 0 || nb == 0 {
            out.push(Violation::new(
                "actions".into(),
                "action sets must be nonempty".into(),
            ));
        }
        check_duplicates("states", &self.states, &mut out);
        check_duplicates("actions1", &self.actions1, &mut out);
        check_duplicates("actions2", &self.actions2, &mut out);
        check_payoff_shape("payoff", &self.payoff, ns, na, nb, &mut out);
        validate_rate(&self.rate, ns, na, nb, &mut out);
        if !(self.discount > 0.0) || !self.discount.is_finite() {
            out.push(Violation::new(
                "discount".into(),
                format!("must be strictly positive, got {}", self.discount),
            ));
        }
        validate_belief("initial_belief", &self.initial_belief, ns, &mut out);
        out
    }
}

/// A two-sided game instance: each player observes and controls one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpecTwoSided {
    pub states1: Vec<String>,
    pub states2: Vec<String>,
    pub actions1: Vec<String>,
    pub actions2: Vec<String>,
    /// `payoff[s1][s2][a][b]`.
    pub payoff: Vec<Vec<Vec<Vec<f64>>>>,
    /// `rate1[s][s'][a]`.
    pub rate1: Vec<Vec<Vec<f64>>>,
    /// `rate2[s][s'][b]`.
    pub rate2: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
    pub initial_belief1: Belief,
    pub initial_belief2: Belief,
}

impl GameSpecTwoSided {
    pub fn n_states1(&self) -> usize {
        self.states1.len()
    }
    pub fn n_states2(&self) -> usize {
        self.states2.len()
    }
    pub fn n_actions1(&self) -> usize {
        self.actions1.len()
    }
    pub fn n_actions2(&self) -> usize {
        self.actions2.len()
    }

    /// Generator of chain 1 under action `a` (rows `s`, columns `s'`).
    pub fn generator1(&self, a: usize) -> Vec<Vec<f64>> {
        self.rate1
            .iter()
            .map(|row| row.iter().map(|e| e[a]).collect())
            .collect()
    }

    /// Generator of chain 2 under action `b`.
    pub fn generator2(&self, b: usize) -> Vec<Vec<f64>> {
        self.rate2
            .iter()
            .map(|row| row.iter().map(|e| e[b]).collect())
            .collect()
    }

    pub fn max_abs_payoff(&self) -> f64 {
        self.payoff
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, &g| m.max(g.abs()))
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n1 = self.n_states1();
        let n2 = self.n_states2();
        let na = self.n_actions1();
        let nb = self.n_actions2();
        if n1 == 0 || n2 == 0 {
            out.push(Violation::new(
                "states".into(),
                "state sets must be nonempty".into(),
            ));
        }
        check_duplicates("states1", &self.states1, &mut out);
        check_duplicates("states2", &self.states2, &mut out);
        if self.payoff.len() != n1
            || self.payoff.iter().any(|t| {
                t.len() != n2
                    || t.iter()
                        .any(|m| m.len() != na || m.iter().any(|r| r.len() != nb))
            })
        {
            out.push(Violation::new(
                "payoff".into(),
                format!("tensor dimensions must be {n1}x{n2}x{na}x{nb}"),
            ));
        }
        for a in 0..na {
            validate_generator(
                &format!("rate1[..][..][{a}]"),
                &self.generator1(a),
                n1,
                &mut out,
            );
        }
        for b in 0..nb {
            validate_generator(
                &format!("rate2[..][..][{b}]"),
                &self.generator2(b),
                n2,
                &mut out,
            );
        }
        if !(self.discount > 0.0) || !self.discount.is_finite() {
            out.push(Violation::new(
                "discount".into(),
                format!("must be strictly positive, got {}", self.discount),
            ));
        }
        validate_belief("initial_belief1", &self.initial_belief1, n1, &mut out);
        validate_belief("initial_belief2", &self.initial_belief2, n2, &mut out);
        out
    }
}

/// The one-shot value function given as a table instead of a payoff matrix.
///
/// This enables instances whose `u` is specified by shape properties only;
/// the chain data is still required because every solver needs the
/// generator and the discount rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractUTable {
    pub grid_resolution: usize,
    /// Sampled `u` on the belief grid of resolution `grid_resolution`,
    /// in the grid's canonical point order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractUSpec {
    pub states: Vec<String>,
    pub rate: RateData,
    pub discount: f64,
    pub initial_belief: Belief,
    pub u: AbstractUTable,
}

impl AbstractUSpec {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let ns = self.n_states();
        check_duplicates("states", &self.states, &mut out);
        validate_rate(&self.rate, ns, 1, 1, &mut out);
        if !(self.discount > 0.0) || !self.discount.is_finite() {
            out.push(Violation::new(
                "discount".into(),
                format!("must be strictly positive, got {}", self.discount),
            ));
        }
        validate_belief("initial_belief", &self.initial_belief, ns, &mut out);
        let expected = crate::envelope::grid_point_count(ns, self.u.grid_resolution);
        match expected {
            Some(n) if n == self.u.values.len() => {}
            Some(n) => out.push(Violation::new(
                "u.values".into(),
                format!("expected {n} grid values, got {}", self.u.values.len()),
            )),
            None => out.push(Violation::new(
                "u.grid_resolution".into(),
                format!("unsupported state dimension {ns} for grid tables"),
            )),
        }
        if self.u.values.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new(
                "u.values".into(),
                "all values must be finite".into(),
            ));
        }
        out
    }
}

/// Any of the three recognized spec documents.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecDocument {
    OneSided(GameSpec),
    TwoSided(GameSpecTwoSided),
    AbstractU(AbstractUSpec),
}

impl SpecDocument {
    pub fn validate(&self) -> Vec<Violation> {
        match self {
            SpecDocument::OneSided(s) => s.validate(),
            SpecDocument::TwoSided(s) => s.validate(),
            SpecDocument::AbstractU(s) => s.validate(),
        }
    }
}

/// Loads and validates a spec file, detecting the variant from its keys.
pub fn load_spec(path: &Path) -> Result<SpecDocument> {
    let text = std::fs::read_to_string(path)?;
    parse_spec(&text)
}

pub fn parse_spec(text: &str) -> Result<SpecDocument> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let doc = if value.get("u").is_some() {
        SpecDocument::AbstractU(serde_json::from_value(value)?)
    } else if value.get("states1").is_some() {
        SpecDocument::TwoSided(serde_json::from_value(value)?)
    } else {
        SpecDocument::OneSided(serde_json::from_value(value)?)
    };
    let violations = doc.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(doc)
}

pub fn save_spec(doc: &SpecDocument, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(doc)?)?;
    Ok(())
}

pub fn to_json(doc: &SpecDocument) -> Result<String> {
    let s = match doc {
        SpecDocument::OneSided(s) => serde_json::to_string_pretty(s)?,
        SpecDocument::TwoSided(s) => serde_json::to_string_pretty(s)?,
        SpecDocument::AbstractU(s) => serde_json::to_string_pretty(s)?,
    };
    Ok(s)
}

fn check_duplicates(field: &str, labels: &[String], out: &mut Vec<Violation>) {
    let mut seen = std::collections::HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            out.push(Violation::new(
                field.to_string(),
                format!("duplicate label {l:?}"),
            ));
        }
    }
}

fn check_payoff_shape(
    field: &str,
    payoff: &[Vec<Vec<f64>>],
    ns: usize,
    na: usize,
    nb: usize,
    out: &mut Vec<Violation>,
) {
    if payoff.len() != ns
        || payoff
            .iter()
            .any(|m| m.len() != na || m.iter().any(|r| r.len() != nb))
    {
        out.push(Violation::new(
            field.to_string(),
            format!("tensor dimensions must be {ns}x{na}x{nb}"),
        ));
        return;
    }
    if payoff.iter().flatten().flatten().any(|g| !g.is_finite()) {
        out.push(Violation::new(
            field.to_string(),
            "all entries must be finite".into(),
        ));
    }
}

fn validate_belief(field: &str, b: &Belief, dim: usize, out: &mut Vec<Violation>) {
    if b.dim() != dim {
        out.push(Violation::new(
            field.to_string(),
            format!("dimension {} does not match |S| = {dim}", b.dim()),
        ));
        return;
    }
    let sum: f64 = b.as_slice().iter().sum();
    if (sum - 1.0).abs() > BELIEF_RENORM_TOL {
        out.push(Violation::new(
            field.to_string(),
            format!("sums to {sum}"),
        ));
    }
    for (i, &x) in b.as_slice().iter().enumerate() {
        if x < -EXACT_TOL || !x.is_finite() {
            out.push(Violation::new(
                format!("{field}[{i}]"),
                format!("entry {x} is negative or non-finite"),
            ));
        }
    }
}

/// Checks a single generator matrix: square, off-diagonal nonnegative,
/// rows summing to zero.
pub fn validate_generator(
    field: &str,
    matrix: &[Vec<f64>],
    ns: usize,
    out: &mut Vec<Violation>,
) {
    if matrix.len() != ns || matrix.iter().any(|r| r.len() != ns) {
        out.push(Violation::new(
            field.to_string(),
            format!("must be a {ns}x{ns} matrix"),
        ));
        return;
    }
    for (s, row) in matrix.iter().enumerate() {
        for (s2, &x) in row.iter().enumerate() {
            if s != s2 && x < -EXACT_TOL {
                out.push(Violation::new(
                    format!("{field}[{s}][{s2}]"),
                    format!("off-diagonal rate {x} is negative"),
                ));
            }
            if !x.is_finite() {
                out.push(Violation::new(
                    format!("{field}[{s}][{s2}]"),
                    "entry is non-finite".into(),
                ));
            }
        }
        let sum: f64 = row.iter().sum();
        if sum.abs() > EXACT_TOL {
            out.push(Violation::new(
                format!("{field} row {s}"),
                format!("sums to {sum}"),
            ));
        }
    }
}

fn validate_rate(rate: &RateData, ns: usize, na: usize, nb: usize, out: &mut Vec<Violation>) {
    if rate.n_states() != ns {
        out.push(Violation::new(
            "rate".into(),
            format!("state dimension {} does not match |S| = {ns}", rate.n_states()),
        ));
        return;
    }
    match rate {
        RateData::Exogenous { matrix } => {
            validate_generator("rate.matrix", matrix, ns, out);
        }
        RateData::Endogenous { tensor } => {
            if tensor.iter().any(|row| {
                row.len() != ns
                    || row
                        .iter()
                        .any(|e| e.len() != na || e.iter().any(|c| c.len() != nb))
            }) {
                out.push(Violation::new(
                    "rate.tensor".into(),
                    format!("tensor dimensions must be {ns}x{ns}x{na}x{nb}"),
                ));
                return;
            }
            for a in 0..na {
                for b in 0..nb {
                    validate_generator(
                        &format!("rate.tensor[..][..][{a}][{b}]"),
                        &rate.generator(a, b),
                        ns,
                        out,
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    #[test]
    fn renault_example_loads() {
        let spec = catalog::renault_spec(1.0, 1.0);
        assert!(spec.validate().is_empty());
        assert_eq!(spec.payoff[0][0][0], 1.0);
        assert_eq!(spec.payoff[1][1][1], 1.0);
    }

    #[test]
    fn zero_rate_matrix_is_valid() {
        let mut spec = catalog::renault_spec(1.0, 1.0);
        spec.rate = RateData::Exogenous {
            matrix: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        };
        assert!(spec.validate().is_empty());
    }

    #[test]
    fn negative_off_diagonal_rate_is_named() {
        let mut spec = catalog::renault_spec(1.0, 1.0);
        spec.rate = RateData::Exogenous {
            matrix: vec![vec![0.5, -0.5], vec![1.0, -1.0]],
        };
        let v = spec.validate();
        assert!(v.iter().any(|v| v.field == "rate.matrix[0][1]"));
    }

    #[test]
    fn bad_belief_sum_reported() {
        let text = serde_json::to_string(&catalog::renault_spec(1.0, 1.0)).unwrap();
        let text = text.replace("\"initial_belief\":[0.5,0.5]", "\"initial_belief\":[0.6,0.6]");
        let err = parse_spec(&text).unwrap_err();
        match err {
            Error::Validation(v) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].rule.contains("sums to 1.2"), "{}", v[0]);
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn wrong_payoff_shape_is_one_violation() {
        let mut spec = catalog::renault_spec(1.0, 1.0);
        spec.payoff[0].pop();
        let v = spec.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "payoff");
    }

    #[test]
    fn belief_renormalizes_roundoff_only() {
        let b = Belief::new(vec![0.5 + 1e-10, 0.5]).unwrap();
        assert!((b.as_slice().iter().sum::<f64>() - 1.0).abs() < EXACT_TOL);
        assert!(Belief::new(vec![0.6, 0.6]).is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let doc = SpecDocument::OneSided(catalog::renault_spec(1.0, 0.3));
        let text = to_json(&doc).unwrap();
        let reloaded = parse_spec(&text).unwrap();
        assert_eq!(doc, reloaded);
        let text2 = to_json(&reloaded).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn two_sided_round_trip() {
        let doc = SpecDocument::TwoSided(catalog::two_sided_demo_spec(1.0));
        let text = to_json(&doc).unwrap();
        assert_eq!(parse_spec(&text).unwrap(), doc);
    }
}
