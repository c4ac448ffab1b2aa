//! Environment laws and the registry of layer rules.
//!
//! A law is a finite list of atoms plus a [`LayerRule`] that decides which
//! atom sits at each layer. Rules are looked up by the `kind` name of the
//! configuration document, so new kinds only need a registration.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::triple::{validate_triple, TransitionTriple, ValidationReport};
use crate::error::{Error, Result};

/// Decides which atom of a law occupies a given layer.
pub trait LayerRule: Send + Sync + fmt::Debug {
    /// Name used in the `kind` field of a law document.
    fn name(&self) -> &'static str;

    /// Kind-specific structural checks (weights, period table).
    fn check(&self, law: &EnvironmentLaw) -> Result<()>;

    /// Atom index at `layer`. Must be a pure function of `(law, layer, seed)`.
    fn atom_at(&self, law: &EnvironmentLaw, layer: i64, seed: u64) -> usize;

    /// Period of the atom sequence when the law is a finite cycle of
    /// layers. The stationary version of such a law is the uniform mixture
    /// of its phase shifts. `None` for random laws.
    fn period(&self, law: &EnvironmentLaw) -> Option<usize>;
}

/// Layer `n` carries atom `n mod len(atoms)`; a single atom gives a
/// homogeneous strip.
#[derive(Debug)]
pub struct DeterministicSequence;

impl LayerRule for DeterministicSequence {
    fn name(&self) -> &'static str {
        "deterministic-sequence"
    }

    fn check(&self, _law: &EnvironmentLaw) -> Result<()> {
        Ok(())
    }

    fn atom_at(&self, law: &EnvironmentLaw, layer: i64, _seed: u64) -> usize {
        layer.rem_euclid(law.atoms.len() as i64) as usize
    }

    fn period(&self, law: &EnvironmentLaw) -> Option<usize> {
        Some(law.atoms.len())
    }
}

/// Layer `n` carries `atoms[period_table[n mod len(period_table)]]`.
#[derive(Debug)]
pub struct Periodic;

impl Periodic {
    fn table(law: &EnvironmentLaw) -> std::borrow::Cow<'_, [usize]> {
        match &law.period_table {
            Some(t) => std::borrow::Cow::Borrowed(t.as_slice()),
            None => std::borrow::Cow::Owned((0..law.atoms.len()).collect()),
        }
    }
}

impl LayerRule for Periodic {
    fn name(&self) -> &'static str {
        "periodic"
    }

    fn check(&self, law: &EnvironmentLaw) -> Result<()> {
        let table = Self::table(law);
        if table.is_empty() {
            return Err(Error::InvalidLaw("period_table is empty".into()));
        }
        if let Some(&bad) = table.iter().find(|&&k| k >= law.atoms.len()) {
            return Err(Error::InvalidLaw(format!(
                "period_table refers to atom {bad} but only {} atoms exist",
                law.atoms.len()
            )));
        }
        Ok(())
    }

    fn atom_at(&self, law: &EnvironmentLaw, layer: i64, _seed: u64) -> usize {
        let table = Self::table(law);
        table[layer.rem_euclid(table.len() as i64) as usize]
    }

    fn period(&self, law: &EnvironmentLaw) -> Option<usize> {
        Some(Self::table(law).len())
    }
}

/// Independent layers drawn from `weights`. Layer `n` uses ChaCha stream
/// `n` of the seed, so a layer's atom does not depend on the window.
#[derive(Debug)]
pub struct IidFiniteSupport;

impl LayerRule for IidFiniteSupport {
    fn name(&self) -> &'static str {
        "iid-finite-support"
    }

    fn check(&self, law: &EnvironmentLaw) -> Result<()> {
        let w = law
            .weights
            .as_ref()
            .ok_or_else(|| Error::InvalidLaw("iid law needs `weights`".into()))?;
        if w.len() != law.atoms.len() {
            return Err(Error::InvalidLaw(format!(
                "{} weights for {} atoms",
                w.len(),
                law.atoms.len()
            )));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidLaw("weights must be nonnegative".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > law.tol_stoch {
            return Err(Error::InvalidLaw(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }

    fn atom_at(&self, law: &EnvironmentLaw, layer: i64, seed: u64) -> usize {
        let weights = law.weights.as_deref().unwrap_or(&[]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(layer as u64);
        // `check` guarantees a valid weight vector.
        WeightedIndex::new(weights)
            .expect("weights validated at construction")
            .sample(&mut rng)
    }

    fn period(&self, _law: &EnvironmentLaw) -> Option<usize> {
        None
    }
}

/// Name-indexed set of layer rules.
#[derive(Debug, Clone)]
pub struct LawRegistry {
    rules: BTreeMap<&'static str, Arc<dyn LayerRule>>,
}

impl Default for LawRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl LawRegistry {
    pub fn empty() -> Self {
        Self {
            rules: BTreeMap::new(),
        }
    }

    /// Registry holding the three built-in kinds.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(DeterministicSequence));
        reg.register(Arc::new(Periodic));
        reg.register(Arc::new(IidFiniteSupport));
        reg
    }

    pub fn register(&mut self, rule: Arc<dyn LayerRule>) {
        self.rules.insert(rule.name(), rule);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn LayerRule>> {
        self.rules
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownKind(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.rules.keys().copied()
    }
}

/// Configuration document form of a law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawDocument {
    pub dim: usize,
    pub kind: String,
    pub atoms: Vec<TransitionTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_table: Option<Vec<usize>>,
}

/// A stationary law on environments with finitely many atoms.
#[derive(Debug, Clone)]
pub struct EnvironmentLaw {
    pub dim: usize,
    pub atoms: Vec<TransitionTriple>,
    pub weights: Option<Vec<f64>>,
    pub period_table: Option<Vec<usize>>,
    /// Tolerance used for the weight sum.
    pub tol_stoch: f64,
    rule: Arc<dyn LayerRule>,
}

pub const DEFAULT_TOL_STOCH: f64 = 1e-12;

impl EnvironmentLaw {
    /// Resolves `doc.kind` in `registry` and runs the structural checks.
    /// Atom validity is checked separately by [`EnvironmentLaw::validate`].
    pub fn from_document(doc: LawDocument, registry: &LawRegistry) -> Result<Self> {
        let rule = registry.get(&doc.kind)?;
        Self::with_rule(doc.dim, doc.atoms, doc.weights, doc.period_table, rule)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LawDocument =
            serde_json::from_str(text).map_err(|e| Error::InvalidLaw(e.to_string()))?;
        Self::from_document(doc, &LawRegistry::builtin())
    }

    pub fn with_rule(
        dim: usize,
        atoms: Vec<TransitionTriple>,
        weights: Option<Vec<f64>>,
        period_table: Option<Vec<usize>>,
        rule: Arc<dyn LayerRule>,
    ) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidLaw("law has no atoms".into()));
        }
        if let Some(k) = atoms.iter().position(|a| a.dim() != dim) {
            return Err(Error::InvalidLaw(format!(
                "atom {k} has dimension {} but dim = {dim}",
                atoms[k].dim()
            )));
        }
        let law = Self {
            dim,
            atoms,
            weights,
            period_table,
            tol_stoch: DEFAULT_TOL_STOCH,
            rule,
        };
        law.rule.check(&law)?;
        Ok(law)
    }

    /// Cyclic sequence of atoms; one atom gives a homogeneous strip.
    pub fn deterministic(atoms: Vec<TransitionTriple>) -> Result<Self> {
        let dim = atoms.first().map_or(0, TransitionTriple::dim);
        Self::with_rule(dim, atoms, None, None, Arc::new(DeterministicSequence))
    }

    pub fn homogeneous(atom: TransitionTriple) -> Self {
        Self::deterministic(vec![atom]).expect("a single atom is a valid sequence")
    }

    pub fn periodic(atoms: Vec<TransitionTriple>, period_table: Vec<usize>) -> Result<Self> {
        let dim = atoms.first().map_or(0, TransitionTriple::dim);
        Self::with_rule(dim, atoms, None, Some(period_table), Arc::new(Periodic))
    }

    pub fn iid(atoms: Vec<TransitionTriple>, weights: Vec<f64>) -> Result<Self> {
        let dim = atoms.first().map_or(0, TransitionTriple::dim);
        Self::with_rule(dim, atoms, Some(weights), None, Arc::new(IidFiniteSupport))
    }

    pub fn kind(&self) -> &'static str {
        self.rule.name()
    }

    pub fn atom_at(&self, layer: i64, seed: u64) -> usize {
        self.rule.atom_at(self, layer, seed)
    }

    pub fn period(&self) -> Option<usize> {
        self.rule.period(self)
    }

    /// Per-atom validation reports, in atom order.
    pub fn validate(&self, tol: f64) -> Vec<ValidationReport> {
        self.atoms.iter().map(|a| validate_triple(a, tol)).collect()
    }

    pub fn ensure_valid(&self, tol: f64) -> Result<()> {
        for (k, report) in self.validate(tol).iter().enumerate() {
            if !report.is_valid() {
                return Err(Error::InvalidLaw(format!(
                    "atom {k} violates {}",
                    report.names().join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn to_document(&self) -> LawDocument {
        LawDocument {
            dim: self.dim,
            kind: self.kind().to_string(),
            atoms: self.atoms.clone(),
            weights: self.weights.clone(),
            period_table: self.period_table.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(p: f64) -> TransitionTriple {
        TransitionTriple::scalar(p, (1.0 - p) / 2.0, (1.0 - p) / 2.0)
    }

    #[test]
    fn registry_resolves_builtin_names() {
        let reg = LawRegistry::builtin();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(
            names,
            vec!["deterministic-sequence", "iid-finite-support", "periodic"]
        );
        assert!(matches!(reg.get("markov"), Err(Error::UnknownKind(_))));
    }

    #[test]
    fn iid_weights_are_checked() {
        let atoms = vec![scalar(0.5), scalar(0.6)];
        assert!(EnvironmentLaw::iid(atoms.clone(), vec![0.5, 0.4]).is_err());
        assert!(EnvironmentLaw::iid(atoms.clone(), vec![1.0]).is_err());
        assert!(EnvironmentLaw::iid(atoms, vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn period_table_must_index_atoms() {
        let atoms = vec![scalar(0.5), scalar(0.6)];
        assert!(EnvironmentLaw::periodic(atoms.clone(), vec![0, 2]).is_err());
        assert!(EnvironmentLaw::periodic(atoms, vec![]).is_err());
    }

    #[test]
    fn document_round_trip_keeps_kind() {
        let text = r#"{"dim":1,"kind":"periodic","atoms":[
            {"p":[[0.7]],"q":[[0.2]],"r":[[0.1]]},
            {"p":[[0.6]],"q":[[0.3]],"r":[[0.1]]}],
            "period_table":[1,0]}"#;
        let law = EnvironmentLaw::from_json(text).unwrap();
        assert_eq!(law.kind(), "periodic");
        assert_eq!(law.atom_at(0, 0), 1);
        assert_eq!(law.atom_at(-1, 0), 0);
        let doc = serde_json::to_string(&law.to_document()).unwrap();
        let again = EnvironmentLaw::from_json(&doc).unwrap();
        assert_eq!(again.atoms, law.atoms);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"dim":1,"kind":"periodic","atoms":[],"extra":1}"#;
        assert!(EnvironmentLaw::from_json(text).is_err());
    }
}
