//! Run configuration shared by the command line tool and the property suite.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::{EnvironmentLaw, LawDocument, LawRegistry, LayerRange};
use crate::error::{Error, Result};
use crate::exit_kernel::{ExitConfig, DEFAULT_LYAPUNOV_MARGIN};
use crate::quenched::AnalysisConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub environment: u64,
    #[serde(default)]
    pub walk: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub stoch: f64,
    pub series: f64,
    pub cond: f64,
    pub lyapunov_margin: f64,
    /// Depth-doubling change accepted by the exit recursion.
    pub exit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stoch: 1e-12,
            series: 1e-13,
            cond: 1e-10,
            lyapunov_margin: DEFAULT_LYAPUNOV_MARGIN,
            exit: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub max_depth: usize,
    pub max_terms: usize,
    pub trials: u64,
    pub horizon: u64,
    /// Environments averaged for annealed quantities of laws without a period.
    pub samples: u64,
    /// Walks used for velocity estimates.
    pub velocity_trials: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            max_depth: 4096,
            max_terms: 1_000_000,
            trials: 10_000,
            horizon: 10_000,
            samples: 1_000,
            velocity_trials: 200,
        }
    }
}

fn default_window() -> LayerRange {
    LayerRange { lo: -20, hi: 5 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: LawDocument,
    #[serde(default = "default_window")]
    pub window: LayerRange,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub budgets: Budgets,
}

impl RunConfig {
    pub fn new(environment: LawDocument) -> Self {
        Self {
            environment,
            window: default_window(),
            seeds: Seeds::default(),
            tolerances: Tolerances::default(),
            budgets: Budgets::default(),
        }
    }

    /// Parses and checks a configuration document. All failures are
    /// reported as [`Error::Config`].
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        cfg.law()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let t = &self.tolerances;
        let positive = [
            ("stoch", t.stoch),
            ("series", t.series),
            ("cond", t.cond),
            ("lyapunov_margin", t.lyapunov_margin),
            ("exit", t.exit),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("tolerance {name} must be positive, got {v}")));
        }
        let b = &self.budgets;
        let budgets = [
            ("max_depth", b.max_depth as u64),
            ("max_terms", b.max_terms as u64),
            ("trials", b.trials),
            ("horizon", b.horizon),
            ("samples", b.samples),
            ("velocity_trials", b.velocity_trials),
        ];
        if let Some((name, _)) = budgets.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("budget {name} must be positive")));
        }
        Ok(())
    }

    /// The environment law, with the configured stochasticity tolerance.
    pub fn law(&self) -> Result<Arc<EnvironmentLaw>> {
        let mut law = EnvironmentLaw::from_document(self.environment.clone(), &LawRegistry::builtin())
            .map_err(|e| Error::Config(e.to_string()))?;
        law.tol_stoch = self.tolerances.stoch;
        Ok(Arc::new(law))
    }

    pub fn exit_config(&self) -> ExitConfig {
        ExitConfig {
            tol: self.tolerances.exit,
            max_depth: self.budgets.max_depth,
            tol_cond: self.tolerances.cond,
            ..ExitConfig::default()
        }
    }

    pub fn analysis_config(&self) -> AnalysisConfig {
        AnalysisConfig {
            exit: self.exit_config(),
            series_tol: self.tolerances.series,
            max_terms: self.budgets.max_terms,
            ..AnalysisConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{
        "environment": {"dim": 1, "kind": "deterministic-sequence",
            "atoms": [{"p": [[0.7]], "q": [[0.2]], "r": [[0.1]]}]}
    }"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = RunConfig::from_json(SCALAR).unwrap();
        assert_eq!(cfg.window, LayerRange { lo: -20, hi: 5 });
        assert_eq!(cfg.budgets, Budgets::default());
        assert_eq!(cfg.law().unwrap().kind(), "deterministic-sequence");
    }

    #[test]
    fn bad_documents_are_config_errors() {
        for text in [
            "{",
            r#"{"environment": {"dim": 1, "kind": "brownian", "atoms": [{"p": [[1]], "q": [[0]], "r": [[0]]}]}}"#,
            r#"{"environment": {"dim": 1, "kind": "periodic", "atoms": []}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
        let mut cfg: serde_json::Value = serde_json::from_str(SCALAR).unwrap();
        cfg["tolerances"] = serde_json::json!({"series": 0.0});
        assert!(matches!(
            RunConfig::from_json(&cfg.to_string()),
            Err(Error::Config(_))
        ));
        cfg["tolerances"] = serde_json::json!({});
        cfg["window"] = serde_json::json!([3, 1]);
        assert!(matches!(
            RunConfig::from_json(&cfg.to_string()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::from_json(SCALAR).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
