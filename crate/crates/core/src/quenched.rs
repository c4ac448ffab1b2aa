//! Per-environment analysis around layer 0: the exit kernel on a symmetric
//! span of layers, the stationary vector `y_{-1}`, the quenched mean hitting
//! time with `mu = y_{-1}` and the unscaled density series.
//!
//! The span starts small and doubles until every series has converged
//! inside it, so strongly drifting environments stay cheap.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::branching::expected_t1;
use crate::environment::{EnvironmentLaw, LayerRange, StripEnvironment};
use crate::error::{Error, Result};
use crate::exit_kernel::{solve_exit, stationary_vector, ExitConfig, ExitSolution, StationaryVector};
use crate::invariant_measure::{density_series, DensitySum};
use crate::series::SeriesResult;
use crate::simulator::trial_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub exit: ExitConfig,
    pub series_tol: f64,
    pub stationary_tol: f64,
    pub max_terms: usize,
    pub initial_span: usize,
    pub max_span: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            exit: ExitConfig::default(),
            series_tol: 1e-13,
            stationary_tol: 1e-14,
            max_terms: 1_000_000,
            initial_span: 32,
            max_span: 1 << 16,
        }
    }
}

/// Everything computed for one environment.
#[derive(Debug, Clone)]
pub struct QuenchedAnalysis {
    pub span: usize,
    pub sol: ExitSolution,
    pub y_minus1: StationaryVector,
    /// `E T_1` with `mu = y_{-1}`.
    pub expected_t1: SeriesResult<f64>,
    /// Density series before scaling by the velocity.
    pub density: DensitySum,
}

/// Solves the exit kernel of `base` on `layers`, widening the generated
/// window to the left as the truncation depth requires.
pub fn solve_on(base: &StripEnvironment, layers: LayerRange, cfg: &ExitConfig) -> Result<ExitSolution> {
    let mut lo = layers.lo - 2 * cfg.initial_depth as i64;
    loop {
        let env = base.with_window(LayerRange { lo, hi: layers.hi + 1 });
        match solve_exit(&env, layers, cfg) {
            Err(Error::WindowTooSmall { needed_lo, .. }) if needed_lo < lo => lo = needed_lo,
            other => return other,
        }
    }
}

/// [`solve_on`] with layers `[-span, span]`.
pub fn solve_around_zero(base: &StripEnvironment, span: usize, cfg: &ExitConfig) -> Result<ExitSolution> {
    let span = span as i64;
    solve_on(base, LayerRange { lo: -span, hi: span }, cfg)
}

fn analyze_span(base: &StripEnvironment, span: usize, cfg: &AnalysisConfig) -> Result<Option<QuenchedAnalysis>> {
    let sol = solve_around_zero(base, span, &cfg.exit)?;
    let y_minus1 = match stationary_vector(&sol, -1, cfg.stationary_tol, usize::MAX) {
        Ok(y) => y,
        Err(Error::WindowTooSmall { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let expected_t1 = expected_t1(&sol, &y_minus1.y, cfg.series_tol, cfg.max_terms)?;
    let density = density_series(&sol, &y_minus1.row(), cfg.series_tol, cfg.max_terms)?;
    let budget_hit = |terms: usize| terms >= cfg.max_terms;
    let done = (expected_t1.converged || budget_hit(expected_t1.terms_used))
        && (density.converged || budget_hit(density.terms_used));
    Ok(done.then_some(QuenchedAnalysis {
        span,
        sol,
        y_minus1,
        expected_t1,
        density,
    }))
}

/// Runs the analysis with a doubling span.
pub fn analyze(base: &StripEnvironment, cfg: &AnalysisConfig) -> Result<QuenchedAnalysis> {
    let mut span = cfg.initial_span.max(2);
    while span <= cfg.max_span {
        if let Some(a) = analyze_span(base, span, cfg)? {
            return Ok(a);
        }
        span *= 2;
    }
    Err(Error::NoConvergence {
        what: "quenched analysis span",
        depth: cfg.max_span,
    })
}

/// Number of environments averaged for annealed quantities: one per phase
/// for laws with a period, `samples` otherwise.
pub fn annealed_sample_count(law: &EnvironmentLaw, samples: u64) -> u64 {
    law.period().map_or(samples, |p| p as u64)
}

/// Environment number `s` of an annealed average. For laws with a period
/// this is the phase-`s` shift of the sequence, so averaging over
/// `s = 0..period` is exact; otherwise it is an independent draw with a
/// seed derived from `(seed, s)`.
pub fn annealed_environment(law: &Arc<EnvironmentLaw>, seed: u64, s: u64) -> StripEnvironment {
    let unit = LayerRange { lo: 0, hi: 0 };
    match law.period() {
        Some(p) => StripEnvironment::sample_unchecked(Arc::clone(law), unit, seed)
            .shifted((s % p as u64) as i64)
            .with_window(unit),
        None => {
            let env_seed = trial_rng(seed, s).random::<u64>();
            StripEnvironment::sample_unchecked(Arc::clone(law), unit, env_seed)
        }
    }
}
