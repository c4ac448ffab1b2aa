//! Registry of checkable properties run by `verify`.
//!
//! Each property is a named trait object evaluated against a shared
//! [`SuiteContext`]; expensive intermediate results (the quenched analysis,
//! the Monte Carlo run, the velocity) are computed once and reused.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::branching::{
    b_matrix, expected_u, expected_z, joint_pmf, partial_m_b_m, pmf_u, pmf_z, series_m_b_m, Grouping,
    OffspringQuery,
};
use crate::config::RunConfig;
use crate::environment::{validate_triple, EnvironmentLaw, LayerRange, StripEnvironment};
use crate::error::Result;
use crate::exit_kernel::{lyapunov, solve_exit, stationary_vector, ExitSolution, LyapunovEstimate, Transience};
use crate::invariant_measure::{velocity, verify_invariance, InvarianceConfig, VelocityReport};
use crate::linalg::{inverse_checked, max_abs_diff, ones, row_sum_norm, Mat};
use crate::quenched::{analyze, annealed_environment, annealed_sample_count, solve_on, QuenchedAnalysis};
use crate::simulator::{
    compare, default_window, monte_carlo, trial_rng, z_score, MeanEstimate, MonteCarloConfig, MonteCarloReport,
    StopRule, Walker,
};

/// Offspring-law z-scores above this fail.
pub const PMF_Z_LIMIT: f64 = 4.0;
/// Mean comparisons fail beyond this many standard errors.
pub const SIGMA_LIMIT: f64 = 3.0;
/// Layer steps of the environment-site chain in the invariance check.
pub const CHAIN_STEPS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn check(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    /// Passes when `value <= limit`.
    pub fn at_most(what: &str, value: f64, limit: f64) -> Self {
        Self::check(value <= limit, format!("{what} = {value:.3e} (limit {limit:.1e})"))
    }
}

pub trait Property: Send + Sync {
    fn module(&self) -> &'static str;
    fn name(&self) -> &'static str;
    fn check(&self, ctx: &SuiteContext) -> Result<Outcome>;
}

struct FnProperty {
    module: &'static str,
    name: &'static str,
    check: fn(&SuiteContext) -> Result<Outcome>,
}

impl Property for FnProperty {
    fn module(&self) -> &'static str {
        self.module
    }

    fn name(&self) -> &'static str {
        self.name
    }

    fn check(&self, ctx: &SuiteContext) -> Result<Outcome> {
        (self.check)(ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub module: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Default)]
pub struct PropertyRegistry {
    properties: Vec<Box<dyn Property>>,
}

impl PropertyRegistry {
    pub fn register(&mut self, p: Box<dyn Property>) {
        self.properties.push(p);
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Property> {
        self.properties.iter().map(|p| p.as_ref())
    }

    /// Runs every property; an error inside a property is a failure.
    pub fn run(&self, ctx: &SuiteContext) -> Vec<PropertyResult> {
        self.iter()
            .map(|p| {
                let (passed, detail) = match p.check(ctx) {
                    Ok(o) => (o.passed, o.detail),
                    Err(e) => (false, format!("error: {e}")),
                };
                PropertyResult {
                    module: p.module().into(),
                    name: p.name().into(),
                    passed,
                    detail,
                }
            })
            .collect()
    }

    pub fn builtin() -> Self {
        let table: &[(&'static str, &'static str, fn(&SuiteContext) -> Result<Outcome>)] = &[
            ("environment", "triples-valid", env_triples_valid),
            ("environment", "shift-bijection", env_shift_bijection),
            ("environment", "window-extension-stable", env_extension_stable),
            ("exit_kernel", "zeta-stochastic", exit_zeta_stochastic),
            ("exit_kernel", "defect-identity", exit_defect_identity),
            ("exit_kernel", "u-identity", exit_u_identity),
            ("exit_kernel", "y-consistency", exit_y_consistency),
            ("exit_kernel", "shift-covariance", exit_shift_covariance),
            ("exit_kernel", "transient-right", exit_transient_right),
            ("branching", "pmf-normalization", br_normalization),
            ("branching", "joint-marginalization", br_marginalization),
            ("branching", "joint-form-equivalence", br_form_equivalence),
            ("branching", "moment-consistency", br_moments),
            ("branching", "appendix-identity", br_appendix),
            ("branching", "telescoping", br_telescoping),
            ("branching", "m-b-m-closed-form", br_m_b_m),
            ("simulator", "pathwise-identities", sim_identities),
            ("simulator", "offspring-pmf", sim_offspring),
            ("simulator", "mean-t1", sim_mean_t1),
            ("simulator", "mean-u-vector", sim_mean_u),
            ("simulator", "tau-stationarity", sim_tau),
            ("invariant_measure", "density-consistency", im_consistency),
            ("invariant_measure", "mean-one", im_mean_one),
            ("invariant_measure", "quenched-annealed", im_quenched_annealed),
            ("invariant_measure", "shift-identity", im_shift_identity),
            ("invariant_measure", "kernel-invariance", im_kernel_invariance),
            ("invariant_measure", "lln-velocity", im_lln),
        ];
        let mut r = Self::default();
        for &(module, name, check) in table {
            r.register(Box::new(FnProperty { module, name, check }));
        }
        r
    }
}

/// Shared inputs and cached intermediate results.
pub struct SuiteContext {
    pub cfg: RunConfig,
    pub law: Arc<EnvironmentLaw>,
    /// The configured environment (seed `seeds.environment`, phase 0).
    pub base: StripEnvironment,
    window_sol: OnceLock<Result<ExitSolution>>,
    analysis: OnceLock<Result<QuenchedAnalysis>>,
    lyapunov: OnceLock<Result<LyapunovEstimate>>,
    monte_carlo: OnceLock<Result<MonteCarloReport>>,
    velocity: OnceLock<Result<VelocityReport>>,
}

impl SuiteContext {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let law = cfg.law()?;
        let base = StripEnvironment::sample_unchecked(
            Arc::clone(&law),
            LayerRange { lo: 0, hi: 0 },
            cfg.seeds.environment,
        );
        Ok(Self {
            cfg,
            law,
            base,
            window_sol: OnceLock::new(),
            analysis: OnceLock::new(),
            lyapunov: OnceLock::new(),
            monte_carlo: OnceLock::new(),
            velocity: OnceLock::new(),
        })
    }

    fn cached<'a, T>(cell: &'a OnceLock<Result<T>>, f: impl FnOnce() -> Result<T>) -> Result<&'a T> {
        cell.get_or_init(f).as_ref().map_err(Clone::clone)
    }

    /// Exit solution on the configured window.
    pub fn window_solution(&self) -> Result<&ExitSolution> {
        Self::cached(&self.window_sol, || {
            solve_on(&self.base, self.cfg.window, &self.cfg.exit_config())
        })
    }

    pub fn analysis(&self) -> Result<&QuenchedAnalysis> {
        Self::cached(&self.analysis, || analyze(&self.base, &self.cfg.analysis_config()))
    }

    pub fn lyapunov(&self) -> Result<&LyapunovEstimate> {
        Self::cached(&self.lyapunov, || {
            let n = 512;
            let sol = solve_on(&self.base, LayerRange { lo: 0, hi: n }, &self.cfg.exit_config())?;
            lyapunov(&sol, n as usize, self.cfg.tolerances.lyapunov_margin)
        })
    }

    /// Walk window for the configured environment.
    pub fn walk_window(&self, k: i64) -> Result<LayerRange> {
        Ok(default_window(self.lyapunov()?.lambda_plus, k))
    }

    pub fn monte_carlo(&self) -> Result<&MonteCarloReport> {
        Self::cached(&self.monte_carlo, || {
            let a = self.analysis()?;
            let env = self.base.with_window(self.walk_window(1)?);
            let mc = MonteCarloConfig {
                trials: self.cfg.budgets.trials,
                seed: self.cfg.seeds.walk,
                depth: 2,
                ..MonteCarloConfig::default()
            };
            let summary = monte_carlo(&env, &a.y_minus1.y, &mc)?;
            compare(
                &summary,
                &a.sol,
                &a.y_minus1.y,
                self.cfg.tolerances.series,
                self.cfg.budgets.max_terms,
            )
        })
    }

    pub fn velocity(&self) -> Result<&VelocityReport> {
        Self::cached(&self.velocity, || {
            velocity(
                &self.law,
                self.cfg.budgets.samples,
                self.cfg.seeds.environment,
                self.cfg.tolerances.series,
                &self.cfg.analysis_config(),
            )
        })
    }

    /// Quenched analyses of the annealed sample environments, cached per
    /// phase for laws with a period.
    fn annealed_analyses(&self, seed: u64, count: u64) -> Result<Vec<Arc<QuenchedAnalysis>>> {
        let mut cache: HashMap<u64, Arc<QuenchedAnalysis>> = HashMap::new();
        let period = self.law.period().map(|p| p as u64);
        (0..count)
            .map(|s| {
                let key = period.map(|p| s % p);
                if let Some(a) = key.and_then(|k| cache.get(&k)) {
                    return Ok(Arc::clone(a));
                }
                let a = Arc::new(analyze(
                    &annealed_environment(&self.law, seed, s),
                    &self.cfg.analysis_config(),
                )?);
                if let Some(k) = key {
                    cache.insert(k, Arc::clone(&a));
                }
                Ok(a)
            })
            .collect()
    }
}

const NUMERIC_TOL: f64 = 1e-10;

fn env_triples_valid(ctx: &SuiteContext) -> Result<Outcome> {
    let env = ctx.base.with_window(ctx.cfg.window);
    let mut bad: Vec<(i64, String)> = Vec::new();
    for (n, t) in env.triples() {
        let r = validate_triple(t, ctx.cfg.tolerances.stoch);
        if !r.is_valid() {
            bad.push((n, r.names().join(",")));
        }
    }
    let detail = match bad.first() {
        None => format!("{} layers valid", env.window().len()),
        Some((n, names)) => format!(
            "{} of {} layers invalid, first at layer {n}: {names}",
            bad.len(),
            env.window().len()
        ),
    };
    Ok(Outcome::check(bad.is_empty(), detail))
}

fn env_shift_bijection(ctx: &SuiteContext) -> Result<Outcome> {
    let env = ctx.base.with_window(ctx.cfg.window);
    let ok = (-3..=3).all(|k| env.shifted(k).shifted(-k) == env);
    Ok(Outcome::check(ok, "shift(shift(env, k), -k) = env for |k| <= 3"))
}

fn env_extension_stable(ctx: &SuiteContext) -> Result<Outcome> {
    let w = ctx.cfg.window;
    let env = ctx.base.with_window(w);
    let wide = ctx.base.with_window(LayerRange {
        lo: w.lo - 50,
        hi: w.hi + 50,
    });
    let ok = env
        .triples()
        .all(|(n, t)| wide.triple(n).map(|u| u == t).unwrap_or(false));
    Ok(Outcome::check(ok, "window extended by 50 layers on both sides"))
}

fn exit_zeta_stochastic(ctx: &SuiteContext) -> Result<Outcome> {
    let sol = ctx.window_solution()?;
    let mut worst: f64 = 0.0;
    let mut negative = false;
    for n in sol.layers().lo..=sol.layers().hi {
        let z = sol.zeta(n)?;
        negative |= z.iter().any(|&x| x < 0.0);
        worst = worst.max((z * ones(sol.dim())).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max));
    }
    let mut o = Outcome::at_most("max |zeta 1 - 1|", worst, ctx.cfg.tolerances.stoch);
    if negative {
        o.passed = false;
        o.detail.push_str("; negative entry");
    }
    Ok(o)
}

fn exit_defect_identity(ctx: &SuiteContext) -> Result<Outcome> {
    let sol = ctx.window_solution()?;
    let d = sol.dim();
    let mut worst: f64 = 0.0;
    for n in sol.layers().lo..=sol.layers().hi {
        let t = sol.triple(n)?;
        let lhs = (Mat::identity(d, d) - &t.q * sol.zeta(n - 1)? - &t.r) * sol.zeta(n)?;
        worst = worst.max(max_abs_diff(&lhs, &t.p));
    }
    Ok(Outcome::at_most("max defect", worst, NUMERIC_TOL))
}

fn exit_u_identity(ctx: &SuiteContext) -> Result<Outcome> {
    let sol = ctx.window_solution()?;
    let one = ones(sol.dim());
    let mut worst: f64 = 0.0;
    for n in sol.layers().lo..=sol.layers().hi {
        let lhs = sol.a_mat(n)? * sol.zeta(n - 1)? * &one + sol.u_tilde(n)? * &sol.triple(n)?.r * &one + &one;
        worst = worst.max((lhs - sol.u_vec(n)?).amax());
    }
    Ok(Outcome::at_most("max |A zeta 1 + u~ R 1 + 1 - u|", worst, NUMERIC_TOL))
}

fn exit_y_consistency(ctx: &SuiteContext) -> Result<Outcome> {
    let cfg = ctx.cfg.analysis_config();
    let span = ctx.analysis()?.span as i64;
    let sol = solve_on(&ctx.base, LayerRange { lo: -4 * span, hi: 8 }, &cfg.exit)?;
    let sol = &sol;
    let tol = cfg.stationary_tol;
    let mut worst: f64 = 0.0;
    for n in -5..=5 {
        let y = stationary_vector(sol, n, tol, usize::MAX)?;
        let prev = stationary_vector(sol, n - 1, tol, usize::MAX)?;
        worst = worst.max((y.row() - prev.row() * sol.zeta(n)?).amax());
    }
    Ok(Outcome::at_most("max |y_n - y_{n-1} zeta_n|", worst, NUMERIC_TOL))
}

fn exit_shift_covariance(ctx: &SuiteContext) -> Result<Outcome> {
    let cfg = ctx.cfg.exit_config();
    let env = ctx.base.with_window(LayerRange {
        lo: -(cfg.max_depth as i64) - 20,
        hi: 20,
    });
    let a = solve_exit(&env, LayerRange { lo: -4, hi: 6 }, &cfg)?;
    let b = solve_exit(&env.shifted(1), LayerRange { lo: -5, hi: 5 }, &cfg)?;
    let mut worst: f64 = 0.0;
    for n in -5..=5 {
        worst = worst.max(max_abs_diff(b.zeta(n)?, a.zeta(n + 1)?));
    }
    Ok(Outcome::at_most("max |zeta_n(shifted) - zeta_{n+1}|", worst, 1e-12))
}

fn exit_transient_right(ctx: &SuiteContext) -> Result<Outcome> {
    let l = ctx.lyapunov()?;
    Ok(Outcome::check(
        l.classification == Transience::TransientRight,
        format!("lambda+ = {:.6e} over {} layers", l.lambda_plus, l.n_terms),
    ))
}

fn check_layers() -> [i64; 3] {
    [0, -1, -2]
}

fn pmf_sum(f: impl Fn(usize) -> Result<f64>) -> Result<(f64, f64)> {
    let (mut total, mut first_moment) = (0.0, 0.0);
    for m in 0..5000 {
        let p = f(m)?;
        total += p;
        first_moment += m as f64 * p;
        if m > 8 && p < 1e-18 {
            break;
        }
    }
    Ok((total, first_moment))
}

fn for_layers_sites(
    ctx: &SuiteContext,
    mut f: impl FnMut(&ExitSolution, i64, usize) -> Result<f64>,
) -> Result<f64> {
    let sol = &ctx.analysis()?.sol;
    let mut worst: f64 = 0.0;
    for n in check_layers() {
        for i in 0..sol.dim() {
            worst = worst.max(f(sol, n, i)?);
        }
    }
    Ok(worst)
}

fn query(layer: i64, parent_site: usize, count: usize) -> OffspringQuery {
    OffspringQuery {
        layer,
        parent_site,
        count,
    }
}

fn br_normalization(ctx: &SuiteContext) -> Result<Outcome> {
    let worst = for_layers_sites(ctx, |sol, n, i| {
        let (u, _) = pmf_sum(|m| pmf_u(sol, &query(n, i, m)))?;
        let (z, _) = pmf_sum(|k| pmf_z(sol, &query(n, i, k)))?;
        Ok((u - 1.0).abs().max((z - 1.0).abs()))
    })?;
    Ok(Outcome::at_most("max |sum pmf - 1|", worst, NUMERIC_TOL))
}

const JOINT_MAX: usize = 4;
/// Joint sums over the second index run this far; the tail beyond is
/// checked to be negligible through the normalization property.
const JOINT_SUM_TERMS: usize = 40;

fn br_marginalization(ctx: &SuiteContext) -> Result<Outcome> {
    let worst = for_layers_sites(ctx, |sol, n, i| {
        let mut worst: f64 = 0.0;
        for m in 0..=JOINT_MAX {
            let mut s = 0.0;
            for k in 0..JOINT_SUM_TERMS {
                s += joint_pmf(sol, m, k, n, i, Grouping::UGrouped)?;
            }
            worst = worst.max((s - pmf_u(sol, &query(n, i, m))?).abs());
        }
        for k in 0..=JOINT_MAX {
            let mut s = 0.0;
            for m in 0..JOINT_SUM_TERMS {
                s += joint_pmf(sol, m, k, n, i, Grouping::ZGrouped)?;
            }
            worst = worst.max((s - pmf_z(sol, &query(n, i, k))?).abs());
        }
        Ok(worst)
    })?;
    Ok(Outcome::at_most("max marginal mismatch", worst, NUMERIC_TOL))
}

fn br_form_equivalence(ctx: &SuiteContext) -> Result<Outcome> {
    let worst = for_layers_sites(ctx, |sol, n, i| {
        let mut worst: f64 = 0.0;
        for m in 0..=JOINT_MAX {
            for k in 0..=JOINT_MAX {
                let a = joint_pmf(sol, m, k, n, i, Grouping::UGrouped)?;
                let b = joint_pmf(sol, m, k, n, i, Grouping::ZGrouped)?;
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    })?;
    Ok(Outcome::at_most("max |U-grouped - Z-grouped|", worst, 1e-12))
}

fn br_moments(ctx: &SuiteContext) -> Result<Outcome> {
    let worst = for_layers_sites(ctx, |sol, n, i| {
        let (_, mu) = pmf_sum(|m| pmf_u(sol, &query(n, i, m)))?;
        let (_, mz) = pmf_sum(|k| pmf_z(sol, &query(n, i, k)))?;
        Ok((mu - expected_u(sol, n, i)?)
            .abs()
            .max((mz - expected_z(sol, n, i)?).abs()))
    })?;
    Ok(Outcome::at_most("max first-moment mismatch", worst, 1e-8))
}

fn br_appendix(ctx: &SuiteContext) -> Result<Outcome> {
    let sol = &ctx.analysis()?.sol;
    let one = ones(sol.dim());
    let mut worst: f64 = 0.0;
    for n in -5..=5 {
        let lhs = sol.u_tilde(n)? * &sol.triple(n)?.q * sol.zeta(n - 1)? * sol.zeta(n)? * &one;
        worst = worst.max((lhs - sol.a_mat(n)? * &one).amax());
    }
    Ok(Outcome::at_most("max |u~ Q zeta zeta 1 - A 1|", worst, 1e-12))
}

fn br_telescoping(ctx: &SuiteContext) -> Result<Outcome> {
    let sol = &ctx.analysis()?.sol;
    let terms = 400;
    let mut worst: f64 = 0.0;
    for n in [-1, -2] {
        let b: Vec<Mat> = (1..=terms + 1).map(|m| b_matrix(sol, n, m)).collect::<Result<_>>()?;
        let d = sol.dim();
        let (mut lhs, mut rhs) = (Mat::zeros(d, d), Mat::zeros(d, d));
        for m in 1..=terms {
            lhs += (&b[m - 1] - &b[m]) * m as f64;
            rhs += &b[m - 1];
        }
        worst = worst.max(max_abs_diff(&lhs, &rhs));
    }
    Ok(Outcome::at_most("max telescoping mismatch", worst, NUMERIC_TOL))
}

fn br_m_b_m(ctx: &SuiteContext) -> Result<Outcome> {
    let sol = &ctx.analysis()?.sol;
    let d = sol.dim();
    let mut worst: f64 = 0.0;
    for n in check_layers() {
        let t = sol.triple(n)?;
        let g = inverse_checked(&(Mat::identity(d, d) - &t.r), ctx.cfg.tolerances.cond, n)? * &t.q * sol.zeta(n - 1)?;
        let closed = series_m_b_m(&g)?;
        worst = worst.max(max_abs_diff(&closed, &partial_m_b_m(&g, 500)) / row_sum_norm(&closed).max(1.0));
    }
    Ok(Outcome::at_most("relative partial-sum gap at M = 500", worst, 1e-8))
}

fn sim_identities(ctx: &SuiteContext) -> Result<Outcome> {
    let r = ctx.monte_carlo()?;
    Ok(Outcome::check(
        r.identity_violations == 0,
        format!(
            "{} violations over {} trajectories (mean T1 {:.6}, max T1 {})",
            r.identity_violations, r.trials, r.t1.mean, r.t1_max
        ),
    ))
}

fn sim_offspring(ctx: &SuiteContext) -> Result<Outcome> {
    let r = ctx.monte_carlo()?;
    Ok(Outcome::at_most(
        &format!("max |z| over {} bins", r.pmf_bins.len()),
        r.max_abs_pmf_z(),
        PMF_Z_LIMIT,
    ))
}

fn sim_mean_t1(ctx: &SuiteContext) -> Result<Outcome> {
    let c = ctx.monte_carlo()?.t1_vs_series;
    Ok(Outcome::check(
        c.z.abs() <= SIGMA_LIMIT,
        format!("empirical {:.6} +- {:.2e}, series {:.10}, z = {:.3}", c.empirical, c.se, c.analytic, c.z),
    ))
}

fn sim_mean_u(ctx: &SuiteContext) -> Result<Outcome> {
    let r = ctx.monte_carlo()?;
    let worst = r
        .mean_u
        .iter()
        .filter(|v| v.layer <= 0)
        .map(|v| v.comparison.z.abs())
        .fold(0.0, f64::max);
    Ok(Outcome::at_most("max |z| of E U_n, n = 0, -1, -2", worst, SIGMA_LIMIT))
}

fn sim_tau(ctx: &SuiteContext) -> Result<Outcome> {
    let trials = ctx.cfg.budgets.trials;
    let analyses = ctx.annealed_analyses(ctx.cfg.seeds.environment, trials)?;
    let window = ctx.walk_window(5)?;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let (mut t1, mut t5) = (0.0, 0.0);
    for (trial, a) in analyses.iter().enumerate() {
        let env = a.sol.env().with_window(window);
        let walker = Walker::new(&env, &a.y_minus1.y)?;
        let traj = walker.run(ctx.cfg.seeds.walk, trial as u64, StopRule::hit(5, u64::MAX))?;
        let h = crate::simulator::hitting_record(&traj, 5)?;
        let diff = h.tau_k[4] as f64 - h.tau_k[0] as f64;
        t1 += h.tau_k[0] as f64;
        t5 += h.tau_k[4] as f64;
        sum += diff;
        sum_sq += diff * diff;
    }
    let est = MeanEstimate::from_sums(sum, sum_sq, trials);
    let z = z_score(est.mean, 0.0, est.se);
    Ok(Outcome::check(
        z.abs() <= SIGMA_LIMIT,
        format!(
            "mean tau_1 {:.5}, mean tau_5 {:.5}, paired z = {z:.3}",
            t1 / trials as f64,
            t5 / trials as f64
        ),
    ))
}

fn im_consistency(ctx: &SuiteContext) -> Result<Outcome> {
    let count = annealed_sample_count(&ctx.law, ctx.cfg.budgets.samples.min(20));
    let mut worst: f64 = 0.0;
    for a in ctx.annealed_analyses(ctx.cfg.seeds.environment, count)? {
        let s: f64 = a.density.per_site.iter().sum();
        worst = worst.max((s - a.density.total).abs() / a.density.total.abs().max(1.0));
        if a.density.per_site.iter().any(|&x| x < 0.0) {
            return Ok(Outcome::check(false, "negative density entry"));
        }
    }
    Ok(Outcome::at_most("max relative |sum Lambda_i - Lambda|", worst, 1e-12))
}

/// Seed offset separating the environments of the mean-one check from the
/// ones used to estimate the velocity.
const INDEPENDENT_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

fn im_mean_one(ctx: &SuiteContext) -> Result<Outcome> {
    let v = ctx.velocity()?;
    let count = annealed_sample_count(&ctx.law, ctx.cfg.budgets.samples);
    let seed = ctx.cfg.seeds.environment ^ INDEPENDENT_SEED;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for a in ctx.annealed_analyses(seed, count)? {
        sum += a.density.total;
        sum_sq += a.density.total.powi(2);
    }
    let s = MeanEstimate::from_sums(sum, sum_sq, count);
    let mean = v.v_p * s.mean;
    if v.exact {
        return Ok(Outcome::at_most("|mean Lambda - 1| over all phases", (mean - 1.0).abs(), NUMERIC_TOL));
    }
    let sigma = ((v.v_p * s.se).powi(2) + (s.mean * v.se).powi(2)).sqrt();
    let z = z_score(mean, 1.0, sigma);
    Ok(Outcome::check(
        z.abs() <= SIGMA_LIMIT,
        format!("mean Lambda {mean:.6} +- {sigma:.2e} over {count} environments, z = {z:.3}"),
    ))
}

fn im_quenched_annealed(ctx: &SuiteContext) -> Result<Outcome> {
    let v = ctx.velocity()?;
    let cfg = ctx.cfg.analysis_config();
    let mut total = 0.0;
    for s in 0..v.samples {
        // Independent route: one fixed wide solve per environment.
        let base = annealed_environment(&ctx.law, ctx.cfg.seeds.environment, s);
        let span = analyze(&base, &cfg)?.span as i64;
        let sol = solve_on(&base, LayerRange { lo: -4 * span, hi: 0 }, &cfg.exit)?;
        let y = stationary_vector(&sol, -1, cfg.stationary_tol, usize::MAX)?;
        total += crate::branching::expected_t1(&sol, &y.y, cfg.series_tol, cfg.max_terms)?.value;
    }
    let mean = total / v.samples as f64;
    Ok(Outcome::at_most(
        "relative |1/v_p - annealed E T1|",
        (1.0 / v.v_p - mean).abs() / mean,
        1e-9,
    ))
}

fn im_shift_identity(ctx: &SuiteContext) -> Result<Outcome> {
    let a = ctx.analysis()?;
    let y0 = stationary_vector(&a.sol, 0, ctx.cfg.analysis_config().stationary_tol, usize::MAX)?;
    let gap = (y0.row() - a.y_minus1.row() * a.sol.zeta(0)?).amax();
    Ok(Outcome::at_most("|y_0 - y_{-1} zeta_0|", gap, NUMERIC_TOL))
}

fn im_kernel_invariance(ctx: &SuiteContext) -> Result<Outcome> {
    let rep = verify_invariance(
        &ctx.law,
        &InvarianceConfig {
            samples: ctx.cfg.budgets.trials,
            chain_steps: CHAIN_STEPS,
            seed: ctx.cfg.seeds.walk,
        },
        &ctx.cfg.analysis_config(),
    )?;
    let site = rep.max_abs_site_z();
    let functional = rep.max_abs_functional_z();
    let tv = rep.comparisons.iter().map(|c| c.tv).fold(0.0, f64::max);
    Ok(Outcome::check(
        site <= SIGMA_LIMIT && functional <= PMF_Z_LIMIT,
        format!("max site |z| {site:.3}, max functional |z| {functional:.3}, max TV {tv:.2e}"),
    ))
}

fn im_lln(ctx: &SuiteContext) -> Result<Outcome> {
    let v = ctx.velocity()?;
    let trials = ctx.cfg.budgets.velocity_trials;
    let horizon = ctx.cfg.budgets.horizon;
    let analyses = ctx.annealed_analyses(ctx.cfg.seeds.environment ^ INDEPENDENT_SEED, trials)?;
    let lo = ctx.walk_window(0)?.lo;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (trial, a) in analyses.iter().enumerate() {
        let env = a.sol.env().with_window(LayerRange {
            lo,
            hi: horizon as i64 + 1,
        });
        let walker = Walker::new(&env, &a.y_minus1.y)?;
        let mut rng = trial_rng(ctx.cfg.seeds.walk, trial as u64);
        let mut s = walker.start(&mut rng);
        for _ in 0..horizon {
            s = walker.step(s, &mut rng, Some(trial as u64))?;
        }
        let x = s.layer as f64 / horizon as f64;
        sum += x;
        sum_sq += x * x;
    }
    let est = MeanEstimate::from_sums(sum, sum_sq, trials);
    let sigma = (est.se.powi(2) + v.se.powi(2)).sqrt();
    let z = z_score(est.mean, v.v_p, sigma);
    Ok(Outcome::check(
        z.abs() <= SIGMA_LIMIT,
        format!("empirical {:.6} +- {:.2e}, v_p {:.8}, z = {z:.3}", est.mean, sigma, v.v_p),
    ))
}

/// Convenience wrapper: builds the context and runs the builtin registry.
pub fn run_suite(cfg: RunConfig) -> Result<Vec<PropertyResult>> {
    let ctx = SuiteContext::new(cfg)?;
    Ok(PropertyRegistry::builtin().run(&ctx))
}
