//! Subcommands, looked up by name in a [`CommandRegistry`].

use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use stripwalk::branching::{clamp_probability, pmf_u, pmf_z, OffspringQuery};
use stripwalk::config::RunConfig;
use stripwalk::environment::{
    check_layer_communication, sample_environment, Connectivity, EnvironmentLaw, LayerRange, StripEnvironment,
    Violation,
};
use stripwalk::exit_kernel::{lyapunov, LyapunovEstimate};
use stripwalk::invariant_measure::{velocity, DensityReport, VelocityReport};
use stripwalk::linalg::Mat;
use stripwalk::quenched::{analyze, solve_on, QuenchedAnalysis};
use stripwalk::simulator::{
    compare, default_window, empirical_velocity, monte_carlo, MonteCarloConfig, MonteCarloReport, VelocityEstimate,
};
use stripwalk::suite::{run_suite, PropertyResult};

use crate::error::CliError;
use crate::report::{num, to_json, Header, OutputFormat, Report, Table};

/// Number of products `A_n ... A_1` used by `classify`.
pub const CLASSIFY_LAYERS: i64 = 1024;

/// Options that are not part of the run configuration.
#[derive(Debug, Clone)]
pub struct Options {
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    pub layer: i64,
    pub max_count: usize,
    /// Walk window given on the command line.
    pub walk_window: Option<LayerRange>,
}

pub struct RunContext {
    pub command: &'static str,
    pub cfg: RunConfig,
    pub law: Arc<EnvironmentLaw>,
    pub opts: Options,
}

impl RunContext {
    pub fn new(command: &'static str, cfg: RunConfig, opts: Options) -> Result<Self, CliError> {
        let law = cfg.law()?;
        Ok(Self {
            command,
            cfg,
            law,
            opts,
        })
    }

    /// The configured environment; fails on laws with invalid atoms.
    fn environment(&self) -> Result<StripEnvironment, CliError> {
        Ok(sample_environment(
            Arc::clone(&self.law),
            LayerRange { lo: 0, hi: 0 },
            self.cfg.seeds.environment,
        )?)
    }

    fn analysis(&self) -> Result<QuenchedAnalysis, CliError> {
        Ok(analyze(&self.environment()?, &self.cfg.analysis_config())?)
    }

    fn lyapunov(&self) -> Result<LyapunovEstimate, CliError> {
        let sol = solve_on(
            &self.environment()?,
            LayerRange {
                lo: 1,
                hi: CLASSIFY_LAYERS,
            },
            &self.cfg.exit_config(),
        )?;
        Ok(lyapunov(
            &sol,
            CLASSIFY_LAYERS as usize,
            self.cfg.tolerances.lyapunov_margin,
        )?)
    }

    fn velocity(&self) -> Result<VelocityReport, CliError> {
        Ok(velocity(
            &self.law,
            self.cfg.budgets.samples,
            self.cfg.seeds.environment,
            self.cfg.tolerances.series,
            &self.cfg.analysis_config(),
        )?)
    }

    pub fn report<T: Serialize>(&self, result: &T) -> Result<String, CliError> {
        to_json(&Report {
            header: Header::now(),
            command: self.command,
            config: &self.cfg,
            seeds: self.cfg.seeds,
            result,
        })
    }
}

pub struct Output {
    pub json: String,
    pub tables: Vec<Table>,
    /// `(failed, total)` for `verify`.
    pub verify: Option<(usize, usize)>,
}

impl Output {
    fn new(json: String, tables: Vec<Table>) -> Self {
        Self {
            json,
            tables,
            verify: None,
        }
    }
}

pub trait Command: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    /// CSV files and their columns, shown in `--help`.
    fn csv_help(&self) -> &'static str;
    fn run(&self, ctx: &RunContext) -> Result<Output, CliError>;
}

#[derive(Default)]
pub struct CommandRegistry {
    commands: Vec<Box<dyn Command>>,
}

impl CommandRegistry {
    pub fn register(&mut self, c: Box<dyn Command>) {
        self.commands.push(c);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Command> {
        self.commands.iter().find(|c| c.name() == name).map(|c| c.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Command> {
        self.commands.iter().map(|c| c.as_ref())
    }

    pub fn builtin() -> Self {
        let mut r = Self::default();
        r.register(Box::new(Validate));
        r.register(Box::new(Classify));
        r.register(Box::new(Exit));
        r.register(Box::new(ExpectT1));
        r.register(Box::new(Pmf));
        r.register(Box::new(Simulate));
        r.register(Box::new(Verify));
        r.register(Box::new(Density));
        r.register(Box::new(Velocity));
        r
    }
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

struct Validate;

#[derive(Serialize)]
struct AtomCheck {
    atom: usize,
    valid: bool,
    violations: Vec<Violation>,
}

#[derive(Serialize)]
struct ValidateResult {
    kind: &'static str,
    dim: usize,
    valid: bool,
    atoms: Vec<AtomCheck>,
    /// Communication proxy at layer 0 of the configured environment.
    layer_communication: Connectivity,
}

impl Command for Validate {
    fn name(&self) -> &'static str {
        "validate"
    }

    fn about(&self) -> &'static str {
        "Check every atom of the environment law"
    }

    fn csv_help(&self) -> &'static str {
        "validate.csv: atom, valid, violations (names separated by ';')"
    }

    fn run(&self, ctx: &RunContext) -> Result<Output, CliError> {
        let atoms: Vec<AtomCheck> = ctx
            .law
            .validate(ctx.cfg.tolerances.stoch)
            .into_iter()
            .enumerate()
            .map(|(atom, r)| AtomCheck {
                atom,
                valid: r.is_valid(),
                violations: r.violations,
            })
            .collect();
        let env = StripEnvironment::sample_unchecked(
            Arc::clone(&ctx.law),
            LayerRange { lo: -1, hi: 1 },
            ctx.cfg.seeds.environment,
        );
        let result = ValidateResult {
            kind: ctx.law.kind(),
            dim: ctx.law.dim,
            valid: atoms.iter().all(|a| a.valid),
            layer_communication: check_layer_communication(&env, 0)?,
            atoms,
        };
        let mut t = Table::new("validate", &["atom", "valid", "violations"]);
        for a in &result.atoms {
            let names: Vec<&str> = a.violations.iter().map(Violation::name).collect();
            t.push(vec![a.atom.to_string(), a.valid.to_string(), names.join(";")]);
        }
        Ok(Output::new(ctx.report(&result)?, vec![t]))
    }
}

struct Classify;

impl Command for Classify {
    fn name(&self) -> &'static str {
        "classify"
    }

    fn about(&self) -> &'static str {
        "Estimate the top Lyapunov exponent lambda+ of A_n ... A_1 and classify transience"
    }

    fn csv_help(&self) -> &'static str {
        "classify.csv: lambda_plus, n_terms, classification"
    }

    fn run(&self, ctx: &RunContext) -> Result<Output, CliError> {
        let l = ctx.lyapunov()?;
        let mut t = Table::new("classify", &["lambda_plus", "n_terms", "classification"]);
        t.push(vec![
            num(l.lambda_plus),
            l.n_terms.to_string(),
            serde_json::to_value(l.classification)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
        ]);
        Ok(Output::new(ctx.report(&l)?, vec![t]))
    }
}

struct Exit;

#[derive(Serialize)]
struct LayerTable {
    layer: i64,
    atom: usize,
    zeta: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    u: Vec<f64>,
    u_tilde: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ExitResult {
    window: LayerRange,
    start_depth: usize,
    depth_change: f64,
    residual: f64,
    layers: Vec<LayerTable>,
}

impl Command for Exit {
    fn name(&self) -> &'static str {
        "exit"
    }

    fn about(&self) -> &'static str {
        "Exit matrices zeta_n and the blocks A_n, u_n, u~_n on the configured window"
    }

    fn csv_help(&self) -> &'static str {
        "exit.csv: layer, i, j, zeta, a, u_tilde, u (u is the row sum u_n(i))"
    }

    fn run(&self, ctx: &RunContext) -> Result<Output, CliError> {
        let sol = solve_on(&ctx.environment()?, ctx.cfg.window, &ctx.cfg.exit_config())?;
        let mut layers = Vec::new();
        let mut t = Table::new("exit", &["layer", "i", "j", "zeta", "a", "u_tilde", "u"]);
        for n in ctx.cfg.window.lo..=ctx.cfg.window.hi {
            let k = sol.kernel(n)?;
            let d = sol.dim();
            for i in 0..d {
                for j in 0..d {
                    t.push(vec![
                        n.to_string(),
                        i.to_string(),
                        j.to_string(),
                        num(k.zeta[(i, j)]),
                        num(k.a_mat[(i, j)]),
                        num(k.u_tilde[(i, j)]),
                        num(k.u_vec[i]),
                    ]);
                }
            }
            layers.push(LayerTable {
                layer: n,
                atom: sol.env().atom_index(n)?,
                zeta: rows(&k.zeta),
                a: rows(&k.a_mat),
                u: k.u_vec.iter().copied().collect(),
                u_tilde: rows(&k.u_tilde),
            });
        }
        let result = ExitResult {
            window: ctx.cfg.window,
            start_depth: sol.start_depth,
            depth_change: sol.depth_change,
            residual: sol.residual,
            layers,
        };
        Ok(Output::new(ctx.report(&result)?, vec![t]))
    }
}

struct ExpectT1;

#[derive(Serialize)]
struct ExpectResult {
    value: f64,
    terms_used: usize,
    tail_bound: f64,
    converged: bool,
    /// Initial distribution: the stationary vector `y_{-1}`.
    mu: Vec<f64>,
}

impl Command for ExpectT1 {
    fn name(&self) -> &'static str {
        "expect-t1"
    }

    fn about(&self) -> &'static str {
        "Quenched mean hitting time of layer 1 from layer 0, started from y_{-1}"
    }

    fn csv_help(&self) -> &'static str {
        "expect-t1.csv: value, terms_used, tail_bound, converged"
    }

    fn run(&self, ctx: &RunContext) -> Result<Output, CliError> {
        let a = ctx.analysis()?;
        let s = &a.expected_t1;
        let result = ExpectResult {
            value: s.value,
            terms_used: s.terms_used,
            tail_bound: s.tail_bound,
            converged: s.converged,
            mu: a.y_minus1.y.clone(),
        };
        let mut t = Table::new("expect-t1", &["value", "terms_used", "tail_bound", "converged"]);
        t.push(vec![
            num(s.value),
            s.terms_used.to_string(),
            num(s.tail_bound),
            s.converged.to_string(),
        ]);
        Ok(Output::new(ctx.report(&result)?, vec![t]))
    }
}

struct Pmf;

#[derive(Serialize)]
struct SitePmf {
    site: usize,
    probabilities: Vec<f64>,
}

#[derive(Serialize)]
struct PmfResult {
    layer: i64,
    max_count: usize,
    down: Vec<SitePmf>,
    lateral: Vec<SitePmf>,
}

impl Command for Pmf {
    fn name(&self) -> &'static str {
        "pmf"
    }

    fn about(&self) -> &'static str {
        "Offspring laws of |U_n| and |Z_n| for each parent site at --layer"
    }

    fn csv_help(&self) -> &'static str {
        "pmf_u.csv and pmf_z.csv: layer, site, count, probability"
    }

    fn run(&self, ctx: &RunContext) -> Result<Output, CliError> {
        let a = ctx.analysis()?;
        let layer = ctx.opts.layer;
        let d = a.sol.dim();
        let mut result = PmfResult {
            layer,
            max_count: ctx.opts.max_count,
            down: Vec::new(),
            lateral: Vec::new(),
        };
        let columns = ["layer", "site", "count", "probability"];
        let mut tu = Table::new("pmf_u", &columns);
        let mut tz = Table::new("pmf_z", &columns);
        for site in 0..d {
            let (mut pu, mut pz) = (Vec::new(), Vec::new());
            for count in 0..=ctx.opts.max_count {
                let q = OffspringQuery {
                    layer,
                    parent_site: site,
                    count,
                };
                let (u, z) = (clamp_probability(pmf_u(&a.sol, &q)?), clamp_probability(pmf_z(&a.sol, &q)?));
                let key = vec![layer.to_string(), site.to_string(), count.to_string()];
                tu.push([key.clone(), vec![num(u)]].concat());
                tz.push([key, vec![num(z)]].concat());
                pu.push(u);
                pz.push(z);
            }
            result.down.push(SitePmf {
                site,
                probabilities: pu,
            });
            result.lateral.push(SitePmf {
                site,
                probabilities: pz,
            });
        }
        Ok(Output::new(ctx.report(&result)?, vec![tu, tz]))
    }
}

struct Simulate;

#[derive(Serialize)]
struct SimulateResult {
    window: LayerRange,
    mu: Vec<f64>,
    monte_carlo: MonteCarloReport,
    velocity: VelocityEstimate,
}

impl Command for Simulate {
    fn name(&self) -> &'static str {
        "simulate"
    }

    fn about(&self) -> &'static str {
        "Monte Carlo walks from y_{-1}: hitting times, offspring laws and mean counts against the closed forms"
    }

    fn csv_help(&self) -> &'static str {
        "simulate_pmf.csv: layer, parent, kind, count_lo, count_hi, parents, observed, empirical, analytic, se, z\n\
         simulate_means.csv: quantity, layer, site, empirical, se, analytic, z"
    }

    fn run(&self, ctx: &RunContext) -> Result<Output, CliError> {
        let a = ctx.analysis()?;
        let window = match ctx.opts.walk_window {
            Some(w) => w,
            None => default_window(ctx.lyapunov()?.lambda_plus, 1),
        };
        let base = a.sol.env();
        let mu = a.y_minus1.y.clone();
        let mc = MonteCarloConfig {
            trials: ctx.cfg.budgets.trials,
            seed: ctx.cfg.seeds.walk,
            depth: 2,
            ..MonteCarloConfig::default()
        };
        let summary = monte_carlo(&base.with_window(window), &mu, &mc)?;
        let report = compare(&summary, &a.sol, &mu, ctx.cfg.tolerances.series, ctx.cfg.budgets.max_terms)?;
        let horizon = ctx.cfg.budgets.horizon;
        let vel_env = base.with_window(LayerRange {
            lo: window.lo,
            hi: window.hi.max(horizon as i64 + 1),
        });
        let velocity = empirical_velocity(&vel_env, &mu, horizon, ctx.cfg.budgets.velocity_trials, ctx.cfg.seeds.walk)?;

        let mut bins = Table::new(
            "simulate_pmf",
            &[
                "layer", "parent", "kind", "count_lo", "count_hi", "parents", "observed", "empirical", "analytic", "se",
                "z",
            ],
        );
        for b in &report.pmf_bins {
            let kind = match b.kind {
                stripwalk::simulator::OffspringKind::Down => "down",
                stripwalk::simulator::OffspringKind::Lateral => "lateral",
            };
            bins.push(vec![
                b.layer.to_string(),
                b.parent.to_string(),
                kind.into(),
                b.count_lo.to_string(),
                b.count_hi.map(|h| h.to_string()).unwrap_or_default(),
                b.parents.to_string(),
                b.observed.to_string(),
                num(b.comparison.empirical),
                num(b.comparison.analytic),
                num(b.comparison.se),
                num(b.comparison.z),
            ]);
        }
        let mut means = Table::new(
            "simulate_means",
            &["quantity", "layer", "site", "empirical", "se", "analytic", "z"],
        );
        for (q, list) in [("U", &report.mean_u), ("N", &report.mean_n)] {
            for v in list {
                let c = v.comparison;
                means.push(vec![
                    q.into(),
                    v.layer.to_string(),
                    v.site.to_string(),
                    num(c.empirical),
                    num(c.se),
                    num(c.analytic),
                    num(c.z),
                ]);
            }
        }
        let c = report.t1_vs_series;
        means.push(vec![
            "T1".into(),
            "0".into(),
            String::new(),
            num(c.empirical),
            num(c.se),
            num(c.analytic),
            num(c.z),
        ]);
        let result = SimulateResult {
            window,
            mu,
            monte_carlo: report,
            velocity,
        };
        Ok(Output::new(ctx.report(&result)?, vec![bins, means]))
    }
}

struct Verify;

#[derive(Serialize)]
struct VerifyResult {
    passed: usize,
    failed: usize,
    properties: Vec<PropertyResult>,
}

impl Command for Verify {
    fn name(&self) -> &'static str {
        "verify"
    }

    fn about(&self) -> &'static str {
        "Run the property suite and print PASS/FAIL per property (exit status 3 on any failure)"
    }

    fn csv_help(&self) -> &'static str {
        "verify.csv: module, property, passed, detail"
    }

    fn run(&self, ctx: &RunContext) -> Result<Output, CliError> {
        let properties = run_suite(ctx.cfg.clone())?;
        for p in &properties {
            eprintln!(
                "{} {}/{}: {}",
                if p.passed { "PASS" } else { "FAIL" },
                p.module,
                p.name,
                p.detail
            );
        }
        let failed = properties.iter().filter(|p| !p.passed).count();
        let total = properties.len();
        let mut t = Table::new("verify", &["module", "property", "passed", "detail"]);
        for p in &properties {
            t.push(vec![p.module.clone(), p.name.clone(), p.passed.to_string(), p.detail.clone()]);
        }
        let result = VerifyResult {
            passed: total - failed,
            failed,
            properties,
        };
        let mut out = Output::new(ctx.report(&result)?, vec![t]);
        out.verify = Some((failed, total));
        Ok(out)
    }
}

struct Density;

#[derive(Serialize)]
struct DensityResult {
    density: DensityReport,
    velocity: VelocityReport,
}

impl Command for Density {
    fn name(&self) -> &'static str {
        "density"
    }

    fn about(&self) -> &'static str {
        "Invariant density Lambda^(i) of the configured environment seen from the walker"
    }

    fn csv_help(&self) -> &'static str {
        "density.csv: site, lambda_i (a final row with site 'total' holds Lambda)"
    }

    fn run(&self, ctx: &RunContext) -> Result<Output, CliError> {
        let velocity = ctx.velocity()?;
        let a = ctx.analysis()?;
        let density = DensityReport::from_sum(&a.density, velocity.v_p, a.y_minus1.y.clone())?;
        let mut t = Table::new("density", &["site", "lambda_i"]);
        for (i, x) in density.lambda_i.iter().enumerate() {
            t.push(vec![i.to_string(), num(*x)]);
        }
        t.push(vec!["total".into(), num(density.lambda_total)]);
        Ok(Output::new(ctx.report(&DensityResult { density, velocity })?, vec![t]))
    }
}

struct Velocity;

impl Command for Velocity {
    fn name(&self) -> &'static str {
        "velocity"
    }

    fn about(&self) -> &'static str {
        "Annealed velocity v_p = 1 / E T_1 with a delta-method standard error"
    }

    fn csv_help(&self) -> &'static str {
        "velocity.csv: v_p, se, mean_t1, t1_se, samples, exact"
    }

    fn run(&self, ctx: &RunContext) -> Result<Output, CliError> {
        let v = ctx.velocity()?;
        let mut t = Table::new("velocity", &["v_p", "se", "mean_t1", "t1_se", "samples", "exact"]);
        t.push(vec![
            num(v.v_p),
            num(v.se),
            num(v.mean_t1),
            num(v.t1_se),
            v.samples.to_string(),
            v.exact.to_string(),
        ]);
        Ok(Output::new(ctx.report(&v)?, vec![t]))
    }
}
