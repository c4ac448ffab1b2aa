//! Density of the invariant measure of the environment seen from the walker,
//! the annealed velocity, and a Monte Carlo check of invariance under the
//! environment-site kernel `K`.
//!
//! With `mu = y_{-1}` the density of site `i` is
//! `Lambda^(i) = v_p [y_{-1} sum_k zeta_0 ... zeta_{k-1} A_k ... A_1 u~_0](i)`.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::{shift, EnvironmentLaw, LayerRange, StripEnvironment};
use crate::error::{Error, Result};
use crate::exit_kernel::{stationary_vector, ExitSolution};
use crate::linalg::{Mat, RowVec};
use crate::quenched::{analyze, annealed_environment, annealed_sample_count, AnalysisConfig, QuenchedAnalysis};
use crate::series::{GeometricTail, SeriesResult, Step};
use crate::simulator::{trial_rng, z_score, MeanEstimate, Walker};

/// Unscaled density series `y sum_k zeta_0 ... zeta_{k-1} A_k ... A_1 u~_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySum {
    pub per_site: Vec<f64>,
    /// Same series with `u_0` in place of `u~_0`, summed as scalars.
    pub total: f64,
    pub terms_used: usize,
    pub tail_bound: f64,
    pub converged: bool,
}

/// Sums the density series with the start row `y` (normally `y_{-1}`),
/// using layers `0..=hi` of `sol`.
pub fn density_series(sol: &ExitSolution, y: &RowVec, tol: f64, max_terms: usize) -> Result<DensitySum> {
    let d = sol.dim();
    let u_tilde0 = sol.u_tilde(0)?;
    let u0 = sol.u_vec(0)?;
    let mut left = y.clone();
    let mut right = Mat::identity(d, d);
    let mut per_site = RowVec::zeros(d);
    let mut total = 0.0;
    let mut tail = GeometricTail::new(tol);
    let mut k = 0i64;
    let hi = sol.layers().hi;
    loop {
        let weighted = &left * &right;
        let term = &weighted * u_tilde0;
        per_site += &term;
        total += (&weighted * u0)[0];
        if let Step::Done { tail_bound } = tail.push(term.iter().map(|x| x.abs()).sum())? {
            return Ok(DensitySum {
                per_site: per_site.iter().copied().collect(),
                total,
                terms_used: tail.terms(),
                tail_bound,
                converged: true,
            });
        }
        k += 1;
        if k > hi || tail.terms() >= max_terms {
            return Ok(DensitySum {
                per_site: per_site.iter().copied().collect(),
                total,
                terms_used: tail.terms(),
                tail_bound: tail.tail_bound(),
                converged: false,
            });
        }
        left = left * sol.zeta(k - 1)?;
        right = sol.a_mat(k)? * right;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub lambda_i: Vec<f64>,
    pub lambda_total: f64,
    pub v_p: f64,
    /// Unscaled per-site series.
    pub series: SeriesResult<Vec<f64>>,
    pub mu_used: Vec<f64>,
}

impl DensityReport {
    pub fn from_sum(sum: &DensitySum, v_p: f64, mu_used: Vec<f64>) -> Result<Self> {
        if !(v_p > 0.0) {
            return Err(Error::ZeroVelocity(v_p));
        }
        Ok(Self {
            lambda_i: sum.per_site.iter().map(|x| v_p * x).collect(),
            lambda_total: v_p * sum.total,
            v_p,
            series: SeriesResult {
                value: sum.per_site.clone(),
                terms_used: sum.terms_used,
                tail_bound: sum.tail_bound,
                converged: sum.converged,
            },
            mu_used,
        })
    }
}

/// Density of the environment `sol.env()` for the velocity `v_p`.
///
/// `sol` must cover layer `-1` deep enough for `y_{-1}` and layers to the
/// right of 0 for the series; a truncated series is reported with
/// `converged = false`.
pub fn density(sol: &ExitSolution, v_p: f64, tol: f64, max_terms: usize) -> Result<DensityReport> {
    if !(v_p > 0.0) {
        return Err(Error::ZeroVelocity(v_p));
    }
    let y = stationary_vector(sol, -1, tol, usize::MAX)?;
    let sum = density_series(sol, &y.row(), tol, max_terms)?;
    DensityReport::from_sum(&sum, v_p, y.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityReport {
    pub v_p: f64,
    /// Delta-method standard error; zero for exact phase averages.
    pub se: f64,
    /// Annealed `E T_1` with `mu = y_{-1}`.
    pub mean_t1: f64,
    pub t1_se: f64,
    pub samples: u64,
    /// True when the law has a period and all phases were averaged.
    pub exact: bool,
}

/// `v_p = 1 / E T_1`, the expectation taken over environments and walks
/// with `mu = y_{-1}` in each environment.
pub fn velocity(
    law: &Arc<EnvironmentLaw>,
    samples: u64,
    seed: u64,
    tol: f64,
    cfg: &AnalysisConfig,
) -> Result<VelocityReport> {
    let n = annealed_sample_count(law, samples);
    if n == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for s in 0..n {
        let a = analyze(&annealed_environment(law, seed, s), cfg)?;
        let t = a.expected_t1.value;
        sum += t;
        sum_sq += t * t;
    }
    velocity_from_sums(sum, sum_sq, n, law.period().is_some(), tol)
}

fn velocity_from_sums(sum: f64, sum_sq: f64, n: u64, exact: bool, tol: f64) -> Result<VelocityReport> {
    let mut t1 = MeanEstimate::from_sums(sum, sum_sq, n);
    if exact {
        t1.se = 0.0;
    }
    if !(t1.mean.is_finite() && t1.mean <= 1.0 / tol) {
        return Err(Error::ZeroVelocity(1.0 / t1.mean));
    }
    let v_p = 1.0 / t1.mean;
    Ok(VelocityReport {
        v_p,
        se: t1.se * v_p * v_p,
        mean_t1: t1.mean,
        t1_se: t1.se,
        samples: n,
        exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Move {
    Right,
    Stay,
    Left,
}

/// `K(omega, i; ., j)`: the probability of moving from site `i` to site `j`
/// with the given layer move, and the environment seen from the new
/// position.
pub fn kernel_step(env: &StripEnvironment, i: usize, mv: Move, j: usize) -> Result<(f64, StripEnvironment)> {
    let d = env.dim();
    if i >= d || j >= d {
        return Err(Error::OutOfRange(format!("sites ({i}, {j}) not in 0..{d}")));
    }
    env.require(LayerRange { lo: -1, hi: 1 })?;
    let t = env.triple(0)?;
    Ok(match mv {
        Move::Right => (t.p[(i, j)], shift(env, 1)),
        Move::Stay => (t.r[(i, j)], env.clone()),
        Move::Left => (t.q[(i, j)], shift(env, -1)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceConfig {
    pub samples: u64,
    pub chain_steps: u64,
    pub seed: u64,
}

/// Weighted estimates at one step of the chain. Functionals are
/// `P_0(0, 0)` of the current environment and the indicator that its
/// layer 0 carries atom 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEstimate {
    pub step: u64,
    pub site_marginal: Vec<f64>,
    pub site_se: Vec<f64>,
    pub functionals: Vec<f64>,
    pub functional_se: Vec<f64>,
}

/// Paired comparison of two steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepComparison {
    pub from: u64,
    pub to: u64,
    pub tv: f64,
    pub site_z: Vec<f64>,
    pub functional_z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub samples: u64,
    pub chain_steps: u64,
    pub v_p: f64,
    /// Sample mean of `Lambda`; close to 1.
    pub mean_weight: f64,
    pub steps: Vec<StepEstimate>,
    pub comparisons: Vec<StepComparison>,
}

impl InvarianceReport {
    pub fn max_abs_site_z(&self) -> f64 {
        self.comparisons
            .iter()
            .flat_map(|c| c.site_z.iter())
            .map(|z| z.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_functional_z(&self) -> f64 {
        self.comparisons
            .iter()
            .flat_map(|c| c.functional_z.iter())
            .map(|z| z.abs())
            .fold(0.0, f64::max)
    }
}

const FUNCTIONALS: usize = 2;

/// Self-normalized mean and standard error of `g` under weights `w`.
fn ratio_estimate(w: &[f64], g: impl Fn(usize) -> f64) -> (f64, f64) {
    let total: f64 = w.iter().sum();
    let mean = w.iter().enumerate().map(|(s, &ws)| ws * g(s)).sum::<f64>() / total;
    let var: f64 = w
        .iter()
        .enumerate()
        .map(|(s, &ws)| (ws * (g(s) - mean)).powi(2))
        .sum();
    (mean, var.sqrt() / total)
}

/// Starts the environment-site chain from `Lambda^(i) P`, by weighting
/// environments drawn from the law with `Lambda` and drawing the site with
/// probabilities `Lambda^(i) / Lambda`, then compares the weighted site
/// marginal and environment functionals at steps 0, 1 and `chain_steps`.
pub fn verify_invariance(
    law: &Arc<EnvironmentLaw>,
    cfg: &InvarianceConfig,
    analysis: &AnalysisConfig,
) -> Result<InvarianceReport> {
    if cfg.samples < 2 || cfg.chain_steps == 0 {
        return Err(Error::InvalidArgument(
            "verify_invariance needs at least 2 samples and 1 chain step".into(),
        ));
    }
    let d = law.dim;
    let record_at: Vec<u64> = [0, 1, cfg.chain_steps]
        .into_iter()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let period = law.period();
    let mut cache: HashMap<u64, Arc<QuenchedAnalysis>> = HashMap::new();
    let reach = cfg.chain_steps as i64 + 1;
    let mut weights = Vec::with_capacity(cfg.samples as usize);
    let mut t1_sum = 0.0;
    let mut t1_sq = 0.0;
    // values[step][s] = (site indicator..., functionals...)
    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(cfg.samples as usize); record_at.len()];
    for s in 0..cfg.samples {
        let base = annealed_environment(law, cfg.seed, s);
        let a = match period {
            Some(p) => {
                let key = s % p as u64;
                match cache.get(&key) {
                    Some(a) => Arc::clone(a),
                    None => {
                        let a = Arc::new(analyze(&base, analysis)?);
                        cache.insert(key, Arc::clone(&a));
                        a
                    }
                }
            }
            None => Arc::new(analyze(&base, analysis)?),
        };
        t1_sum += a.expected_t1.value;
        t1_sq += a.expected_t1.value.powi(2);
        let site_weights = &a.density.per_site;
        let w: f64 = site_weights.iter().sum();
        weights.push(w);
        let mu: Vec<f64> = site_weights.iter().map(|x| x / w).collect();
        let env = base.with_window(LayerRange { lo: -reach, hi: reach });
        let walker = Walker::new(&env, &mu)?;
        let mut rng = trial_rng(cfg.seed ^ 0x005E_ED0F_C4A1, s);
        let mut state = walker.start(&mut rng);
        let mut next_record = 0;
        loop {
            if state.time == record_at[next_record] {
                let t = env.triple(state.layer)?;
                let mut row = vec![0.0; d + FUNCTIONALS];
                row[state.site] = 1.0;
                row[d] = t.p[(0, 0)];
                row[d + 1] = f64::from(u8::from(env.atom_index(state.layer)? == 0));
                values[next_record].push(row);
                next_record += 1;
                if next_record == record_at.len() {
                    break;
                }
            }
            state = walker.step(state, &mut rng, Some(s))?;
        }
    }
    let samples = cfg.samples;
    let vel = velocity_from_sums(t1_sum, t1_sq, samples, period.is_some(), f64::MIN_POSITIVE)?;
    let v_p = vel.v_p;
    let mean_weight = v_p * weights.iter().sum::<f64>() / samples as f64;

    let steps = record_at
        .iter()
        .zip(&values)
        .map(|(&step, rows)| {
            let (mut m, mut se) = (Vec::new(), Vec::new());
            for c in 0..d + FUNCTIONALS {
                let (mean, err) = ratio_estimate(&weights, |s| rows[s][c]);
                m.push(mean);
                se.push(err);
            }
            StepEstimate {
                step,
                site_marginal: m[..d].to_vec(),
                site_se: se[..d].to_vec(),
                functionals: m[d..].to_vec(),
                functional_se: se[d..].to_vec(),
            }
        })
        .collect::<Vec<_>>();

    let comparisons = (1..record_at.len())
        .map(|b| {
            let a = b - 1;
            let z: Vec<f64> = (0..d + FUNCTIONALS)
                .map(|c| {
                    let (diff, se) = ratio_estimate(&weights, |s| values[b][s][c] - values[a][s][c]);
                    z_score(diff, 0.0, se)
                })
                .collect();
            let tv = 0.5
                * (0..d)
                    .map(|i| (steps[b].site_marginal[i] - steps[a].site_marginal[i]).abs())
                    .sum::<f64>();
            StepComparison {
                from: record_at[a],
                to: record_at[b],
                tv,
                site_z: z[..d].to_vec(),
                functional_z: z[d..].to_vec(),
            }
        })
        .collect();
    Ok(InvarianceReport {
        samples,
        chain_steps: cfg.chain_steps,
        v_p,
        mean_weight,
        steps,
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::TransitionTriple;
    use crate::quenched::solve_around_zero;
    use approx::assert_abs_diff_eq;

    fn scalar_law(p: f64, q: f64, r: f64) -> Arc<EnvironmentLaw> {
        Arc::new(EnvironmentLaw::homogeneous(TransitionTriple::scalar(p, q, r)))
    }

    #[test]
    fn scalar_density_is_one() {
        let law = scalar_law(0.7, 0.2, 0.1);
        let sol = solve_around_zero(&annealed_environment(&law, 0, 0), 200, &Default::default()).unwrap();
        let rep = density(&sol, 0.5, 1e-14, 10_000).unwrap();
        assert!(rep.series.converged);
        assert_abs_diff_eq!(rep.lambda_total, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.lambda_i[0], 1.0, epsilon = 1e-12);
        assert!(matches!(density(&sol, 0.0, 1e-14, 10), Err(Error::ZeroVelocity(_))));
    }

    #[test]
    fn scalar_velocity() {
        let v = velocity(&scalar_law(0.7, 0.2, 0.1), 50, 0, 1e-9, &Default::default()).unwrap();
        assert!(v.exact);
        assert_eq!(v.samples, 1);
        assert_abs_diff_eq!(v.v_p, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pure_right_velocity_is_one() {
        let v = velocity(&scalar_law(1.0, 0.0, 0.0), 1, 0, 1e-9, &Default::default()).unwrap();
        assert_abs_diff_eq!(v.v_p, 1.0, epsilon = 1e-15);
        let v = velocity(&scalar_law(0.8, 0.0, 0.2), 1, 0, 1e-9, &Default::default()).unwrap();
        assert_abs_diff_eq!(v.v_p, 0.8, epsilon = 1e-14);
    }

    #[test]
    fn homogeneous_density_is_one() {
        let t = TransitionTriple::from_rows(
            &[vec![0.4, 0.2], vec![0.1, 0.5]],
            &[vec![0.1, 0.05], vec![0.1, 0.1]],
            &[vec![0.15, 0.1], vec![0.1, 0.1]],
        )
        .unwrap();
        let law = Arc::new(EnvironmentLaw::homogeneous(t));
        let cfg = AnalysisConfig::default();
        let v = velocity(&law, 1, 0, 1e-9, &cfg).unwrap();
        let a = analyze(&annealed_environment(&law, 0, 0), &cfg).unwrap();
        let rep = DensityReport::from_sum(&a.density, v.v_p, a.y_minus1.y.clone()).unwrap();
        assert_abs_diff_eq!(rep.lambda_total, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.lambda_i.iter().sum::<f64>(), rep.lambda_total, epsilon = 1e-12);
    }

    #[test]
    fn kernel_step_scalar() {
        let law = scalar_law(0.7, 0.2, 0.1);
        let env = StripEnvironment::sample_unchecked(law, LayerRange { lo: -3, hi: 3 }, 0);
        let (p, e) = kernel_step(&env, 0, Move::Right, 0).unwrap();
        assert_eq!(p, 0.7);
        assert_eq!(e.window(), LayerRange { lo: -4, hi: 2 });
        assert_eq!(kernel_step(&env, 0, Move::Stay, 0).unwrap().0, 0.1);
        let (q, e) = kernel_step(&env, 0, Move::Left, 0).unwrap();
        assert_eq!(q, 0.2);
        assert_eq!(e.window(), LayerRange { lo: -2, hi: 4 });
        assert!(kernel_step(&env, 1, Move::Stay, 0).is_err());
    }

    #[test]
    fn single_site_is_trivially_invariant() {
        let law = scalar_law(0.7, 0.2, 0.1);
        let cfg = InvarianceConfig {
            samples: 200,
            chain_steps: 10,
            seed: 1,
        };
        let rep = verify_invariance(&law, &cfg, &AnalysisConfig::default()).unwrap();
        assert_eq!(rep.steps.len(), 3);
        assert!(rep.comparisons.iter().all(|c| c.tv == 0.0));
        assert_eq!(rep.max_abs_site_z(), 0.0);
        assert_abs_diff_eq!(rep.mean_weight, 1.0, epsilon = 1e-12);
    }
}
