//! Exit probabilities `zeta_n`, the auxiliary blocks `A_n`, `u_n`, `u~_n`,
//! the top Lyapunov exponent of `A_n ... A_1` and the stationary vectors
//! `y_n`.
//!
//! `zeta_n(i, j)` is the probability that a walk started at `(n, i)` first
//! enters layer `n + 1` at `(n + 1, j)`. It solves
//! `zeta_n = (I - Q_n zeta_{n-1} - R_n)^{-1} P_n`, which is evaluated here by
//! running the recursion forward from a uniform stochastic seed placed
//! `depth` layers to the left and doubling `depth` until the result stops
//! moving.

use serde::{Deserialize, Serialize};

use crate::environment::{LayerRange, StripEnvironment, TransitionTriple};
use crate::error::{Error, Result};
use crate::linalg::{inverse_checked, ones, row_sum_norm, uniform_row, uniform_stochastic, ColVec, Mat, RowVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitConfig {
    /// Max-row-sum change of `zeta` between consecutive depths that
    /// certifies convergence.
    pub tol: f64,
    pub initial_depth: usize,
    pub max_depth: usize,
    /// Condition numbers above `1 / tol_cond` are treated as singular.
    pub tol_cond: f64,
}

impl Default for ExitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            initial_depth: 16,
            max_depth: 4096,
            tol_cond: 1e-10,
        }
    }
}

/// Per-layer blocks derived from `zeta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKernel {
    pub zeta: Mat,
    /// `A_n = u~_n Q_n`.
    pub a_mat: Mat,
    /// `u_n = u~_n 1`.
    pub u_vec: ColVec,
    /// `u~_n = (I - Q_n zeta_{n-1} - R_n)^{-1}`.
    pub u_tilde: Mat,
}

/// Converged exit kernel on a range of layers.
#[derive(Debug, Clone)]
pub struct ExitSolution {
    env: StripEnvironment,
    layers: LayerRange,
    zeta_before: Mat,
    kernels: Vec<LayerKernel>,
    /// Truncation depth at which the solution was accepted.
    pub start_depth: usize,
    /// Change of `zeta` between the last two depths.
    pub depth_change: f64,
    /// `max_n ||zeta_n - (I - Q_n zeta_{n-1} - R_n)^{-1} P_n||` on the range.
    pub residual: f64,
}

impl ExitSolution {
    pub fn env(&self) -> &StripEnvironment {
        &self.env
    }

    pub fn dim(&self) -> usize {
        self.env.dim()
    }

    /// Layers on which `A_n`, `u_n` and `u~_n` are available. `zeta` is also
    /// available one layer further left.
    pub fn layers(&self) -> LayerRange {
        self.layers
    }

    fn index(&self, n: i64) -> Result<usize> {
        if self.layers.contains(n) {
            Ok((n - self.layers.lo) as usize)
        } else {
            Err(Error::OutOfRange(format!(
                "layer {n} outside solved range [{}, {}]",
                self.layers.lo, self.layers.hi
            )))
        }
    }

    pub fn kernel(&self, n: i64) -> Result<&LayerKernel> {
        Ok(&self.kernels[self.index(n)?])
    }

    pub fn zeta(&self, n: i64) -> Result<&Mat> {
        if n == self.layers.lo - 1 {
            Ok(&self.zeta_before)
        } else {
            Ok(&self.kernel(n)?.zeta)
        }
    }

    pub fn a_mat(&self, n: i64) -> Result<&Mat> {
        Ok(&self.kernel(n)?.a_mat)
    }

    pub fn u_vec(&self, n: i64) -> Result<&ColVec> {
        Ok(&self.kernel(n)?.u_vec)
    }

    pub fn u_tilde(&self, n: i64) -> Result<&Mat> {
        Ok(&self.kernel(n)?.u_tilde)
    }

    pub fn triple(&self, n: i64) -> Result<&TransitionTriple> {
        self.env.triple(n)
    }
}

struct Run {
    /// `zeta` on `[a - 1, b]`.
    zetas: Vec<Mat>,
    /// `u~` on `[a, b]`.
    inverses: Vec<Mat>,
}

/// One forward pass with the seed at layer `a - depth`.
fn forward_pass(
    env: &StripEnvironment,
    layers: LayerRange,
    depth: usize,
    tol_cond: f64,
) -> Result<Run> {
    let d = env.dim();
    let seed_layer = layers.lo - depth as i64;
    let identity = Mat::identity(d, d);
    let mut zeta = uniform_stochastic(d);
    let mut zetas = Vec::with_capacity(layers.len() + 1);
    let mut inverses = Vec::with_capacity(layers.len());
    if seed_layer == layers.lo - 1 {
        zetas.push(zeta.clone());
    }
    for n in seed_layer + 1..=layers.hi {
        let t = env.triple(n)?;
        let system = &identity - &t.q * &zeta - &t.r;
        let inv = inverse_checked(&system, tol_cond, n)?;
        zeta = &inv * &t.p;
        // Rows sum to one exactly in exact arithmetic; when the walk drifts
        // left the all-ones direction is unstable under rounding.
        normalize_rows(&mut zeta);
        if n >= layers.lo - 1 {
            zetas.push(zeta.clone());
        }
        if n >= layers.lo {
            inverses.push(inv);
        }
    }
    Ok(Run { zetas, inverses })
}

fn normalize_rows(m: &mut Mat) {
    for mut row in m.row_iter_mut() {
        let s: f64 = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
}

/// Solves the exit recursion on `layers`, doubling the truncation depth
/// from `cfg.initial_depth` until `zeta` on `[a - 1, b]` moves by less than
/// `cfg.tol`.
///
/// The environment must cover every layer the deepest attempted pass reads,
/// i.e. down to `a - depth + 1`.
pub fn solve_exit(
    env: &StripEnvironment,
    layers: LayerRange,
    cfg: &ExitConfig,
) -> Result<ExitSolution> {
    let mut depth = cfg.initial_depth.max(2);
    let mut previous: Option<Run> = None;
    loop {
        if depth > cfg.max_depth {
            return Err(Error::NoConvergence {
                what: "exit recursion",
                depth: cfg.max_depth,
            });
        }
        env.require(LayerRange {
            lo: layers.lo - depth as i64 + 1,
            hi: layers.hi,
        })?;
        let run = forward_pass(env, layers, depth, cfg.tol_cond)?;
        if let Some(prev) = &previous {
            let change = run
                .zetas
                .iter()
                .zip(&prev.zetas)
                .map(|(a, b)| row_sum_norm(&(a - b)))
                .fold(0.0, f64::max);
            if change < cfg.tol {
                return finish(env, layers, run, depth, change, cfg);
            }
        }
        previous = Some(run);
        depth *= 2;
    }
}

fn finish(
    env: &StripEnvironment,
    layers: LayerRange,
    run: Run,
    depth: usize,
    change: f64,
    cfg: &ExitConfig,
) -> Result<ExitSolution> {
    let d = env.dim();
    let identity = Mat::identity(d, d);
    let one = ones(d);
    let mut zetas = run.zetas.into_iter();
    let zeta_before = zetas.next().expect("forward pass covers layer a - 1");
    let mut kernels = Vec::with_capacity(layers.len());
    let mut residual: f64 = 0.0;
    let mut prev_zeta = zeta_before.clone();
    for ((n, zeta), u_tilde) in (layers.lo..=layers.hi).zip(zetas).zip(run.inverses) {
        let t = env.triple(n)?;
        let system = &identity - &t.q * &prev_zeta - &t.r;
        let direct = system
            .clone()
            .lu()
            .solve(&t.p)
            .ok_or(Error::SingularSystem {
                layer: n,
                condition: f64::INFINITY,
            })?;
        residual = residual.max(row_sum_norm(&(&zeta - direct)));
        let a_mat = &u_tilde * &t.q;
        let u_vec = &u_tilde * &one;
        prev_zeta = zeta.clone();
        kernels.push(LayerKernel {
            zeta,
            a_mat,
            u_vec,
            u_tilde,
        });
    }
    if !(residual <= cfg.tol.max(1e3 * f64::EPSILON)) {
        return Err(Error::NoConvergence {
            what: "exit recursion residual",
            depth,
        });
    }
    Ok(ExitSolution {
        env: env.clone(),
        layers,
        zeta_before,
        kernels,
        start_depth: depth,
        depth_change: change,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transience {
    TransientRight,
    /// `|lambda_plus|` is within the margin: undecided at this depth.
    Inconclusive,
    TransientLeftOrRecurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Growth rate per layer in nats; `-inf` when the product vanishes.
    pub lambda_plus: f64,
    pub n_terms: usize,
    pub classification: Transience,
}

pub const DEFAULT_LYAPUNOV_MARGIN: f64 = 1e-6;

/// `(1/n) log ||A_n A_{n-1} ... A_1||` with the partial product renormalized
/// by its norm at every step.
pub fn lyapunov(sol: &ExitSolution, n_terms: usize, margin: f64) -> Result<LyapunovEstimate> {
    if n_terms == 0 {
        return Err(Error::InvalidArgument("n_terms must be positive".into()));
    }
    let last = n_terms as i64;
    if !sol.layers().covers(LayerRange { lo: 1, hi: last }) {
        return Err(Error::OutOfRange(format!(
            "lyapunov needs layers 1..={last}, solved range is [{}, {}]",
            sol.layers().lo,
            sol.layers().hi
        )));
    }
    let mut product = sol.a_mat(1)?.clone();
    let mut log_norm = 0.0;
    for n in 1..=last {
        if n > 1 {
            product = sol.a_mat(n)? * &product;
        }
        let norm = row_sum_norm(&product);
        if norm == 0.0 {
            return Ok(LyapunovEstimate {
                lambda_plus: f64::NEG_INFINITY,
                n_terms,
                classification: Transience::TransientRight,
            });
        }
        log_norm += norm.ln();
        product /= norm;
    }
    let lambda_plus = log_norm / n_terms as f64;
    Ok(LyapunovEstimate {
        lambda_plus,
        n_terms,
        classification: classify(lambda_plus, margin),
    })
}

pub fn classify(lambda_plus: f64, margin: f64) -> Transience {
    if lambda_plus < -margin {
        Transience::TransientRight
    } else if lambda_plus > margin {
        Transience::TransientLeftOrRecurrent
    } else {
        Transience::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryVector {
    pub y: Vec<f64>,
    pub layer: i64,
    /// Number of `zeta` factors in the accepted product.
    pub depth: usize,
}

impl StationaryVector {
    pub fn row(&self) -> RowVec {
        RowVec::from_row_slice(&self.y)
    }
}

/// `y_n = lim uniform * zeta_{n-D+1} ... zeta_n` as `D` doubles, accepted
/// when two consecutive depths agree within `tol` (max norm).
pub fn stationary_vector(
    sol: &ExitSolution,
    n: i64,
    tol: f64,
    max_depth: usize,
) -> Result<StationaryVector> {
    let d = sol.dim();
    let first = sol.layers().lo - 1;
    if n < first || n > sol.layers().hi {
        return Err(Error::OutOfRange(format!("layer {n} outside solved range")));
    }
    let available = (n - first + 1) as usize;
    let limit = available.min(max_depth);
    let product_from = |depth: usize| -> Result<RowVec> {
        let mut y = uniform_row(d);
        for k in n - depth as i64 + 1..=n {
            y = &y * sol.zeta(k)?;
        }
        Ok(y)
    };
    let mut depth = 8.min(limit);
    let mut prev = product_from(depth)?;
    while depth < limit {
        let next_depth = (2 * depth).min(limit);
        let next = product_from(next_depth)?;
        let change = (&next - &prev).amax();
        depth = next_depth;
        prev = next;
        if change < tol {
            let total: f64 = prev.iter().sum();
            return Ok(StationaryVector {
                y: prev.iter().map(|x| x / total).collect(),
                layer: n,
                depth,
            });
        }
    }
    if limit < max_depth {
        let wanted = max_depth.min(2 * available) as i64;
        Err(Error::WindowTooSmall {
            needed_lo: n - wanted + 1,
            needed_hi: n,
            have_lo: first,
            have_hi: sol.layers().hi,
        })
    } else {
        Err(Error::NoConvergence {
            what: "stationary vector",
            depth: max_depth,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn range(lo: i64, hi: i64) -> LayerRange {
        LayerRange::new(lo, hi).unwrap()
    }

    fn scalar_env(p: f64, q: f64, r: f64) -> StripEnvironment {
        StripEnvironment::homogeneous(TransitionTriple::scalar(p, q, r), range(-600, 600)).unwrap()
    }

    #[test]
    fn scalar_exit_probability_is_one() {
        let sol = solve_exit(&scalar_env(0.7, 0.2, 0.1), range(-5, 5), &ExitConfig::default())
            .unwrap();
        for n in -6..=5 {
            assert_abs_diff_eq!(sol.zeta(n).unwrap()[(0, 0)], 1.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(sol.a_mat(0).unwrap()[(0, 0)], 2.0 / 7.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.u_vec(0).unwrap()[0], 10.0 / 7.0, epsilon = 1e-14);
    }

    #[test]
    fn no_down_no_lateral_gives_p() {
        let p = Mat::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let t = TransitionTriple::new(p.clone(), Mat::zeros(2, 2), Mat::zeros(2, 2)).unwrap();
        let law = std::sync::Arc::new(crate::environment::EnvironmentLaw::homogeneous(t));
        let env = StripEnvironment::sample_unchecked(law, range(-100, 10), 0);
        let sol = solve_exit(&env, range(0, 3), &ExitConfig::default()).unwrap();
        for n in 0..=3 {
            assert_eq!(row_sum_norm(&(sol.zeta(n).unwrap() - &p)), 0.0);
        }
        let est = lyapunov(&sol, 3, DEFAULT_LYAPUNOV_MARGIN).unwrap();
        assert_eq!(est.lambda_plus, f64::NEG_INFINITY);
        assert_eq!(est.classification, Transience::TransientRight);
    }

    #[test]
    fn balanced_scalar_walk_is_inconclusive() {
        let env = scalar_env(0.4, 0.4, 0.2);
        let sol = solve_exit(&env, range(0, 200), &ExitConfig::default()).unwrap();
        let est = lyapunov(&sol, 200, DEFAULT_LYAPUNOV_MARGIN).unwrap();
        assert_abs_diff_eq!(est.lambda_plus, 0.0, epsilon = 1e-12);
        assert_eq!(est.classification, Transience::Inconclusive);
    }

    #[test]
    fn scalar_lyapunov_is_log_q_over_p() {
        let env = scalar_env(0.7, 0.2, 0.1);
        let sol = solve_exit(&env, range(0, 50), &ExitConfig::default()).unwrap();
        let est = lyapunov(&sol, 50, DEFAULT_LYAPUNOV_MARGIN).unwrap();
        assert_abs_diff_eq!(est.lambda_plus, (2.0f64 / 7.0).ln(), epsilon = 1e-12);
        assert_eq!(est.classification, Transience::TransientRight);
    }

    #[test]
    fn left_drift_is_flagged() {
        let env = scalar_env(0.2, 0.7, 0.1);
        let sol = solve_exit(&env, range(0, 50), &ExitConfig::default()).unwrap();
        let est = lyapunov(&sol, 50, DEFAULT_LYAPUNOV_MARGIN).unwrap();
        assert!(est.lambda_plus > 1.0);
        assert_eq!(est.classification, Transience::TransientLeftOrRecurrent);
    }

    #[test]
    fn too_narrow_window_is_reported() {
        let env = StripEnvironment::homogeneous(TransitionTriple::scalar(0.7, 0.2, 0.1), range(-3, 3))
            .unwrap();
        assert!(matches!(
            solve_exit(&env, range(0, 1), &ExitConfig::default()),
            Err(Error::WindowTooSmall { .. })
        ));
    }

    #[test]
    fn depth_budget_is_enforced() {
        let cfg = ExitConfig {
            max_depth: 8,
            initial_depth: 4,
            ..ExitConfig::default()
        };
        // d = 2 with slow mixing between sites needs more than 8 layers
        let p = Mat::from_row_slice(2, 2, &[0.499, 0.001, 0.001, 0.499]);
        let q = Mat::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.25]);
        let r = Mat::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.25]);
        let env = StripEnvironment::homogeneous(TransitionTriple::new(p, q, r).unwrap(), range(-100, 10))
            .unwrap();
        assert!(matches!(
            solve_exit(&env, range(0, 0), &cfg),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn scalar_stationary_vector_is_one() {
        let sol = solve_exit(&scalar_env(0.7, 0.2, 0.1), range(-100, 0), &ExitConfig::default())
            .unwrap();
        let y = stationary_vector(&sol, -1, 1e-14, 64).unwrap();
        assert_eq!(y.y, vec![1.0]);
    }
}
