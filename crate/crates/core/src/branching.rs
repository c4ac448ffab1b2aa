//! Branching structure of the walk before it first reaches layer 1.
//!
//! Each entrance into layer `n` from above, at site `i`, starts an excursion
//! that ends with the step from layer `n` to layer `n + 1`. The number of
//! down steps `|U_n|` and lateral steps `|Z_n|` taken from layer `n` during
//! one excursion have closed-form laws in terms of the exit kernel; the
//! immigrant is the walker itself, placed in layer 0 with law `mu`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exit_kernel::ExitSolution;
use crate::linalg::{basis_row, inverse_checked, ones, spectral_radius_bound, ColVec, Mat, RowVec};
use crate::series::{GeometricTail, SeriesResult, Step};

/// Conditioning on one parent at `(layer, parent_site)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffspringQuery {
    pub layer: i64,
    pub parent_site: usize,
    /// `m` for down-step counts, `K` for lateral counts.
    pub count: usize,
}

/// Raw probabilities outside `[-PROB_DUST, 1 + PROB_DUST]` are logic errors.
pub const PROB_DUST: f64 = 1e-12;

/// Enumeration guard for [`joint_pmf`].
pub const MAX_COMPOSITIONS: u128 = 10_000_000;

const TOL_COND: f64 = 1e-10;

fn check_probability(raw: f64, what: &str) -> Result<f64> {
    if raw.is_finite() && (-PROB_DUST..=1.0 + PROB_DUST).contains(&raw) {
        Ok(raw)
    } else {
        Err(Error::OutOfRange(format!("{what} evaluated to {raw}, not a probability")))
    }
}

/// Clamps a checked probability into `[0, 1]` for reporting.
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

fn check_site(sol: &ExitSolution, i: usize) -> Result<()> {
    if i < sol.dim() {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("site {i} not in 0..{}", sol.dim())))
    }
}

/// Validates a probability vector of length `d`.
pub fn mu_row(mu: &[f64], d: usize) -> Result<RowVec> {
    if mu.len() != d {
        return Err(Error::InvalidArgument(format!(
            "initial distribution has {} entries, expected {d}",
            mu.len()
        )));
    }
    let total: f64 = mu.iter().sum();
    if mu.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "initial distribution {mu:?} is not a probability vector"
        )));
    }
    Ok(RowVec::from_row_slice(mu))
}

/// Blocks of layer `n` used by the offspring laws.
struct LayerBlocks {
    /// `Q_n zeta_{n-1}`
    down_return: Mat,
    r: Mat,
    p_one: ColVec,
}

fn blocks(sol: &ExitSolution, n: i64) -> Result<LayerBlocks> {
    sol.kernel(n)?;
    let t = sol.triple(n)?;
    Ok(LayerBlocks {
        down_return: &t.q * sol.zeta(n - 1)?,
        r: t.r.clone(),
        p_one: &t.p * ones(sol.dim()),
    })
}

/// `P(|U_n| = m | U_{n+1} = e_i) = e_i [(I - R_n)^{-1} Q_n zeta_{n-1}]^m (I - R_n)^{-1} P_n 1`.
pub fn pmf_u(sol: &ExitSolution, q: &OffspringQuery) -> Result<f64> {
    check_site(sol, q.parent_site)?;
    let b = blocks(sol, q.layer)?;
    let d = sol.dim();
    let lazy_inv = inverse_checked(&(Mat::identity(d, d) - &b.r), TOL_COND, q.layer)?;
    let step = &lazy_inv * &b.down_return;
    let mut v = basis_row(d, q.parent_site);
    for _ in 0..q.count {
        v = &v * &step;
    }
    check_probability((v * lazy_inv * b.p_one)[0], "pmf_u")
}

/// `P(|Z_n| = K | U_{n+1} = e_i) = e_i [(I - Q_n zeta_{n-1})^{-1} R_n]^K (I - Q_n zeta_{n-1})^{-1} P_n 1`.
pub fn pmf_z(sol: &ExitSolution, q: &OffspringQuery) -> Result<f64> {
    check_site(sol, q.parent_site)?;
    let b = blocks(sol, q.layer)?;
    let d = sol.dim();
    let inv = inverse_checked(&(Mat::identity(d, d) - &b.down_return), TOL_COND, q.layer)?;
    let step = &inv * &b.r;
    let mut v = basis_row(d, q.parent_site);
    for _ in 0..q.count {
        v = &v * &step;
    }
    check_probability((v * inv * b.p_one)[0], "pmf_z")
}

/// Which count is spread over the gaps of the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// Lateral runs `R^{k_0} (Q zeta) R^{k_1} ... (Q zeta) R^{k_m}`.
    UGrouped,
    /// Down-return runs `(Q zeta)^{m_0} R (Q zeta)^{m_1} ... R (Q zeta)^{m_K}`.
    ZGrouped,
}

/// Number of weak compositions of `total` into `parts` parts.
pub fn composition_count(total: usize, parts: usize) -> u128 {
    if parts == 0 {
        return u128::from(total == 0);
    }
    // C(total + parts - 1, parts - 1)
    let k = (parts - 1) as u128;
    let n = total as u128 + k;
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for j in 0..k {
        c = c * (n - j) / (j + 1);
        if c > u128::MAX / (n + 1) {
            return u128::MAX;
        }
    }
    c
}

/// Joint law of `(|U_n|, |Z_n|)` for one parent at `(n, i)`, by explicit
/// enumeration of the step words.
pub fn joint_pmf(
    sol: &ExitSolution,
    m: usize,
    k: usize,
    layer: i64,
    site: usize,
    form: Grouping,
) -> Result<f64> {
    check_site(sol, site)?;
    let (spread, runs, run_block_is_r) = match form {
        Grouping::UGrouped => (k, m + 1, true),
        Grouping::ZGrouped => (m, k + 1, false),
    };
    let count = composition_count(spread, runs);
    if count > MAX_COMPOSITIONS {
        return Err(Error::TooLarge { count });
    }
    let b = blocks(sol, layer)?;
    let d = sol.dim();
    let (run_block, separator) = if run_block_is_r {
        (&b.r, &b.down_return)
    } else {
        (&b.down_return, &b.r)
    };
    let mut powers = vec![Mat::identity(d, d)];
    for j in 1..=spread {
        powers.push(&powers[j - 1] * run_block);
    }

    // Depth-first over compositions (parts left, amount left); every leaf is
    // one composition and contributes one word.
    fn walk(
        v: &RowVec,
        parts_left: usize,
        left: usize,
        powers: &[Mat],
        separator: &Mat,
        tail: &ColVec,
    ) -> f64 {
        if parts_left == 1 {
            return (v * &powers[left] * tail)[0];
        }
        (0..=left)
            .map(|part| {
                let next = v * &powers[part] * separator;
                walk(&next, parts_left - 1, left - part, powers, separator, tail)
            })
            .sum()
    }

    let raw = walk(&basis_row(d, site), runs, spread, &powers, separator, &b.p_one);
    check_probability(raw, "joint_pmf")
}

/// `P(U_1 = e_i) = mu(i)`.
pub fn immigration_pmf(mu: &[f64], i: usize) -> Result<f64> {
    let row = mu_row(mu, mu.len())?;
    row.get(i)
        .copied()
        .ok_or_else(|| Error::OutOfRange(format!("site {i} not in 0..{}", mu.len())))
}

/// `E(|U_n| | U_{n+1} = e_i) = e_i A_n 1`.
pub fn expected_u(sol: &ExitSolution, n: i64, i: usize) -> Result<f64> {
    check_site(sol, i)?;
    Ok(sol.a_mat(n)?.row(i).sum())
}

/// `E(|Z_n| | U_{n+1} = e_i) = e_i u~_n R_n 1`.
pub fn expected_z(sol: &ExitSolution, n: i64, i: usize) -> Result<f64> {
    check_site(sol, i)?;
    let lateral = sol.u_tilde(n)? * &sol.triple(n)?.r;
    Ok(lateral.row(i).sum())
}

/// `B_m = [(I - R_{n+1})^{-1} Q_{n+1} zeta_n]^{m-1} (I - R_{n+1})^{-1} Q_{n+1}`:
/// entry `(i, j)` is the probability that a walker from `(n+1, i)` makes at
/// least `m` down steps before leaving upward, the `m`-th landing on `(n, j)`.
pub fn b_matrix(sol: &ExitSolution, n: i64, m: usize) -> Result<Mat> {
    if m == 0 {
        return Err(Error::InvalidArgument("B_m needs m >= 1".into()));
    }
    let zeta = sol.zeta(n)?;
    let up = sol.triple(n + 1)?;
    let d = sol.dim();
    let first = inverse_checked(&(Mat::identity(d, d) - &up.r), TOL_COND, n + 1)? * &up.q;
    let step = &first * zeta;
    let mut out = first;
    for _ in 1..m {
        out = &step * out;
    }
    Ok(out)
}

fn ensure_layer_le_zero(n: i64) -> Result<()> {
    if n > 0 {
        Err(Error::OutOfRange(format!(
            "layer {n}: the branching structure lives on layers <= 0"
        )))
    } else {
        Ok(())
    }
}

/// Mean of `U_{n+1}`: `mu A_0 A_{-1} ... A_{n+1}` (just `mu` for `n = 0`).
pub fn expected_u_vector(sol: &ExitSolution, mu: &[f64], n: i64) -> Result<RowVec> {
    ensure_layer_le_zero(n)?;
    let mut v = mu_row(mu, sol.dim())?;
    let mut layer = 0;
    while layer > n {
        v *= sol.a_mat(layer)?;
        layer -= 1;
    }
    Ok(v)
}

/// Mean visit counts of layer `n` before `T_1`: the vector
/// `mu A_0 ... A_{n+1} u~_n` and its total, which is computed separately as
/// `E(U_{n+1}) u_n`.
pub fn expected_n(sol: &ExitSolution, mu: &[f64], n: i64) -> Result<(RowVec, f64)> {
    let upper = expected_u_vector(sol, mu, n)?;
    let visits = &upper * sol.u_tilde(n)?;
    let total = (&upper * sol.u_vec(n)?)[0];
    Ok((visits, total))
}

/// Quenched `E T_1 = mu (u_0 + A_0 u_{-1} + A_0 A_{-1} u_{-2} + ...)`.
///
/// Terms are added until the geometric tail bound drops below `tol`. If the
/// term budget or the solved layer range runs out first the partial sum is
/// returned with `converged = false`.
pub fn expected_t1(
    sol: &ExitSolution,
    mu: &[f64],
    tol: f64,
    max_terms: usize,
) -> Result<SeriesResult<f64>> {
    let mut prefix = mu_row(mu, sol.dim())?;
    let mut tail = GeometricTail::new(tol);
    let mut sum = 0.0;
    let lowest = sol.layers().lo;
    let mut layer = 0i64;
    while tail.terms() < max_terms && layer >= lowest {
        let term = (&prefix * sol.u_vec(layer)?)[0];
        sum += term;
        if let Step::Done { tail_bound } = tail.push(term.abs())? {
            return Ok(SeriesResult {
                value: sum,
                terms_used: tail.terms(),
                tail_bound,
                converged: true,
            });
        }
        prefix *= sol.a_mat(layer)?;
        layer -= 1;
    }
    Ok(SeriesResult {
        value: sum,
        terms_used: tail.terms(),
        tail_bound: tail.tail_bound(),
        converged: false,
    })
}

/// Closed form `sum_{m >= 1} m B^m = B (I - B)^{-2}`.
pub fn series_m_b_m(b: &Mat) -> Result<Mat> {
    let d = b.nrows();
    if d != b.ncols() {
        return Err(Error::InvalidArgument("B must be square".into()));
    }
    let estimate = spectral_radius_bound(b, 8);
    if !(estimate < 1.0) {
        return Err(Error::NonContractive { estimate });
    }
    let inv = inverse_checked(&(Mat::identity(d, d) - b), TOL_COND, 0)?;
    Ok(b * &inv * &inv)
}

/// Partial sum `sum_{m=1}^{terms} m B^m`.
pub fn partial_m_b_m(b: &Mat, terms: usize) -> Mat {
    let d = b.nrows();
    let mut power = Mat::identity(d, d);
    let mut sum = Mat::zeros(d, d);
    for m in 1..=terms {
        power = &power * b;
        sum += &power * m as f64;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{LayerRange, StripEnvironment, TransitionTriple, EnvironmentLaw};
    use crate::exit_kernel::{solve_exit, ExitConfig};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn range(lo: i64, hi: i64) -> LayerRange {
        LayerRange::new(lo, hi).unwrap()
    }

    fn scalar_sol() -> ExitSolution {
        let env = StripEnvironment::homogeneous(TransitionTriple::scalar(0.7, 0.2, 0.1), range(-400, 50))
            .unwrap();
        solve_exit(&env, range(-200, 10), &ExitConfig::default()).unwrap()
    }

    fn query(layer: i64, count: usize) -> OffspringQuery {
        OffspringQuery {
            layer,
            parent_site: 0,
            count,
        }
    }

    #[test]
    fn scalar_offspring_laws_are_geometric() {
        let sol = scalar_sol();
        for m in 0..8 {
            let expected = (2.0f64 / 9.0).powi(m as i32) * 7.0 / 9.0;
            assert_abs_diff_eq!(pmf_u(&sol, &query(0, m)).unwrap(), expected, epsilon = 1e-15);
            let expected_z = (1.0f64 / 8.0).powi(m as i32) * 7.0 / 8.0;
            assert_abs_diff_eq!(pmf_z(&sol, &query(-3, m)).unwrap(), expected_z, epsilon = 1e-15);
        }
    }

    #[test]
    fn scalar_joint_two_compositions() {
        let sol = scalar_sol();
        for form in [Grouping::UGrouped, Grouping::ZGrouped] {
            let v = joint_pmf(&sol, 1, 1, 0, 0, form).unwrap();
            assert_abs_diff_eq!(v, 0.028, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(
            joint_pmf(&sol, 0, 0, 0, 0, Grouping::UGrouped).unwrap(),
            0.7,
            epsilon = 1e-15
        );
    }

    #[test]
    fn composition_counts() {
        assert_eq!(composition_count(0, 1), 1);
        assert_eq!(composition_count(3, 2), 4);
        assert_eq!(composition_count(4, 5), 70);
        assert_eq!(composition_count(2, 0), 0);
        assert!(composition_count(200, 40) > MAX_COMPOSITIONS);
    }

    #[test]
    fn enumeration_guard_trips() {
        let sol = scalar_sol();
        assert!(matches!(
            joint_pmf(&sol, 40, 200, 0, 0, Grouping::UGrouped),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn scalar_means() {
        let sol = scalar_sol();
        assert_abs_diff_eq!(expected_u(&sol, 0, 0).unwrap(), 2.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(expected_z(&sol, 0, 0).unwrap(), 1.0 / 7.0, epsilon = 1e-15);
        let mu = [1.0];
        for n in [0i64, -1, -4] {
            let v = expected_u_vector(&sol, &mu, n).unwrap();
            assert_abs_diff_eq!(v[0], (2.0f64 / 7.0).powi(-n as i32), epsilon = 1e-14);
        }
        let (visits, total) = expected_n(&sol, &mu, 0).unwrap();
        assert_abs_diff_eq!(visits[0], 1.0 / 0.7, epsilon = 1e-14);
        assert_abs_diff_eq!(total, 1.0 / 0.7, epsilon = 1e-14);
        assert!(expected_u_vector(&sol, &mu, 1).is_err());
    }

    #[test]
    fn scalar_b_matrix_and_sum() {
        let sol = scalar_sol();
        for m in 1..6 {
            let b = b_matrix(&sol, -2, m).unwrap();
            assert_abs_diff_eq!(b[(0, 0)], (2.0f64 / 9.0).powi(m as i32), epsilon = 1e-15);
        }
        assert!(b_matrix(&sol, -2, 0).is_err());
    }

    #[test]
    fn scalar_hitting_time_is_two() {
        let sol = scalar_sol();
        let res = expected_t1(&sol, &[1.0], 1e-13, 10_000).unwrap();
        assert!(res.converged);
        assert_abs_diff_eq!(res.value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn truncated_range_is_not_converged() {
        let env = StripEnvironment::homogeneous(TransitionTriple::scalar(0.7, 0.2, 0.1), range(-100, 10))
            .unwrap();
        let sol = solve_exit(&env, range(-3, 0), &ExitConfig::default()).unwrap();
        let res = expected_t1(&sol, &[1.0], 1e-13, 10_000).unwrap();
        assert!(!res.converged);
        assert_eq!(res.terms_used, 4);
    }

    fn no_down_env() -> ExitSolution {
        let p = Mat::from_row_slice(2, 2, &[0.5, 0.3, 0.2, 0.6]);
        let r = Mat::from_row_slice(2, 2, &[0.1, 0.1, 0.1, 0.1]);
        let t = TransitionTriple::new(p, Mat::zeros(2, 2), r).unwrap();
        let env = StripEnvironment::sample_unchecked(
            Arc::new(EnvironmentLaw::homogeneous(t)),
            range(-100, 10),
            0,
        );
        solve_exit(&env, range(-40, 5), &ExitConfig::default()).unwrap()
    }

    #[test]
    fn no_down_steps_means_no_children() {
        let sol = no_down_env();
        for i in 0..2 {
            let q = OffspringQuery {
                layer: 0,
                parent_site: i,
                count: 0,
            };
            assert_abs_diff_eq!(pmf_u(&sol, &q).unwrap(), 1.0, epsilon = 1e-15);
            let q1 = OffspringQuery { count: 1, ..q };
            assert_eq!(pmf_u(&sol, &q1).unwrap(), 0.0);
            assert_eq!(expected_u(&sol, 0, i).unwrap(), 0.0);
        }
        // one term only: E T_1 = mu (I - R)^{-1} 1
        let mu = [0.25, 0.75];
        let res = expected_t1(&sol, &mu, 1e-13, 100).unwrap();
        assert!(res.converged);
        assert_eq!(res.terms_used, 2);
        let direct = RowVec::from_row_slice(&mu)
            * (Mat::identity(2, 2) - sol.triple(0).unwrap().r.clone())
                .try_inverse()
                .unwrap()
            * ones(2);
        assert_abs_diff_eq!(res.value, direct[0], epsilon = 1e-14);
    }

    #[test]
    fn no_lateral_steps_means_no_lateral_children() {
        let p = Mat::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.5]);
        let q = Mat::from_row_slice(2, 2, &[0.2, 0.1, 0.1, 0.2]);
        let t = TransitionTriple::new(p, q, Mat::zeros(2, 2)).unwrap();
        let env = StripEnvironment::sample_unchecked(
            Arc::new(EnvironmentLaw::homogeneous(t)),
            range(-200, 10),
            0,
        );
        let sol = solve_exit(&env, range(-20, 5), &ExitConfig::default()).unwrap();
        let q = OffspringQuery {
            layer: 0,
            parent_site: 1,
            count: 0,
        };
        assert_abs_diff_eq!(pmf_z(&sol, &q).unwrap(), 1.0, epsilon = 1e-14);
        assert_eq!(expected_z(&sol, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn immigration_is_passthrough() {
        assert_eq!(immigration_pmf(&[0.5, 0.5], 1).unwrap(), 0.5);
        assert_eq!(immigration_pmf(&[1.0, 0.0], 0).unwrap(), 1.0);
        assert!(immigration_pmf(&[1.0, 0.0], 2).is_err());
        assert!(immigration_pmf(&[0.7, 0.7], 0).is_err());
    }

    #[test]
    fn m_b_m_closed_form() {
        assert_eq!(series_m_b_m(&Mat::zeros(3, 3)).unwrap(), Mat::zeros(3, 3));
        let half = Mat::from_element(1, 1, 0.5);
        assert_abs_diff_eq!(series_m_b_m(&half).unwrap()[(0, 0)], 2.0, epsilon = 1e-15);
        assert!(matches!(
            series_m_b_m(&Mat::identity(2, 2)),
            Err(Error::NonContractive { .. })
        ));
        assert_abs_diff_eq!(partial_m_b_m(&half, 200)[(0, 0)], 2.0, epsilon = 1e-12);
    }
}
