//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use stripwalk::config::RunConfig;
use stripwalk::linalg::Mat;
use stripwalk::environment::{EnvironmentLaw, LayerRange, StripEnvironment, TransitionTriple};

pub fn range(lo: i64, hi: i64) -> LayerRange {
    LayerRange::new(lo, hi).unwrap()
}

pub fn atom0() -> TransitionTriple {
    TransitionTriple::from_rows(
        &[vec![0.5, 0.1], vec![0.2, 0.4]],
        &[vec![0.1, 0.05], vec![0.05, 0.1]],
        &[vec![0.15, 0.1], vec![0.1, 0.15]],
    )
    .unwrap()
}

pub fn atom1() -> TransitionTriple {
    TransitionTriple::from_rows(
        &[vec![0.3, 0.25], vec![0.1, 0.45]],
        &[vec![0.1, 0.1], vec![0.05, 0.15]],
        &[vec![0.2, 0.05], vec![0.15, 0.1]],
    )
    .unwrap()
}

/// Two-atom period-2 law on a strip of width 2 with a strong right drift.
pub fn periodic_law() -> Arc<EnvironmentLaw> {
    Arc::new(EnvironmentLaw::periodic(vec![atom0(), atom1()], vec![0, 1]).unwrap())
}

/// The same atoms drawn independently with weights 0.3 / 0.7.
pub fn iid_law() -> Arc<EnvironmentLaw> {
    Arc::new(EnvironmentLaw::iid(vec![atom0(), atom1()], vec![0.3, 0.7]).unwrap())
}

pub fn scalar_law() -> Arc<EnvironmentLaw> {
    Arc::new(EnvironmentLaw::homogeneous(TransitionTriple::scalar(0.7, 0.2, 0.1)))
}

pub fn environment(law: &Arc<EnvironmentLaw>, window: LayerRange, seed: u64) -> StripEnvironment {
    stripwalk::environment::sample_environment(Arc::clone(law), window, seed).unwrap()
}

pub fn config(law: &Arc<EnvironmentLaw>) -> RunConfig {
    RunConfig::new(law.to_document())
}

/// Independent oracle: the walk on layers `[lo, 0]` of `env` as a finite
/// absorbing chain, absorbed on first arrival at layer 1. Left steps out of
/// layer `lo` are reflected back into `lo`, which perturbs the answer by an
/// amount that vanishes as `lo -> -inf` for a right-transient walk.
pub struct TruncatedStrip {
    /// `zeta[(i, j)]`: probability of entering layer 1 at `j` from `(0, i)`.
    pub zeta: Mat,
    /// `hitting[i]`: expected absorption time from `(0, i)`.
    pub hitting: Vec<f64>,
}

pub fn truncated_strip(env: &StripEnvironment, lo: i64) -> TruncatedStrip {
    let d = env.dim();
    let layers = (-lo + 1) as usize;
    let size = layers * d;
    let idx = |n: i64, i: usize| (n - lo) as usize * d + i;
    let mut t = Mat::zeros(size, size);
    let mut exit = Mat::zeros(size, d);
    for n in lo..=0 {
        let tr = env.triple(n).unwrap();
        for i in 0..d {
            for j in 0..d {
                t[(idx(n, i), idx(n, j))] += tr.r[(i, j)];
                t[(idx(n, i), idx((n - 1).max(lo), j))] += tr.q[(i, j)];
                if n == 0 {
                    exit[(idx(n, i), j)] += tr.p[(i, j)];
                } else {
                    t[(idx(n, i), idx(n + 1, j))] += tr.p[(i, j)];
                }
            }
        }
    }
    let lu = (Mat::identity(size, size) - t).lu();
    let x = lu.solve(&exit).expect("transient block is invertible");
    let h = lu.solve(&Mat::from_element(size, 1, 1.0)).expect("transient block is invertible");
    TruncatedStrip {
        zeta: Mat::from_fn(d, d, |i, j| x[(idx(0, i), j)]),
        hitting: (0..d).map(|i| h[(idx(0, i), 0)]).collect(),
    }
}
