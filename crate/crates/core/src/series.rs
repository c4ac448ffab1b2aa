//! Truncation of geometrically convergent series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of a truncated infinite sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult<T> {
    pub value: T,
    pub terms_used: usize,
    /// Last term norm divided by one minus the observed term ratio.
    pub tail_bound: f64,
    pub converged: bool,
}

/// Ratios above `1 - DIVERGENCE_GAP` count towards divergence.
pub const DIVERGENCE_GAP: f64 = 1e-6;
/// Consecutive near-one ratios after which a series is declared divergent.
pub const DIVERGENCE_RUN: usize = 10;
/// Number of recent ratios whose maximum is used as the ratio estimate.
/// Periodic environments produce alternating ratios; using only the last
/// one would under-estimate the tail.
pub const RATIO_WINDOW: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Continue,
    Done { tail_bound: f64 },
}

/// Stopping rule fed with term norms one at a time.
#[derive(Debug, Clone)]
pub struct GeometricTail {
    tol: f64,
    terms: usize,
    last: Option<f64>,
    ratios: Vec<f64>,
    near_one: usize,
    tail_bound: f64,
}

impl GeometricTail {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            terms: 0,
            last: None,
            ratios: Vec::with_capacity(RATIO_WINDOW),
            near_one: 0,
            tail_bound: f64::INFINITY,
        }
    }

    pub fn terms(&self) -> usize {
        self.terms
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Records the norm of the next term.
    ///
    /// Terms of the series handled here are partial products, so a zero
    /// term means every later term vanishes too.
    pub fn push(&mut self, norm: f64) -> Result<Step> {
        self.terms += 1;
        if norm == 0.0 {
            self.tail_bound = 0.0;
            return Ok(Step::Done { tail_bound: 0.0 });
        }
        let Some(prev) = self.last.replace(norm) else {
            return Ok(Step::Continue);
        };
        let ratio = norm / prev;
        if ratio > 1.0 - DIVERGENCE_GAP {
            self.near_one += 1;
            if self.near_one >= DIVERGENCE_RUN {
                return Err(Error::DivergentSeries { terms: self.terms });
            }
        } else {
            self.near_one = 0;
        }
        if self.ratios.len() == RATIO_WINDOW {
            self.ratios.remove(0);
        }
        self.ratios.push(ratio);
        let rho = self.ratios.iter().copied().fold(0.0, f64::max);
        self.tail_bound = if rho < 1.0 {
            norm / (1.0 - rho)
        } else {
            f64::INFINITY
        };
        if self.tail_bound <= self.tol {
            Ok(Step::Done {
                tail_bound: self.tail_bound,
            })
        } else {
            Ok(Step::Continue)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(terms: impl Iterator<Item = f64>, tol: f64, max: usize) -> Result<(usize, f64, bool)> {
        let mut tail = GeometricTail::new(tol);
        for t in terms.take(max) {
            if let Step::Done { tail_bound } = tail.push(t)? {
                return Ok((tail.terms(), tail_bound, true));
            }
        }
        Ok((tail.terms(), tail.tail_bound(), false))
    }

    #[test]
    fn geometric_terms_stop_with_certified_tail() {
        let (n, bound, ok) = run((0..).map(|k| 0.5f64.powi(k)), 1e-10, 1000).unwrap();
        assert!(ok);
        assert!(bound <= 1e-10);
        // true tail after n terms is 0.5^(n-1)
        assert!(0.5f64.powi(n as i32 - 1) <= bound);
    }

    #[test]
    fn zero_term_terminates() {
        let (n, bound, ok) = run([2.0, 0.0, 5.0].into_iter(), 1e-12, 10).unwrap();
        assert_eq!((n, bound, ok), (2, 0.0, true));
    }

    #[test]
    fn flat_terms_are_divergent() {
        let err = run(std::iter::repeat(1.0), 1e-10, 100).unwrap_err();
        assert_eq!(err, Error::DivergentSeries { terms: 11 });
    }

    #[test]
    fn budget_exhaustion_is_not_converged() {
        let (n, _, ok) = run((0..).map(|k| 0.9f64.powi(k)), 1e-12, 20).unwrap();
        assert_eq!(n, 20);
        assert!(!ok);
    }

    #[test]
    fn alternating_ratios_use_the_larger_one() {
        // ratios alternate 0.1, 0.9
        let mut v = 1.0;
        let terms: Vec<f64> = (0..400)
            .map(|k| {
                let out = v;
                v *= if k % 2 == 0 { 0.1 } else { 0.9 };
                out
            })
            .collect();
        let total: f64 = terms.iter().sum();
        let mut tail = GeometricTail::new(1e-9);
        let mut partial = 0.0;
        for t in &terms {
            partial += t;
            if let Step::Done { .. } = tail.push(*t).unwrap() {
                break;
            }
        }
        assert!((total - partial).abs() <= 1e-9);
    }
}
