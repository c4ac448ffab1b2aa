//! Strip environments: laws, sampled windows, shifts and condition checks.

mod law;
mod triple;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use law::{
    DeterministicSequence, EnvironmentLaw, IidFiniteSupport, LawDocument, LawRegistry, LayerRule,
    Periodic, DEFAULT_TOL_STOCH,
};
pub use triple::{validate_triple, TransitionTriple, TripleDoc, ValidationReport, Violation};

use crate::error::{Error, Result};

/// Inclusive range of layers `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[i64; 2]", try_from = "[i64; 2]")]
pub struct LayerRange {
    pub lo: i64,
    pub hi: i64,
}

impl LayerRange {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("empty layer range [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, n: i64) -> bool {
        self.lo <= n && n <= self.hi
    }

    pub fn covers(&self, other: LayerRange) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl From<LayerRange> for [i64; 2] {
    fn from(r: LayerRange) -> Self {
        [r.lo, r.hi]
    }
}

impl TryFrom<[i64; 2]> for LayerRange {
    type Error = Error;

    fn try_from(v: [i64; 2]) -> Result<Self> {
        LayerRange::new(v[0], v[1])
    }
}

/// A window of an environment drawn from a law.
///
/// Layer `n` of this environment is layer `n + offset` of the law's sequence
/// for `seed`; shifting only moves `offset` and the window, so shifted copies
/// share their atom table.
#[derive(Debug, Clone)]
pub struct StripEnvironment {
    law: Arc<EnvironmentLaw>,
    seed: u64,
    offset: i64,
    window: LayerRange,
    atoms: Arc<[u32]>,
}

impl PartialEq for StripEnvironment {
    fn eq(&self, other: &Self) -> bool {
        self.window == other.window
            && self.dim() == other.dim()
            && (self.window.lo..=self.window.hi)
                .all(|n| self.triple_unchecked(n) == other.triple_unchecked(n))
    }
}

/// Draws the layers `window` of the environment with the given seed.
///
/// Fails with [`Error::InvalidLaw`] if an atom of `law` is not a valid
/// triple at the law's stochasticity tolerance.
pub fn sample_environment(
    law: Arc<EnvironmentLaw>,
    window: LayerRange,
    seed: u64,
) -> Result<StripEnvironment> {
    law.ensure_valid(law.tol_stoch)?;
    Ok(StripEnvironment::generate(law, window, seed, 0))
}

/// `shift(env, k)` has triple `env.triples[n + k]` at layer `n`.
pub fn shift(env: &StripEnvironment, k: i64) -> StripEnvironment {
    env.shifted(k)
}

impl StripEnvironment {
    fn generate(law: Arc<EnvironmentLaw>, window: LayerRange, seed: u64, offset: i64) -> Self {
        let atoms: Arc<[u32]> = (window.lo..=window.hi)
            .map(|n| law.atom_at(n + offset, seed) as u32)
            .collect();
        Self {
            law,
            seed,
            offset,
            window,
            atoms,
        }
    }

    /// Like [`sample_environment`] but without checking the atoms. Used for
    /// boundary cases such as `Q = 0` that break the strict conditions.
    pub fn sample_unchecked(law: Arc<EnvironmentLaw>, window: LayerRange, seed: u64) -> Self {
        Self::generate(law, window, seed, 0)
    }

    /// Homogeneous environment on `window` built from one atom.
    pub fn homogeneous(atom: TransitionTriple, window: LayerRange) -> Result<Self> {
        sample_environment(Arc::new(EnvironmentLaw::homogeneous(atom)), window, 0)
    }

    pub fn law(&self) -> &Arc<EnvironmentLaw> {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn window(&self) -> LayerRange {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.law.dim
    }

    pub fn atom_index(&self, n: i64) -> Result<usize> {
        self.require(LayerRange { lo: n, hi: n })?;
        Ok(self.atoms[(n - self.window.lo) as usize] as usize)
    }

    pub fn triple(&self, n: i64) -> Result<&TransitionTriple> {
        Ok(&self.law.atoms[self.atom_index(n)?])
    }

    fn triple_unchecked(&self, n: i64) -> &TransitionTriple {
        &self.law.atoms[self.atoms[(n - self.window.lo) as usize] as usize]
    }

    pub fn require(&self, needed: LayerRange) -> Result<()> {
        if self.window.covers(needed) {
            Ok(())
        } else {
            Err(Error::WindowTooSmall {
                needed_lo: needed.lo,
                needed_hi: needed.hi,
                have_lo: self.window.lo,
                have_hi: self.window.hi,
            })
        }
    }

    pub fn shifted(&self, k: i64) -> Self {
        Self {
            law: Arc::clone(&self.law),
            seed: self.seed,
            offset: self.offset + k,
            window: LayerRange {
                lo: self.window.lo - k,
                hi: self.window.hi - k,
            },
            atoms: Arc::clone(&self.atoms),
        }
    }

    /// The same environment (same law, seed and offset) on another window.
    pub fn with_window(&self, window: LayerRange) -> Self {
        Self::generate(Arc::clone(&self.law), window, self.seed, self.offset)
    }

    pub fn triples(&self) -> impl Iterator<Item = (i64, &TransitionTriple)> + '_ {
        (self.window.lo..=self.window.hi).map(move |n| (n, self.triple_unchecked(n)))
    }
}

/// Outcome of the sufficient check for layer connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    ProxyConnected,
    ProxyDisconnected,
}

/// Sufficient check that layer `n` forms one communication class.
///
/// Sites `i -> j` are joined when `R_n(i,j) > 0`, when an up-then-down move
/// `(P_n Q_{n+1})(i,j) > 0` exists, or when a down-then-up move
/// `(Q_n P_{n-1})(i,j) > 0` exists; the layer is reported connected when the
/// resulting digraph is strongly connected.
pub fn check_layer_communication(env: &StripEnvironment, n: i64) -> Result<Connectivity> {
    env.require(LayerRange {
        lo: n - 1,
        hi: n + 1,
    })?;
    let here = env.triple(n)?;
    let up = env.triple(n + 1)?;
    let down = env.triple(n - 1)?;
    let via_up = &here.p * &up.q;
    let via_down = &here.q * &down.p;
    let d = env.dim();
    let edge = |i: usize, j: usize| here.r[(i, j)] > 0.0 || via_up[(i, j)] > 0.0 || via_down[(i, j)] > 0.0;

    let reach = |forward: bool| {
        let mut seen = vec![false; d];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..d {
                let linked = if forward { edge(i, j) } else { edge(j, i) };
                if linked && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };

    Ok(if reach(true) && reach(false) {
        Connectivity::ProxyConnected
    } else {
        Connectivity::ProxyDisconnected
    })
}
