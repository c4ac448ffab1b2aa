//! Seeded quenched walks, excursion counting and Monte Carlo estimates of
//! the branching and hitting-time quantities.
//!
//! A step from `(n, i)` is drawn by inverse CDF over the concatenated row
//! `[P_n(i, .), R_n(i, .), Q_n(i, .)]`, landing at `(n + 1, j)`, `(n, j)` or
//! `(n - 1, j)`. Trial `t` of a run with seed `s` uses stream `t` of the
//! ChaCha8 generator seeded with `s`, so trials are reproducible and can be
//! evaluated in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::branching::{expected_n, expected_t1, expected_u_vector, mu_row, pmf_u, pmf_z, OffspringQuery};
use crate::environment::{LayerRange, StripEnvironment};
use crate::error::{Error, Result};
use crate::exit_kernel::ExitSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkState {
    pub layer: i64,
    pub site: usize,
    pub time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppedBy {
    HitLayer,
    StepCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<WalkState>,
    pub stopped_by: StoppedBy,
}

/// Stop on reaching `hit_layer` (if set) or after `step_cap` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    pub hit_layer: Option<i64>,
    pub step_cap: u64,
}

impl StopRule {
    pub fn hit(layer: i64, step_cap: u64) -> Self {
        Self {
            hit_layer: Some(layer),
            step_cap,
        }
    }

    pub fn cap(step_cap: u64) -> Self {
        Self {
            hit_layer: None,
            step_cap,
        }
    }
}

/// Default simulation window `[-(50 + 20/|lambda|), k]`.
pub fn default_window(lambda_plus: f64, k: i64) -> LayerRange {
    let extra = if lambda_plus.is_finite() && lambda_plus != 0.0 {
        (20.0 / lambda_plus.abs()).ceil().min(1e9) as i64
    } else {
        0
    };
    LayerRange {
        lo: -(50 + extra),
        hi: k.max(0),
    }
}

pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn sample_index(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cdf.last().expect("non-empty cdf");
    let x = rng.random::<f64>() * total;
    let k = cdf.partition_point(|&c| c <= x);
    if k < cdf.len() {
        k
    } else {
        // rounding at the top end: take the last entry with positive mass
        (1..cdf.len())
            .rev()
            .find(|&k| cdf[k] > cdf[k - 1])
            .unwrap_or(0)
    }
}

fn cumulative(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Step sampler for one environment: per atom and site, the cumulative row
/// `[P, R, Q]`.
#[derive(Debug, Clone)]
pub struct Walker<'a> {
    env: &'a StripEnvironment,
    cdfs: Vec<Vec<Vec<f64>>>,
    mu_cdf: Vec<f64>,
}

impl<'a> Walker<'a> {
    pub fn new(env: &'a StripEnvironment, mu: &[f64]) -> Result<Self> {
        let d = env.dim();
        mu_row(mu, d)?;
        let cdfs = env
            .law()
            .atoms
            .iter()
            .map(|t| {
                (0..d)
                    .map(|i| {
                        cumulative(
                            t.p.row(i)
                                .iter()
                                .chain(t.r.row(i).iter())
                                .chain(t.q.row(i).iter())
                                .copied(),
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            env,
            cdfs,
            mu_cdf: cumulative(mu.iter().copied()),
        })
    }

    pub fn env(&self) -> &StripEnvironment {
        self.env
    }

    pub fn start(&self, rng: &mut ChaCha8Rng) -> WalkState {
        WalkState {
            layer: 0,
            site: sample_index(&self.mu_cdf, rng),
            time: 0,
        }
    }

    /// Draws the next state; leaving the environment window is an error.
    pub fn step(&self, s: WalkState, rng: &mut ChaCha8Rng, trial: Option<u64>) -> Result<WalkState> {
        let atom = self
            .env
            .atom_index(s.layer)
            .map_err(|_| Error::WindowExit { layer: s.layer, trial })?;
        let d = self.env.dim();
        let k = sample_index(&self.cdfs[atom][s.site], rng);
        let (dl, site) = match k / d {
            0 => (1, k),
            1 => (0, k - d),
            _ => (-1, k - 2 * d),
        };
        Ok(WalkState {
            layer: s.layer + dl,
            site,
            time: s.time + 1,
        })
    }

    /// One trajectory on stream `trial` of `seed`.
    pub fn run(&self, seed: u64, trial: u64, stop: StopRule) -> Result<Trajectory> {
        let mut rng = trial_rng(seed, trial);
        let mut s = self.start(&mut rng);
        let mut states = vec![s];
        let stopped_by = loop {
            if stop.hit_layer == Some(s.layer) {
                break StoppedBy::HitLayer;
            }
            if s.time >= stop.step_cap {
                break StoppedBy::StepCap;
            }
            s = self.step(s, &mut rng, Some(trial))?;
            states.push(s);
        };
        Ok(Trajectory { states, stopped_by })
    }
}

/// Samples one walk from layer 0 with `Y_0 ~ mu`.
pub fn run_walk(env: &StripEnvironment, mu: &[f64], seed: u64, stop: StopRule) -> Result<Trajectory> {
    Walker::new(env, mu)?.run(seed, 0, stop)
}

/// Integer counts per layer on `[lo, hi]`, one row of length `d` per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub lo: i64,
    pub rows: Vec<Vec<u64>>,
}

impl LayerCounts {
    fn new(lo: i64, hi: i64, d: usize) -> Self {
        Self {
            lo,
            rows: vec![vec![0; d]; (hi - lo + 1) as usize],
        }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.rows.len() as i64 - 1
    }

    /// Row of layer `n`; `None` outside the stored range.
    pub fn at(&self, n: i64) -> Option<&[u64]> {
        if n < self.lo {
            return None;
        }
        self.rows.get((n - self.lo) as usize).map(Vec::as_slice)
    }

    /// Sum of the row of layer `n` (zero outside the range).
    pub fn total(&self, n: i64) -> u64 {
        self.at(n).map_or(0, |r| r.iter().sum())
    }

    fn bump(&mut self, n: i64, i: usize) {
        self.rows[(n - self.lo) as usize][i] += 1;
    }
}

/// Offspring of one parent: a walker entering `(layer, parent)` from above
/// (or the initial walker at layer 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffspringRecord {
    pub layer: i64,
    pub parent: usize,
    /// Down steps from `layer` before the walker returns to `layer + 1`.
    pub u: u64,
    /// Lateral steps in `layer` over the same stretch.
    pub z: u64,
}

/// Step counts of a trajectory up to `T_1`.
///
/// All tables cover layers `lo..=1`. `u` at layer `n` counts steps from
/// layer `n` landing at `(n - 1, i)`; its layer-1 row holds the initial
/// walker `e_{Y_0}`. `u_prime` at layer `n` counts steps from layer `n - 1`
/// landing at `(n, i)`. The other layer-1 rows are zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcursionCounts {
    pub d: usize,
    pub y0: usize,
    pub t1: u64,
    pub u: LayerCounts,
    pub u_prime: LayerCounts,
    pub z: LayerCounts,
    pub n_visits: LayerCounts,
    pub offspring: Vec<OffspringRecord>,
}

impl ExcursionCounts {
    pub fn lo(&self) -> i64 {
        self.u.lo
    }

    /// Number of failed instances of the three pathwise identities.
    pub fn identity_violations(&self) -> u64 {
        let mut bad = 0;
        let steps: u64 = (self.lo()..=0)
            .map(|n| 2 * self.u.total(n) + self.z.total(n))
            .sum();
        if self.t1 != 1 + steps {
            bad += 1;
        }
        for n in self.lo()..=0 {
            if self.u.total(n) != self.u_prime.total(n) {
                bad += 1;
            }
            let (up, lat, down, visits) = (
                self.u_prime.at(n).unwrap(),
                self.z.at(n).unwrap(),
                self.u.at(n + 1).unwrap(),
                self.n_visits.at(n).unwrap(),
            );
            bad += (0..self.d)
                .filter(|&i| visits[i] != up[i] + lat[i] + down[i])
                .count() as u64;
        }
        bad
    }
}

/// Counts steps and offspring of a trajectory that reaches layer 1.
pub fn count_excursions(traj: &Trajectory, d: usize) -> Result<ExcursionCounts> {
    let first = traj.states.first().ok_or(Error::IncompleteTrajectory)?;
    if first.layer != 0 {
        return Err(Error::InvalidArgument(format!(
            "trajectory starts at layer {}, expected 0",
            first.layer
        )));
    }
    let t1 = traj
        .states
        .iter()
        .position(|s| s.layer == 1)
        .ok_or(Error::IncompleteTrajectory)?;
    let path = &traj.states[..=t1];
    let lo = path.iter().map(|s| s.layer).min().unwrap_or(0);
    let mut c = ExcursionCounts {
        d,
        y0: first.site,
        t1: t1 as u64,
        u: LayerCounts::new(lo, 1, d),
        u_prime: LayerCounts::new(lo, 1, d),
        z: LayerCounts::new(lo, 1, d),
        n_visits: LayerCounts::new(lo, 1, d),
        offspring: Vec::new(),
    };
    c.u.bump(1, first.site);
    let mut open = vec![OffspringRecord {
        layer: 0,
        parent: first.site,
        u: 0,
        z: 0,
    }];
    for w in path.windows(2) {
        let (from, to) = (w[0], w[1]);
        c.n_visits.bump(from.layer, from.site);
        let top = open.last_mut().expect("an open excursion below layer 1");
        match to.layer - from.layer {
            -1 => {
                c.u.bump(from.layer, to.site);
                top.u += 1;
                open.push(OffspringRecord {
                    layer: to.layer,
                    parent: to.site,
                    u: 0,
                    z: 0,
                });
            }
            0 => {
                c.z.bump(to.layer, to.site);
                top.z += 1;
            }
            1 => {
                if to.layer <= 0 {
                    c.u_prime.bump(to.layer, to.site);
                }
                c.offspring.push(open.pop().expect("open excursion"));
            }
            jump => {
                return Err(Error::InvalidArgument(format!(
                    "trajectory jumps {jump} layers at time {}",
                    from.time
                )))
            }
        }
    }
    Ok(c)
}

/// Hitting times `T_k` of layers `1..=k_max` and increments `tau_k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HittingRecord {
    pub t_k: Vec<u64>,
    pub tau_k: Vec<u64>,
}

pub fn hitting_record(traj: &Trajectory, k_max: usize) -> Result<HittingRecord> {
    let mut t_k = Vec::with_capacity(k_max);
    let mut next = 1i64;
    for s in &traj.states {
        if s.layer == next {
            t_k.push(s.time);
            next += 1;
            if t_k.len() == k_max {
                break;
            }
        }
    }
    if t_k.len() < k_max {
        return Err(Error::IncompleteTrajectory);
    }
    let tau_k = t_k
        .iter()
        .scan(0, |prev, &t| {
            let tau = t - *prev;
            *prev = t;
            Some(tau)
        })
        .collect();
    Ok(HittingRecord { t_k, tau_k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub trials: u64,
    pub seed: u64,
    /// Layers `0, -1, ..., -depth` are tracked for means and offspring laws.
    pub depth: usize,
    pub step_cap: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 0,
            depth: 3,
            step_cap: 10_000_000,
        }
    }
}

/// Per-layer first and second moment sums over trials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMoments {
    pub layer: i64,
    pub sum: Vec<u64>,
    pub sum_sq: Vec<u128>,
}

impl LayerMoments {
    fn new(layer: i64, d: usize) -> Self {
        Self {
            layer,
            sum: vec![0; d],
            sum_sq: vec![0; d],
        }
    }

    fn add(&mut self, row: Option<&[u64]>) {
        if let Some(row) = row {
            for (i, &x) in row.iter().enumerate() {
                self.sum[i] += x;
                self.sum_sq[i] += u128::from(x) * u128::from(x);
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
    }
}

/// Offspring histograms of all parents at `(layer, parent)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffspringHistogram {
    pub layer: i64,
    pub parent: usize,
    pub parents: u64,
    pub u_hist: Vec<u64>,
    pub z_hist: Vec<u64>,
}

fn bump_hist(h: &mut Vec<u64>, k: u64) {
    let k = k as usize;
    if h.len() <= k {
        h.resize(k + 1, 0);
    }
    h[k] += 1;
}

fn merge_hist(h: &mut Vec<u64>, other: &[u64]) {
    if h.len() < other.len() {
        h.resize(other.len(), 0);
    }
    for (a, b) in h.iter_mut().zip(other) {
        *a += b;
    }
}

/// Integer sums over trials; merging is associative and commutative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub d: usize,
    pub depth: usize,
    pub trials: u64,
    pub t1_sum: u128,
    pub t1_sum_sq: u128,
    pub t1_max: u64,
    pub identity_violations: u64,
    /// `U_n` for `n = 1, 0, ..., -depth`.
    pub u_moments: Vec<LayerMoments>,
    /// `N_n` for `n = 0, ..., -depth`.
    pub n_moments: Vec<LayerMoments>,
    /// Indexed by `(-layer) * d + parent` for `layer = 0, ..., -depth`.
    pub offspring: Vec<OffspringHistogram>,
}

impl MonteCarloSummary {
    pub fn empty(d: usize, depth: usize) -> Self {
        let layers = || (0..=depth as i64).map(|k| -k);
        Self {
            d,
            depth,
            trials: 0,
            t1_sum: 0,
            t1_sum_sq: 0,
            t1_max: 0,
            identity_violations: 0,
            u_moments: std::iter::once(1)
                .chain(layers())
                .map(|n| LayerMoments::new(n, d))
                .collect(),
            n_moments: layers().map(|n| LayerMoments::new(n, d)).collect(),
            offspring: layers()
                .flat_map(|layer| {
                    (0..d).map(move |parent| OffspringHistogram {
                        layer,
                        parent,
                        parents: 0,
                        u_hist: Vec::new(),
                        z_hist: Vec::new(),
                    })
                })
                .collect(),
        }
    }

    /// Adds one trial.
    pub fn absorb(&mut self, c: &ExcursionCounts) {
        self.trials += 1;
        self.t1_sum += u128::from(c.t1);
        self.t1_sum_sq += u128::from(c.t1) * u128::from(c.t1);
        self.t1_max = self.t1_max.max(c.t1);
        self.identity_violations += c.identity_violations();
        for m in &mut self.u_moments {
            m.add(c.u.at(m.layer));
        }
        for m in &mut self.n_moments {
            m.add(c.n_visits.at(m.layer));
        }
        for rec in &c.offspring {
            if -rec.layer <= self.depth as i64 {
                let h = &mut self.offspring[(-rec.layer) as usize * self.d + rec.parent];
                h.parents += 1;
                bump_hist(&mut h.u_hist, rec.u);
                bump_hist(&mut h.z_hist, rec.z);
            }
        }
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if (self.d, self.depth) != (other.d, other.depth) {
            return Err(Error::InvalidArgument("summaries have different shapes".into()));
        }
        self.trials += other.trials;
        self.t1_sum += other.t1_sum;
        self.t1_sum_sq += other.t1_sum_sq;
        self.t1_max = self.t1_max.max(other.t1_max);
        self.identity_violations += other.identity_violations;
        for (a, b) in self.u_moments.iter_mut().zip(&other.u_moments) {
            a.merge(b);
        }
        for (a, b) in self.n_moments.iter_mut().zip(&other.n_moments) {
            a.merge(b);
        }
        for (a, b) in self.offspring.iter_mut().zip(&other.offspring) {
            a.parents += b.parents;
            merge_hist(&mut a.u_hist, &b.u_hist);
            merge_hist(&mut a.z_hist, &b.z_hist);
        }
        Ok(())
    }

    pub fn t1_mean(&self) -> MeanEstimate {
        MeanEstimate::from_sums(self.t1_sum as f64, self.t1_sum_sq as f64, self.trials)
    }
}

/// Runs trials `range` of a Monte Carlo experiment.
pub fn monte_carlo_trials(
    env: &StripEnvironment,
    mu: &[f64],
    cfg: &MonteCarloConfig,
    range: std::ops::Range<u64>,
) -> Result<MonteCarloSummary> {
    let walker = Walker::new(env, mu)?;
    let mut summary = MonteCarloSummary::empty(env.dim(), cfg.depth);
    for trial in range {
        let traj = walker.run(cfg.seed, trial, StopRule::hit(1, cfg.step_cap))?;
        if traj.stopped_by == StoppedBy::StepCap {
            return Err(Error::IncompleteTrajectory);
        }
        summary.absorb(&count_excursions(&traj, env.dim())?);
    }
    Ok(summary)
}

pub fn monte_carlo(env: &StripEnvironment, mu: &[f64], cfg: &MonteCarloConfig) -> Result<MonteCarloSummary> {
    monte_carlo_trials(env, mu, cfg, 0..cfg.trials)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean.
    pub se: f64,
}

impl MeanEstimate {
    pub fn from_sums(sum: f64, sum_sq: f64, n: u64) -> Self {
        if n == 0 {
            return Self {
                mean: f64::NAN,
                variance: f64::NAN,
                se: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = sum / nf;
        let variance = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            se: (variance / nf).sqrt(),
        }
    }
}

/// `(empirical - analytic) / se`; zero when both agree exactly with no
/// spread, infinite when they disagree with no spread.
pub fn z_score(empirical: f64, analytic: f64, se: f64) -> f64 {
    let diff = empirical - analytic;
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 * analytic.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub empirical: f64,
    pub se: f64,
    pub analytic: f64,
    pub z: f64,
}

impl Comparison {
    pub fn new(empirical: f64, se: f64, analytic: f64) -> Self {
        Self {
            empirical,
            se,
            analytic,
            z: z_score(empirical, analytic, se),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffspringKind {
    Down,
    Lateral,
}

/// One (possibly lumped) bin `count_lo..=count_hi` of an offspring law;
/// `count_hi = None` is an open tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfBin {
    pub layer: i64,
    pub parent: usize,
    pub kind: OffspringKind,
    pub count_lo: u64,
    pub count_hi: Option<u64>,
    pub parents: u64,
    pub observed: u64,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorComparison {
    pub layer: i64,
    pub site: usize,
    pub comparison: Comparison,
}

/// Monte Carlo estimates against the closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub trials: u64,
    pub t1: MeanEstimate,
    pub t1_max: u64,
    pub t1_vs_series: Comparison,
    pub identity_violations: u64,
    pub pmf_bins: Vec<PmfBin>,
    /// `E U_n` for `n = 1, 0, ..., -depth`.
    pub mean_u: Vec<VectorComparison>,
    pub mean_n: Vec<VectorComparison>,
}

impl MonteCarloReport {
    pub fn max_abs_pmf_z(&self) -> f64 {
        self.pmf_bins
            .iter()
            .map(|b| b.comparison.z.abs())
            .fold(0.0, f64::max)
    }
}

/// Expected count per lumped bin.
pub const MIN_EXPECTED_PER_BIN: f64 = 5.0;
const MAX_BINS_SCANNED: usize = 400;

fn lumped_bins(
    hist: &[u64],
    parents: u64,
    analytic: impl Fn(u64) -> Result<f64>,
) -> Result<Vec<(u64, Option<u64>, u64, f64)>> {
    let n = parents as f64;
    let mut bins = Vec::new();
    if n * 1.0 < MIN_EXPECTED_PER_BIN {
        return Ok(bins);
    }
    let (mut start, mut acc_p, mut acc_c) = (0u64, 0.0, 0u64);
    let (mut cum_p, mut cum_c) = (0.0, 0u64);
    for m in 0..MAX_BINS_SCANNED as u64 {
        let p = analytic(m)?;
        let c = hist.get(m as usize).copied().unwrap_or(0);
        acc_p += p;
        acc_c += c;
        let rest = 1.0 - cum_p - acc_p;
        if n * rest < MIN_EXPECTED_PER_BIN {
            break;
        }
        if n * acc_p >= MIN_EXPECTED_PER_BIN {
            bins.push((start, Some(m), acc_c, acc_p));
            cum_p += acc_p;
            cum_c += acc_c;
            start = m + 1;
            acc_p = 0.0;
            acc_c = 0;
        }
    }
    bins.push((start, None, parents - cum_c, (1.0 - cum_p).max(0.0)));
    Ok(bins)
}

/// Attaches closed-form values and z-scores to a summary computed on the
/// environment of `sol`.
pub fn compare(
    summary: &MonteCarloSummary,
    sol: &ExitSolution,
    mu: &[f64],
    series_tol: f64,
    max_terms: usize,
) -> Result<MonteCarloReport> {
    let t1 = summary.t1_mean();
    let series = expected_t1(sol, mu, series_tol, max_terms)?;
    let mut pmf_bins = Vec::new();
    for h in &summary.offspring {
        for (kind, hist) in [(OffspringKind::Down, &h.u_hist), (OffspringKind::Lateral, &h.z_hist)] {
            let analytic = |m: u64| {
                let q = OffspringQuery {
                    layer: h.layer,
                    parent_site: h.parent,
                    count: m as usize,
                };
                match kind {
                    OffspringKind::Down => pmf_u(sol, &q),
                    OffspringKind::Lateral => pmf_z(sol, &q),
                }
            };
            for (lo, hi, observed, p) in lumped_bins(hist, h.parents, analytic)? {
                let n = h.parents as f64;
                pmf_bins.push(PmfBin {
                    layer: h.layer,
                    parent: h.parent,
                    kind,
                    count_lo: lo,
                    count_hi: hi,
                    parents: h.parents,
                    observed,
                    comparison: Comparison::new(observed as f64 / n, (p * (1.0 - p) / n).sqrt(), p),
                });
            }
        }
    }
    let vector_rows = |moments: &[LayerMoments], analytic: &dyn Fn(i64) -> Result<Vec<f64>>| -> Result<Vec<VectorComparison>> {
        let mut out = Vec::new();
        for m in moments {
            let a = analytic(m.layer)?;
            for i in 0..summary.d {
                let est = MeanEstimate::from_sums(m.sum[i] as f64, m.sum_sq[i] as f64, summary.trials);
                out.push(VectorComparison {
                    layer: m.layer,
                    site: i,
                    comparison: Comparison::new(est.mean, est.se, a[i]),
                });
            }
        }
        Ok(out)
    };
    let mean_u = vector_rows(&summary.u_moments, &|n| {
        Ok(expected_u_vector(sol, mu, n - 1)?.iter().copied().collect())
    })?;
    let mean_n = vector_rows(&summary.n_moments, &|n| {
        Ok(expected_n(sol, mu, n)?.0.iter().copied().collect())
    })?;
    Ok(MonteCarloReport {
        trials: summary.trials,
        t1,
        t1_max: summary.t1_max,
        t1_vs_series: Comparison::new(t1.mean, t1.se, series.value),
        identity_violations: summary.identity_violations,
        pmf_bins,
        mean_u,
        mean_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub mean: f64,
    pub se: f64,
    pub trials: u64,
    pub horizon: u64,
}

/// Average of `xi(horizon) / horizon` over `trials` walks.
pub fn empirical_velocity(
    env: &StripEnvironment,
    mu: &[f64],
    horizon: u64,
    trials: u64,
    seed: u64,
) -> Result<VelocityEstimate> {
    if horizon == 0 || trials == 0 {
        return Err(Error::InvalidArgument("horizon and trials must be positive".into()));
    }
    let walker = Walker::new(env, mu)?;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for trial in 0..trials {
        let mut rng = trial_rng(seed, trial);
        let mut s = walker.start(&mut rng);
        for _ in 0..horizon {
            s = walker.step(s, &mut rng, Some(trial))?;
        }
        let v = s.layer as f64 / horizon as f64;
        sum += v;
        sum_sq += v * v;
    }
    let est = MeanEstimate::from_sums(sum, sum_sq, trials);
    Ok(VelocityEstimate {
        mean: est.mean,
        se: est.se,
        trials,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{EnvironmentLaw, TransitionTriple};
    use std::sync::Arc;

    fn range(lo: i64, hi: i64) -> LayerRange {
        LayerRange::new(lo, hi).unwrap()
    }

    fn traj(points: &[(i64, usize)]) -> Trajectory {
        Trajectory {
            states: points
                .iter()
                .enumerate()
                .map(|(t, &(layer, site))| WalkState {
                    layer,
                    site,
                    time: t as u64,
                })
                .collect(),
            stopped_by: StoppedBy::HitLayer,
        }
    }

    #[test]
    fn pure_right_walk_is_deterministic() {
        let law = EnvironmentLaw::homogeneous(TransitionTriple::scalar(1.0, 0.0, 0.0));
        let env = StripEnvironment::sample_unchecked(Arc::new(law), range(-5, 10), 0);
        let t = run_walk(&env, &[1.0], 7, StopRule::cap(5)).unwrap();
        let layers: Vec<i64> = t.states.iter().map(|s| s.layer).collect();
        assert_eq!(layers, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(t.stopped_by, StoppedBy::StepCap);
        let t = run_walk(&env, &[1.0], 7, StopRule::hit(1, 100)).unwrap();
        let c = count_excursions(&t, 1).unwrap();
        assert_eq!(c.t1, 1);
        assert_eq!(c.n_visits.at(0), Some(&[1u64][..]));
        assert_eq!(c.u.total(0), 0);
        assert_eq!(c.z.total(0), 0);
    }

    #[test]
    fn same_seed_same_path() {
        let env = StripEnvironment::homogeneous(TransitionTriple::scalar(0.4, 0.35, 0.25), range(-500, 500))
            .unwrap();
        let a = run_walk(&env, &[1.0], 11, StopRule::cap(200)).unwrap();
        let b = run_walk(&env, &[1.0], 11, StopRule::cap(200)).unwrap();
        let c = run_walk(&env, &[1.0], 12, StopRule::cap(200)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn hand_counted_path() {
        let c = count_excursions(&traj(&[(0, 0), (0, 0), (-1, 0), (0, 0), (1, 0)]), 1).unwrap();
        assert_eq!(c.t1, 4);
        assert_eq!(c.z.total(0), 1);
        assert_eq!(c.u.total(0), 1);
        assert_eq!(c.u_prime.total(0), 1);
        assert_eq!(c.n_visits.total(0), 3);
        assert_eq!(c.n_visits.total(-1), 1);
        assert_eq!(c.identity_violations(), 0);
        assert_eq!(
            c.offspring,
            vec![
                OffspringRecord { layer: -1, parent: 0, u: 0, z: 0 },
                OffspringRecord { layer: 0, parent: 0, u: 1, z: 1 },
            ]
        );
    }

    #[test]
    fn unfinished_path_is_incomplete() {
        let err = count_excursions(&traj(&[(0, 0), (-1, 0), (-2, 0)]), 1).unwrap_err();
        assert_eq!(err, Error::IncompleteTrajectory);
    }

    #[test]
    fn walking_off_the_window_is_an_error() {
        let law = EnvironmentLaw::homogeneous(TransitionTriple::scalar(0.0, 1.0, 0.0));
        let env = StripEnvironment::sample_unchecked(Arc::new(law), range(-3, 3), 0);
        let err = run_walk(&env, &[1.0], 0, StopRule::hit(1, 100)).unwrap_err();
        assert_eq!(err, Error::WindowExit { layer: -4, trial: Some(0) });
    }

    #[test]
    fn hitting_increments() {
        let t = traj(&[(0, 0), (1, 0), (0, 0), (1, 0), (2, 0), (3, 0)]);
        let h = hitting_record(&t, 3).unwrap();
        assert_eq!(h.t_k, vec![1, 4, 5]);
        assert_eq!(h.tau_k, vec![1, 3, 1]);
        assert!(hitting_record(&t, 4).is_err());
    }

    #[test]
    fn summaries_merge_like_one_run() {
        let env = StripEnvironment::homogeneous(TransitionTriple::scalar(0.6, 0.3, 0.1), range(-400, 5))
            .unwrap();
        let cfg = MonteCarloConfig {
            trials: 300,
            seed: 5,
            depth: 2,
            step_cap: 1_000_000,
        };
        let whole = monte_carlo(&env, &[1.0], &cfg).unwrap();
        let mut a = monte_carlo_trials(&env, &[1.0], &cfg, 100..300).unwrap();
        let b = monte_carlo_trials(&env, &[1.0], &cfg, 0..100).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, whole);
        assert_eq!(whole.identity_violations, 0);
    }

    #[test]
    fn lumping_keeps_expected_counts() {
        let hist = vec![50, 30, 10, 5, 3, 1, 1];
        let bins = lumped_bins(&hist, 100, |m| Ok(0.5f64.powi(m as i32 + 1))).unwrap();
        assert!(bins.iter().all(|b| 100.0 * b.3 >= MIN_EXPECTED_PER_BIN - 1e-9));
        assert_eq!(bins.iter().map(|b| b.2).sum::<u64>(), 100);
        assert!((bins.iter().map(|b| b.3).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(bins.last().unwrap().1.is_none());
    }

    #[test]
    fn default_window_grows_with_weak_drift() {
        assert_eq!(default_window(-1.0, 3), LayerRange { lo: -70, hi: 3 });
        assert_eq!(default_window(f64::NEG_INFINITY, 1).lo, -50);
        assert!(default_window(-0.01, 1).lo < -2000);
    }
}
