//! Ensemble estimation of mixing curves when the state space is far too
//! large to enumerate.
//!
//! For a start `eta0`, `N` independent chains give the empirical law
//! `mu_t^N`. The stationary law is replaced by `nu^N`, the pooled empirical
//! laws of two further ensembles over `t in (T, 2T]` with
//! `T = floor(alpha ln(k / eps))` (`alpha = km` when `delta = 1`). Both are
//! compared after projecting configurations to their free entropy and
//! binning it into `M` cells spanning the range seen under `nu^N`:
//!
//! ```text
//! dbar(t) = max over eta0 of || bin(mu_t^N) - bin(nu^N) ||_TV
//! ```
//!
//! Every chain draws from its own stream `derive_seed(base, [phase,
//! beta_index, eta0_index, chain])`, phases 0 and 1 for the two reference
//! ensembles and 2 for the test ensembles. Histograms are merged as integer
//! counts, so results do not depend on the number of worker threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::mixing_bound;
use crate::kernel::{step_unchecked, ChainState, Configuration};
use crate::measures::{build_fermi, FermiSpec, ModelSpec};
use crate::rng::{derive_seed, StreamRng};
use crate::scalar::Real;

/// Cell width used when every reference value coincides.
pub const DEGENERATE_WIDTH: f64 = 1e-6;

const PHASE_TEST: u64 = 2;

/// `(0, ..., 0, k)` when level `m` can hold `k` particles, otherwise levels
/// filled to capacity from the top down; and the configuration filling
/// levels by increasing energy (stable on ties) up to their degeneracy.
pub fn eta0_candidates(spec: &FermiSpec) -> Result<Vec<Configuration>> {
    spec.validate()?;
    let top: Vec<usize> = (0..spec.m).rev().collect();
    let mut by_energy: Vec<usize> = (0..spec.m).collect();
    by_energy.sort_by(|&a, &b| spec.v[a].total_cmp(&spec.v[b]));
    let caps: Vec<usize> = spec.n.iter().map(|&n| n.min(spec.k as u64) as usize).collect();
    Ok(vec![
        fill_in_order(spec.k, &vec![0; spec.m], &caps, &top),
        fill_in_order(spec.k, &vec![0; spec.m], &caps, &by_energy),
    ])
}

/// Same idea for arbitrary potentials: top-down and bottom-up fills of the
/// supports.
pub fn extreme_configurations<T: Real>(model: &ModelSpec<T>) -> Vec<Configuration> {
    let lo: Vec<usize> = model.potentials().iter().map(|p| p.support().0).collect();
    let hi: Vec<usize> = model.potentials().iter().map(|p| p.support().1.min(model.k())).collect();
    let top: Vec<usize> = (0..model.m()).rev().collect();
    let bottom: Vec<usize> = (0..model.m()).collect();
    vec![
        fill_in_order(model.k(), &lo, &hi, &top),
        fill_in_order(model.k(), &lo, &hi, &bottom),
    ]
}

fn fill_in_order(k: usize, lo: &[usize], hi: &[usize], order: &[usize]) -> Configuration {
    let mut occ = lo.to_vec();
    let mut left = k - lo.iter().sum::<usize>();
    for &j in order {
        let add = left.min(hi[j] - occ[j]);
        occ[j] += add;
        left -= add;
    }
    debug_assert_eq!(left, 0);
    Configuration::new(occ)
}

/// Partition of the real line into cells of equal width aligned to `lo`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoarseBinning {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
    pub bins: usize,
}

impl CoarseBinning {
    /// Cell index of `phi`; `hi` itself belongs to the last of the `bins`
    /// cells.
    pub fn bin(&self, phi: f64) -> i64 {
        if self.hi > self.lo && phi == self.hi {
            return self.bins as i64 - 1;
        }
        ((phi - self.lo) / self.width).floor() as i64
    }

    /// `bin` folded onto `0..=bins`, with `bins` collecting every cell
    /// outside `[lo, hi]` (the reference has no mass there).
    pub fn dense_index(&self, phi: f64) -> usize {
        let b = self.bin(phi);
        if b < 0 || b >= self.bins as i64 {
            self.bins
        } else {
            b as usize
        }
    }

    pub fn edges(&self, b: i64) -> (f64, f64) {
        (self.lo + b as f64 * self.width, self.lo + (b + 1) as f64 * self.width)
    }
}

/// `lo = min`, `hi = max`, width `(hi - lo) / bins` or [`DEGENERATE_WIDTH`].
pub fn coarse_bins(samples: &[f64], bins: usize) -> Result<CoarseBinning> {
    if samples.is_empty() {
        return Err(Error::Argument("cannot bin an empty sample".into()));
    }
    if bins == 0 {
        return Err(Error::Argument("need at least one bin".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("free entropy samples must be finite".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { DEGENERATE_WIDTH };
    Ok(CoarseBinning { lo, hi, width, bins })
}

/// Sparse counts per cell.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoarseHistogram {
    pub counts: BTreeMap<i64, u64>,
    pub total: u64,
}

impl CoarseHistogram {
    pub fn from_samples(binning: &CoarseBinning, samples: &[f64]) -> Self {
        let mut h = Self::default();
        for &x in samples {
            *h.counts.entry(binning.bin(x)).or_insert(0) += 1;
            h.total += 1;
        }
        h
    }

    /// TV distance after normalizing both histograms.
    pub fn tv(&self, other: &Self) -> f64 {
        let (a, b) = (self.total as f64, other.total as f64);
        let keys: std::collections::BTreeSet<_> = self.counts.keys().chain(other.counts.keys()).collect();
        0.5 * keys
            .into_iter()
            .map(|c| {
                let p = self.counts.get(c).map_or(0.0, |&n| n as f64 / a);
                let q = other.counts.get(c).map_or(0.0, |&n| n as f64 / b);
                (p - q).abs()
            })
            .sum::<f64>()
    }
}

/// Everything needed for one `dbar` estimate.
#[derive(Clone, Debug)]
pub struct SimPlan<T> {
    pub model: ModelSpec<T>,
    /// Chains per ensemble, `N`.
    pub ensemble: usize,
    /// Reference cells, `M`.
    pub bins: usize,
    pub epsilon: f64,
    /// `T`; the series covers `0..=2T`.
    pub horizon: u64,
    pub eta0: Vec<Configuration>,
    pub base_seed: u64,
    pub beta_index: u64,
}

impl<T: Real> SimPlan<T> {
    /// Plan with `T = floor(alpha ln(k / eps))` and the two extreme starts.
    pub fn new(model: ModelSpec<T>, ensemble: usize, bins: usize, epsilon: f64, base_seed: u64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Argument(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if model.delta() <= T::zero() {
            return Err(Error::UnsupportedKernel("delta = 0: no horizon can be derived".into()));
        }
        let bound = mixing_bound(&model, T::of(epsilon)).as_f64();
        let horizon = if bound.is_finite() && bound >= 1.0 { bound.floor() as u64 } else { 1 };
        let eta0 = match model.fermi() {
            Some(spec) => eta0_candidates(spec)?,
            None => extreme_configurations(&model),
        };
        let plan = Self {
            model,
            ensemble,
            bins,
            epsilon,
            horizon,
            eta0,
            base_seed,
            beta_index: 0,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_horizon(mut self, horizon: u64) -> Result<Self> {
        self.horizon = horizon;
        self.validate()?;
        Ok(self)
    }

    pub fn with_eta0(mut self, eta0: Vec<Configuration>) -> Result<Self> {
        self.eta0 = eta0;
        self.validate()?;
        Ok(self)
    }

    pub fn with_beta_index(mut self, beta_index: u64) -> Self {
        self.beta_index = beta_index;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble < 2 {
            return Err(Error::Argument("ensemble size N must be at least 2".into()));
        }
        if self.bins < 1 {
            return Err(Error::Argument("need at least one bin".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Argument("horizon T must be at least 1".into()));
        }
        if self.eta0.is_empty() {
            return Err(Error::Argument("need at least one starting configuration".into()));
        }
        for c in &self.eta0 {
            if !self.model.is_positive(c.occ()) {
                return Err(Error::Argument(format!("start {c} has zero weight")));
            }
        }
        Ok(())
    }

    fn chain_seed(&self, phase: u64, eta_index: u64, chain: usize) -> u64 {
        derive_seed(self.base_seed, &[phase, self.beta_index, eta_index, chain as u64])
    }
}

struct Tracked<'a, T> {
    model: &'a ModelSpec<T>,
    state: ChainState<T>,
    phi: f64,
}

impl<'a, T: Real> Tracked<'a, T> {
    fn new(model: &'a ModelSpec<T>, start: &Configuration, seed: u64) -> Result<Self> {
        let state = ChainState::with_rng(model, start.clone(), StreamRng::seed_from_u64(seed))?;
        let phi = model.log_weight(start.occ()).value().as_f64();
        Ok(Self { model, state, phi })
    }

    #[inline]
    fn advance(&mut self) {
        if step_unchecked(self.model, &mut self.state) {
            self.phi = self.model.log_weight(self.state.config().occ()).value().as_f64();
        }
    }
}

/// Pooled free-entropy values of the two reference ensembles over
/// `t in (T, 2T]`: `2 T N` values, ensemble 0 first, chain by chain.
pub fn build_reference<T: Real>(plan: &SimPlan<T>) -> Result<Vec<f64>> {
    plan.validate()?;
    let starts = [&plan.eta0[0], &plan.eta0[plan.eta0.len().min(2) - 1]];
    let t = plan.horizon;
    let mut pooled = Vec::with_capacity(2 * t as usize * plan.ensemble);
    for (phase, start) in starts.into_iter().enumerate() {
        let chunks: Vec<Vec<f64>> = (0..plan.ensemble)
            .into_par_iter()
            .map(|c| {
                let mut ch = Tracked::new(&plan.model, start, plan.chain_seed(phase as u64, phase as u64, c))?;
                let mut out = Vec::with_capacity(t as usize);
                for s in 1..=2 * t {
                    ch.advance();
                    if s > t {
                        out.push(ch.phi);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        chunks.into_iter().for_each(|c| pooled.extend(c));
    }
    Ok(pooled)
}

/// Output of [`estimate_dbar`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DbarEstimate {
    /// `dbar(t)` for `t = 0..=2T`.
    pub series: Vec<f64>,
    /// Same, per start, in the order of the plan's `eta0`.
    pub per_start: Vec<Vec<f64>>,
    pub binning: CoarseBinning,
    /// Reference mass per cell `0..bins`.
    pub reference_mass: Vec<f64>,
}

/// Runs the reference and one test ensemble per start.
pub fn estimate_dbar<T: Real>(plan: &SimPlan<T>) -> Result<DbarEstimate> {
    let pooled = build_reference(plan)?;
    let binning = coarse_bins(&pooled, plan.bins)?;
    let mut ref_counts = vec![0u64; plan.bins + 1];
    for &x in &pooled {
        ref_counts[binning.dense_index(x)] += 1;
    }
    debug_assert_eq!(ref_counts[plan.bins], 0);
    let ref_total = pooled.len() as f64;
    drop(pooled);
    let reference_mass: Vec<f64> = ref_counts[..plan.bins].iter().map(|&c| c as f64 / ref_total).collect();

    let steps = 2 * plan.horizon as usize;
    let width = plan.bins + 1;
    let mut per_start = Vec::with_capacity(plan.eta0.len());
    for (e, start) in plan.eta0.iter().enumerate() {
        // counts[t * width + cell]
        let counts = (0..plan.ensemble)
            .into_par_iter()
            .try_fold(
                || vec![0u32; (steps + 1) * width],
                |mut acc, c| -> Result<Vec<u32>> {
                    let mut ch = Tracked::new(&plan.model, start, plan.chain_seed(PHASE_TEST, e as u64, c))?;
                    acc[binning.dense_index(ch.phi)] += 1;
                    for t in 1..=steps {
                        ch.advance();
                        acc[t * width + binning.dense_index(ch.phi)] += 1;
                    }
                    Ok(acc)
                },
            )
            .try_reduce(
                || vec![0u32; (steps + 1) * width],
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    Ok(a)
                },
            )?;
        let n = plan.ensemble as f64;
        let series = counts
            .chunks_exact(width)
            .map(|row| {
                let inside: f64 = row[..plan.bins]
                    .iter()
                    .zip(&reference_mass)
                    .map(|(&c, &r)| (c as f64 / n - r).abs())
                    .sum();
                (0.5 * (inside + row[plan.bins] as f64 / n)).min(1.0)
            })
            .collect();
        per_start.push(series);
    }
    let series = (0..=steps)
        .map(|t| per_start.iter().map(|s: &Vec<f64>| s[t]).fold(0.0, f64::max))
        .collect();
    Ok(DbarEstimate {
        series,
        per_start,
        binning,
        reference_mass,
    })
}

/// `t_hat` read off a noisy `dbar` series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MixingEstimate {
    pub t_hat: u64,
    /// False when the series never stays below `eps`; `t_hat` is then the
    /// last index.
    pub mixed: bool,
    pub window: u64,
}

/// First `t` with `series[s] <= eps` for every `s` in `[t, min(t + W, end)]`,
/// `W = ceil(0.05 T)`.
pub fn estimate_mixing(series: &[f64], epsilon: f64, horizon: u64) -> MixingEstimate {
    let window = (0.05 * horizon as f64).ceil() as u64;
    let end = series.len().saturating_sub(1);
    // run = length of the current streak of values <= eps ending at s
    let mut run_start = None;
    for (s, &x) in series.iter().enumerate() {
        if x <= epsilon {
            let t = *run_start.get_or_insert(s);
            if s >= (t + window as usize).min(end) {
                return MixingEstimate {
                    t_hat: t as u64,
                    mixed: true,
                    window,
                };
            }
        } else {
            run_start = None;
        }
    }
    MixingEstimate {
        t_hat: end as u64,
        mixed: false,
        window,
    }
}

/// Steps until the chain from `start` first sits in `target`.
pub fn hitting_time<T: Real>(
    model: &ModelSpec<T>,
    start: &Configuration,
    target: &Configuration,
    seed: u64,
    max_t: u64,
) -> Result<Option<u64>> {
    if model.delta() <= T::zero() {
        return Err(Error::UnsupportedKernel("delta = 0".into()));
    }
    let mut state = ChainState::new(model, start.clone(), seed)?;
    for t in 0..=max_t {
        if state.config() == target {
            return Ok(Some(t));
        }
        if t < max_t {
            step_unchecked(model, &mut state);
        }
    }
    Ok(None)
}

/// Ensemble and binning parameters shared by every temperature of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSettings {
    pub ensemble: usize,
    pub bins: usize,
    pub epsilon: f64,
    pub base_seed: u64,
}

/// One temperature of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub horizon: u64,
    pub bound: f64,
    pub mixing: MixingEstimate,
    pub dbar: DbarEstimate,
}

/// Full pipeline for each `beta` (index `b` seeds the `b`-th temperature).
pub fn beta_sweep(base: &FermiSpec, betas: &[f64], settings: &SweepSettings) -> Result<Vec<SweepPoint>> {
    betas
        .iter()
        .enumerate()
        .map(|(b, &beta)| sweep_point(base, beta, b as u64, settings))
        .collect()
}

pub fn sweep_point(base: &FermiSpec, beta: f64, beta_index: u64, settings: &SweepSettings) -> Result<SweepPoint> {
    let spec = FermiSpec { beta, ..base.clone() };
    let model: ModelSpec<f64> = build_fermi(&spec)?;
    let bound = mixing_bound(&model, settings.epsilon);
    let plan = SimPlan::new(model, settings.ensemble, settings.bins, settings.epsilon, settings.base_seed)?
        .with_beta_index(beta_index);
    let dbar = estimate_dbar(&plan)?;
    let mixing = estimate_mixing(&dbar.series, settings.epsilon, plan.horizon);
    Ok(SweepPoint {
        beta,
        horizon: plan.horizon,
        bound,
        mixing,
        dbar,
    })
}

/// Named parameter sets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub spec: FermiSpec,
    pub betas: Vec<f64>,
    pub settings: SweepSettings,
}

/// Seed of the degeneracy draw of the `case2` preset.
pub const CASE2_DEGENERACY_SEED: u64 = 20;

/// `0` followed by 50 log-spaced values from `0.1` to `1000`.
pub fn default_betas() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..50).map(|i| 10f64.powf(-1.0 + 4.0 * i as f64 / 49.0)))
        .collect()
}

/// Eleven temperatures spanning `0..=1000`.
pub fn short_betas() -> Vec<f64> {
    vec![0.0, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 63.0, 250.0, 1000.0]
}

/// Degeneracies drawn from a multinomial(`total`, uniform over `m`) law by
/// sequential binomials.
pub fn multinomial_degeneracies(total: u64, m: usize, seed: u64) -> Vec<u64> {
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut left = total;
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let n = if j + 1 == m {
            left
        } else {
            Binomial::new(left, 1.0 / (m - j) as f64)
                .expect("valid binomial")
                .sample(&mut rng)
        };
        left -= n;
        out.push(n);
    }
    out
}

fn ladder(k: usize, m: usize, n: Vec<u64>) -> FermiSpec {
    FermiSpec {
        k,
        m,
        beta: 0.0,
        v: (1..=m).map(|j| j as f64 / m as f64).collect(),
        n,
    }
}

/// `desk`: k = 10, m = 8, `n_j = 2^j`, N = 256, M = 16.
/// `case1`: k = 50, m = 20, `n_j = 2^j`, N = 1024, M = 32.
/// `case2`: as `case1` with multinomial degeneracies of the same total.
pub fn preset(name: &str) -> Result<Preset> {
    let settings = |ensemble, bins| SweepSettings {
        ensemble,
        bins,
        epsilon: 0.1,
        base_seed: 0,
    };
    match name {
        "desk" => Ok(Preset {
            name: "desk",
            spec: ladder(10, 8, (1..=8).map(|j| 1u64 << j).collect()),
            betas: short_betas(),
            settings: settings(256, 16),
        }),
        "case1" => Ok(Preset {
            name: "case1",
            spec: ladder(50, 20, (1..=20).map(|j| 1u64 << j).collect()),
            betas: default_betas(),
            settings: settings(1024, 32),
        }),
        "case2" => Ok(Preset {
            name: "case2",
            spec: ladder(50, 20, multinomial_degeneracies((1 << 21) - 2, 20, CASE2_DEGENERACY_SEED)),
            betas: default_betas(),
            settings: settings(1024, 32),
        }),
        _ => Err(Error::Argument(format!("unknown preset {name:?} (desk | case1 | case2)"))),
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

/// `t,dbar`.
pub fn dbar_csv(series: &[f64]) -> String {
    let mut s = String::from("t,dbar\n");
    for (t, &d) in series.iter().enumerate() {
        let _ = writeln!(s, "{t},{}", fmt_f(d));
    }
    s
}

/// `bin_lo,bin_hi,mass`.
pub fn reference_csv(binning: &CoarseBinning, mass: &[f64]) -> String {
    let mut s = String::from("bin_lo,bin_hi,mass\n");
    for (b, &p) in mass.iter().enumerate() {
        let (lo, hi) = binning.edges(b as i64);
        let _ = writeln!(s, "{},{},{}", fmt_f(lo), fmt_f(hi), fmt_f(p));
    }
    s
}

/// `beta,t_hat,bound,mixed_flag`.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("beta,t_hat,bound,mixed_flag\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f(p.beta),
            p.mixing.t_hat,
            fmt_f(p.bound),
            u8::from(p.mixing.mixed)
        );
    }
    s
}

/// Name fragment for per-temperature files: shortest round-trip decimal.
pub fn beta_tag(beta: f64) -> String {
    format!("{beta}")
}
