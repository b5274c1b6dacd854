//! The conservative Metropolis-type kernel and its steppers.
//!
//! From `eta = (k_1, ..., k_m)` a particle moves from site `i` to site `j != i`
//! with probability
//!
//! ```text
//! p(eta, eta^{ij}) = k_i^delta / l_delta * 1/m * exp(-[psi_i(k_i - 1) - psi_j(k_j)]^+)
//! ```
//!
//! and stays put otherwise. With `delta = 1` the site draw is a uniform
//! particle draw. One step consumes exactly three uniforms (site selector,
//! target level, acceptance), whether or not the move is accepted.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::ModelSpec;
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::sumtree::SumTree;

/// Occupation vector `(k_1, ..., k_m)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(Vec<usize>);

impl Configuration {
    pub fn new(occ: Vec<usize>) -> Self {
        Self(occ)
    }

    pub fn occ(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// `eta^{ij}`: one particle moved from `i` to `j`. Requires `k_i > 0`.
    pub fn moved(&self, i: usize, j: usize) -> Self {
        let mut out = self.clone();
        out.apply_move(i, j);
        out
    }

    pub(crate) fn apply_move(&mut self, i: usize, j: usize) {
        debug_assert!(self.0[i] > 0);
        self.0[i] -= 1;
        self.0[j] += 1;
    }

    /// `sum_i [self_i - other_i]^+`.
    pub fn discrepancy(&self, other: &Self) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a.saturating_sub(b))
            .sum()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (n, x) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{x}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches('(').trim_end_matches(')');
        if s.is_empty() {
            return Ok(Self(Vec::new()));
        }
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Argument(format!("bad occupation {p:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl From<Vec<usize>> for Configuration {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

fn check_positive<T: Real>(model: &ModelSpec<T>, eta: &Configuration) -> Result<()> {
    if eta.len() != model.m() || eta.total() != model.k() {
        return Err(Error::Argument(format!(
            "{eta} is not a configuration of {} particles on {} sites",
            model.k(),
            model.m()
        )));
    }
    if !model.is_positive(eta.occ()) {
        return Err(Error::Argument(format!("{eta} has zero weight")));
    }
    Ok(())
}

fn check_move<T: Real>(model: &ModelSpec<T>, eta: &Configuration, i: usize, j: usize) -> Result<()> {
    if i == j {
        return Err(Error::Argument("i == j: use holding_prob for the diagonal".into()));
    }
    if i >= model.m() || j >= model.m() {
        return Err(Error::Argument(format!("site index out of range (m = {})", model.m())));
    }
    check_positive(model, eta)
}

#[inline]
fn log_move_prob<T: Real>(model: &ModelSpec<T>, occ: &[usize], i: usize, j: usize) -> T {
    if occ[i] == 0 {
        return T::neg_infinity();
    }
    (model.site_weight(occ[i]) / (model.l_delta() * T::of_usize(model.m()))).ln()
        + model.log_acceptance(i, occ[i], j, occ[j])
}

/// `ln p(eta, eta^{ij})`; `-inf` when the move is impossible.
pub fn log_transition_prob<T: Real>(model: &ModelSpec<T>, eta: &Configuration, i: usize, j: usize) -> Result<T> {
    check_move(model, eta, i, j)?;
    Ok(log_move_prob(model, eta.occ(), i, j))
}

/// `p(eta, eta^{ij})` for `i != j`.
pub fn transition_prob<T: Real>(model: &ModelSpec<T>, eta: &Configuration, i: usize, j: usize) -> Result<T> {
    check_move(model, eta, i, j)?;
    let occ = eta.occ();
    if occ[i] == 0 {
        return Ok(T::zero());
    }
    Ok(model.site_weight(occ[i]) / model.l_delta() / T::of_usize(model.m()) * model.acceptance(i, occ[i], j, occ[j]))
}

/// All moves `(i, j, p(eta, eta^{ij}))` with positive probability, in
/// `(i, j)` order.
pub fn exit_moves<T: Real>(model: &ModelSpec<T>, eta: &Configuration) -> Result<Vec<(usize, usize, T)>> {
    check_positive(model, eta)?;
    let occ = eta.occ();
    let scale = T::one() / (model.l_delta() * T::of_usize(model.m()));
    let mut out = Vec::new();
    for i in (0..model.m()).filter(|&i| occ[i] > 0) {
        let w = model.site_weight(occ[i]) * scale;
        for j in (0..model.m()).filter(|&j| j != i) {
            let p = w * model.acceptance(i, occ[i], j, occ[j]);
            if p > T::zero() {
                out.push((i, j, p));
            }
        }
    }
    Ok(out)
}

/// `p(eta, eta) = 1 - sum_{i != j} p(eta, eta^{ij})`.
pub fn holding_prob<T: Real>(model: &ModelSpec<T>, eta: &Configuration) -> Result<T> {
    let exit: T = exit_moves(model, eta)?.into_iter().map(|(_, _, p)| p).sum();
    debug_assert!(exit <= T::one() + T::of(1e-12), "exit mass {exit} exceeds 1");
    Ok((T::one() - exit).max(T::zero()))
}

fn ensure_steppable<T: Real>(model: &ModelSpec<T>) -> Result<()> {
    if model.delta() > T::zero() {
        Ok(())
    } else {
        Err(Error::UnsupportedKernel(
            "delta = 0: the mixing bound requires delta > 0 (potentials are not strictly enough log-concave)".into(),
        ))
    }
}

#[derive(Clone, Debug)]
struct ExitLaw<T> {
    at: Configuration,
    hold: T,
    mass: T,
    cumulative: Vec<(usize, usize, T)>,
}

impl<T: Real> ExitLaw<T> {
    fn new(model: &ModelSpec<T>, at: &Configuration) -> Result<Self> {
        let mut acc = T::zero();
        let cumulative = exit_moves(model, at)?
            .into_iter()
            .map(|(i, j, p)| {
                acc += p;
                (i, j, acc)
            })
            .collect();
        Ok(Self {
            at: at.clone(),
            hold: (T::one() - acc).max(T::zero()),
            mass: acc,
            cumulative,
        })
    }

    fn pick(&self, target: T) -> (usize, usize) {
        let idx = self.cumulative.partition_point(|&(_, _, c)| c <= target);
        let (i, j, _) = self.cumulative[idx.min(self.cumulative.len() - 1)];
        (i, j)
    }
}

/// Number of trials up to and including the first success of a geometric
/// law with failure probability `hold`, by inverse CDF.
pub fn geometric_trials<T: Real>(u: T, hold: T) -> u64 {
    if hold <= T::zero() {
        return 1;
    }
    let v = T::one() - u; // (0, 1]
    let n = (v.ln() / hold.ln()).ceil();
    match n.to_f64() {
        Some(x) if x >= 1.0 => {
            if x >= (u64::MAX / 2) as f64 {
                u64::MAX / 2
            } else {
                x as u64
            }
        }
        _ => 1,
    }
}

/// One chain: configuration, site-weight tree, private random stream, clock.
#[derive(Clone, Debug)]
pub struct ChainState<T> {
    config: Configuration,
    weights: SumTree<T>,
    rng: StreamRng,
    time: u64,
    exit_cache: Option<ExitLaw<T>>,
}

/// Outcome of one skip-ahead step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipOutcome {
    /// Left the configuration after `elapsed` plain steps.
    Moved { elapsed: u64 },
    /// `p(eta, eta) = 1`: the chain never leaves.
    Absorbing,
}

impl<T: Real> ChainState<T> {
    pub fn new(model: &ModelSpec<T>, config: Configuration, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        Self::with_rng(model, config, StreamRng::seed_from_u64(seed))
    }

    pub fn with_rng(model: &ModelSpec<T>, config: Configuration, rng: StreamRng) -> Result<Self> {
        check_positive(model, &config)?;
        let weights = SumTree::new(&Self::leaf_weights(model, &config));
        Ok(Self {
            config,
            weights,
            rng,
            time: 0,
            exit_cache: None,
        })
    }

    fn leaf_weights(model: &ModelSpec<T>, config: &Configuration) -> Vec<T> {
        config.occ().iter().map(|&x| model.site_weight(x)).collect()
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn rng_mut(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    /// Total site weight `sum_i k_i^delta`.
    pub fn site_weight_total(&self) -> T {
        self.weights.total()
    }

    fn apply_move(&mut self, model: &ModelSpec<T>, i: usize, j: usize) {
        self.config.apply_move(i, j);
        let occ = self.config.occ();
        self.weights.set(i, model.site_weight(occ[i]));
        self.weights.set(j, model.site_weight(occ[j]));
        self.exit_cache = None;
        debug_assert!(
            self.weights.is_consistent_with(&Self::leaf_weights(model, &self.config)),
            "site-weight tree out of sync with {}",
            self.config
        );
    }
}

/// One step of the chain. Returns whether the configuration changed.
pub fn step<T: Real>(model: &ModelSpec<T>, state: &mut ChainState<T>) -> Result<bool> {
    ensure_steppable(model)?;
    Ok(step_unchecked(model, state))
}

#[inline]
pub(crate) fn step_unchecked<T: Real>(model: &ModelSpec<T>, state: &mut ChainState<T>) -> bool {
    let r_site = T::unit(&mut state.rng) * model.l_delta();
    let j = state.rng.random_range(0..model.m());
    let u = T::unit(&mut state.rng);
    state.time += 1;
    let Some(i) = state.weights.find(r_site) else {
        return false;
    };
    if i == j {
        return false;
    }
    let occ = state.config.occ();
    if u < model.acceptance(i, occ[i], j, occ[j]) {
        state.apply_move(model, i, j);
        true
    } else {
        false
    }
}

/// Applies [`step`] `t_steps` times.
pub fn run<T: Real>(model: &ModelSpec<T>, state: &mut ChainState<T>, t_steps: u64) -> Result<()> {
    ensure_steppable(model)?;
    for _ in 0..t_steps {
        step_unchecked(model, state);
    }
    Ok(())
}

fn cached_exit_law<'a, T: Real>(model: &ModelSpec<T>, state: &'a mut ChainState<T>) -> Result<&'a ExitLaw<T>> {
    let stale = state.exit_cache.as_ref().is_none_or(|c| c.at != state.config);
    if stale {
        state.exit_cache = Some(ExitLaw::new(model, &state.config)?);
    }
    Ok(state.exit_cache.as_ref().unwrap())
}

/// Jumps straight to the next distinct configuration: draws the geometric
/// holding time, then the exit move with probability
/// `p(eta, eta') / (1 - p(eta, eta))`. Consumes two uniforms.
pub fn skip_ahead_step<T: Real>(model: &ModelSpec<T>, state: &mut ChainState<T>) -> Result<SkipOutcome> {
    ensure_steppable(model)?;
    let law = cached_exit_law(model, state)?;
    if law.cumulative.is_empty() {
        return Ok(SkipOutcome::Absorbing);
    }
    let (hold, mass) = (law.hold, law.mass);
    let u = T::unit(&mut state.rng);
    let r = T::unit(&mut state.rng);
    let elapsed = geometric_trials(u, hold);
    let (i, j) = state.exit_cache.as_ref().unwrap().pick(r * mass);
    state.time = state.time.saturating_add(elapsed);
    state.apply_move(model, i, j);
    Ok(SkipOutcome::Moved { elapsed })
}

/// Advances the clock by exactly `t_steps` using skip-ahead steps; the
/// state at the end has the law of [`run`] over the same horizon.
pub fn run_skip_ahead<T: Real>(model: &ModelSpec<T>, state: &mut ChainState<T>, t_steps: u64) -> Result<()> {
    ensure_steppable(model)?;
    let target = state.time.saturating_add(t_steps);
    loop {
        let law = cached_exit_law(model, state)?;
        if law.cumulative.is_empty() {
            state.time = target;
            return Ok(());
        }
        let (hold, mass) = (law.hold, law.mass);
        let u = T::unit(&mut state.rng);
        let r = T::unit(&mut state.rng);
        let elapsed = geometric_trials(u, hold);
        if state.time.saturating_add(elapsed) > target {
            state.time = target;
            return Ok(());
        }
        let (i, j) = state.exit_cache.as_ref().unwrap().pick(r * mass);
        state.time += elapsed;
        state.apply_move(model, i, j);
    }
}
