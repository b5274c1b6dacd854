//! Couplings of two copies of the chain whose discrepancy `rho` never
//! increases.
//!
//! [`ColoredPair`] tracks labelled particles and a red/blue coloring; it
//! needs `delta = 1`. [`DeltaPair`] works on occupation vectors directly by
//! splitting `[0, l_delta)` into shared and private pieces, and covers any
//! `delta > 0`. Both check `rho_{t+1} <= rho_t` on every step and fail with
//! [`Error::CorruptedCoupling`] otherwise.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::contraction_time;
use crate::kernel::Configuration;
use crate::measures::ModelSpec;
use crate::rng::{derive_seed, StreamRng};
use crate::scalar::Real;

/// `sum_i [a_i - b_i]^+`.
pub fn rho(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).map(|(&x, &y)| x.saturating_sub(y)).sum()
}

fn check_pair<T: Real>(model: &ModelSpec<T>, a: &Configuration, b: &Configuration) -> Result<()> {
    for c in [a, b] {
        if !model.is_positive(c.occ()) {
            return Err(Error::Argument(format!("{c} is not a positive-weight configuration of the model")));
        }
    }
    Ok(())
}

/// Common interface of the two couplings.
pub trait Coupling<T: Real> {
    fn first(&self) -> &Configuration;
    fn second(&self) -> &Configuration;
    fn rho(&self) -> usize;
    /// One coupled step. Always consumes five uniforms from `rng`.
    fn coupled_step(&mut self, model: &ModelSpec<T>, rng: &mut StreamRng) -> Result<()>;
}

/// Which coupling to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Colored,
    Delta,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "colored" => Ok(Self::Colored),
            "delta" => Ok(Self::Delta),
            _ => Err(Error::Argument(format!("unknown coupling variant {s:?} (colored | delta)"))),
        }
    }
}

// ---------------------------------------------------------------------------
// colored coupling

/// Red/blue coloring of a labelled pair, recomputed from scratch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coloring {
    pub red1: Vec<bool>,
    pub red2: Vec<bool>,
    /// Blue label on side 1 to its partner on side 2 (same level).
    pub phi: Vec<Option<usize>>,
    /// Red labels of side 2, ascending.
    pub reds2: Vec<usize>,
}

/// Two labelled particle systems `omega^1, omega^2 : {0..k} -> {0..m}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColoredPair {
    omega1: Vec<usize>,
    omega2: Vec<usize>,
    occ1: Configuration,
    occ2: Configuration,
    rho: usize,
}

/// What one colored step did; mostly for tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColoredStep {
    pub x1: usize,
    pub x2: usize,
    pub red: bool,
    pub i1: usize,
    pub i2: usize,
    pub j: usize,
    pub moved1: bool,
    pub moved2: bool,
}

fn labels_for(occ: &[usize]) -> Vec<usize> {
    occ.iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(i, n))
        .collect()
}

fn occupation(omega: &[usize], m: usize) -> Configuration {
    let mut occ = vec![0; m];
    for &i in omega {
        occ[i] += 1;
    }
    Configuration::new(occ)
}

impl ColoredPair {
    /// Labels particles level by level in increasing order on both sides.
    pub fn new<T: Real>(model: &ModelSpec<T>, a: &Configuration, b: &Configuration) -> Result<Self> {
        check_pair(model, a, b)?;
        if !model.is_ultra_log_concave() {
            return Err(Error::UnsupportedKernel(format!(
                "the colored coupling needs delta = 1 (got {})",
                model.delta()
            )));
        }
        Self::from_labels(labels_for(a.occ()), labels_for(b.occ()), model.m())
    }

    pub fn from_labels(omega1: Vec<usize>, omega2: Vec<usize>, m: usize) -> Result<Self> {
        if omega1.len() != omega2.len() || omega1.iter().chain(&omega2).any(|&i| i >= m) {
            return Err(Error::Argument("label maps must have equal length and levels below m".into()));
        }
        let occ1 = occupation(&omega1, m);
        let occ2 = occupation(&omega2, m);
        let rho = rho(occ1.occ(), occ2.occ());
        Ok(Self {
            omega1,
            omega2,
            occ1,
            occ2,
            rho,
        })
    }

    pub fn first(&self) -> &Configuration {
        &self.occ1
    }

    pub fn second(&self) -> &Configuration {
        &self.occ2
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn omega1(&self) -> &[usize] {
        &self.omega1
    }

    pub fn omega2(&self) -> &[usize] {
        &self.omega2
    }

    /// Per level, the lowest-labelled `[k1_i - k2_i]^+` particles of side 1
    /// (and symmetrically for side 2) are red; blues pair up in label order.
    pub fn coloring(&self) -> Coloring {
        let m = self.occ1.len();
        let k = self.omega1.len();
        let mut by1 = vec![Vec::new(); m];
        let mut by2 = vec![Vec::new(); m];
        for x in 0..k {
            by1[self.omega1[x]].push(x);
            by2[self.omega2[x]].push(x);
        }
        let mut red1 = vec![false; k];
        let mut red2 = vec![false; k];
        let mut phi = vec![None; k];
        for i in 0..m {
            let (a, b) = (by1[i].len(), by2[i].len());
            let blue = a.min(b);
            by1[i][..a - blue].iter().for_each(|&x| red1[x] = true);
            by2[i][..b - blue].iter().for_each(|&x| red2[x] = true);
            for (&x, &y) in by1[i][a - blue..].iter().zip(&by2[i][b - blue..]) {
                phi[x] = Some(y);
            }
        }
        let reds2 = (0..k).filter(|&x| red2[x]).collect();
        Coloring { red1, red2, phi, reds2 }
    }

    /// Recounts both coloring conditions and `rho`.
    pub fn check_invariants(&self) -> Result<()> {
        let c = self.coloring();
        let m = self.occ1.len();
        let mut blue1 = vec![0usize; m];
        let mut blue2 = vec![0usize; m];
        let mut has_red1 = vec![false; m];
        let mut has_red2 = vec![false; m];
        for x in 0..self.omega1.len() {
            if c.red1[x] {
                has_red1[self.omega1[x]] = true;
            } else {
                blue1[self.omega1[x]] += 1;
            }
            if c.red2[x] {
                has_red2[self.omega2[x]] = true;
            } else {
                blue2[self.omega2[x]] += 1;
            }
        }
        if blue1 != blue2 {
            return Err(Error::CorruptedCoupling("blue counts differ on some level".into()));
        }
        if (0..m).any(|i| has_red1[i] && has_red2[i]) {
            return Err(Error::CorruptedCoupling("a level holds red particles on both sides".into()));
        }
        let (r1, r2) = (c.red1.iter().filter(|&&r| r).count(), c.reds2.len());
        if r1 != self.rho || r2 != self.rho || self.rho != rho(self.occ1.occ(), self.occ2.occ()) {
            return Err(Error::CorruptedCoupling(format!("red counts {r1}/{r2} disagree with rho {}", self.rho)));
        }
        if c.phi.iter().enumerate().any(|(x, p)| p.is_some_and(|y| self.omega1[x] != self.omega2[y])) {
            return Err(Error::CorruptedCoupling("blue partner on a different level".into()));
        }
        Ok(())
    }

    /// One coupled step, reporting what happened.
    pub fn step_traced<T: Real>(&mut self, model: &ModelSpec<T>, rng: &mut StreamRng) -> Result<ColoredStep> {
        if !model.is_ultra_log_concave() {
            return Err(Error::UnsupportedKernel("the colored coupling needs delta = 1".into()));
        }
        let k = self.omega1.len();
        let m = model.m();
        let x1 = if k > 0 { rng.random_range(0..k) } else { 0 };
        let sel = T::unit(rng);
        let j = rng.random_range(0..m);
        let v1 = T::unit(rng);
        let v2 = T::unit(rng);
        if k == 0 {
            return Ok(ColoredStep {
                x1,
                x2: 0,
                red: false,
                i1: 0,
                i2: 0,
                j,
                moved1: false,
                moved2: false,
            });
        }

        let colors = self.coloring();
        let red = colors.red1[x1];
        let x2 = if red {
            let n = (sel * T::of_usize(self.rho)).to_usize().unwrap_or(0).min(self.rho - 1);
            colors.reds2[n]
        } else {
            colors.phi[x1].expect("blue particle has a partner")
        };
        let (i1, i2) = (self.omega1[x1], self.omega2[x2]);
        let (o1, o2) = (self.occ1.occ(), self.occ2.occ());
        let p1 = model.acceptance(i1, o1[i1], j, o1[j]);
        let p2 = model.acceptance(i2, o2[i2], j, o2[j]);
        // Blue pair: one shared U. With p_a >= p_b, U < p_b moves both and
        // p_b <= U < p_a moves only a, i.e. side s moves iff U < p_s.
        let u2 = if red { v2 } else { v1 };
        let moved1 = i1 != j && v1 < p1;
        let moved2 = i2 != j && u2 < p2;
        if moved1 {
            self.omega1[x1] = j;
            self.occ1.apply_move(i1, j);
        }
        if moved2 {
            self.omega2[x2] = j;
            self.occ2.apply_move(i2, j);
        }
        let before = self.rho;
        self.rho = rho(self.occ1.occ(), self.occ2.occ());
        if self.rho > before {
            return Err(Error::CorruptedCoupling(format!("rho increased from {before} to {}", self.rho)));
        }
        if cfg!(debug_assertions) {
            self.check_invariants()?;
        }
        Ok(ColoredStep {
            x1,
            x2,
            red,
            i1,
            i2,
            j,
            moved1,
            moved2,
        })
    }
}

impl<T: Real> Coupling<T> for ColoredPair {
    fn first(&self) -> &Configuration {
        Self::first(self)
    }

    fn second(&self) -> &Configuration {
        Self::second(self)
    }

    fn rho(&self) -> usize {
        Self::rho(self)
    }

    fn coupled_step(&mut self, model: &ModelSpec<T>, rng: &mut StreamRng) -> Result<()> {
        self.step_traced(model, rng).map(|_| ())
    }
}

// ---------------------------------------------------------------------------
// delta coupling

/// Which piece of `[0, l_delta)` the site draw landed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SiteCase {
    /// Site with equal occupations: both sides pick it.
    Balanced,
    /// Site where the larger side's deficit is shared: both pick it.
    Shared,
    /// Site with surplus on the larger side; the other side picks the same
    /// site, a deficit site, or nothing.
    Surplus,
    /// No site for the larger side (only when `delta < 1`).
    Idle,
}

/// Outcome of the site-selection stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteChoice {
    pub i1: Option<usize>,
    pub i2: Option<usize>,
    pub case: SiteCase,
    /// Whether sides were swapped because side 2 carried more weight.
    pub mirrored: bool,
}

/// Partition weights of a pair of configurations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairWeights<T> {
    pub w1: T,
    pub w1p: T,
    pub w2: T,
    pub w2p: T,
    pub wb: T,
}

impl<T: Real> PairWeights<T> {
    pub fn new(model: &ModelSpec<T>, a: &[usize], b: &[usize]) -> Self {
        let mut w = Self {
            w1: T::zero(),
            w1p: T::zero(),
            w2: T::zero(),
            w2p: T::zero(),
            wb: T::zero(),
        };
        for (&x, &y) in a.iter().zip(b) {
            let (sa, sb) = (model.site_weight(x), model.site_weight(y));
            match x.cmp(&y) {
                std::cmp::Ordering::Greater => {
                    w.w1 += sa;
                    w.w2p += sb;
                }
                std::cmp::Ordering::Less => {
                    w.w2 += sb;
                    w.w1p += sa;
                }
                std::cmp::Ordering::Equal => w.wb += sa,
            }
        }
        w
    }
}

/// Finds the member of `sites` whose cumulative weight interval contains
/// `target`; returns it with the offset inside its interval.
fn locate<T: Real>(sites: impl Iterator<Item = (usize, T)>, target: T) -> Option<(usize, T)> {
    let mut acc = T::zero();
    let mut last = None;
    for (i, w) in sites {
        if w <= T::zero() {
            continue;
        }
        if target < acc + w {
            return Some((i, target - acc));
        }
        acc += w;
        last = Some((i, w));
    }
    // rounding at the right edge
    last.map(|(i, w)| (i, w * T::of(0.5)))
}

/// Site selection for a pair, from the site draw `draw_i` and the
/// resampling draw `draw_t`, both uniform on `[0, 1)`. Each side's
/// marginal is `P(i^s = i) = (k^s_i)^delta / l_delta`.
pub fn select_sites<T: Real>(model: &ModelSpec<T>, a: &[usize], b: &[usize], draw_i: T, draw_t: T) -> Result<SiteChoice> {
    let w = PairWeights::new(model, a, b);
    let tol = T::of(1e-12) * T::one().max(model.l_delta());
    if w.wb + w.w1 + w.w1p > model.l_delta() + tol || w.wb + w.w2 + w.w2p > model.l_delta() + tol {
        return Err(Error::CorruptedCoupling("site weights exceed l_delta".into()));
    }
    if w.w1 + w.w1p >= w.w2 + w.w2p {
        select_oriented(model, a, b, &w, draw_i, draw_t)
    } else {
        let w = PairWeights {
            w1: w.w2,
            w1p: w.w2p,
            w2: w.w1,
            w2p: w.w1p,
            wb: w.wb,
        };
        let c = select_oriented(model, b, a, &w, draw_i, draw_t)?;
        Ok(SiteChoice {
            i1: c.i2,
            i2: c.i1,
            case: c.case,
            mirrored: true,
        })
    }
}

fn select_oriented<T: Real>(
    model: &ModelSpec<T>,
    a: &[usize],
    b: &[usize],
    w: &PairWeights<T>,
    draw_i: T,
    draw_t: T,
) -> Result<SiteChoice> {
    let sw = |x: usize| model.site_weight(x);
    let m = a.len();
    let choice = |i1, i2, case| SiteChoice {
        i1,
        i2,
        case,
        mirrored: false,
    };
    let mut at = draw_i * model.l_delta();

    if at < w.wb {
        let sites = (0..m).filter(|&i| a[i] == b[i]).map(|i| (i, sw(a[i])));
        let (i, _) = locate(sites, at).expect("balanced weight is positive");
        return Ok(choice(Some(i), Some(i), SiteCase::Balanced));
    }
    at -= w.wb;
    if at < w.w1p {
        let sites = (0..m).filter(|&i| a[i] < b[i]).map(|i| (i, sw(a[i])));
        let (i, _) = locate(sites, at).expect("shared weight is positive");
        return Ok(choice(Some(i), Some(i), SiteCase::Shared));
    }
    at -= w.w1p;
    if at >= w.w1 {
        return Ok(choice(None, None, SiteCase::Idle));
    }
    let sites = (0..m).filter(|&i| a[i] > b[i]).map(|i| (i, sw(a[i])));
    let (i, u) = locate(sites, at).expect("surplus weight is positive");
    if u < sw(b[i]) {
        return Ok(choice(Some(i), Some(i), SiteCase::Surplus));
    }

    // Resample the other side's site on T: one segment per deficit site of
    // length (k^b)^delta - (k^a)^delta, then one "no site" segment.
    let mut segments: Vec<(Option<usize>, T)> = (0..m)
        .filter(|&i| a[i] < b[i])
        .map(|i| (Some(i), sw(b[i]) - sw(a[i])))
        .collect();
    segments.push((None, (w.w1 + w.w1p) - (w.w2 + w.w2p)));
    let total: T = segments.iter().map(|&(_, l)| l).sum();
    let closed = w.w1 - w.w2p;
    if (total - closed).abs() > T::of(1e-12) * T::one().max(model.l_delta()) {
        return Err(Error::CorruptedCoupling(format!(
            "resampling set has length {total}, expected w1 - w2' = {closed}"
        )));
    }
    let target = draw_t * total;
    let mut acc = T::zero();
    let mut i2 = segments.last().unwrap().0;
    for &(site, len) in &segments {
        if len > T::zero() && target < acc + len {
            i2 = site;
            break;
        }
        acc += len;
    }
    Ok(choice(Some(i), i2, SiteCase::Surplus))
}

/// A pair of occupation vectors under the interval-splitting coupling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeltaPair {
    x1: Configuration,
    x2: Configuration,
    rho: usize,
}

/// What one delta step did; mostly for tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeltaStep {
    pub sites: SiteChoice,
    pub j: usize,
    pub moved1: bool,
    pub moved2: bool,
}

impl DeltaPair {
    pub fn new<T: Real>(model: &ModelSpec<T>, a: &Configuration, b: &Configuration) -> Result<Self> {
        check_pair(model, a, b)?;
        if model.delta() <= T::zero() {
            return Err(Error::UnsupportedKernel("the delta coupling needs delta > 0".into()));
        }
        Ok(Self {
            rho: rho(a.occ(), b.occ()),
            x1: a.clone(),
            x2: b.clone(),
        })
    }

    pub fn first(&self) -> &Configuration {
        &self.x1
    }

    pub fn second(&self) -> &Configuration {
        &self.x2
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn weights<T: Real>(&self, model: &ModelSpec<T>) -> PairWeights<T> {
        PairWeights::new(model, self.x1.occ(), self.x2.occ())
    }

    pub fn step_traced<T: Real>(&mut self, model: &ModelSpec<T>, rng: &mut StreamRng) -> Result<DeltaStep> {
        if model.delta() <= T::zero() {
            return Err(Error::UnsupportedKernel("the delta coupling needs delta > 0".into()));
        }
        let draw_i = T::unit(rng);
        let draw_t = T::unit(rng);
        let j = rng.random_range(0..model.m());
        let v1 = T::unit(rng);
        let v2 = T::unit(rng);
        let sites = select_sites(model, self.x1.occ(), self.x2.occ(), draw_i, draw_t)?;

        let accept = |x: &Configuration, i: usize| model.acceptance(i, x.occ()[i], j, x.occ()[j]);
        // Same site on both sides: shared U (= v1), so side s moves iff U < p_s.
        let u2 = if sites.i1.is_some() && sites.i1 == sites.i2 { v1 } else { v2 };
        let moved1 = sites.i1.is_some_and(|i| i != j && v1 < accept(&self.x1, i));
        let moved2 = sites.i2.is_some_and(|i| i != j && u2 < accept(&self.x2, i));
        if moved1 {
            self.x1.apply_move(sites.i1.unwrap(), j);
        }
        if moved2 {
            self.x2.apply_move(sites.i2.unwrap(), j);
        }
        let before = self.rho;
        self.rho = rho(self.x1.occ(), self.x2.occ());
        if self.rho > before {
            return Err(Error::CorruptedCoupling(format!(
                "rho increased from {before} to {} ({sites:?}, j = {j})",
                self.rho
            )));
        }
        Ok(DeltaStep {
            sites,
            j,
            moved1,
            moved2,
        })
    }
}

impl<T: Real> Coupling<T> for DeltaPair {
    fn first(&self) -> &Configuration {
        Self::first(self)
    }

    fn second(&self) -> &Configuration {
        Self::second(self)
    }

    fn rho(&self) -> usize {
        Self::rho(self)
    }

    fn coupled_step(&mut self, model: &ModelSpec<T>, rng: &mut StreamRng) -> Result<()> {
        self.step_traced(model, rng).map(|_| ())
    }
}

// ---------------------------------------------------------------------------
// statistics

fn new_pair<T: Real>(
    model: &ModelSpec<T>,
    a: &Configuration,
    b: &Configuration,
    variant: Variant,
) -> Result<Box<dyn Coupling<T> + Send>> {
    Ok(match variant {
        Variant::Colored => Box::new(ColoredPair::new(model, a, b)?),
        Variant::Delta => Box::new(DeltaPair::new(model, a, b)?),
    })
}

/// Result of one coupling run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CouplingRun {
    /// First `t` with `rho_t = 0`; `None` when `max_t` ran out.
    pub tau: Option<u64>,
    pub final_rho: usize,
    /// `rho_0, rho_1, ...` up to coalescence or `max_t`, when requested.
    pub trace: Option<Vec<usize>>,
}

/// Runs one coupled pair from `(eta0, theta0)` until coalescence or `max_t`.
pub fn coupling_time<T: Real>(
    model: &ModelSpec<T>,
    eta0: &Configuration,
    theta0: &Configuration,
    seed: u64,
    max_t: u64,
    variant: Variant,
    keep_trace: bool,
) -> Result<CouplingRun> {
    let mut pair = new_pair(model, eta0, theta0, variant)?;
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut trace = keep_trace.then(|| vec![pair.rho()]);
    let mut t = 0;
    while pair.rho() > 0 && t < max_t {
        pair.coupled_step(model, &mut rng)?;
        t += 1;
        if let Some(tr) = trace.as_mut() {
            tr.push(pair.rho());
        }
    }
    Ok(CouplingRun {
        tau: (pair.rho() == 0).then_some(t),
        final_rho: pair.rho(),
        trace,
    })
}

/// `runs` independent coupling runs, run `r` seeded by `derive_seed(seed, [r])`.
#[allow(clippy::too_many_arguments)]
pub fn coupling_ensemble<T: Real>(
    model: &ModelSpec<T>,
    eta0: &Configuration,
    theta0: &Configuration,
    seed: u64,
    runs: usize,
    max_t: u64,
    variant: Variant,
    keep_trace: bool,
) -> Result<Vec<CouplingRun>> {
    (0..runs)
        .into_par_iter()
        .map(|r| coupling_time(model, eta0, theta0, derive_seed(seed, &[r as u64]), max_t, variant, keep_trace))
        .collect()
}

/// Lower bound on `P(rho_{t+1} = rho_t - 1)` for the given variant.
pub fn decrement_floor<T: Real>(model: &ModelSpec<T>, rho: usize, variant: Variant) -> T {
    let (k, m) = (T::of_usize(model.k()), T::of_usize(model.m()));
    let r = T::of_usize(rho);
    match variant {
        Variant::Colored => r / (k * m),
        Variant::Delta => {
            let d = model.delta();
            d * k.powf(d - T::one()) * r / (m * model.l_delta())
        }
    }
}

/// Empirical one-step statistics of a fixed pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecrementCheck {
    pub rho: usize,
    pub samples: usize,
    /// Empirical `P(rho_{t+1} = rho_t - 1)`.
    pub rate: f64,
    pub floor: f64,
    /// Binomial standard error of `rate`.
    pub sigma: f64,
    /// Empirical `E[rho_{t+1}]`.
    pub mean_next: f64,
    /// `(1 - 1/alpha) rho`.
    pub contraction: f64,
}

impl DecrementCheck {
    /// `rate >= floor - slack * sigma`.
    pub fn rate_ok(&self, slack: f64) -> bool {
        self.rate >= self.floor - slack * self.sigma.max(1.0 / self.samples as f64)
    }

    /// `mean_next <= contraction + slack * sigma_mean`, with `rho_{t+1}`
    /// bounded in `[rho - 1, rho]` so its standard error is at most `sigma`.
    pub fn contraction_ok(&self, slack: f64) -> bool {
        self.mean_next <= self.contraction + slack * self.sigma.max(1.0 / self.samples as f64)
    }
}

/// Restarts the pair `(a, b)` `samples` times for one step each.
pub fn decrement_rate_check<T: Real>(
    model: &ModelSpec<T>,
    a: &Configuration,
    b: &Configuration,
    variant: Variant,
    samples: usize,
    seed: u64,
) -> Result<DecrementCheck> {
    let start = new_pair(model, a, b, variant)?;
    let rho0 = start.rho();
    if rho0 == 0 {
        return Err(Error::Argument("decrement rate needs rho > 0".into()));
    }
    let chunks = 64usize;
    let per = samples.div_ceil(chunks);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = StreamRng::seed_from_u64(derive_seed(seed, &[c as u64]));
            let n = per.min(samples.saturating_sub(c * per));
            let mut dec = 0usize;
            let mut next_sum = 0usize;
            for _ in 0..n {
                let mut p = new_pair(model, a, b, variant)?;
                p.coupled_step(model, &mut rng)?;
                dec += usize::from(p.rho() + 1 == rho0);
                next_sum += p.rho();
            }
            Ok((dec, next_sum))
        })
        .collect::<Result<Vec<_>>>()?;
    let (dec, next_sum) = counts.iter().fold((0, 0), |(a, b), &(c, d)| (a + c, b + d));
    let rate = dec as f64 / samples as f64;
    let alpha = match variant {
        Variant::Colored => (model.k() * model.m()) as f64,
        Variant::Delta => contraction_time(model).as_f64(),
    };
    Ok(DecrementCheck {
        rho: rho0,
        samples,
        rate,
        floor: decrement_floor(model, rho0, variant).as_f64(),
        sigma: (rate * (1.0 - rate) / samples as f64).sqrt(),
        mean_next: next_sum as f64 / samples as f64,
        contraction: (1.0 - 1.0 / alpha) * rho0 as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_custom_raw, build_fermi, FermiSpec};

    fn two_by_two() -> ModelSpec<f64> {
        build_fermi(&FermiSpec {
            k: 2,
            m: 2,
            beta: 0.0,
            v: vec![0.0, 0.0],
            n: vec![2, 2],
        })
        .unwrap()
    }

    fn cfg(v: &[usize]) -> Configuration {
        Configuration::new(v.to_vec())
    }

    fn half_model() -> ModelSpec<f64> {
        let k = 3;
        let table: Vec<f64> = (0..=k).map(|x| -0.5 * (1..=x).map(|i| (i as f64).ln()).sum::<f64>()).collect();
        build_custom_raw(k, &[table.clone(), table.clone(), table]).unwrap()
    }

    #[test]
    fn canonical_coloring() {
        let model = two_by_two();
        let p = ColoredPair::new(&model, &cfg(&[2, 0]), &cfg(&[1, 1])).unwrap();
        assert_eq!(p.omega1(), &[0, 0]);
        assert_eq!(p.omega2(), &[0, 1]);
        let c = p.coloring();
        assert_eq!(c.red1, vec![true, false]);
        assert_eq!(c.red2, vec![false, true]);
        assert_eq!(c.phi, vec![None, Some(0)]);
        assert_eq!(p.rho(), 1);
        p.check_invariants().unwrap();
    }

    #[test]
    fn colored_needs_delta_one() {
        let model = half_model();
        assert!(matches!(
            ColoredPair::new(&model, &cfg(&[3, 0, 0]), &cfg(&[1, 1, 1])),
            Err(Error::UnsupportedKernel(_))
        ));
    }

    #[test]
    fn equal_pairs_stay_equal() {
        let model = two_by_two();
        let mut rng = StreamRng::seed_from_u64(1);
        let mut c = ColoredPair::new(&model, &cfg(&[1, 1]), &cfg(&[1, 1])).unwrap();
        let mut d = DeltaPair::new(&model, &cfg(&[1, 1]), &cfg(&[1, 1])).unwrap();
        for _ in 0..2000 {
            c.coupled_step(&model, &mut rng).unwrap();
            let s = d.step_traced(&model, &mut rng).unwrap();
            assert_eq!(c.first(), c.second());
            assert_eq!(d.first(), d.second());
            assert!(matches!(s.sites.case, SiteCase::Balanced));
        }
    }

    #[test]
    fn red_choice_with_good_level_always_decrements() {
        // From (2,0) vs (0,2) every particle is red; j = the other side's
        // level moves a particle with probability 1 on at least one side.
        let model = two_by_two();
        let mut rng = StreamRng::seed_from_u64(9);
        let mut seen = 0;
        for _ in 0..20_000 {
            let mut p = ColoredPair::new(&model, &cfg(&[2, 0]), &cfg(&[0, 2])).unwrap();
            let s = p.step_traced(&model, &mut rng).unwrap();
            assert!(s.red);
            let p1 = model.acceptance(s.i1, 2, s.i2, 0);
            let p2 = model.acceptance(s.i2, 2, s.i1, 0);
            let good = if p1 >= 1.0 { s.i2 } else { s.i1 };
            assert!(p1 >= 1.0 || p2 >= 1.0);
            if s.j == good {
                assert_eq!(p.rho(), 1);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn identical_starts_couple_at_zero() {
        let model = two_by_two();
        for v in [Variant::Colored, Variant::Delta] {
            let r = coupling_time(&model, &cfg(&[1, 1]), &cfg(&[1, 1]), 3, 10, v, true).unwrap();
            assert_eq!(r.tau, Some(0));
            assert_eq!(r.trace, Some(vec![0]));
        }
    }

    #[test]
    fn coupling_trace_is_non_increasing_and_absorbing() {
        let model = two_by_two();
        for v in [Variant::Colored, Variant::Delta] {
            let r = coupling_time(&model, &cfg(&[2, 0]), &cfg(&[0, 2]), 17, 10_000, v, true).unwrap();
            let tr = r.trace.unwrap();
            assert!(tr.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(*tr.last().unwrap(), 0);
            assert_eq!(r.tau, Some(tr.len() as u64 - 1));
        }
    }

    #[test]
    fn timeout_reports_final_rho() {
        let model = two_by_two();
        let r = coupling_time(&model, &cfg(&[2, 0]), &cfg(&[0, 2]), 5, 0, Variant::Colored, false).unwrap();
        assert_eq!(r.tau, None);
        assert_eq!(r.final_rho, 2);
    }

    #[test]
    fn site_marginals_on_delta_half() {
        // P(i^1 = 0) = 3^0.5 / 3 for X^1 = (3,0,0), X^2 = (1,1,1)
        let model = half_model();
        let (a, b) = ([3usize, 0, 0], [1usize, 1, 1]);
        let n = 400;
        let mut count1 = [0usize; 4];
        let mut count2 = [0usize; 4];
        for s in 0..n {
            for t in 0..n {
                let di = (s as f64 + 0.5) / n as f64;
                let dt = (t as f64 + 0.5) / n as f64;
                let c = select_sites(&model, &a, &b, di, dt).unwrap();
                count1[c.i1.unwrap_or(3)] += 1;
                count2[c.i2.unwrap_or(3)] += 1;
            }
        }
        let total = (n * n) as f64;
        let l = model.l_delta();
        assert!((count1[0] as f64 / total - 3f64.sqrt() / l).abs() < 5e-3);
        for i in 0..3 {
            assert!((count2[i] as f64 / total - 1.0 / l).abs() < 5e-3, "{count2:?}");
        }
    }

    #[test]
    fn floors() {
        let model = two_by_two();
        assert!((decrement_floor(&model, 2, Variant::Colored) - 0.5).abs() < 1e-15);
        assert!((decrement_floor(&model, 2, Variant::Delta) - 0.5).abs() < 1e-15);
        let h = half_model();
        let want = 0.5 * 3f64.powf(-0.5) * 2.0 / (3.0 * 3.0);
        assert!((decrement_floor(&h, 2, Variant::Delta) - want).abs() < 1e-12);
    }

    #[test]
    fn decrement_rate_exceeds_floor() {
        let model = two_by_two();
        let chk = decrement_rate_check(&model, &cfg(&[2, 0]), &cfg(&[0, 2]), Variant::Colored, 20_000, 1).unwrap();
        assert!(chk.rate_ok(4.0), "{chk:?}");
        assert!(chk.contraction_ok(4.0), "{chk:?}");
        let h = half_model();
        let chk = decrement_rate_check(&h, &cfg(&[3, 0, 0]), &cfg(&[0, 1, 2]), Variant::Delta, 20_000, 2).unwrap();
        assert!(chk.rate_ok(4.0), "{chk:?}");
        assert!(decrement_rate_check(&h, &cfg(&[3, 0, 0]), &cfg(&[3, 0, 0]), Variant::Delta, 10, 2).is_err());
    }
}
