//! Site potentials, their discrete calculus, and the conditional product
//! model built from them.
//!
//! A model is `k` particles over `m` sites with weight
//! `exp(sum_j phi_j(k_j))` on configurations summing to `k`. Every `phi_j`
//! must be log-concave with interval support. The concavity parameter
//! `delta` measures how far the potentials are from ultra log-concavity and
//! fixes the kernel family used by [`crate::kernel`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Absolute tolerance for monotonicity and concavity comparisons.
pub const TOLERANCE: f64 = 1e-12;

/// A real number extended with `-inf` and `+inf`; never NaN.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
#[repr(transparent)]
pub struct ExtReal<T>(T);

impl<T: Real> ExtReal<T> {
    pub fn new(value: T) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::Argument("NaN is not an extended real".into()));
        }
        Ok(Self(value))
    }

    pub fn neg_inf() -> Self {
        Self(T::neg_infinity())
    }

    pub fn pos_inf() -> Self {
        Self(T::infinity())
    }

    pub fn zero() -> Self {
        Self(T::zero())
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    #[inline]
    pub fn is_neg_inf(self) -> bool {
        self.0 == T::neg_infinity()
    }

    pub fn checked_add(self, other: Self) -> Result<Self> {
        Self::new(self.0 + other.0)
            .map_err(|_| Error::Argument(format!("undefined sum {} + {}", self.0, other.0)))
    }

    pub fn checked_sub(self, other: Self) -> Result<Self> {
        Self::new(self.0 - other.0)
            .map_err(|_| Error::Argument(format!("undefined difference {} - {}", self.0, other.0)))
    }

    /// `[x]^+`.
    pub fn positive_part(self) -> Self {
        Self(crate::scalar::positive_part(self.0))
    }

    /// `exp(-x)`, so `exp(-(+inf)) = 0`.
    pub fn exp_neg(self) -> T {
        (-self.0).exp()
    }
}

impl<T: Real> fmt::Display for ExtReal<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == T::neg_infinity() {
            f.write_str("-inf")
        } else if self.0 == T::infinity() {
            f.write_str("+inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// One site's log-weight table `phi(0..=k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPotential<T> {
    phi: Vec<ExtReal<T>>,
    support_lo: usize,
    support_hi: usize,
}

impl<T: Real> LevelPotential<T> {
    /// Validates finiteness pattern and log-concavity. `site` is only used
    /// for error reporting.
    pub fn new(site: usize, phi: Vec<ExtReal<T>>) -> Result<Self> {
        let invalid = |index: usize, reason: &str| Error::InvalidPotential {
            site,
            index,
            reason: reason.to_string(),
        };
        if phi.is_empty() {
            return Err(invalid(0, "empty table"));
        }
        if let Some(x) = phi.iter().position(|v| v.value() == T::infinity()) {
            return Err(invalid(x, "+inf is not a valid log-weight"));
        }
        let first = phi
            .iter()
            .position(|v| v.is_finite())
            .ok_or_else(|| invalid(0, "no finite value (empty support)"))?;
        let last = phi.iter().rposition(|v| v.is_finite()).unwrap();
        if let Some(off) = phi[first..=last].iter().position(|v| !v.is_finite()) {
            return Err(invalid(first + off, "support is not an interval"));
        }
        let tol = T::of(TOLERANCE);
        for x in first + 1..last {
            let (a, b, c) = (phi[x - 1].value(), phi[x].value(), phi[x + 1].value());
            let scale = T::one().max(a.abs()).max(b.abs()).max(c.abs());
            if a + c > b + b + tol * scale {
                return Err(invalid(x, "log-concavity violated: phi(x-1) + phi(x+1) > 2 phi(x)"));
            }
        }
        Ok(Self {
            phi,
            support_lo: first,
            support_hi: last,
        })
    }

    /// Highest table index (`k`).
    pub fn table_max(&self) -> usize {
        self.phi.len() - 1
    }

    pub fn support(&self) -> (usize, usize) {
        (self.support_lo, self.support_hi)
    }

    pub fn table(&self) -> &[ExtReal<T>] {
        &self.phi
    }

    /// `phi(x)`, `-inf` beyond the table.
    #[inline]
    pub fn get(&self, x: usize) -> ExtReal<T> {
        self.phi.get(x).copied().unwrap_or_else(ExtReal::neg_inf)
    }

    /// Forward difference `phi(x+1) - phi(x)` with the support conventions:
    /// `+inf` below the support, `-inf` at and above its upper end.
    pub fn forward_diff(&self, x: usize) -> ExtReal<T> {
        let (a, b) = (self.get(x), self.get(x + 1));
        match (a.is_finite(), b.is_finite()) {
            (true, true) => ExtReal(b.value() - a.value()),
            (true, false) => ExtReal::neg_inf(),
            (false, true) => ExtReal::pos_inf(),
            (false, false) if x < self.support_lo => ExtReal::pos_inf(),
            (false, false) => ExtReal::neg_inf(),
        }
    }

    /// `-Laplacian_x phi = 2 phi(x) - phi(x-1) - phi(x+1)` for `x >= 1`.
    /// `+inf` when `phi(x)` is finite and a neighbour is not; `None` when
    /// `phi(x)` itself is `-inf`.
    pub fn neg_laplacian(&self, x: usize) -> Option<ExtReal<T>> {
        debug_assert!(x >= 1);
        let b = self.get(x);
        if !b.is_finite() {
            return None;
        }
        let (a, c) = (self.get(x - 1), self.get(x + 1));
        if !a.is_finite() || !c.is_finite() {
            return Some(ExtReal::pos_inf());
        }
        Some(ExtReal(b.value() + b.value() - a.value() - c.value()))
    }
}

/// Canonical Fermi statistics: `k` particles among `m` levels with energies
/// `v` and degeneracies `n` at inverse temperature `beta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FermiSpec {
    pub k: usize,
    pub m: usize,
    pub beta: f64,
    pub v: Vec<f64>,
    pub n: Vec<u64>,
}

impl FermiSpec {
    pub fn total_capacity(&self) -> u128 {
        self.n.iter().map(|&x| x as u128).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Argument("m must be at least 1".into()));
        }
        if self.v.len() != self.m || self.n.len() != self.m {
            return Err(Error::Argument(format!(
                "expected {} energies and degeneracies, got {} and {}",
                self.m,
                self.v.len(),
                self.n.len()
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Argument(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if let Some(j) = self.v.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("energy v[{j}] is not finite")));
        }
        if let Some(j) = self.n.iter().position(|&n| n == 0) {
            return Err(Error::Argument(format!("degeneracy n[{j}] must be positive")));
        }
        if self.total_capacity() < self.k as u128 {
            return Err(Error::InfeasibleModel(format!(
                "total degeneracy {} is smaller than k = {}",
                self.total_capacity(),
                self.k
            )));
        }
        Ok(())
    }

    /// `phi_j(x) = -beta x v_j + ln C(n_j, x)` for `x` in `0..=k`.
    pub fn phi_tables<T: Real>(&self) -> Vec<Vec<ExtReal<T>>> {
        (0..self.m)
            .map(|j| {
                let lb = log_binomial_prefix::<T>(self.n[j], self.k);
                let slope = T::of(self.beta * self.v[j]);
                lb.into_iter()
                    .enumerate()
                    .map(|(x, l)| match l {
                        Some(l) => ExtReal(l - slope * T::of_usize(x)),
                        None => ExtReal::neg_inf(),
                    })
                    .collect()
            })
            .collect()
    }
}

/// `ln C(n, x)` for `x` in `0..=upto` by cumulative sums of logs;
/// `None` where `x > n`.
pub fn log_binomial_prefix<T: Real>(n: u64, upto: usize) -> Vec<Option<T>> {
    let mut out = Vec::with_capacity(upto + 1);
    let mut acc = T::zero();
    for x in 0..=upto {
        if (x as u64) > n {
            out.push(None);
            continue;
        }
        out.push(Some(acc));
        if (x as u64) < n {
            acc += T::of((n - x as u64) as f64).ln() - T::of_usize(x + 1).ln();
        }
    }
    out
}

/// Result of [`compute_delta`]: the concavity parameter and, when it is
/// below one, a `(site, x)` where it is attained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaReport<T> {
    pub delta: T,
    pub witness: Option<(usize, usize)>,
}

/// Largest `lambda` in `[0, 1]` with
/// `-Laplacian_x phi_j >= lambda ln((1+x)/x)` for every site and every
/// interior `x` in `1..k`.
pub fn compute_delta<T: Real>(potentials: &[LevelPotential<T>], k: usize) -> DeltaReport<T> {
    let tol = T::of(TOLERANCE);
    let mut best = T::one();
    let mut witness = None;
    for (j, pot) in potentials.iter().enumerate() {
        for x in 1..k {
            let Some(curv) = pot.neg_laplacian(x) else { continue };
            if !curv.is_finite() {
                continue;
            }
            let curv = curv.value();
            let target = (T::of_usize(x + 1) / T::of_usize(x)).ln();
            if curv + tol >= target {
                continue;
            }
            let ratio = curv.max(T::zero()) / target;
            if ratio < best {
                best = ratio;
                witness = Some((j, x));
            }
        }
    }
    DeltaReport {
        delta: best.max(T::zero()).min(T::one()),
        witness,
    }
}

/// `k^delta (min(k, m))^(1 - delta)`.
pub fn l_delta<T: Real>(k: usize, m: usize, delta: T) -> T {
    if k == 0 {
        return T::zero();
    }
    T::of_usize(k).powf(delta) * T::of_usize(k.min(m)).powf(T::one() - delta)
}

/// The full conditional product model with its derived kernel tables.
#[derive(Clone, Debug)]
pub struct ModelSpec<T> {
    k: usize,
    m: usize,
    potentials: Vec<LevelPotential<T>>,
    delta: DeltaReport<T>,
    l_delta: T,
    /// `psi[j][x] = forward_diff_j(x) + delta ln(1+x)` for `x` in `0..k`.
    psi: Vec<Vec<T>>,
    /// `x^delta` for `x` in `0..=k`.
    pow: Vec<T>,
    fermi: Option<FermiSpec>,
}

/// Builds the Fermi-statistics model. Binomial weights are ultra
/// log-concave, so the computed `delta` is 1.
pub fn build_fermi<T: Real>(spec: &FermiSpec) -> Result<ModelSpec<T>> {
    spec.validate()?;
    let mut model = build_custom(spec.k, spec.phi_tables::<T>())?;
    debug_assert!(model.delta.delta == T::one(), "fermi delta {}", model.delta.delta);
    model.fermi = Some(spec.clone());
    Ok(model)
}

/// Builds a model from explicit `phi` tables, each covering `0..=k`.
pub fn build_custom<T: Real>(k: usize, phi_tables: Vec<Vec<ExtReal<T>>>) -> Result<ModelSpec<T>> {
    let m = phi_tables.len();
    if m == 0 {
        return Err(Error::Argument("at least one site is required".into()));
    }
    let potentials = phi_tables
        .into_iter()
        .enumerate()
        .map(|(site, table)| {
            if table.len() != k + 1 {
                return Err(Error::Argument(format!(
                    "site {site}: table has {} entries, expected k + 1 = {}",
                    table.len(),
                    k + 1
                )));
            }
            LevelPotential::new(site, table)
        })
        .collect::<Result<Vec<_>>>()?;

    let lo: usize = potentials.iter().map(|p| p.support_lo).sum();
    let hi: usize = potentials.iter().map(|p| p.support_hi).sum();
    if lo > k || hi < k {
        return Err(Error::InfeasibleModel(format!(
            "no configuration of {k} particles has positive weight (supports allow {lo}..={hi})"
        )));
    }

    let delta = compute_delta(&potentials, k);
    let l_delta = l_delta(k, m, delta.delta);
    let psi = potentials
        .iter()
        .map(|p| {
            (0..k)
                .map(|x| p.forward_diff(x).value() + delta.delta * T::of_usize(1 + x).ln())
                .collect()
        })
        .collect();
    // 0^0 = 0 here: empty sites are never selected, even at delta = 0
    let pow = (0..=k)
        .map(|x| if x == 0 { T::zero() } else { T::of_usize(x).powf(delta.delta) })
        .collect();
    Ok(ModelSpec {
        k,
        m,
        potentials,
        delta,
        l_delta,
        psi,
        pow,
        fermi: None,
    })
}

/// Convenience wrapper over [`build_custom`] for plain float tables
/// (`-inf` allowed, NaN rejected).
pub fn build_custom_raw<T: Real>(k: usize, phi_tables: &[Vec<T>]) -> Result<ModelSpec<T>> {
    let tables = phi_tables
        .iter()
        .map(|t| t.iter().map(|&v| ExtReal::new(v)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    build_custom(k, tables)
}

/// Rewrites a Fermi model on its `n - k` vacancies: same degeneracies,
/// energies negated. Binomial symmetry makes the vacancy law the image of
/// the particle law under `k_j -> n_j - k_j`.
pub fn dualize(spec: &FermiSpec) -> Result<FermiSpec> {
    let total = spec.total_capacity();
    if total < spec.k as u128 {
        return Err(Error::InfeasibleModel("total degeneracy below k".into()));
    }
    let k = usize::try_from(total - spec.k as u128)
        .map_err(|_| Error::Argument("vacancy count does not fit in usize".into()))?;
    Ok(FermiSpec {
        k,
        m: spec.m,
        beta: spec.beta,
        v: spec.v.iter().map(|v| 0.0 - v).collect(),
        n: spec.n.clone(),
    })
}

impl<T: Real> ModelSpec<T> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn delta(&self) -> T {
        self.delta.delta
    }

    pub fn delta_report(&self) -> DeltaReport<T> {
        self.delta
    }

    pub fn l_delta(&self) -> T {
        self.l_delta
    }

    pub fn potentials(&self) -> &[LevelPotential<T>] {
        &self.potentials
    }

    pub fn fermi(&self) -> Option<&FermiSpec> {
        self.fermi.as_ref()
    }

    /// True when `delta == 1`, i.e. sites are chosen by a uniform particle.
    pub fn is_ultra_log_concave(&self) -> bool {
        self.delta.delta >= T::one()
    }

    #[inline]
    pub fn phi(&self, site: usize, x: usize) -> T {
        self.potentials[site].get(x).value()
    }

    /// `psi_j(x)` for `x < k`. Unreachable `x >= k` reads as `-inf`.
    #[inline]
    pub fn psi_at(&self, site: usize, x: usize) -> T {
        self.psi[site].get(x).copied().unwrap_or_else(T::neg_infinity)
    }

    /// `psi_i(k_i - 1)` with the `psi_i(-1) = +inf` sentinel.
    #[inline]
    pub fn psi_before(&self, site: usize, occupation: usize) -> T {
        if occupation == 0 {
            T::infinity()
        } else {
            self.psi_at(site, occupation - 1)
        }
    }

    pub fn psi_table(&self, site: usize) -> &[T] {
        &self.psi[site]
    }

    /// `x^delta`, with `0` for an empty site.
    #[inline]
    pub fn site_weight(&self, occupation: usize) -> T {
        self.pow[occupation]
    }

    /// Acceptance probability `exp(-[psi_i(k_i-1) - psi_j(k_j)]^+)` of moving
    /// a particle from a site holding `from_occ` to a site holding `to_occ`.
    #[inline]
    pub fn acceptance(&self, from: usize, from_occ: usize, to: usize, to_occ: usize) -> T {
        let gap = self.psi_before(from, from_occ) - self.psi_at(to, to_occ);
        debug_assert!(!gap.is_nan(), "NaN acceptance gap: only reachable from zero-weight configurations");
        if gap <= T::zero() {
            T::one()
        } else {
            (-gap).exp()
        }
    }

    /// Log of [`Self::acceptance`], `-[gap]^+`; exact even where `exp` underflows.
    #[inline]
    pub fn log_acceptance(&self, from: usize, from_occ: usize, to: usize, to_occ: usize) -> T {
        let gap = self.psi_before(from, from_occ) - self.psi_at(to, to_occ);
        -crate::scalar::positive_part(gap)
    }

    /// Free entropy `sum_j phi_j(k_j)` of an occupation vector.
    pub fn log_weight(&self, occ: &[usize]) -> ExtReal<T> {
        debug_assert_eq!(occ.len(), self.m);
        let mut s = T::zero();
        for (j, &x) in occ.iter().enumerate() {
            let v = self.potentials[j].get(x);
            if !v.is_finite() {
                return ExtReal::neg_inf();
            }
            s += v.value();
        }
        ExtReal(s)
    }

    /// `nu(occ) > 0` and `occ` is a valid configuration of this model.
    pub fn is_positive(&self, occ: &[usize]) -> bool {
        occ.len() == self.m && occ.iter().sum::<usize>() == self.k && self.log_weight(occ).is_finite()
    }

    /// Checks that every `psi` table is non-increasing (tolerance-aware).
    pub fn psi_monotone(&self) -> bool {
        let tol = T::of(TOLERANCE);
        self.psi.iter().all(|row| {
            row.windows(2).all(|w| {
                if w[1] <= w[0] {
                    return true;
                }
                let scale = T::one().max(w[0].abs()).max(w[1].abs());
                w[0].is_finite() && w[1].is_finite() && w[1] - w[0] <= tol * scale
            })
        })
    }
}
