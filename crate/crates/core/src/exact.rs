//! Brute-force oracle over the full state space: exact `nu`, the transition
//! matrix, `d(t)` and `t_eps`.
//!
//! Everything here enumerates every composition of `k` into `m` parts, so
//! it is capped at [`STATE_CAP`] states.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{exit_moves, log_transition_prob, Configuration};
use crate::measures::ModelSpec;
use crate::scalar::{kahan_sum, log_sum_exp, Real};

/// Default cap on the number of enumerated states.
pub const STATE_CAP: usize = 200_000;

/// Default cap on the horizon searched by [`exact_mixing_time`].
pub const DEFAULT_T_CAP: u64 = 1_000_000;

/// `C(k + m - 1, m - 1)`, saturating at `u128::MAX`.
pub fn state_count(k: usize, m: usize) -> u128 {
    if m == 0 {
        return u128::from(k == 0);
    }
    let (n, r) = ((k + m - 1) as u128, (m - 1).min(k) as u128);
    let mut acc: u128 = 1;
    for i in 0..r {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All compositions of `k` into `m` parts in lexicographic order.
pub fn enumerate_states(k: usize, m: usize) -> Result<Vec<Configuration>> {
    enumerate_states_capped(k, m, STATE_CAP)
}

pub fn enumerate_states_capped(k: usize, m: usize, cap: usize) -> Result<Vec<Configuration>> {
    let count = state_count(k, m);
    if count > cap as u128 {
        return Err(Error::TooLarge { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    if m == 0 {
        if k == 0 {
            out.push(Configuration::new(Vec::new()));
        }
        return Ok(out);
    }
    let mut cur = vec![0usize; m];
    fill(&mut cur, 0, k, &mut out);
    debug_assert_eq!(out.len() as u128, count);
    Ok(out)
}

fn fill(cur: &mut [usize], pos: usize, left: usize, out: &mut Vec<Configuration>) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(Configuration::new(cur.to_vec()));
        return;
    }
    for x in 0..=left {
        cur[pos] = x;
        fill(cur, pos + 1, left - x, out);
    }
}

/// Total variation distance, `1/2 sum |p - q|` with compensated summation.
pub fn tv_distance<T: Real>(p: &[T], q: &[T]) -> T {
    debug_assert_eq!(p.len(), q.len());
    kahan_sum(p.iter().zip(q).map(|(&a, &b)| (a - b).abs())) * T::of(0.5)
}

/// The enumerated state space with exact stationary probabilities.
#[derive(Clone, Debug)]
pub struct ExactDist<T> {
    states: Vec<Configuration>,
    index: HashMap<Configuration, usize>,
    probs: Vec<T>,
    log_q: T,
}

impl<T: Real> ExactDist<T> {
    pub fn states(&self) -> &[Configuration] {
        &self.states
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `ln Q`, the log normalizer.
    pub fn log_normalizer(&self) -> T {
        self.log_q
    }

    pub fn index_of(&self, eta: &Configuration) -> Option<usize> {
        self.index.get(eta).copied()
    }

    /// `nu(eta)`; zero for anything outside the state space.
    pub fn prob(&self, eta: &Configuration) -> T {
        self.index_of(eta).map_or(T::zero(), |i| self.probs[i])
    }

    /// Indices of the states with positive probability.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.probs[i] > T::zero()).collect()
    }

    /// Point mass at `eta` as a vector aligned with [`Self::states`].
    pub fn point_mass(&self, eta: &Configuration) -> Result<Vec<T>> {
        let i = self
            .index_of(eta)
            .ok_or_else(|| Error::Argument(format!("{eta} is not in the state space")))?;
        let mut v = vec![T::zero(); self.len()];
        v[i] = T::one();
        Ok(v)
    }

    /// `||mu - nu||_TV` for `mu` aligned with [`Self::states`].
    pub fn tv_to(&self, mu: &[T]) -> T {
        tv_distance(mu, &self.probs)
    }
}

/// Exact `nu` by log-sum-exp normalization over every state.
pub fn exact_nu<T: Real>(model: &ModelSpec<T>) -> Result<ExactDist<T>> {
    let states = enumerate_states(model.k(), model.m())?;
    let logw: Vec<T> = states.iter().map(|s| model.log_weight(s.occ()).value()).collect();
    let log_q = log_sum_exp(&logw);
    if !log_q.is_finite() {
        return Err(Error::InfeasibleModel("every configuration has zero weight".into()));
    }
    let probs = logw
        .iter()
        .map(|&w| if w.is_finite() { (w - log_q).exp() } else { T::zero() })
        .collect();
    let index = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    Ok(ExactDist {
        states,
        index,
        probs,
        log_q,
    })
}

/// Row-sparse transition matrix over an [`ExactDist`]'s states. Rows of
/// zero-weight states are the identity.
#[derive(Clone, Debug)]
pub struct KernelMatrix<T> {
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Real> KernelMatrix<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Non-zero entries `(column, p)` of row `i`, diagonal included.
    pub fn row(&self, i: usize) -> &[(usize, T)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        self.rows[i]
            .iter()
            .find(|&&(c, _)| c == j)
            .map_or(T::zero(), |&(_, p)| p)
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.len();
        self.rows
            .iter()
            .map(|row| {
                let mut d = vec![T::zero(); n];
                for &(c, p) in row {
                    d[c] += p;
                }
                d
            })
            .collect()
    }

    /// `mu P`.
    pub fn apply(&self, mu: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        self.apply_into(mu, &mut out);
        out
    }

    fn apply_into(&self, mu: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|x| *x = T::zero());
        for (i, row) in self.rows.iter().enumerate() {
            let w = mu[i];
            if w == T::zero() {
                continue;
            }
            for &(c, p) in row {
                out[c] += w * p;
            }
        }
    }

    /// `mu P^t`.
    pub fn evolve(&self, mu: &[T], t: u64) -> Vec<T> {
        let mut cur = mu.to_vec();
        let mut next = vec![T::zero(); self.len()];
        for _ in 0..t {
            self.apply_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Largest `|sum_j P(i, j) - 1|`.
    pub fn max_row_defect(&self) -> T {
        self.rows
            .iter()
            .map(|r| (kahan_sum(r.iter().map(|&(_, p)| p)) - T::one()).abs())
            .fold(T::zero(), T::max)
    }
}

/// Builds the transition matrix from the kernel's exact probabilities.
pub fn kernel_matrix<T: Real>(model: &ModelSpec<T>, dist: &ExactDist<T>) -> Result<KernelMatrix<T>> {
    let rows = dist
        .states
        .iter()
        .enumerate()
        .map(|(i, eta)| {
            if dist.probs[i] == T::zero() {
                return Ok(vec![(i, T::one())]);
            }
            let moves = exit_moves(model, eta)?;
            let mut row = Vec::with_capacity(moves.len() + 1);
            let mut exit = T::zero();
            for (a, b, p) in moves {
                let to = eta.moved(a, b);
                let c = dist.index_of(&to).expect("moved configuration is enumerated");
                row.push((c, p));
                exit += p;
            }
            row.push((i, (T::one() - exit).max(T::zero())));
            row.sort_by_key(|&(c, _)| c);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelMatrix { rows })
}

/// `||nu P - nu||_inf`.
pub fn stationarity_residual<T: Real>(dist: &ExactDist<T>, kernel: &KernelMatrix<T>) -> T {
    let next = kernel.apply(dist.probs());
    next.iter()
        .zip(dist.probs())
        .map(|(&a, &b)| (a - b).abs())
        .fold(T::zero(), T::max)
}

/// Largest relative violation of `nu(eta) p(eta, eta') = nu(eta') p(eta', eta)`
/// over ordered pairs of positive-weight states. Evaluated in log space from
/// local potential differences, so it stays meaningful where the
/// probabilities themselves underflow.
pub fn check_detailed_balance<T: Real>(model: &ModelSpec<T>) -> Result<T> {
    let states = enumerate_states(model.k(), model.m())?;
    let mut worst = T::zero();
    for eta in states.iter().filter(|s| model.is_positive(s.occ())) {
        let occ = eta.occ();
        for i in (0..model.m()).filter(|&i| occ[i] > 0) {
            for j in (0..model.m()).filter(|&j| j != i) {
                let to = eta.moved(i, j);
                if !model.is_positive(to.occ()) {
                    continue;
                }
                let fwd = log_transition_prob(model, eta, i, j)?;
                let bwd = log_transition_prob(model, &to, j, i)?;
                let violation = match (fwd.is_finite(), bwd.is_finite()) {
                    (false, false) => T::zero(),
                    (true, true) => {
                        let log_ratio_nu = model.phi(i, occ[i] - 1) - model.phi(i, occ[i]) + model.phi(j, occ[j] + 1)
                            - model.phi(j, occ[j]);
                        (fwd - bwd - log_ratio_nu).exp_m1().abs()
                    }
                    _ => T::infinity(),
                };
                worst = worst.max(violation);
            }
        }
    }
    Ok(worst)
}

/// `alpha` in `d(t) <= k exp(-t / alpha)`: `km (k ^ m)^(1 - delta) / delta`.
pub fn contraction_time<T: Real>(model: &ModelSpec<T>) -> T {
    let (k, m) = (T::of_usize(model.k()), T::of_usize(model.m()));
    let delta = model.delta();
    k * m * T::of_usize(model.k().min(model.m())).powf(T::one() - delta) / delta
}

/// The mixing-time bound `alpha ln(k / eps)`; `km ln(k / eps)` when `delta = 1`.
pub fn mixing_bound<T: Real>(model: &ModelSpec<T>, eps: T) -> T {
    contraction_time(model) * (T::of_usize(model.k()) / eps).ln()
}

/// `k exp(-t / alpha)`.
pub fn distance_bound<T: Real>(model: &ModelSpec<T>, t: u64) -> T {
    T::of_usize(model.k()) * (-T::of(t as f64) / contraction_time(model)).exp()
}

/// Per-start TV series `||p^s(eta, .) - nu||` for `s = 0..=t_max`, stopping
/// early once `stop` says so. Returns the series computed.
fn start_series<T: Real>(
    kernel: &KernelMatrix<T>,
    dist: &ExactDist<T>,
    start: usize,
    t_max: u64,
    stop: impl Fn(T) -> bool,
) -> Vec<T> {
    let mut cur = vec![T::zero(); dist.len()];
    cur[start] = T::one();
    let mut next = vec![T::zero(); dist.len()];
    let mut series = vec![dist.tv_to(&cur)];
    let mut t = 0;
    while t < t_max && !stop(series[series.len() - 1]) {
        kernel.apply_into(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        series.push(dist.tv_to(&cur));
        t += 1;
    }
    series
}

/// `d(t)` for `t = 0..=t_max`, maximized over positive-weight starts.
pub fn d_curve<T: Real>(model: &ModelSpec<T>, t_max: u64) -> Result<Vec<T>> {
    let dist = exact_nu(model)?;
    let kernel = kernel_matrix(model, &dist)?;
    Ok(d_curve_with(&dist, &kernel, t_max))
}

pub fn d_curve_with<T: Real>(dist: &ExactDist<T>, kernel: &KernelMatrix<T>, t_max: u64) -> Vec<T> {
    dist.support()
        .into_par_iter()
        .map(|s| start_series(kernel, dist, s, t_max, |_| false))
        .reduce(
            || vec![T::zero(); t_max as usize + 1],
            |a, b| a.iter().zip(&b).map(|(&x, &y)| x.max(y)).collect(),
        )
}

/// `d(t)` at a single `t`.
pub fn exact_d<T: Real>(model: &ModelSpec<T>, t: u64) -> Result<T> {
    Ok(d_curve(model, t)?[t as usize])
}

/// `t_eps` with the pair `(d(t_eps), d(t_eps - 1))` certifying minimality.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingCertificate<T> {
    pub t_eps: u64,
    pub d_at: T,
    /// `None` when `t_eps = 0`.
    pub d_before: Option<T>,
    /// A start attaining `d(t_eps - 1)`.
    pub worst_start: Configuration,
}

/// Smallest `t` with `d(t) <= eps`, searched up to [`DEFAULT_T_CAP`].
pub fn exact_mixing_time<T: Real>(model: &ModelSpec<T>, eps: T) -> Result<MixingCertificate<T>> {
    exact_mixing_time_capped(model, eps, DEFAULT_T_CAP)
}

/// The chain is reversible, so each start's distance to `nu` is
/// non-increasing in `t`, and so is `d`. Each start is scanned forward to
/// its own crossing; `t_eps` is the latest crossing.
pub fn exact_mixing_time_capped<T: Real>(model: &ModelSpec<T>, eps: T, t_cap: u64) -> Result<MixingCertificate<T>> {
    if !(eps > T::zero() && eps < T::one()) {
        return Err(Error::Argument(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    let dist = exact_nu(model)?;
    let kernel = kernel_matrix(model, &dist)?;
    exact_mixing_time_with(&dist, &kernel, eps, t_cap)
}

pub fn exact_mixing_time_with<T: Real>(
    dist: &ExactDist<T>,
    kernel: &KernelMatrix<T>,
    eps: T,
    t_cap: u64,
) -> Result<MixingCertificate<T>> {
    let crossings: Vec<(usize, u64)> = dist
        .support()
        .into_par_iter()
        .map(|s| {
            let series = start_series(kernel, dist, s, t_cap, |d| d <= eps);
            (s, series.len() as u64 - 1)
        })
        .collect();
    let &(worst, t_eps) = crossings
        .iter()
        .max_by_key(|&&(s, t)| (t, std::cmp::Reverse(s)))
        .expect("support is non-empty");
    let curve = d_curve_with(dist, kernel, t_eps);
    if curve[t_eps as usize] > eps {
        return Err(Error::Argument(format!("d(t) still above {eps} at the horizon cap t = {t_cap}")));
    }
    Ok(MixingCertificate {
        t_eps,
        d_at: curve[t_eps as usize],
        d_before: t_eps.checked_sub(1).map(|t| curve[t as usize]),
        worst_start: dist.states[worst].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_custom_raw, build_fermi, FermiSpec};

    fn fermi(k: usize, beta: f64, v: &[f64], n: &[u64]) -> ModelSpec<f64> {
        build_fermi(&FermiSpec {
            k,
            m: v.len(),
            beta,
            v: v.to_vec(),
            n: n.to_vec(),
        })
        .unwrap()
    }

    #[test]
    fn enumeration_small_cases() {
        let s = enumerate_states(2, 2).unwrap();
        let v: Vec<_> = s.iter().map(|c| c.occ().to_vec()).collect();
        assert_eq!(v, vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert_eq!(enumerate_states(2, 3).unwrap().len(), 6);
        assert_eq!(state_count(2, 3), 6);
    }

    #[test]
    fn full_scale_is_too_large() {
        assert_eq!(state_count(50, 20), 46_252_743_903_616_536);
        match enumerate_states(50, 20) {
            Err(Error::TooLarge { count, .. }) => assert_eq!(count, 46_252_743_903_616_536),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_by_two_nu_and_matrix() {
        let model = fermi(2, 0.0, &[0.0, 0.0], &[2, 2]);
        let dist = exact_nu(&model).unwrap();
        let want = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];
        for (p, w) in dist.probs().iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }
        let k = kernel_matrix(&model, &dist).unwrap();
        let dense = k.to_dense();
        let want = [[0.5, 0.5, 0.0], [0.125, 0.75, 0.125], [0.0, 0.5, 0.5]];
        for (r, w) in dense.iter().zip(want) {
            for (a, b) in r.iter().zip(w) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert!(stationarity_residual(&dist, &k) < 1e-15);
        assert!(check_detailed_balance(&model).unwrap() < 1e-12);
    }

    #[test]
    fn two_by_two_d_curve_pinned() {
        let model = fermi(2, 0.0, &[0.0, 0.0], &[2, 2]);
        let d = d_curve(&model, 12).unwrap();
        let want = [
            0.833333, 0.333333, 0.145833, 0.067708, 0.032552, 0.015951, 0.007894, 0.003927, 0.001958, 0.000978,
            0.000489, 0.000244, 0.000122,
        ];
        for (a, b) in d.iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for (t, &x) in d.iter().enumerate() {
            assert!(x <= 2.0 * (-(t as f64) / 4.0).exp());
        }
    }

    #[test]
    fn two_by_two_mixing_times() {
        let model = fermi(2, 0.0, &[0.0, 0.0], &[2, 2]);
        for (eps, t) in [(0.5, 1), (0.1, 3), (0.01, 6)] {
            let c = exact_mixing_time(&model, eps).unwrap();
            assert_eq!(c.t_eps, t, "eps {eps}");
            assert!(c.d_at <= eps);
            assert!(c.d_before.unwrap() > eps);
        }
        assert!((mixing_bound(&model, 0.1) - 4.0 * 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn d_zero_is_one_minus_min_nu() {
        let model = fermi(3, 0.7, &[0.0, 0.3, 1.0], &[2, 3, 4]);
        let dist = exact_nu(&model).unwrap();
        let min_pos = dist
            .probs()
            .iter()
            .copied()
            .filter(|&p| p > 0.0)
            .fold(1.0, f64::min);
        assert!((exact_d(&model, 0).unwrap() - (1.0 - min_pos)).abs() < 1e-12);
    }

    #[test]
    fn beta_one_nu() {
        let model = fermi(2, 1.0, &[0.0, 1.0], &[2, 2]);
        let dist = exact_nu(&model).unwrap();
        let p = dist.prob(&Configuration::new(vec![2, 0]));
        assert!((p - 0.3836042851732602).abs() < 1e-12);
    }

    #[test]
    fn hypergeometric_at_zero_temperature_parameter() {
        let model = fermi(3, 0.0, &[0.0, 0.0, 0.0], &[2, 3, 4]);
        let dist = exact_nu(&model).unwrap();
        let c = |n: u64, r: usize| -> f64 {
            (0..r).fold(1.0, |acc, i| acc * (n - i as u64) as f64 / (i + 1) as f64)
        };
        for (s, &p) in dist.states().iter().zip(dist.probs()) {
            let o = s.occ();
            let w = if o[0] > 2 || o[1] > 3 { 0.0 } else { c(2, o[0]) * c(3, o[1]) * c(4, o[2]) / c(9, 3) };
            assert!((p - w).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_weight_states_are_excluded() {
        let model = fermi(3, 0.5, &[0.0, 1.0], &[1, 3]);
        let dist = exact_nu(&model).unwrap();
        assert_eq!(dist.support().len(), 2);
        let k = kernel_matrix(&model, &dist).unwrap();
        assert!(k.max_row_defect() < 1e-14);
        assert!(stationarity_residual(&dist, &k) < 1e-15);
        assert!(check_detailed_balance(&model).unwrap() < 1e-12);
    }

    #[test]
    fn delta_half_model_balances() {
        // phi(x) = -ln(x!)/2 has -Laplacian ln(1+x)/2, so delta = 1/2
        let k = 3;
        let table: Vec<f64> = (0..=k).map(|x| -0.5 * (1..=x).map(|i| (i as f64).ln()).sum::<f64>()).collect();
        let model = build_custom_raw(k, &[table.clone(), table.clone(), table]).unwrap();
        assert!((model.delta() - 0.5).abs() < 1e-12);
        assert!((model.l_delta() - 3.0).abs() < 1e-12);
        assert!(check_detailed_balance(&model).unwrap() < 1e-12);
        let dist = exact_nu(&model).unwrap();
        let kern = kernel_matrix(&model, &dist).unwrap();
        assert!(stationarity_residual(&dist, &kern) < 1e-14);
        let c = exact_mixing_time(&model, 0.1).unwrap();
        assert!((c.t_eps as f64) <= mixing_bound(&model, 0.1));
    }

    #[test]
    fn strong_disorder_is_uniform_in_beta() {
        for v3 in [1.0, 10.0] {
            for beta in [0.0, 1.0, 10.0, 100.0, 1000.0] {
                let model = fermi(1, beta, &[0.0, 0.0, v3], &[1, 1, 1]);
                let c = exact_mixing_time(&model, 0.1).unwrap();
                assert!((1..=3).contains(&c.t_eps), "beta {beta} v3 {v3}: {}", c.t_eps);
            }
        }
    }

    #[test]
    fn bad_epsilon() {
        let model = fermi(2, 0.0, &[0.0, 0.0], &[2, 2]);
        assert!(exact_mixing_time(&model, 0.0).is_err());
        assert!(exact_mixing_time(&model, 1.0).is_err());
    }
}
