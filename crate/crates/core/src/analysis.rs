//! Free entropy, the naive sequential sampler, the greedy most probable
//! configuration and the rejection-sampling cost against a multinomial.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{enumerate_states, exact_nu};
use crate::kernel::Configuration;
use crate::measures::{ExtReal, FermiSpec, ModelSpec};
use crate::scalar::Real;

/// `sum_j phi_j(k_j)`; `-inf` exactly when `nu(eta) = 0`.
pub fn free_entropy<T: Real>(model: &ModelSpec<T>, eta: &Configuration) -> ExtReal<T> {
    model.log_weight(eta.occ())
}

/// Unnormalized log-probabilities `ln n'_j - beta v_j` of the next
/// placement, `-inf` for exhausted levels.
fn naive_log_weights(spec: &FermiSpec, remaining: &[u64]) -> Vec<f64> {
    remaining
        .iter()
        .zip(&spec.v)
        .map(|(&n, &v)| {
            if n == 0 {
                f64::NEG_INFINITY
            } else {
                (n as f64).ln() - spec.beta * v
            }
        })
        .collect()
}

fn softmax(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Places `k` particles one at a time, each on level `j` with probability
/// proportional to `n'_j exp(-beta v_j)` where `n'_j` is the degeneracy
/// left on `j`. Its law differs from `nu` as soon as `k > 1`.
pub fn naive_sample<R: Rng + ?Sized>(spec: &FermiSpec, rng: &mut R) -> Result<Configuration> {
    spec.validate()?;
    let mut remaining = spec.n.clone();
    let mut occ = vec![0usize; spec.m];
    for _ in 0..spec.k {
        let p = softmax(&naive_log_weights(spec, &remaining));
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = p.iter().rposition(|&x| x > 0.0).expect("capacity left");
        for (j, &x) in p.iter().enumerate() {
            acc += x;
            if x > 0.0 && u < acc {
                pick = j;
                break;
            }
        }
        remaining[pick] -= 1;
        occ[pick] += 1;
    }
    Ok(Configuration::new(occ))
}

/// Exact law of [`naive_sample`], summed over placement orders, in
/// lexicographic order of configurations.
pub fn naive_law(spec: &FermiSpec) -> Result<Vec<(Configuration, f64)>> {
    spec.validate()?;
    let mut layer: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    layer.insert(vec![0; spec.m], 1.0);
    for _ in 0..spec.k {
        let mut next = BTreeMap::new();
        for (occ, &p) in &layer {
            let remaining: Vec<u64> = spec.n.iter().zip(occ).map(|(&n, &x)| n - x as u64).collect();
            for (j, q) in softmax(&naive_log_weights(spec, &remaining)).into_iter().enumerate() {
                if q > 0.0 {
                    let mut o = occ.clone();
                    o[j] += 1;
                    *next.entry(o).or_insert(0.0) += p * q;
                }
            }
        }
        layer = next;
    }
    Ok(layer.into_iter().map(|(o, p)| (Configuration::new(o), p)).collect())
}

/// Builds the configuration by adding, `k` times, one particle on the level
/// with the largest gain `phi_j(x_j + 1) - phi_j(x_j)` (lowest index on
/// ties), starting from the lower ends of the supports. For log-concave
/// potentials the result maximizes the free entropy.
pub fn most_probable<T: Real>(model: &ModelSpec<T>) -> Result<Configuration> {
    let mut occ: Vec<usize> = model.potentials().iter().map(|p| p.support().0).collect();
    let placed: usize = occ.iter().sum();
    if placed > model.k() {
        return Err(Error::InfeasibleModel("support lower ends exceed k".into()));
    }
    for _ in placed..model.k() {
        let mut best: Option<(usize, T)> = None;
        for (j, p) in model.potentials().iter().enumerate() {
            let g = p.forward_diff(occ[j]).value();
            if g == T::neg_infinity() {
                continue;
            }
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((j, g));
            }
        }
        let (j, _) = best.ok_or_else(|| Error::InfeasibleModel("no level can take another particle".into()))?;
        occ[j] += 1;
    }
    Ok(Configuration::new(occ))
}

/// Every maximizer of the free entropy, by enumeration. Ties are decided
/// with a relative tolerance of `1e-9`.
pub fn all_maximizers<T: Real>(model: &ModelSpec<T>) -> Result<Vec<Configuration>> {
    let states = enumerate_states(model.k(), model.m())?;
    let w: Vec<T> = states.iter().map(|s| model.log_weight(s.occ()).value()).collect();
    let best = w.iter().copied().fold(T::neg_infinity(), T::max);
    if best == T::neg_infinity() {
        return Err(Error::InfeasibleModel("every configuration has zero weight".into()));
    }
    let tol = T::of(1e-9) * T::one().max(best.abs());
    Ok(states
        .into_iter()
        .zip(w)
        .filter(|&(_, x)| best - x <= tol)
        .map(|(s, _)| s)
        .collect())
}

/// `max nu / M_q` and where it is attained.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RejectionRatio<T> {
    pub ratio: T,
    pub log_ratio: T,
    pub argmax: Configuration,
}

/// Expected number of proposals of a rejection sampler for `nu` with a
/// multinomial(`k`, `q`) envelope; uniform `q` when `None`.
pub fn rejection_ratio<T: Real>(model: &ModelSpec<T>, q: Option<&[T]>) -> Result<RejectionRatio<T>> {
    let m = model.m();
    let q: Vec<T> = match q {
        Some(q) => q.to_vec(),
        None => vec![T::one() / T::of_usize(m); m],
    };
    if q.len() != m || q.iter().any(|&x| x.is_nan() || x <= T::zero()) {
        return Err(Error::Argument(format!("q must hold {m} positive probabilities")));
    }
    let total: T = q.iter().copied().sum();
    if (total - T::one()).abs() > T::of(1e-9) {
        return Err(Error::Argument(format!("q sums to {total}, not 1")));
    }
    let dist = exact_nu(model)?;
    let ln_fact: Vec<T> = std::iter::once(T::zero())
        .chain((1..=model.k()).scan(T::zero(), |acc, i| {
            *acc += T::of_usize(i).ln();
            Some(*acc)
        }))
        .collect();
    let ln_q: Vec<T> = q.iter().map(|x| x.ln()).collect();
    let mut best: Option<(T, usize)> = None;
    for (idx, (s, &p)) in dist.states().iter().zip(dist.probs()).enumerate() {
        if p <= T::zero() {
            continue;
        }
        let log_nu = model.log_weight(s.occ()).value() - dist.log_normalizer();
        let log_m = ln_fact[model.k()]
            + s.occ()
                .iter()
                .zip(&ln_q)
                .map(|(&x, &lq)| T::of_usize(x) * lq - ln_fact[x])
                .sum::<T>();
        let r = log_nu - log_m;
        if best.is_none_or(|(b, _)| r > b) {
            best = Some((r, idx));
        }
    }
    let (log_ratio, idx) = best.expect("nu has positive mass");
    Ok(RejectionRatio {
        ratio: log_ratio.exp(),
        log_ratio,
        argmax: dist.states()[idx].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_custom_raw, build_fermi};
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    fn spec(k: usize, beta: f64, v: &[f64], n: &[u64]) -> FermiSpec {
        FermiSpec {
            k,
            m: v.len(),
            beta,
            v: v.to_vec(),
            n: n.to_vec(),
        }
    }

    #[test]
    fn free_entropy_values() {
        let model: ModelSpec<f64> = build_fermi(&spec(2, 0.0, &[0.0, 0.0], &[2, 2])).unwrap();
        let fe = free_entropy(&model, &Configuration::new(vec![1, 1]));
        assert!((fe.value() - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(free_entropy(&model, &Configuration::new(vec![2, 0])).value(), 0.0);
        let model: ModelSpec<f64> = build_fermi(&spec(2, 0.0, &[0.0, 0.0], &[1, 3])).unwrap();
        assert!(free_entropy(&model, &Configuration::new(vec![2, 0])).is_neg_inf());
    }

    #[test]
    fn naive_law_counterexample() {
        let s = spec(2, 1.0, &[0.0, 1.0], &[2, 2]);
        let law = naive_law(&s).unwrap();
        let p20 = law.iter().find(|(c, _)| c.occ() == [2, 0]).unwrap().1;
        let e = (-1f64).exp();
        assert!((p20 - 1.0 / (1.0 + e) / (1.0 + 2.0 * e)).abs() < 1e-15);
        assert!((p20 - 0.42117519090165334).abs() < 1e-12);
        let total: f64 = law.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn naive_single_particle_is_exact() {
        let s = spec(1, 0.7, &[0.0, 0.5, 2.0], &[1, 3, 2]);
        let model: ModelSpec<f64> = build_fermi(&s).unwrap();
        let nu = exact_nu(&model).unwrap();
        for (c, p) in naive_law(&s).unwrap() {
            assert!((p - nu.prob(&c)).abs() < 1e-15);
        }
    }

    #[test]
    fn naive_sampler_respects_capacity() {
        let s = spec(3, 0.0, &[0.0, 0.0], &[1, 5]);
        let mut rng = StreamRng::seed_from_u64(4);
        for _ in 0..200 {
            let c = naive_sample(&s, &mut rng).unwrap();
            assert!(c.occ()[0] <= 1);
            assert_eq!(c.total(), 3);
        }
    }

    #[test]
    fn greedy_cases() {
        let model: ModelSpec<f64> = build_fermi(&spec(2, 0.0, &[0.0, 0.0], &[2, 2])).unwrap();
        assert_eq!(most_probable(&model).unwrap().occ(), &[1, 1]);
        let model: ModelSpec<f64> = build_fermi(&spec(4, 1000.0, &[0.0, 0.5, 1.0], &[5, 5, 5])).unwrap();
        assert_eq!(most_probable(&model).unwrap().occ(), &[4, 0, 0]);
        let model: ModelSpec<f64> = build_fermi(&spec(0, 1.0, &[0.0, 1.0], &[1, 1])).unwrap();
        assert_eq!(most_probable(&model).unwrap().occ(), &[0, 0]);
        let all = all_maximizers(&build_fermi::<f64>(&spec(1, 0.0, &[0.0, 0.0, 0.0], &[1, 1, 1])).unwrap()).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn greedy_honours_shifted_support() {
        let neg = f64::NEG_INFINITY;
        let model = build_custom_raw(3, &[vec![neg, 0.0, -1.0, -3.0], vec![0.0, -0.1, -0.5, -2.0]]).unwrap();
        let c = most_probable(&model).unwrap();
        assert_eq!(c.occ(), &[1, 2]);
        assert_eq!(all_maximizers(&model).unwrap(), vec![c]);
    }

    #[test]
    fn rejection_ratio_exclusion() {
        for (k, want) in [(2usize, 2.0), (3, 4.5), (4, 10.666666666666666), (5, 26.041666666666668)] {
            let model: ModelSpec<f64> = build_fermi(&spec(k, 0.0, &vec![0.0; k], &vec![1; k])).unwrap();
            let r = rejection_ratio(&model, None).unwrap();
            assert!((r.ratio - want).abs() < 1e-9 * want, "k {k}: {}", r.ratio);
        }
    }

    #[test]
    fn rejection_ratio_of_multinomial_is_one() {
        let k = 4;
        let lam = [0.2f64, 0.3, 0.5];
        let tables: Vec<Vec<f64>> = lam
            .iter()
            .map(|l| {
                (0..=k)
                    .map(|x| x as f64 * l.ln() - (1..=x).map(|i| (i as f64).ln()).sum::<f64>())
                    .collect()
            })
            .collect();
        let model = build_custom_raw(k, &tables).unwrap();
        let r = rejection_ratio(&model, Some(&lam)).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        assert!(rejection_ratio(&model, Some(&[0.5, 0.5])).is_err());
        assert!(rejection_ratio(&model, Some(&[0.5, 0.5, 0.5])).is_err());
    }
}
