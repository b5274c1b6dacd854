//! Random enumerable models shared by the integration tests.
#![allow(dead_code)]

use canon_sampler::exact::exact_nu;
use canon_sampler::{build_custom_raw, build_fermi, Configuration, FermiSpec, Model};
use rand::Rng;

/// Fermi model with `k <= 8`, `m <= 5`, `beta` spread over `[0, 1000]`.
pub fn random_fermi<R: Rng>(rng: &mut R) -> Model {
    loop {
        let k = rng.random_range(1..=8);
        let m = rng.random_range(2..=5);
        let n: Vec<u64> = (0..m).map(|_| rng.random_range(1..=6)).collect();
        if n.iter().sum::<u64>() < k as u64 {
            continue;
        }
        let beta = match rng.random_range(0..4) {
            0 => 0.0,
            _ => 10f64.powf(rng.random_range(-2.0..3.0)),
        };
        let v = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        return build_fermi(&FermiSpec { k, m, beta, v, n }).unwrap();
    }
}

/// Log-concave tables with curvature `c_x ln((x+1)/x)` at `x`, `c_x` drawn
/// from `curv`; `c_x >= 1` everywhere makes the model ultra log-concave.
/// Some levels get a capped support.
pub fn random_custom<R: Rng>(rng: &mut R, curv: std::ops::Range<f64>) -> Model {
    loop {
        let k: usize = rng.random_range(2..=8);
        let m = rng.random_range(2..=5);
        let mut tables = Vec::with_capacity(m);
        let mut capacity = 0;
        for _ in 0..m {
            let cap = if rng.random_bool(0.3) { rng.random_range(1..=k) } else { k };
            capacity += cap;
            let mut slope: f64 = rng.random_range(-2.0..2.0);
            let mut phi = vec![0.0];
            for x in 1..=k {
                if x > cap {
                    phi.push(f64::NEG_INFINITY);
                    continue;
                }
                phi.push(phi[x - 1] + slope);
                let c = rng.random_range(curv.clone());
                slope -= c * ((x + 1) as f64 / x as f64).ln();
            }
            tables.push(phi);
        }
        if capacity < k {
            continue;
        }
        return build_custom_raw(k, &tables).unwrap();
    }
}

/// Mix of Fermi models and custom tables with `delta = 1` and `delta < 1`.
pub fn random_model<R: Rng>(rng: &mut R, i: usize) -> Model {
    match i % 3 {
        0 => random_fermi(rng),
        1 => random_custom(rng, 1.0..2.0),
        _ => random_custom(rng, 0.2..1.5),
    }
}

/// A uniformly chosen positive-weight configuration.
pub fn random_state<R: Rng>(rng: &mut R, model: &Model) -> Configuration {
    let dist = exact_nu(model).unwrap();
    let support = dist.support();
    dist.states()[support[rng.random_range(0..support.len())]].clone()
}
