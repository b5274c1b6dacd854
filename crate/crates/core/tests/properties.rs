use canon_sampler::coupling::{coupling_time, Variant};
use canon_sampler::exact::{check_detailed_balance, enumerate_states, exact_nu, kernel_matrix, stationarity_residual, tv_distance};
use canon_sampler::kernel::{geometric_trials, holding_prob};
use canon_sampler::model_file::ModelFile;
use canon_sampler::simulate::{coarse_bins, multinomial_degeneracies};
use canon_sampler::{build_custom_raw, build_fermi, dualize, Configuration, FermiSpec, Model, Model32};
use proptest::prelude::*;

fn fermi_spec() -> impl Strategy<Value = FermiSpec> {
    (1usize..=6, 2usize..=4)
        .prop_flat_map(|(k, m)| {
            (
                Just(k),
                Just(m),
                prop_oneof![Just(0.0), 0.0f64..5.0, 5.0f64..1000.0],
                prop::collection::vec(0.0f64..1.0, m),
                prop::collection::vec(1u64..=5, m),
            )
        })
        .prop_filter("capacity below k", |(k, _, _, _, n)| n.iter().sum::<u64>() >= *k as u64)
        .prop_map(|(k, m, beta, v, n)| FermiSpec { k, m, beta, v, n })
}

/// Concave tables from a starting slope and non-negative slope decrements.
fn concave_model() -> impl Strategy<Value = Model> {
    (2usize..=6, 2usize..=4)
        .prop_flat_map(|(k, m)| {
            (
                Just(k),
                prop::collection::vec((-2.0f64..2.0, prop::collection::vec(0.0f64..3.0, k)), m),
            )
        })
        .prop_map(|(k, levels)| {
            let tables: Vec<Vec<f64>> = levels
                .iter()
                .map(|(s0, dec)| {
                    let mut slope = *s0;
                    let mut phi = vec![0.0];
                    for x in 1..=k {
                        phi.push(phi[x - 1] + slope);
                        slope -= dec[x - 1];
                    }
                    phi
                })
                .collect();
            build_custom_raw(k, &tables).unwrap()
        })
}

fn any_model() -> impl Strategy<Value = Model> {
    prop_oneof![fermi_spec().prop_map(|s| build_fermi(&s).unwrap()), concave_model()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_rows_are_stochastic(model in any_model()) {
        let dist = exact_nu(&model).unwrap();
        let kernel = kernel_matrix(&model, &dist).unwrap();
        prop_assert!(kernel.max_row_defect() <= 1e-12);
        for i in 0..kernel.len() {
            prop_assert!(kernel.row(i).iter().all(|&(_, p)| (0.0..=1.0 + 1e-15).contains(&p)));
        }
    }

    #[test]
    fn reversible_and_stationary(model in any_model()) {
        prop_assert!(check_detailed_balance(&model).unwrap() <= 1e-12);
        let dist = exact_nu(&model).unwrap();
        let kernel = kernel_matrix(&model, &dist).unwrap();
        prop_assert!(stationarity_residual(&dist, &kernel) <= 1e-12);
    }

    #[test]
    fn site_weights_never_exceed_l_delta(model in any_model()) {
        let l = model.l_delta();
        for s in enumerate_states(model.k(), model.m()).unwrap() {
            let total: f64 = s.occ().iter().map(|&x| model.site_weight(x)).sum();
            prop_assert!(total <= l * (1.0 + 1e-12), "{s}: {total} > {l}");
        }
    }

    #[test]
    fn fermi_models_are_ultra_log_concave(spec in fermi_spec()) {
        let model: Model = build_fermi(&spec).unwrap();
        prop_assert_eq!(model.delta(), 1.0);
        prop_assert_eq!(model.l_delta(), spec.k as f64);
    }

    #[test]
    fn single_precision_agrees(spec in fermi_spec()) {
        let a: Model = build_fermi(&spec).unwrap();
        let b: Model32 = build_fermi(&spec).unwrap();
        prop_assert_eq!(b.delta(), 1.0);
        for s in enumerate_states(spec.k, spec.m).unwrap() {
            let (x, y) = (a.log_weight(s.occ()), b.log_weight(s.occ()));
            prop_assert_eq!(x.is_finite(), y.is_finite());
            if x.is_finite() {
                prop_assert!((x.value() - y.value() as f64).abs() <= 1e-3 * (1.0 + x.value().abs()));
            }
        }
    }

    #[test]
    fn vacancy_duality(spec in fermi_spec()) {
        prop_assume!(spec.n.iter().sum::<u64>() <= 14);
        let dual_spec = dualize(&spec).unwrap();
        let (model, dual): (Model, Model) = (build_fermi(&spec).unwrap(), build_fermi(&dual_spec).unwrap());
        let (p, q) = (exact_nu(&model).unwrap(), exact_nu(&dual).unwrap());
        for s in p.states() {
            let holes: Vec<usize> = s.occ().iter().zip(&spec.n).map(|(&x, &n)| n as usize - x.min(n as usize)).collect();
            let mirror = Configuration::new(holes);
            if s.occ().iter().zip(&spec.n).all(|(&x, &n)| x as u64 <= n) {
                prop_assert!((p.prob(s) - q.prob(&mirror)).abs() <= 1e-12);
            } else {
                prop_assert_eq!(p.prob(s), 0.0);
            }
        }
    }

    #[test]
    fn coarse_tv_is_below_full_tv(model in any_model(), raw in prop::collection::vec(0.0f64..1.0, 2 * 84), bins in 1usize..8) {
        let dist = exact_nu(&model).unwrap();
        let n = dist.len();
        prop_assume!(n <= 84);
        let norm = |w: &[f64]| { let t: f64 = w.iter().sum(); w.iter().map(|x| x / t).collect::<Vec<_>>() };
        let (p, q) = (norm(&raw[..n]), norm(&raw[84..84 + n]));
        let phi: Vec<f64> = dist.states().iter().map(|s| {
            let w = model.log_weight(s.occ());
            if w.is_finite() { w.value() } else { -1e6 }
        }).collect();
        let binning = coarse_bins(&phi, bins).unwrap();
        let mut cells = std::collections::BTreeMap::<i64, (f64, f64)>::new();
        for i in 0..n {
            let e = cells.entry(binning.bin(phi[i])).or_default();
            e.0 += p[i];
            e.1 += q[i];
        }
        let coarse = 0.5 * cells.values().map(|(a, b)| (a - b).abs()).sum::<f64>();
        prop_assert!(coarse <= tv_distance(&p, &q) + 1e-12);
    }

    #[test]
    fn coupled_discrepancy_never_grows(spec in fermi_spec(), seed in any::<u64>(), delta_variant in any::<bool>()) {
        let model: Model = build_fermi(&spec).unwrap();
        let dist = exact_nu(&model).unwrap();
        let support = dist.support();
        let a = dist.states()[support[seed as usize % support.len()]].clone();
        let b = dist.states()[support[(seed / 7) as usize % support.len()]].clone();
        let variant = if delta_variant { Variant::Delta } else { Variant::Colored };
        let run = coupling_time(&model, &a, &b, seed, 5_000, variant, true).unwrap();
        let trace = run.trace.unwrap();
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0] && w[0] - w[1] <= 1));
        prop_assert_eq!(trace[0], a.discrepancy(&b));
    }

    #[test]
    fn geometric_holding_time_is_positive(u in 0.0f64..1.0, hold in 0.0f64..0.999) {
        prop_assert!(geometric_trials(u, hold) >= 1);
    }

    #[test]
    fn holding_probability_is_a_probability(model in any_model()) {
        let dist = exact_nu(&model).unwrap();
        for &i in &dist.support() {
            let h = holding_prob(&model, &dist.states()[i]).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
        }
    }

    #[test]
    fn model_files_round_trip(spec in fermi_spec()) {
        let file = ModelFile::Fermi(spec);
        prop_assert_eq!(ModelFile::parse(&file.canonical_json()).unwrap(), file.clone());
        let model: Model = file.build().unwrap();
        prop_assert_eq!(ModelFile::from_model(&model), file);
    }

    #[test]
    fn configurations_round_trip(occ in prop::collection::vec(0usize..50, 1..10)) {
        let c = Configuration::new(occ);
        prop_assert_eq!(c.to_string().parse::<Configuration>().unwrap(), c);
    }

    #[test]
    fn multinomial_degeneracies_keep_the_total(total in 0u64..1_000_000, m in 1usize..30, seed in any::<u64>()) {
        let n = multinomial_degeneracies(total, m, seed);
        prop_assert_eq!(n.len(), m);
        prop_assert_eq!(n.iter().sum::<u64>(), total);
    }
}
