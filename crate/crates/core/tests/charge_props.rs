use chargecim::charge::{accumulate_macline_with_parasitic, mvm_analog, shift_add, simulate_group};
use chargecim::config::MacroConfig;
use chargecim::{Exact, Scalar};
use proptest::prelude::*;

fn operands(n: usize) -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    (prop::collection::vec(0u32..16, n), prop::collection::vec(0u32..16, n))
}

fn rows(n: usize) -> MacroConfig {
    MacroConfig {
        rows_per_slice: n,
        sa_segment_sizes: vec![8 * n, 4 * n, 2 * n, n],
        ..MacroConfig::default()
    }
}

fn dot(x: &[u32], w: &[u32]) -> i128 {
    x.iter().zip(w).map(|(&a, &b)| a as i128 * b as i128).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_at_full_height((x, w) in operands(144)) {
        let v = mvm_analog::<Exact>(&x, &w, &MacroConfig::default()).unwrap().value();
        prop_assert_eq!(v * Exact::from_integer(34560), Exact::from_integer(dot(&x, &w)));
    }

    #[test]
    fn oracle_on_short_columns(n in 1usize..8, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<u32> = (0..n).map(|_| rng.gen_range(0..16)).collect();
        let w: Vec<u32> = (0..n).map(|_| rng.gen_range(0..16)).collect();
        let v = mvm_analog::<Exact>(&x, &w, &rows(n)).unwrap().value();
        prop_assert_eq!(v * Exact::from_integer(16 * 15 * n as i128), Exact::from_integer(dot(&x, &w)));
    }

    #[test]
    fn superposition_over_slices((x, w) in operands(144), ppm in prop::option::of(0u32..50_000)) {
        let cfg = MacroConfig {
            sa_parasitic_ppm: ppm.map_or(Vec::new(), |p| vec![p, p / 2, p / 3, p / 4]),
            ..MacroConfig::default()
        };
        let (state, out) = simulate_group::<Exact>(&x, &w, &cfg).unwrap();
        let slices: Vec<_> = state
            .slice_banks
            .iter()
            .enumerate()
            .map(|(s, bank)| accumulate_macline_with_parasitic(bank, cfg.parasitic_ppm(s)).unwrap())
            .collect();
        prop_assert_eq!(shift_add(&slices, &cfg).unwrap(), out);
        prop_assert_eq!(mvm_analog::<Exact>(&x, &w, &cfg).unwrap(), out);
    }

    #[test]
    fn monotone_in_each_input((x, w) in operands(144), i in 0usize..144) {
        prop_assume!(x[i] < 15);
        let cfg = MacroConfig::default();
        let before = mvm_analog::<Exact>(&x, &w, &cfg).unwrap().value();
        let mut y = x.clone();
        y[i] += 1;
        let after = mvm_analog::<Exact>(&y, &w, &cfg).unwrap().value();
        if w[i] > 0 {
            prop_assert!(after > before);
        } else {
            prop_assert_eq!(after, before);
        }
    }

    #[test]
    fn float_path_tracks_exact((x, w) in operands(144)) {
        let cfg = MacroConfig::default();
        let exact = mvm_analog::<Exact>(&x, &w, &cfg).unwrap().value().to_f64();
        let fast = mvm_analog::<f64>(&x, &w, &cfg).unwrap().value();
        prop_assert!((exact - fast).abs() < 1e-12);
    }
}
