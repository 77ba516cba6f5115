use chargecim::adc::{compute_dnl_inl, quantize, quantize_lsb, NonIdealityProfile};
use chargecim::{FastVoltage, Exact};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn zero_mean(mut t: Vec<f64>) -> Vec<f64> {
    let n = t.len() - 2;
    let mean = t[1..t.len() - 1].iter().sum::<f64>() / n as f64;
    for v in &mut t[1..n + 1] {
        *v -= mean;
    }
    let last = t.len() - 1;
    t[0] = 0.0;
    t[last] = 0.0;
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quantize_monotone_without_noise(
        levels in 4u64..600,
        gain in 1i64..4,
        inl in prop::option::of(prop::collection::vec(-0.45f64..0.45, 600)),
        mut points in prop::collection::vec(0.0f64..1.0, 2..60),
    ) {
        let mut p = NonIdealityProfile::ideal(levels).unwrap().with_gain(Ratio::from_integer(gain)).unwrap();
        if let Some(t) = inl {
            p = p.with_inl(Some(t[..levels as usize].to_vec())).unwrap();
        }
        points.sort_by(f64::total_cmp);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let codes: Vec<u64> = points
            .iter()
            .map(|&v| quantize(FastVoltage::new(v).unwrap(), &p, &mut rng).code)
            .collect();
        prop_assert!(codes.windows(2).all(|c| c[0] <= c[1]), "{:?}", codes);
        prop_assert!(codes.iter().all(|&c| c < levels));
    }

    #[test]
    fn coarse_fine_fields(x in -10.0f64..1000.0, noise in 0.0f64..2.0, seed in any::<u64>()) {
        let p = NonIdealityProfile::measured().with_noise(noise).unwrap();
        let c = quantize_lsb(x, &p, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(c.coarse * 8 + c.fine as u64, c.code);
        prop_assert!(c.fine < 8);
        prop_assert!(c.code < 362);
    }

    #[test]
    fn exact_and_float_inputs_agree(num in 0i64..1_000_000) {
        let p = NonIdealityProfile::measured().with_noise(0.0).unwrap();
        let v = Exact::new(num as i128, 1_000_000);
        let a = quantize(chargecim::ExactVoltage::new(v).unwrap(), &p, &mut ChaCha8Rng::seed_from_u64(0));
        let b = quantize(FastVoltage::new(num as f64 / 1e6).unwrap(), &p, &mut ChaCha8Rng::seed_from_u64(0));
        prop_assert!((a.code as i64 - b.code as i64).abs() <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn noise_std_converges(s in 0.1f64..1.5, x in 100.0f64..250.0, seed in any::<u64>()) {
        let repeats = 4000;
        let p = NonIdealityProfile::ideal(362).unwrap().with_noise(s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes: Vec<f64> = (0..repeats).map(|_| quantize_lsb(x, &p, &mut rng).code as f64).collect();
        let mean = codes.iter().sum::<f64>() / repeats as f64;
        let var = codes.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
        prop_assert!((var.sqrt() - s).abs() <= 3.0 / (repeats as f64).sqrt(), "{} vs {s}", var.sqrt());
    }

    #[test]
    fn injected_dnl_is_recovered(levels in 16usize..48, raw in prop::collection::vec(-0.4f64..0.4, 48)) {
        let dnl = zero_mean(raw[..levels].to_vec());
        let p = NonIdealityProfile::ideal(levels as u64).unwrap().with_dnl(Some(dnl.clone())).unwrap();
        let per_lsb = 2500.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let codes: Vec<f64> = (0..(levels as f64 * per_lsb) as usize)
            .map(|i| quantize_lsb(i as f64 / per_lsb, &p, &mut rng).code as f64)
            .collect();
        let measured = compute_dnl_inl(&codes).unwrap();
        for k in 1..levels - 1 {
            prop_assert!((measured.dnl[k] - dnl[k]).abs() <= 0.02, "code {k}: {} vs {}", measured.dnl[k], dnl[k]);
        }
    }
}
