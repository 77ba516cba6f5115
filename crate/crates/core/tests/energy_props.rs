use chargecim::config::{Scheme, SchemeSpec};
use chargecim::energy::{adc_energy, efficiency_ratio, mvm_energy, EnergyConfig, EnergyParams};
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop::sample::select(Scheme::ALL.to_vec())
}

proptest! {
    #[test]
    fn linear_in_k_and_mac_energy(
        s in scheme(),
        k in 1usize..5000,
        n in 1usize..600,
        bits in 1.0f64..12.0,
        e_mac in 0.01f64..10.0,
        c in 0.1f64..20.0,
    ) {
        let spec = SchemeSpec::new(s, 4, 4).unwrap();
        let p = EnergyParams { e_mac_unit: e_mac, ..EnergyParams::default() };
        let e = mvm_energy(k, n, &spec, bits, &p);
        prop_assert!(close(mvm_energy(3 * k, n, &spec, bits, &p), 3.0 * e));
        prop_assert!(close(mvm_energy(k, n, &spec, bits, &p.scaled(c)), c * e));
    }

    #[test]
    fn ratios_invariant_under_scaling(a in scheme(), b in scheme(), ba in 3.0f64..11.0, bb in 3.0f64..11.0, c in 0.1f64..50.0) {
        let x = EnergyConfig::new(a, 144, 144, ba).unwrap();
        let y = EnergyConfig::new(b, 144, 144, bb).unwrap();
        let p = EnergyParams::default();
        prop_assert!(close(efficiency_ratio(&x, &y, &p), efficiency_ratio(&x, &y, &p.scaled(c))));
    }

    #[test]
    fn bs_over_bp_matches_formula(n in 1usize..600, bs_bits in 1.0f64..12.0, bp_bits in 1.0f64..12.0) {
        let p = EnergyParams::default();
        let bp = SchemeSpec::new(Scheme::Bp, 4, 4).unwrap();
        let bs = SchemeSpec::new(Scheme::Bs, 4, 4).unwrap();
        let e_mac = n as f64 * p.e_mac_unit;
        let expected = (4.0 * (4.0 * adc_energy(bs_bits, &p) + 4.0 * e_mac)) / (adc_energy(bp_bits, &p) + 4.0 * e_mac);
        let got = mvm_energy(n, n, &bs, bs_bits, &p) / mvm_energy(n, n, &bp, bp_bits, &p);
        prop_assert!(close(got, expected));
    }
}
