use chargecim::config::MacroConfig;
use chargecim::nn::mapping::{map_conv, map_dense, Placement};
use chargecim::nn::{integer_reference, map_gru, run_network, Layer, Network, Tensor};
use proptest::prelude::*;

fn weights(shape: Vec<usize>) -> impl Strategy<Value = Tensor<i32>> {
    let len: usize = shape.iter().product();
    prop::collection::vec(-8i32..8, len).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn samples(n: usize, len: usize) -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::collection::vec(0u32..16, len), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_mapping_round_trip(
        f in (1usize..5, 1usize..40, 1usize..6).prop_flat_map(|(r, ci, co)| weights(vec![r, r, ci, co])),
    ) {
        let m = map_conv(&f, &MacroConfig::default()).unwrap();
        let s = f.shape();
        let taps = s[0] * s[1];
        prop_assert!(m.rows().iter().all(|a| a.len <= 144 && a.bank < 9));
        prop_assert_eq!(m.channels_per_row(), 16.min(144 / taps));
        prop_assert_eq!(m.rows().len(), s[3] * s[2].div_ceil(m.channels_per_row()));
        prop_assert_eq!(m.filter().unwrap(), f);
    }

    #[test]
    fn matrix_mapping_round_trip(
        w in (1usize..300, 1usize..400).prop_flat_map(|(o, i)| weights(vec![o, i])),
        macros in 1usize..20,
    ) {
        let cfg = MacroConfig::default();
        let placement = Placement { macros, ..Placement::default() };
        match map_dense(&w, &cfg, &placement) {
            Ok(m) => {
                prop_assert_eq!(m.matrix().unwrap(), w.clone());
                let slots: std::collections::BTreeSet<_> =
                    m.rows().iter().map(|a| (a.macro_index, a.group, a.bank)).collect();
                prop_assert_eq!(slots.len(), m.rows().len());
            }
            Err(e) => {
                let vectors = w.shape()[0] * w.shape()[1].div_ceil(144);
                prop_assert!(vectors > 8 * macros * 9, "{e}");
            }
        }
        let g = map_gru(std::slice::from_ref(&w), &cfg);
        if let Ok(g) = g {
            prop_assert_eq!(g.matrix().unwrap(), w);
        }
    }

    #[test]
    fn ideal_inference_matches_reference(
        (w1, w2, calib, x) in (1usize..200, 1usize..24, 1usize..6).prop_flat_map(|(i, h, o)| (
            weights(vec![h, i]),
            weights(vec![o, h]),
            samples(8, i),
            samples(12, i),
        )),
        macros in 1usize..4,
    ) {
        let i = w1.shape()[1];
        let layers = vec![Layer::dense("a", w1, true).unwrap(), Layer::dense("b", w2, false).unwrap()];
        let mut net = Network::new("p", vec![i], layers).unwrap();
        net.map(&MacroConfig::default(), macros).unwrap();
        net.calibrate(&calib).unwrap();
        let labels = vec![0; x.len()];
        let reference = integer_reference(&net, &x, &labels).unwrap();
        let ideal = run_network(&net, &x, &labels, &Network::ideal_profile(), 1).unwrap();
        prop_assert_eq!(ideal.logits, reference.logits);
        prop_assert_eq!(ideal.clipping, reference.clipping);
    }

    #[test]
    fn ideal_conv_inference_matches_reference(
        (f, x) in (1usize..4, 1usize..24, 1usize..5, 0usize..3).prop_flat_map(|(r, c, co, extra)| (
            weights(vec![r, r, c, co]),
            samples(4, (r + extra) * (r + extra) * c),
        )),
    ) {
        let s = f.shape().to_vec();
        let side = ((x[0].len() / s[2]) as f64).sqrt().round() as usize;
        let mut net = Network::new("c", vec![side, side, s[2]], vec![Layer::conv2d("k", f, false).unwrap()]).unwrap();
        net.map(&MacroConfig::default(), 2).unwrap();
        net.calibrate(&x).unwrap();
        let labels = vec![0; x.len()];
        let reference = integer_reference(&net, &x, &labels).unwrap();
        let ideal = run_network(&net, &x, &labels, &Network::ideal_profile(), 0).unwrap();
        prop_assert_eq!(ideal.logits, reference.logits);
    }
}
