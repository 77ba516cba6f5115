//! A single GRU layer with its six gate matrices on the macro and the gate
//! nonlinearities evaluated digitally in `f64`, followed by a mapped linear
//! readout.
//!
//! Inputs are unsigned 4-bit (`x = x_q/15`). The hidden state lives in
//! `(−1, 1)` and is quantized to 4 bits before each hidden MVM,
//! `h_q = round((h + 1)/2 · 15)`, so `U·h = (2·U·h_q − 15·ΣU)/15`; the row
//! sums `ΣU` are digital. Gate order is reset, update, candidate:
//!
//! ```text
//! r = σ(a_w·W_r x + a_u·U_r h)
//! z = σ(a_w·W_z x + a_u·U_z h)
//! n = tanh(a_w·W_n x + r ⊙ a_u·U_n h)
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! The readout logits are the integers `2·R·h_q − 15·ΣR` of the final state.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mapping::{map_dense, map_gru_at, matvec, LayerMapping, Placement, DEFAULT_MACROS};
use super::network::{argmax, InferenceReport, ACTIVATION_MAX};
use super::tensor::Tensor;
use crate::adc::NonIdealityProfile;
use crate::analysis::trial_rng;
use crate::config::{MacroConfig, Scheme, SchemeSpec};
use crate::error::{Error, Result};
use crate::scheme::MvmEngine;
use crate::Exact;

/// One input sequence, a 4-bit vector per time step.
pub type Sequence = Vec<Vec<u32>>;

const Q: f64 = ACTIVATION_MAX as f64;

#[derive(Clone, Debug)]
pub struct GruNetwork {
    input: usize,
    hidden: usize,
    w: [Tensor<i32>; 3],
    u: [Tensor<i32>; 3],
    readout: Tensor<i32>,
    w_scale: f64,
    u_scale: f64,
    gain: u32,
    cfg: MacroConfig,
    macros: usize,
    w_map: LayerMapping,
    u_map: LayerMapping,
    readout_map: LayerMapping,
}

fn shape2(t: &Tensor<i32>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if t.shape() != [rows, cols] {
        return Err(Error::Mapping(format!(
            "{what} must be ({rows}, {cols}), got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn quantize_hidden(h: f64) -> u32 {
    ((h + 1.0) / 2.0 * Q).round().clamp(0.0, Q) as u32
}

fn row_sums(t: &Tensor<i32>) -> Vec<i64> {
    t.rows().map(|r| r.iter().map(|&v| v as i64).sum()).collect()
}

fn exact_matvec(t: &Tensor<i32>, x: &[u32]) -> Vec<i64> {
    t.rows()
        .map(|r| r.iter().zip(x).map(|(&w, &v)| w as i64 * v as i64).sum())
        .collect()
}

/// Product source for one forward pass: `(W·x, U·h_q, R·h_q)` per call.
trait Products {
    fn w(&mut self, x: &[u32]) -> Result<Vec<i64>>;
    fn u(&mut self, h: &[u32]) -> Result<Vec<i64>>;
    fn readout(&mut self, h: &[u32]) -> Result<Vec<i64>>;
}

struct Reference<'a>(&'a GruNetwork);

impl Products for Reference<'_> {
    fn w(&mut self, x: &[u32]) -> Result<Vec<i64>> {
        Ok(self.0.w.iter().flat_map(|g| exact_matvec(g, x)).collect())
    }

    fn u(&mut self, h: &[u32]) -> Result<Vec<i64>> {
        Ok(self.0.u.iter().flat_map(|g| exact_matvec(g, h)).collect())
    }

    fn readout(&mut self, h: &[u32]) -> Result<Vec<i64>> {
        Ok(exact_matvec(&self.0.readout, h))
    }
}

struct Mapped<'a> {
    net: &'a GruNetwork,
    engine: &'a MvmEngine<Exact>,
    vectors: &'a [Vec<Vec<i32>>; 3],
    rng: ChaCha8Rng,
    conversions: u64,
    saturations: u64,
    energy: f64,
}

impl Mapped<'_> {
    fn run(&mut self, which: usize, x: &[u32]) -> Result<Vec<i64>> {
        let m = [&self.net.w_map, &self.net.u_map, &self.net.readout_map][which];
        let (engine, rng) = (self.engine, &mut self.rng);
        let (conv, sat, energy) = (&mut self.conversions, &mut self.saturations, &mut self.energy);
        matvec(m, &self.vectors[which], x, &mut |xs: &[u32], w: &[i32], sum: i64| {
            let (v, r) = engine.signed_mvm_detailed(xs, w, sum, rng)?;
            *conv += r.conversions as u64;
            *sat += r.saturations as u64;
            *energy += r.energy_units;
            Ok(v)
        })
    }
}

impl Products for Mapped<'_> {
    fn w(&mut self, x: &[u32]) -> Result<Vec<i64>> {
        self.run(0, x)
    }

    fn u(&mut self, h: &[u32]) -> Result<Vec<i64>> {
        self.run(1, h)
    }

    fn readout(&mut self, h: &[u32]) -> Result<Vec<i64>> {
        self.run(2, h)
    }
}

impl GruNetwork {
    /// `w` gates are `(hidden, input)`, `u` gates `(hidden, hidden)` and the
    /// readout `(classes, hidden)`, all signed 4-bit.
    pub fn new(w: [Tensor<i32>; 3], u: [Tensor<i32>; 3], readout: Tensor<i32>, cfg: &MacroConfig) -> Result<Self> {
        let hidden = w[0].shape()[0];
        let input = *w[0].shape().last().unwrap_or(&0);
        for g in &w {
            shape2(g, hidden, input, "input gate matrix")?;
        }
        for g in &u {
            shape2(g, hidden, hidden, "hidden gate matrix")?;
        }
        if readout.shape().len() != 2 || readout.shape()[1] != hidden {
            return Err(Error::Mapping(format!(
                "readout must be (classes, {hidden}), got {:?}",
                readout.shape()
            )));
        }
        let (w_map, u_map, readout_map) = Self::place(&w, &u, &readout, cfg, DEFAULT_MACROS)?;
        let spread = |fan_in: usize| 1.0 / ((fan_in as f64).sqrt() * 4.6 * 0.6);
        Ok(GruNetwork {
            input,
            hidden,
            w_scale: spread(input),
            u_scale: spread(hidden),
            w,
            u,
            readout,
            gain: 1,
            cfg: cfg.clone(),
            macros: DEFAULT_MACROS,
            w_map,
            u_map,
            readout_map,
        })
    }

    fn place(
        w: &[Tensor<i32>; 3],
        u: &[Tensor<i32>; 3],
        readout: &Tensor<i32>,
        cfg: &MacroConfig,
        macros: usize,
    ) -> Result<(LayerMapping, LayerMapping, LayerMapping)> {
        let at = |base_bank| Placement {
            macros,
            base_bank,
            ..Placement::default()
        };
        let w_map = map_gru_at(w, cfg, &at(0))?;
        let u_map = map_gru_at(u, cfg, &at(w_map.end_bank()))?;
        let readout_map = map_dense(readout, cfg, &at(u_map.end_bank()))?;
        Ok((w_map, u_map, readout_map))
    }

    /// Uniform random signed 4-bit gates and readout.
    pub fn random(input: usize, hidden: usize, classes: usize, seed: u64, cfg: &MacroConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-8..8)).collect())
        };
        let w = [draw(hidden, input)?, draw(hidden, input)?, draw(hidden, input)?];
        let u = [draw(hidden, hidden)?, draw(hidden, hidden)?, draw(hidden, hidden)?];
        let readout = draw(classes, hidden)?;
        GruNetwork::new(w, u, readout, cfg)
    }

    /// Pre-activation scales applied to `W·x` and `U·h`.
    pub fn with_scales(mut self, w_scale: f64, u_scale: f64) -> Self {
        self.w_scale = w_scale;
        self.u_scale = u_scale;
        self
    }

    /// ADC gain used for every gate and readout conversion.
    pub fn with_gain(mut self, gain: u32) -> Self {
        self.gain = gain;
        self
    }

    pub fn input_len(&self) -> usize {
        self.input
    }

    pub fn hidden_len(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.readout.shape()[0]
    }

    pub fn gate_mappings(&self) -> (&LayerMapping, &LayerMapping) {
        (&self.w_map, &self.u_map)
    }

    pub fn readout_mapping(&self) -> &LayerMapping {
        &self.readout_map
    }

    /// Replace the readout with class centroids of the final hidden state
    /// (centered across classes, scaled to the 4-bit range).
    pub fn fit_readout(&mut self, sequences: &[Sequence], labels: &[usize], classes: usize) -> Result<()> {
        self.check(sequences, labels)?;
        let mut sums = vec![vec![0.0; self.hidden]; classes];
        let mut counts = vec![0usize; classes];
        for (seq, &label) in sequences.iter().zip(labels) {
            if label >= classes {
                return Err(Error::out_of_range("label", label as i64, format!("0..{classes}")));
            }
            let h = self.final_state(seq, &mut Reference(self))?;
            counts[label] += 1;
            for (s, v) in sums[label].iter_mut().zip(h) {
                *s += v;
            }
        }
        let means: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s.iter().map(|v| v / n.max(1) as f64).collect())
            .collect();
        let centered: Vec<f64> = (0..classes)
            .flat_map(|c| {
                let means = &means;
                (0..self.hidden).map(move |i| means[c][i] - means.iter().map(|m| m[i]).sum::<f64>() / classes as f64)
            })
            .collect();
        let peak = centered.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let data = centered.iter().map(|v| (v / peak * 7.0).round() as i32).collect();
        self.readout = Tensor::new(vec![classes, self.hidden], data)?;
        let (_, _, readout_map) = Self::place(&self.w, &self.u, &self.readout, &self.cfg, self.macros)?;
        self.readout_map = readout_map;
        Ok(())
    }

    fn check(&self, sequences: &[Sequence], labels: &[usize]) -> Result<()> {
        if sequences.is_empty() {
            return Err(Error::Data("empty sequence batch".into()));
        }
        if labels.len() != sequences.len() {
            return Err(Error::length("labels", sequences.len(), labels.len()));
        }
        for seq in sequences {
            if seq.is_empty() {
                return Err(Error::Data("empty sequence".into()));
            }
            for x in seq {
                if x.len() != self.input {
                    return Err(Error::length("sequence step", self.input, x.len()));
                }
                if let Some(&v) = x.iter().find(|&&v| v > ACTIVATION_MAX) {
                    return Err(Error::out_of_range("input activation", v as i64, "0..=15"));
                }
            }
        }
        Ok(())
    }

    fn final_state<P: Products>(&self, seq: &[Vec<u32>], p: &mut P) -> Result<Vec<f64>> {
        let hsz = self.hidden;
        let u_sums: Vec<i64> = self.u.iter().flat_map(row_sums).collect();
        let mut h = vec![0.0; hsz];
        for x in seq {
            let hq: Vec<u32> = h.iter().map(|&v| quantize_hidden(v)).collect();
            let wx = p.w(x)?;
            let uh = p.u(&hq)?;
            let pre_w = |j: usize| self.w_scale * wx[j] as f64 / Q;
            let pre_u = |j: usize| self.u_scale * (2 * uh[j] - ACTIVATION_MAX as i64 * u_sums[j]) as f64 / Q;
            for (i, hi) in h.iter_mut().enumerate() {
                let r = sigmoid(pre_w(i) + pre_u(i));
                let z = sigmoid(pre_w(hsz + i) + pre_u(hsz + i));
                let n = (pre_w(2 * hsz + i) + r * pre_u(2 * hsz + i)).tanh();
                *hi = (1.0 - z) * n + z * *hi;
            }
        }
        Ok(h)
    }

    fn logits<P: Products>(&self, seq: &[Vec<u32>], p: &mut P) -> Result<Vec<i64>> {
        let h = self.final_state(seq, p)?;
        let hq: Vec<u32> = h.iter().map(|&v| quantize_hidden(v)).collect();
        let r_sums = row_sums(&self.readout);
        Ok(p.readout(&hq)?
            .iter()
            .zip(&r_sums)
            .map(|(&v, &s)| 2 * v - ACTIVATION_MAX as i64 * s)
            .collect())
    }

    fn report(outs: Vec<(Vec<i64>, u64, u64, f64)>, labels: &[usize]) -> InferenceReport {
        let mut r = InferenceReport {
            predictions: Vec::with_capacity(outs.len()),
            logits: Vec::with_capacity(outs.len()),
            accuracy: 0.0,
            clipping: Vec::new(),
            conversions: 0,
            saturations: 0,
            energy_units: 0.0,
        };
        let mut correct = 0;
        for ((logits, conv, sat, energy), &label) in outs.into_iter().zip(labels) {
            let p = argmax(&logits);
            correct += (p == label) as usize;
            r.predictions.push(p);
            r.logits.push(logits);
            r.conversions += conv;
            r.saturations += sat;
            r.energy_units += energy;
        }
        r.accuracy = correct as f64 / labels.len() as f64;
        r
    }
}

/// Exact integer products with the same digital gate arithmetic.
pub fn gru_reference(net: &GruNetwork, sequences: &[Sequence], labels: &[usize]) -> Result<InferenceReport> {
    net.check(sequences, labels)?;
    let outs = sequences
        .par_iter()
        .map(|seq| Ok((net.logits(seq, &mut Reference(net))?, 0, 0, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GruNetwork::report(outs, labels))
}

/// Gate and readout products through the simulated macros; sequence `i`
/// draws from `trial_rng(seed, i)`.
pub fn run_gru(
    net: &GruNetwork,
    sequences: &[Sequence],
    labels: &[usize],
    profile: &NonIdealityProfile,
    seed: u64,
) -> Result<InferenceReport> {
    net.check(sequences, labels)?;
    let spec = SchemeSpec::new(Scheme::Bp, net.cfg.dac_bits(), net.cfg.slices_per_group as u32)?;
    let p = profile.clone().with_gain(Ratio::from_integer(net.gain as i64))?;
    let engine = MvmEngine::<Exact>::new(spec, net.cfg.rows_per_slice, &net.cfg, &p)?;
    let vectors = [
        net.w_map.signed_vectors()?,
        net.u_map.signed_vectors()?,
        net.readout_map.signed_vectors()?,
    ];
    let outs = sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let mut m = Mapped {
                net,
                engine: &engine,
                vectors: &vectors,
                rng: trial_rng(seed, i as u64),
                conversions: 0,
                saturations: 0,
                energy: 0.0,
            };
            let logits = net.logits(seq, &mut m)?;
            Ok((logits, m.conversions, m.saturations, m.energy))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GruNetwork::report(outs, labels))
}

/// Noisy copies of per-class prototype sequences: each class has a random
/// 4-bit prototype per step; samples add uniform noise in `±noise` and clamp.
/// Prototypes depend only on `seed`, so split one batch for train and test.
pub fn synthetic_sequences(
    classes: usize,
    samples: usize,
    steps: usize,
    input: usize,
    noise: u32,
    seed: u64,
) -> (Vec<Sequence>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Sequence> = (0..classes)
        .map(|_| (0..steps).map(|_| (0..input).map(|_| rng.gen_range(0..=ACTIVATION_MAX)).collect()).collect())
        .collect();
    let noise = noise as i64;
    let mut seqs = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % classes.max(1);
        let seq = prototypes[c]
            .iter()
            .map(|step| {
                step.iter()
                    .map(|&v| (v as i64 + rng.gen_range(-noise..=noise)).clamp(0, ACTIVATION_MAX as i64) as u32)
                    .collect()
            })
            .collect();
        seqs.push(seq);
        labels.push(c);
    }
    (seqs, labels)
}
