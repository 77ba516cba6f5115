//! Quantized feed-forward networks run on mapped macros.
//!
//! Activations are unsigned 4-bit. After every hidden layer the integer
//! pre-activation `z` is rectified and requantized with a power-of-two
//! shift, `a = clamp((z + 2^(s−1)) >> s, 0, 15)`. The final layer's raw
//! integer outputs are the logits.
//!
//! A model file is JSON:
//!
//! ```text
//! {
//!   "name": "digits-mlp",
//!   "input_shape": [64],
//!   "calibration": "calib_x.csv",
//!   "layers": [
//!     {"kind": "dense", "weights": "fc1.csv", "relu": true},
//!     {"kind": "dense", "weights": "fc2.csv", "relu": false, "gain": 2}
//!   ]
//! }
//! ```
//!
//! Dense weights are `(outputs, inputs)` tensors, conv filters
//! `(R, R, C_in, C_out)` over HWC activations (valid padding, stride 1).
//! Missing `shift`/`gain` entries are calibrated from the calibration set.

use std::path::Path;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mapping::{map_conv_at, map_dense, matvec, LayerKind, LayerMapping, Placement, DEFAULT_MACROS};
use super::tensor::Tensor;
use crate::adc::NonIdealityProfile;
use crate::analysis::trial_rng;
use crate::config::{max_ideal_output_rows, MacroConfig, SchemeSpec};
use crate::error::{Error, Result};
use crate::scheme::MvmEngine;
use crate::Exact;

pub const ACTIVATION_MAX: u32 = 15;
pub const MAX_LAYER_GAIN: u32 = 4;
/// Percentile of calibration pre-activations the requantization covers.
pub const CALIBRATION_PERCENTILE: f64 = 99.9;

#[derive(Clone, Debug)]
pub struct Layer {
    name: String,
    kind: LayerKind,
    weights: Tensor<i32>,
    relu: bool,
    shift: Option<u32>,
    gain: Option<u32>,
    mapping: Option<LayerMapping>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl Layer {
    /// `(outputs, inputs)` weights.
    pub fn dense(name: impl Into<String>, weights: Tensor<i32>, relu: bool) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Mapping(format!("dense weights must be 2-D, got {:?}", weights.shape())));
        }
        Ok(Layer::new(name.into(), LayerKind::Dense, weights, relu))
    }

    /// `(R, R, C_in, C_out)` filter.
    pub fn conv2d(name: impl Into<String>, filter: Tensor<i32>, relu: bool) -> Result<Self> {
        let s = filter.shape();
        if s.len() != 4 || s[0] != s[1] {
            return Err(Error::Mapping(format!("conv filter must be (R, R, C_in, C_out), got {s:?}")));
        }
        Ok(Layer::new(name.into(), LayerKind::Conv2d, filter, relu))
    }

    fn new(name: String, kind: LayerKind, weights: Tensor<i32>, relu: bool) -> Self {
        Layer {
            name,
            kind,
            weights,
            relu,
            shift: None,
            gain: None,
            mapping: None,
            input_shape: Vec::new(),
            output_shape: Vec::new(),
        }
    }

    pub fn with_shift(mut self, shift: u32) -> Self {
        self.shift = Some(shift);
        self
    }

    pub fn with_gain(mut self, gain: u32) -> Self {
        self.gain = Some(gain);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn weights(&self) -> &Tensor<i32> {
        &self.weights
    }

    pub fn relu(&self) -> bool {
        self.relu
    }

    pub fn shift(&self) -> Option<u32> {
        self.shift
    }

    pub fn gain(&self) -> Option<u32> {
        self.gain
    }

    pub fn mapping(&self) -> Option<&LayerMapping> {
        self.mapping.as_ref()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    fn infer_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let w = self.weights.shape();
        match self.kind {
            LayerKind::Conv2d => {
                let &[h, wd, c] = input else {
                    return Err(Error::Mapping(format!(
                        "layer `{}` needs an (H, W, C) input, got {input:?}",
                        self.name
                    )));
                };
                let r = w[0];
                if c != w[2] || h < r || wd < r {
                    return Err(Error::Mapping(format!(
                        "layer `{}`: filter {w:?} does not fit input {input:?}",
                        self.name
                    )));
                }
                Ok(vec![h - r + 1, wd - r + 1, w[3]])
            }
            _ => {
                let len: usize = input.iter().product();
                if len != w[1] {
                    return Err(Error::Mapping(format!(
                        "layer `{}` takes {} inputs but receives {len}",
                        self.name, w[1]
                    )));
                }
                Ok(vec![w[0]])
            }
        }
    }

    /// Direct integer evaluation from the weight tensor.
    fn reference(&self, a: &[u32]) -> Vec<i64> {
        let w = &self.weights;
        match self.kind {
            LayerKind::Conv2d => {
                let (wd, c) = (self.input_shape[1], self.input_shape[2]);
                let [oh, ow, co] = [self.output_shape[0], self.output_shape[1], self.output_shape[2]];
                let r = w.shape()[0];
                let mut z = vec![0i64; oh * ow * co];
                for y in 0..oh {
                    for x in 0..ow {
                        for o in 0..co {
                            let mut acc = 0i64;
                            for ky in 0..r {
                                for kx in 0..r {
                                    for ch in 0..c {
                                        let v = a[((y + ky) * wd + x + kx) * c + ch] as i64;
                                        acc += w.at(&[ky, kx, ch, o]) as i64 * v;
                                    }
                                }
                            }
                            z[(y * ow + x) * co + o] = acc;
                        }
                    }
                }
                z
            }
            _ => w
                .rows()
                .map(|row| row.iter().zip(a).map(|(&w, &x)| w as i64 * x as i64).sum())
                .collect(),
        }
    }

    /// Evaluation through the mapped weight vectors; `dot(x, w, Σx)` runs
    /// one signed chunk MVM.
    fn mapped<F>(&self, vectors: &[Vec<i32>], a: &[u32], dot: &mut F) -> Result<Vec<i64>>
    where
        F: FnMut(&[u32], &[i32], i64) -> Result<i64>,
    {
        let m = self.mapping.as_ref().expect("checked by caller");
        let chunks = m.chunks();
        let outputs = m.outputs();
        match self.kind {
            LayerKind::Conv2d => {
                let (wd, c) = (self.input_shape[1], self.input_shape[2]);
                let (oh, ow) = (self.output_shape[0], self.output_shape[1]);
                let r = m.filter_shape()[0];
                let mut z = vec![0i64; oh * ow * outputs];
                let mut patch = Vec::with_capacity(r * r * m.channels_per_row());
                for y in 0..oh {
                    for x in 0..ow {
                        for ck in 0..chunks {
                            let chans = m.chunk_channels(ck);
                            patch.clear();
                            for ky in 0..r {
                                for kx in 0..r {
                                    let base = ((y + ky) * wd + x + kx) * c;
                                    patch.extend_from_slice(&a[base + chans.start..base + chans.end]);
                                }
                            }
                            let sum = patch.iter().map(|&v| v as i64).sum();
                            for o in 0..outputs {
                                z[(y * ow + x) * outputs + o] += dot(&patch, &vectors[o * chunks + ck], sum)?;
                            }
                        }
                    }
                }
                Ok(z)
            }
            _ => matvec(m, vectors, a, dot),
        }
    }
}

/// Rectify and requantize one pre-activation; the flag marks clipping.
pub fn requantize(z: i64, shift: u32) -> (u32, bool) {
    let z = z.max(0);
    let q = if shift == 0 { z } else { (z + (1i64 << (shift - 1))) >> shift };
    (q.min(ACTIVATION_MAX as i64) as u32, q > ACTIVATION_MAX as i64)
}

/// Smallest shift that maps `peak` into the activation range.
pub fn shift_for_peak(peak: i64) -> u32 {
    (0..63).find(|&s| !requantize(peak, s).1).unwrap_or(63)
}

/// Linear-interpolated percentile of `values` (sorted in place).
fn percentile(values: &mut [i64], q: f64) -> f64 {
    values.sort_unstable();
    let rank = q / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    values[lo] as f64 + (rank - lo as f64) * (values[hi] - values[lo]) as f64
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClipStats {
    pub layer: String,
    pub activations: u64,
    pub clipped: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InferenceReport {
    pub predictions: Vec<usize>,
    pub logits: Vec<Vec<i64>>,
    pub accuracy: f64,
    /// One entry per requantized (hidden) layer.
    pub clipping: Vec<ClipStats>,
    pub conversions: u64,
    pub saturations: u64,
    pub energy_units: f64,
}

#[derive(Default)]
struct SampleStats {
    clipped: Vec<u64>,
    conversions: u64,
    saturations: u64,
    energy_units: f64,
}

pub(crate) fn argmax(v: &[i64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerFileKind {
    Dense,
    Conv2d,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub kind: LayerFileKind,
    pub weights: String,
    #[serde(default = "default_relu")]
    pub relu: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<u32>,
}

fn default_relu() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    pub input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macros: Option<usize>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Clone, Debug)]
pub struct Network {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    cfg: MacroConfig,
    spec: SchemeSpec,
    mapped: bool,
}

impl Network {
    /// Checks layer shapes; the network still has to be mapped and calibrated.
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, mut layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Mapping("network has no layers".into()));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Mapping(format!("bad input shape {input_shape:?}")));
        }
        let last = layers.len() - 1;
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter_mut().enumerate() {
            if i < last && !layer.relu {
                return Err(Error::Mapping(format!(
                    "hidden layer `{}` needs ReLU for unsigned activations",
                    layer.name
                )));
            }
            let out = layer.infer_shape(&shape)?;
            layer.input_shape = std::mem::replace(&mut shape, out.clone());
            layer.output_shape = out;
        }
        Ok(Network {
            name: name.into(),
            input_shape,
            layers,
            cfg: MacroConfig::default(),
            spec: SchemeSpec::bp4(),
            mapped: false,
        })
    }

    /// Place every layer on `macros` macros, consecutive layers on
    /// consecutive banks.
    pub fn map(&mut self, cfg: &MacroConfig, macros: usize) -> Result<()> {
        let mut base_bank = 0;
        let mut mappings = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let placement = Placement {
                macros,
                base_bank,
                ..Placement::default()
            };
            let m = match layer.kind {
                LayerKind::Conv2d => map_conv_at(&layer.weights, cfg, &placement),
                _ => map_dense(&layer.weights, cfg, &placement),
            }
            .map_err(|e| Error::Mapping(format!("layer `{}`: {e}", layer.name)))?;
            base_bank = m.end_bank();
            mappings.push(m);
        }
        for (layer, m) in self.layers.iter_mut().zip(mappings) {
            layer.mapping = Some(m);
        }
        self.cfg = cfg.clone();
        self.spec = SchemeSpec::new(crate::config::Scheme::Bp, cfg.dac_bits(), cfg.slices_per_group as u32)?;
        self.mapped = true;
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_shape.iter().product())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn config(&self) -> &MacroConfig {
        &self.cfg
    }

    pub fn is_mapped(&self) -> bool {
        self.mapped
    }

    /// Profile that resolves every layer exactly.
    pub fn ideal_profile() -> NonIdealityProfile {
        NonIdealityProfile::ideal(1 << 24).expect("level count is valid")
    }

    fn weight_offset(&self) -> i64 {
        1i64 << (self.spec.model_weight_bits - 1)
    }

    fn check_mapped(&self) -> Result<()> {
        match self.layers.iter().find(|l| l.mapping.is_none()) {
            Some(l) => Err(Error::Mapping(format!("layer `{}` is not mapped", l.name))),
            None => Ok(()),
        }
    }

    fn check_ready(&self) -> Result<()> {
        self.check_mapped()?;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            if (i < last && l.shift.is_none()) || l.gain.is_none() {
                return Err(Error::Mapping(format!("layer `{}` is not calibrated", l.name)));
            }
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &[Vec<u32>], labels: &[usize]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Data("empty input batch".into()));
        }
        if labels.len() != inputs.len() {
            return Err(Error::length("labels", inputs.len(), labels.len()));
        }
        let len = self.input_len();
        for x in inputs {
            if x.len() != len {
                return Err(Error::length("input sample", len, x.len()));
            }
            if let Some(&v) = x.iter().find(|&&v| v > ACTIVATION_MAX) {
                return Err(Error::out_of_range("input activation", v as i64, "0..=15"));
            }
        }
        Ok(())
    }

    /// Fill in missing shifts and gains from calibration samples: the shift
    /// covers the configured percentile of rectified pre-activations, the
    /// gain is the largest integer in `1..=4` that keeps the largest
    /// observed conversion inside the ADC range.
    pub fn calibrate(&mut self, samples: &[Vec<u32>]) -> Result<()> {
        self.check_mapped()?;
        self.check_inputs(samples, &vec![0; samples.len()])?;
        let full = max_ideal_output_rows(self.cfg.rows_per_slice, &self.spec) as i64;
        let offset = self.weight_offset();
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<u32>> = samples.to_vec();
        for i in 0..self.layers.len() {
            let layer = &self.layers[i];
            let vectors = layer.mapping.as_ref().expect("mapped").signed_vectors()?;
            let mut peak = 0i64;
            let mut dot = |xs: &[u32], w: &[i32], sum: i64| {
                let d: i64 = xs.iter().zip(w).map(|(&x, &w)| x as i64 * w as i64).sum();
                peak = peak.max(d + offset * sum);
                Ok(d)
            };
            let zs = acts.iter().map(|a| layer.mapped(&vectors, a, &mut dot)).collect::<Result<Vec<_>>>()?;
            let layer = &mut self.layers[i];
            if layer.gain.is_none() {
                layer.gain = Some((full / peak.max(1)).clamp(1, MAX_LAYER_GAIN as i64) as u32);
            }
            if i < last {
                let shift = match layer.shift {
                    Some(s) => s,
                    None => {
                        let mut pos: Vec<i64> = zs.iter().flatten().map(|&z| z.max(0)).collect();
                        let s = shift_for_peak(percentile(&mut pos, CALIBRATION_PERCENTILE) as i64);
                        layer.shift = Some(s);
                        s
                    }
                };
                acts = zs
                    .iter()
                    .map(|z| z.iter().map(|&v| requantize(v, shift).0).collect())
                    .collect();
            }
        }
        Ok(())
    }

    /// One forward pass; `layer_z(i, a)` produces layer `i`'s pre-activations.
    fn forward<F>(&self, x: &[u32], stats: &mut SampleStats, mut layer_z: F) -> Result<Vec<i64>>
    where
        F: FnMut(usize, &Layer, &[u32]) -> Result<Vec<i64>>,
    {
        let last = self.layers.len() - 1;
        stats.clipped = vec![0; last];
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer_z(i, layer, &a)?;
            if i == last {
                return Ok(if layer.relu { z.into_iter().map(|v| v.max(0)).collect() } else { z });
            }
            let shift = layer.shift.expect("checked by caller");
            a = z
                .iter()
                .map(|&v| {
                    let (q, clipped) = requantize(v, shift);
                    stats.clipped[i] += clipped as u64;
                    q
                })
                .collect();
        }
        unreachable!("network has at least one layer")
    }

    fn report(&self, outs: Vec<(Vec<i64>, SampleStats)>, labels: &[usize]) -> InferenceReport {
        let last = self.layers.len() - 1;
        let mut clipping: Vec<ClipStats> = self.layers[..last]
            .iter()
            .map(|l| ClipStats {
                layer: l.name.clone(),
                activations: (l.output_shape.iter().product::<usize>() * outs.len()) as u64,
                clipped: 0,
            })
            .collect();
        let mut report = InferenceReport {
            predictions: Vec::with_capacity(outs.len()),
            logits: Vec::with_capacity(outs.len()),
            accuracy: 0.0,
            clipping: Vec::new(),
            conversions: 0,
            saturations: 0,
            energy_units: 0.0,
        };
        let mut correct = 0usize;
        for ((logits, stats), &label) in outs.into_iter().zip(labels) {
            let p = argmax(&logits);
            correct += (p == label) as usize;
            report.predictions.push(p);
            report.logits.push(logits);
            for (c, n) in clipping.iter_mut().zip(&stats.clipped) {
                c.clipped += n;
            }
            report.conversions += stats.conversions;
            report.saturations += stats.saturations;
            report.energy_units += stats.energy_units;
        }
        report.accuracy = correct as f64 / labels.len() as f64;
        clipping.shrink_to_fit();
        report.clipping = clipping;
        report
    }

    /// Build from a parsed model file; `fetch` returns the text of a
    /// referenced tensor file.
    pub fn from_model(model: &ModelFile, fetch: &dyn Fn(&str) -> Result<String>) -> Result<Self> {
        let mut layers = Vec::with_capacity(model.layers.len());
        for entry in &model.layers {
            let weights = Tensor::<i32>::from_csv_str(&fetch(&entry.weights)?)?;
            let name = entry.weights.rsplit('/').next().unwrap_or(&entry.weights);
            let name = name.strip_suffix(".csv").unwrap_or(name);
            let mut layer = match entry.kind {
                LayerFileKind::Dense => Layer::dense(name, weights, entry.relu)?,
                LayerFileKind::Conv2d => Layer::conv2d(name, weights, entry.relu)?,
            };
            layer.shift = entry.shift;
            layer.gain = entry.gain;
            layers.push(layer);
        }
        let mut net = Network::new(model.name.clone(), model.input_shape.clone(), layers)?;
        net.map(&MacroConfig::default(), model.macros.unwrap_or(DEFAULT_MACROS))?;
        if let Some(calib) = &model.calibration {
            let t = Tensor::<u32>::from_csv_str(&fetch(calib)?)?;
            net.calibrate(&samples_from_tensor(&t))?;
        }
        Ok(net)
    }

    /// Load a model file; tensor paths resolve relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ModelFile = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Network::from_model(&model, &|file| {
            let p = dir.join(file);
            std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        })
    }
}

/// Samples are the rows (first axis) of `t`.
pub fn samples_from_tensor(t: &Tensor<u32>) -> Vec<Vec<u32>> {
    t.rows().map(<[u32]>::to_vec).collect()
}

pub fn labels_from_tensor(t: &Tensor<u32>) -> Vec<usize> {
    t.data().iter().map(|&v| v as usize).collect()
}

/// Brute-force integer forward pass straight from the weight tensors.
pub fn integer_reference(net: &Network, inputs: &[Vec<u32>], labels: &[usize]) -> Result<InferenceReport> {
    net.check_ready()?;
    net.check_inputs(inputs, labels)?;
    let outs = inputs
        .par_iter()
        .map(|x| {
            let mut stats = SampleStats::default();
            let logits = net.forward(x, &mut stats, |_, layer, a| Ok(layer.reference(a)))?;
            Ok((logits, stats))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(net.report(outs, labels))
}

/// Inference through the simulated macros under `profile`, with each
/// layer's calibrated gain. Sample `i` draws from `trial_rng(seed, i)`.
pub fn run_network(
    net: &Network,
    inputs: &[Vec<u32>],
    labels: &[usize],
    profile: &NonIdealityProfile,
    seed: u64,
) -> Result<InferenceReport> {
    net.check_ready()?;
    net.check_inputs(inputs, labels)?;
    let rows = net.cfg.rows_per_slice;
    let mut engines = Vec::with_capacity(net.layers.len());
    let mut vectors = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let gain = Ratio::from_integer(layer.gain.expect("calibrated") as i64);
        let p = profile.clone().with_gain(gain)?;
        engines.push(MvmEngine::<Exact>::new(net.spec, rows, &net.cfg, &p)?);
        vectors.push(layer.mapping.as_ref().expect("mapped").signed_vectors()?);
    }
    let outs = inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = trial_rng(seed, i as u64);
            let mut stats = SampleStats::default();
            let (mut conv, mut sat, mut energy) = (0u64, 0u64, 0.0);
            let logits = net.forward(x, &mut stats, |li, layer, a| {
                let engine = &engines[li];
                layer.mapped(&vectors[li], a, &mut |xs: &[u32], w: &[i32], sum: i64| {
                    let (v, r) = engine.signed_mvm_detailed(xs, w, sum, &mut rng)?;
                    conv += r.conversions as u64;
                    sat += r.saturations as u64;
                    energy += r.energy_units;
                    Ok(v)
                })
            })?;
            stats.conversions = conv;
            stats.saturations = sat;
            stats.energy_units = energy;
            Ok((logits, stats))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(net.report(outs, labels))
}
