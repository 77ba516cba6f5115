//! Monte-Carlo SQNR, computing-error statistics, transfer sweeps and
//! energy/SQNR frontier tables.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adc::{measure_transfer, quantize, NonIdealityProfile, TransferPoint};
use crate::charge::{mvm_analog, ChargeKernel, VoltageRatio};
use crate::config::{MacroConfig, Scheme, SchemeSpec};
use crate::energy::{levels_to_bits, mvm_energy, EnergyParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scheme::MvmEngine;
use crate::Exact;

/// Independent stream for trial `index` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    /// Dot-product length `K = R·R·C`.
    pub k: usize,
    /// Optional `(R, C)` the length was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<(usize, usize)>,
    pub trials: usize,
    pub dist_mu: f64,
    pub dist_sigma: f64,
    pub seed: u64,
}

impl Default for TrialConfig {
    /// 3×3×16 kernel, 4-bit operands, 10^5 trials.
    fn default() -> Self {
        TrialConfig {
            k: 144,
            kernel: Some((3, 16)),
            trials: 100_000,
            dist_mu: 7.5,
            dist_sigma: 3.75,
            seed: 0,
        }
    }
}

impl TrialConfig {
    pub fn from_kernel(r: usize, c: usize) -> Self {
        TrialConfig {
            k: r * r * c,
            kernel: Some((r, c)),
            ..Default::default()
        }
    }

    /// Distribution centered on a `bits`-wide grid with σ a quarter of its span.
    pub fn with_operand_bits(mut self, bits: u32) -> Self {
        let top = ((1u64 << bits) - 1) as f64;
        self.dist_mu = top / 2.0;
        self.dist_sigma = top / 4.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if let Some((r, c)) = self.kernel {
            if r * r * c != self.k {
                return Err(Error::invalid("kernel", format!("{r}×{r}×{c} does not give K = {}", self.k)));
            }
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if !(self.dist_sigma > 0.0 && self.dist_sigma.is_finite() && self.dist_mu.is_finite()) {
            return Err(Error::invalid("dist_sigma", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Integers in `0..=max` drawn as rounded Gaussian samples, rejecting draws
/// outside the range.
#[derive(Clone, Copy, Debug)]
pub struct TruncatedGaussian {
    normal: Normal<f64>,
    max: u32,
}

impl TruncatedGaussian {
    pub fn new(mu: f64, sigma: f64, max: u32) -> Result<Self> {
        let normal = Normal::new(mu, sigma).map_err(|e| Error::invalid("dist_sigma", e.to_string()))?;
        let lo = (-0.5 - mu) / sigma;
        let hi = (max as f64 + 0.5 - mu) / sigma;
        if lo > 8.0 || hi < -8.0 {
            return Err(Error::invalid("dist_mu", "distribution has no mass on the integer grid"));
        }
        Ok(TruncatedGaussian { normal, max })
    }
}

impl Distribution<u32> for TruncatedGaussian {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        loop {
            let v = self.normal.sample(rng).round();
            if v >= 0.0 && v <= self.max as f64 {
                return v as u32;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SqnrResult {
    /// `+inf` when every trial is reproduced exactly.
    pub sqnr_db: f64,
    pub signal_power: f64,
    pub noise_power: f64,
    pub energy_units: f64,
    pub trials: usize,
}

const CHUNK: usize = 1024;

/// `10·log10(Σ y² / Σ (y − ŷ)²)` over `tc.trials` random dot products of
/// length `K`, evaluated on the float path with `rows` rows per conversion.
/// Both operands are drawn from the truncated Gaussian. Deterministic for a
/// given seed regardless of thread count.
pub fn sqnr_montecarlo(
    tc: &TrialConfig,
    spec: &SchemeSpec,
    rows: usize,
    cfg: &MacroConfig,
    profile: &NonIdealityProfile,
    params: &EnergyParams,
) -> Result<SqnrResult> {
    tc.validate()?;
    let engine = MvmEngine::<f64>::new(*spec, rows, cfg, profile)?.with_energy_params(params.clone());
    let xdist = TruncatedGaussian::new(tc.dist_mu, tc.dist_sigma, (1u32 << spec.model_input_bits) - 1)?;
    let wdist = TruncatedGaussian::new(tc.dist_mu, tc.dist_sigma, (1u32 << spec.model_weight_bits) - 1)?;
    let chunks = tc.trials.div_ceil(CHUNK);
    let partial: Vec<Result<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut x = vec![0u32; tc.k];
            let mut w = vec![0u32; tc.k];
            let (mut signal, mut noise) = (0.0, 0.0);
            for t in c * CHUNK..((c + 1) * CHUNK).min(tc.trials) {
                let mut rng = trial_rng(tc.seed, t as u64);
                x.iter_mut().for_each(|v| *v = xdist.sample(&mut rng));
                w.iter_mut().for_each(|v| *v = wdist.sample(&mut rng));
                let r = engine.tile_mvm(&x, &w, &mut rng)?;
                let y = r.exact as f64;
                let e = y - r.value_f64();
                signal += y * y;
                noise += e * e;
            }
            Ok((signal, noise))
        })
        .collect();
    let (mut signal, mut noise) = (0.0, 0.0);
    for p in partial {
        let (s, n) = p?;
        signal += s;
        noise += n;
    }
    let sqnr_db = if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    };
    Ok(SqnrResult {
        sqnr_db,
        signal_power: signal,
        noise_power: noise,
        energy_units: mvm_energy(
            tc.k,
            rows,
            spec,
            levels_to_bits(profile.resolution_levels()),
            params,
        ),
        trials: tc.trials,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorStats {
    pub samples: usize,
    pub mean: f64,
    pub sigma: f64,
    pub bin_width: f64,
    /// `(bin center, count)` in ascending order.
    pub histogram: Vec<(f64, u64)>,
}

pub const MIN_ERROR_SAMPLES: usize = 10_000;

/// Standard deviation (population) and histogram of per-sample errors in
/// LSB. Bins are centered on multiples of `bin_width`.
pub fn error_distribution(errors: &[f64], bin_width: f64) -> Result<ErrorStats> {
    if errors.len() < MIN_ERROR_SAMPLES {
        return Err(Error::invalid(
            "errors",
            format!("need at least {MIN_ERROR_SAMPLES} samples, got {}", errors.len()),
        ));
    }
    if !(bin_width > 0.0) {
        return Err(Error::invalid("bin_width", "must be positive"));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let mut bins = std::collections::BTreeMap::<i64, u64>::new();
    for &e in errors {
        *bins.entry((e / bin_width).round() as i64).or_default() += 1;
    }
    Ok(ErrorStats {
        samples: errors.len(),
        mean,
        sigma: var.sqrt(),
        bin_width,
        histogram: bins.into_iter().map(|(b, c)| (b as f64 * bin_width, c)).collect(),
    })
}

pub fn write_histogram_csv<W: Write>(mut w: W, stats: &ErrorStats, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}").map_err(|e| Error::io("<csv>", e))?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_center_lsb", "count"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for &(center, count) in &stats.histogram {
        out.write_record([center.to_string(), count.to_string()])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

/// Row inputs whose sum is `total`, filled with the largest digit first
/// (the way a full-range sweep of `Σ X` is applied to a uniform weight).
pub fn ramp_inputs(total: u32, rows: usize, max_digit: u32) -> Result<Vec<u32>> {
    if total as u64 > rows as u64 * max_digit as u64 {
        return Err(Error::out_of_range(
            "sweep input",
            total as i64,
            format!("0..={}", rows as u64 * max_digit as u64),
        ));
    }
    let full = (total / max_digit) as usize;
    let mut x = vec![0; rows];
    x[..full].fill(max_digit);
    if full < rows {
        x[full] = total % max_digit;
    }
    Ok(x)
}

/// Largest `Σ X` the macro accepts: `N·(2^b_A − 1)`.
pub fn sweep_max(cfg: &MacroConfig) -> u32 {
    cfg.rows_per_slice as u32 * ((1u32 << cfg.dac_bits()) - 1)
}

/// Ideal ADC input (in LSB) and MAC-line voltage for each sweep input with
/// every weight at `weight_code`.
fn sweep_voltages(cfg: &MacroConfig, weight_code: u32, inputs: &[u32]) -> Result<Vec<VoltageRatio<Exact>>> {
    let kernel = ChargeKernel::<Exact>::new(cfg)?;
    let w = vec![weight_code; cfg.rows_per_slice];
    if weight_code >> cfg.slices_per_group != 0 {
        return Err(Error::out_of_range("weight code", weight_code as i64, "stored bit width"));
    }
    let max_digit = (1u32 << cfg.dac_bits()) - 1;
    inputs
        .iter()
        .map(|&k| Ok(kernel.evaluate(&ramp_inputs(k, cfg.rows_per_slice, max_digit)?, &w)))
        .collect()
}

/// Transfer curve of charge model plus ADC: every weight at `weight_code`,
/// `Σ X` swept over `inputs`, each point converted `repeats` times.
pub fn transfer_sweep(
    cfg: &MacroConfig,
    profile: &NonIdealityProfile,
    weight_code: u32,
    inputs: &[u32],
    repeats: usize,
    seed: u64,
) -> Result<Vec<TransferPoint<u32>>> {
    let volts = sweep_voltages(cfg, weight_code, inputs)?;
    let indexed: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = trial_rng(seed, 0);
    let points = measure_transfer(|i, r| quantize(volts[i], profile, r), &indexed, repeats, &mut rng)?;
    Ok(points
        .into_iter()
        .map(|p| TransferPoint {
            input: inputs[p.input],
            mean_code: p.mean_code,
            std_code: p.std_code,
            saturated: p.saturated,
        })
        .collect())
}

/// CSV rows `input,mean_code,std_code,saturated` after `#` comment lines.
pub fn write_transfer_csv<W: Write>(mut w: W, points: &[TransferPoint<u32>], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}").map_err(|e| Error::io("<csv>", e))?;
    }
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(p).map_err(|e| Error::Data(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

/// Computing error `code − v·g·L` for every conversion of a full sweep with
/// all weights at their maximum, `repeats` conversions per input.
pub fn sweep_errors(cfg: &MacroConfig, profile: &NonIdealityProfile, repeats: usize, seed: u64) -> Result<Vec<f64>> {
    let inputs: Vec<u32> = (0..=sweep_max(cfg)).collect();
    let wmax = ((1u64 << cfg.slices_per_group) - 1) as u32;
    let volts = sweep_voltages(cfg, wmax, &inputs)?;
    let g = profile.gain();
    let scale = Exact::new(*g.numer() as i128, *g.denom() as i128) * Exact::from_integer(profile.resolution_levels() as i128);
    let mut rng = trial_rng(seed, 0);
    let mut errors = Vec::with_capacity(inputs.len() * repeats);
    for v in &volts {
        let ideal = (v.value() * scale).to_f64();
        for _ in 0..repeats {
            errors.push(quantize(*v, profile, &mut rng).code as f64 - ideal);
        }
    }
    Ok(errors)
}

/// Slope of output voltage against `Σ X` for every uniform weight code,
/// from the full-scale point of each curve.
pub fn weight_gain_slopes<T: Scalar>(cfg: &MacroConfig) -> Result<Vec<T>> {
    let top = sweep_max(cfg);
    let max_digit = (1u32 << cfg.dac_bits()) - 1;
    let x = ramp_inputs(top, cfg.rows_per_slice, max_digit)?;
    (0..1u32 << cfg.slices_per_group)
        .map(|w| {
            let v: VoltageRatio<T> = mvm_analog(&x, &vec![w; cfg.rows_per_slice], cfg)?;
            Ok(v.value() / T::from_int(top as i64))
        })
        .collect()
}

/// Differences between slopes of adjacent weight codes.
pub fn slope_steps<T: Scalar>(slopes: &[T]) -> Vec<T> {
    slopes.windows(2).map(|w| w[1] - w[0]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub scheme: Scheme,
    pub n: usize,
    pub levels: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    N,
    Levels,
}

/// Cross product of schemes and axis values; the other axis is held at
/// `fixed`.
pub fn grid(axis: SweepAxis, values: &[u64], schemes: &[Scheme], fixed: u64) -> Vec<GridPoint> {
    schemes
        .iter()
        .flat_map(|&scheme| {
            values.iter().map(move |&v| match axis {
                SweepAxis::N => GridPoint {
                    scheme,
                    n: v as usize,
                    levels: fixed,
                },
                SweepAxis::Levels => GridPoint {
                    scheme,
                    n: fixed as usize,
                    levels: v,
                },
            })
        })
        .collect()
}

/// 64 levels, N ∈ {9, 18, 36, 72, 144} for every scheme.
pub fn fig2a_grid() -> Vec<GridPoint> {
    grid(SweepAxis::N, &[9, 18, 36, 72, 144], &Scheme::ALL, 64)
}

/// N = 144, 5- to 10-bit ADCs for every scheme.
pub fn fig2b_grid() -> Vec<GridPoint> {
    let levels: Vec<u64> = (5..=10).map(|b| 1u64 << b).collect();
    grid(SweepAxis::Levels, &levels, &Scheme::ALL, 144)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub scheme: Scheme,
    #[serde(rename = "N")]
    pub n: usize,
    pub levels: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub sqnr_db: f64,
    pub energy_units: f64,
    pub trials: usize,
    pub seed: u64,
}

/// One SQNR run plus energy per grid point, 4-bit operands. `profile`
/// supplies everything but the level count.
pub fn frontier_sweep(
    points: &[GridPoint],
    tc: &TrialConfig,
    cfg: &MacroConfig,
    profile: &NonIdealityProfile,
    params: &EnergyParams,
) -> Result<Vec<FrontierRow>> {
    if points.is_empty() {
        return Err(Error::invalid("grid", "no grid points"));
    }
    points
        .iter()
        .map(|pt| {
            let spec = SchemeSpec::new(pt.scheme, 4, 4)?;
            let prof = profile.clone().with_levels(pt.levels)?;
            let r = sqnr_montecarlo(tc, &spec, pt.n, cfg, &prof, params)?;
            Ok(FrontierRow {
                scheme: pt.scheme,
                n: pt.n,
                levels: pt.levels,
                k: tc.k,
                sqnr_db: r.sqnr_db,
                energy_units: r.energy_units,
                trials: tc.trials,
                seed: tc.seed,
            })
        })
        .collect()
}

pub fn write_frontier_csv<W: Write>(mut w: W, rows: &[FrontierRow], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}").map_err(|e| Error::io("<csv>", e))?;
    }
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_frontier_csv<R: std::io::Read>(r: R) -> Result<Vec<FrontierRow>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Data(format!("frontier table: {e}"))))
        .collect()
}

/// Everything needed to rerun a sweep, plus its results.
#[derive(Clone, Debug, Serialize)]
pub struct FrontierSummary<'a> {
    pub macro_config: &'a MacroConfig,
    pub trial_config: &'a TrialConfig,
    pub profile: &'a NonIdealityProfile,
    pub energy: &'a EnergyParams,
    pub rows: &'a [FrontierRow],
}

pub fn save_frontier(
    csv_path: impl AsRef<Path>,
    rows: &[FrontierRow],
    comments: &[String],
) -> Result<()> {
    let path = csv_path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_frontier_csv(std::io::BufWriter::new(f), rows, comments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::full_precision_profile;

    fn quick(trials: usize) -> TrialConfig {
        TrialConfig {
            trials,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn truncated_gaussian_stays_on_grid() {
        let d = TruncatedGaussian::new(7.5, 3.75, 15).unwrap();
        let mut rng = trial_rng(1, 0);
        let samples: Vec<u32> = (0..20_000).map(|_| d.sample(&mut rng)).collect();
        assert!(samples.iter().all(|&s| s <= 15));
        let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / samples.len() as f64;
        assert!((mean - 7.5).abs() < 0.1, "{mean}");
        assert!(TruncatedGaussian::new(100.0, 1.0, 15).is_err());
    }

    #[test]
    fn full_precision_is_infinite() {
        let spec = SchemeSpec::bp4();
        let p = full_precision_profile(144, &spec);
        let r = sqnr_montecarlo(&quick(200), &spec, 144, &MacroConfig::default(), &p, &EnergyParams::default()).unwrap();
        assert_eq!(r.sqnr_db, f64::INFINITY);
    }

    #[test]
    fn sqnr_is_deterministic_and_grows_with_levels() {
        let cfg = MacroConfig::default();
        let spec = SchemeSpec::bp4();
        let tc = quick(3000);
        let run = |levels| {
            let p = NonIdealityProfile::ideal(levels).unwrap();
            sqnr_montecarlo(&tc, &spec, 144, &cfg, &p, &EnergyParams::default()).unwrap()
        };
        let a = run(64);
        assert_eq!(a, run(64));
        let b = run(128);
        assert!(b.sqnr_db > a.sqnr_db);
        assert!((b.sqnr_db - a.sqnr_db - 6.0).abs() < 0.7);
    }

    #[test]
    fn error_distribution_examples() {
        let same = vec![0.25; 10_000];
        let s = error_distribution(&same, 0.1).unwrap();
        assert_eq!(s.sigma, 0.0);
        assert_eq!(s.histogram.len(), 1);
        assert!(error_distribution(&same[..10], 0.1).is_err());

        let ideal = NonIdealityProfile::ideal(362).unwrap();
        let e = sweep_errors(&MacroConfig::default(), &ideal, 5, 1).unwrap();
        let s = error_distribution(&e, 0.25).unwrap();
        assert!(s.sigma < 0.3 && s.sigma > 0.25, "{}", s.sigma);
    }

    #[test]
    fn ramp_inputs_sum() {
        let x = ramp_inputs(100, 144, 15).unwrap();
        assert_eq!(x.iter().sum::<u32>(), 100);
        assert_eq!(&x[..6], &[15; 6]);
        assert_eq!(x[6], 10);
        assert!(ramp_inputs(2161, 144, 15).is_err());
        assert_eq!(ramp_inputs(2160, 144, 15).unwrap(), vec![15; 144]);
    }

    #[test]
    fn ideal_slopes_are_equally_spaced() {
        let slopes = weight_gain_slopes::<Exact>(&MacroConfig::default()).unwrap();
        let steps = slope_steps(&slopes);
        assert_eq!(steps.len(), 15);
        assert!(steps.iter().all(|s| *s == steps[0]));
    }

    #[test]
    fn frontier_single_point_matches_direct_call() {
        let cfg = MacroConfig::default();
        let tc = quick(500);
        let p = NonIdealityProfile::ideal(64).unwrap();
        let pt = GridPoint {
            scheme: Scheme::Wbs,
            n: 36,
            levels: 64,
        };
        let rows = frontier_sweep(&[pt], &tc, &cfg, &p, &EnergyParams::default()).unwrap();
        let spec = SchemeSpec::new(Scheme::Wbs, 4, 4).unwrap();
        let direct = sqnr_montecarlo(&tc, &spec, 36, &cfg, &p, &EnergyParams::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].sqnr_db, direct.sqnr_db);
        assert_eq!(rows[0].energy_units, direct.energy_units);
        assert!(frontier_sweep(&[], &tc, &cfg, &p, &EnergyParams::default()).is_err());

        let mut buf = Vec::new();
        write_frontier_csv(&mut buf, &rows, &["seed = 5".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("scheme,N,levels,K,sqnr_db,energy_units,trials,seed"));
        assert_eq!(read_frontier_csv(&buf[..]).unwrap(), rows);
    }
}
