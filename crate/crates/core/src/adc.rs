//! Behavioral model of the dual-threshold time-domain ADC.
//!
//! Codes are produced in three steps: threshold comparison (ideal floor, or
//! thresholds displaced by an INL table), code-domain Gaussian noise, and a
//! clamp to the code range. Gain scales the input before quantization.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use num_rational::Ratio;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
use statrs::statistics::Statistics;

use crate::charge::VoltageRatio;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// round(2^8.5)
pub const DEFAULT_LEVELS: u64 = 362;

/// Gain that maps the full 4b×4b input sweep (0..=2160) onto 360 codes of
/// exactly 6 input units each.
pub fn matched_gain() -> Ratio<i64> {
    Ratio::new(384, 362)
}

/// Ramp fraction left when the auxiliary comparator hands over to the main
/// path; gives a 0.442 active fraction for uniformly distributed ramps.
pub fn default_vref() -> f64 {
    1.0 - 0.558f64.sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonIdealityProfile {
    resolution_levels: u64,
    gain: Ratio<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dnl: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inl: Option<Vec<f64>>,
    noise_sigma_lsb: f64,
    vref_threshold: f64,
    dual_threshold: bool,
    gating_floor: f64,
    #[serde(skip)]
    prepared: OnceLock<Prepared>,
}

#[derive(Clone, Debug)]
struct Prepared {
    offsets: Option<Vec<f64>>,
    max_offset: f64,
    analog_sigma: f64,
}

impl Default for NonIdealityProfile {
    fn default() -> Self {
        NonIdealityProfile {
            resolution_levels: DEFAULT_LEVELS,
            gain: Ratio::from_integer(1),
            dnl: None,
            inl: None,
            noise_sigma_lsb: 0.0,
            vref_threshold: default_vref(),
            dual_threshold: false,
            gating_floor: 0.05,
            prepared: OnceLock::new(),
        }
    }
}

impl PartialEq for NonIdealityProfile {
    fn eq(&self, other: &Self) -> bool {
        self.resolution_levels == other.resolution_levels
            && self.gain == other.gain
            && self.dnl == other.dnl
            && self.inl == other.inl
            && self.noise_sigma_lsb == other.noise_sigma_lsb
            && self.vref_threshold == other.vref_threshold
            && self.dual_threshold == other.dual_threshold
            && self.gating_floor == other.gating_floor
    }
}

impl NonIdealityProfile {
    /// Noise-free, linear ADC with `levels` codes and unit gain.
    pub fn ideal(levels: u64) -> Result<Self> {
        let p = NonIdealityProfile {
            resolution_levels: levels,
            ..Default::default()
        };
        p.validate()?;
        Ok(p)
    }

    /// 8.5-bit ADC with 0.4 LSB noise, a measured-shape INL table, the
    /// sweep-matched gain and dual-threshold gating on.
    pub fn measured() -> Self {
        NonIdealityProfile {
            resolution_levels: DEFAULT_LEVELS,
            gain: matched_gain(),
            inl: Some(measured_shape_inl(DEFAULT_LEVELS as usize)),
            noise_sigma_lsb: 0.4,
            dual_threshold: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution_levels < 2 {
            return Err(Error::invalid("resolution_levels", "need at least 2 levels"));
        }
        if self.resolution_levels > 1 << 40 {
            return Err(Error::invalid("resolution_levels", "more than 2^40 levels"));
        }
        let one = Ratio::from_integer(1);
        if self.gain < one || self.gain > Ratio::from_integer(4) {
            return Err(Error::invalid("gain", format!("{} is outside [1, 4]", self.gain)));
        }
        for (name, table) in [("dnl", &self.dnl), ("inl", &self.inl)] {
            if let Some(t) = table {
                if t.len() as u64 != self.resolution_levels {
                    return Err(Error::length(name, self.resolution_levels as usize, t.len()));
                }
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(name, "table holds a non-finite entry"));
                }
            }
        }
        if !(self.noise_sigma_lsb >= 0.0 && self.noise_sigma_lsb.is_finite()) {
            return Err(Error::invalid("noise_sigma_lsb", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.vref_threshold) {
            return Err(Error::invalid("vref_threshold", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gating_floor) {
            return Err(Error::invalid("gating_floor", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn rebuilt(mut self) -> Result<Self> {
        self.prepared = OnceLock::new();
        self.validate()?;
        Ok(self)
    }

    pub fn with_levels(mut self, levels: u64) -> Result<Self> {
        self.resolution_levels = levels;
        self.rebuilt()
    }

    pub fn with_gain(mut self, gain: Ratio<i64>) -> Result<Self> {
        self.gain = gain;
        self.rebuilt()
    }

    pub fn with_noise(mut self, sigma_lsb: f64) -> Result<Self> {
        self.noise_sigma_lsb = sigma_lsb;
        self.rebuilt()
    }

    pub fn with_dnl(mut self, dnl: Option<Vec<f64>>) -> Result<Self> {
        self.dnl = dnl;
        self.rebuilt()
    }

    pub fn with_inl(mut self, inl: Option<Vec<f64>>) -> Result<Self> {
        self.inl = inl;
        self.rebuilt()
    }

    pub fn with_tables(self, tables: DnlInl) -> Result<Self> {
        self.with_dnl(Some(tables.dnl))?.with_inl(Some(tables.inl))
    }

    pub fn with_vref(mut self, vref: f64) -> Result<Self> {
        self.vref_threshold = vref;
        self.rebuilt()
    }

    pub fn with_dual_threshold(mut self, on: bool) -> Result<Self> {
        self.dual_threshold = on;
        self.rebuilt()
    }

    pub fn with_gating_floor(mut self, floor: f64) -> Result<Self> {
        self.gating_floor = floor;
        self.rebuilt()
    }

    pub fn resolution_levels(&self) -> u64 {
        self.resolution_levels
    }

    pub fn gain(&self) -> Ratio<i64> {
        self.gain
    }

    pub fn dnl(&self) -> Option<&[f64]> {
        self.dnl.as_deref()
    }

    pub fn inl(&self) -> Option<&[f64]> {
        self.inl.as_deref()
    }

    pub fn noise_sigma_lsb(&self) -> f64 {
        self.noise_sigma_lsb
    }

    pub fn vref_threshold(&self) -> f64 {
        self.vref_threshold
    }

    pub fn dual_threshold(&self) -> bool {
        self.dual_threshold
    }

    pub fn gating_floor(&self) -> f64 {
        self.gating_floor
    }

    /// True when conversions are a plain floor: no tables, no noise.
    pub fn is_noiseless_linear(&self) -> bool {
        let p = self.prepared();
        p.offsets.is_none() && p.analog_sigma == 0.0
    }

    /// Standard deviation of the pre-rounding noise that yields
    /// `noise_sigma_lsb` after rounding to whole codes.
    pub fn analog_noise_sigma(&self) -> f64 {
        self.prepared().analog_sigma
    }

    fn prepared(&self) -> &Prepared {
        self.prepared.get_or_init(|| {
            let offsets = match (&self.inl, &self.dnl) {
                (Some(inl), _) => Some(inl.clone()),
                (None, Some(dnl)) => Some(inl_from_dnl(dnl)),
                (None, None) => None,
            }
            .filter(|t| t.iter().any(|&v| v != 0.0));
            let max_offset = offsets
                .as_ref()
                .map_or(0.0, |t| t.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            Prepared {
                offsets,
                max_offset,
                analog_sigma: analog_sigma_for_code_sigma(self.noise_sigma_lsb),
            }
        })
    }
}

/// One conversion result. `coarse` and `fine` are the counter and phase
/// fields of the TDC; `code == coarse * 8 + fine`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AdcCode {
    pub code: u64,
    pub coarse: u64,
    pub fine: u8,
    pub saturated: bool,
}

impl AdcCode {
    pub fn new(code: u64, saturated: bool) -> Self {
        AdcCode {
            code,
            coarse: code >> 3,
            fine: (code & 7) as u8,
            saturated,
        }
    }
}

/// Transition-referred INL from a DNL table: the threshold of code `k`
/// moves by the summed width errors of codes `1..k`.
pub fn inl_from_dnl(dnl: &[f64]) -> Vec<f64> {
    let mut inl = vec![0.0; dnl.len()];
    let mut acc = 0.0;
    for k in 2..dnl.len() {
        acc += dnl[k - 1];
        inl[k] = acc;
    }
    inl
}

/// Number of thresholds `k + off[k]` (k ≥ 1) at or below `x`, scanning only
/// the window the offsets can reach.
fn threshold_count(x: f64, off: &[f64], max_offset: f64) -> i64 {
    let top = off.len() as i64 - 1;
    let lo = ((x - max_offset).floor() as i64).max(1);
    let hi = ((x + max_offset).ceil() as i64).min(top);
    if lo > top {
        return top;
    }
    let mut count = lo - 1;
    for k in lo..=hi {
        if k as f64 + off[k as usize] <= x {
            count += 1;
        }
    }
    count
}

/// Quantize an input already expressed in LSB units.
pub fn quantize_lsb<T: Scalar, R: Rng + ?Sized>(x: T, profile: &NonIdealityProfile, rng: &mut R) -> AdcCode {
    let p = profile.prepared();
    let top = profile.resolution_levels as i64 - 1;
    let raw = x.floor_i64();
    let mut saturated = raw > top;
    let mut code = match &p.offsets {
        Some(off) => threshold_count(x.to_f64(), off, p.max_offset),
        None => raw,
    };
    if p.analog_sigma > 0.0 {
        let n: f64 = Normal::new(0.0, p.analog_sigma)
            .expect("sigma is positive")
            .sample(rng);
        code += n.round() as i64;
        saturated |= code > top;
    }
    AdcCode::new(code.clamp(0, top) as u64, saturated)
}

/// Convert a MAC-line voltage: ideal code `floor(v · gain · levels)`, then
/// INL, noise and clamping.
pub fn quantize<T: Scalar, R: Rng + ?Sized>(v: VoltageRatio<T>, profile: &NonIdealityProfile, rng: &mut R) -> AdcCode {
    let g = profile.gain;
    let scale = T::from_ratio(*g.numer(), *g.denom()) * T::from_int(profile.resolution_levels as i64);
    quantize_lsb(v.value() * scale, profile, rng)
}

fn rounded_noise_variance(sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let n = StdNormal::new(0.0, sigma).expect("sigma is positive");
    let kmax = (8.0 * sigma).ceil() as i64 + 2;
    2.0 * (1..=kmax)
        .map(|k| {
            let k = k as f64;
            k * k * (n.cdf(k + 0.5) - n.cdf(k - 0.5))
        })
        .sum::<f64>()
}

/// Solve for the Gaussian sigma whose rounded samples have standard deviation
/// `code_sigma`.
pub fn analog_sigma_for_code_sigma(code_sigma: f64) -> f64 {
    if code_sigma <= 0.0 {
        return 0.0;
    }
    let target = code_sigma * code_sigma;
    let (mut lo, mut hi) = (0.0, code_sigma + 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rounded_noise_variance(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferPoint<I> {
    pub input: I,
    pub mean_code: f64,
    pub std_code: f64,
    pub saturated: usize,
}

/// Convert every sweep input `repeats` times, in sweep order, and summarize
/// the codes. Standard deviations use the `n - 1` estimator.
pub fn measure_transfer<I, R, F>(mut dut: F, sweep: &[I], repeats: usize, rng: &mut R) -> Result<Vec<TransferPoint<I>>>
where
    I: Copy,
    R: Rng + ?Sized,
    F: FnMut(I, &mut R) -> AdcCode,
{
    if sweep.is_empty() {
        return Err(Error::invalid("sweep", "no inputs"));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats", "must be at least 1"));
    }
    let mut codes = Vec::with_capacity(repeats);
    let mut out = Vec::with_capacity(sweep.len());
    for &input in sweep {
        codes.clear();
        let mut saturated = 0;
        for _ in 0..repeats {
            let c = dut(input, rng);
            saturated += c.saturated as usize;
            codes.push(c.code as f64);
        }
        let mean_code = codes.iter().mean();
        let std_code = if repeats > 1 { codes.iter().std_dev() } else { 0.0 };
        out.push(TransferPoint {
            input,
            mean_code,
            std_code,
            saturated,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DnlInl {
    pub dnl: Vec<f64>,
    pub inl: Vec<f64>,
}

fn extremes(t: &[f64]) -> (f64, f64) {
    t.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

impl DnlInl {
    pub fn dnl_range(&self) -> (f64, f64) {
        extremes(&self.dnl)
    }

    pub fn inl_range(&self) -> (f64, f64) {
        extremes(&self.inl)
    }
}

fn code_histogram(codes: &[f64]) -> Result<Vec<usize>> {
    let mut hits: Vec<usize> = Vec::new();
    for &c in codes {
        if !c.is_finite() {
            return Err(Error::invalid("codes", "non-finite mean code"));
        }
        let k = c.round().max(0.0) as usize;
        if k >= hits.len() {
            hits.resize(k + 1, 0);
        }
        hits[k] += 1;
    }
    if hits.len() < 3 {
        return Err(Error::invalid("codes", "ramp must cover at least three codes"));
    }
    Ok(hits)
}

fn tables_from_widths(hits: &[usize], lsb: f64) -> DnlInl {
    let top = hits.len() - 1;
    let mut dnl = vec![0.0; hits.len()];
    for k in 1..top {
        dnl[k] = hits[k] as f64 / lsb - 1.0;
    }
    let inl = inl_from_dnl(&dnl);
    DnlInl { dnl, inl }
}

/// Histogram DNL/INL over a uniform input ramp. The ideal code width is the
/// mean width of the interior codes, so INL is zero at both end transitions.
/// The first and last codes are partial and report 0.
pub fn compute_dnl_inl(codes: &[f64]) -> Result<DnlInl> {
    let hits = code_histogram(codes)?;
    let top = hits.len() - 1;
    let lsb = hits[1..top].iter().sum::<usize>() as f64 / (top - 1) as f64;
    Ok(tables_from_widths(&hits, lsb))
}

/// As [`compute_dnl_inl`] with a known ideal width of `points_per_lsb` ramp
/// points per code.
pub fn compute_dnl_inl_with_lsb(codes: &[f64], points_per_lsb: f64) -> Result<DnlInl> {
    if !(points_per_lsb > 0.0) {
        return Err(Error::invalid("points_per_lsb", "must be positive"));
    }
    Ok(tables_from_widths(&code_histogram(codes)?, points_per_lsb))
}

/// Relative main-path ADC energy with dual-threshold gating. `ramp_fractions`
/// holds each conversion's ramp duration as a fraction of the full-scale
/// ramp; the main path runs only for the last `vref_threshold` of each ramp.
/// Never drops below the profile's gating floor.
pub fn adc_energy_factor(profile: &NonIdealityProfile, ramp_fractions: &[f64]) -> f64 {
    if !profile.dual_threshold {
        return 1.0;
    }
    let t_ref = profile.vref_threshold;
    let (active, total) = ramp_fractions.iter().fold((0.0, 0.0), |(a, t), &r| {
        let r = r.clamp(0.0, 1.0);
        (a + r.min(t_ref), t + r)
    });
    let fraction = if total > 0.0 { active / total } else { 0.0 };
    fraction.max(profile.gating_floor)
}

/// INL shape resembling the measured chip: a bow spanning the code range plus
/// a periodic spike every 32 codes (coarse-counter carry), zero at both ends.
pub fn measured_shape_inl(levels: usize) -> Vec<f64> {
    let span = (levels - 1) as f64;
    let mut inl: Vec<f64> = (0..levels)
        .map(|k| {
            let spike = if k % 32 == 16 { 1.0 } else { 0.0 } - 1.0 / 32.0;
            0.42 * (2.0 * PI * k as f64 / span).sin() + 0.70 * spike
        })
        .collect();
    for k in [0, 1, levels - 1] {
        inl[k] = 0.0;
    }
    inl
}

#[derive(Debug, Deserialize, Serialize)]
struct NonlinearityRow {
    code: usize,
    dnl_lsb: f64,
    inl_lsb: f64,
}

/// Write `code,dnl_lsb,inl_lsb` rows, preceded by `#` comment lines.
pub fn write_nonlinearity_csv<W: Write>(mut w: W, tables: &DnlInl, comments: &[String]) -> Result<()> {
    if tables.dnl.len() != tables.inl.len() {
        return Err(Error::length("inl table", tables.dnl.len(), tables.inl.len()));
    }
    for c in comments {
        writeln!(w, "# {c}").map_err(|e| Error::io("<csv>", e))?;
    }
    let mut out = csv::Writer::from_writer(w);
    for (code, (&dnl_lsb, &inl_lsb)) in tables.dnl.iter().zip(&tables.inl).enumerate() {
        out.serialize(NonlinearityRow { code, dnl_lsb, inl_lsb })
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_nonlinearity_csv<R: Read>(r: R) -> Result<DnlInl> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut tables = DnlInl {
        dnl: Vec::new(),
        inl: Vec::new(),
    };
    for (i, row) in rdr.deserialize::<NonlinearityRow>().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("nonlinearity table: {e}")))?;
        if row.code != i {
            return Err(Error::Data(format!(
                "nonlinearity table: expected code {i}, found {}",
                row.code
            )));
        }
        tables.dnl.push(row.dnl_lsb);
        tables.inl.push(row.inl_lsb);
    }
    Ok(tables)
}

pub fn load_nonlinearity_csv(path: impl AsRef<Path>) -> Result<DnlInl> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_nonlinearity_csv(f)
}

pub fn save_nonlinearity_csv(path: impl AsRef<Path>, tables: &DnlInl, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_nonlinearity_csv(std::io::BufWriter::new(f), tables, comments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Exact;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn v(n: i64, d: i64) -> VoltageRatio<Exact> {
        VoltageRatio::from_ratio(n, d).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let ideal = NonIdealityProfile::ideal(362).unwrap();
        let mut r = rng();
        assert_eq!(quantize(v(0, 1), &ideal, &mut r).code, 0);
        let c = quantize(v(15, 16), &ideal, &mut r);
        assert_eq!((c.code, c.saturated), (339, false));
        let g2 = ideal.clone().with_gain(Ratio::from_integer(2)).unwrap();
        let c = quantize(v(1, 2), &g2, &mut r);
        assert_eq!((c.code, c.saturated), (361, true));
        assert_eq!(quantize(v(0, 1), &NonIdealityProfile::measured(), &mut r).code, 0);
    }

    #[test]
    fn code_fields() {
        for code in [0u64, 7, 8, 339, 361, 511] {
            let c = AdcCode::new(code, false);
            assert_eq!(c.coarse * 8 + c.fine as u64, code);
            assert!(c.coarse < 64);
        }
    }

    #[test]
    fn profile_validation() {
        assert!(NonIdealityProfile::ideal(1).is_err());
        let p = NonIdealityProfile::ideal(362).unwrap();
        assert!(p.clone().with_gain(Ratio::new(1, 2)).is_err());
        assert!(p.clone().with_gain(Ratio::from_integer(5)).is_err());
        assert!(p.clone().with_inl(Some(vec![0.0; 10])).is_err());
        assert!(p.clone().with_noise(-1.0).is_err());
        assert!(p.with_vref(1.5).is_err());
    }

    #[test]
    fn rounded_noise_calibration() {
        let s = analog_sigma_for_code_sigma(0.4);
        assert!((s - 0.3558).abs() < 1e-3, "{s}");
        assert!((rounded_noise_variance(s) - 0.16).abs() < 1e-9);
        // large sigma: rounding adds the usual 1/12
        let big = analog_sigma_for_code_sigma(3.0);
        assert!((big * big - (9.0 - 1.0 / 12.0)).abs() < 1e-3);
    }

    #[test]
    fn inl_shifts_thresholds() {
        let mut inl = vec![0.0; 362];
        inl[100] = 0.5;
        let p = NonIdealityProfile::ideal(362).unwrap().with_inl(Some(inl)).unwrap();
        let mut r = rng();
        assert_eq!(quantize_lsb(100.25f64, &p, &mut r).code, 99);
        assert_eq!(quantize_lsb(100.5f64, &p, &mut r).code, 100);
        assert_eq!(quantize_lsb(99.9f64, &p, &mut r).code, 99);
        assert_eq!(quantize_lsb(101.0f64, &p, &mut r).code, 101);
        assert_eq!(quantize_lsb(500.0f64, &p, &mut r).code, 361);
    }

    #[test]
    fn transfer_and_dnl_examples() {
        let ideal = NonIdealityProfile::ideal(362).unwrap();
        let sweep: Vec<f64> = (0..3000).map(|k| k as f64 / 8.0).collect();
        let t = measure_transfer(|x, r| quantize_lsb(x, &ideal, r), &sweep, 1, &mut rng()).unwrap();
        assert!(t.windows(2).all(|w| w[0].mean_code <= w[1].mean_code));
        let codes: Vec<f64> = t.iter().map(|p| p.mean_code).collect();
        let d = compute_dnl_inl(&codes).unwrap();
        assert_eq!(d.dnl_range(), (0.0, 0.0));
        assert_eq!(d.inl_range(), (0.0, 0.0));

        let t = measure_transfer(|x, r| quantize_lsb(x, &ideal, r), &[50.5], 20, &mut rng()).unwrap();
        assert_eq!(t[0].std_code, 0.0);

        // code 5 twice as wide
        let mut codes: Vec<f64> = (0..40).flat_map(|c| [c as f64; 4]).collect();
        codes.extend([5.0; 4]);
        codes.sort_by(f64::total_cmp);
        let d = compute_dnl_inl_with_lsb(&codes, 4.0).unwrap();
        assert_eq!(d.dnl[5], 1.0);
        assert_eq!(d.dnl[4], 0.0);
        assert_eq!(d.inl[6], 1.0);

        // missing code
        let codes: Vec<f64> = (0..20).filter(|&c| c != 7).flat_map(|c| [c as f64; 3]).collect();
        assert_eq!(compute_dnl_inl(&codes).unwrap().dnl[7], -1.0);
        assert!(measure_transfer(|x: f64, r| quantize_lsb(x, &ideal, r), &[], 1, &mut rng()).is_err());
    }

    #[test]
    fn energy_factor_examples() {
        let off = NonIdealityProfile::ideal(362).unwrap();
        assert_eq!(adc_energy_factor(&off, &[0.3, 0.9]), 1.0);
        let on = off.with_dual_threshold(true).unwrap();
        assert_eq!(adc_energy_factor(&on, &[0.0; 100]), on.gating_floor());
        let ramps: Vec<f64> = (0..100_000).map(|i| (i as f64 + 0.5) / 100_000.0).collect();
        assert!((adc_energy_factor(&on, &ramps) - 0.442).abs() < 1e-6);
    }

    #[test]
    fn measured_inl_shape() {
        let inl = measured_shape_inl(362);
        let peak = inl.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak > 1.0 && peak < 1.15, "{peak}");
        assert_eq!((inl[0], inl[1], inl[361]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn nonlinearity_csv_roundtrip() {
        let dnl: Vec<f64> = (0..362).map(|k| ((k * 37) % 11) as f64 / 40.0 - 0.1).collect();
        let tables = DnlInl {
            inl: inl_from_dnl(&dnl),
            dnl,
        };
        let mut buf = Vec::new();
        write_nonlinearity_csv(&mut buf, &tables, &["seed = 1".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed = 1\ncode,dnl_lsb,inl_lsb\n"));
        assert_eq!(read_nonlinearity_csv(&buf[..]).unwrap(), tables);
        let bad = "code,dnl_lsb,inl_lsb\n0,0,0\n2,0,0\n";
        assert!(read_nonlinearity_csv(bad.as_bytes()).is_err());
    }
}
