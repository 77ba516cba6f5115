//! Energy of one complete MVM: ADC conversions plus analog MAC energy, with
//! ADC energy linear in the number of quantization levels.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Scheme, SchemeSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    /// Energy of one single-row analog MAC.
    pub e_mac_unit: f64,
    /// `E_ADC / (N·E_MAC)` at the anchor point.
    pub adc_ratio_anchor: f64,
    pub anchor_bits: f64,
    pub anchor_n: usize,
    /// Multiplier on the ADC term (dual-threshold gating saving); 1 = off.
    pub adc_factor: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            e_mac_unit: 1.0,
            adc_ratio_anchor: 3.0,
            anchor_bits: 7.0,
            anchor_n: 144,
            adc_factor: 1.0,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("e_mac_unit", self.e_mac_unit),
            ("adc_ratio_anchor", self.adc_ratio_anchor),
            ("anchor_bits", self.anchor_bits),
            ("adc_factor", self.adc_factor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be finite and non-negative"));
            }
        }
        if self.anchor_n == 0 {
            return Err(Error::invalid("anchor_n", "must be at least 1"));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        EnergyParams {
            e_mac_unit: self.e_mac_unit * c,
            ..self.clone()
        }
    }
}

/// Effective bits of an ADC with `levels` codes.
pub fn levels_to_bits(levels: u64) -> f64 {
    (levels as f64).log2()
}

/// `E_ADC(b) = ratio · N_anchor · E_MAC · 2^(b − b_anchor)`.
pub fn adc_energy(bits: f64, params: &EnergyParams) -> f64 {
    params.adc_ratio_anchor * params.anchor_n as f64 * params.e_mac_unit * (bits - params.anchor_bits).exp2()
}

/// `(K/N)·(B_A/b_A)·((B_W/b_W)·E_ADC + B_W·N·E_MAC)`.
pub fn mvm_energy(k: usize, n: usize, spec: &SchemeSpec, adc_bits: f64, params: &EnergyParams) -> f64 {
    let tiles = k as f64 / n as f64;
    let input_passes = (spec.model_input_bits / spec.analog_input_bits) as f64;
    let weight_passes = (spec.model_weight_bits / spec.analog_weight_bits) as f64;
    let e_adc = adc_energy(adc_bits, params) * params.adc_factor;
    let e_mac = spec.model_weight_bits as f64 * n as f64 * params.e_mac_unit;
    tiles * input_passes * (weight_passes * e_adc + e_mac)
}

/// One point of an energy comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub spec: SchemeSpec,
    pub n: usize,
    pub k: usize,
    pub adc_bits: f64,
}

impl EnergyConfig {
    pub fn new(scheme: Scheme, n: usize, k: usize, adc_bits: f64) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::invalid("energy config", "K and N must be at least 1"));
        }
        Ok(EnergyConfig {
            spec: SchemeSpec::new(scheme, 4, 4)?,
            n,
            k,
            adc_bits,
        })
    }

    pub fn energy(&self, params: &EnergyParams) -> f64 {
        mvm_energy(self.k, self.n, &self.spec, self.adc_bits, params)
    }

    /// Two operations (multiply and add) per MAC.
    pub fn ops(&self) -> f64 {
        2.0 * self.k as f64
    }

    pub fn efficiency(&self, params: &EnergyParams) -> f64 {
        self.ops() / self.energy(params)
    }
}

/// Operations-per-energy of `a` relative to `b`.
pub fn efficiency_ratio(a: &EnergyConfig, b: &EnergyConfig, params: &EnergyParams) -> f64 {
    a.efficiency(params) / b.efficiency(params)
}

/// Iso-accuracy comparison points at N = 144: the cheapest ADC of each
/// scheme that reaches about 45 dB SQNR on the default input distribution.
pub fn iso_sqnr_configs() -> [EnergyConfig; 3] {
    [
        EnergyConfig::new(Scheme::Bp, 144, 144, 8.0).unwrap(),
        EnergyConfig::new(Scheme::Wbs, 144, 144, 7.0).unwrap(),
        EnergyConfig::new(Scheme::Bs, 144, 144, 7.0).unwrap(),
    ]
}

#[derive(Debug, Serialize)]
struct EnergyRow<'a> {
    scheme: &'a str,
    #[serde(rename = "N")]
    n: usize,
    adc_bits: f64,
    #[serde(rename = "K")]
    k: usize,
    energy_units: f64,
    ops: f64,
    efficiency: f64,
}

/// CSV rows `scheme,N,adc_bits,K,energy_units,ops,efficiency` after `#`
/// comment lines.
pub fn write_energy_csv<W: Write>(mut w: W, configs: &[EnergyConfig], params: &EnergyParams, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}").map_err(|e| Error::io("<csv>", e))?;
    }
    let mut out = csv::Writer::from_writer(w);
    for c in configs {
        out.serialize(EnergyRow {
            scheme: c.spec.scheme.name(),
            n: c.n,
            adc_bits: c.adc_bits,
            k: c.k,
            energy_units: c.energy(params),
            ops: c.ops(),
            efficiency: c.efficiency(params),
        })
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn save_energy_csv(path: impl AsRef<Path>, configs: &[EnergyConfig], params: &EnergyParams, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_energy_csv(std::io::BufWriter::new(f), configs, params, comments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    #[test]
    fn adc_energy_examples() {
        let p = EnergyParams::default();
        assert!(close(adc_energy(7.0, &p), 432.0));
        assert!(close(adc_energy(8.0, &p), 864.0));
        let zero = EnergyParams {
            adc_ratio_anchor: 0.0,
            ..p
        };
        assert_eq!(adc_energy(7.0, &zero), 0.0);
    }

    #[test]
    fn mvm_energy_examples() {
        let p = EnergyParams::default();
        let bp = SchemeSpec::bp4();
        let e = mvm_energy(144, 144, &bp, 8.5, &p);
        assert!(close(e, 432.0 * 1.5f64.exp2() + 576.0));
        assert!((e - 1797.7).abs() < 0.2, "{e}");
        let bs = SchemeSpec::new(Scheme::Bs, 4, 4).unwrap();
        assert!(close(mvm_energy(144, 144, &bs, 5.0, &p), 4032.0));
        let no_adc = EnergyParams {
            adc_ratio_anchor: 0.0,
            ..p
        };
        assert!(close(mvm_energy(144, 144, &bp, 8.0, &no_adc), 4.0 * 144.0));
        assert!(close(mvm_energy(288, 144, &bp, 8.5, &p), 2.0 * e));
    }

    #[test]
    fn ratios() {
        let p = EnergyParams::default();
        let [bp, wbs, bs] = iso_sqnr_configs();
        assert_eq!(efficiency_ratio(&bp, &bp, &p), 1.0);
        assert!(close(efficiency_ratio(&bp, &wbs, &p), 1.6));
        assert!(close(efficiency_ratio(&bp, &bs, &p), 6.4));
        let scaled = p.scaled(3.5);
        assert!(close(efficiency_ratio(&bp, &bs, &scaled), 6.4));
    }

    #[test]
    fn energy_csv_layout() {
        let mut buf = Vec::new();
        write_energy_csv(&mut buf, &iso_sqnr_configs(), &EnergyParams::default(), &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("scheme,N,adc_bits,K,energy_units,ops,efficiency"));
        assert_eq!(lines.next(), Some("bp,144,8.0,144,1440.0,288.0,0.2"));
    }
}
