//! Macro geometry, computing-scheme selection and the config file format.
//!
//! The config file is line-oriented `key = value` text with `#` comments and
//! bracketed integer lists:
//!
//! ```text
//! # one CIM macro
//! rows_per_slice = 144
//! slices_per_group = 4
//! groups_per_macro = 8
//! cells_per_cluster = 9
//! column_clusters = 32
//! dac_group_sizes = [16, 8, 4, 2]
//! sa_segment_sizes = [144, 72, 36, 18]
//! supply_voltage = 1.2
//! unit_cap = 4e-15
//! ```
//!
//! Keys that are omitted take the default geometry above. The optional
//! `sa_parasitic_ppm` list adds a parasitic capacitance to each slice's MAC
//! line, in parts per million of that slice's total unit capacitance.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroConfig {
    pub rows_per_slice: usize,
    pub slices_per_group: usize,
    pub groups_per_macro: usize,
    pub cells_per_cluster: usize,
    pub column_clusters: usize,
    /// MSB first.
    pub dac_group_sizes: Vec<usize>,
    /// MSB first.
    pub sa_segment_sizes: Vec<usize>,
    pub supply_voltage: f64,
    pub unit_cap: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sa_parasitic_ppm: Vec<u32>,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            rows_per_slice: 144,
            slices_per_group: 4,
            groups_per_macro: 8,
            cells_per_cluster: 9,
            column_clusters: 32,
            dac_group_sizes: vec![16, 8, 4, 2],
            sa_segment_sizes: vec![144, 72, 36, 18],
            supply_voltage: 1.2,
            unit_cap: 4e-15,
            sa_parasitic_ppm: Vec::new(),
        }
    }
}

impl MacroConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("rows_per_slice", self.rows_per_slice),
            ("slices_per_group", self.slices_per_group),
            ("groups_per_macro", self.groups_per_macro),
            ("cells_per_cluster", self.cells_per_cluster),
            ("column_clusters", self.column_clusters),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        if self.dac_group_sizes.is_empty() || self.dac_group_sizes.contains(&0) {
            return Err(Error::invalid(
                "dac_group_sizes",
                "must be a non-empty list of counts >= 1",
            ));
        }
        let driven: usize = self.dac_group_sizes.iter().sum();
        if driven > self.column_clusters {
            return Err(Error::invalid(
                "dac_group_sizes",
                format!(
                    "groups drive {driven} clusters but a column has only {}",
                    self.column_clusters
                ),
            ));
        }
        if self.sa_segment_sizes.len() != self.slices_per_group {
            return Err(Error::invalid(
                "sa_segment_sizes",
                format!(
                    "has {} entries but slices_per_group = {}",
                    self.sa_segment_sizes.len(),
                    self.slices_per_group
                ),
            ));
        }
        if self.sa_segment_sizes.contains(&0) {
            return Err(Error::invalid("sa_segment_sizes", "counts must be >= 1"));
        }
        if self.sa_segment_sizes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(
                "sa_segment_sizes",
                "must be strictly decreasing (MSB first)",
            ));
        }
        if !self.sa_parasitic_ppm.is_empty() && self.sa_parasitic_ppm.len() != self.slices_per_group {
            return Err(Error::invalid(
                "sa_parasitic_ppm",
                format!(
                    "has {} entries but slices_per_group = {}",
                    self.sa_parasitic_ppm.len(),
                    self.slices_per_group
                ),
            ));
        }
        if !(self.supply_voltage > 0.0) {
            return Err(Error::invalid("supply_voltage", "must be positive"));
        }
        if !(self.unit_cap > 0.0) {
            return Err(Error::invalid("unit_cap", "must be positive"));
        }
        Ok(())
    }

    /// Input bits the column C-DAC resolves.
    pub fn dac_bits(&self) -> u32 {
        self.dac_group_sizes.len() as u32
    }

    /// Parasitic of slice `s` in ppm of the slice capacitance (0 when unset).
    pub fn parasitic_ppm(&self, slice: usize) -> u32 {
        self.sa_parasitic_ppm.get(slice).copied().unwrap_or(0)
    }

    /// Geometry of a single analog conversion with `rows` active rows,
    /// `input_bits` DAC bits and `weight_bits` weight slices.
    ///
    /// Keeps this config's own shift-add segments when the shape matches;
    /// otherwise uses binary segments `k·[2^(w-1), .., 2, 1]` with
    /// `k = max(1, rows >> (w-1))`, which preserves the exact binary weighting.
    pub fn analog_core(&self, rows: usize, input_bits: u32, weight_bits: u32) -> Result<MacroConfig> {
        if input_bits == 0 || input_bits > self.dac_bits() {
            return Err(Error::invalid(
                "analog_input_bits",
                format!(
                    "{input_bits} bits requested but the DAC has {} groups",
                    self.dac_bits()
                ),
            ));
        }
        if weight_bits == 0 || weight_bits > 16 {
            return Err(Error::invalid("analog_weight_bits", "must be within 1..=16"));
        }
        let slices = weight_bits as usize;
        let same_shape = rows == self.rows_per_slice && slices == self.slices_per_group;
        let sa_segment_sizes = if same_shape {
            self.sa_segment_sizes.clone()
        } else {
            let k = (rows >> (slices - 1)).max(1);
            (0..slices).rev().map(|s| k << s).collect()
        };
        let cfg = MacroConfig {
            rows_per_slice: rows,
            slices_per_group: slices,
            dac_group_sizes: self.dac_group_sizes[..input_bits as usize].to_vec(),
            sa_segment_sizes,
            sa_parasitic_ppm: if same_shape {
                self.sa_parasitic_ppm.clone()
            } else {
                Vec::new()
            },
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        // Cannot fail: every field is a plain number or list.
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_string()).map_err(|e| Error::io(path, e))
    }
}

impl FromStr for MacroConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_config(s, Path::new("<string>"))
    }
}

fn parse_config(text: &str, path: &Path) -> Result<MacroConfig> {
    let cfg: MacroConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read and validate a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<MacroConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Bit-parallel: multi-bit inputs and weights in one analog conversion.
    Bp,
    /// Weight-bit-serial: multi-bit inputs, one weight bit per conversion.
    Wbs,
    /// Bit-serial: one input bit and one weight bit per conversion.
    Bs,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Bp, Scheme::Wbs, Scheme::Bs];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Bp => "bp",
            Scheme::Wbs => "wbs",
            Scheme::Bs => "bs",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bp" => Ok(Scheme::Bp),
            "wbs" => Ok(Scheme::Wbs),
            "bs" => Ok(Scheme::Bs),
            other => Err(Error::invalid("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

/// Model bit widths plus the bit widths each analog conversion handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub scheme: Scheme,
    pub model_input_bits: u32,
    pub model_weight_bits: u32,
    pub analog_input_bits: u32,
    pub analog_weight_bits: u32,
}

impl SchemeSpec {
    /// Derive the analog widths from the scheme.
    pub fn new(scheme: Scheme, model_input_bits: u32, model_weight_bits: u32) -> Result<Self> {
        let (analog_input_bits, analog_weight_bits) = match scheme {
            Scheme::Bp => (model_input_bits, model_weight_bits),
            Scheme::Wbs => (model_input_bits, 1),
            Scheme::Bs => (1, 1),
        };
        let spec = SchemeSpec {
            scheme,
            model_input_bits,
            model_weight_bits,
            analog_input_bits,
            analog_weight_bits,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn bp4() -> Self {
        Self::new(Scheme::Bp, 4, 4).unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("model_input_bits", self.model_input_bits),
            ("model_weight_bits", self.model_weight_bits),
            ("analog_input_bits", self.analog_input_bits),
            ("analog_weight_bits", self.analog_weight_bits),
        ] {
            if v == 0 || v > 16 {
                return Err(Error::invalid(field, format!("{v} is outside 1..=16")));
            }
        }
        let expected = match self.scheme {
            Scheme::Bp => (self.model_input_bits, self.model_weight_bits),
            Scheme::Wbs => (self.model_input_bits, 1),
            Scheme::Bs => (1, 1),
        };
        if (self.analog_input_bits, self.analog_weight_bits) != expected {
            return Err(Error::invalid(
                "scheme",
                format!(
                    "{} requires analog bits {:?}, got ({}, {})",
                    self.scheme, expected, self.analog_input_bits, self.analog_weight_bits
                ),
            ));
        }
        if !self.model_input_bits.is_multiple_of(self.analog_input_bits) {
            return Err(Error::invalid("analog_input_bits", "must divide model_input_bits"));
        }
        if !self.model_weight_bits.is_multiple_of(self.analog_weight_bits) {
            return Err(Error::invalid("analog_weight_bits", "must divide model_weight_bits"));
        }
        Ok(())
    }

    /// Analog conversions per macro tile: `(B_A/b_A)·(B_W/b_W)`.
    pub fn conversions_per_tile(&self) -> usize {
        ((self.model_input_bits / self.analog_input_bits) * (self.model_weight_bits / self.analog_weight_bits))
            as usize
    }
}

/// Largest exact MAC value one analog conversion can produce on `rows` rows.
pub fn max_ideal_output_rows(rows: usize, spec: &SchemeSpec) -> u64 {
    rows as u64 * ((1u64 << spec.analog_input_bits) - 1) * ((1u64 << spec.analog_weight_bits) - 1)
}

/// `N·(2^b_A − 1)·(2^b_W − 1)` for the configured slice height.
pub fn max_ideal_output(cfg: &MacroConfig, spec: &SchemeSpec) -> u64 {
    max_ideal_output_rows(cfg.rows_per_slice, spec)
}

/// ADC bits needed to give every ideal output level its own code.
pub fn bits_to_cover(levels_needed: u64) -> u32 {
    let mut bits = 0;
    while (1u64 << bits) < levels_needed {
        bits += 1;
    }
    bits
}

/// Stored bits of one CIM MVM group, indexed `(row, slice, bank)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightBank {
    rows: usize,
    slices: usize,
    banks: usize,
    bits: Vec<u8>,
    active_bank: usize,
}

impl WeightBank {
    pub fn new(cfg: &MacroConfig) -> Self {
        let (rows, slices, banks) = (cfg.rows_per_slice, cfg.slices_per_group, cfg.cells_per_cluster);
        WeightBank {
            rows,
            slices,
            banks,
            bits: vec![0; rows * slices * banks],
            active_bank: 0,
        }
    }

    fn index(&self, row: usize, slice: usize, bank: usize) -> Result<usize> {
        if row >= self.rows {
            return Err(Error::out_of_range("row", row as i64, format!("0..{}", self.rows)));
        }
        if slice >= self.slices {
            return Err(Error::out_of_range("slice", slice as i64, format!("0..{}", self.slices)));
        }
        if bank >= self.banks {
            return Err(Error::out_of_range("bank", bank as i64, format!("0..{}", self.banks)));
        }
        Ok((bank * self.slices + slice) * self.rows + row)
    }

    pub fn get(&self, row: usize, slice: usize, bank: usize) -> Result<u8> {
        Ok(self.bits[self.index(row, slice, bank)?])
    }

    pub fn set(&mut self, row: usize, slice: usize, bank: usize, bit: u8) -> Result<()> {
        if bit > 1 {
            return Err(Error::out_of_range("bit", bit as i64, "0..=1"));
        }
        let i = self.index(row, slice, bank)?;
        self.bits[i] = bit;
        Ok(())
    }

    pub fn active_bank(&self) -> usize {
        self.active_bank
    }

    pub fn select_bank(&mut self, bank: usize) -> Result<()> {
        if bank >= self.banks {
            return Err(Error::out_of_range("bank", bank as i64, format!("0..{}", self.banks)));
        }
        self.active_bank = bank;
        Ok(())
    }

    /// Store an unsigned weight vector in `bank`; slice 0 holds the MSB.
    pub fn store_word(&mut self, bank: usize, weights: &[u32]) -> Result<()> {
        if weights.len() > self.rows {
            return Err(Error::length("weight vector", self.rows, weights.len()));
        }
        let max = (1u64 << self.slices) - 1;
        for row in 0..self.rows {
            let w = weights.get(row).copied().unwrap_or(0);
            if w as u64 > max {
                return Err(Error::out_of_range("weight", w as i64, format!("0..={max}")));
            }
            for slice in 0..self.slices {
                let bit = (w >> (self.slices - 1 - slice)) & 1;
                self.set(row, slice, bank, bit as u8)?;
            }
        }
        Ok(())
    }

    /// Read back the unsigned weight vector stored in `bank`.
    pub fn load_word(&self, bank: usize) -> Result<Vec<u32>> {
        (0..self.rows)
            .map(|row| {
                (0..self.slices).try_fold(0u32, |acc, slice| Ok((acc << 1) | self.get(row, slice, bank)? as u32))
            })
            .collect()
    }

    /// Bit planes of the active bank, `[slice][row]`, MSB slice first.
    pub fn active_planes(&self) -> Vec<Vec<u8>> {
        let b = self.active_bank;
        (0..self.slices)
            .map(|s| {
                let start = (b * self.slices + s) * self.rows;
                self.bits[start..start + self.rows].to_vec()
            })
            .collect()
    }
}
