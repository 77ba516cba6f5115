//! Placement of quantized layers onto macro weight banks.
//!
//! Every layer is cut into weight vectors of at most N entries. A conv filter
//! is unrolled `(ky, kx, channel)` with at most `channels_per_row` input
//! channels per vector; a dense or GRU-gate matrix contributes one vector per
//! output row, chunked every N inputs. Vector `j` of a layer goes to
//!
//! ```text
//! group = j % groups
//! macro = (j / groups) % macros
//! bank  = base_bank + j / (groups · macros)
//! ```
//!
//! so one bank of the macro array holds `groups · macros` vectors and the
//! next layer starts at the next free bank. Signed weights are stored with
//! the `+2^(B_W−1)` offset the signed MVM path expects.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::Serialize;

use super::tensor::Tensor;
use crate::config::{MacroConfig, WeightBank};
use crate::error::{Error, Result};

/// Input channels per unrolled 3×3 filter row.
pub const DEFAULT_CHANNELS_PER_ROW: usize = 16;
/// Macros available to one network.
pub const DEFAULT_MACROS: usize = 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv2d,
    Dense,
    GruGate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub macros: usize,
    pub base_bank: usize,
    pub channels_per_row: usize,
}

impl Default for Placement {
    fn default() -> Self {
        Placement {
            macros: DEFAULT_MACROS,
            base_bank: 0,
            channels_per_row: DEFAULT_CHANNELS_PER_ROW,
        }
    }
}

/// Where one weight vector lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RowAssignment {
    pub output: usize,
    pub chunk: usize,
    pub macro_index: usize,
    pub group: usize,
    pub bank: usize,
    /// Used cells; the remainder of the N-cell vector is zero padding.
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct LayerMapping {
    kind: LayerKind,
    /// `(R, R, C_in, C_out)`; matrices map as `(1, 1, inputs, outputs)`.
    filter_shape: [usize; 4],
    channels_per_row: usize,
    rows: Vec<RowAssignment>,
    base_bank: usize,
    banks_used: usize,
    offset: i32,
    storage: BTreeMap<(usize, usize), WeightBank>,
}

impl LayerMapping {
    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn filter_shape(&self) -> [usize; 4] {
        self.filter_shape
    }

    pub fn channels_per_row(&self) -> usize {
        self.channels_per_row
    }

    pub fn chunks(&self) -> usize {
        self.filter_shape[2].div_ceil(self.channels_per_row)
    }

    pub fn outputs(&self) -> usize {
        self.filter_shape[3]
    }

    /// Input channels covered by chunk `c`.
    pub fn chunk_channels(&self, c: usize) -> Range<usize> {
        let start = c * self.channels_per_row;
        start..(start + self.channels_per_row).min(self.filter_shape[2])
    }

    /// Assignments in vector order `j = output · chunks + chunk`.
    pub fn rows(&self) -> &[RowAssignment] {
        &self.rows
    }

    pub fn base_bank(&self) -> usize {
        self.base_bank
    }

    pub fn banks_used(&self) -> usize {
        self.banks_used
    }

    /// First bank after this layer.
    pub fn end_bank(&self) -> usize {
        self.base_bank + self.banks_used
    }

    /// Read one stored vector back as signed weights.
    pub fn vector(&self, j: usize) -> Result<Vec<i32>> {
        let a = self
            .rows
            .get(j)
            .ok_or_else(|| Error::out_of_range("vector", j as i64, format!("0..{}", self.rows.len())))?;
        let bank = &self.storage[&(a.macro_index, a.group)];
        let word = bank.load_word(a.bank)?;
        Ok(word[..a.len].iter().map(|&w| w as i32 - self.offset).collect())
    }

    pub fn signed_vectors(&self) -> Result<Vec<Vec<i32>>> {
        (0..self.rows.len()).map(|j| self.vector(j)).collect()
    }

    /// Rebuild the `(R, R, C_in, C_out)` filter from the stored bits.
    pub fn filter(&self) -> Result<Tensor<i32>> {
        let [r, _, c_in, c_out] = self.filter_shape;
        let mut t = Tensor::filled(vec![r, r, c_in, c_out], 0)?;
        let chunks = self.chunks();
        for o in 0..c_out {
            for c in 0..chunks {
                let v = self.vector(o * chunks + c)?;
                let chans = self.chunk_channels(c);
                let mut it = v.into_iter();
                for ky in 0..r {
                    for kx in 0..r {
                        for ch in chans.clone() {
                            t.set(&[ky, kx, ch, o], it.next().expect("vector length matches chunk"));
                        }
                    }
                }
            }
        }
        Ok(t)
    }

    /// Rebuild an `(outputs, inputs)` matrix (dense and GRU-gate layers).
    pub fn matrix(&self) -> Result<Tensor<i32>> {
        let f = self.filter()?;
        let [_, _, inputs, outputs] = self.filter_shape;
        let mut t = Tensor::filled(vec![outputs, inputs], 0)?;
        for o in 0..outputs {
            for i in 0..inputs {
                t.set(&[o, i], f.at(&[0, 0, i, o]));
            }
        }
        Ok(t)
    }
}

/// `z = W·x` over a matrix mapping (dense or GRU gates), chunk by chunk;
/// `dot(x_chunk, w, Σx_chunk)` evaluates one stored vector. The input sum
/// is computed once per chunk and shared by every output.
pub(crate) fn matvec<F>(m: &LayerMapping, vectors: &[Vec<i32>], x: &[u32], dot: &mut F) -> Result<Vec<i64>>
where
    F: FnMut(&[u32], &[i32], i64) -> Result<i64>,
{
    let chunks = m.chunks();
    let mut z = vec![0i64; m.outputs()];
    for ck in 0..chunks {
        let xs = &x[m.chunk_channels(ck)];
        let sum = xs.iter().map(|&v| v as i64).sum();
        for (o, zo) in z.iter_mut().enumerate() {
            *zo += dot(xs, &vectors[o * chunks + ck], sum)?;
        }
    }
    Ok(z)
}

fn place(
    kind: LayerKind,
    filter_shape: [usize; 4],
    channels_per_row: usize,
    weight: impl Fn(usize, usize, usize, usize) -> i32,
    cfg: &MacroConfig,
    placement: &Placement,
) -> Result<LayerMapping> {
    cfg.validate()?;
    let [r, _, c_in, c_out] = filter_shape;
    if r == 0 || c_in == 0 || c_out == 0 {
        return Err(Error::Mapping(format!("empty filter shape {filter_shape:?}")));
    }
    if placement.macros == 0 {
        return Err(Error::invalid("macros", "must be at least 1"));
    }
    let bits = cfg.slices_per_group as u32;
    let offset = 1i32 << (bits - 1);
    let groups = cfg.groups_per_macro;
    let per_bank = groups * placement.macros;
    let chunks = c_in.div_ceil(channels_per_row);
    let vectors = c_out * chunks;
    let banks_used = vectors.div_ceil(per_bank);
    if placement.base_bank + banks_used > cfg.cells_per_cluster {
        return Err(Error::Mapping(format!(
            "layer needs banks {}..{} but a cluster has {} cells",
            placement.base_bank,
            placement.base_bank + banks_used,
            cfg.cells_per_cluster
        )));
    }
    let mut rows = Vec::with_capacity(vectors);
    let mut storage: BTreeMap<(usize, usize), WeightBank> = BTreeMap::new();
    for o in 0..c_out {
        for c in 0..chunks {
            let j = o * chunks + c;
            let chans = c * channels_per_row..((c + 1) * channels_per_row).min(c_in);
            let mut word = Vec::with_capacity(r * r * chans.len());
            for ky in 0..r {
                for kx in 0..r {
                    for ch in chans.clone() {
                        let w = weight(ky, kx, ch, o);
                        if w < -offset || w >= offset {
                            return Err(Error::out_of_range(
                                "signed weight",
                                w as i64,
                                format!("{}..{}", -offset, offset),
                            ));
                        }
                        word.push((w + offset) as u32);
                    }
                }
            }
            let a = RowAssignment {
                output: o,
                chunk: c,
                macro_index: (j / groups) % placement.macros,
                group: j % groups,
                bank: placement.base_bank + j / per_bank,
                len: word.len(),
            };
            storage
                .entry((a.macro_index, a.group))
                .or_insert_with(|| WeightBank::new(cfg))
                .store_word(a.bank, &word)?;
            rows.push(a);
        }
    }
    Ok(LayerMapping {
        kind,
        filter_shape,
        channels_per_row,
        rows,
        base_bank: placement.base_bank,
        banks_used,
        offset,
        storage,
    })
}

/// Unroll an `(R, R, C_in, C_out)` filter into rows of at most
/// `channels_per_row` channels.
pub fn map_conv(filter: &Tensor<i32>, cfg: &MacroConfig) -> Result<LayerMapping> {
    map_conv_at(filter, cfg, &Placement::default())
}

pub fn map_conv_at(filter: &Tensor<i32>, cfg: &MacroConfig, placement: &Placement) -> Result<LayerMapping> {
    let s = filter.shape();
    if s.len() != 4 || s[0] != s[1] {
        return Err(Error::Mapping(format!("conv filter must be (R, R, C_in, C_out), got {s:?}")));
    }
    let n = cfg.rows_per_slice;
    let taps = s[0] * s[1];
    let cpr = placement.channels_per_row.min(n / taps.max(1));
    if cpr == 0 {
        return Err(Error::Mapping(format!(
            "{}x{} filter has {taps} taps per channel but a row holds {n} cells",
            s[0], s[1]
        )));
    }
    place(
        LayerKind::Conv2d,
        [s[0], s[1], s[2], s[3]],
        cpr,
        |ky, kx, ch, o| filter.at(&[ky, kx, ch, o]),
        cfg,
        placement,
    )
}

fn matrix_shape(m: &Tensor<i32>) -> Result<(usize, usize)> {
    match m.shape() {
        &[rows, cols] => Ok((rows, cols)),
        s => Err(Error::Mapping(format!("weight matrix must be (outputs, inputs), got {s:?}"))),
    }
}

/// An `(outputs, inputs)` matrix, one vector per output and N-input chunk.
pub fn map_dense(weights: &Tensor<i32>, cfg: &MacroConfig, placement: &Placement) -> Result<LayerMapping> {
    let (outputs, inputs) = matrix_shape(weights)?;
    place(
        LayerKind::Dense,
        [1, 1, inputs, outputs],
        cfg.rows_per_slice,
        |_, _, i, o| weights.at(&[o, i]),
        cfg,
        placement,
    )
}

/// Gate matrices sharing an inner dimension, stacked output-wise.
pub fn map_gru(matrices: &[Tensor<i32>], cfg: &MacroConfig) -> Result<LayerMapping> {
    map_gru_at(matrices, cfg, &Placement::default())
}

pub fn map_gru_at(matrices: &[Tensor<i32>], cfg: &MacroConfig, placement: &Placement) -> Result<LayerMapping> {
    let first = matrices.first().ok_or_else(|| Error::Mapping("no gate matrices".into()))?;
    let (_, inner) = matrix_shape(first)?;
    let mut owners = Vec::new();
    for (g, m) in matrices.iter().enumerate() {
        let (rows, cols) = matrix_shape(m)?;
        if cols != inner {
            return Err(Error::Mapping(format!(
                "gate matrix {g} has inner dimension {cols}, expected {inner}"
            )));
        }
        owners.extend((0..rows).map(|r| (g, r)));
    }
    place(
        LayerKind::GruGate,
        [1, 1, inner, owners.len()],
        cfg.rows_per_slice,
        |_, _, i, o| {
            let (g, r) = owners[o];
            matrices[g].at(&[r, i])
        },
        cfg,
        placement,
    )
}
