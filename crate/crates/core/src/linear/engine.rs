//! The linear engine proper.

use std::sync::OnceLock;

use rayon::prelude::*;

use super::act_lut::ActOffsetLut;
use super::activation::Activation;
use super::lut::{check_preshift, fill_luts, shift_table};
use super::pe::{select, RowAccumulator};
use super::walker::TileWalker;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::perf::EngineCounters;
use crate::quant::{quantize_rows, quantize_weights, ActQuant, ApotCodebook, QuantizedWeights};
use crate::tensor::{pack_codes, PackedWeightBlob};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub tile: usize,
    pub f_bits: u32,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self { tile: 32, f_bits: 8 }
    }
}

impl TileConfig {
    pub fn validate(&self, codebook: &ApotCodebook) -> Result<()> {
        if ![16, 32, 64].contains(&self.tile) {
            return Err(Error::Config(format!("tile size {} not in {{16, 32, 64}}", self.tile)));
        }
        check_preshift(codebook, self.f_bits)
    }
}

/// Packed codes, per-block scales, bias and the fused activation of one layer.
#[derive(Debug, Clone)]
pub struct QuantizedLinear {
    pub weights: QuantizedWeights,
    pub blob: PackedWeightBlob,
    pub bias: Vec<f32>,
    pub act: Activation,
    /// Row-major codes recovered from the blob stream, built on first use.
    decoded: OnceLock<Vec<u8>>,
}

impl QuantizedLinear {
    /// Packs `weights` (shape `[out, in]`) into a blob with tile edge `tile`.
    pub fn new(weights: QuantizedWeights, bias: Vec<f32>, act: Activation, tile: usize) -> Result<Self> {
        let (out_dim, in_dim) = dims(&weights)?;
        let blob = pack_codes(&weights.codes, out_dim, in_dim, tile, if weights.code_bits <= 4 { 4 } else { 8 })?;
        Self::from_parts(weights, blob, bias, act)
    }

    pub fn from_parts(weights: QuantizedWeights, blob: PackedWeightBlob, bias: Vec<f32>, act: Activation) -> Result<Self> {
        let (out_dim, in_dim) = dims(&weights)?;
        if blob.layout.out_dim != out_dim || blob.layout.in_dim != in_dim {
            return Err(Error::Shape(format!(
                "blob describes {}x{}, weights are {out_dim}x{in_dim}",
                blob.layout.out_dim, blob.layout.in_dim
            )));
        }
        if bias.len() != out_dim {
            return Err(Error::Shape(format!("bias has {} entries for {out_dim} outputs", bias.len())));
        }
        Ok(Self { weights, blob, bias, act, decoded: OnceLock::new() })
    }

    /// Quantizes a float `[out, in]` weight and packs it.
    #[allow(clippy::too_many_arguments)]
    pub fn from_float(
        w: &[f32],
        out_dim: usize,
        in_dim: usize,
        bias: Vec<f32>,
        act: Activation,
        block: usize,
        codebook: &ApotCodebook,
        tile: usize,
    ) -> Result<Self> {
        let qw = quantize_weights(w, &[out_dim, in_dim], block, codebook)?;
        Self::new(qw, bias, act, tile)
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape[1]
    }

    /// Replaces the blob, e.g. after loading or fault injection.
    pub fn set_blob(&mut self, blob: PackedWeightBlob) -> Result<()> {
        *self = Self::from_parts(self.weights.clone(), blob, self.bias.clone(), self.act)?;
        Ok(())
    }

    /// Consumes the blob strictly sequentially along the walker's order.
    fn decoded_codes(&self) -> &[u8] {
        self.decoded.get_or_init(|| {
            let l = self.blob.layout;
            let walker = TileWalker::new(l.tile, l.out_dim, l.in_dim);
            let mut codes = vec![0u8; l.out_dim * l.in_dim];
            let mut stream = self.blob.stream();
            for t in walker.tiles() {
                for (o, i) in walker.elements(t) {
                    let c = stream.next().unwrap_or(0);
                    if o < l.out_dim && i < l.in_dim {
                        codes[o * l.in_dim + i] = c;
                    }
                }
            }
            codes
        })
    }
}

fn dims(w: &QuantizedWeights) -> Result<(usize, usize)> {
    match w.shape[..] {
        [o, i] => Ok((o, i)),
        _ => Err(Error::Shape(format!("linear weight must be 2-D, got {:?}", w.shape))),
    }
}

/// Engine configuration plus the activation LUTs it owns.
#[derive(Debug, Clone)]
pub struct LinearEngine {
    pub cfg: TileConfig,
    pub codebook: ApotCodebook,
    silu: ActOffsetLut,
    softplus: ActOffsetLut,
}

impl LinearEngine {
    pub fn new(cfg: TileConfig, codebook: ApotCodebook) -> Result<Self> {
        cfg.validate(&codebook)?;
        Ok(Self {
            cfg,
            codebook,
            silu: ActOffsetLut::with_defaults(Activation::Silu),
            softplus: ActOffsetLut::with_defaults(Activation::Softplus),
        })
    }

    #[inline]
    pub fn activate(&self, act: Activation, y: f32) -> f32 {
        match act {
            Activation::None => y,
            Activation::Relu => y.max(0.0),
            Activation::Silu => self.silu.apply(y),
            Activation::Softplus => self.softplus.apply(y),
        }
    }

    /// Rejects layers whose block partial sums could leave i32.
    fn check_overflow(&self, layer: &QuantizedLinear) -> Result<()> {
        let cb = &self.codebook;
        let top = cb.level_int(cb.len() - 1, self.cfg.f_bits);
        let n = layer.weights.block.min(layer.in_dim()) as i64;
        let bound = n * 127 * top;
        if bound >= 1i64 << 31 {
            return Err(Error::Overflow(format!(
                "block partial sums may reach {bound} (block {}, F={}); reduce B or F",
                layer.weights.block, self.cfg.f_bits
            )));
        }
        Ok(())
    }

    pub fn check_layer(&self, layer: &QuantizedLinear) -> Result<()> {
        if layer.blob.layout.tile != self.cfg.tile {
            return Err(Error::Config(format!(
                "blob packed with tile {}, engine configured for {}",
                layer.blob.layout.tile, self.cfg.tile
            )));
        }
        if layer.weights.code_bits != self.codebook.code_bits() {
            return Err(Error::Config(format!(
                "{}-bit layer on a {}-bit engine",
                layer.weights.code_bits,
                self.codebook.code_bits()
            )));
        }
        self.check_overflow(layer)
    }

    /// Counters of one invocation over `tokens` tokens.
    pub fn counters(&self, layer: &QuantizedLinear, tokens: usize) -> EngineCounters {
        let w = TileWalker::new(self.cfg.tile, layer.out_dim(), layer.in_dim());
        let tiles = (w.tile_count() * tokens) as u64;
        EngineCounters {
            tiles,
            lut_builds: (w.col_tiles() * tokens) as u64,
            pe_selects: tiles * (self.cfg.tile * self.cfg.tile) as u64,
            macs: (layer.out_dim() * layer.in_dim() * tokens) as u64,
            words_streamed: layer.blob.words.len() as u64,
            tokens: tokens as u64,
            state_updates: 0,
        }
    }

    /// Runs one layer over the token rows of `x`.
    pub fn forward(&self, x: &Mat, layer: &QuantizedLinear, aq: &ActQuant) -> Result<(Mat, EngineCounters)> {
        let in_dim = layer.in_dim();
        let out_dim = layer.out_dim();
        if x.cols != in_dim {
            return Err(Error::Shape(format!("input has {} features, layer expects {in_dim}", x.cols)));
        }
        self.check_layer(layer)?;

        let q = quantize_rows(x, aq)?;
        let codes = layer.decoded_codes();
        let shifts = shift_table(&self.codebook, self.cfg.f_bits);
        let levels = shifts.len();
        let mb = self.codebook.magnitude_bits();
        let block = layer.weights.block;
        let scales = &layer.weights.scales;
        let tile = self.cfg.tile;
        let f_bits = self.cfg.f_bits;

        let mut y = Mat::zeros(x.rows, out_dim);
        if out_dim > 0 {
            y.data.par_chunks_mut(out_dim).enumerate().for_each_init(
                || vec![0i32; in_dim * levels],
                |luts, (r, out_row)| {
                    // One LUT build per input tile, broadcast to all output tiles.
                    for (xt, lt) in q.row(r).chunks(tile).zip(luts.chunks_mut(tile * levels)) {
                        fill_luts(xt, &shifts, lt);
                    }
                    let act_scale = q.scales[r];
                    for (o, out) in out_row.iter_mut().enumerate() {
                        let row = &codes[o * in_dim..(o + 1) * in_dim];
                        let mut acc = RowAccumulator::default();
                        let mut start = 0;
                        while start < in_dim {
                            // The row segment inside one weight block.
                            let flat = o * in_dim + start;
                            let blk = flat / block;
                            let end = ((blk + 1) * block - o * in_dim).min(in_dim);
                            let mut sum = 0i32;
                            for (i, &c) in row[start..end].iter().enumerate() {
                                let e = (start + i) * levels;
                                sum += select(&luts[e..e + levels], c, mb);
                            }
                            acc.push(sum, scales[blk]);
                            start = end;
                        }
                        let v = acc.finish(act_scale, f_bits) + layer.bias[o];
                        *out = self.activate(layer.act, v);
                    }
                },
            );
        }
        if let Some((r, c)) = y.first_non_finite() {
            return Err(Error::NonFinite(format!("linear output at token {r}, channel {c}")));
        }
        Ok((y, self.counters(layer, x.rows)))
    }
}

/// One-shot convenience wrapper around [`LinearEngine::forward`].
pub fn linear_forward_quantized(
    x: &Mat,
    layer: &QuantizedLinear,
    codebook: &ApotCodebook,
    cfg: TileConfig,
    aq: &ActQuant,
) -> Result<(Mat, EngineCounters)> {
    LinearEngine::new(cfg, codebook.clone())?.forward(x, layer, aq)
}
