//! Indexing/summation PE lanes and the row-level rescale.

use super::lut::LutBank;
use crate::error::{Error, Result};
use crate::quant::ApotCodebook;

/// Sideband travelling with each LUT tile so PE lanes stay stateless.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeControlPacket {
    pub row_tile: usize,
    pub col_tile: usize,
    /// Row-relative block index at the start of the tile segment.
    pub group: usize,
    /// First input tile of an output tile: clear partial sums.
    pub reset: bool,
    /// Last input tile of an output tile: emit results.
    pub flush: bool,
}

/// 8-to-1 (or 2^m-to-1) mux on the magnitude, then a conditional inverter.
#[inline(always)]
pub(crate) fn select(lut: &[i32], code: u8, magnitude_bits: u32) -> i32 {
    let mag = (code & ((1u8 << magnitude_bits) - 1)) as usize;
    let neg = -(((code >> magnitude_bits) & 1) as i32);
    (lut[mag] ^ neg) - neg
}

/// Sums one lane's selections, splitting wherever `block_ids` changes.
/// Returns `(block, partial sum)` runs in input order.
pub fn pe_lane_accumulate(
    luts: &LutBank,
    codes: &[u8],
    block_ids: &[usize],
    codebook: &ApotCodebook,
) -> Result<Vec<(usize, i32)>> {
    if codes.len() != block_ids.len() || codes.len() > luts.len() {
        return Err(Error::Shape(format!(
            "{} codes, {} block ids, {} LUTs",
            codes.len(),
            block_ids.len(),
            luts.len()
        )));
    }
    let mb = codebook.magnitude_bits();
    let mut runs: Vec<(usize, i64)> = Vec::new();
    for (i, (&code, &blk)) in codes.iter().zip(block_ids).enumerate() {
        codebook.check_code(code)?;
        let v = select(luts.element(i), code, mb) as i64;
        match runs.last_mut() {
            Some((b, s)) if *b == blk => *s += v,
            _ => runs.push((blk, v)),
        }
    }
    runs.into_iter()
        .map(|(b, s)| {
            i32::try_from(s)
                .map(|s| (b, s))
                .map_err(|_| Error::Overflow(format!("block {b} partial sum {s} exceeds i32")))
        })
        .collect()
}

/// Row-level accumulation of block partial sums in arrival order.
#[derive(Debug, Clone, Copy, Default)]
pub struct RowAccumulator {
    acc: f32,
}

impl RowAccumulator {
    #[inline]
    pub fn push(&mut self, block_sum: i32, block_scale: f32) {
        self.acc += block_sum as f32 * block_scale;
    }

    /// Applies `act_scale * 2^-F` as a single multiplier.
    #[inline]
    pub fn finish(self, act_scale: f32, f_bits: u32) -> f32 {
        self.acc * dequant_multiplier(act_scale, f_bits)
    }
}

#[inline]
pub fn dequant_multiplier(act_scale: f32, f_bits: u32) -> f32 {
    act_scale * (-(f_bits as f32)).exp2()
}

/// `sum(block_sum * block_scale) * act_scale * 2^-F`.
pub fn scale_and_reduce(block_sums: &[i32], block_scales: &[f32], act_scale: f32, f_bits: u32) -> Result<f32> {
    if block_sums.len() != block_scales.len() {
        return Err(Error::Shape(format!(
            "{} block sums but {} scales",
            block_sums.len(),
            block_scales.len()
        )));
    }
    let mut acc = RowAccumulator::default();
    for (&s, &sc) in block_sums.iter().zip(block_scales) {
        acc.push(s, sc);
    }
    Ok(acc.finish(act_scale, f_bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::lut::precompute_lut;

    #[test]
    fn zero_codes() {
        let cb = ApotCodebook::w4();
        let bank = precompute_lut(&[5, -7, 100], &cb, 8).unwrap();
        let runs = pe_lane_accumulate(&bank, &[0, 0, 0], &[0, 0, 0], &cb).unwrap();
        assert_eq!(runs, vec![(0, 0)]);
    }

    #[test]
    fn single_element() {
        let cb = ApotCodebook::w4();
        let bank = precompute_lut(&[3], &cb, 8).unwrap();
        let runs = pe_lane_accumulate(&bank, &[cb.encode(false, 6)], &[4], &cb).unwrap();
        assert_eq!(runs, vec![(4, 384)]);
    }

    #[test]
    fn splits_at_block_boundaries() {
        let cb = ApotCodebook::w4();
        let bank = precompute_lut(&[1, 1, 1], &cb, 8).unwrap();
        let c = cb.encode(false, 7);
        let runs = pe_lane_accumulate(&bank, &[c, c, c], &[0, 1, 1], &cb).unwrap();
        assert_eq!(runs, vec![(0, 160), (1, 320)]);
    }

    #[test]
    fn rescale_identity() {
        let y = scale_and_reduce(&[384], &[2.0], 1.0 / 127.0, 8).unwrap();
        let expect = 3.0f64 * 0.5 * 2.0 / 127.0;
        assert!((y as f64 - expect).abs() <= 1e-7 * expect);
        assert_eq!(scale_and_reduce(&[0, 0], &[3.0, 4.0], 0.1, 8).unwrap(), 0.0);
        assert!(scale_and_reduce(&[1], &[], 1.0, 8).is_err());
    }
}
