//! Shift LUTs with pre-shifting.
//!
//! For an int8 activation `x` and a level `2^-kc + 2^-kf`, the entry is
//! `(x << (F - kc)) + (x << (F - kf))`, i.e. exactly `x * level * 2^F`
//! as long as `F` covers every exponent. Only left shifts are used.

use crate::error::{Error, Result};
use crate::quant::ApotCodebook;

/// Upper bound on the pre-shift so that `127 << F` stays far from i32 limits.
pub const MAX_F_BITS: u32 = 23;

pub fn check_preshift(codebook: &ApotCodebook, f_bits: u32) -> Result<()> {
    if f_bits < codebook.max_exponent() {
        return Err(Error::Config(format!(
            "pre-shift F={f_bits} is below basis exponent {}; shifted terms would truncate",
            codebook.max_exponent()
        )));
    }
    if f_bits > MAX_F_BITS {
        return Err(Error::Config(format!("pre-shift F={f_bits} exceeds {MAX_F_BITS}")));
    }
    Ok(())
}

/// Per-level shift amounts `F - k`; `None` for absent terms.
pub(crate) fn shift_table(codebook: &ApotCodebook, f_bits: u32) -> Vec<[Option<u32>; 2]> {
    codebook
        .shifts()
        .iter()
        .map(|&(c, f)| [c.map(|k| f_bits - k), f.map(|k| f_bits - k)])
        .collect()
}

#[inline]
fn shifted(x: i32, shifts: &[Option<u32>; 2]) -> i32 {
    shifts.iter().flatten().map(|&s| x << s).sum()
}

/// Writes the LUTs for `tile` into `out` (element-major, `levels` per element).
#[inline]
pub(crate) fn fill_luts(tile: &[i8], shifts: &[[Option<u32>; 2]], out: &mut [i32]) {
    let levels = shifts.len();
    for (x, row) in tile.iter().zip(out.chunks_exact_mut(levels)) {
        for (e, s) in row.iter_mut().zip(shifts) {
            *e = shifted(*x as i32, s);
        }
    }
}

/// The LUTs for one activation tile: `levels` signed entries per element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LutBank {
    levels: usize,
    entries: Vec<i32>,
}

impl LutBank {
    pub fn len(&self) -> usize {
        self.entries.len() / self.levels
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// The LUT of one element, indexed by magnitude.
    pub fn element(&self, e: usize) -> &[i32] {
        &self.entries[e * self.levels..(e + 1) * self.levels]
    }

    pub fn entry(&self, e: usize, mag: usize) -> i32 {
        self.entries[e * self.levels + mag]
    }
}

pub fn precompute_lut(tile: &[i8], codebook: &ApotCodebook, f_bits: u32) -> Result<LutBank> {
    check_preshift(codebook, f_bits)?;
    let shifts = shift_table(codebook, f_bits);
    let mut entries = vec![0i32; tile.len() * shifts.len()];
    fill_luts(tile, &shifts, &mut entries);
    Ok(LutBank { levels: shifts.len(), entries })
}

/// Direct shift-add evaluation of one signed weight code, without a LUT.
pub fn shift_add(x: i8, code: u8, codebook: &ApotCodebook, f_bits: u32) -> Result<i32> {
    check_preshift(codebook, f_bits)?;
    codebook.check_code(code)?;
    let (neg, mag) = codebook.decode(code);
    let (c, f) = codebook.shifts()[mag];
    let v = shifted(x as i32, &[c.map(|k| f_bits - k), f.map(|k| f_bits - k)]);
    Ok(if neg { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_for_three() {
        let bank = precompute_lut(&[3], &ApotCodebook::w4(), 8).unwrap();
        assert_eq!(bank.element(0), &[0, 48, 96, 144, 192, 288, 384, 480]);
    }

    #[test]
    fn zero_activation() {
        let bank = precompute_lut(&[0, 0], &ApotCodebook::w4(), 8).unwrap();
        assert!(bank.element(1).iter().all(|&e| e == 0));
    }

    #[test]
    fn most_negative_times_top_level() {
        let bank = precompute_lut(&[-127], &ApotCodebook::w4(), 8).unwrap();
        assert_eq!(bank.entry(0, 7), -20320);
    }

    #[test]
    fn preshift_too_small() {
        assert!(precompute_lut(&[1], &ApotCodebook::w4(), 3).is_err());
        assert!(shift_add(1, 0, &ApotCodebook::w4(), 2).is_err());
    }

    #[test]
    fn direct_path_signs() {
        let cb = ApotCodebook::w4();
        assert_eq!(shift_add(3, cb.encode(false, 6), &cb, 8).unwrap(), 384);
        assert_eq!(shift_add(3, cb.encode(true, 6), &cb, 8).unwrap(), -384);
    }
}
