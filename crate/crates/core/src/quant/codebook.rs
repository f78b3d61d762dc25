use crate::error::{Error, Result};

/// Largest supported power-of-two exponent `k` (term value `2^-k`).
pub const MAX_EXPONENT: u32 = 24;

/// Additive power-of-two level set `{c + f | c in coarse, f in fine}`, where
/// each basis holds `0` plus one `2^-k` term per configured exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct ApotCodebook {
    coarse: Vec<u32>,
    fine: Vec<u32>,
    levels: Vec<f32>,
    /// `(coarse k, fine k)` per level; `None` is the zero term.
    shifts: Vec<(Option<u32>, Option<u32>)>,
    magnitude_bits: u32,
}

fn term(k: Option<u32>) -> f64 {
    k.map_or(0.0, |k| (-(k as f64)).exp2())
}

/// Builds the ascending level set for the given coarse and fine exponents.
pub fn build_codebook(coarse_exponents: &[u32], fine_exponents: &[u32]) -> Result<ApotCodebook> {
    for &k in coarse_exponents.iter().chain(fine_exponents) {
        if !(1..=MAX_EXPONENT).contains(&k) {
            return Err(Error::Config(format!("basis exponent {k} outside 1..={MAX_EXPONENT}")));
        }
    }
    let coarse: Vec<Option<u32>> =
        std::iter::once(None).chain(coarse_exponents.iter().map(|&k| Some(k))).collect();
    let fine: Vec<Option<u32>> =
        std::iter::once(None).chain(fine_exponents.iter().map(|&k| Some(k))).collect();

    let mut entries: Vec<(f64, (Option<u32>, Option<u32>))> = Vec::new();
    for &c in &coarse {
        for &f in &fine {
            entries.push((term(c) + term(f), (c, f)));
        }
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Config(format!(
            "bases produce level {} twice ({:?} and {:?}); encoding would be ambiguous",
            w[0].0, w[0].1, w[1].1
        )));
    }
    let n = entries.len();
    if !n.is_power_of_two() {
        return Err(Error::Config(format!("{n} levels cannot be indexed by a whole number of bits")));
    }
    Ok(ApotCodebook {
        coarse: coarse_exponents.to_vec(),
        fine: fine_exponents.to_vec(),
        levels: entries.iter().map(|e| e.0 as f32).collect(),
        shifts: entries.iter().map(|e| e.1).collect(),
        magnitude_bits: n.trailing_zeros(),
    })
}

impl ApotCodebook {
    /// The 4-bit codebook: coarse `{2^-1, 2^-2, 2^-4}`, fine `{2^-3}`.
    pub fn w4() -> Self {
        build_codebook(&[1, 2, 4], &[3]).expect("valid built-in basis")
    }

    /// Default basis sets for a total weight width (sign + magnitude bits).
    ///
    /// Only the 4-bit basis is the reference design; the 3- and 5-bit sets are
    /// local choices for sweeps and nest with it (W3 levels are a subset of
    /// W4 levels, which are a subset of W5 levels).
    pub fn default_for_bits(bits: u32) -> Result<Self> {
        match bits {
            3 => build_codebook(&[1, 2, 3], &[]),
            4 => Ok(Self::w4()),
            5 => build_codebook(&[1, 2, 4, 5, 6, 7, 8], &[3]),
            b => Err(Error::Config(format!("no default APoT basis for {b}-bit weights"))),
        }
    }

    pub fn coarse_exponents(&self) -> &[u32] {
        &self.coarse
    }

    pub fn fine_exponents(&self) -> &[u32] {
        &self.fine
    }

    pub fn levels(&self) -> &[f32] {
        &self.levels
    }

    pub fn shifts(&self) -> &[(Option<u32>, Option<u32>)] {
        &self.shifts
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn magnitude_bits(&self) -> u32 {
        self.magnitude_bits
    }

    /// Sign bit plus magnitude index.
    pub fn code_bits(&self) -> u32 {
        self.magnitude_bits + 1
    }

    pub fn max_exponent(&self) -> u32 {
        self.coarse.iter().chain(&self.fine).copied().max().unwrap_or(0)
    }

    pub fn max_level(&self) -> f32 {
        *self.levels.last().unwrap_or(&0.0)
    }

    #[inline]
    pub fn encode(&self, negative: bool, mag: usize) -> u8 {
        ((negative as u8) << self.magnitude_bits) | mag as u8
    }

    /// Splits a code into `(negative, magnitude index)`.
    #[inline]
    pub fn decode(&self, code: u8) -> (bool, usize) {
        let mask = (1u8 << self.magnitude_bits) - 1;
        ((code >> self.magnitude_bits) & 1 == 1, (code & mask) as usize)
    }

    pub fn check_code(&self, code: u8) -> Result<()> {
        if (code as u32) >> self.code_bits() != 0 {
            return Err(Error::Config(format!("code {code} out of range for {}-bit weights", self.code_bits())));
        }
        Ok(())
    }

    /// `level[mag] * 2^f_bits` as an exact integer.
    pub fn level_int(&self, mag: usize, f_bits: u32) -> i64 {
        let (c, f) = self.shifts[mag];
        [c, f].iter().flatten().map(|&k| 1i64 << (f_bits - k)).sum()
    }

    /// Signed dequantized level for a code, without scale.
    pub fn signed_level(&self, code: u8) -> f32 {
        let (neg, mag) = self.decode(code);
        if neg {
            -self.levels[mag]
        } else {
            self.levels[mag]
        }
    }

    /// Index of the level nearest to `target`, ties toward the smaller level.
    /// `level_value` maps an index to the quantity compared against `target`.
    pub(crate) fn nearest(&self, target: f64, level_value: impl Fn(f32) -> f64) -> usize {
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (m, &lvl) in self.levels.iter().enumerate() {
            let d = (level_value(lvl) - target).abs();
            if d < best_dist {
                best = m;
                best_dist = d;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_bit_levels() {
        let cb = build_codebook(&[1, 2, 4], &[3]).unwrap();
        assert_eq!(cb.levels(), &[0.0, 0.0625, 0.125, 0.1875, 0.25, 0.375, 0.5, 0.625]);
        assert_eq!(cb.magnitude_bits(), 3);
        assert_eq!(cb.shifts()[7], (Some(1), Some(3)));
        assert_eq!(cb.shifts()[1], (Some(4), None));
    }

    #[test]
    fn empty_bases_give_single_zero_level() {
        let cb = build_codebook(&[], &[]).unwrap();
        assert_eq!(cb.levels(), &[0.0]);
        assert_eq!(cb.magnitude_bits(), 0);
    }

    #[test]
    fn pure_power_of_two_baseline() {
        let cb = build_codebook(&[1, 2, 3, 4, 5, 6, 7], &[]).unwrap();
        let mut expect = vec![0.0f32];
        expect.extend((1..=7).rev().map(|k| (0.5f32).powi(k)));
        assert_eq!(cb.levels(), expect.as_slice());
    }

    #[test]
    fn colliding_bases_rejected() {
        // 2^-2 appears in both bases: 0 + 2^-2 == 2^-2 + 0
        assert!(build_codebook(&[1, 2], &[2]).is_err());
        // six levels are not addressable by whole bits
        assert!(build_codebook(&[1, 2], &[3]).is_err());
        assert!(build_codebook(&[0], &[]).is_err());
    }

    #[test]
    fn sweep_defaults_nest() {
        let w3 = ApotCodebook::default_for_bits(3).unwrap();
        let w4 = ApotCodebook::default_for_bits(4).unwrap();
        let w5 = ApotCodebook::default_for_bits(5).unwrap();
        assert_eq!((w3.len(), w4.len(), w5.len()), (4, 8, 16));
        assert!(w3.levels().iter().all(|l| w4.levels().contains(l)));
        assert!(w4.levels().iter().all(|l| w5.levels().contains(l)));
    }

    #[test]
    fn level_ints_are_exact() {
        let cb = ApotCodebook::w4();
        let ints: Vec<i64> = (0..8).map(|m| cb.level_int(m, 8)).collect();
        assert_eq!(ints, vec![0, 16, 32, 48, 64, 96, 128, 160]);
    }
}
