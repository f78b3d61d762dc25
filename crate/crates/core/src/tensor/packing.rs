//! Packed weight blobs.
//!
//! Codes are written into 256-bit words in the order the linear engine
//! consumes them: output-row tiles, then input-column tiles, then the input
//! index inside the tile, then the output index inside the tile. Dimensions
//! are zero-padded up to a multiple of the tile edge with code 0 (level 0,
//! positive sign), so the final word is zero-filled as well.
//!
//! 4-bit codes are stored 64 per word, low nibble first. 8-bit lanes (32 per
//! word) hold codes of wider codebooks used by design-space sweeps.

use super::{Container, Tensor};
use crate::error::{Error, Result};

pub const WORD_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedLayout {
    pub tile: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub code_bits: u8,
}

impl PackedLayout {
    pub fn new(tile: usize, out_dim: usize, in_dim: usize, code_bits: u8) -> Result<Self> {
        if tile == 0 {
            return Err(Error::Config("tile size must be >= 1".into()));
        }
        if code_bits != 4 && code_bits != 8 {
            return Err(Error::Config(format!("unsupported code width {code_bits}")));
        }
        Ok(Self { tile, out_dim, in_dim, code_bits })
    }

    pub fn row_tiles(&self) -> usize {
        self.out_dim.div_ceil(self.tile)
    }

    pub fn col_tiles(&self) -> usize {
        self.in_dim.div_ceil(self.tile)
    }

    pub fn codes_per_word(&self) -> usize {
        WORD_BYTES * 8 / self.code_bits as usize
    }

    pub fn padded_codes(&self) -> usize {
        self.row_tiles() * self.col_tiles() * self.tile * self.tile
    }

    pub fn word_count(&self) -> usize {
        self.padded_codes().div_ceil(self.codes_per_word())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWeightBlob {
    pub layout: PackedLayout,
    pub words: Vec<[u8; WORD_BYTES]>,
}

/// Visits `(out, in)` coordinates of the padded matrix in blob order.
fn for_each_position(layout: &PackedLayout, mut f: impl FnMut(usize, usize)) {
    let t = layout.tile;
    for r in 0..layout.row_tiles() {
        for c in 0..layout.col_tiles() {
            for i in 0..t {
                for o in 0..t {
                    f(r * t + o, c * t + i);
                }
            }
        }
    }
}

/// Packs a row-major `[out_dim, in_dim]` code tensor (`U4` or `U8`).
pub fn pack_weights(codes: &Tensor, tile: usize) -> Result<PackedWeightBlob> {
    let shape = codes.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("weight codes must be rank 2, got {shape:?}")));
    }
    let code_bits = match codes.dtype() {
        super::DType::U4 => 4,
        super::DType::U8 => 8,
        d => return Err(Error::Format(format!("cannot pack {d:?} codes"))),
    };
    pack_codes(&codes.codes()?, shape[0], shape[1], tile, code_bits)
}

pub fn pack_codes(codes: &[u8], out_dim: usize, in_dim: usize, tile: usize, code_bits: u8) -> Result<PackedWeightBlob> {
    let layout = PackedLayout::new(tile, out_dim, in_dim, code_bits)?;
    if codes.len() != out_dim * in_dim {
        return Err(Error::Shape(format!("{} codes for a {out_dim}x{in_dim} matrix", codes.len())));
    }
    if code_bits == 4 && codes.iter().any(|&c| c > 0x0f) {
        return Err(Error::Format("code does not fit in 4 bits".into()));
    }
    let mut words = vec![[0u8; WORD_BYTES]; layout.word_count()];
    let per_word = layout.codes_per_word();
    let mut k = 0usize;
    for_each_position(&layout, |o, i| {
        let code = if o < out_dim && i < in_dim { codes[o * in_dim + i] } else { 0 };
        let word = &mut words[k / per_word];
        let lane = k % per_word;
        if code_bits == 4 {
            word[lane / 2] |= code << (4 * (lane % 2));
        } else {
            word[lane] = code;
        }
        k += 1;
    });
    Ok(PackedWeightBlob { layout, words })
}

impl PackedWeightBlob {
    /// Codes in blob order, reading words strictly sequentially.
    pub fn stream(&self) -> impl Iterator<Item = u8> + '_ {
        let bits = self.layout.code_bits;
        let total = self.layout.padded_codes();
        self.words
            .iter()
            .flat_map(move |w| {
                let lanes: Vec<u8> = if bits == 4 {
                    w.iter().flat_map(|b| [b & 0x0f, b >> 4]).collect()
                } else {
                    w.to_vec()
                };
                lanes.into_iter()
            })
            .take(total)
    }

    pub fn to_tensors(&self) -> Result<(Tensor, Tensor)> {
        let words = Tensor::u8(&[self.words.len(), WORD_BYTES], self.words.concat())?;
        let l = &self.layout;
        let layout = Tensor::i32(
            &[4],
            vec![l.tile as i32, l.out_dim as i32, l.in_dim as i32, l.code_bits as i32],
        )?;
        Ok((words, layout))
    }

    pub fn from_tensors(words: &Tensor, layout: &Tensor) -> Result<Self> {
        let l = layout.as_i32()?;
        if l.len() != 4 || l.iter().any(|&v| v < 0) {
            return Err(Error::Format(format!("bad layout descriptor {l:?}")));
        }
        let layout = PackedLayout::new(l[0] as usize, l[1] as usize, l[2] as usize, l[3] as u8)?;
        let bytes = words.as_u8()?;
        if bytes.len() != layout.word_count() * WORD_BYTES {
            return Err(Error::Format(format!(
                "blob holds {} bytes, layout {layout:?} needs {}",
                bytes.len(),
                layout.word_count() * WORD_BYTES
            )));
        }
        let words = bytes.chunks_exact(WORD_BYTES).map(|c| c.try_into().unwrap()).collect();
        Ok(Self { layout, words })
    }

    /// Stores the blob as `{name}.words` and `{name}.layout`.
    pub fn write_into(&self, container: &mut Container, name: &str) -> Result<()> {
        let (words, layout) = self.to_tensors()?;
        container.insert(format!("{name}.words"), words)?;
        container.insert(format!("{name}.layout"), layout)
    }

    pub fn read_from(container: &Container, name: &str) -> Result<Self> {
        Self::from_tensors(
            container.require(&format!("{name}.words"))?,
            container.require(&format!("{name}.layout"))?,
        )
    }
}

/// Inverse of [`pack_codes`] on the unpadded region; row-major codes.
pub fn unpack_weights(blob: &PackedWeightBlob) -> Vec<u8> {
    let l = blob.layout;
    let mut out = vec![0u8; l.out_dim * l.in_dim];
    let mut stream = blob.stream();
    for_each_position(&l, |o, i| {
        let code = stream.next().unwrap_or(0);
        if o < l.out_dim && i < l.in_dim {
            out[o * l.in_dim + i] = code;
        }
    });
    out
}
