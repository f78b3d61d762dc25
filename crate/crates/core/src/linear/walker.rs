//! Tile iteration order of the linear engine.

use super::pe::PeControlPacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileCoord {
    pub row_tile: usize,
    pub col_tile: usize,
}

/// Walks `T x T` weight tiles: output-row tiles outer, input-column tiles inner.
/// Inside a tile, elements are visited input index first, output index second.
#[derive(Debug, Clone, Copy)]
pub struct TileWalker {
    pub tile: usize,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl TileWalker {
    pub fn new(tile: usize, out_dim: usize, in_dim: usize) -> Self {
        Self { tile, out_dim, in_dim }
    }

    pub fn row_tiles(&self) -> usize {
        self.out_dim.div_ceil(self.tile)
    }

    pub fn col_tiles(&self) -> usize {
        self.in_dim.div_ceil(self.tile)
    }

    pub fn tile_count(&self) -> usize {
        self.row_tiles() * self.col_tiles()
    }

    pub fn tiles(&self) -> impl Iterator<Item = TileCoord> + '_ {
        let cols = self.col_tiles();
        (0..self.row_tiles())
            .flat_map(move |r| (0..cols).map(move |c| TileCoord { row_tile: r, col_tile: c }))
    }

    /// Padded `(out, in)` coordinates of one tile in streaming order.
    pub fn elements(&self, t: TileCoord) -> impl Iterator<Item = (usize, usize)> {
        let n = self.tile;
        (0..n).flat_map(move |i| (0..n).map(move |o| (t.row_tile * n + o, t.col_tile * n + i)))
    }

    /// Control packet accompanying tile `t` for a weight block size `block`.
    pub fn packet(&self, t: TileCoord, block: usize) -> PeControlPacket {
        PeControlPacket {
            row_tile: t.row_tile,
            col_tile: t.col_tile,
            group: t.col_tile * self.tile / block.max(1),
            reset: t.col_tile == 0,
            flush: t.col_tile + 1 == self.col_tiles(),
        }
    }
}
