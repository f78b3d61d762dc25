//! The three per-token stages as standalone functions.

use super::exp::{ExpMode, ExpTable};
use super::SsmFloat;

/// Stage 1a: `(Abar, Bbar_u)` for one `(t, d)` pair.
pub fn discretize<F: SsmFloat>(delta: F, u: F, a_row: &[F], b_t: &[F], mode: ExpMode) -> (Vec<F>, Vec<F>) {
    let table = ExpTable::new();
    let du = delta * u;
    let abar = a_row.iter().map(|&a| table.apply(mode, delta * a)).collect();
    let bbu = b_t.iter().map(|&b| du * b).collect();
    (abar, bbu)
}

/// Stage 1b: `h_prev * Abar + Bbar_u`.
pub fn state_update<F: SsmFloat>(h_prev: &[F], abar: &[F], bbu: &[F]) -> Vec<F> {
    h_prev.iter().zip(abar).zip(bbu).map(|((&h, &a), &b)| h * a + b).collect()
}

/// In-place pairwise reduction of a power-of-two buffer.
/// Empty lanes are passed through rather than added as zero.
#[inline]
pub(crate) fn tree_sum<F: SsmFloat>(buf: &mut [Option<F>]) -> Option<F> {
    debug_assert!(buf.len().is_power_of_two());
    let mut w = buf.len();
    while w > 1 {
        w /= 2;
        for i in 0..w {
            buf[i] = match (buf[2 * i], buf[2 * i + 1]) {
                (Some(a), Some(b)) => Some(a + b),
                (a, None) => a,
                (None, b) => b,
            };
        }
    }
    buf[0]
}

/// Scratch needed by [`project_row`] for `n` states and `nb` lanes.
pub(crate) fn scratch_len(n: usize, nb: usize) -> usize {
    let tiles = n.div_ceil(nb).max(1).next_power_of_two();
    nb + tiles
}

/// `h_row . c`: each `nb`-lane tile is reduced by its own tree, then the
/// tile results by an outer tree. With `nb` a power of two the tiles are
/// aligned subtrees of one global tree, so the result does not depend on `nb`.
#[inline]
pub(crate) fn project_row<F: SsmFloat>(h_row: &[F], c: &[F], nb: usize, scratch: &mut [Option<F>]) -> F {
    let n = h_row.len();
    let tiles = n.div_ceil(nb).max(1);
    let (lanes, outer) = scratch.split_at_mut(nb);
    let outer = &mut outer[..tiles.next_power_of_two()];
    outer.fill(None);
    for (k, slot) in outer.iter_mut().take(tiles).enumerate() {
        for (l, lane) in lanes.iter_mut().enumerate() {
            let s = k * nb + l;
            *lane = (s < n).then(|| h_row[s] * c[s]);
        }
        *slot = tree_sum(lanes);
    }
    tree_sum(outer).unwrap_or_else(F::zero)
}

/// Stage 2: `y[d] = sum_n h[d, n] * c[n]` for a `[D, N]` state.
pub fn state_project<F: SsmFloat>(h: &[F], c: &[F], nb: usize) -> Vec<F> {
    assert!(nb.is_power_of_two(), "N_B must be a power of two");
    let n = c.len();
    let mut scratch = vec![None; scratch_len(n, nb)];
    h.chunks(n.max(1)).map(|row| project_row(row, c, nb, &mut scratch)).collect()
}

/// Stage 3: `(y + u * D) * z` in one pass.
pub fn fused_output<F: SsmFloat>(y: &[F], u: &[F], d_skip: &[F], z: &[F]) -> Vec<F> {
    y.iter().zip(u).zip(d_skip).zip(z).map(|(((&y, &u), &d), &z)| (y + u * d) * z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretize_examples() {
        let (a, b) = discretize(0.0f32, 3.0, &[-1.0, -2.0], &[1.0, 5.0], ExpMode::Exact);
        assert_eq!(a, vec![1.0, 1.0]);
        assert_eq!(b, vec![0.0, 0.0]);
        let (a, b) = discretize(1.0f64, 1.0, &[-1.0], &[2.0], ExpMode::Exact);
        assert_eq!(a, vec![(-1.0f64).exp()]);
        assert_eq!(b, vec![2.0]);
    }

    #[test]
    fn update_degenerate() {
        assert_eq!(state_update(&[5.0f32, 6.0], &[0.0, 0.0], &[1.0, 2.0]), vec![1.0, 2.0]);
        assert_eq!(state_update(&[5.0f32, 6.0], &[1.0, 1.0], &[0.0, 0.0]), vec![5.0, 6.0]);
    }

    #[test]
    fn projection_selects() {
        let h: Vec<f32> = (0..32).map(|i| i as f32 * 0.5).collect();
        let mut c = vec![0.0f32; 16];
        c[3] = 1.0;
        assert_eq!(state_project(&h, &c, 4), vec![1.5, 9.5]);
    }

    #[test]
    fn projection_tile_invariant() {
        let h: Vec<f32> = (0..16 * 3).map(|i| (i as f32 * 0.77).sin() * 1e3).collect();
        let c: Vec<f32> = (0..16).map(|i| (i as f32 * 1.3).cos()).collect();
        let base = state_project(&h, &c, 16);
        for nb in [1, 2, 4, 8, 32] {
            assert_eq!(state_project(&h, &c, nb), base);
        }
    }

    #[test]
    fn negative_zero_survives_padding() {
        assert_eq!(state_project(&[-0.0f32], &[1.0], 4)[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn fused_degenerate() {
        assert_eq!(fused_output(&[1.0f32, 2.0], &[9.0, 9.0], &[0.0, 0.0], &[1.0, 1.0]), vec![1.0, 2.0]);
        assert_eq!(fused_output(&[0.0f32], &[4.0], &[1.0], &[1.0]), vec![4.0]);
    }
}
