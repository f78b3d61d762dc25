//! Associative-scan formulation of the recurrence.
//!
//! Each `(d, n)` channel is a sequence of affine maps `h -> a * h + b`;
//! composing them is associative, `(a1, b1) . (a2, b2) = (a1 a2, b1 a2 + b2)`,
//! so an inclusive prefix scan yields every `h_t`. This traverses channel-major
//! and needs the whole sequence at once, which is why the engine does not use
//! it; it serves as the correctness oracle.

use super::engine::SsmParams;
use super::SsmFloat;
use crate::error::Result;

/// Hillis-Steele inclusive scan: `log2(L)` rounds of pair combination.
pub(crate) fn inclusive_scan<F: SsmFloat>(pairs: &mut Vec<(F, F)>) {
    let len = pairs.len();
    let mut step = 1;
    while step < len {
        let prev = pairs.clone();
        for t in step..len {
            let (a1, b1) = prev[t - step];
            let (a2, b2) = prev[t];
            pairs[t] = (a1 * a2, b1 * a2 + b2);
        }
        step *= 2;
    }
}

/// Output of the SSM computed through per-channel prefix scans, exact `exp`.
pub fn ssm_scan_oracle<F: SsmFloat>(p: &SsmParams<F>) -> Result<Vec<F>> {
    p.validate()?;
    let (l, dd, n) = (p.len, p.dim, p.state);
    let mut y = vec![F::zero(); l * dd];
    let mut pairs = Vec::with_capacity(l);
    for d in 0..dd {
        for s in 0..n {
            pairs.clear();
            for t in 0..l {
                let delta = p.delta[t * dd + d];
                let a = (delta * p.a[d * n + s]).exp();
                let b = delta * p.u[t * dd + d] * p.b[t * n + s];
                pairs.push((a, b));
            }
            inclusive_scan(&mut pairs);
            for t in 0..l {
                y[t * dd + d] = y[t * dd + d] + pairs[t].1 * p.c[t * n + s];
            }
        }
    }
    for t in 0..l {
        for d in 0..dd {
            let i = t * dd + d;
            y[i] = (y[i] + p.u[i] * p.d_skip[d]) * p.z[i];
        }
    }
    Ok(y)
}
