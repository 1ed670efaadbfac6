//! Banded LU factorization with partial pivoting for complex systems.
//!
//! Storage is position based: row `i` keeps columns `i - kl ..= i + kl + ku`
//! (the upper part widens by `kl` through row interchanges). Multipliers are
//! kept apart from U and interchanges are applied to the right-hand side step
//! by step, as in LAPACK's `gbtrf`/`gbtrs`.

use crate::{Error, Result, C64};

pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<C64>,
    width: usize,
    mult: Vec<C64>,
    pivots: Vec<usize>,
}

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

impl BandedLu {
    /// Factorizes the matrix whose row `i` nonzeros are produced by
    /// `row_entries(i, push)`.
    pub fn factor<F>(n: usize, kl: usize, ku: usize, mut row_entries: F) -> Result<Self>
    where
        F: FnMut(usize, &mut dyn FnMut(usize, C64)),
    {
        let width = 2 * kl + ku + 1;
        let mut ab = vec![ZERO; n * width];
        for i in 0..n {
            let row = &mut ab[i * width..(i + 1) * width];
            row_entries(i, &mut |j, v| {
                let off = j as isize - i as isize + kl as isize;
                assert!(off >= 0 && (off as usize) < kl + ku + 1, "entry ({i}, {j}) outside band");
                row[off as usize] += v;
            });
        }
        let idx = |i: usize, j: usize| i * width + (j + kl - i);
        let mut mult = vec![ZERO; n * kl.max(1)];
        let mut pivots = vec![0usize; n];
        for c in 0..n {
            let last = (c + kl).min(n - 1);
            let mut piv = c;
            let mut best = -1.0;
            for r in c..=last {
                let v = ab[idx(r, c)].norm();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Solver {
                    freq_hz: f64::NAN,
                    residual: f64::INFINITY,
                    reason: format!("zero pivot in column {c}"),
                });
            }
            pivots[c] = piv;
            let col_end = (c + kl + ku).min(n - 1);
            if piv != c {
                for j in c..=col_end {
                    ab.swap(idx(c, j), idx(piv, j));
                }
            }
            let pivot = ab[idx(c, c)];
            for r in c + 1..=last {
                let factor = ab[idx(r, c)] / pivot;
                mult[c * kl + (r - c - 1)] = factor;
                ab[idx(r, c)] = ZERO;
                if factor == ZERO {
                    continue;
                }
                for j in c + 1..=col_end {
                    let pv = ab[idx(c, j)];
                    if pv != ZERO {
                        ab[idx(r, j)] -= factor * pv;
                    }
                }
            }
        }
        Ok(BandedLu { n, kl, ku, ab, width, mult, pivots })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let (n, kl, ku, width) = (self.n, self.kl, self.ku, self.width);
        let mut x = b.to_vec();
        for c in 0..n {
            x.swap(c, self.pivots[c]);
            let xc = x[c];
            for r in c + 1..=(c + kl).min(n - 1) {
                x[r] -= self.mult[c * kl + (r - c - 1)] * xc;
            }
        }
        for i in (0..n).rev() {
            let row = &self.ab[i * width..(i + 1) * width];
            let mut acc = x[i];
            for j in i + 1..=(i + kl + ku).min(n - 1) {
                acc -= row[j + kl - i] * x[j];
            }
            x[i] = acc / row[kl];
        }
        x
    }
}
