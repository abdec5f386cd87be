//! Complex banded LU with partial pivoting, for shifted solves with the
//! block linearization operator (bandwidth 2 in the interleaved spinor
//! ordering).

use crate::Complex;

/// LU factorization of an n×n banded matrix with `kl` sub- and `ku`
/// super-diagonals.  Storage follows the usual band scheme with `kl` extra
/// fill-in rows: entry (i, j) lives at `band[j * ldab + kl + ku + i - j]`.
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    band: Vec<Complex>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    /// Factor the matrix given by `entry(i, j)` (queried only inside the
    /// band |i - j| <= max(kl, ku)).
    pub fn factor(
        n: usize,
        kl: usize,
        ku: usize,
        entry: impl Fn(usize, usize) -> Complex,
    ) -> Option<Self> {
        let ldab = 2 * kl + ku + 1;
        let mut band = vec![Complex::new(0.0, 0.0); ldab * n];
        for j in 0..n {
            let lo = j.saturating_sub(ku);
            let hi = (j + kl).min(n - 1);
            for i in lo..=hi {
                band[j * ldab + kl + ku + i - j] = entry(i, j);
            }
        }
        let mut ipiv = vec![0usize; n];

        // row index helper: (i, j) -> band[j*ldab + kl+ku+i-j], valid for
        // j-ku-kl <= ... after fill-in rows up to kl above the diagonal band
        let idx = |i: usize, j: usize| j * ldab + kl + ku + i - j;

        for k in 0..n {
            // pivot search among rows k..=min(k+kl, n-1)
            let last = (k + kl).min(n - 1);
            let mut piv = k;
            let mut piv_mag = band[idx(k, k)].norm_sqr();
            for i in k + 1..=last {
                let m = band[idx(i, k)].norm_sqr();
                if m > piv_mag {
                    piv = i;
                    piv_mag = m;
                }
            }
            if piv_mag == 0.0 {
                return None;
            }
            ipiv[k] = piv;
            // swap rows k and piv across the affected columns
            if piv != k {
                let jmax = (k + ku + kl).min(n - 1);
                for j in k..=jmax {
                    band.swap(idx(k, j), idx(piv, j));
                }
            }
            let pivot = band[idx(k, k)];
            for i in k + 1..=last {
                let factor = band[idx(i, k)] / pivot;
                band[idx(i, k)] = factor;
                let jmax = (k + ku + kl).min(n - 1);
                for j in k + 1..=jmax {
                    let upper = band[idx(k, j)];
                    let pos = idx(i, j);
                    band[pos] -= factor * upper;
                }
            }
        }
        Some(BandedLu {
            n,
            kl,
            ku,
            ldab,
            band,
            ipiv,
        })
    }

    /// Solve in place.
    pub fn solve(&self, b: &mut [Complex]) {
        assert_eq!(b.len(), self.n);
        let idx = |i: usize, j: usize| j * self.ldab + self.kl + self.ku + i - j;
        // forward
        for k in 0..self.n {
            let piv = self.ipiv[k];
            if piv != k {
                b.swap(k, piv);
            }
            let last = (k + self.kl).min(self.n - 1);
            let bk = b[k];
            for i in k + 1..=last {
                let l = self.band[idx(i, k)];
                b[i] -= l * bk;
            }
        }
        // backward
        for k in (0..self.n).rev() {
            let jmax = (k + self.ku + self.kl).min(self.n - 1);
            let mut acc = b[k];
            for j in k + 1..=jmax {
                acc -= self.band[idx(k, j)] * b[j];
            }
            b[k] = acc / self.band[idx(k, k)];
        }
    }
}
