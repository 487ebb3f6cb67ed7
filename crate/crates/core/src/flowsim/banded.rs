//! Banded Cholesky factorization for the pressure Poisson system.

/// Lower-triangular factor `L` of a symmetric positive definite band matrix,
/// stored row by row: row `i` holds columns `i - bandwidth ..= i`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

/// Symmetric band matrix under construction; only the lower band is stored.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    a: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            a: vec![0.0; n * (bw + 1)],
        }
    }

    /// Adds to entry `(i, j)` with `j <= i` and `i - j <= bandwidth`.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(j <= i && i - j <= self.bw);
        self.a[i * (self.bw + 1) + (j + self.bw - i)] += value;
    }

    pub fn factor(self) -> Option<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        let mut l = self.a;
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo_j = j.saturating_sub(bw);
                let lo = lo_i.max(lo_j);
                let row_i = &l[i * stride..(i + 1) * stride];
                let row_j = &l[j * stride..(j + 1) * stride];
                let s = row_i[j + bw - i] - dot(&row_i[lo + bw - i..j + bw - i], &row_j[lo + bw - j..bw]);
                if i == j {
                    if s <= 0.0 {
                        return None;
                    }
                    l[i * stride + bw] = s.sqrt();
                } else {
                    l[i * stride + (j + bw - i)] = s / l[j * stride + bw];
                }
            }
        }
        Some(BandCholesky { n, bw, l })
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

impl BandCholesky {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * stride..(i + 1) * stride];
            let s = b[i] - dot(&row[lo + bw - i..bw], &b[lo..i]);
            b[i] = s / row[bw];
        }
        for i in (0..n).rev() {
            let row = &self.l[i * stride..(i + 1) * stride];
            let xi = b[i] / row[bw];
            b[i] = xi;
            let lo = i.saturating_sub(bw);
            for (bk, lk) in b[lo..i].iter_mut().zip(&row[lo + bw - i..bw]) {
                *bk -= lk * xi;
            }
        }
    }
}
