//! Same-padded stride-1 2D convolution via banded im2col + GEMM.

use std::ops::Range;

use crate::float::Float;

/// Unfolds output rows `rows` of one `(c, h, w)` image into a
/// `(c * k * k, rows.len() * w)` column matrix.
pub(crate) fn im2col<F: Float>(img: &[F], c: usize, h: usize, w: usize, k: usize, rows: Range<usize>, col: &mut [F]) {
    let p = k / 2;
    let hw = h * w;
    let n = rows.len() * w;
    debug_assert_eq!(col.len(), c * k * k * n);
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                // input column x + kx - p must lie in [0, w)
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                for (i, y) in rows.clone().enumerate() {
                    let out = &mut dst[i * w..(i + 1) * w];
                    let sy = y as isize + ky as isize - p as isize;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out.fill(F::ZERO);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x_lo].fill(F::ZERO);
                    out[x_hi..].fill(F::ZERO);
                    let s0 = x_lo + kx - p;
                    out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a column matrix for output rows `rows`
/// back onto the image, accumulating.
pub(crate) fn col2im_add<F: Float>(col: &[F], c: usize, h: usize, w: usize, k: usize, rows: Range<usize>, img: &mut [F]) {
    let p = k / 2;
    let hw = h * w;
    let n = rows.len() * w;
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * n..(row + 1) * n];
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for (i, y) in rows.clone().enumerate() {
                    let sy = y as isize + ky as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = x_lo + kx - p;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[i * w + x_lo..i * w + x_hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Column-matrix budget per band, in elements. Unfolding a whole 64x64 image
/// with many input channels overflows the cache and halves GEMM throughput.
const BAND_ELEMENTS: usize = 1 << 17;

/// Fewer output pixels than this per band starve the GEMM kernel.
const BAND_MIN_PIXELS: usize = 256;

/// Output-row bands whose column matrices stay within [`BAND_ELEMENTS`] where
/// possible, without going below [`BAND_MIN_PIXELS`].
fn bands(ck: usize, h: usize, w: usize) -> impl Iterator<Item = Range<usize>> {
    let step = (BAND_ELEMENTS / (ck * w)).max(BAND_MIN_PIXELS.div_ceil(w)).clamp(1, h);
    (0..h).step_by(step).map(move |y0| y0..(y0 + step).min(h))
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

pub(crate) fn forward<F: Float>(x: &[F], weight: &[F], bias: &[F], d: &ConvDims) -> Vec<F> {
    let hw = d.h * d.w;
    let ck = d.cin * d.k * d.k;
    let mut out = vec![F::ZERO; d.n * d.cout * hw];
    let mut col = Vec::new();
    for b in 0..d.n {
        let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
        let ob = &mut out[b * d.cout * hw..(b + 1) * d.cout * hw];
        for (co, chunk) in ob.chunks_exact_mut(hw).enumerate() {
            chunk.fill(bias[co]);
        }
        if d.k == 1 {
            // 1x1: the image is already its own column matrix
            unsafe {
                F::gemm(
                    d.cout, ck, hw, F::ONE, weight.as_ptr(), ck as isize, 1, xb.as_ptr(), hw as isize, 1, F::ONE,
                    ob.as_mut_ptr(), hw as isize, 1,
                );
            }
            continue;
        }
        for rows in bands(ck, d.h, d.w) {
            let n = rows.len() * d.w;
            col.resize(ck * n, F::ZERO);
            im2col(xb, d.cin, d.h, d.w, d.k, rows.clone(), &mut col);
            unsafe {
                F::gemm(
                    d.cout, ck, n, F::ONE, weight.as_ptr(), ck as isize, 1, col.as_ptr(), n as isize, 1, F::ONE,
                    ob[rows.start * d.w..].as_mut_ptr(), hw as isize, 1,
                );
            }
        }
    }
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when not needed.
pub(crate) fn backward<F: Float>(
    x: &[F],
    weight: &[F],
    grad_out: &[F],
    d: &ConvDims,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>, Option<Vec<F>>) {
    let hw = d.h * d.w;
    let ck = d.cin * d.k * d.k;
    let mut dx = need_dx.then(|| vec![F::ZERO; d.n * d.cin * hw]);
    let mut dw = need_dw.then(|| vec![F::ZERO; d.cout * ck]);
    let mut db = need_dw.then(|| vec![F::ZERO; d.cout]);
    let mut col = Vec::new();
    for b in 0..d.n {
        let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
        let gb = &grad_out[b * d.cout * hw..(b + 1) * d.cout * hw];
        if let Some(db) = db.as_mut() {
            for (co, g) in gb.chunks_exact(hw).enumerate() {
                let mut s = F::ZERO;
                for v in g {
                    s += *v;
                }
                db[co] += s;
            }
        }
        if d.k == 1 {
            if let Some(dw) = dw.as_mut() {
                // dW += dY * x^T
                unsafe {
                    F::gemm(
                        d.cout, hw, ck, F::ONE, gb.as_ptr(), hw as isize, 1, xb.as_ptr(), 1, hw as isize, F::ONE,
                        dw.as_mut_ptr(), ck as isize, 1,
                    );
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * d.cin * hw..(b + 1) * d.cin * hw];
                unsafe {
                    F::gemm(
                        ck, d.cout, hw, F::ONE, weight.as_ptr(), 1, ck as isize, gb.as_ptr(), hw as isize, 1, F::ONE,
                        dxb.as_mut_ptr(), hw as isize, 1,
                    );
                }
            }
            continue;
        }
        for rows in bands(ck, d.h, d.w) {
            let n = rows.len() * d.w;
            let gband = &gb[rows.start * d.w..];
            col.resize(ck * n, F::ZERO);
            if let Some(dw) = dw.as_mut() {
                im2col(xb, d.cin, d.h, d.w, d.k, rows.clone(), &mut col);
                // dW += dY * col^T
                unsafe {
                    F::gemm(
                        d.cout, n, ck, F::ONE, gband.as_ptr(), hw as isize, 1, col.as_ptr(), 1, n as isize, F::ONE,
                        dw.as_mut_ptr(), ck as isize, 1,
                    );
                }
            }
            if let Some(dx) = dx.as_mut() {
                // dcol = W^T * dY, then fold back
                unsafe {
                    F::gemm(
                        ck, d.cout, n, F::ONE, weight.as_ptr(), 1, ck as isize, gband.as_ptr(), hw as isize, 1, F::ZERO,
                        col.as_mut_ptr(), n as isize, 1,
                    );
                }
                col2im_add(&col, d.cin, d.h, d.w, d.k, rows.clone(), &mut dx[b * d.cin * hw..(b + 1) * d.cin * hw]);
            }
        }
    }
    (dx, dw, db)
}
