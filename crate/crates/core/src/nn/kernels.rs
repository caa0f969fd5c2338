//! Raw numeric kernels on flat `f32` buffers. Shapes are validated by callers.

/// Row-major `c = op(a) * op(b) + beta * c` with `op(a)` of size `m x k` and
/// `op(b)` of size `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `x` (`C x H x W`) into columns of shape `[C*ks*ks, H*W]` for a
/// stride-1 "same" convolution with zero padding `ks / 2`.
pub(crate) fn im2col(x: &[f32], c: usize, h: usize, w: usize, ks: usize) -> Vec<f32> {
    let pad = (ks / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0f32; c * ks * ks * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..ks {
            for kx in 0..ks {
                let row = (ci * ks + ky) * ks + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = sy as usize * w;
                    let s0 = (src_row as isize + x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(&plane[s0..s0 + len]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates columns back into a `C x H x W` buffer.
pub(crate) fn col2im_add(cols: &[f32], c: usize, h: usize, w: usize, ks: usize, dx_out: &mut [f32]) {
    let pad = (ks / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx_out[ci * hw..(ci + 1) * hw];
        for ky in 0..ks {
            for kx in 0..ks {
                let row = (ci * ks + ky) * ks + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let d0 = (sy as usize * w) as isize + x_lo as isize + dx;
                    let d0 = d0 as usize;
                    let len = x_hi - x_lo;
                    let s = &src[y * w + x_lo..y * w + x_hi];
                    for (d, &v) in plane[d0..d0 + len].iter_mut().zip(s) {
                        *d += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) const GN_EPS: f32 = 1e-5;

/// Group normalisation statistics and normalised output for one sample.
pub(crate) struct GroupNormFwd {
    pub out: Vec<f32>,
    pub xhat: Vec<f32>,
    pub rstd: Vec<f32>,
}

pub(crate) fn group_norm_forward(
    x: &[f32],
    c: usize,
    hw: usize,
    groups: usize,
    gamma: &[f32],
    beta: &[f32],
) -> GroupNormFwd {
    let cpg = c / groups;
    let m = cpg * hw;
    let mut xhat = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    let mut rstd = vec![0.0f32; groups];
    for g in 0..groups {
        let span = g * m..(g + 1) * m;
        let xs = &x[span.clone()];
        let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
        let var = xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m as f64;
        let r = 1.0 / (var + GN_EPS as f64).sqrt();
        rstd[g] = r as f32;
        for (i, (&v, xh)) in xs.iter().zip(&mut xhat[span.clone()]).enumerate() {
            *xh = ((v as f64 - mean) * r) as f32;
            let ch = g * cpg + i / hw;
            out[g * m + i] = *xh * gamma[ch] + beta[ch];
        }
    }
    GroupNormFwd { out, xhat, rstd }
}

/// Backward of group norm. Accumulates into `dgamma`/`dbeta` and returns `dx`
/// when `want_dx` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward(
    dy: &[f32],
    xhat: &[f32],
    rstd: &[f32],
    gamma: &[f32],
    c: usize,
    hw: usize,
    groups: usize,
    dgamma: &mut [f32],
    dbeta: &mut [f32],
    want_dx: bool,
) -> Option<Vec<f32>> {
    for ch in 0..c {
        let span = ch * hw..(ch + 1) * hw;
        let mut sg = 0.0f64;
        let mut sb = 0.0f64;
        for (&d, &xh) in dy[span.clone()].iter().zip(&xhat[span]) {
            sg += (d * xh) as f64;
            sb += d as f64;
        }
        dgamma[ch] += sg as f32;
        dbeta[ch] += sb as f32;
    }
    if !want_dx {
        return None;
    }
    let cpg = c / groups;
    let m = cpg * hw;
    let mut dx = vec![0.0f32; dy.len()];
    for g in 0..groups {
        let mut sum_d = 0.0f64;
        let mut sum_dx = 0.0f64;
        for i in 0..m {
            let idx = g * m + i;
            let d = (dy[idx] * gamma[g * cpg + i / hw]) as f64;
            sum_d += d;
            sum_dx += d * xhat[idx] as f64;
        }
        let mean_d = sum_d / m as f64;
        let mean_dx = sum_dx / m as f64;
        let r = rstd[g] as f64;
        for i in 0..m {
            let idx = g * m + i;
            let d = (dy[idx] * gamma[g * cpg + i / hw]) as f64;
            dx[idx] = (r * (d - mean_d - xhat[idx] as f64 * mean_dx)) as f32;
        }
    }
    Some(dx)
}

pub(crate) fn avg_pool2(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = ci * h * w + 2 * y * w + 2 * xx;
                out[(ci * oh + y) * ow + xx] =
                    0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(dy: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0f32; c * h * w];
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let g = 0.25 * dy[(ci * oh + y) * ow + xx];
                let base = ci * h * w + 2 * y * w + 2 * xx;
                dx[base] = g;
                dx[base + 1] = g;
                dx[base + w] = g;
                dx[base + w + 1] = g;
            }
        }
    }
    dx
}

pub(crate) fn upsample2(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            let src = &x[(ci * h + y / 2) * w..(ci * h + y / 2 + 1) * w];
            let dst = &mut out[(ci * oh + y) * ow..(ci * oh + y + 1) * ow];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(dy: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0f32; c * h * w];
    for ci in 0..c {
        for y in 0..oh {
            let src = &dy[(ci * oh + y) * ow..(ci * oh + y + 1) * ow];
            let dst = &mut dx[(ci * h + y / 2) * w..(ci * h + y / 2 + 1) * w];
            for (xx, &g) in src.iter().enumerate() {
                dst[xx / 2] += g;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w, ks) = (2, 5, 4, 3);
        let x: Vec<f32> = (0..c * h * w).map(|i| (i as f32 * 0.37).sin()).collect();
        let cols = im2col(&x, c, h, w, ks);
        let y: Vec<f32> = (0..cols.len()).map(|i| (i as f32 * 0.11).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(&a, &b)| (a * b) as f64).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&y, c, h, w, ks, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(&a, &b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn pool_and_upsample_are_adjoint_up_to_scale() {
        let (c, h, w) = (1, 4, 4);
        let x: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let p = avg_pool2(&x, c, h, w);
        assert_eq!(p, vec![2.5, 4.5, 10.5, 12.5]);
        let u = upsample2(&p, c, 2, 2);
        assert_eq!(u.len(), 16);
        assert_eq!(upsample2_backward(&u, c, 2, 2), vec![10.0, 18.0, 42.0, 50.0]);
    }
}
