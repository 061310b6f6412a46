//! Stride-1 1D convolution kernels (cross-correlation, zero padding).
//!
//! The convolution is computed as one GEMM per kernel tap over a strided
//! view of the padded input, so no im2col buffer is materialized.

use matrixmultiply::dgemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub width: usize,
    pub pad_left: usize,
}

impl ConvDims {
    fn padded_len(&self) -> usize {
        self.len + self.width - 1
    }
}

pub(crate) fn pad_input(x: &[f64], d: ConvDims) -> Vec<f64> {
    let lp = d.padded_len();
    let mut xp = vec![0.0; d.c_in * lp];
    for c in 0..d.c_in {
        xp[c * lp + d.pad_left..c * lp + d.pad_left + d.len]
            .copy_from_slice(&x[c * d.len..(c + 1) * d.len]);
    }
    xp
}

/// `out[o, j] = bias[o] + Σ_{c,w} xp[c, j + w] · k[o, c, w]`.
pub(crate) fn forward(xp: &[f64], k: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let lp = d.padded_len();
    let mut out = vec![0.0; d.c_out * d.len];
    for (o, row) in out.chunks_exact_mut(d.len).enumerate() {
        row.fill(bias[o]);
    }
    let kw = d.c_in * d.width;
    for w in 0..d.width {
        // outᵀ (len × c_out) += xpᵀ[w..] (len × c_in) · k[.., .., w]ᵀ (c_in × c_out)
        unsafe {
            dgemm(
                d.len,
                d.c_in,
                d.c_out,
                1.0,
                xp.as_ptr().add(w),
                1,
                lp as isize,
                k.as_ptr().add(w),
                d.width as isize,
                kw as isize,
                1.0,
                out.as_mut_ptr(),
                1,
                d.len as isize,
            );
        }
    }
    out
}

/// Accumulates kernel, bias and (optionally) input gradients.
pub(crate) fn backward(
    xp: &[f64],
    k: &[f64],
    dout: &[f64],
    d: ConvDims,
    dk: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    let lp = d.padded_len();
    let kw = d.c_in * d.width;
    if let Some(dk) = dk {
        for w in 0..d.width {
            // dk[.., .., w]ᵀ (c_in × c_out) += xp[w..] (c_in × len) · doutᵀ (len × c_out)
            unsafe {
                dgemm(
                    d.c_in,
                    d.len,
                    d.c_out,
                    1.0,
                    xp.as_ptr().add(w),
                    lp as isize,
                    1,
                    dout.as_ptr(),
                    1,
                    d.len as isize,
                    1.0,
                    dk.as_mut_ptr().add(w),
                    d.width as isize,
                    kw as isize,
                );
            }
        }
    }
    if let Some(db) = dbias {
        for (o, row) in dout.chunks_exact(d.len).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
    }
    if let Some(dx) = dx {
        let mut dxp = vec![0.0; d.c_in * lp];
        for w in 0..d.width {
            // dxp[.., w..w+len] (c_in × len) += k[.., .., w]ᵀ (c_in × c_out) · dout (c_out × len)
            unsafe {
                dgemm(
                    d.c_in,
                    d.c_out,
                    d.len,
                    1.0,
                    k.as_ptr().add(w),
                    d.width as isize,
                    kw as isize,
                    dout.as_ptr(),
                    d.len as isize,
                    1,
                    1.0,
                    dxp.as_mut_ptr().add(w),
                    lp as isize,
                    1,
                );
            }
        }
        for c in 0..d.c_in {
            for j in 0..d.len {
                dx[c * d.len + j] += dxp[c * lp + d.pad_left + j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct quadruple loop used as the reference.
    fn naive(x: &[f64], k: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
        let mut out = vec![0.0; d.c_out * d.len];
        for o in 0..d.c_out {
            for j in 0..d.len {
                let mut acc = bias[o];
                for c in 0..d.c_in {
                    for w in 0..d.width {
                        let src = j as isize - d.pad_left as isize + w as isize;
                        if (0..d.len as isize).contains(&src) {
                            acc += x[c * d.len + src as usize] * k[(o * d.c_in + c) * d.width + w];
                        }
                    }
                }
                out[o * d.len + j] = acc;
            }
        }
        out
    }

    #[test]
    fn gemm_formulation_matches_direct_loops() {
        let d = ConvDims {
            c_in: 3,
            c_out: 4,
            len: 11,
            width: 5,
            pad_left: 2,
        };
        let x: Vec<f64> = (0..33).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let k: Vec<f64> = (0..60).map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5).collect();
        let b = [0.1, -0.2, 0.3, 0.0];
        let got = forward(&pad_input(&x, d), &k, &b, d);
        let want = naive(&x, &k, &b, d);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}
