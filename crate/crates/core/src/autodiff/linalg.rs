//! Small dense kernels for matrix-vector work.

/// `y += A x` for row-major `A` (`rows × cols`).
pub(crate) fn matvec_acc(a: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (yi, row) in y.iter_mut().zip(a.chunks_exact(cols)) {
        *yi += row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
    }
}

/// `y += Aᵀ x` for row-major `A` (`rows × cols`).
pub(crate) fn matvec_t_acc(a: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = y.len();
    for (xi, row) in x.iter().zip(a.chunks_exact(cols)) {
        if *xi != 0.0 {
            for (yj, p) in y.iter_mut().zip(row) {
                *yj += xi * p;
            }
        }
    }
}

/// `A += x yᵀ`.
pub(crate) fn outer_acc(a: &mut [f64], x: &[f64], y: &[f64]) {
    let cols = y.len();
    for (xi, row) in x.iter().zip(a.chunks_exact_mut(cols)) {
        if *xi != 0.0 {
            for (aj, yj) in row.iter_mut().zip(y) {
                *aj += xi * yj;
            }
        }
    }
}
