use crate::diff::Real;

/// `y[b] = x[b]·W + bias` for a batch of row vectors; `W` is `(n_in, n_out)`
/// row-major.
pub(crate) fn dense_forward<T: Real>(w: &[T], bias: &[T], x: &[T], n_in: usize, n_out: usize, y: &mut [T]) {
    let batch = x.len() / n_in;
    for b in 0..batch {
        let xr = &x[b * n_in..(b + 1) * n_in];
        let yr = &mut y[b * n_out..(b + 1) * n_out];
        yr.copy_from_slice(bias);
        for (i, &xv) in xr.iter().enumerate() {
            if xv.is_zero() {
                continue;
            }
            let wr = &w[i * n_out..(i + 1) * n_out];
            for (yo, &wv) in yr.iter_mut().zip(wr) {
                *yo += xv * wv;
            }
        }
    }
}

/// Accumulates `dW`, `dbias` and optionally `dx` for [`dense_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Real>(
    w: &[T],
    x: &[T],
    dy: &[T],
    n_in: usize,
    n_out: usize,
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let batch = x.len() / n_in;
    for b in 0..batch {
        let xr = &x[b * n_in..(b + 1) * n_in];
        let dyr = &dy[b * n_out..(b + 1) * n_out];
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        for i in 0..n_in {
            let xv = xr[i];
            if !xv.is_zero() {
                let dwr = &mut dw[i * n_out..(i + 1) * n_out];
                for (d, &g) in dwr.iter_mut().zip(dyr) {
                    *d += xv * g;
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                let wr = &w[i * n_out..(i + 1) * n_out];
                let mut acc = T::zero();
                for (&wv, &g) in wr.iter().zip(dyr) {
                    acc += wv * g;
                }
                dx[b * n_in + i] += acc;
            }
        }
    }
}

/// Zero the upstream gradient where the rectifier was inactive.
pub(crate) fn relu_mask<T: Real>(activated: &[T], grad: &mut [T]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if a.value() <= 0.0 {
            *g = T::zero();
        }
    }
}
