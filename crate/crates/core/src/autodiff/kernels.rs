//! Dense loops behind the tape ops. All matrices are row-major.

/// Row-major `c = beta * c + a * b` with arbitrary strides; `a` is `m x k`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths bound every strided access, and `c` is a
    // distinct mutable buffer of at least `m * n` elements.
    unsafe {
        matrixmultiply::dgemm(
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

/// `a (p x q) * b (q x r)` into a fresh buffer.
pub(crate) fn matmul_new(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let n = p * r;
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    if q == 0 {
        out.resize(n, 0.0);
        return out;
    }
    assert!(a.len() >= p * q && b.len() >= q * r);
    // SAFETY: with beta = 0 the kernel writes every element of C without
    // reading it, so the spare capacity is fully initialized before set_len.
    unsafe {
        matrixmultiply::dgemm(
            p,
            q,
            r,
            1.0,
            a.as_ptr(),
            q as isize,
            1,
            b.as_ptr(),
            r as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            r as isize,
            1,
        );
        out.set_len(n);
    }
    out
}

/// `out += u (p x r) * b^T` where `b` is `q x r`; `out` is `p x q`.
pub(crate) fn matmul_nt_acc(u: &[f64], b: &[f64], out: &mut [f64], p: usize, r: usize, q: usize) {
    gemm(p, r, q, u, (r as isize, 1), b, (1, r as isize), 1.0, out);
}

/// `out += a^T * u` where `a` is `p x q`, `u` is `p x r`; `out` is `q x r`.
pub(crate) fn matmul_tn_acc(a: &[f64], u: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    gemm(q, p, r, a, (1, q as isize), u, (r as isize, 1), 1.0, out);
}

pub(crate) fn transpose(src: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = src[i * cols + j];
        }
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    let inv = 1.0 / total;
    xs.iter_mut().for_each(|x| *x *= inv);
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// `tanh` through one `exp`, several times cheaper than libm's `tanh`;
/// absolute error stays near 1e-16.
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

/// The `tanh` term of the GELU approximation at `x`.
pub(crate) fn gelu_tanh(x: f64) -> f64 {
    fast_tanh(SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x))
}

/// GELU given `t = gelu_tanh(x)`.
pub(crate) fn gelu_with(x: f64, t: f64) -> f64 {
    0.5 * x * (1.0 + t)
}

/// Derivative of GELU given `t = gelu_tanh(x)`.
pub(crate) fn gelu_grad_with(x: f64, t: f64) -> f64 {
    let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}
