//! Raw f64 kernels shared by the tape and the cache-resume serving path.
//!
//! Both paths must call these same routines: the cache-equivalence guarantee
//! rests on the two paths performing identical floating-point operations in
//! identical order.

/// out = a[m,k] * b[k,n]; out is overwritten.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out += a[m,n] * b[k,n]^T, i.e. out[i][p] += dot(a row i, b row p).
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += arow[j] * brow[j];
            }
            orow[p] += s;
        }
    }
}

/// out += a[m,k]^T * g[m,n], i.e. out[p][j] += sum_i a[i][p] * g[i][j].
pub fn matmul_tn_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * grow[j];
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow in either tail.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d silu / dx at x.
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Softmax over one row with an optional keep-mask and temperature.
///
/// Masked entries get probability 0; a row with no allowed entries becomes
/// all zeros rather than NaN. Per-row max subtraction keeps exp in range.
/// The max and the normalizer visit allowed entries in ascending index
/// order, which is what makes independently assembled score vectors (the
/// serving resume path) reproduce these bits exactly.
pub fn softmax_row_masked(z: &[f64], mask: Option<&[bool]>, tau: f64, out: &mut [f64]) {
    debug_assert_eq!(z.len(), out.len());
    let allowed = |j: usize| mask.map_or(true, |m| m[j]);
    let mut mx = f64::NEG_INFINITY;
    for (j, &v) in z.iter().enumerate() {
        if allowed(j) {
            let u = v / tau;
            if u > mx {
                mx = u;
            }
        }
    }
    if mx == f64::NEG_INFINITY {
        out.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for (j, &v) in z.iter().enumerate() {
        if allowed(j) {
            let e = (v / tau - mx).exp();
            out[j] = e;
            sum += e;
        } else {
            out[j] = 0.0;
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        if allowed(j) {
            *o /= sum;
        }
    }
}

/// Root-mean-square normalization of one row: y = x / sqrt(mean(x^2) + eps).
pub fn rmsnorm_row(x: &[f64], eps: f64, out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let n = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
    let r = (ms + eps).sqrt();
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = v / r;
    }
}
