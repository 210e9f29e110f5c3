//! Raw numeric kernels shared by the tape operations and the gradient-free
//! transform paths. All buffers are row-major.

/// Boundary handling for strided 1-D convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// No padding: `out = (len - taps) / stride + 1`.
    Valid,
    /// Wrap-around indexing: `out = len / stride`.
    Circular,
}

const TILE_R: usize = 4;
const TILE_C: usize = 8;

/// `c[m×n] = a[m×k] · b[k×n]`
///
/// Register-tiled over 4×8 output blocks; every output still sums over `k`
/// in ascending order with separate multiply and add, so results match the
/// naive triple loop bit for bit on every code path.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { matmul_avx2(a, b, &mut c, m, k, n) };
        return c;
    }
    matmul_into(a, b, &mut c, m, k, n);
    c
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_avx2(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    matmul_into(a, b, c, m, k, n)
}

#[inline(always)]
fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let full_r = m - m % TILE_R;
    let full_c = n - n % TILE_C;
    for i in (0..full_r).step_by(TILE_R) {
        let rows: [&[f64]; TILE_R] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
        for j in (0..full_c).step_by(TILE_C) {
            let mut acc = [[0.0f64; TILE_C]; TILE_R];
            for p in 0..k {
                let brow: &[f64; TILE_C] = b[p * n + j..p * n + j + TILE_C].try_into().expect("tile");
                for (accr, row) in acc.iter_mut().zip(&rows) {
                    let av = row[p];
                    for (x, bv) in accr.iter_mut().zip(brow) {
                        *x += av * bv;
                    }
                }
            }
            for (r, accr) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + TILE_C].copy_from_slice(accr);
            }
        }
        for r in i..i + TILE_R {
            edge_columns(a, b, c, r, k, n, full_c);
        }
    }
    for r in full_r..m {
        edge_columns(a, b, c, r, k, n, 0);
    }
}

/// Columns `from..n` of row `r` by straightforward accumulation.
#[inline(always)]
fn edge_columns(a: &[f64], b: &[f64], c: &mut [f64], r: usize, k: usize, n: usize, from: usize) {
    if from == n {
        return;
    }
    let crow = &mut c[r * n + from..(r + 1) * n];
    for p in 0..k {
        let av = a[r * k + p];
        for (cv, bv) in crow.iter_mut().zip(&b[p * n + from..(p + 1) * n]) {
            *cv += av * bv;
        }
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = x[i * cols + j];
        }
    }
    t
}

/// `c[m×k] = g[m×n] · b[k×n]ᵀ`
pub fn matmul_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    matmul(g, &transpose(b, k, n), m, n, k)
}

/// `c[k×n] = a[m×k]ᵀ · g[m×n]`
pub fn matmul_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul(&transpose(a, m, k), g, k, m, n)
}

/// Output length of a strided convolution, or `None` when the input is too
/// short (valid mode) or not divisible by the stride (circular mode).
pub fn conv_out_len(len: usize, taps: usize, stride: usize, boundary: Boundary) -> Option<usize> {
    if stride == 0 || taps == 0 || len == 0 {
        return None;
    }
    match boundary {
        Boundary::Valid => (len >= taps).then(|| (len - taps) / stride + 1),
        Boundary::Circular => len.is_multiple_of(stride).then(|| len / stride),
    }
}

/// Strided cross-correlation `y[b,i] = Σ_k f[k] · x[b, i·stride + k]`.
pub fn conv_forward(
    x: &[f64],
    batch: usize,
    len: usize,
    f: &[f64],
    stride: usize,
    boundary: Boundary,
    out_len: usize,
) -> Vec<f64> {
    let taps = f.len();
    let mut y = vec![0.0; batch * out_len];
    for b in 0..batch {
        let xr = &x[b * len..(b + 1) * len];
        let yr = &mut y[b * out_len..(b + 1) * out_len];
        for (i, yv) in yr.iter_mut().enumerate() {
            let start = i * stride;
            let mut acc = 0.0;
            if start + taps <= len {
                for (fk, xv) in f.iter().zip(&xr[start..start + taps]) {
                    acc += fk * xv;
                }
            } else {
                debug_assert_eq!(boundary, Boundary::Circular);
                for (k, fk) in f.iter().enumerate() {
                    acc += fk * xr[(start + k) % len];
                }
            }
            *yv = acc;
        }
    }
    y
}

/// Adjoint of [`conv_forward`]: `x[b, i·stride + k] += f[k] · y[b,i]`.
pub fn conv_transpose(
    y: &[f64],
    batch: usize,
    out_len: usize,
    f: &[f64],
    stride: usize,
    boundary: Boundary,
    len: usize,
) -> Vec<f64> {
    let taps = f.len();
    let mut x = vec![0.0; batch * len];
    for b in 0..batch {
        let yr = &y[b * out_len..(b + 1) * out_len];
        let xr = &mut x[b * len..(b + 1) * len];
        for (i, &yv) in yr.iter().enumerate() {
            if yv == 0.0 {
                continue;
            }
            let start = i * stride;
            if start + taps <= len {
                for (fk, xv) in f.iter().zip(&mut xr[start..start + taps]) {
                    *xv += fk * yv;
                }
            } else {
                debug_assert_eq!(boundary, Boundary::Circular);
                for (k, fk) in f.iter().enumerate() {
                    xr[(start + k) % len] += fk * yv;
                }
            }
        }
    }
    x
}

/// Filter gradient shared by both convolution directions:
/// `gf[k] = Σ_b Σ_i y[b,i] · x[b, i·stride + k]`.
pub fn conv_filter_grad(
    x: &[f64],
    batch: usize,
    len: usize,
    y: &[f64],
    out_len: usize,
    taps: usize,
    stride: usize,
) -> Vec<f64> {
    let mut gf = vec![0.0; taps];
    for b in 0..batch {
        let xr = &x[b * len..(b + 1) * len];
        let yr = &y[b * out_len..(b + 1) * out_len];
        for (i, &yv) in yr.iter().enumerate() {
            if yv == 0.0 {
                continue;
            }
            let start = i * stride;
            if start + taps <= len {
                for (g, xv) in gf.iter_mut().zip(&xr[start..start + taps]) {
                    *g += yv * xv;
                }
            } else {
                for (k, g) in gf.iter_mut().enumerate() {
                    *g += yv * xr[(start + k) % len];
                }
            }
        }
    }
    gf
}

/// Full linear convolution (polynomial product) of two coefficient vectors.
pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, av) in a.iter().enumerate() {
        for (j, bv) in b.iter().enumerate() {
            out[i + j] += av * bv;
        }
    }
    out
}

/// Correlation used by the [`poly_mul`] backward pass: `r[i] = Σ_j g[i+j] · b[j]`.
pub fn poly_mul_grad(g: &[f64], other: &[f64], len: usize) -> Vec<f64> {
    (0..len).map(|i| other.iter().enumerate().map(|(j, b)| g[i + j] * b).sum()).collect()
}
