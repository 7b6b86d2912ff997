//! Slice-level numeric kernels shared by the tape ops.

use crate::exec::{for_each_row, ExecPolicy};

/// `c[m x n] = a[m x k] * b[k x n]`.
pub fn matmul(policy: ExecPolicy, a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for_each_row(policy, &mut c, n, k * n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c, &bv) in row.iter_mut().zip(b_row) {
                *c += av * bv;
            }
        }
    });
    c
}

/// `c[m x k] = a[m x n] * b[k x n]^T`.
pub fn matmul_nt(policy: ExecPolicy, a: &[f32], b: &[f32], m: usize, n: usize, k: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * k];
    for_each_row(policy, &mut c, k, k * n, |i, row| {
        let a_row = &a[i * n..(i + 1) * n];
        for (p, out) in row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *out = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    });
    c
}

/// Transpose of a `rows x cols` matrix.
pub fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// `c[k x n] = a[m x k]^T * b[m x n]`.
pub fn matmul_tn(policy: ExecPolicy, a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let at = transpose(a, m, k);
    matmul(policy, &at, b, k, m, n)
}

/// Sum with `f64` accumulation.
pub fn sum_f64(values: &[f32]) -> f64 {
    values.iter().map(|&v| v as f64).sum()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without forming `sigmoid(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
