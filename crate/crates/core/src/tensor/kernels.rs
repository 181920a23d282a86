//! Slice-level numeric kernels shared by the forward and backward passes.
//!
//! Every output element is accumulated in a fixed order that does not depend
//! on its row index, so permuting the rows of an input permutes the rows of
//! the output bitwise.

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aik) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
    c
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// `aᵀ[k×m] · g[m×n]`, with `a` stored as `m×k`.
pub fn matmul_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let o_row = &mut out[p * n..(p + 1) * n];
            for (ov, &gv) in o_row.iter_mut().zip(g_row) {
                *ov += aip * gv;
            }
        }
    }
    out
}

/// `g[m×n] · bᵀ[n×k]`, with `b` stored as `k×n`.
pub fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let bt = transpose(b, k, n);
    matmul(g, &bt, m, n, k)
}

/// Output extent of a valid (unpadded) sliding window.
pub fn window_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
    if window == 0 || stride == 0 || window > input {
        None
    } else {
        Some((input - window) / stride + 1)
    }
}

/// Geometry of a valid sliding window over an `H×W×C` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub win_h: usize,
    pub win_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(
        in_h: usize,
        in_w: usize,
        channels: usize,
        (win_h, win_w): (usize, usize),
        (stride_h, stride_w): (usize, usize),
    ) -> Option<Self> {
        Some(Window {
            in_h,
            in_w,
            channels,
            win_h,
            win_w,
            stride_h,
            stride_w,
            out_h: window_extent(in_h, win_h, stride_h)?,
            out_w: window_extent(in_w, win_w, stride_w)?,
        })
    }

    fn in_offset(&self, oh: usize, ow: usize, i: usize, j: usize) -> usize {
        ((oh * self.stride_h + i) * self.in_w + ow * self.stride_w + j) * self.channels
    }
}

/// Per-window, per-channel maximum. Returns values and the flat input index
/// each output was taken from; ties keep the first element in row-major order.
pub fn maxpool(input: &[f64], w: &Window) -> (Vec<f64>, Vec<usize>) {
    let c = w.channels;
    let n_out = w.out_h * w.out_w * c;
    let mut values = vec![f64::NEG_INFINITY; n_out];
    let mut argmax = vec![usize::MAX; n_out];
    for oh in 0..w.out_h {
        for ow in 0..w.out_w {
            let base = (oh * w.out_w + ow) * c;
            for i in 0..w.win_h {
                for j in 0..w.win_w {
                    let off = w.in_offset(oh, ow, i, j);
                    for ch in 0..c {
                        let v = input[off + ch];
                        if argmax[base + ch] == usize::MAX || v > values[base + ch] {
                            values[base + ch] = v;
                            argmax[base + ch] = off + ch;
                        }
                    }
                }
            }
        }
    }
    (values, argmax)
}

/// Valid cross-correlation. `weight` is laid out `[win_h, win_w, c_in, c_out]`.
pub fn conv(input: &[f64], weight: &[f64], bias: &[f64], w: &Window, c_out: usize) -> Vec<f64> {
    let c_in = w.channels;
    let mut out = vec![0.0; w.out_h * w.out_w * c_out];
    for oh in 0..w.out_h {
        for ow in 0..w.out_w {
            let base = (oh * w.out_w + ow) * c_out;
            let acc = &mut out[base..base + c_out];
            acc.copy_from_slice(bias);
            for i in 0..w.win_h {
                for j in 0..w.win_w {
                    let in_off = w.in_offset(oh, ow, i, j);
                    let w_off = (i * w.win_w + j) * c_in * c_out;
                    for ci in 0..c_in {
                        let x = input[in_off + ci];
                        if x == 0.0 {
                            continue;
                        }
                        let w_row = &weight[w_off + ci * c_out..w_off + (ci + 1) * c_out];
                        for (a, &wv) in acc.iter_mut().zip(w_row) {
                            *a += x * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv`] with respect to input, weight and bias.
pub fn conv_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    w: &Window,
    c_out: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c_in = w.channels;
    let mut d_in = vec![0.0; input.len()];
    let mut d_w = vec![0.0; weight.len()];
    let mut d_b = vec![0.0; c_out];
    for oh in 0..w.out_h {
        for ow in 0..w.out_w {
            let base = (oh * w.out_w + ow) * c_out;
            let g = &grad_out[base..base + c_out];
            for (db, &gv) in d_b.iter_mut().zip(g) {
                *db += gv;
            }
            for i in 0..w.win_h {
                for j in 0..w.win_w {
                    let in_off = w.in_offset(oh, ow, i, j);
                    let w_off = (i * w.win_w + j) * c_in * c_out;
                    for ci in 0..c_in {
                        let x = input[in_off + ci];
                        let range = w_off + ci * c_out..w_off + (ci + 1) * c_out;
                        let mut dx = 0.0;
                        for ((dw, &wv), &gv) in d_w[range.clone()].iter_mut().zip(&weight[range]).zip(g) {
                            *dw += x * gv;
                            dx += wv * gv;
                        }
                        d_in[in_off + ci] += dx;
                    }
                }
            }
        }
    }
    (d_in, d_w, d_b)
}

/// Numerically stable softmax of each row.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (ov, &v) in o.iter_mut().zip(row) {
            *ov = (v - max).exp();
            sum += *ov;
        }
        for ov in o.iter_mut() {
            *ov /= sum;
        }
    }
    out
}

/// `log Σ exp(row)` computed with the usual max shift.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
