//! Tensor operations: forward kernels and their gradient rules.
//!
//! Every op validates shapes up front and reports both shapes on mismatch.
//! Backward closures capture parent handles (cheap `Rc` clones) or small
//! value snapshots where the gradient needs the forward output.

use super::{numel_of, Tensor, TensorError};
use crate::scalar::Scalar;

// ── raw kernels ──────────────────────────────────────────────────────

/// C = A(m×k) · B(k×n), row-major, ikj loop order.
fn mm<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * *bv;
            }
        }
    }
    out
}

/// C = A(p×q) · B(r×q)^T -> (p×r): dot products of rows.
fn mm_a_bt<S: Scalar>(a: &[S], b: &[S], p: usize, q: usize, r: usize) -> Vec<S> {
    let mut out = vec![S::zero(); p * r];
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            let brow = &b[j * q..(j + 1) * q];
            let mut acc = S::zero();
            for (av, bv) in arow.iter().zip(brow) {
                acc = acc + *av * *bv;
            }
            out[i * r + j] = acc;
        }
    }
    out
}

/// C = A(p×q)^T · B(p×r) -> (q×r): accumulate outer products row by row.
fn mm_at_b<S: Scalar>(a: &[S], b: &[S], p: usize, q: usize, r: usize) -> Vec<S> {
    let mut out = vec![S::zero(); q * r];
    for row in 0..p {
        let arow = &a[row * q..(row + 1) * q];
        let brow = &b[row * r..(row + 1) * r];
        for (i, av) in arow.iter().enumerate() {
            if *av == S::zero() {
                continue;
            }
            let orow = &mut out[i * r..(i + 1) * r];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o = *o + *av * *bv;
            }
        }
    }
    out
}

fn transpose_raw<S: Scalar>(x: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Row/column lanes of a rank-1 or rank-2 tensor along `axis`.
/// Returns (lane_count, lane_len, stride_between_elements, stride_between_lanes).
fn lanes(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
    match shape.len() {
        1 => {
            if axis != 0 {
                return Err(TensorError::BadAxis { op, axis, rank: 1 });
            }
            Ok((1, shape[0], 1, 0))
        }
        2 => match axis {
            // lanes run along the rows dimension: one lane per column
            0 => Ok((shape[1], shape[0], shape[1], 1)),
            // lanes run along the columns dimension: one lane per row
            1 => Ok((shape[0], shape[1], 1, shape[1])),
            _ => Err(TensorError::BadAxis { op, axis, rank: 2 }),
        },
        r => Err(TensorError::BadShape {
            op,
            shape: shape.to_vec(),
            expected: format!("rank 1 or 2, got rank {r}"),
        }),
    }
}

fn require_rank2<S: Scalar>(t: &Tensor<S>, op: &'static str) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::BadShape { op, shape: s.to_vec(), expected: "a matrix (rank 2)".into() }),
    }
}

// ── ops ──────────────────────────────────────────────────────────────

impl<S: Scalar> Tensor<S> {
    /// Matrix product `self (m×k) · rhs (k×n)`.
    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let (m, k) = require_rank2(self, "matmul")?;
        let (k2, n) = require_rank2(rhs, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out = {
            let a = self.values();
            let b = rhs.values();
            mm(&a, &b, m, k, n)
        };
        let (lhs, rhs_h) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), rhs.clone()],
            Box::new(move |d_out| {
                let a = lhs.values();
                let b = rhs_h.values();
                // dA = dOut · B^T ; dB = A^T · dOut
                let d_a = mm_a_bt(d_out, &b, m, n, k);
                let d_b = mm_at_b(&a, d_out, m, k, n);
                vec![d_a, d_b]
            }),
        ))
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, rhs: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out: Vec<S> = self.values().iter().zip(rhs.values().iter()).map(|(a, b)| *a + *b).collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |d_out| vec![d_out.to_vec(), d_out.to_vec()]),
        ))
    }

    /// Elementwise difference; shapes must match exactly.
    pub fn sub(&self, rhs: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sub",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out: Vec<S> = self.values().iter().zip(rhs.values().iter()).map(|(a, b)| *a - *b).collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |d_out| {
                vec![d_out.to_vec(), d_out.iter().map(|d| -*d).collect()]
            }),
        ))
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out: Vec<S> = self.values().iter().zip(rhs.values().iter()).map(|(a, b)| *a * *b).collect();
        let (lhs, rhs_h) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |d_out| {
                let a = lhs.values();
                let b = rhs_h.values();
                let d_a = d_out.iter().zip(b.iter()).map(|(d, b)| *d * *b).collect();
                let d_b = d_out.iter().zip(a.iter()).map(|(d, a)| *d * *a).collect();
                vec![d_a, d_b]
            }),
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: S) -> Tensor<S> {
        let out: Vec<S> = self.values().iter().map(|v| *v * c).collect();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |d_out| vec![d_out.iter().map(|d| *d * c).collect()]),
        )
    }

    /// Add a length-`n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&self, row: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let (m, n) = require_rank2(self, "add_row")?;
        if row.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: row.shape().to_vec(),
            });
        }
        let out = {
            let x = self.values();
            let r = row.values();
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                for j in 0..n {
                    out.push(x[i * n + j] + r[j]);
                }
            }
            out
        };
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), row.clone()],
            Box::new(move |d_out| {
                let mut d_row = vec![S::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        d_row[j] = d_row[j] + d_out[i * n + j];
                    }
                }
                vec![d_out.to_vec(), d_row]
            }),
        ))
    }

    /// Concatenate rank-1 tensors into one vector.
    pub fn concat(parts: &[&Tensor<S>]) -> Result<Tensor<S>, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat" });
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            match p.shape() {
                [l] => lens.push(*l),
                s => {
                    return Err(TensorError::BadShape {
                        op: "concat",
                        shape: s.to_vec(),
                        expected: "rank-1 parts".into(),
                    })
                }
            }
        }
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(total);
        for p in parts {
            out.extend_from_slice(&p.values());
        }
        let parents: Vec<Tensor<S>> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(Tensor::from_op(
            out,
            vec![total],
            parents,
            Box::new(move |d_out| {
                let mut grads = Vec::with_capacity(lens.len());
                let mut offset = 0;
                for l in &lens {
                    grads.push(d_out[offset..offset + l].to_vec());
                    offset += l;
                }
                grads
            }),
        ))
    }

    /// Stack rank-1 tensors of equal length into an `n×d` matrix.
    pub fn stack_rows(rows: &[&Tensor<S>]) -> Result<Tensor<S>, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::EmptyInput { op: "stack_rows" });
        }
        let d = match rows[0].shape() {
            [d] => *d,
            s => {
                return Err(TensorError::BadShape {
                    op: "stack_rows",
                    shape: s.to_vec(),
                    expected: "rank-1 rows".into(),
                })
            }
        };
        for r in rows {
            if r.shape() != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![d],
                    rhs: r.shape().to_vec(),
                });
            }
        }
        let n = rows.len();
        let mut out = Vec::with_capacity(n * d);
        for r in rows {
            out.extend_from_slice(&r.values());
        }
        let parents: Vec<Tensor<S>> = rows.iter().map(|r| (*r).clone()).collect();
        Ok(Tensor::from_op(
            out,
            vec![n, d],
            parents,
            Box::new(move |d_out| {
                (0..n).map(|i| d_out[i * d..(i + 1) * d].to_vec()).collect()
            }),
        ))
    }

    /// Mean along `axis` of a matrix (or of a vector with `axis == 0`).
    pub fn mean_over_axis(&self, axis: usize) -> Result<Tensor<S>, TensorError> {
        let (lane_count, lane_len, estride, lstride) = lanes(self.shape(), axis, "mean_over_axis")?;
        if lane_len == 0 {
            return Err(TensorError::EmptyInput { op: "mean_over_axis" });
        }
        let inv = S::one() / S::from_f64(lane_len as f64);
        let out = {
            let x = self.values();
            (0..lane_count)
                .map(|l| {
                    let mut acc = S::zero();
                    for e in 0..lane_len {
                        acc = acc + x[l * lstride + e * estride];
                    }
                    acc * inv
                })
                .collect::<Vec<S>>()
        };
        let in_numel = self.numel();
        Ok(Tensor::from_op(
            out,
            vec![lane_count],
            vec![self.clone()],
            Box::new(move |d_out| {
                let mut d_in = vec![S::zero(); in_numel];
                for l in 0..lane_count {
                    let g = d_out[l] * inv;
                    for e in 0..lane_len {
                        d_in[l * lstride + e * estride] = g;
                    }
                }
                vec![d_in]
            }),
        ))
    }

    /// Softmax along `axis`. `-inf` entries get weight exactly 0; a lane
    /// with no finite entry is an error.
    pub fn softmax_over_axis(&self, axis: usize) -> Result<Tensor<S>, TensorError> {
        let (lane_count, lane_len, estride, lstride) = lanes(self.shape(), axis, "softmax_over_axis")?;
        if lane_len == 0 {
            return Err(TensorError::EmptyInput { op: "softmax_over_axis" });
        }
        let mut out = vec![S::zero(); self.numel()];
        {
            let x = self.values();
            for l in 0..lane_count {
                let idx = |e: usize| l * lstride + e * estride;
                let mut mx = S::neg_infinity();
                for e in 0..lane_len {
                    let v = x[idx(e)];
                    if v > mx {
                        mx = v;
                    }
                }
                if !mx.is_finite() {
                    return Err(TensorError::DegenerateSoftmax { op: "softmax_over_axis" });
                }
                let mut denom = S::zero();
                for e in 0..lane_len {
                    let ev = (x[idx(e)] - mx).exp();
                    out[idx(e)] = ev;
                    denom = denom + ev;
                }
                for e in 0..lane_len {
                    out[idx(e)] = out[idx(e)] / denom;
                }
            }
        }
        let saved = out.clone();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |d_out| {
                // d_x = s ⊙ (d − Σ d·s) per lane
                let mut d_in = vec![S::zero(); saved.len()];
                for l in 0..lane_count {
                    let idx = |e: usize| l * lstride + e * estride;
                    let mut dot = S::zero();
                    for e in 0..lane_len {
                        dot = dot + d_out[idx(e)] * saved[idx(e)];
                    }
                    for e in 0..lane_len {
                        d_in[idx(e)] = saved[idx(e)] * (d_out[idx(e)] - dot);
                    }
                }
                vec![d_in]
            }),
        ))
    }

    /// Log-softmax along `axis`, computed with the log-sum-exp shift.
    pub fn log_softmax_over_axis(&self, axis: usize) -> Result<Tensor<S>, TensorError> {
        let (lane_count, lane_len, estride, lstride) = lanes(self.shape(), axis, "log_softmax_over_axis")?;
        if lane_len == 0 {
            return Err(TensorError::EmptyInput { op: "log_softmax_over_axis" });
        }
        let mut out = vec![S::zero(); self.numel()];
        let mut softmax = vec![S::zero(); self.numel()];
        {
            let x = self.values();
            for l in 0..lane_count {
                let idx = |e: usize| l * lstride + e * estride;
                let mut mx = S::neg_infinity();
                for e in 0..lane_len {
                    let v = x[idx(e)];
                    if v > mx {
                        mx = v;
                    }
                }
                if !mx.is_finite() {
                    return Err(TensorError::DegenerateSoftmax { op: "log_softmax_over_axis" });
                }
                let mut denom = S::zero();
                for e in 0..lane_len {
                    denom = denom + (x[idx(e)] - mx).exp();
                }
                let lse = mx + denom.ln();
                for e in 0..lane_len {
                    let y = x[idx(e)] - lse;
                    out[idx(e)] = y;
                    softmax[idx(e)] = y.exp();
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |d_out| {
                // d_x = d − softmax · Σ d per lane
                let mut d_in = vec![S::zero(); softmax.len()];
                for l in 0..lane_count {
                    let idx = |e: usize| l * lstride + e * estride;
                    let mut total = S::zero();
                    for e in 0..lane_len {
                        total = total + d_out[idx(e)];
                    }
                    for e in 0..lane_len {
                        d_in[idx(e)] = d_out[idx(e)] - softmax[idx(e)] * total;
                    }
                }
                vec![d_in]
            }),
        ))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&self, gamma: &Tensor<S>, beta: &Tensor<S>, eps: S) -> Result<Tensor<S>, TensorError> {
        let (rows, d) = match self.shape() {
            [d] => (1usize, *d),
            [r, c] => (*r, *c),
            s => {
                return Err(TensorError::BadShape {
                    op: "layer_norm",
                    shape: s.to_vec(),
                    expected: "rank 1 or 2".into(),
                })
            }
        };
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        if d == 0 {
            return Err(TensorError::EmptyInput { op: "layer_norm" });
        }
        let inv_d = S::one() / S::from_f64(d as f64);
        let mut out = vec![S::zero(); rows * d];
        let mut xhat = vec![S::zero(); rows * d];
        let mut inv_std = vec![S::zero(); rows];
        {
            let x = self.values();
            let g = gamma.values();
            let b = beta.values();
            for i in 0..rows {
                let row = &x[i * d..(i + 1) * d];
                let mut mean = S::zero();
                for v in row {
                    mean = mean + *v;
                }
                mean = mean * inv_d;
                let mut var = S::zero();
                for v in row {
                    let c = *v - mean;
                    var = var + c * c;
                }
                var = var * inv_d;
                let inv = S::one() / (var + eps).sqrt();
                inv_std[i] = inv;
                for j in 0..d {
                    let h = (row[j] - mean) * inv;
                    xhat[i * d + j] = h;
                    out[i * d + j] = h * g[j] + b[j];
                }
            }
        }
        let gamma_h = gamma.clone();
        let shape = self.shape().to_vec();
        Ok(Tensor::from_op(
            out,
            shape,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |d_out| {
                let g = gamma_h.values();
                let mut d_x = vec![S::zero(); rows * d];
                let mut d_g = vec![S::zero(); d];
                let mut d_b = vec![S::zero(); d];
                for i in 0..rows {
                    let inv = inv_std[i];
                    let h = &xhat[i * d..(i + 1) * d];
                    let dy = &d_out[i * d..(i + 1) * d];
                    // d_xhat = dy ⊙ gamma; then the standard layer-norm VJP:
                    // d_x = inv/d · (d·d_xhat − Σd_xhat − xhat·Σ(d_xhat⊙xhat))
                    let mut sum_dh = S::zero();
                    let mut sum_dh_h = S::zero();
                    for j in 0..d {
                        let dh = dy[j] * g[j];
                        sum_dh = sum_dh + dh;
                        sum_dh_h = sum_dh_h + dh * h[j];
                        d_g[j] = d_g[j] + dy[j] * h[j];
                        d_b[j] = d_b[j] + dy[j];
                    }
                    let n = S::from_f64(d as f64);
                    for j in 0..d {
                        let dh = dy[j] * g[j];
                        d_x[i * d + j] = inv * (dh - (sum_dh + h[j] * sum_dh_h) / n);
                    }
                }
                vec![d_x, d_g, d_b]
            }),
        ))
    }

    /// GELU activation (tanh form).
    pub fn gelu(&self) -> Tensor<S> {
        let c = S::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
        let a = S::from_f64(0.044_715);
        let half = S::from_f64(0.5);
        let three = S::from_f64(3.0);
        let out: Vec<S> = self
            .values()
            .iter()
            .map(|&x| {
                let t = (c * (x + a * x * x * x)).tanh();
                half * x * (S::one() + t)
            })
            .collect();
        let xs = self.clone();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |d_out| {
                let x = xs.values();
                let d_in = d_out
                    .iter()
                    .zip(x.iter())
                    .map(|(&d, &x)| {
                        let u = c * (x + a * x * x * x);
                        let t = u.tanh();
                        let du = c * (S::one() + three * a * x * x);
                        let g = half * (S::one() + t) + half * x * (S::one() - t * t) * du;
                        d * g
                    })
                    .collect();
                vec![d_in]
            }),
        )
    }

    /// Logistic sigmoid, numerically stable on both tails.
    pub fn sigmoid(&self) -> Tensor<S> {
        let out: Vec<S> = self.values().iter().map(|&x| stable_sigmoid(x)).collect();
        let saved = out.clone();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |d_out| {
                let d_in = d_out
                    .iter()
                    .zip(saved.iter())
                    .map(|(&d, &s)| d * s * (S::one() - s))
                    .collect();
                vec![d_in]
            }),
        )
    }

    /// Softplus `ln(1+e^x)` via the shifted form, stable for large |x|.
    pub fn softplus(&self) -> Tensor<S> {
        let out: Vec<S> = self
            .values()
            .iter()
            .map(|&x| {
                if x > S::zero() {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            })
            .collect();
        let sig: Vec<S> = self.values().iter().map(|&x| stable_sigmoid(x)).collect();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |d_out| {
                let d_in = d_out.iter().zip(sig.iter()).map(|(&d, &s)| d * s).collect();
                vec![d_in]
            }),
        )
    }

    /// Rows of an embedding table selected by token id.
    pub fn embedding_lookup(table: &Tensor<S>, ids: &[usize]) -> Result<Tensor<S>, TensorError> {
        let (vocab, d) = require_rank2(table, "embedding_lookup")?;
        if ids.is_empty() {
            return Err(TensorError::EmptyInput { op: "embedding_lookup" });
        }
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfRange { op: "embedding_lookup", index: id, bound: vocab });
            }
        }
        let n = ids.len();
        let out = {
            let t = table.values();
            let mut out = Vec::with_capacity(n * d);
            for &id in ids {
                out.extend_from_slice(&t[id * d..(id + 1) * d]);
            }
            out
        };
        let ids_owned = ids.to_vec();
        Ok(Tensor::from_op(
            out,
            vec![n, d],
            vec![table.clone()],
            Box::new(move |d_out| {
                let mut d_table = vec![S::zero(); vocab * d];
                for (r, &id) in ids_owned.iter().enumerate() {
                    let src = &d_out[r * d..(r + 1) * d];
                    let dst = &mut d_table[id * d..(id + 1) * d];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o = *o + *s;
                    }
                }
                vec![d_table]
            }),
        ))
    }

    /// Replace elements where `mask` is true by `value`; gradient is zero
    /// there and passes through elsewhere.
    pub fn masked_fill(&self, mask: &[bool], value: S) -> Result<Tensor<S>, TensorError> {
        if mask.len() != self.numel() {
            return Err(TensorError::DataLenMismatch { expected: self.numel(), got: mask.len() });
        }
        let out: Vec<S> = self
            .values()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let mask_owned = mask.to_vec();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |d_out| {
                let d_in = d_out
                    .iter()
                    .zip(mask_owned.iter())
                    .map(|(&d, &m)| if m { S::zero() } else { d })
                    .collect();
                vec![d_in]
            }),
        ))
    }

    /// Matrix transpose.
    pub fn transpose(&self) -> Result<Tensor<S>, TensorError> {
        let (m, n) = require_rank2(self, "transpose")?;
        let out = transpose_raw(&self.values(), m, n);
        Ok(Tensor::from_op(
            out,
            vec![n, m],
            vec![self.clone()],
            Box::new(move |d_out| vec![transpose_raw(d_out, n, m)]),
        ))
    }

    /// Select whole rows of a matrix (duplicates allowed).
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Tensor<S>, TensorError> {
        let (m, d) = require_rank2(self, "gather_rows")?;
        if rows.is_empty() {
            return Err(TensorError::EmptyInput { op: "gather_rows" });
        }
        for &r in rows {
            if r >= m {
                return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: r, bound: m });
            }
        }
        let out = {
            let x = self.values();
            let mut out = Vec::with_capacity(rows.len() * d);
            for &r in rows {
                out.extend_from_slice(&x[r * d..(r + 1) * d]);
            }
            out
        };
        let rows_owned = rows.to_vec();
        let n_out = rows.len();
        Ok(Tensor::from_op(
            out,
            vec![n_out, d],
            vec![self.clone()],
            Box::new(move |d_out| {
                let mut d_in = vec![S::zero(); m * d];
                for (i, &r) in rows_owned.iter().enumerate() {
                    let src = &d_out[i * d..(i + 1) * d];
                    let dst = &mut d_in[r * d..(r + 1) * d];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o = *o + *s;
                    }
                }
                vec![d_in]
            }),
        ))
    }

    /// One element per row: `out[i] = self[i, cols[i]]`.
    pub fn pick_per_row(&self, cols: &[usize]) -> Result<Tensor<S>, TensorError> {
        let (m, d) = require_rank2(self, "pick_per_row")?;
        if cols.len() != m {
            return Err(TensorError::DataLenMismatch { expected: m, got: cols.len() });
        }
        for &c in cols {
            if c >= d {
                return Err(TensorError::IndexOutOfRange { op: "pick_per_row", index: c, bound: d });
            }
        }
        let out = {
            let x = self.values();
            cols.iter().enumerate().map(|(i, &c)| x[i * d + c]).collect::<Vec<S>>()
        };
        let cols_owned = cols.to_vec();
        Ok(Tensor::from_op(
            out,
            vec![m],
            vec![self.clone()],
            Box::new(move |d_out| {
                let mut d_in = vec![S::zero(); m * d];
                for (i, &c) in cols_owned.iter().enumerate() {
                    d_in[i * d + c] = d_in[i * d + c] + d_out[i];
                }
                vec![d_in]
            }),
        ))
    }

    /// Sum of all elements (scalar output).
    pub fn sum_all(&self) -> Tensor<S> {
        let total = self.values().iter().copied().fold(S::zero(), |a, b| a + b);
        let n = self.numel();
        Tensor::from_op(
            vec![total],
            vec![],
            vec![self.clone()],
            Box::new(move |d_out| vec![vec![d_out[0]; n]]),
        )
    }

    /// Mean of all elements (scalar output).
    pub fn mean_all(&self) -> Tensor<S> {
        let n = self.numel();
        let inv = S::one() / S::from_f64(n as f64);
        let total = self.values().iter().copied().fold(S::zero(), |a, b| a + b);
        Tensor::from_op(
            vec![total * inv],
            vec![],
            vec![self.clone()],
            Box::new(move |d_out| vec![vec![d_out[0] * inv; n]]),
        )
    }

    /// View with a new shape of the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<S>, TensorError> {
        let expected = self.numel();
        if numel_of(&shape) != expected {
            return Err(TensorError::BadShape {
                op: "reshape",
                shape,
                expected: format!("a shape with {expected} elements"),
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape,
            vec![self.clone()],
            Box::new(move |d_out| vec![d_out.to_vec()]),
        ))
    }
}

fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Single-head scaled dot-product attention.
///
/// `q` is `m×d`, `keys` and `values` are `n×d`. `key_mask[j] == true` bans
/// key `j`: its weight is exactly 0 (additive `-inf` before the softmax).
/// Returns `(output m×d, weights m×n)`.
pub fn scaled_dot_attention<S: Scalar>(
    q: &Tensor<S>,
    keys: &Tensor<S>,
    values: &Tensor<S>,
    key_mask: Option<&[bool]>,
) -> Result<(Tensor<S>, Tensor<S>), TensorError> {
    let (_m, d) = require_rank2(q, "attention")?;
    let (n, dk) = require_rank2(keys, "attention")?;
    if dk != d {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: keys.shape().to_vec(),
        });
    }
    let (nv, dv) = require_rank2(values, "attention")?;
    if nv != n || dv != d {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            lhs: keys.shape().to_vec(),
            rhs: values.shape().to_vec(),
        });
    }
    if let Some(mask) = key_mask {
        if mask.len() != n {
            return Err(TensorError::DataLenMismatch { expected: n, got: mask.len() });
        }
        if mask.iter().all(|&m| m) {
            return Err(TensorError::AllKeysMasked { query: 0 });
        }
    }

    let scores = q.matmul(&keys.transpose()?)?;
    let scaled = scores.scale(S::one() / S::from_f64(d as f64).sqrt());
    let masked = match key_mask {
        Some(mask) => {
            let m_rows = scaled.shape()[0];
            let mut full = Vec::with_capacity(m_rows * n);
            for _ in 0..m_rows {
                full.extend_from_slice(mask);
            }
            scaled.masked_fill(&full, S::neg_infinity())?
        }
        None => scaled,
    };
    let weights = masked.softmax_over_axis(1)?;
    let output = weights.matmul(values)?;
    Ok((output, weights))
}
