//! Building blocks of the predictor: positional encoding, scaled
//! dot-product attention, multi-head attention, dense layers, and layer
//! normalization, each with an explicit backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::transformer::Tensor;

/// Sinusoidal absolute positional encoding:
/// PE[pos, 2i] = sin(pos / 10000^(2i/d_model)),
/// PE[pos, 2i+1] = cos(pos / 10000^(2i/d_model)).
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if len == 0 {
        return Err(Error::config("positional encoding needs length >= 1"));
    }
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::config(format!("d_model must be even, got {d_model}")));
    }
    let mut pe = Tensor::zeros(&[len, d_model]);
    for pos in 0..len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            *pe.at_mut(pos, 2 * i) = angle.sin();
            *pe.at_mut(pos, 2 * i + 1) = angle.cos();
        }
    }
    Ok(pe)
}

/// Row-wise stable softmax.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of row-wise softmax: given the softmax output `a` and the
/// upstream gradient, returns the gradient on the scores.
pub fn softmax_backward_rows(a: &Tensor, grad: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.shape());
    for r in 0..a.rows() {
        let arow = a.row(r);
        let grow = grad.row(r);
        let dot: f64 = arow.iter().zip(grow).map(|(x, g)| x * g).sum();
        for (o, (&x, &g)) in out.row_mut(r).iter_mut().zip(arow.iter().zip(grow)) {
            *o = x * (g - dot);
        }
    }
    out
}

/// Scaled dot-product attention, Attention(Q, K, V) =
/// softmax(Q K^T / sqrt(d_k)) V. Returns the output and the weight
/// matrix (each row a probability vector).
pub fn scaled_dot_product_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    if q.shape().len() != 2 || k.shape().len() != 2 || v.shape().len() != 2 {
        return Err(Error::domain("attention expects 2-D inputs"));
    }
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::domain(format!(
            "attention shape mismatch: Q {:?}, K {:?}, V {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut scores = q.matmul_transpose(k)?;
    scores.scale(1.0 / (q.cols() as f64).sqrt());
    let weights = softmax_rows(&scores);
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

/// Dense layer y = x W + b with W of shape in x out.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn seeded(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
            .collect();
        Linear {
            w: Tensor::from_vec(&[in_dim, out_dim], data).unwrap(),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear { w: Tensor::zeros(&[in_dim, out_dim]), b: Tensor::zeros(&[out_dim]) }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(&self.w)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(self.b.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Returns (grad_x, grad_w, grad_b).
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let grad_x = grad_out.matmul_transpose(&self.w)?;
        let grad_w = x.transpose_matmul(grad_out)?;
        let mut grad_b = Tensor::zeros(&[self.b.len()]);
        for r in 0..grad_out.rows() {
            for (g, v) in grad_b.data_mut().iter_mut().zip(grad_out.row(r)) {
                *g += v;
            }
        }
        Ok((grad_x, grad_w, grad_b))
    }
}

/// Row-wise layer normalization with learned gain/offset.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

pub struct LayerNormCache {
    /// Normalized activations before gain/offset.
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize, eps: f64) -> Self {
        LayerNorm {
            gamma: Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap(),
            beta: Tensor::zeros(&[dim]),
            eps,
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LayerNormCache) {
        let d = x.cols();
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let h = (row[c] - mean) * is;
                *xhat.at_mut(r, c) = h;
                *out.at_mut(r, c) = self.gamma.data()[c] * h + self.beta.data()[c];
            }
        }
        (out, LayerNormCache { xhat, inv_std })
    }

    /// Returns (grad_x, grad_gamma, grad_beta).
    pub fn backward(&self, cache: &LayerNormCache, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
        let d = grad_out.cols();
        let mut grad_x = Tensor::zeros(grad_out.shape());
        let mut g_gamma = Tensor::zeros(&[d]);
        let mut g_beta = Tensor::zeros(&[d]);
        for r in 0..grad_out.rows() {
            let dy = grad_out.row(r);
            let xhat = cache.xhat.row(r);
            for c in 0..d {
                g_gamma.data_mut()[c] += dy[c] * xhat[c];
                g_beta.data_mut()[c] += dy[c];
            }
            let dxhat: Vec<f64> = (0..d).map(|c| dy[c] * self.gamma.data()[c]).collect();
            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_xhat =
                dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let is = cache.inv_std[r];
            for c in 0..d {
                *grad_x.at_mut(r, c) = is * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
            }
        }
        (grad_x, g_gamma, g_beta)
    }
}

/// Multi-head self-attention with packed projection matrices; head i
/// owns columns [i*d_k, (i+1)*d_k).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub heads: usize,
}

pub struct AttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per-head softmax weights.
    weights: Vec<Tensor>,
    /// Concatenated head outputs before the output projection.
    concat: Tensor,
}

pub struct AttentionGrads {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

fn head_slice(t: &Tensor, head: usize, d_k: usize) -> Tensor {
    let rows = t.rows();
    let mut out = Tensor::zeros(&[rows, d_k]);
    for r in 0..rows {
        let src = &t.row(r)[head * d_k..(head + 1) * d_k];
        out.row_mut(r).copy_from_slice(src);
    }
    out
}

fn head_slice_write(dst: &mut Tensor, head: usize, d_k: usize, src: &Tensor) {
    for r in 0..dst.rows() {
        let d = &mut dst.row_mut(r)[head * d_k..(head + 1) * d_k];
        d.copy_from_slice(src.row(r));
    }
}

impl MultiHeadAttention {
    pub fn seeded(d_model: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let proj = |rng: &mut ChaCha8Rng| {
            let limit = (6.0 / (2 * d_model) as f64).sqrt();
            let data: Vec<f64> = (0..d_model * d_model)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
                .collect();
            Tensor::from_vec(&[d_model, d_model], data).unwrap()
        };
        MultiHeadAttention {
            wq: proj(rng),
            wk: proj(rng),
            wv: proj(rng),
            wo: proj(rng),
            heads,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let d_model = x.cols();
        if d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} not divisible by {} heads",
                self.heads
            )));
        }
        let d_k = d_model / self.heads;
        let q = x.matmul(&self.wq)?;
        let k = x.matmul(&self.wk)?;
        let v = x.matmul(&self.wv)?;
        let mut concat = Tensor::zeros(&[x.rows(), d_model]);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = (head_slice(&q, h, d_k), head_slice(&k, h, d_k), head_slice(&v, h, d_k));
            let (out_h, w_h) = scaled_dot_product_attention(&qh, &kh, &vh)?;
            head_slice_write(&mut concat, h, d_k, &out_h);
            weights.push(w_h);
        }
        let out = concat.matmul(&self.wo)?;
        Ok((out, AttentionCache { q, k, v, weights, concat }))
    }

    /// Returns (grad_x, parameter grads).
    pub fn backward(
        &self,
        x: &Tensor,
        cache: &AttentionCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, AttentionGrads)> {
        let d_model = x.cols();
        let d_k = d_model / self.heads;
        let scale = 1.0 / (d_k as f64).sqrt();

        let g_wo = cache.concat.transpose_matmul(grad_out)?;
        let grad_concat = grad_out.matmul_transpose(&self.wo)?;

        let mut grad_q = Tensor::zeros(&[x.rows(), d_model]);
        let mut grad_k = Tensor::zeros(&[x.rows(), d_model]);
        let mut grad_v = Tensor::zeros(&[x.rows(), d_model]);
        for h in 0..self.heads {
            let grad_out_h = head_slice(&grad_concat, h, d_k);
            let qh = head_slice(&cache.q, h, d_k);
            let kh = head_slice(&cache.k, h, d_k);
            let vh = head_slice(&cache.v, h, d_k);
            let a = &cache.weights[h];

            let grad_a = grad_out_h.matmul_transpose(&vh)?;
            let grad_vh = a.transpose_matmul(&grad_out_h)?;
            let mut grad_scores = softmax_backward_rows(a, &grad_a);
            grad_scores.scale(scale);
            let grad_qh = grad_scores.matmul(&kh)?;
            let grad_kh = grad_scores.transpose_matmul(&qh)?;

            head_slice_write(&mut grad_q, h, d_k, &grad_qh);
            head_slice_write(&mut grad_k, h, d_k, &grad_kh);
            head_slice_write(&mut grad_v, h, d_k, &grad_vh);
        }

        let g_wq = x.transpose_matmul(&grad_q)?;
        let g_wk = x.transpose_matmul(&grad_k)?;
        let g_wv = x.transpose_matmul(&grad_v)?;
        let mut grad_x = grad_q.matmul_transpose(&self.wq)?;
        grad_x.add_assign(&grad_k.matmul_transpose(&self.wk)?)?;
        grad_x.add_assign(&grad_v.matmul_transpose(&self.wv)?)?;
        Ok((grad_x, AttentionGrads { wq: g_wq, wk: g_wk, wv: g_wv, wo: g_wo }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn positional_encoding_matches_direct_evaluation() {
        let pe = positional_encoding(40, 16).unwrap();
        // pos = 0: even columns sin(0) = 0, odd columns cos(0) = 1.
        for i in 0..8 {
            assert_eq!(pe.at(0, 2 * i), 0.0);
            assert_eq!(pe.at(0, 2 * i + 1), 1.0);
        }
        // pos = 1, i = 0: sin(1).
        assert!((pe.at(1, 0) - 0.8414709848078965).abs() < 1e-15);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(positional_encoding(4, 7).is_err());
        assert!(positional_encoding(0, 8).is_err());
    }

    #[test]
    fn attention_single_key_returns_value() {
        let q = Tensor::from_vec(&[1, 2], vec![0.3, -0.7]).unwrap();
        let k = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let v = Tensor::from_vec(&[1, 3], vec![5.0, -1.0, 2.0]).unwrap();
        let (out, w) = scaled_dot_product_attention(&q, &k, &v).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let q = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        let k = Tensor::from_vec(&[2, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let v = Tensor::from_vec(&[2, 2], vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        let (out, w) = scaled_dot_product_attention(&q, &k, &v).unwrap();
        assert!((w.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((w.at(0, 1) - 0.5).abs() < 1e-15);
        assert!((out.at(0, 0) - 4.0).abs() < 1e-12);
        assert!((out.at(0, 1) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut r = rng::stream(4, "softmax", 0);
        use rand::Rng;
        for _ in 0..50 {
            let t = 2 + (r.random::<u64>() % 6) as usize;
            let data: Vec<f64> = (0..t * t).map(|_| r.random::<f64>() * 10.0 - 5.0).collect();
            let x = Tensor::from_vec(&[t, t], data.clone()).unwrap();
            let s = softmax_rows(&x);
            for row in 0..t {
                let sum: f64 = s.row(row).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
            // Adding a constant to one row leaves that row unchanged.
            let mut shifted = x.clone();
            for v in shifted.row_mut(0) {
                *v += 3.7;
            }
            let s2 = softmax_rows(&shifted);
            for c in 0..t {
                assert!((s.at(0, c) - s2.at(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_head_with_identity_output_matches_plain_attention() {
        let mut r = rng::stream(11, "mha", 0);
        let d = 4;
        let mut mha = MultiHeadAttention::seeded(d, 1, &mut r);
        let mut eye = Tensor::zeros(&[d, d]);
        for i in 0..d {
            *eye.at_mut(i, i) = 1.0;
        }
        mha.wo = eye;
        use rand::Rng;
        let data: Vec<f64> = (0..3 * d).map(|_| r.random::<f64>() - 0.5).collect();
        let x = Tensor::from_vec(&[3, d], data).unwrap();
        let (out, _) = mha.forward(&x).unwrap();
        let q = x.matmul(&mha.wq).unwrap();
        let k = x.matmul(&mha.wk).unwrap();
        let v = x.matmul(&mha.wv).unwrap();
        let (direct, _) = scaled_dot_product_attention(&q, &k, &v).unwrap();
        for (a, b) in out.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_values_give_zero_output() {
        let mut r = rng::stream(12, "mha-zero", 0);
        let mut mha = MultiHeadAttention::seeded(8, 2, &mut r);
        mha.wv = Tensor::zeros(&[8, 8]);
        use rand::Rng;
        let data: Vec<f64> = (0..5 * 8).map(|_| r.random::<f64>()).collect();
        let x = Tensor::from_vec(&[5, 8], data).unwrap();
        let (out, _) = mha.forward(&x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    /// Independent dense evaluation of multi-head attention: per-head
    /// projection matrices applied explicitly, naive softmax, explicit
    /// concatenation, written without the packed-matrix layout.
    fn dense_multi_head_oracle(x: &Tensor, mha: &MultiHeadAttention) -> Vec<f64> {
        let t = x.rows();
        let d = x.cols();
        let h = mha.heads;
        let d_k = d / h;
        let get = |w: &Tensor, r: usize, c: usize| w.at(r, c);
        let mut concat = vec![vec![0.0; d]; t];
        for head in 0..h {
            // Per-head projections W_i^Q etc. are the packed columns.
            let mut qh = vec![vec![0.0; d_k]; t];
            let mut kh = vec![vec![0.0; d_k]; t];
            let mut vh = vec![vec![0.0; d_k]; t];
            for r in 0..t {
                for c in 0..d_k {
                    for m in 0..d {
                        qh[r][c] += x.at(r, m) * get(&mha.wq, m, head * d_k + c);
                        kh[r][c] += x.at(r, m) * get(&mha.wk, m, head * d_k + c);
                        vh[r][c] += x.at(r, m) * get(&mha.wv, m, head * d_k + c);
                    }
                }
            }
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| {
                        (0..d_k).map(|c| qh[i][c] * kh[j][c]).sum::<f64>() / (d_k as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in 0..d_k {
                    let val: f64 = (0..t).map(|j| exps[j] / z * vh[j][c]).sum();
                    concat[i][head * d_k + c] = val;
                }
            }
        }
        let mut out = vec![0.0; t * d];
        for i in 0..t {
            for c in 0..d {
                out[i * d + c] = (0..d).map(|m| concat[i][m] * get(&mha.wo, m, c)).sum();
            }
        }
        out
    }

    #[test]
    fn two_heads_match_dense_oracle() {
        let mut r = rng::stream(13, "mha-oracle", 0);
        let mha = MultiHeadAttention::seeded(4, 2, &mut r);
        use rand::Rng;
        let data: Vec<f64> = (0..3 * 4).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let x = Tensor::from_vec(&[3, 4], data).unwrap();
        let (out, _) = mha.forward(&x).unwrap();
        let oracle = dense_multi_head_oracle(&x, &mha);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let x = Tensor::from_vec(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 3.0, 10.0]).unwrap();
        let ln = LayerNorm::new(4, 1e-5);
        let (y, _) = ln.forward(&x);
        for r in 0..2 {
            let mean: f64 = y.row(r).iter().sum::<f64>() / 4.0;
            let var: f64 = y.row(r).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
