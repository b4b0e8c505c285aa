//! Softmax self-attention as a Gaussian-kernel Nadaraya–Watson smoother.
//!
//! With the quadratic embedding
//!
//! ```text
//! φ(z) = [1, z₁, …, z_d, z₁z₁, z₁z₂, …, z_dz_d]    (ℓ = 1 + d + d²)
//! ```
//!
//! every polynomial of degree ≤ 2 in `u` and ≤ 2 in `v` is a bilinear form
//! `φ(u)ᵀ A φ(v)`. Choosing `A` to produce `-(u - v)ᵀ Σ (u - v)` and `M` to
//! select the linear block of `φ` makes one attention head compute
//! exactly the kernel smoother with weights `exp(-(z - zᵢ)ᵀ Σ (z - zᵢ))`.

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, ensure_len, ensure_shape, ensure_symmetric, Matrix, Vector};

/// Length of the embedding for `d`-dimensional inputs.
pub fn embed_dim(d: usize) -> usize {
    1 + d + d * d
}

/// Position of the product `zᵢ zⱼ` inside the embedding (0-indexed).
pub fn quad_index(d: usize, i: usize, j: usize) -> usize {
    1 + d + i * d + j
}

/// Recovers the source dimension from an embedding length.
fn source_dim(ell: usize) -> Option<usize> {
    (0..=ell).find(|&d| embed_dim(d) == ell)
}

pub fn embed_phi(z: &Vector) -> Vector {
    let d = z.len();
    let mut out = Vector::zeros(embed_dim(d));
    out[0] = 1.0;
    out.rows_mut(1, d).copy_from(z);
    for i in 0..d {
        for j in 0..d {
            out[quad_index(d, i, j)] = z[i] * z[j];
        }
    }
    out
}

/// Builds `A` with `φ(u)ᵀ A φ(v) = -(u - v)ᵀ Σ (u - v)`.
pub fn build_attention_matrix(sigma: &Matrix) -> Result<Matrix> {
    ensure_symmetric("Sigma", sigma)?;
    ensure_finite("Sigma", sigma)?;
    let d = sigma.nrows();
    let ell = embed_dim(d);
    let mut a = Matrix::zeros(ell, ell);
    for i in 0..d {
        for j in 0..d {
            let s = sigma[(i, j)];
            let q = quad_index(d, i, j);
            a[(q, 0)] -= s;
            a[(1 + i, 1 + j)] += 2.0 * s;
            a[(0, q)] -= s;
        }
    }
    Ok(a)
}

/// `k × ℓ` matrix holding `W` in the linear-block columns, so that
/// `M φ(u) = W u`.
pub fn build_output_matrix(w_out: &Matrix) -> Matrix {
    let (k, d) = w_out.shape();
    let mut m = Matrix::zeros(k, embed_dim(d));
    m.view_mut((0, 1), (k, d)).copy_from(w_out);
    m
}

/// Kernel `Σ` and readout `W` of a Nadaraya–Watson smoother.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub sigma: Matrix,
    pub w_out: Matrix,
}

impl KernelSpec {
    pub fn new(sigma: Matrix, w_out: Matrix) -> Result<Self> {
        ensure_symmetric("Sigma", &sigma)?;
        ensure_finite("Sigma", &sigma)?;
        ensure_finite("W_out", &w_out)?;
        ensure_shape("W_out", &w_out, w_out.nrows(), sigma.nrows())?;
        Ok(Self { sigma, w_out })
    }

    pub fn input_dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.nrows()
    }
}

/// Parameters of a single softmax attention head over embedded tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    embed_dim: usize,
    attn_matrix: Matrix,
    out_matrix: Matrix,
}

impl AttentionParams {
    pub fn new(attn_matrix: Matrix, out_matrix: Matrix) -> Result<Self> {
        ensure_finite("attention matrix", &attn_matrix)?;
        ensure_finite("output matrix", &out_matrix)?;
        let ell = attn_matrix.nrows();
        ensure_shape("attention matrix", &attn_matrix, ell, ell)?;
        ensure_shape("output matrix", &out_matrix, out_matrix.nrows(), ell)?;
        Ok(Self {
            embed_dim: ell,
            attn_matrix,
            out_matrix,
        })
    }

    /// The head realizing the kernel smoother described by `spec`.
    pub fn from_kernel(spec: &KernelSpec) -> Result<Self> {
        Self::new(build_attention_matrix(&spec.sigma)?, build_output_matrix(&spec.w_out))
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Source dimension `d` when `ℓ = 1 + d + d²`.
    pub fn source_dim(&self) -> Option<usize> {
        source_dim(self.embed_dim)
    }

    pub fn attn_matrix(&self) -> &Matrix {
        &self.attn_matrix
    }

    pub fn out_matrix(&self) -> &Matrix {
        &self.out_matrix
    }

    pub fn output_dim(&self) -> usize {
        self.out_matrix.nrows()
    }
}

/// Softmax of `logits` computed after subtracting the maximum.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `Σᵢ wᵢ vᵢ` for weights `w` over vectors of length `dim`.
pub fn weighted_sum<'a>(dim: usize, weights: &[f64], values: impl IntoIterator<Item = &'a Vector>) -> Vector {
    let mut out = Vector::zeros(dim);
    for (w, v) in weights.iter().zip(values) {
        out.axpy(*w, v, 1.0);
    }
    out
}

/// Kernel weights `exp(-(z - zᵢ)ᵀ Σ (z - zᵢ))`, normalized.
pub fn kernel_weights(data: &[Vector], query: &Vector, sigma: &Matrix) -> Vec<f64> {
    let logits: Vec<f64> = data
        .iter()
        .map(|zi| {
            let diff = query - zi;
            -diff.dot(&(sigma * &diff))
        })
        .collect();
    softmax(&logits)
}

/// Nadaraya–Watson estimate `Σᵢ κᵢ W zᵢ / Σⱼ κⱼ` with Gaussian kernel `Σ`.
pub fn nadaraya_watson(data: &[Vector], query: &Vector, spec: &KernelSpec) -> Result<Vector> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("Nadaraya-Watson needs at least one datapoint".into()));
    }
    let d = spec.input_dim();
    ensure_len("query", query, d)?;
    for z in data {
        ensure_len("datapoint", z, d)?;
    }
    let weights = kernel_weights(data, query, &spec.sigma);
    let mapped: Vec<Vector> = data.iter().map(|z| &spec.w_out * z).collect();
    Ok(weighted_sum(spec.output_dim(), &weights, &mapped))
}

/// Attention weights `softmax(qᵀ A qᵢ)`.
pub fn attention_weights(tokens: &[Vector], query_token: &Vector, params: &AttentionParams) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("attention needs at least one token".into()));
    }
    ensure_len("query token", query_token, params.embed_dim)?;
    for t in tokens {
        ensure_len("token", t, params.embed_dim)?;
    }
    let projected = params.attn_matrix.tr_mul(query_token);
    let logits: Vec<f64> = tokens.iter().map(|t| projected.dot(t)).collect();
    Ok(softmax(&logits))
}

/// `Σᵢ exp(qᵀAqᵢ) M qᵢ / Σⱼ exp(qᵀAqⱼ)`.
pub fn attention_forward(tokens: &[Vector], query_token: &Vector, params: &AttentionParams) -> Result<Vector> {
    let weights = attention_weights(tokens, query_token, params)?;
    let values: Vec<Vector> = tokens.iter().map(|t| &params.out_matrix * t).collect();
    Ok(weighted_sum(params.output_dim(), &weights, &values))
}

/// Causally masked attention over the last `window` tokens ending at `t`,
/// queried by token `t`. Positions before the start of the sequence are
/// filled with `pad`.
pub fn windowed_forward(
    tokens: &[Vector],
    t: usize,
    window: usize,
    params: &AttentionParams,
    pad: &Vector,
) -> Result<Vector> {
    if window == 0 {
        return Err(Error::InvalidArgument("window H must be at least 1".into()));
    }
    if t >= tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "time index {t} outside a sequence of {} tokens",
            tokens.len()
        )));
    }
    let start = t as isize - window as isize + 1;
    let slice: Vec<Vector> = (start..=t as isize)
        .map(|i| if i < 0 { pad.clone() } else { tokens[i as usize].clone() })
        .collect();
    attention_forward(&slice, &tokens[t], params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Vector {
        Vector::from_column_slice(data)
    }

    #[test]
    fn embedding_examples() {
        assert_eq!(embed_phi(&v(&[2.0])), v(&[1.0, 2.0, 4.0]));
        assert_eq!(embed_phi(&v(&[0.0, 0.0, 0.0])), {
            let mut e = Vector::zeros(13);
            e[0] = 1.0;
            e
        });
        assert_eq!(embed_phi(&v(&[1.0, 2.0])), v(&[1.0, 1.0, 2.0, 1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn attention_matrix_scalar_layout() {
        let a = build_attention_matrix(&Matrix::from_element(1, 1, 1.5)).unwrap();
        let mut expected = Matrix::zeros(3, 3);
        expected[(2, 0)] = -1.5;
        expected[(1, 1)] = 3.0;
        expected[(0, 2)] = -1.5;
        assert_eq!(a, expected);
        assert_eq!(build_attention_matrix(&Matrix::zeros(2, 2)).unwrap(), Matrix::zeros(7, 7));
    }

    #[test]
    fn attention_matrix_rejects_asymmetric() {
        let s = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(build_attention_matrix(&s), Err(Error::NotSymmetric("Sigma")));
    }

    #[test]
    fn output_matrix_selects_linear_block() {
        let m = build_output_matrix(&Matrix::identity(2, 2));
        assert_eq!(&m * embed_phi(&v(&[3.0, 5.0])), v(&[3.0, 5.0]));
        assert_eq!(build_output_matrix(&Matrix::zeros(3, 2)), Matrix::zeros(3, 7));
    }

    #[test]
    fn nadaraya_watson_examples() {
        let data = vec![v(&[0.0]), v(&[1.0])];
        let spec = KernelSpec::new(Matrix::identity(1, 1), Matrix::identity(1, 1)).unwrap();
        let out = nadaraya_watson(&data, &v(&[0.0]), &spec).unwrap();
        let e = (-1.0f64).exp();
        assert!((out[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((out[0] - 0.268941).abs() < 1e-6);

        let flat = KernelSpec::new(Matrix::zeros(1, 1), Matrix::from_element(1, 1, 2.0)).unwrap();
        let data = vec![v(&[1.0]), v(&[2.0]), v(&[6.0])];
        let out = nadaraya_watson(&data, &v(&[100.0]), &flat).unwrap();
        assert!((out[0] - 6.0).abs() < 1e-14);

        let single = nadaraya_watson(&[v(&[3.0])], &v(&[-50.0]), &spec).unwrap();
        assert_eq!(single, v(&[3.0]));
    }

    #[test]
    fn nadaraya_watson_empty_is_error() {
        let spec = KernelSpec::new(Matrix::identity(1, 1), Matrix::identity(1, 1)).unwrap();
        assert!(nadaraya_watson(&[], &v(&[0.0]), &spec).is_err());
    }

    #[test]
    fn attention_uniform_and_single() {
        let params = AttentionParams::new(Matrix::zeros(3, 3), Matrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0])).unwrap();
        let tokens = vec![embed_phi(&v(&[1.0])), embed_phi(&v(&[2.0])), embed_phi(&v(&[6.0]))];
        let out = attention_forward(&tokens, &tokens[0], &params).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-15);
        let out = attention_forward(&tokens[2..], &tokens[0], &params).unwrap();
        assert_eq!(out[0], 6.0);
    }

    #[test]
    fn attention_dimension_errors() {
        let params = AttentionParams::new(Matrix::zeros(3, 3), Matrix::zeros(1, 3)).unwrap();
        assert!(attention_forward(&[], &v(&[1.0, 0.0, 0.0]), &params).is_err());
        assert!(attention_forward(&[v(&[1.0, 0.0])], &v(&[1.0, 0.0, 0.0]), &params).is_err());
        assert!(AttentionParams::new(Matrix::zeros(3, 3), Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn windowed_forward_slices() {
        let spec = KernelSpec::new(Matrix::from_element(1, 1, 0.3), Matrix::identity(1, 1)).unwrap();
        let params = AttentionParams::from_kernel(&spec).unwrap();
        let raw: Vec<Vector> = [0.5, -1.0, 2.0, 0.1, 1.5, -0.7].iter().map(|&x| v(&[x])).collect();
        let tokens: Vec<Vector> = raw.iter().map(embed_phi).collect();
        let pad = embed_phi(&v(&[0.0]));

        let got = windowed_forward(&tokens, 5, 3, &params, &pad).unwrap();
        let expected = attention_forward(&tokens[3..=5], &tokens[5], &params).unwrap();
        assert_eq!(got, expected);

        let got = windowed_forward(&tokens, 4, 1, &params, &pad).unwrap();
        assert!((got[0] - 1.5).abs() < 1e-15);

        let got = windowed_forward(&tokens, 2, 3, &params, &pad).unwrap();
        let expected = attention_forward(&tokens[..=2], &tokens[2], &params).unwrap();
        assert_eq!(got, expected);

        // window reaching before the start pulls in padding
        let got = windowed_forward(&tokens, 1, 3, &params, &pad).unwrap();
        let padded = vec![pad.clone(), tokens[0].clone(), tokens[1].clone()];
        assert_eq!(got, attention_forward(&padded, &tokens[1], &params).unwrap());

        assert!(windowed_forward(&tokens, 1, 0, &params, &pad).is_err());
    }

    #[test]
    fn source_dim_round_trip() {
        for d in 0..6 {
            let p = AttentionParams::new(Matrix::zeros(embed_dim(d), embed_dim(d)), Matrix::zeros(1, embed_dim(d))).unwrap();
            assert_eq!(p.source_dim(), Some(d));
        }
    }
}
