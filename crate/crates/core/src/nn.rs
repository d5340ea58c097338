//! Three-layer ReLU MLP with softmax cross-entropy loss and exact analytic
//! backpropagation.
//!
//! Everything here is a pure function of its inputs: parameters travel as
//! flat [`ParamVector`]s whose layout is fixed by an [`MlpConfig`], so the
//! same vectors can be broadcast, differenced, and averaged by the
//! federation engine without reshaping.
//!
//! # Parameter layout
//!
//! Layer-major, weights before biases, weight matrices row-major with shape
//! `[out_dim × in_dim]`:
//!
//! ```text
//! [ W1 (h1×in) | b1 (h1) | W2 (h2×h1) | b2 (h2) | W3 (C×h2) | b3 (C) ]
//! ```
//!
//! The loss is the *sum* of per-sample cross-entropies over the mini-batch,
//! not the mean, so its magnitude scales with batch size. All arithmetic is
//! f64 with fixed accumulation order; identical inputs give bitwise
//! identical outputs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{matmul_nn, matmul_nt, matmul_tn, Matrix};

/// Architecture of the 3-layer fully-connected ReLU network.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: [usize; 2],
    pub num_classes: usize,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dims: [usize; 2], num_classes: usize) -> Result<Self> {
        let cfg = Self {
            input_dim,
            hidden_dims,
            num_classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_dims[0] == 0
            || self.hidden_dims[1] == 0
            || self.num_classes == 0
        {
            return Err(Error::InvalidConfig(format!(
                "all MLP dimensions must be >= 1, got input={}, hidden={:?}, classes={}",
                self.input_dim, self.hidden_dims, self.num_classes
            )));
        }
        Ok(())
    }

    /// Total number of parameters implied by the layer dimensions.
    pub fn param_count(&self) -> usize {
        let [h1, h2] = self.hidden_dims;
        let c = self.num_classes;
        h1 * self.input_dim + h1 + h2 * h1 + h2 + c * h2 + c
    }

    /// Byte offsets of each (weights, biases) block in the flat layout.
    fn layout(&self) -> [(usize, usize, usize, usize); 3] {
        // (w_off, w_len, b_off, b_len) per layer
        let [h1, h2] = self.hidden_dims;
        let c = self.num_classes;
        let dims = [(h1, self.input_dim), (h2, h1), (c, h2)];
        let mut out = [(0, 0, 0, 0); 3];
        let mut off = 0;
        for (i, (rows, cols)) in dims.iter().enumerate() {
            let w_len = rows * cols;
            out[i] = (off, w_len, off + w_len, *rows);
            off += w_len + rows;
        }
        out
    }
}

/// Flat model parameters laid out per [`MlpConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

/// Flat gradient with the same layout as its [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl GradientVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Euclidean norm; used by the clustering similarity guards.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A mini-batch of feature rows with integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidConfig("batch must contain at least one sample".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch {
                context: "batch labels vs feature rows",
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("batch features"));
        }
        Ok(Self { features, labels })
    }

    pub fn size(&self) -> usize {
        self.features.rows()
    }
}

fn check_dims(params: &ParamVector, cfg: &MlpConfig, batch: &Batch) -> Result<()> {
    if params.len() != cfg.param_count() {
        return Err(Error::ShapeMismatch {
            context: "parameter vector length",
            expected: cfg.param_count(),
            actual: params.len(),
        });
    }
    if batch.features.cols() != cfg.input_dim {
        return Err(Error::ShapeMismatch {
            context: "batch feature width",
            expected: cfg.input_dim,
            actual: batch.features.cols(),
        });
    }
    for &y in &batch.labels {
        if y >= cfg.num_classes {
            return Err(Error::IndexOutOfRange {
                context: "batch label",
                index: y,
                limit: cfg.num_classes,
            });
        }
    }
    Ok(())
}

/// Intermediate activations of one forward pass, kept for backprop.
struct ForwardPass {
    z1: Matrix,
    a1: Matrix,
    z2: Matrix,
    a2: Matrix,
    logits: Matrix,
}

fn affine(x: &Matrix, w: &[f64], b: &[f64], out_dim: usize) -> Matrix {
    let wmat = Matrix::from_vec(out_dim, x.cols(), w.to_vec()).expect("layout invariant");
    let mut out = Matrix::zeros(x.rows(), out_dim);
    matmul_nt(x, &wmat, &mut out);
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    out
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for v in out.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

fn run_forward(params: &ParamVector, cfg: &MlpConfig, batch: &Batch) -> ForwardPass {
    let p = params.as_slice();
    let lay = cfg.layout();
    let (w1, b1) = (&p[lay[0].0..lay[0].0 + lay[0].1], &p[lay[0].2..lay[0].2 + lay[0].3]);
    let (w2, b2) = (&p[lay[1].0..lay[1].0 + lay[1].1], &p[lay[1].2..lay[1].2 + lay[1].3]);
    let (w3, b3) = (&p[lay[2].0..lay[2].0 + lay[2].1], &p[lay[2].2..lay[2].2 + lay[2].3]);

    let z1 = affine(&batch.features, w1, b1, cfg.hidden_dims[0]);
    let a1 = relu(&z1);
    let z2 = affine(&a1, w2, b2, cfg.hidden_dims[1]);
    let a2 = relu(&z2);
    let logits = affine(&a2, w3, b3, cfg.num_classes);
    ForwardPass { z1, a1, z2, a2, logits }
}

/// Row-wise stable softmax: subtract the row max before exponentiating.
fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
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

/// Forward pass: returns the `[B × num_classes]` class-probability matrix.
///
/// Each row is a softmax distribution over the classes.
pub fn forward(params: &ParamVector, cfg: &MlpConfig, batch: &Batch) -> Result<Matrix> {
    check_dims(params, cfg, batch)?;
    let pass = run_forward(params, cfg, batch);
    Ok(softmax_rows(&pass.logits))
}

/// Sum of per-sample cross-entropy losses over the mini-batch.
///
/// Computed as `logsumexp(logits) - logit[label]` per row, which never takes
/// the log of a denormal probability.
pub fn batch_loss(params: &ParamVector, cfg: &MlpConfig, batch: &Batch) -> Result<f64> {
    check_dims(params, cfg, batch)?;
    let pass = run_forward(params, cfg, batch);
    loss_from_logits(&pass.logits, &batch.labels)
}

fn loss_from_logits(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        total += max + sum.ln() - row[y];
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("batch loss"));
    }
    Ok(total)
}

/// Exact gradient of [`batch_loss`] with respect to the parameters.
pub fn batch_gradient(
    params: &ParamVector,
    cfg: &MlpConfig,
    batch: &Batch,
) -> Result<GradientVector> {
    Ok(batch_loss_and_gradient(params, cfg, batch)?.1)
}

/// One forward/backward pass returning `(loss, gradient)` together.
///
/// The federation round needs both for every candidate cluster; sharing the
/// forward pass halves the work relative to calling the two ops separately.
pub fn batch_loss_and_gradient(
    params: &ParamVector,
    cfg: &MlpConfig,
    batch: &Batch,
) -> Result<(f64, GradientVector)> {
    check_dims(params, cfg, batch)?;
    let pass = run_forward(params, cfg, batch);
    let loss = loss_from_logits(&pass.logits, &batch.labels)?;

    let p = params.as_slice();
    let lay = cfg.layout();
    let mut grad = vec![0.0; p.len()];

    // dL/dlogits = softmax - onehot, unscaled because the loss is a sum.
    let mut d_logits = softmax_rows(&pass.logits);
    for (r, &y) in batch.labels.iter().enumerate() {
        let row = d_logits.row_mut(r);
        row[y] -= 1.0;
    }

    // Layer 3: dW3 = d_logitsᵀ · a2, db3 = column sums, da2 = d_logits · W3.
    {
        let (w_off, w_len, b_off, b_len) = lay[2];
        let mut dw = Matrix::zeros(cfg.num_classes, cfg.hidden_dims[1]);
        matmul_tn(&d_logits, &pass.a2, &mut dw);
        grad[w_off..w_off + w_len].copy_from_slice(dw.as_slice());
        col_sums(&d_logits, &mut grad[b_off..b_off + b_len]);
    }
    let w3 = Matrix::from_vec(
        cfg.num_classes,
        cfg.hidden_dims[1],
        p[lay[2].0..lay[2].0 + lay[2].1].to_vec(),
    )
    .expect("layout invariant");
    let mut d_a2 = Matrix::zeros(batch.size(), cfg.hidden_dims[1]);
    matmul_nn(&d_logits, &w3, &mut d_a2);

    // ReLU backward: pass gradient only where the pre-activation was > 0.
    let d_z2 = relu_backward(&d_a2, &pass.z2);

    // Layer 2.
    {
        let (w_off, w_len, b_off, b_len) = lay[1];
        let mut dw = Matrix::zeros(cfg.hidden_dims[1], cfg.hidden_dims[0]);
        matmul_tn(&d_z2, &pass.a1, &mut dw);
        grad[w_off..w_off + w_len].copy_from_slice(dw.as_slice());
        col_sums(&d_z2, &mut grad[b_off..b_off + b_len]);
    }
    let w2 = Matrix::from_vec(
        cfg.hidden_dims[1],
        cfg.hidden_dims[0],
        p[lay[1].0..lay[1].0 + lay[1].1].to_vec(),
    )
    .expect("layout invariant");
    let mut d_a1 = Matrix::zeros(batch.size(), cfg.hidden_dims[0]);
    matmul_nn(&d_z2, &w2, &mut d_a1);

    let d_z1 = relu_backward(&d_a1, &pass.z1);

    // Layer 1.
    {
        let (w_off, w_len, b_off, b_len) = lay[0];
        let mut dw = Matrix::zeros(cfg.hidden_dims[0], cfg.input_dim);
        matmul_tn(&d_z1, &batch.features, &mut dw);
        grad[w_off..w_off + w_len].copy_from_slice(dw.as_slice());
        col_sums(&d_z1, &mut grad[b_off..b_off + b_len]);
    }

    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("batch gradient"));
    }
    Ok((loss, GradientVector(grad)))
}

fn col_sums(m: &Matrix, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = 0.0;
    }
    for r in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
}

fn relu_backward(upstream: &Matrix, pre_activation: &Matrix) -> Matrix {
    let mut out = upstream.clone();
    for (v, &z) in out.as_mut_slice().iter_mut().zip(pre_activation.as_slice()) {
        // Subgradient at z == 0 is taken as 0.
        if z <= 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Plain SGD update: `params - lr * grad`, elementwise.
pub fn sgd_step(params: &ParamVector, grad: &GradientVector, lr: f64) -> Result<ParamVector> {
    if grad.len() != params.len() {
        return Err(Error::ShapeMismatch {
            context: "sgd_step gradient length",
            expected: params.len(),
            actual: grad.len(),
        });
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    let out = params
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(p, g)| p - lr * g)
        .collect();
    Ok(ParamVector(out))
}

/// Per-layer uniform init in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`.
pub fn init_params<R: Rng>(cfg: &MlpConfig, rng: &mut R) -> ParamVector {
    let [h1, h2] = cfg.hidden_dims;
    let dims = [(h1, cfg.input_dim), (h2, h1), (cfg.num_classes, h2)];
    let mut out = Vec::with_capacity(cfg.param_count());
    for (rows, cols) in dims {
        let bound = 1.0 / (cols as f64).sqrt();
        for _ in 0..rows * cols + rows {
            out.push(rng.gen_range(-bound..bound));
        }
    }
    ParamVector(out)
}

/// A differentiable model the federation engine can train.
///
/// [`MlpConfig`] is the production implementation; tests substitute tiny
/// hand-checkable objectives.
pub trait Model: Sync {
    fn param_count(&self) -> usize;
    fn batch_loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64>;
    fn batch_loss_and_gradient(
        &self,
        params: &ParamVector,
        batch: &Batch,
    ) -> Result<(f64, GradientVector)>;
    /// Predicted class label per batch row.
    fn predict(&self, params: &ParamVector, batch: &Batch) -> Result<Vec<usize>>;
}

impl Model for MlpConfig {
    fn param_count(&self) -> usize {
        MlpConfig::param_count(self)
    }

    fn batch_loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        batch_loss(params, self, batch)
    }

    fn batch_loss_and_gradient(
        &self,
        params: &ParamVector,
        batch: &Batch,
    ) -> Result<(f64, GradientVector)> {
        batch_loss_and_gradient(params, self, batch)
    }

    fn predict(&self, params: &ParamVector, batch: &Batch) -> Result<Vec<usize>> {
        let probs = forward(params, self, batch)?;
        let mut out = Vec::with_capacity(probs.rows());
        for r in 0..probs.rows() {
            let row = probs.row(r);
            // Ties resolve to the lowest class index.
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> MlpConfig {
        MlpConfig::new(3, [4, 4], 2).unwrap()
    }

    fn random_batch(cfg: &MlpConfig, n: usize, rng: &mut ChaCha8Rng) -> Batch {
        let mut feats = Matrix::zeros(n, cfg.input_dim);
        for v in feats.as_mut_slice() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let labels = (0..n).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
        Batch::new(feats, labels).unwrap()
    }

    fn random_params(cfg: &MlpConfig, rng: &mut ChaCha8Rng) -> ParamVector {
        ParamVector((0..cfg.param_count()).map(|_| rng.gen_range(-0.5..0.5)).collect())
    }

    #[test]
    fn param_count_matches_layout() {
        let cfg = MlpConfig::new(784, [64, 64], 10).unwrap();
        assert_eq!(cfg.param_count(), 784 * 64 + 64 + 64 * 64 + 64 + 64 * 10 + 10);
    }

    #[test]
    fn zero_params_give_uniform_rows() {
        let cfg = small_cfg();
        let params = ParamVector::zeros(cfg.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = random_batch(&cfg, 5, &mut rng);
        let probs = forward(&params, &cfg, &batch).unwrap();
        for r in 0..probs.rows() {
            for &v in probs.row(r) {
                assert!((v - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_sample_output_shape() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = random_params(&cfg, &mut rng);
        let batch = random_batch(&cfg, 1, &mut rng);
        let probs = forward(&params, &cfg, &batch).unwrap();
        assert_eq!((probs.rows(), probs.cols()), (1, cfg.num_classes));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let params = random_params(&cfg, &mut rng);
            let batch = random_batch(&cfg, 6, &mut rng);
            let probs = forward(&params, &cfg, &batch).unwrap();
            for r in 0..probs.rows() {
                let sum: f64 = probs.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
            }
        }
    }

    #[test]
    fn zero_params_loss_is_b_ln_c() {
        let cfg = small_cfg();
        let params = ParamVector::zeros(cfg.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batch = random_batch(&cfg, 7, &mut rng);
        let loss = batch_loss(&params, &cfg, &batch).unwrap();
        assert!((loss - 7.0 * (2.0f64).ln()).abs() < 1e-10);
    }

    #[test]
    fn duplicating_batch_doubles_loss() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = random_params(&cfg, &mut rng);
        let batch = random_batch(&cfg, 4, &mut rng);

        let mut rows2: Vec<Vec<f64>> = Vec::new();
        let mut labels2 = Vec::new();
        for _ in 0..2 {
            for r in 0..batch.size() {
                rows2.push(batch.features.row(r).to_vec());
                labels2.push(batch.labels[r]);
            }
        }
        let doubled = Batch::new(Matrix::from_rows(&rows2).unwrap(), labels2).unwrap();

        let l1 = batch_loss(&params, &cfg, &batch).unwrap();
        let l2 = batch_loss(&params, &cfg, &doubled).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-9);
    }

    /// Independent per-sample oracle: evaluate each sample alone via the
    /// direct softmax formula and sum the cross-entropies.
    fn per_sample_loss_oracle(params: &ParamVector, cfg: &MlpConfig, batch: &Batch) -> f64 {
        let mut total = 0.0;
        for r in 0..batch.size() {
            let single = Batch::new(
                Matrix::from_rows(&[batch.features.row(r).to_vec()]).unwrap(),
                vec![batch.labels[r]],
            )
            .unwrap();
            let probs = forward(params, cfg, &single).unwrap();
            total += -probs.get(0, batch.labels[r]).ln();
        }
        total
    }

    #[test]
    fn loss_matches_per_sample_oracle() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let params = random_params(&cfg, &mut rng);
            let batch = random_batch(&cfg, 6, &mut rng);
            let fast = batch_loss(&params, &cfg, &batch).unwrap();
            let oracle = per_sample_loss_oracle(&params, &cfg, &batch);
            assert!((fast - oracle).abs() < 1e-9, "fast={fast} oracle={oracle}");
        }
    }

    #[test]
    fn loss_invariant_under_sample_permutation() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = random_params(&cfg, &mut rng);
        let batch = random_batch(&cfg, 5, &mut rng);

        let perm = [3usize, 0, 4, 1, 2];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| batch.features.row(i).to_vec()).collect();
        let labels: Vec<usize> = perm.iter().map(|&i| batch.labels[i]).collect();
        let shuffled = Batch::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap();

        let a = batch_loss(&params, &cfg, &batch).unwrap();
        let b = batch_loss(&params, &cfg, &shuffled).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    /// Central finite differences of batch_loss, the independent gradient
    /// oracle used by the acceptance suite as well.
    pub(crate) fn finite_difference_gradient(
        params: &ParamVector,
        cfg: &MlpConfig,
        batch: &Batch,
        step: f64,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.0[i] += step;
            let mut minus = params.clone();
            minus.0[i] -= step;
            let lp = batch_loss(&plus, cfg, batch).unwrap();
            let lm = batch_loss(&minus, cfg, batch).unwrap();
            out.push((lp - lm) / (2.0 * step));
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let params = random_params(&cfg, &mut rng);
        let batch = random_batch(&cfg, 5, &mut rng);
        let analytic = batch_gradient(&params, &cfg, &batch).unwrap();
        let numeric = finite_difference_gradient(&params, &cfg, &batch, 1e-5);
        for (i, (&a, &f)) in analytic.as_slice().iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(f.abs()).max(1.0);
            assert!(
                (a - f).abs() / denom <= 1e-4,
                "coordinate {i}: analytic {a} vs numeric {f}"
            );
        }
    }

    #[test]
    fn gradient_zero_at_critical_point() {
        // Zero params with a label-balanced batch: softmax is uniform, the
        // logit gradient sums to zero per class, and all activations are 0.
        let cfg = MlpConfig::new(1, [1, 1], 2).unwrap();
        let params = ParamVector::zeros(cfg.param_count());
        let feats = Matrix::from_rows(&[vec![1.5], vec![-0.5], vec![0.25], vec![2.0]]).unwrap();
        let batch = Batch::new(feats, vec![0, 1, 0, 1]).unwrap();
        let grad = batch_gradient(&params, &cfg, &batch).unwrap();
        for &g in grad.as_slice() {
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn gradient_is_additive_over_batches() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let params = random_params(&cfg, &mut rng);
        let b1 = random_batch(&cfg, 3, &mut rng);
        let b2 = random_batch(&cfg, 4, &mut rng);

        let mut rows: Vec<Vec<f64>> = (0..b1.size()).map(|r| b1.features.row(r).to_vec()).collect();
        rows.extend((0..b2.size()).map(|r| b2.features.row(r).to_vec()));
        let mut labels = b1.labels.clone();
        labels.extend(&b2.labels);
        let concat = Batch::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap();

        let g1 = batch_gradient(&params, &cfg, &b1).unwrap();
        let g2 = batch_gradient(&params, &cfg, &b2).unwrap();
        let gc = batch_gradient(&params, &cfg, &concat).unwrap();
        for i in 0..gc.len() {
            assert!((gc.as_slice()[i] - (g1.as_slice()[i] + g2.as_slice()[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn sgd_step_basic_cases() {
        let p = ParamVector(vec![1.0, 2.0]);
        let g = GradientVector(vec![0.5, -1.0]);
        let out = sgd_step(&p, &g, 0.1).unwrap();
        assert!((out.0[0] - 0.95).abs() < 1e-15);
        assert!((out.0[1] - 2.1).abs() < 1e-15);

        let zero = GradientVector(vec![0.0, 0.0]);
        let same = sgd_step(&p, &zero, 0.3).unwrap();
        assert_eq!(same, p);
    }

    #[test]
    fn sgd_two_steps_equal_one_summed_step() {
        let p = ParamVector(vec![0.5, -0.25, 3.0]);
        let g1 = GradientVector(vec![1.0, 2.0, -0.5]);
        let g2 = GradientVector(vec![-0.5, 0.25, 4.0]);
        let lr = 0.125; // power of two so the additions commute exactly
        let two = sgd_step(&sgd_step(&p, &g1, lr).unwrap(), &g2, lr).unwrap();
        let summed = GradientVector(
            g1.as_slice().iter().zip(g2.as_slice()).map(|(a, b)| a + b).collect(),
        );
        let one = sgd_step(&p, &summed, lr).unwrap();
        for i in 0..3 {
            assert!((two.0[i] - one.0[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_structural_error() {
        let cfg = small_cfg();
        let params = ParamVector::zeros(cfg.param_count() + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let batch = random_batch(&cfg, 2, &mut rng);
        let err = forward(&params, &cfg, &batch).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");

        let wide = Batch::new(Matrix::zeros(2, cfg.input_dim + 1), vec![0, 1]).unwrap();
        let err = batch_loss(&ParamVector::zeros(cfg.param_count()), &cfg, &wide).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn predict_breaks_ties_low() {
        let cfg = small_cfg();
        let params = ParamVector::zeros(cfg.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let batch = random_batch(&cfg, 3, &mut rng);
        // Uniform probabilities everywhere: every prediction is class 0.
        assert_eq!(Model::predict(&cfg, &params, &batch).unwrap(), vec![0, 0, 0]);
    }
}
