//! Trainable linear encoder over hashed token features.
//!
//! `embed(text) = W · hashed_features(text)` with `W` a `dim × hash_dim`
//! matrix. Training minimises the pairwise cosine-margin loss
//!
//! ```text
//! L = Σ max(cos(h_q, h⁻) − cos(h_q, h⁺) + margin, 0)
//! ```
//!
//! by full-batch gradient descent. Gradients are analytic; [`fd_check`]
//! compares them against central differences.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, dot, hashed_features, norm, validate_hash_dim, EmbeddingProvider, EmbeddingVector, HashedFeatures};
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self += scale · (v ⊗ x)` for a sparse `x`.
    fn add_outer(&mut self, v: &[f64], x: &HashedFeatures, scale: f64) {
        for (i, vi) in v.iter().enumerate() {
            if *vi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for &(j, xj) in &x.entries {
                row[j] += scale * vi * xj;
            }
        }
    }

    fn axpy(&mut self, alpha: f64, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    weights: Matrix,
}

impl LinearEncoder {
    pub fn new(weights: Matrix) -> Result<Self> {
        validate_hash_dim(weights.cols)?;
        if weights.rows == 0 {
            return Err(Error::InvalidArgument("encoder dimension must be > 0".into()));
        }
        if weights.data.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("encoder weights must be finite".into()));
        }
        Ok(LinearEncoder { weights })
    }

    /// Weights drawn uniformly from `[-init_scale, init_scale]` with a seeded ChaCha8 stream.
    pub fn random(dim: usize, hash_dim: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if !(init_scale > 0.0 && init_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("init_scale must be > 0, got {init_scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dim * hash_dim)
            .map(|_| rng.gen_range(-init_scale..=init_scale))
            .collect();
        Self::new(Matrix::from_vec(dim, hash_dim, data)?)
    }

    pub fn dim(&self) -> usize {
        self.weights.rows
    }

    pub fn hash_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let data = self.weights.data.iter().map(|w| w * factor).collect();
        LinearEncoder {
            weights: Matrix {
                data,
                ..self.weights
            },
        }
    }

    pub fn features(&self, text: &str) -> HashedFeatures {
        hashed_features(text, self.hash_dim())
    }

    pub fn project(&self, x: &HashedFeatures) -> Vec<f64> {
        let cols = self.weights.cols;
        (0..self.dim())
            .map(|i| {
                let row = &self.weights.data[i * cols..(i + 1) * cols];
                x.entries.iter().map(|&(j, c)| row[j] * c).sum()
            })
            .collect()
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        self.project(&self.features(text))
    }

    /// Serialises to the versioned text format (`KELP-ENC 1 <d> <H>` header).
    pub fn to_text(&self) -> String {
        let mut out = format!("KELP-ENC 1 {} {}\n", self.dim(), self.hash_dim());
        for i in 0..self.dim() {
            let row = &self.weights.data[i * self.hash_dim()..(i + 1) * self.hash_dim()];
            for (j, w) in row.iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                // Shortest representation that parses back to the same f64.
                write!(out, "{w:e}").expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let format_err = |line: usize, message: String| Error::Format {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| format_err(1, "empty encoder file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (dim, hash_dim) = match fields.as_slice() {
            ["KELP-ENC", "1", d, h] => {
                let d = d.parse::<usize>().map_err(|e| format_err(1, format!("bad dimension: {e}")))?;
                let h = h.parse::<usize>().map_err(|e| format_err(1, format!("bad hash dimension: {e}")))?;
                (d, h)
            }
            _ => return Err(format_err(1, format!("unrecognised header {header:?}"))),
        };
        let mut data = Vec::with_capacity(dim * hash_dim);
        for i in 0..dim {
            let line_no = i + 2;
            let line = lines
                .next()
                .ok_or_else(|| format_err(line_no, format!("expected {dim} weight rows")))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                let w = tok
                    .parse::<f64>()
                    .map_err(|e| format_err(line_no, format!("bad weight {tok:?}: {e}")))?;
                data.push(w);
            }
            if data.len() - before != hash_dim {
                return Err(format_err(
                    line_no,
                    format!("expected {hash_dim} weights, found {}", data.len() - before),
                ));
            }
        }
        if let Some((k, extra)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
            return Err(format_err(dim + 2 + k, format!("unexpected trailing content {extra:?}")));
        }
        LinearEncoder::new(Matrix::from_vec(dim, hash_dim, data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

impl EmbeddingProvider for LinearEncoder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| EmbeddingVector(self.embed_text(t))).collect())
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.dim())
    }
}

/// A question with one helpful and one unhelpful path sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub question: String,
    pub positive: String,
    pub negative: String,
}

impl TrainingPair {
    pub fn new(question: impl Into<String>, positive: impl Into<String>, negative: impl Into<String>) -> Result<Self> {
        let pair = TrainingPair {
            question: question.into(),
            positive: positive.into(),
            negative: negative.into(),
        };
        if pair.question.is_empty() || pair.positive.is_empty() || pair.negative.is_empty() {
            return Err(Error::InvalidArgument("training pair texts must be non-empty".into()));
        }
        Ok(pair)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.1,
            learning_rate: 0.1,
            epochs: 100,
            seed: 0,
            init_scale: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidArgument(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("init_scale must be > 0, got {}", self.init_scale)));
        }
        Ok(())
    }
}

/// Per-pair hinge `max(cos(q, minus) − cos(q, plus) + margin, 0)`.
pub fn pair_loss(h_q: &[f64], h_plus: &[f64], h_minus: &[f64], margin: f64) -> Result<f64> {
    let pos = cosine(h_q, h_plus)?;
    let neg = cosine(h_q, h_minus)?;
    let hinge = neg - pos + margin;
    // `f64::max` would turn NaN into 0 and hide divergence.
    Ok(if hinge.is_nan() { hinge } else { hinge.max(0.0) })
}

/// Gradient of `cos(a, b)` with respect to `a`; zero when either norm is zero.
fn cosine_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return vec![0.0; a.len()];
    }
    let c = dot(a, b) / (na * nb);
    a.iter()
        .zip(b)
        .map(|(ai, bi)| bi / (na * nb) - c * ai / (na * na))
        .collect()
}

struct EncodedPair {
    xq: HashedFeatures,
    xp: HashedFeatures,
    xn: HashedFeatures,
}

impl EncodedPair {
    fn new(encoder: &LinearEncoder, pair: &TrainingPair) -> Self {
        EncodedPair {
            xq: encoder.features(&pair.question),
            xp: encoder.features(&pair.positive),
            xn: encoder.features(&pair.negative),
        }
    }

    /// Adds this pair's gradient into `grad` and returns its loss.
    fn accumulate(&self, encoder: &LinearEncoder, margin: f64, grad: &mut Matrix) -> f64 {
        let hq = encoder.project(&self.xq);
        let hp = encoder.project(&self.xp);
        let hn = encoder.project(&self.xn);
        let loss = pair_loss(&hq, &hp, &hn, margin).expect("encoder outputs share a dimension");
        if !(loss > 0.0) {
            return loss;
        }
        let dq_neg = cosine_grad(&hq, &hn);
        let dq_pos = cosine_grad(&hq, &hp);
        let g_q: Vec<f64> = dq_neg.iter().zip(&dq_pos).map(|(a, b)| a - b).collect();
        let g_n = cosine_grad(&hn, &hq);
        let g_p = cosine_grad(&hp, &hq);
        grad.add_outer(&g_q, &self.xq, 1.0);
        grad.add_outer(&g_n, &self.xn, 1.0);
        grad.add_outer(&g_p, &self.xp, -1.0);
        loss
    }

    fn loss(&self, encoder: &LinearEncoder, margin: f64) -> f64 {
        let hq = encoder.project(&self.xq);
        let hp = encoder.project(&self.xp);
        let hn = encoder.project(&self.xn);
        pair_loss(&hq, &hp, &hn, margin).expect("encoder outputs share a dimension")
    }
}

/// Gradient of one pair's hinge loss with respect to the encoder weights.
///
/// Zero whenever the hinge is inactive, including exactly at the kink.
pub fn loss_gradient(encoder: &LinearEncoder, pair: &TrainingPair, margin: f64) -> Matrix {
    let mut grad = Matrix::zeros(encoder.dim(), encoder.hash_dim());
    EncodedPair::new(encoder, pair).accumulate(encoder, margin, &mut grad);
    grad
}

pub fn total_loss(encoder: &LinearEncoder, pairs: &[TrainingPair], margin: f64) -> f64 {
    pairs
        .iter()
        .map(|p| EncodedPair::new(encoder, p).loss(encoder, margin))
        .sum()
}

/// Fraction of pairs whose positive scores strictly above the negative.
pub fn ranking_rate(encoder: &LinearEncoder, pairs: &[TrainingPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let ranked = pairs
        .iter()
        .filter(|p| {
            let q = encoder.embed_text(&p.question);
            let pos = cosine(&q, &encoder.embed_text(&p.positive)).expect("same dimension");
            let neg = cosine(&q, &encoder.embed_text(&p.negative)).expect("same dimension");
            pos > neg
        })
        .count();
    ranked as f64 / pairs.len() as f64
}

const FD_ZERO_TOL: f64 = 1e-9;

/// Largest relative difference between [`loss_gradient`] and central
/// differences with the given step, over entries where either side is nonzero.
pub fn fd_check(encoder: &LinearEncoder, pair: &TrainingPair, margin: f64, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    let analytic = loss_gradient(encoder, pair, margin);
    let encoded = EncodedPair::new(encoder, pair);
    let mut columns: Vec<usize> = [&encoded.xq, &encoded.xp, &encoded.xn]
        .iter()
        .flat_map(|x| x.entries.iter().map(|&(j, _)| j))
        .collect();
    columns.sort_unstable();
    columns.dedup();

    let mut probe = encoder.clone();
    let mut worst: f64 = 0.0;
    for i in 0..encoder.dim() {
        for &j in &columns {
            let w = encoder.weights.get(i, j);
            probe.weights.set(i, j, w + step);
            let up = encoded.loss(&probe, margin);
            probe.weights.set(i, j, w - step);
            let down = encoded.loss(&probe, margin);
            probe.weights.set(i, j, w);
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(i, j);
            let scale = a.abs().max(numeric.abs());
            if scale > FD_ZERO_TOL {
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: LinearEncoder,
    /// Total loss at the start of each epoch, before that epoch's update.
    pub loss_trace: Vec<f64>,
    /// Total loss after the last update.
    pub final_loss: f64,
}

/// Full-batch gradient descent on the summed pairwise loss.
pub fn train(encoder: &LinearEncoder, pairs: &[TrainingPair], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("training requires at least one pair".into()));
    }
    let encoded: Vec<EncodedPair> = pairs.iter().map(|p| EncodedPair::new(encoder, p)).collect();
    let mut current = encoder.clone();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut grad = Matrix::zeros(current.dim(), current.hash_dim());
        let loss: f64 = encoded
            .iter()
            .map(|e| e.accumulate(&current, config.margin, &mut grad))
            .sum();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, loss });
        }
        trace.push(loss);
        log::debug!("epoch {epoch}: loss {loss}");
        current.weights.axpy(-config.learning_rate, &grad);
    }
    let final_loss: f64 = encoded.iter().map(|e| e.loss(&current, config.margin)).sum();
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: config.epochs,
            loss: final_loss,
        });
    }
    Ok(TrainOutcome {
        encoder: current,
        loss_trace: trace,
        final_loss,
    })
}

/// Linearly separable toy set used by the convergence checks.
///
/// Pair `i` asks about `subject{i}`; its positive mentions the same subject,
/// its negative shares no token with the question.
pub fn separable_pairs(n: usize) -> Vec<TrainingPair> {
    (0..n)
        .map(|i| TrainingPair {
            question: format!("according to the records which property does subject{i} have"),
            positive: format!("subject{i} holds trait{i}."),
            negative: format!("unrelated{i} mentions filler{i}."),
        })
        .collect()
}
