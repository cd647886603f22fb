//! Weight-shared (Siamese) linear dual-tower encoder trained with a margin
//! contrastive loss.
//!
//! Both towers are the same linear map `W` applied to L2-normalized hashed
//! token features, so query-side and passage-side encodings of one text are
//! identical. Training minimizes
//!
//! ```text
//! L = Σ_related (1 − s) + Σ_unrelated max(0, s − margin)
//! ```
//!
//! by full-batch gradient descent with step halving whenever a step would
//! increase the loss, which makes the per-epoch loss non-increasing.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexical::hashed_token_counts;
use super::{l2_norm, EmbeddingError, EmbeddingVector};

/// Hashed feature width fed into the towers.
pub const DEFAULT_INPUT_DIMS: usize = 512;

const MAX_STEP_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub text_a: String,
    pub text_b: String,
    pub related: bool,
}

impl TrainingPair {
    pub fn new(text_a: impl Into<String>, text_b: impl Into<String>, related: bool) -> Self {
        Self {
            text_a: text_a.into(),
            text_b: text_b.into(),
            related,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub dims: usize,
    pub input_dims: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            dims: super::DEFAULT_DIMS,
            input_dims: DEFAULT_INPUT_DIMS,
            epochs: 50,
            learning_rate: 0.5,
            margin: 0.2,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// `losses[0]` is the loss at initialization; `losses[e]` after epoch `e`.
    pub losses: Vec<f64>,
}

impl TrainingReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("losses always holds the initial value")
    }
}

/// The shared tower parameters, persisted as `{kind, dims, seed, matrix}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTowerEncoder {
    kind: String,
    dims: usize,
    seed: u64,
    /// `dims` rows by input-feature columns.
    matrix: Vec<Vec<f64>>,
}

impl DualTowerEncoder {
    /// Random initialization, uniform in `[-1, 1)`, reproducible from `seed`.
    pub fn initialize(dims: usize, input_dims: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dims == 0 || input_dims == 0 {
            return Err(EmbeddingError::Config("dims and input_dims must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = (0..dims)
            .map(|_| (0..input_dims).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Ok(Self {
            kind: "toy_dual_tower".into(),
            dims,
            seed,
            matrix,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn input_dims(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    fn features(&self, text: &str) -> Vec<f64> {
        let mut x = hashed_token_counts(text, self.input_dims());
        let n = l2_norm(&x);
        if n > 0.0 {
            x.iter_mut().for_each(|v| *v /= n);
        }
        x
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        EmbeddingVector::normalize(self.project(&self.features(text))).unwrap_or_else(|_| {
            log::warn!("text {text:?} projects to zero; embedding as e_0");
            EmbeddingVector::basis(self.dims)
        })
    }

    /// Query tower (E_q). Shares every parameter with [`Self::encode_passage`].
    pub fn encode_query(&self, text: &str) -> EmbeddingVector {
        self.embed(text)
    }

    /// Passage tower (E_p).
    pub fn encode_passage(&self, text: &str) -> EmbeddingVector {
        self.embed(text)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let json = serde_json::to_string(self).expect("encoder serializes");
        crate::corpus::write_atomic(path, json.as_bytes()).map_err(|e| EmbeddingError::Persist {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let persist_err = |reason: String| EmbeddingError::Persist {
            path: path.display().to_string(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| persist_err(e.to_string()))?;
        let enc: Self = serde_json::from_str(&text).map_err(|e| persist_err(e.to_string()))?;
        let cols = enc.input_dims();
        if enc.kind != "toy_dual_tower"
            || enc.matrix.len() != enc.dims
            || cols == 0
            || enc.matrix.iter().any(|r| r.len() != cols)
        {
            return Err(persist_err("matrix shape does not match dims".into()));
        }
        Ok(enc)
    }
}

struct PreparedPair {
    a: Vec<f64>,
    b: Vec<f64>,
    related: bool,
}

/// Per-pair loss term and its derivative with respect to the similarity.
fn pair_loss(s: f64, related: bool, margin: f64) -> (f64, f64) {
    if related {
        (1.0 - s, -1.0)
    } else if s > margin {
        (s - margin, 1.0)
    } else {
        (0.0, 0.0)
    }
}

fn cos_parts(u: &[f64], v: &[f64]) -> (f64, f64, f64) {
    let nu = l2_norm(u).max(f64::MIN_POSITIVE);
    let nv = l2_norm(v).max(f64::MIN_POSITIVE);
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (dot / (nu * nv), nu, nv)
}

fn total_loss(enc: &DualTowerEncoder, pairs: &[PreparedPair], margin: f64) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let (s, _, _) = cos_parts(&enc.project(&p.a), &enc.project(&p.b));
            pair_loss(s, p.related, margin).0
        })
        .sum()
}

fn gradient(enc: &DualTowerEncoder, pairs: &[PreparedPair], margin: f64) -> Vec<Vec<f64>> {
    let mut grad = vec![vec![0.0; enc.input_dims()]; enc.dims];
    for p in pairs {
        let u = enc.project(&p.a);
        let v = enc.project(&p.b);
        let (s, nu, nv) = cos_parts(&u, &v);
        let (_, dl_ds) = pair_loss(s, p.related, margin);
        if dl_ds == 0.0 {
            continue;
        }
        // ds/du = v/(|u||v|) - s u/|u|^2, symmetric for v
        for (i, row) in grad.iter_mut().enumerate() {
            let gu = dl_ds * (v[i] / (nu * nv) - s * u[i] / (nu * nu));
            let gv = dl_ds * (u[i] / (nu * nv) - s * v[i] / (nv * nv));
            for (j, g) in row.iter_mut().enumerate() {
                *g += gu * p.a[j] + gv * p.b[j];
            }
        }
    }
    grad
}

/// Trains a dual-tower encoder. Returns the encoder and the per-epoch loss curve.
pub fn train_dual_tower(
    pairs: &[TrainingPair],
    cfg: &TrainingConfig,
) -> Result<(DualTowerEncoder, TrainingReport), EmbeddingError> {
    if pairs.iter().any(|p| p.text_a.trim().is_empty() || p.text_b.trim().is_empty()) {
        return Err(EmbeddingError::EmptyInput);
    }
    let related = pairs.iter().filter(|p| p.related).count();
    if related == 0 || related == pairs.len() {
        return Err(EmbeddingError::Config(
            "training needs at least one related and one unrelated pair".into(),
        ));
    }
    if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(EmbeddingError::Config("learning_rate must be positive".into()));
    }

    let mut enc = DualTowerEncoder::initialize(cfg.dims, cfg.input_dims, cfg.seed)?;
    let prepared: Vec<PreparedPair> = pairs
        .iter()
        .map(|p| PreparedPair {
            a: enc.features(&p.text_a),
            b: enc.features(&p.text_b),
            related: p.related,
        })
        .collect();

    let mut loss = total_loss(&enc, &prepared, cfg.margin);
    let mut losses = vec![loss];
    let mut step = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        let grad = gradient(&enc, &prepared, cfg.margin);
        let mut accepted = false;
        for _ in 0..MAX_STEP_HALVINGS {
            let mut candidate = enc.clone();
            for (row, grow) in candidate.matrix.iter_mut().zip(&grad) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= step * g;
                }
            }
            let candidate_loss = total_loss(&candidate, &prepared, cfg.margin);
            if candidate_loss <= loss {
                enc = candidate;
                loss = candidate_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            log::debug!("epoch {epoch}: no descent step found, parameters unchanged");
        }
        losses.push(loss);
    }
    Ok((enc, TrainingReport { losses }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2_pairs() -> Vec<TrainingPair> {
        let q = "How much electricity is consumed per ton of primary aluminum produced smelting process?";
        vec![
            TrainingPair::new(
                q,
                "What are the process parameters related to electricity consumption in the primary aluminum smelting process?",
                true,
            ),
            TrainingPair::new(
                q,
                "What is typically chosen as the functional unit for carbon accounting of primary aluminum products?",
                false,
            ),
        ]
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainingConfig { epochs: 0, ..Default::default() };
        let (enc, report) = train_dual_tower(&fig2_pairs(), &cfg).unwrap();
        assert_eq!(enc, DualTowerEncoder::initialize(cfg.dims, cfg.input_dims, cfg.seed).unwrap());
        assert_eq!(report.losses.len(), 1);
    }

    #[test]
    fn related_pair_ends_closer_than_unrelated() {
        let pairs = fig2_pairs();
        let (enc, report) = train_dual_tower(&pairs, &TrainingConfig::default()).unwrap();
        assert!(report.final_loss() <= report.initial_loss());
        let q = enc.encode_query(&pairs[0].text_a);
        let rel = q.cosine(&enc.encode_passage(&pairs[0].text_b)).unwrap();
        let unrel = q.cosine(&enc.encode_passage(&pairs[1].text_b)).unwrap();
        assert!(rel > unrel, "related {rel} vs unrelated {unrel}");
    }

    #[test]
    fn towers_share_parameters() {
        let (enc, _) = train_dual_tower(&fig2_pairs(), &TrainingConfig::default()).unwrap();
        let t = "primary aluminum smelting";
        assert_eq!(enc.encode_query(t), enc.encode_passage(t));
    }

    #[test]
    fn degenerate_pair_sets_rejected() {
        let all_related: Vec<_> = fig2_pairs().into_iter().map(|mut p| { p.related = true; p }).collect();
        assert!(matches!(
            train_dual_tower(&all_related, &TrainingConfig::default()),
            Err(EmbeddingError::Config(_))
        ));
        assert!(train_dual_tower(&[], &TrainingConfig::default()).is_err());
    }

    #[test]
    fn loss_curve_is_non_increasing() {
        let (_, report) = train_dual_tower(&fig2_pairs(), &TrainingConfig::default()).unwrap();
        assert!(report.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn persisted_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        let enc = DualTowerEncoder::initialize(4, 8, 7).unwrap();
        enc.save(&path).unwrap();
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["dims", "kind", "matrix", "seed"]);
        assert_eq!(DualTowerEncoder::load(&path).unwrap(), enc);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pairs = fig2_pairs();
        let enc = DualTowerEncoder::initialize(3, 16, 1).unwrap();
        let prepared: Vec<PreparedPair> = pairs
            .iter()
            .map(|p| PreparedPair { a: enc.features(&p.text_a), b: enc.features(&p.text_b), related: p.related })
            .collect();
        let margin = -1.0; // keeps the hinge active so the loss is smooth here
        let grad = gradient(&enc, &prepared, margin);
        let h = 1e-6;
        for (i, j) in [(0, 0), (1, 5), (2, 11)] {
            let mut plus = enc.clone();
            plus.matrix[i][j] += h;
            let mut minus = enc.clone();
            minus.matrix[i][j] -= h;
            let fd = (total_loss(&plus, &prepared, margin) - total_loss(&minus, &prepared, margin)) / (2.0 * h);
            assert!((fd - grad[i][j]).abs() < 1e-6, "({i},{j}) fd {fd} vs analytic {}", grad[i][j]);
        }
    }
}
