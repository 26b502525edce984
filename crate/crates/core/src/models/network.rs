use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{log_softmax_row, softmax_rows, ParamLayout};
use crate::scoring::ScoreError;
use crate::seqcore::rng::seeded;

/// Output of one forward pass over a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// One row of unnormalized log-probabilities per position.
    pub logits: Array2<f64>,
    /// One row of hidden features per position.
    pub embeddings: Array2<f64>,
}

impl Forward {
    pub fn probabilities(&self) -> Array2<f64> {
        let mut p = self.logits.clone();
        softmax_rows(&mut p);
        p
    }
}

/// A trainable masked language model over `alphabet_size` symbols plus a
/// mask token with id `alphabet_size`.
pub trait Network: Send + Sync {
    type Cache;

    fn alphabet_size(&self) -> usize;
    fn embedding_width(&self) -> usize;
    fn context_cap(&self) -> Option<usize>;
    fn layout(&self) -> &ParamLayout;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn forward_cached(&self, tokens: &[usize]) -> Result<(Forward, Self::Cache), ScoreError>;

    /// Accumulates the parameter gradient of a loss whose gradient with
    /// respect to the logits is `dlogits`.
    fn backward(&self, cache: &Self::Cache, dlogits: &ArrayView2<f64>, grad: &mut [f64]);

    fn mask_token(&self) -> usize {
        self.alphabet_size()
    }

    fn forward(&self, tokens: &[usize]) -> Result<Forward, ScoreError> {
        Ok(self.forward_cached(tokens)?.0)
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), ScoreError> {
        if tokens.is_empty() {
            return Err(ScoreError::InvalidQuery("empty token sequence".into()));
        }
        if let Some(cap) = self.context_cap() {
            if tokens.len() > cap {
                return Err(ScoreError::ContextOverflow { len: tokens.len(), cap });
            }
        }
        if let Some(&t) = tokens.iter().find(|&&t| t > self.mask_token()) {
            return Err(ScoreError::InvalidQuery(format!("token {t} outside the vocabulary")));
        }
        Ok(())
    }
}

/// Soft target for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub position: usize,
    pub probs: Vec<f64>,
}

impl Target {
    pub fn hard(position: usize, symbol: usize, width: usize) -> Self {
        let mut probs = vec![0.0; width];
        probs[symbol] = 1.0;
        Self { position, probs }
    }
}

/// Mean cross-entropy over the targets and its gradient with respect to the
/// logits. The gradient at a target row is `(softmax - target) / n`, so a
/// target equal to the model output contributes exactly zero.
pub fn soft_cross_entropy(logits: &Array2<f64>, targets: &[Target]) -> (f64, Array2<f64>) {
    let mut d = Array2::zeros(logits.raw_dim());
    if targets.is_empty() {
        return (0.0, d);
    }
    let n = targets.len() as f64;
    let mut loss = 0.0;
    for t in targets {
        let ls = log_softmax_row(logits.row(t.position));
        let mut row = d.row_mut(t.position);
        for (k, (&l, &q)) in ls.iter().zip(&t.probs).enumerate() {
            if q > 0.0 {
                loss -= q * l;
            }
            row[k] += (l.exp() - q) / n;
        }
    }
    (loss / n, d)
}

pub fn loss_and_grad<N: Network>(
    net: &N,
    tokens: &[usize],
    targets: &[Target],
    grad: &mut [f64],
) -> Result<f64, ScoreError> {
    let (fwd, cache) = net.forward_cached(tokens)?;
    let (loss, d) = soft_cross_entropy(&fwd.logits, targets);
    net.backward(&cache, &d.view(), grad);
    Ok(loss)
}

pub fn loss_only<N: Network>(net: &N, tokens: &[usize], targets: &[Target]) -> Result<f64, ScoreError> {
    let fwd = net.forward(tokens)?;
    Ok(soft_cross_entropy(&fwd.logits, targets).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub n_params: usize,
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_params: 256,
            step: 1e-5,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_block: String,
}

/// Compares the analytic gradient of the soft cross-entropy loss with
/// central finite differences on randomly chosen parameters.
pub fn grad_check<N: Network>(
    net: &mut N,
    tokens: &[usize],
    targets: &[Target],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport, ScoreError> {
    let total = net.layout().total();
    let mut grad = vec![0.0; total];
    loss_and_grad(net, tokens, targets, &mut grad)?;
    let mut rng = seeded(cfg.seed);
    let picks = sample(&mut rng, total, cfg.n_params.min(total)).into_vec();
    let mut worst = (-1.0, picks.first().copied().unwrap_or(0));
    for &k in &picks {
        let orig = net.params()[k];
        net.params_mut()[k] = orig + cfg.step;
        let up = loss_only(net, tokens, targets)?;
        net.params_mut()[k] = orig - cfg.step;
        let down = loss_only(net, tokens, targets)?;
        net.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(cfg.floor);
        if rel > worst.0 {
            worst = (rel, k);
        }
    }
    let block = net
        .layout()
        .blocks()
        .iter()
        .find(|b| b.range().contains(&worst.1))
        .map(|b| b.name.clone())
        .unwrap_or_default();
    Ok(GradCheckReport {
        checked: picks.len(),
        max_rel_error: worst.0.max(0.0),
        worst_param: worst.1,
        worst_block: block,
    })
}

/// Random soft targets at `n` distinct positions, for gradient checks.
pub fn random_targets(len: usize, width: usize, n: usize, seed: u64) -> Vec<Target> {
    let mut rng = seeded(seed);
    let mut positions = sample(&mut rng, len, n.min(len)).into_vec();
    positions.sort_unstable();
    positions
        .into_iter()
        .map(|position| {
            let w: Vec<f64> = (0..width).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            Target {
                position,
                probs: w.into_iter().map(|v| v / s).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let logits = Array2::zeros((3, 4));
        let t = vec![Target::hard(1, 2, 4)];
        let (loss, d) = soft_cross_entropy(&logits, &t);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert_eq!(d[[1, 2]], -0.75);
        assert_eq!(d[[0, 0]], 0.0);
    }

    #[test]
    fn matching_soft_target_gives_zero_gradient() {
        let logits = array![[0.3, -0.1, 2.0]];
        let mut p = logits.clone();
        softmax_rows(&mut p);
        let t = vec![Target { position: 0, probs: p.row(0).to_vec() }];
        let (loss, d) = soft_cross_entropy(&logits, &t);
        assert!(d.iter().all(|v| v.abs() < 1e-16));
        let h: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((loss - h).abs() < 1e-14);
    }
}
