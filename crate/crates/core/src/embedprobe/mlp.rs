use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::models::nn::{affine, affine_backward, gelu, gelu_grad, init_block, log_softmax_row, Adam, Init};
use crate::models::{AdamConfig, ParamLayout};
use crate::seqcore::rng::{derive_seed, seeded, task_rng};

/// Regressor shape and training budget. One spec is shared by every group
/// so loss differences reflect the inputs alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Minibatch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub adam: AdamConfig,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            learning_rate: 1e-3,
            batch_size: Some(64),
            max_epochs: 60,
            patience: 6,
            min_delta: 1e-5,
            adam: AdamConfig::default(),
        }
    }
}

/// GELU multilayer perceptron with a softmax output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layout: ParamLayout,
    params: Vec<f64>,
    /// (weight, bias) block ids per layer.
    layers: Vec<(usize, usize)>,
}

struct Cache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize, seed: u64) -> Self {
        let mut layout = ParamLayout::new();
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers: Vec<(usize, usize)> = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| (layout.push(format!("w{l}"), w[0], w[1]), layout.push(format!("b{l}"), 1, w[1])))
            .collect();
        let mut params = vec![0.0; layout.total()];
        let mut rng = seeded(derive_seed(seed, "mlp-init"));
        for (l, &(w, b)) in layers.iter().enumerate() {
            init_block(&mut params, layout.block(w), Init::FanIn { fan_in: widths[l], scale: 1.0 }, &mut rng);
            init_block(&mut params, layout.block(b), Init::Const(0.0), &mut rng);
        }
        Self { layout, params, layers }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.layout.block(self.layers[0].0).rows
    }

    fn forward_cached(&self, x: &ArrayView2<f64>) -> (Array2<f64>, Cache) {
        let mut cache = Cache { inputs: Vec::new(), pre: Vec::new() };
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let u = affine(&h.view(), &self.layout.mat(&self.params, w), &self.layout.vec(&self.params, b));
            cache.inputs.push(h);
            if l == last {
                return (u, cache);
            }
            h = u.mapv(gelu);
            cache.pre.push(u);
        }
        unreachable!("an MLP has at least one layer")
    }

    pub fn logits(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    /// Predicted distributions, one row per input row.
    pub fn predict(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = self.logits(x);
        for mut row in out.rows_mut() {
            let ls = log_softmax_row(row.view());
            row.assign(&ls.mapv(f64::exp));
        }
        out
    }

    /// Mean cross-entropy against soft targets.
    pub fn loss(&self, x: &ArrayView2<f64>, targets: &ArrayView2<f64>) -> f64 {
        soft_ce(&self.logits(x), targets).0
    }

    /// Mean cross-entropy and its gradient with respect to the parameters.
    pub fn loss_and_grad(&self, x: &ArrayView2<f64>, targets: &ArrayView2<f64>) -> (f64, Vec<f64>) {
        let (logits, cache) = self.forward_cached(x);
        let (loss, mut dy) = soft_ce(&logits, targets);
        let mut grad = vec![0.0; self.params.len()];
        for l in (0..self.layers.len()).rev() {
            let (w, b) = self.layers[l];
            let mut pair = self.layout.pair_mut(&mut grad, w, b);
            let dx = affine_backward(&cache.inputs[l].view(), &self.layout.mat(&self.params, w), &dy.view(), &mut pair);
            if l > 0 {
                dy = dx;
                dy.zip_mut_with(&cache.pre[l - 1], |d, &u| *d *= gelu_grad(u));
            }
        }
        (loss, grad)
    }
}

fn soft_ce(logits: &Array2<f64>, targets: &ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = logits.nrows().max(1) as f64;
    let mut d = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for ((lrow, trow), mut drow) in logits.rows().into_iter().zip(targets.rows()).zip(d.rows_mut()) {
        let ls = log_softmax_row(lrow);
        for k in 0..ls.len() {
            if trow[k] > 0.0 {
                loss -= trow[k] * ls[k];
            }
            drow[k] = (ls[k].exp() - trow[k]) / n;
        }
    }
    (loss / n, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub curve: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub learning_rate: f64,
    /// Whether the first attempt diverged and training was redone at half
    /// the learning rate.
    pub retried: bool,
}

fn rows(x: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

fn attempt(
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    vx: &ArrayView2<f64>,
    vy: &ArrayView2<f64>,
    spec: &MlpSpec,
    lr: f64,
    seed: u64,
) -> Option<(Mlp, FitOutcome)> {
    let mut net = Mlp::new(x.ncols(), &spec.hidden, y.ncols(), seed);
    let mut adam = Adam::new(net.params.len(), spec.adam);
    let n = x.nrows();
    let batch = spec.batch_size.unwrap_or(n).clamp(1, n.max(1));
    let order_seed = derive_seed(seed, "mlp-order");
    let mut best = (f64::INFINITY, 0usize, net.params.clone());
    let mut curve = Vec::new();
    let mut stale = 0;
    for epoch in 0..spec.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if spec.batch_size.is_some() {
            order.shuffle(&mut task_rng(order_seed, epoch as u64));
        }
        for chunk in order.chunks(batch) {
            let (loss, grad) = if chunk.len() == n && spec.batch_size.is_none() {
                net.loss_and_grad(x, y)
            } else {
                net.loss_and_grad(&rows(x, chunk).view(), &rows(y, chunk).view())
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return None;
            }
            adam.step(&mut net.params, &grad, lr);
        }
        let train_loss = net.loss(x, y);
        let val_loss = net.loss(vx, vy);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return None;
        }
        curve.push(EpochRow { epoch: epoch + 1, train_loss, val_loss });
        if val_loss < best.0 - spec.min_delta {
            best = (val_loss, epoch + 1, net.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= spec.patience {
                break;
            }
        }
    }
    net.params = best.2;
    let outcome = FitOutcome { curve, best_epoch: best.1, best_val_loss: best.0, learning_rate: lr, retried: false };
    Some((net, outcome))
}

/// Trains with early stopping on `(vx, vy)` and returns the parameters
/// from the best validation epoch. A non-finite loss triggers one retry at
/// half the learning rate.
pub fn fit_mlp(
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    vx: &ArrayView2<f64>,
    vy: &ArrayView2<f64>,
    spec: &MlpSpec,
    seed: u64,
) -> Result<(Mlp, FitOutcome), EmbedError> {
    if x.nrows() == 0 || vx.nrows() == 0 {
        return Err(EmbedError::Config("training and validation sets must be non-empty".into()));
    }
    if x.nrows() != y.nrows() || vx.nrows() != vy.nrows() || x.ncols() != vx.ncols() || y.ncols() != vy.ncols() {
        return Err(EmbedError::Config("input and target shapes disagree".into()));
    }
    if spec.max_epochs == 0 || spec.hidden.contains(&0) {
        return Err(EmbedError::Config("need at least one epoch and nonzero hidden widths".into()));
    }
    if let Some(r) = attempt(x, y, vx, vy, spec, spec.learning_rate, seed) {
        return Ok(r);
    }
    let half = spec.learning_rate / 2.0;
    match attempt(x, y, vx, vy, spec, half, seed) {
        Some((net, mut out)) => {
            out.retried = true;
            Ok((net, out))
        }
        None => Err(EmbedError::NonFinite { learning_rate: half }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = seeded(seed);
        let x = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
        let mut y = Array2::zeros((n, 3));
        for (i, row) in x.rows().into_iter().enumerate() {
            let z = [row[0] + row[1], row[2] - row[3], row[4]];
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for k in 0..3 {
                y[[i, k]] = e[k] / s;
            }
        }
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = data(7, 1);
        let mut net = Mlp::new(5, &[6, 4], 3, 2);
        let (_, g) = net.loss_and_grad(&x.view(), &y.view());
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..net.params.len() {
            let p = net.params[i];
            net.params[i] = p + h;
            let up = net.loss(&x.view(), &y.view());
            net.params[i] = p - h;
            let down = net.loss(&x.view(), &y.view());
            net.params[i] = p;
            let num = (up - down) / (2.0 * h);
            worst = worst.max((num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn learns_a_smooth_target_and_respects_the_entropy_floor() {
        let (x, y) = data(400, 3);
        let (vx, vy) = data(100, 4);
        let spec = MlpSpec { hidden: vec![32], max_epochs: 40, learning_rate: 1e-2, ..MlpSpec::default() };
        let (net, out) = fit_mlp(&x.view(), &y.view(), &vx.view(), &vy.view(), &spec, 0).unwrap();
        let first = out.curve[0].val_loss;
        assert!(out.best_val_loss < first);
        let h: f64 = vy.rows().into_iter().map(|r| -r.iter().map(|p| p * p.ln()).sum::<f64>()).sum::<f64>() / 100.0;
        assert!(out.best_val_loss >= h);
        assert!((net.loss(&vx.view(), &vy.view()) - out.best_val_loss).abs() < 1e-12);
        assert!(net.predict(&vx.view()).rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn full_batch_training_ignores_duplicated_examples() {
        let (x, y) = data(60, 5);
        let (vx, vy) = data(30, 6);
        let spec = MlpSpec { hidden: vec![16], batch_size: None, max_epochs: 30, learning_rate: 1e-2, ..MlpSpec::default() };
        let (_, a) = fit_mlp(&x.view(), &y.view(), &vx.view(), &vy.view(), &spec, 0).unwrap();
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let y2 = ndarray::concatenate(Axis(0), &[y.view(), y.view()]).unwrap();
        let (_, b) = fit_mlp(&x2.view(), &y2.view(), &vx.view(), &vy.view(), &spec, 0).unwrap();
        assert!((a.best_val_loss - b.best_val_loss).abs() < 1e-3);
    }

    #[test]
    fn divergence_retries_at_half_rate_then_fails() {
        let (x, y) = data(20, 5);
        let spec = MlpSpec { hidden: vec![4], learning_rate: f64::INFINITY, max_epochs: 2, ..MlpSpec::default() };
        assert!(matches!(
            fit_mlp(&x.view(), &y.view(), &x.view(), &y.view(), &spec, 0),
            Err(EmbedError::NonFinite { .. })
        ));
    }

    #[test]
    fn early_stopping_keeps_the_best_epoch() {
        let (x, y) = data(30, 7);
        let (vx, vy) = data(30, 8);
        let spec = MlpSpec { hidden: vec![64, 64], learning_rate: 3e-2, max_epochs: 80, patience: 3, ..MlpSpec::default() };
        let (_, out) = fit_mlp(&x.view(), &y.view(), &vx.view(), &vy.view(), &spec, 1).unwrap();
        let min = out.curve.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_loss, min);
        assert!(out.curve.len() <= out.best_epoch + spec.patience);
    }
}
