//! Residual stack of "same"-padded 1-d convolutions.
//!
//! Each block adds `act(conv(h))` to its input. In the gated variant the
//! convolution has twice the output channels and `act` is `a * sigmoid(b)`
//! of the two halves, which lets a block compare symbols at two offsets.
//!
//! Nothing mixes positions except the convolutions, so the logits at `i`
//! are a function of the inputs within `(R - 1) / 2` of `i` only.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::network::{Forward, Network};
use super::nn::{affine, affine_backward, gelu, gelu_grad, init_block, sigmoid, Init, ParamLayout};
use crate::scoring::ScoreError;
use crate::seqcore::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConvConfig {
    pub alphabet_size: usize,
    pub layers: usize,
    pub kernel: usize,
    pub channels: usize,
    /// Gated blocks multiply a linear branch by a sigmoid branch.
    #[serde(default = "default_gated")]
    pub gated: bool,
    pub init_scale: f64,
    pub seed: u64,
}

fn default_gated() -> bool {
    true
}

impl Default for ToyConvConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 20,
            layers: 4,
            kernel: 5,
            channels: 128,
            gated: true,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl ToyConvConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.alphabet_size < 2 || self.layers == 0 || self.channels == 0 {
            return Err(ScoreError::Model("conv model needs >= 2 symbols, >= 1 layer and >= 1 channel".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(ScoreError::Model(format!("kernel width must be odd, got {}", self.kernel)));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(ScoreError::Model("init scale must be positive".into()));
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.layers * (self.kernel - 1)
    }
}

#[derive(Debug, Clone)]
pub struct ToyConv {
    cfg: ToyConvConfig,
    layout: ParamLayout,
    tok: usize,
    convs: Vec<(usize, usize)>,
    wout: usize,
    bout: usize,
    params: Vec<f64>,
}

pub struct ConvCache {
    tokens: Vec<usize>,
    /// Unfolded inputs of each layer, `n x (kernel * channels)`.
    cols: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    last: Array2<f64>,
}

/// Row `i` holds the `kernel` input rows centred on `i`, zero past the ends.
fn unfold(h: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let (n, c) = h.dim();
    let half = kernel / 2;
    let mut out = Array2::zeros((n, kernel * c));
    for t in 0..kernel {
        let lo = half.saturating_sub(t);
        let hi = (n + half).saturating_sub(t).min(n);
        if lo < hi {
            out.slice_mut(s![lo..hi, t * c..(t + 1) * c])
                .assign(&h.slice(s![lo + t - half..hi + t - half, ..]));
        }
    }
    out
}

fn fold_add(dcols: &Array2<f64>, kernel: usize, dh: &mut Array2<f64>) {
    let (n, c) = dh.dim();
    let half = kernel / 2;
    for t in 0..kernel {
        let lo = half.saturating_sub(t);
        let hi = (n + half).saturating_sub(t).min(n);
        if lo < hi {
            let mut dst = dh.slice_mut(s![lo + t - half..hi + t - half, ..]);
            dst += &dcols.slice(s![lo..hi, t * c..(t + 1) * c]);
        }
    }
}

impl ToyConv {
    pub fn new(cfg: ToyConvConfig) -> Result<Self, ScoreError> {
        cfg.validate()?;
        let (c, k, v) = (cfg.channels, cfg.kernel, cfg.alphabet_size);
        let mut l = ParamLayout::new();
        let tok = l.push("embed.token", v + 1, c);
        let convs: Vec<(usize, usize)> = (0..cfg.layers)
            .map(|i| {
                let out = if cfg.gated { 2 * c } else { c };
                (l.push(format!("conv{i}.weight"), k * c, out), l.push(format!("conv{i}.bias"), 1, out))
            })
            .collect();
        let wout = l.push("out.weight", c, v);
        let bout = l.push("out.bias", 1, v);

        let mut p = vec![0.0; l.total()];
        let mut rng = seeded(cfg.seed);
        let sc = cfg.init_scale;
        init_block(&mut p, l.block(tok), Init::FanIn { fan_in: 1, scale: sc }, &mut rng);
        for &(w, _) in &convs {
            init_block(&mut p, l.block(w), Init::FanIn { fan_in: k * c, scale: sc }, &mut rng);
        }
        init_block(&mut p, l.block(wout), Init::FanIn { fan_in: c, scale: sc }, &mut rng);
        Ok(Self {
            cfg,
            layout: l,
            tok,
            convs,
            wout,
            bout,
            params: p,
        })
    }

    pub fn from_params(cfg: ToyConvConfig, params: Vec<f64>) -> Result<Self, ScoreError> {
        let mut m = Self::new(cfg)?;
        if params.len() != m.params.len() {
            return Err(ScoreError::Shape(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &ToyConvConfig {
        &self.cfg
    }

    pub fn receptive_field(&self) -> usize {
        self.cfg.receptive_field()
    }

    fn activate(&self, u: &Array2<f64>) -> Array2<f64> {
        if !self.cfg.gated {
            return u.mapv(gelu);
        }
        let c = self.cfg.channels;
        let mut out = u.slice(s![.., ..c]).to_owned();
        out.zip_mut_with(&u.slice(s![.., c..]), |a, &b| *a *= sigmoid(b));
        out
    }

    fn activate_backward(&self, u: &Array2<f64>, dout: &Array2<f64>) -> Array2<f64> {
        if !self.cfg.gated {
            let mut du = dout.clone();
            du.zip_mut_with(u, |d, &v| *d *= gelu_grad(v));
            return du;
        }
        let c = self.cfg.channels;
        let mut du = Array2::zeros(u.raw_dim());
        for ((mut drow, urow), orow) in du.rows_mut().into_iter().zip(u.rows()).zip(dout.rows()) {
            for j in 0..c {
                let (a, b, g) = (urow[j], urow[c + j], orow[j]);
                let sb = sigmoid(b);
                drow[j] = g * sb;
                drow[c + j] = g * a * sb * (1.0 - sb);
            }
        }
        du
    }
}

impl Network for ToyConv {
    type Cache = ConvCache;

    fn alphabet_size(&self) -> usize {
        self.cfg.alphabet_size
    }

    fn embedding_width(&self) -> usize {
        self.cfg.channels
    }

    fn context_cap(&self) -> Option<usize> {
        None
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_cached(&self, tokens: &[usize]) -> Result<(Forward, ConvCache), ScoreError> {
        self.check_tokens(tokens)?;
        let (p, l) = (&self.params, &self.layout);
        let emb = l.mat(p, self.tok);
        let mut h = Array2::zeros((tokens.len(), self.cfg.channels));
        for (mut row, &t) in h.rows_mut().into_iter().zip(tokens) {
            row.assign(&emb.row(t));
        }
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        for &(w, b) in &self.convs {
            let x = unfold(&h, self.cfg.kernel);
            let u = affine(&x.view(), &l.mat(p, w), &l.vec(p, b));
            h += &self.activate(&u);
            cols.push(x);
            pre.push(u);
        }
        let logits = affine(&h.view(), &l.mat(p, self.wout), &l.vec(p, self.bout));
        Ok((
            Forward {
                logits,
                embeddings: h.clone(),
            },
            ConvCache {
                tokens: tokens.to_vec(),
                cols,
                pre,
                last: h,
            },
        ))
    }

    fn backward(&self, cache: &ConvCache, dlogits: &ArrayView2<f64>, grad: &mut [f64]) {
        let (p, l) = (&self.params, &self.layout);
        let mut dh = affine_backward(
            &cache.last.view(),
            &l.mat(p, self.wout),
            dlogits,
            &mut l.pair_mut(grad, self.wout, self.bout),
        );
        for ((&(w, b), x), u) in self.convs.iter().zip(&cache.cols).zip(&cache.pre).rev() {
            let du = self.activate_backward(u, &dh);
            let dx = affine_backward(&x.view(), &l.mat(p, w), &du.view(), &mut l.pair_mut(grad, w, b));
            fold_add(&dx, self.cfg.kernel, &mut dh);
        }
        let mut demb = l.mat_mut(grad, self.tok);
        for (row, &t) in dh.rows().into_iter().zip(&cache.tokens) {
            let mut e = demb.row_mut(t);
            e += &row;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::network::{grad_check, random_targets, GradCheckConfig};

    fn small() -> ToyConvConfig {
        ToyConvConfig {
            layers: 2,
            kernel: 5,
            channels: 12,
            seed: 5,
            ..ToyConvConfig::default()
        }
    }

    #[test]
    fn unfold_and_fold_are_adjoint() {
        let h = Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f64 + 1.0);
        let x = unfold(&h, 3);
        assert_eq!(x.row(0).to_vec(), vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.row(5).to_vec(), vec![9.0, 10.0, 11.0, 12.0, 0.0, 0.0]);
        let g = Array2::from_shape_fn((6, 6), |(i, j)| ((i * 5 + j * 3) % 7) as f64);
        let mut back = Array2::zeros((6, 2));
        fold_add(&g, 3, &mut back);
        let lhs: f64 = (&x * &g).sum();
        let rhs: f64 = (&h * &back).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for gated in [true, false] {
            let mut m = ToyConv::new(ToyConvConfig { gated, ..small() }).unwrap();
            let toks: Vec<usize> = (0..13).map(|i| (i * 11 + 2) % 21).collect();
            let r = grad_check(&mut m, &toks, &random_targets(13, 20, 5, 4), GradCheckConfig::default()).unwrap();
            assert!(r.checked >= 200);
            assert!(r.max_rel_error <= 1e-4, "gated={gated}: {r:?}");
        }
    }

    #[test]
    fn receptive_field_formula() {
        assert_eq!(ToyConvConfig::default().receptive_field(), 17);
        assert_eq!(small().receptive_field(), 9);
    }

    #[test]
    fn distant_perturbations_leave_logits_bitwise_unchanged() {
        let m = ToyConv::new(ToyConvConfig { channels: 8, ..ToyConvConfig::default() }).unwrap();
        let half = (m.receptive_field() - 1) / 2;
        let base: Vec<usize> = (0..40).map(|i| (i * 3) % 20).collect();
        let ref_logits = m.forward(&base).unwrap().logits;
        for j in [0, 5, 20, 39] {
            let mut t = base.clone();
            t[j] = 20;
            let out = m.forward(&t).unwrap().logits;
            let mut changed_inside = false;
            for i in 0..40 {
                let same = out.row(i).iter().zip(ref_logits.row(i)).all(|(a, b)| a.to_bits() == b.to_bits());
                if i.abs_diff(j) > half {
                    assert!(same, "position {i} moved after perturbing {j}");
                } else if !same {
                    changed_inside = true;
                }
            }
            assert!(changed_inside);
        }
    }

    #[test]
    fn even_kernels_rejected() {
        assert!(ToyConv::new(ToyConvConfig { kernel: 4, ..ToyConvConfig::default() }).is_err());
    }
}
