//! Small dense building blocks shared by the toy networks.
//!
//! Parameters live in one flat `Vec<f64>`; a [`ParamLayout`] names the
//! slices. Matrices are row-major, one row per sequence position.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seqcore::rng::ToolRng;

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named slices of a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.blocks.push(ParamBlock {
            name: name.into(),
            offset: self.total,
            rows,
            cols,
        });
        self.total += rows * cols;
        self.blocks.len() - 1
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> &ParamBlock {
        &self.blocks[id]
    }

    pub fn find(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn mat<'a>(&self, p: &'a [f64], id: usize) -> ArrayView2<'a, f64> {
        let b = &self.blocks[id];
        ArrayView2::from_shape((b.rows, b.cols), &p[b.range()]).expect("layout shape")
    }

    pub fn vec<'a>(&self, p: &'a [f64], id: usize) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.blocks[id].range()])
    }

    pub fn mat_mut<'a>(&self, p: &'a mut [f64], id: usize) -> ArrayViewMut2<'a, f64> {
        let b = &self.blocks[id];
        ArrayViewMut2::from_shape((b.rows, b.cols), &mut p[b.range()]).expect("layout shape")
    }

    pub fn vec_mut<'a>(&self, p: &'a mut [f64], id: usize) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut p[self.blocks[id].range()])
    }

    /// A matrix block and a vector block viewed mutably at the same time.
    pub fn pair_mut<'a>(
        &self,
        p: &'a mut [f64],
        mat: usize,
        vec: usize,
    ) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let (m, v) = (&self.blocks[mat], &self.blocks[vec]);
        assert!(m.range().end <= v.offset || v.range().end <= m.offset, "blocks overlap");
        let shape = (m.rows, m.cols);
        let (mo, vo) = (m.offset, v.offset);
        let (ml, vl) = (m.len(), v.len());
        if mo < vo {
            let (a, b) = p.split_at_mut(vo);
            (
                ArrayViewMut2::from_shape(shape, &mut a[mo..mo + ml]).expect("layout shape"),
                ArrayViewMut1::from(&mut b[..vl]),
            )
        } else {
            let (a, b) = p.split_at_mut(mo);
            (
                ArrayViewMut2::from_shape(shape, &mut b[..ml]).expect("layout shape"),
                ArrayViewMut1::from(&mut a[vo..vo + vl]),
            )
        }
    }
}

pub(crate) enum Init {
    /// Symmetric uniform with bound `scale / sqrt(fan_in)`.
    FanIn { fan_in: usize, scale: f64 },
    Const(f64),
}

pub(crate) fn init_block(p: &mut [f64], block: &ParamBlock, init: Init, rng: &mut ToolRng) {
    let slice = &mut p[block.range()];
    match init {
        Init::FanIn { fan_in, scale } => {
            let bound = scale / (fan_in.max(1) as f64).sqrt();
            for v in slice {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Init::Const(c) => slice.fill(c),
    }
}

/// `out += a · b`
pub(crate) fn matmul_acc(a: &ArrayView2<f64>, b: &ArrayView2<f64>, out: &mut ArrayViewMut2<f64>) {
    general_mat_mul(1.0, a, b, 1.0, out);
}

/// `x · w + bias`, broadcasting the bias over rows.
pub(crate) fn affine(x: &ArrayView2<f64>, w: &ArrayView2<f64>, bias: &ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), w.ncols()));
    out += bias;
    general_mat_mul(1.0, x, w, 1.0, &mut out);
    out
}

/// Gradients of `y = x·w + b` given `dy`: accumulates into `dw`, `db` and
/// returns `dx`.
pub(crate) fn affine_backward(
    x: &ArrayView2<f64>,
    w: &ArrayView2<f64>,
    dy: &ArrayView2<f64>,
    (dw, db): &mut (ArrayViewMut2<f64>, ArrayViewMut1<f64>),
) -> Array2<f64> {
    matmul_acc(&x.t(), dy, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

pub(crate) struct LayerNormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: &ArrayView2<f64>,
    gamma: &ArrayView1<f64>,
    beta: &ArrayView1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * gamma + beta;
    (y, LayerNormCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &ArrayView1<f64>,
    dy: &ArrayView2<f64>,
    dgamma: &mut ArrayViewMut1<f64>,
    dbeta: &mut ArrayViewMut1<f64>,
) -> Array2<f64> {
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gamma;
    for ((mut g, xh), r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        g.zip_mut_with(&xh, |gi, &xi| *gi = r * (*gi - mean_g - xi * mean_gx));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let inner = GELU_C * (u + 0.044715 * u * u * u);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

pub(crate) fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

pub(crate) fn log_softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

/// Fixed sinusoidal position table.
pub(crate) fn sinusoidal(len: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, width), |(pos, k)| {
        let pair = (k / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / width as f64);
        if k % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * ((*m / c1) / ((*v / c2).sqrt() + eps) + weight_decay * *p);
        }
    }
}
