//! Bidirectional pre-norm transformer encoder.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::network::{Forward, Network};
use super::nn::{
    affine, affine_backward, gelu, gelu_grad, init_block, layer_norm, layer_norm_backward,
    sinusoidal, softmax_rows, Init, LayerNormCache, ParamLayout,
};
use crate::scoring::ScoreError;
use crate::seqcore::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionScheme {
    Sinusoidal,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyAttentionConfig {
    pub alphabet_size: usize,
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub context_cap: usize,
    pub positions: PositionScheme,
    /// Ablation: drop positional information entirely.
    #[serde(default)]
    pub strip_positions: bool,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ToyAttentionConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 20,
            depth: 2,
            width: 64,
            heads: 4,
            ff_width: 128,
            context_cap: 512,
            positions: PositionScheme::Sinusoidal,
            strip_positions: false,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl ToyAttentionConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let bad = |m: String| Err(ScoreError::Model(m));
        if self.alphabet_size < 2 {
            return bad("alphabet needs at least two symbols".into());
        }
        if !(1..=2).contains(&self.depth) {
            return bad(format!("depth must be 1 or 2, got {}", self.depth));
        }
        if self.heads == 0 || self.width == 0 || self.width % self.heads != 0 {
            return bad(format!("width {} is not divisible by {} heads", self.width, self.heads));
        }
        if self.ff_width == 0 || self.context_cap == 0 {
            return bad("feed-forward width and context must be positive".into());
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return bad("init scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    tok: usize,
    pos: Option<usize>,
    lnf_g: usize,
    lnf_b: usize,
    wout: usize,
    bout: usize,
}

#[derive(Debug, Clone)]
pub struct ToyAttention {
    cfg: ToyAttentionConfig,
    layout: ParamLayout,
    ids: Ids,
    layers: Vec<LayerIds>,
    params: Vec<f64>,
    sinusoid: Array2<f64>,
}

struct LayerCache {
    ln1: LayerNormCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LayerNormCache,
    m: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

pub struct AttentionCache {
    tokens: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: LayerNormCache,
    z: Array2<f64>,
}

impl ToyAttention {
    pub fn new(cfg: ToyAttentionConfig) -> Result<Self, ScoreError> {
        cfg.validate()?;
        let (d, f, v) = (cfg.width, cfg.ff_width, cfg.alphabet_size);
        let mut l = ParamLayout::new();
        let tok = l.push("embed.token", v + 1, d);
        let pos = (cfg.positions == PositionScheme::Learned && !cfg.strip_positions)
            .then(|| l.push("embed.position", cfg.context_cap, d));
        let layers = (0..cfg.depth)
            .map(|i| LayerIds {
                ln1_g: l.push(format!("layer{i}.ln1.gain"), 1, d),
                ln1_b: l.push(format!("layer{i}.ln1.bias"), 1, d),
                wq: l.push(format!("layer{i}.attn.wq"), d, d),
                bq: l.push(format!("layer{i}.attn.bq"), 1, d),
                wk: l.push(format!("layer{i}.attn.wk"), d, d),
                bk: l.push(format!("layer{i}.attn.bk"), 1, d),
                wv: l.push(format!("layer{i}.attn.wv"), d, d),
                bv: l.push(format!("layer{i}.attn.bv"), 1, d),
                wo: l.push(format!("layer{i}.attn.wo"), d, d),
                bo: l.push(format!("layer{i}.attn.bo"), 1, d),
                ln2_g: l.push(format!("layer{i}.ln2.gain"), 1, d),
                ln2_b: l.push(format!("layer{i}.ln2.bias"), 1, d),
                w1: l.push(format!("layer{i}.mlp.w1"), d, f),
                b1: l.push(format!("layer{i}.mlp.b1"), 1, f),
                w2: l.push(format!("layer{i}.mlp.w2"), f, d),
                b2: l.push(format!("layer{i}.mlp.b2"), 1, d),
            })
            .collect::<Vec<_>>();
        let ids = Ids {
            tok,
            pos,
            lnf_g: l.push("final.ln.gain", 1, d),
            lnf_b: l.push("final.ln.bias", 1, d),
            wout: l.push("out.weight", d, v),
            bout: l.push("out.bias", 1, v),
        };

        let mut p = vec![0.0; l.total()];
        let mut rng = seeded(cfg.seed);
        let sc = cfg.init_scale;
        let fan = |n| Init::FanIn { fan_in: n, scale: sc };
        init_block(&mut p, l.block(tok), fan(1), &mut rng);
        if let Some(pid) = pos {
            init_block(&mut p, l.block(pid), Init::FanIn { fan_in: 1, scale: 0.1 * sc }, &mut rng);
        }
        for li in &layers {
            for id in [li.ln1_g, li.ln2_g] {
                init_block(&mut p, l.block(id), Init::Const(1.0), &mut rng);
            }
            for id in [li.wq, li.wk, li.wv, li.wo, li.w1] {
                init_block(&mut p, l.block(id), fan(d), &mut rng);
            }
            init_block(&mut p, l.block(li.w2), fan(f), &mut rng);
        }
        init_block(&mut p, l.block(ids.lnf_g), Init::Const(1.0), &mut rng);
        init_block(&mut p, l.block(ids.wout), fan(d), &mut rng);

        Ok(Self::assemble(cfg, l, ids, layers, p))
    }

    fn assemble(cfg: ToyAttentionConfig, layout: ParamLayout, ids: Ids, layers: Vec<LayerIds>, params: Vec<f64>) -> Self {
        let sinusoid = if cfg.positions == PositionScheme::Sinusoidal && !cfg.strip_positions {
            sinusoidal(cfg.context_cap, cfg.width)
        } else {
            Array2::zeros((0, cfg.width))
        };
        Self {
            cfg,
            layout,
            ids,
            layers,
            params,
            sinusoid,
        }
    }

    /// Rebuilds a model from a configuration and saved parameters.
    pub fn from_params(cfg: ToyAttentionConfig, params: Vec<f64>) -> Result<Self, ScoreError> {
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

    pub fn config(&self) -> &ToyAttentionConfig {
        &self.cfg
    }

    fn head_dim(&self) -> usize {
        self.cfg.width / self.cfg.heads
    }
}

impl Network for ToyAttention {
    type Cache = AttentionCache;

    fn alphabet_size(&self) -> usize {
        self.cfg.alphabet_size
    }

    fn embedding_width(&self) -> usize {
        self.cfg.width
    }

    fn context_cap(&self) -> Option<usize> {
        Some(self.cfg.context_cap)
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

    fn forward_cached(&self, tokens: &[usize]) -> Result<(Forward, AttentionCache), ScoreError> {
        self.check_tokens(tokens)?;
        let (n, d) = (tokens.len(), self.cfg.width);
        let p = &self.params;
        let l = &self.layout;
        let emb = l.mat(p, self.ids.tok);
        let mut h = Array2::zeros((n, d));
        for (mut row, &t) in h.rows_mut().into_iter().zip(tokens) {
            row.assign(&emb.row(t));
        }
        if let Some(pid) = self.ids.pos {
            h += &l.mat(p, pid).slice(s![..n, ..]);
        } else if self.sinusoid.nrows() > 0 {
            h += &self.sinusoid.slice(s![..n, ..]);
        }

        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut caches = Vec::with_capacity(self.layers.len());
        for li in &self.layers {
            let (a, ln1) = layer_norm(&h.view(), &l.vec(p, li.ln1_g), &l.vec(p, li.ln1_b));
            let q = affine(&a.view(), &l.mat(p, li.wq), &l.vec(p, li.bq));
            let k = affine(&a.view(), &l.mat(p, li.wk), &l.vec(p, li.bk));
            let v = affine(&a.view(), &l.mat(p, li.wv), &l.vec(p, li.bv));
            let mut o = Array2::zeros((n, d));
            let mut probs = Vec::with_capacity(self.cfg.heads);
            for hh in 0..self.cfg.heads {
                let cols = s![.., hh * dh..(hh + 1) * dh];
                let mut sc = q.slice(cols).dot(&k.slice(cols).t());
                sc *= scale;
                softmax_rows(&mut sc);
                o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
                probs.push(sc);
            }
            h += &affine(&o.view(), &l.mat(p, li.wo), &l.vec(p, li.bo));
            let (m, ln2) = layer_norm(&h.view(), &l.vec(p, li.ln2_g), &l.vec(p, li.ln2_b));
            let u = affine(&m.view(), &l.mat(p, li.w1), &l.vec(p, li.b1));
            let g = u.mapv(gelu);
            h += &affine(&g.view(), &l.mat(p, li.w2), &l.vec(p, li.b2));
            caches.push(LayerCache { ln1, a, q, k, v, probs, o, ln2, m, u, g });
        }
        let (z, lnf) = layer_norm(&h.view(), &l.vec(p, self.ids.lnf_g), &l.vec(p, self.ids.lnf_b));
        let logits = affine(&z.view(), &l.mat(p, self.ids.wout), &l.vec(p, self.ids.bout));
        let fwd = Forward {
            logits,
            embeddings: z.clone(),
        };
        Ok((
            fwd,
            AttentionCache {
                tokens: tokens.to_vec(),
                layers: caches,
                lnf,
                z,
            },
        ))
    }

    fn backward(&self, cache: &AttentionCache, dlogits: &ArrayView2<f64>, grad: &mut [f64]) {
        let p = &self.params;
        let l = &self.layout;
        let ids = self.ids;
        let dz = affine_backward(
            &cache.z.view(),
            &l.mat(p, ids.wout),
            dlogits,
            &mut l.pair_mut(grad, ids.wout, ids.bout),
        );
        let mut dgain = l.vec(grad, ids.lnf_g).to_owned();
        let mut dbias = l.vec(grad, ids.lnf_b).to_owned();
        let mut dh = layer_norm_backward(&cache.lnf, &l.vec(p, ids.lnf_g), &dz.view(), &mut dgain.view_mut(), &mut dbias.view_mut());
        l.vec_mut(grad, ids.lnf_g).assign(&dgain);
        l.vec_mut(grad, ids.lnf_b).assign(&dbias);

        let dhd = self.head_dim();
        let scale = 1.0 / (dhd as f64).sqrt();
        for (li, c) in self.layers.iter().zip(&cache.layers).rev() {
            // feed-forward sublayer
            let dg = affine_backward(&c.g.view(), &l.mat(p, li.w2), &dh.view(), &mut l.pair_mut(grad, li.w2, li.b2));
            let mut du = dg;
            du.zip_mut_with(&c.u, |x, &u| *x *= gelu_grad(u));
            let dm = affine_backward(&c.m.view(), &l.mat(p, li.w1), &du.view(), &mut l.pair_mut(grad, li.w1, li.b1));
            let (mut gg, mut gb) = (l.vec(grad, li.ln2_g).to_owned(), l.vec(grad, li.ln2_b).to_owned());
            dh += &layer_norm_backward(&c.ln2, &l.vec(p, li.ln2_g), &dm.view(), &mut gg.view_mut(), &mut gb.view_mut());
            l.vec_mut(grad, li.ln2_g).assign(&gg);
            l.vec_mut(grad, li.ln2_b).assign(&gb);

            // attention sublayer
            let dout = affine_backward(&c.o.view(), &l.mat(p, li.wo), &dh.view(), &mut l.pair_mut(grad, li.wo, li.bo));
            let mut dq = Array2::zeros(c.q.raw_dim());
            let mut dk = Array2::zeros(c.k.raw_dim());
            let mut dv = Array2::zeros(c.v.raw_dim());
            for (hh, pr) in c.probs.iter().enumerate() {
                let cols = s![.., hh * dhd..(hh + 1) * dhd];
                let doh = dout.slice(cols);
                let dp = doh.dot(&c.v.slice(cols).t());
                dv.slice_mut(cols).assign(&pr.t().dot(&doh));
                let mut ds = pr * &dp;
                let rowsum = ds.sum_axis(Axis(1)).insert_axis(Axis(1));
                ds -= &(pr * &rowsum);
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            let av = c.a.view();
            let mut da = affine_backward(&av, &l.mat(p, li.wq), &dq.view(), &mut l.pair_mut(grad, li.wq, li.bq));
            da += &affine_backward(&av, &l.mat(p, li.wk), &dk.view(), &mut l.pair_mut(grad, li.wk, li.bk));
            da += &affine_backward(&av, &l.mat(p, li.wv), &dv.view(), &mut l.pair_mut(grad, li.wv, li.bv));
            let (mut gg, mut gb) = (l.vec(grad, li.ln1_g).to_owned(), l.vec(grad, li.ln1_b).to_owned());
            dh += &layer_norm_backward(&c.ln1, &l.vec(p, li.ln1_g), &da.view(), &mut gg.view_mut(), &mut gb.view_mut());
            l.vec_mut(grad, li.ln1_g).assign(&gg);
            l.vec_mut(grad, li.ln1_b).assign(&gb);
        }

        let mut demb = l.mat_mut(grad, ids.tok);
        for (row, &t) in dh.rows().into_iter().zip(&cache.tokens) {
            let mut e = demb.row_mut(t);
            e += &row;
        }
        if let Some(pid) = ids.pos {
            let n = cache.tokens.len();
            let mut dpos = l.mat_mut(grad, pid);
            let mut head = dpos.slice_mut(s![..n, ..]);
            head += &dh;
        }
    }
}
