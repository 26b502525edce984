use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, ToyAttention, ToyAttentionConfig};
use super::conv::{ConvCache, ToyConv, ToyConvConfig};
use super::network::{Forward, Network};
use super::nn::ParamLayout;
use crate::scoring::{
    Capabilities, DistributionMatrix, Embeddings, ScoreError, Scorer, ScorerQuery, ScorerResponse,
};
use crate::seqcore::Sequence;

/// Architecture and hyperparameters of a toy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "lowercase")]
pub enum ModelSpec {
    Attention(ToyAttentionConfig),
    Conv(ToyConvConfig),
}

impl ModelSpec {
    pub fn alphabet_size(&self) -> usize {
        match self {
            ModelSpec::Attention(c) => c.alphabet_size,
            ModelSpec::Conv(c) => c.alphabet_size,
        }
    }

    pub fn build(&self) -> Result<ToyModel, ScoreError> {
        Ok(match self {
            ModelSpec::Attention(c) => ToyModel::Attention(ToyAttention::new(c.clone())?),
            ModelSpec::Conv(c) => ToyModel::Conv(ToyConv::new(c.clone())?),
        })
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<ToyModel, ScoreError> {
        Ok(match self {
            ModelSpec::Attention(c) => ToyModel::Attention(ToyAttention::from_params(c.clone(), params)?),
            ModelSpec::Conv(c) => ToyModel::Conv(ToyConv::from_params(c.clone(), params)?),
        })
    }
}

/// Either toy network, usable as a [`Scorer`].
#[derive(Debug, Clone)]
pub enum ToyModel {
    Attention(ToyAttention),
    Conv(ToyConv),
}

pub enum ToyCache {
    Attention(AttentionCache),
    Conv(ConvCache),
}

impl From<ToyAttention> for ToyModel {
    fn from(m: ToyAttention) -> Self {
        ToyModel::Attention(m)
    }
}

impl From<ToyConv> for ToyModel {
    fn from(m: ToyConv) -> Self {
        ToyModel::Conv(m)
    }
}

impl ToyModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            ToyModel::Attention(m) => ModelSpec::Attention(m.config().clone()),
            ToyModel::Conv(m) => ModelSpec::Conv(m.config().clone()),
        }
    }

    /// Input tokens for a sequence with the given positions hidden.
    pub fn tokens(&self, x: &Sequence, masked: &[usize]) -> Vec<usize> {
        let mut t: Vec<usize> = x.symbols().iter().map(|&s| s as usize).collect();
        for &m in masked {
            t[m] = self.mask_token();
        }
        t
    }

    fn check_alphabet(&self, x: &Sequence) -> Result<(), ScoreError> {
        if x.alphabet().len() != self.alphabet_size() {
            return Err(ScoreError::Shape(format!(
                "model has {} symbols, sequence alphabet has {}",
                self.alphabet_size(),
                x.alphabet().len()
            )));
        }
        Ok(())
    }
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $e:expr) => {
        match $self {
            ToyModel::Attention($m) => $e,
            ToyModel::Conv($m) => $e,
        }
    };
}

impl Network for ToyModel {
    type Cache = ToyCache;

    fn alphabet_size(&self) -> usize {
        dispatch!(self, m => m.alphabet_size())
    }

    fn embedding_width(&self) -> usize {
        dispatch!(self, m => m.embedding_width())
    }

    fn context_cap(&self) -> Option<usize> {
        dispatch!(self, m => m.context_cap())
    }

    fn layout(&self) -> &ParamLayout {
        dispatch!(self, m => m.layout())
    }

    fn params(&self) -> &[f64] {
        dispatch!(self, m => m.params())
    }

    fn params_mut(&mut self) -> &mut [f64] {
        dispatch!(self, m => m.params_mut())
    }

    fn forward_cached(&self, tokens: &[usize]) -> Result<(Forward, ToyCache), ScoreError> {
        Ok(match self {
            ToyModel::Attention(m) => {
                let (f, c) = m.forward_cached(tokens)?;
                (f, ToyCache::Attention(c))
            }
            ToyModel::Conv(m) => {
                let (f, c) = m.forward_cached(tokens)?;
                (f, ToyCache::Conv(c))
            }
        })
    }

    fn backward(&self, cache: &ToyCache, dlogits: &ArrayView2<f64>, grad: &mut [f64]) {
        match (self, cache) {
            (ToyModel::Attention(m), ToyCache::Attention(c)) => m.backward(c, dlogits, grad),
            (ToyModel::Conv(m), ToyCache::Conv(c)) => m.backward(c, dlogits, grad),
            _ => panic!("cache does not belong to this model"),
        }
    }

    fn forward(&self, tokens: &[usize]) -> Result<Forward, ScoreError> {
        dispatch!(self, m => m.forward(tokens))
    }
}

impl Scorer for ToyModel {
    fn name(&self) -> String {
        match self {
            ToyModel::Attention(m) => {
                let c = m.config();
                format!("toy-attention(depth={},width={},heads={})", c.depth, c.width, c.heads)
            }
            ToyModel::Conv(m) => {
                let c = m.config();
                format!("toy-conv(layers={},kernel={},channels={},rf={})", c.layers, c.kernel, c.channels, c.receptive_field())
            }
        }
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            distributions: true,
            embeddings: true,
            causal: false,
            max_len: self.context_cap(),
            concurrent: true,
        }
    }

    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError> {
        queries
            .iter()
            .map(|q| {
                self.check_alphabet(q.sequence)?;
                let fwd = self.forward(&self.tokens(q.sequence, q.masked()))?;
                let distributions = if q.wants.distributions {
                    let probs = fwd.probabilities();
                    let positions = q.covered_positions();
                    let width = probs.ncols();
                    let mut data = Vec::with_capacity(positions.len() * width);
                    for &i in &positions {
                        data.extend(probs.row(i).iter().copied());
                    }
                    Some(DistributionMatrix::new(width, positions, data)?)
                } else {
                    None
                };
                let embeddings = if q.wants.embeddings {
                    let width = fwd.embeddings.ncols();
                    Some(Embeddings::new(width, fwd.embeddings.iter().copied().collect())?)
                } else {
                    None
                };
                Ok(ScorerResponse { distributions, embeddings })
            })
            .collect()
    }
}
