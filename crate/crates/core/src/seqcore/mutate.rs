use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{derive_seed, seeded};
use super::{SeqError, Sequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpWeights {
    pub substitution: f64,
    pub insertion: f64,
    pub deletion: f64,
}

impl OpWeights {
    pub const SUBSTITUTION_ONLY: OpWeights = OpWeights {
        substitution: 1.0,
        insertion: 0.0,
        deletion: 0.0,
    };

    pub const BALANCED: OpWeights = OpWeights {
        substitution: 1.0,
        insertion: 1.0,
        deletion: 1.0,
    };
}

impl Default for OpWeights {
    fn default() -> Self {
        Self::BALANCED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationSpec {
    pub proportion: f64,
    pub op_weights: OpWeights,
    pub seed: u64,
}

impl MutationSpec {
    pub fn new(proportion: f64, op_weights: OpWeights, seed: u64) -> Self {
        Self {
            proportion,
            op_weights,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SeqError> {
        if !(self.proportion > 0.0 && self.proportion <= 1.0) {
            return Err(SeqError::InvalidMutationSpec(format!(
                "proportion {} outside (0, 1]",
                self.proportion
            )));
        }
        let w = self.op_weights;
        let ws = [w.substitution, w.insertion, w.deletion];
        if ws.iter().any(|v| !v.is_finite() || *v < 0.0) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(SeqError::InvalidMutationSpec(
                "operation weights must be nonnegative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "symbol", rename_all = "lowercase")]
pub enum EditOp {
    Substitute(u8),
    /// Inserts a symbol immediately before the source position.
    Insert(u8),
    Delete,
}

/// One edit, addressed in source coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub op: EditOp,
}

/// The edits applied by [`mutate_copy`], in application order
/// (right to left), plus the induced position alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditTrace {
    pub edits: Vec<Edit>,
    /// For each output position, the source position it descends from
    /// (`None` for inserted symbols).
    pub source_of: Vec<Option<usize>>,
    /// For each source position, where it landed (`None` if deleted).
    pub target_of: Vec<Option<usize>>,
}

impl EditTrace {
    fn build(source_len: usize, edits: Vec<Edit>) -> Self {
        let mut by_pos: Vec<Option<EditOp>> = vec![None; source_len];
        for e in &edits {
            by_pos[e.position] = Some(e.op);
        }
        let mut source_of = Vec::with_capacity(source_len);
        let mut target_of = vec![None; source_len];
        for (p, op) in by_pos.iter().enumerate() {
            match op {
                Some(EditOp::Insert(_)) => {
                    source_of.push(None);
                    target_of[p] = Some(source_of.len());
                    source_of.push(Some(p));
                }
                Some(EditOp::Delete) => {}
                _ => {
                    target_of[p] = Some(source_of.len());
                    source_of.push(Some(p));
                }
            }
        }
        Self {
            edits,
            source_of,
            target_of,
        }
    }

    /// Replays the edits on `source`.
    pub fn apply(&self, source: &[u8]) -> Vec<u8> {
        let mut out = source.to_vec();
        for e in &self.edits {
            match e.op {
                EditOp::Substitute(s) => out[e.position] = s,
                EditOp::Insert(s) => out.insert(e.position, s),
                EditOp::Delete => {
                    out.remove(e.position);
                }
            }
        }
        out
    }
}

/// A copy of `x` with exactly `round(proportion·|x|)` positions edited.
pub fn mutate_copy(x: &Sequence, spec: &MutationSpec) -> Result<(Sequence, EditTrace), SeqError> {
    spec.validate()?;
    let len = x.len();
    if len < 2 {
        return Err(SeqError::TooShort { min: 2, len });
    }
    let count = (spec.proportion * len as f64).round() as usize;
    if count == 0 {
        return Err(SeqError::NoOpMutation);
    }
    let count = count.min(len);
    let mut rng = seeded(derive_seed(spec.seed, "mutate"));
    let mut positions = sample(&mut rng, len, count).into_vec();
    positions.sort_unstable_by(|a, b| b.cmp(a));

    let w = spec.op_weights;
    let chooser = WeightedIndex::new([w.substitution, w.insertion, w.deletion])
        .map_err(|e| SeqError::InvalidMutationSpec(e.to_string()))?;
    let k = x.alphabet().len() as u8;
    let edits: Vec<Edit> = positions
        .into_iter()
        .map(|position| {
            let op = match chooser.sample(&mut rng) {
                0 => {
                    let old = x.get(position);
                    let r = rng.random_range(0..k - 1);
                    EditOp::Substitute(if r >= old { r + 1 } else { r })
                }
                1 => EditOp::Insert(rng.random_range(0..k)),
                _ => EditOp::Delete,
            };
            Edit { position, op }
        })
        .collect();

    let trace = EditTrace::build(len, edits);
    let symbols = trace.apply(x.symbols());
    if symbols.is_empty() {
        return Err(SeqError::InvalidMutationSpec(
            "mutation deleted every position".into(),
        ));
    }
    let y = Sequence::new(format!("{}:mut{}", x.id(), spec.proportion), symbols, x.alphabet().clone())?;
    Ok((y, trace))
}
