use super::{DistributionMatrix, ScoreError, Scorer, ScorerQuery, Wants};
use crate::seqcore::Sequence;

pub const DEFAULT_BATCH: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions {
    /// Masked variants sent per scorer call.
    pub batch_size: usize,
    /// Spread batches over worker threads when the scorer allows it.
    pub parallel: bool,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH,
            parallel: false,
        }
    }
}

/// Row `i` is the scorer's distribution at `i` with only `i` masked.
pub fn one_at_a_time_profile(
    scorer: &dyn Scorer,
    x: &Sequence,
    opts: ProfileOptions,
) -> Result<DistributionMatrix, ScoreError> {
    let caps = scorer.capabilities();
    caps.check_wants(Wants::DISTRIBUTIONS)?;
    caps.check_len(x.len())?;
    let positions: Vec<usize> = (0..x.len()).collect();
    let chunks: Vec<&[usize]> = positions.chunks(opts.batch_size.max(1)).collect();

    let run = |chunk: &[usize]| -> Result<Vec<(usize, Vec<f64>)>, ScoreError> {
        let queries = chunk
            .iter()
            .map(|&i| ScorerQuery::single(x, i))
            .collect::<Result<Vec<_>, _>>()?;
        let responses = scorer
            .score_batch(&queries)
            .map_err(|e| e.at_position(chunk[0]))?;
        if responses.len() != chunk.len() {
            return Err(ScoreError::Shape(format!(
                "{} responses for {} queries",
                responses.len(),
                chunk.len()
            )));
        }
        chunk
            .iter()
            .zip(responses)
            .map(|(&i, r)| {
                let d = r.distributions().map_err(|e| e.at_position(i))?;
                let row = d.at(i).ok_or(ScoreError::Coverage(i))?;
                Ok((i, row.to_vec()))
            })
            .collect()
    };

    let gathered: Vec<Vec<(usize, Vec<f64>)>> = if opts.parallel && caps.concurrent {
        par_map(&chunks, |c| run(c))?
    } else {
        chunks.iter().map(|c| run(c)).collect::<Result<_, _>>()?
    };
    let width = x.alphabet().len();
    let rows: Vec<(usize, Vec<f64>)> = gathered.into_iter().flatten().collect();
    if let Some((pos, _)) = rows.iter().find(|(_, r)| r.len() != width) {
        return Err(ScoreError::Shape(format!("row width mismatch at position {pos}")));
    }
    Ok(DistributionMatrix::assemble(width, rows))
}

/// Distributions at every position from one unmasked pass.
pub fn ofs_profile(scorer: &dyn Scorer, x: &Sequence) -> Result<DistributionMatrix, ScoreError> {
    let caps = scorer.capabilities();
    caps.check_wants(Wants::DISTRIBUTIONS)?;
    caps.check_len(x.len())?;
    let response = scorer.score(&ScorerQuery::unmasked(x, Wants::DISTRIBUTIONS))?;
    let d = response.distributions.ok_or_else(|| {
        ScoreError::Capability("scorer returned no distributions".into())
    })?;
    if d.len() != x.len() {
        return Err(ScoreError::Shape(format!(
            "single-pass profile covers {} of {} positions",
            d.len(),
            x.len()
        )));
    }
    Ok(d)
}

/// Distribution at `at` when exactly `masked` are hidden.
pub fn masked_row(
    scorer: &dyn Scorer,
    x: &Sequence,
    masked: Vec<usize>,
    at: usize,
) -> Result<Vec<f64>, ScoreError> {
    let q = ScorerQuery::new(x, masked, Wants::DISTRIBUTIONS)?;
    if !q.is_masked(at) {
        return Err(ScoreError::InvalidQuery(format!("position {at} is not masked")));
    }
    let r = scorer.score(&q).map_err(|e| e.at_position(at))?;
    r.distributions()?
        .at(at)
        .map(<[f64]>::to_vec)
        .ok_or(ScoreError::Coverage(at))
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>, ScoreError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, ScoreError> + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>, ScoreError>
where
    F: Fn(&T) -> Result<R, ScoreError>,
{
    items.iter().map(f).collect()
}
