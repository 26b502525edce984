//! Request and response records of the scoring protocol. The JSON schema
//! shipped as `schema/score-v1.json` describes the same fields.

use serde::{Deserialize, Serialize};

use crate::scoring::{DistributionMatrix, Embeddings, ScoreError, ScorerQuery, ScorerResponse};
use crate::seqcore::Alphabet;

pub const PROTOCOL_VERSION: u32 = 1;

/// Path of the scoring endpoint relative to the server root.
pub const SCORE_PATH: &str = "/v1/score";

/// Exp-sums further than this from 1 are rejected rather than renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-4;

const EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireWants {
    pub logprobs: bool,
    pub embeddings: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub protocol_version: u32,
    pub model: String,
    /// Sequence symbols as text, one character per position.
    pub sequence: String,
    /// Sorted 0-based positions into `sequence`.
    pub masked_positions: Vec<usize>,
    pub wants: WireWants,
    pub batch_id: String,
}

impl WireRequest {
    pub fn from_query(model: &str, query: &ScorerQuery<'_>) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            model: model.to_string(),
            sequence: query.sequence.text(),
            masked_positions: query.masked().to_vec(),
            wants: WireWants { logprobs: query.wants.distributions, embeddings: query.wants.embeddings },
            batch_id: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub name: String,
    pub revision: String,
    #[serde(default)]
    pub tokenizer_note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResponse {
    pub protocol_version: u32,
    pub batch_id: String,
    /// Positions the rows of `logprobs` refer to, in row order.
    pub positions: Vec<usize>,
    /// Natural-log probabilities over the declared alphabet order.
    #[serde(default)]
    pub logprobs: Option<Vec<Vec<f64>>>,
    /// One vector per sequence position.
    #[serde(default)]
    pub embeddings: Option<Vec<Vec<f64>>>,
    pub model: ModelMeta,
}

/// Only the version field, read first so a newer server yields a skew
/// error rather than a field mismatch.
#[derive(Deserialize)]
struct VersionProbe {
    protocol_version: Option<u32>,
}

pub(crate) fn excerpt(payload: &str) -> String {
    let mut s: String = payload.chars().take(EXCERPT_CHARS).collect();
    if payload.chars().count() > EXCERPT_CHARS {
        s.push_str("...");
    }
    s
}

fn protocol(msg: impl std::fmt::Display, payload: &str) -> ScoreError {
    ScoreError::Protocol(format!("{msg}; payload: {}", excerpt(payload)))
}

/// Parses and validates a response body against the request that produced
/// it. Rows that are normalized to within [`RENORMALIZE_TOL`] are rescaled
/// to sum to one.
pub fn decode_response(
    body: &str,
    request: &WireRequest,
    alphabet: &Alphabet,
) -> Result<ScorerResponse, ScoreError> {
    let probe: VersionProbe =
        serde_json::from_str(body).map_err(|e| protocol(format!("response is not a JSON record ({e})"), body))?;
    match probe.protocol_version {
        Some(v) if v == PROTOCOL_VERSION => {}
        Some(v) => return Err(ScoreError::VersionSkew { client: PROTOCOL_VERSION, server: v }),
        None => return Err(protocol("response has no protocol_version", body)),
    }
    let resp: WireResponse =
        serde_json::from_str(body).map_err(|e| protocol(format!("malformed response ({e})"), body))?;
    if resp.batch_id != request.batch_id {
        return Err(protocol(format!("batch id {} does not echo {}", resp.batch_id, request.batch_id), body));
    }
    let len = request.sequence.chars().count();
    let expected: Vec<usize> =
        if request.masked_positions.is_empty() { (0..len).collect() } else { request.masked_positions.clone() };

    let distributions = if request.wants.logprobs {
        if resp.positions != expected {
            return Err(protocol("positions do not echo the request", body));
        }
        let rows = resp.logprobs.as_ref().ok_or_else(|| protocol("logprobs missing", body))?;
        if rows.len() != expected.len() {
            return Err(protocol(format!("{} logprob rows for {} positions", rows.len(), expected.len()), body));
        }
        let width = alphabet.len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for (row, &pos) in rows.iter().zip(&expected) {
            if row.len() != width {
                return Err(protocol(
                    format!("row for position {pos} has width {}, alphabet has {width}", row.len()),
                    body,
                ));
            }
            if row.iter().any(|v| v.is_nan() || *v > 1e-9) {
                return Err(protocol(format!("row for position {pos} holds an invalid log-probability"), body));
            }
            let p: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > RENORMALIZE_TOL {
                return Err(protocol(format!("row for position {pos} sums to {sum}"), body));
            }
            data.extend(p.iter().map(|v| v / sum));
        }
        Some(DistributionMatrix::new(width, expected, data)?)
    } else {
        None
    };

    let embeddings = if request.wants.embeddings {
        let rows = resp.embeddings.as_ref().ok_or_else(|| protocol("embeddings missing", body))?;
        if rows.len() != len {
            return Err(protocol(format!("{} embedding rows for length {len}", rows.len()), body));
        }
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) || rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(protocol("embedding rows are ragged or non-finite", body));
        }
        Some(Embeddings::new(width, rows.concat()).map_err(|e| protocol(e, body))?)
    } else {
        None
    };
    Ok(ScorerResponse { distributions, embeddings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::Wants;
    use crate::seqcore::Sequence;

    fn req(x: &Sequence, masked: Vec<usize>) -> WireRequest {
        let q = ScorerQuery::new(x, masked, Wants::DISTRIBUTIONS).unwrap();
        let mut r = WireRequest::from_query("m", &q);
        r.batch_id = "b".into();
        r
    }

    fn body(version: u32, positions: &[usize], rows: Vec<Vec<f64>>) -> String {
        serde_json::json!({
            "protocol_version": version,
            "batch_id": "b",
            "positions": positions,
            "logprobs": rows,
            "model": {"name": "m", "revision": "r"},
        })
        .to_string()
    }

    fn x() -> Sequence {
        Sequence::from_text("s", "ACDE", Alphabet::protein()).unwrap()
    }

    #[test]
    fn slightly_off_rows_are_renormalized() {
        let a = Alphabet::protein();
        let mut row = vec![(0.05f64 * (1.0 + 5e-5)).ln(); 20];
        row[0] = (0.05f64).ln();
        let r = decode_response(&body(1, &[1], vec![row]), &req(&x(), vec![1]), &a).unwrap();
        let d = r.distributions().unwrap();
        assert!((d.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_and_echo_errors_carry_an_excerpt() {
        let a = Alphabet::protein();
        let narrow = body(1, &[1], vec![vec![(1.0f64 / 19.0).ln(); 19]]);
        let e = decode_response(&narrow, &req(&x(), vec![1]), &a).unwrap_err().to_string();
        assert!(e.contains("width 19") && e.contains("payload: {"), "{e}");
        let wrong_pos = body(1, &[2], vec![vec![0.05f64.ln(); 20]]);
        assert!(decode_response(&wrong_pos, &req(&x(), vec![1]), &a).is_err());
        let unnormalized = body(1, &[1], vec![vec![0.06f64.ln(); 20]]);
        assert!(decode_response(&unnormalized, &req(&x(), vec![1]), &a).is_err());
        assert!(decode_response("<html>", &req(&x(), vec![1]), &a).is_err());
    }

    #[test]
    fn version_skew_is_its_own_error() {
        let e = decode_response(&body(2, &[1], vec![]), &req(&x(), vec![1]), &Alphabet::protein()).unwrap_err();
        assert!(matches!(e, ScoreError::VersionSkew { client: 1, server: 2 }));
    }

    #[test]
    fn long_payloads_are_truncated() {
        let s = "x".repeat(1000);
        assert_eq!(excerpt(&s).len(), EXCERPT_CHARS + 3);
        assert_eq!(excerpt("short"), "short");
    }
}
