#![cfg(feature = "remote")]

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use iclaudit::remote::{RemoteConfig, RemoteScorer, WireRequest, WireResponse, WireWants, ModelMeta};
use iclaudit::scoring::{one_at_a_time_profile, pseudo_perplexity, ProfileOptions, ScoreError, Scorer, ScorerQuery, Wants};
use iclaudit::seqcore::{Alphabet, Sequence};
use serde_json::Value;

type Handler = dyn Fn(&WireRequest, usize) -> (u16, String) + Send + Sync;

struct Mock {
    endpoint: String,
    hits: Arc<AtomicUsize>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

/// Minimal HTTP/1.1 server: one request per connection, handled on a
/// background thread. `handler` gets the parsed request and the running
/// request count.
fn serve(handler: Arc<Handler>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let (h, a) = (hits.clone(), auth.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (h, a, handler) = (h.clone(), a.clone(), handler.clone());
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut token = None;
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                assert!(line.starts_with("POST /v1/score "), "{line}");
                loop {
                    line.clear();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    let (k, v) = l.split_once(':').unwrap();
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap(),
                        "authorization" => token = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let req: WireRequest = serde_json::from_slice(&body).unwrap();
                let n = h.fetch_add(1, Ordering::SeqCst);
                a.lock().unwrap().push(token);
                let (status, text) = handler(&req, n);
                let head = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    text.len()
                );
                stream.write_all(head.as_bytes()).unwrap();
                stream.write_all(text.as_bytes()).unwrap();
            });
        }
    });
    Mock { endpoint, hits, auth }
}

/// Log-probabilities that put all mass on the true symbol.
fn echo(req: &WireRequest) -> WireResponse {
    let a = Alphabet::protein();
    let symbols = a.encode(&req.sequence).unwrap();
    let positions: Vec<usize> =
        if req.masked_positions.is_empty() { (0..symbols.len()).collect() } else { req.masked_positions.clone() };
    let logprobs = positions
        .iter()
        .map(|&p| (0..a.len()).map(|k| if k == symbols[p] as usize { 0.0 } else { -1e4 }).collect())
        .collect();
    let embeddings = req.wants.embeddings.then(|| symbols.iter().map(|&s| vec![s as f64, 1.0, -1.0]).collect());
    WireResponse {
        protocol_version: 1,
        batch_id: req.batch_id.clone(),
        positions,
        logprobs: req.wants.logprobs.then_some(logprobs),
        embeddings,
        model: ModelMeta { name: "echo".into(), revision: "0".into(), tokenizer_note: String::new() },
    }
}

fn echo_server() -> Mock {
    serve(Arc::new(|req: &WireRequest, _| (200, serde_json::to_string(&echo(req)).unwrap())))
}

fn config(m: &Mock) -> RemoteConfig {
    RemoteConfig { endpoint: m.endpoint.clone(), model: "echo".into(), backoff_ms: 1, ..RemoteConfig::default() }
}

fn protein(text: &str) -> Sequence {
    Sequence::from_text("q", text, Alphabet::protein()).unwrap()
}

#[test]
fn echo_model_gives_unit_pseudo_perplexity() {
    let m = echo_server();
    let scorer = RemoteScorer::new(config(&m)).unwrap();
    let x = protein("MKTAYIAKQRQISFVKSHFSRQ");
    let profile = one_at_a_time_profile(&scorer, &x, ProfileOptions::default()).unwrap();
    assert_eq!(pseudo_perplexity(&profile, &x, None).unwrap().value, 1.0);
    assert_eq!(m.hits.load(Ordering::SeqCst), x.len());
    assert_eq!(scorer.network_calls(), x.len() as u64);
}

#[test]
fn repeated_query_is_served_from_cache() {
    let m = echo_server();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RemoteConfig { cache_dir: Some(dir.path().to_path_buf()), ..config(&m) };
    let x = protein("ACDEFGHIK");
    let q = ScorerQuery::new(&x, vec![2, 5], Wants::BOTH).unwrap();
    let first = RemoteScorer::new(cfg.clone()).unwrap();
    let a = first.score(&q).unwrap();
    assert_eq!(first.network_calls(), 1);
    let second = RemoteScorer::new(cfg).unwrap();
    let b = second.score(&q).unwrap();
    assert_eq!(second.network_calls(), 0);
    assert_eq!(second.cache_hits(), 1);
    assert_eq!(a, b);
    assert_eq!(m.hits.load(Ordering::SeqCst), 1);
    assert_eq!(b.embeddings().unwrap().width(), 3);
}

#[test]
fn batches_keep_query_order() {
    let m = echo_server();
    let scorer = RemoteScorer::new(config(&m)).unwrap();
    let x = protein("WYVTSRQPNMLKIHGFEDCA");
    let queries: Vec<_> = (0..x.len()).rev().map(|p| ScorerQuery::single(&x, p).unwrap()).collect();
    let out = scorer.score_batch(&queries).unwrap();
    for (q, r) in queries.iter().zip(&out) {
        let d = r.distributions().unwrap();
        assert_eq!(d.positions(), q.masked());
        assert_eq!(d.row(0)[x.get(q.masked()[0]) as usize], 1.0);
    }
}

#[test]
fn transient_failures_are_retried() {
    let m = serve(Arc::new(|req: &WireRequest, n| {
        if n < 2 {
            (503, "busy".into())
        } else {
            (200, serde_json::to_string(&echo(req)).unwrap())
        }
    }));
    let scorer = RemoteScorer::new(config(&m)).unwrap();
    let x = protein("ACDE");
    assert!(scorer.score(&ScorerQuery::single(&x, 1).unwrap()).is_ok());
    assert_eq!(scorer.network_calls(), 3);
}

#[test]
fn retries_are_bounded() {
    let m = serve(Arc::new(|_: &WireRequest, _| (500, "down".into())));
    let scorer = RemoteScorer::new(config(&m)).unwrap();
    let x = protein("ACDE");
    let e = scorer.score(&ScorerQuery::single(&x, 1).unwrap()).unwrap_err();
    assert!(matches!(e.root(), ScoreError::Transport(_)), "{e}");
    assert_eq!(scorer.network_calls(), 4);
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = RemoteConfig {
        endpoint: format!("http://127.0.0.1:{port}"),
        model: "m".into(),
        backoff_ms: 1,
        ..RemoteConfig::default()
    };
    let scorer = RemoteScorer::new(cfg).unwrap();
    let x = protein("ACDE");
    assert!(matches!(scorer.score(&ScorerQuery::single(&x, 1).unwrap()).unwrap_err(), ScoreError::Transport(_)));
}

#[test]
fn narrow_rows_are_a_protocol_error_and_not_cached() {
    let m = serve(Arc::new(|req: &WireRequest, _| {
        let mut r = echo(req);
        for row in r.logprobs.as_mut().unwrap() {
            *row = vec![(1.0f64 / 19.0).ln(); 19];
        }
        (200, serde_json::to_string(&r).unwrap())
    }));
    let dir = tempfile::tempdir().unwrap();
    let scorer = RemoteScorer::new(RemoteConfig { cache_dir: Some(dir.path().to_path_buf()), ..config(&m) }).unwrap();
    let x = protein("ACDE");
    let e = scorer.score(&ScorerQuery::single(&x, 1).unwrap()).unwrap_err();
    assert!(matches!(e, ScoreError::Protocol(ref s) if s.contains("width 19")), "{e}");
    assert_eq!(scorer.network_calls(), 1);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn newer_server_is_a_hard_error() {
    let m = serve(Arc::new(|req: &WireRequest, _| {
        let mut v = serde_json::to_value(echo(req)).unwrap();
        v["protocol_version"] = 2.into();
        v["new_field"] = true.into();
        (200, v.to_string())
    }));
    let scorer = RemoteScorer::new(config(&m)).unwrap();
    let x = protein("ACDE");
    let e = scorer.score(&ScorerQuery::single(&x, 1).unwrap()).unwrap_err();
    assert!(matches!(e, ScoreError::VersionSkew { client: 1, server: 2 }));
    assert_eq!(scorer.network_calls(), 1);
}

#[test]
fn bearer_token_is_sent() {
    let m = echo_server();
    let scorer = RemoteScorer::new(RemoteConfig { token: Some("s3cret".into()), ..config(&m) }).unwrap();
    let x = protein("ACDE");
    scorer.score(&ScorerQuery::single(&x, 0).unwrap()).unwrap();
    assert_eq!(m.auth.lock().unwrap()[0].as_deref(), Some("Bearer s3cret"));
}

#[test]
fn capability_and_alphabet_checks_happen_before_the_network() {
    let m = echo_server();
    let scorer = RemoteScorer::new(RemoteConfig { embeddings: false, max_len: Some(3), ..config(&m) }).unwrap();
    let x = protein("ACD");
    assert!(scorer.score(&ScorerQuery::unmasked(&x, Wants::EMBEDDINGS)).unwrap_err().is_capability());
    let long = protein("ACDE");
    assert!(scorer.score(&ScorerQuery::single(&long, 0).unwrap()).unwrap_err().is_context_overflow());
    let rna = Sequence::from_text("r", "ACG", Alphabet::rna()).unwrap();
    assert!(scorer.score(&ScorerQuery::single(&rna, 0).unwrap()).is_err());
    assert_eq!(scorer.network_calls(), 0);
    assert!(RemoteScorer::new(RemoteConfig::default()).is_err());
}

fn schema() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../schema/score-v1.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn records_match_the_shipped_schema() {
    let s = schema();
    let x = protein("ACDE");
    let q = ScorerQuery::new(&x, vec![1], Wants::BOTH).unwrap();
    let req = serde_json::to_value(WireRequest::from_query("m", &q)).unwrap();
    let req_schema = &s["$defs"]["request"];
    assert_eq!(keys(&req), keys(&req_schema["properties"]));
    let required: BTreeSet<String> =
        req_schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    assert_eq!(keys(&req), required);
    assert_eq!(keys(&req["wants"]), keys(&req_schema["properties"]["wants"]["properties"]));
    let _: WireWants = serde_json::from_value(req["wants"].clone()).unwrap();

    let resp = serde_json::to_value(echo(&serde_json::from_value(req).unwrap())).unwrap();
    let resp_schema = &s["$defs"]["response"];
    assert_eq!(keys(&resp), keys(&resp_schema["properties"]));
    assert_eq!(keys(&resp["model"]), keys(&resp_schema["properties"]["model"]["properties"]));
    assert_eq!(resp_schema["properties"]["protocol_version"]["description"].as_str().is_some(), true);
    assert_eq!(s["$defs"]["request"]["properties"]["protocol_version"]["const"], iclaudit::remote::PROTOCOL_VERSION);
}
