//! Client for model servers that speak the JSON scoring protocol over
//! HTTP. Any such server becomes a [`Scorer`](crate::scoring::Scorer).

mod cache;
mod client;
mod wire;

pub use cache::{cache_key, ResponseCache};
pub use client::{RemoteConfig, RemoteScorer, ENDPOINT_ENV, TOKEN_ENV};
pub use wire::{
    decode_response, ModelMeta, WireRequest, WireResponse, WireWants, PROTOCOL_VERSION, RENORMALIZE_TOL,
    SCORE_PATH,
};
