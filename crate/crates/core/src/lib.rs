pub mod embedprobe;
pub mod models;
pub mod probes;
#[cfg(feature = "remote")]
pub mod remote;
pub mod scoring;
pub mod seqcore;
