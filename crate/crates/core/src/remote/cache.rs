use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::wire::WireRequest;

/// Content hash of everything that determines a response: protocol
/// version, model, sequence, masks and requested outputs.
pub fn cache_key(request: &WireRequest) -> String {
    let mut keyed = request.clone();
    keyed.batch_id.clear();
    let bytes = serde_json::to_vec(&keyed).expect("requests serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One file per response body, sharded by the first two hex digits.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<String>> {
        match fs::read_to_string(self.path(key)) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Writes to a unique temporary name and renames into place, so
    /// concurrent writers and interrupted runs never leave partial files.
    pub fn put(&self, key: &str, body: &str) -> io::Result<()> {
        let path = self.path(key);
        let dir = path.parent().expect("cache paths have a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{key}.{}.{:?}.tmp",
            std::process::id(),
            std::thread::current().id()
        ));
        fs::write(&tmp, body)?;
        fs::rename(&tmp, &path)
    }
}

#[cfg(test)]
mod tests {
    use super::super::wire::{WireWants, PROTOCOL_VERSION};
    use super::*;

    fn req(seq: &str, masked: Vec<usize>) -> WireRequest {
        WireRequest {
            protocol_version: PROTOCOL_VERSION,
            model: "m".into(),
            sequence: seq.into(),
            masked_positions: masked,
            wants: WireWants { logprobs: true, embeddings: false },
            batch_id: "x".into(),
        }
    }

    #[test]
    fn key_ignores_batch_id_only() {
        let a = req("ACDE", vec![1]);
        let mut b = a.clone();
        b.batch_id = "other".into();
        assert_eq!(cache_key(&a), cache_key(&b));
        assert_ne!(cache_key(&a), cache_key(&req("ACDE", vec![2])));
        assert_ne!(cache_key(&a), cache_key(&req("ACDF", vec![1])));
        let mut c = a.clone();
        c.wants.embeddings = true;
        assert_ne!(cache_key(&a), cache_key(&c));
        assert_eq!(cache_key(&a).len(), 64);
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let key = cache_key(&req("ACDE", vec![]));
        assert_eq!(cache.get(&key).unwrap(), None);
        let body = r#"{"x": 0.30000000000000004}"#;
        cache.put(&key, body).unwrap();
        assert_eq!(cache.get(&key).unwrap().as_deref(), Some(body));
        let leftovers = fs::read_dir(cache.path(&key).parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
