//! Content-addressed request/response cache.
//!
//! Every external request (search, page fetch, language-model call) is keyed
//! by the SHA-256 of its canonical JSON encoding and stored as one file under
//! `<root>/<namespace>/<digest>`. The file holds both the request and the
//! response so the cache directory can be inspected and shipped as a
//! reproduction bundle. Writes go to a temporary file in the same directory
//! and are renamed into place, so concurrent readers never observe a partial
//! entry and concurrent writers of the same key race harmlessly.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    Search,
    Fetch,
    Lm,
}

impl Namespace {
    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Search => "search",
            Namespace::Fetch => "fetch",
            Namespace::Lm => "lm",
        }
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub namespace: Namespace,
    /// Lowercase hex SHA-256 of the canonical request bytes.
    pub digest: String,
}

impl CacheKey {
    /// Key for a request value. serde_json emits struct fields in declaration
    /// order and formats floats with a shortest round-trip algorithm, so the
    /// encoding (and hence the digest) is identical across runs and platforms.
    pub fn for_request<T: Serialize>(namespace: Namespace, request: &T) -> Result<Self> {
        let bytes = serde_json::to_vec(request)
            .map_err(|e| Error::json(format!("encoding {namespace} request"), e))?;
        Ok(CacheKey {
            namespace,
            digest: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Entry<Req, Resp> {
    request: Req,
    response: Resp,
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)
            .map_err(|e| Error::io(format!("creating cache root {}", root.display()), e))?;
        Ok(Cache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.root.join(key.namespace.as_str()).join(&key.digest)
    }

    pub fn get<Resp: DeserializeOwned>(&self, key: &CacheKey) -> Result<Option<Resp>> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
        };
        let entry: Entry<serde::de::IgnoredAny, Resp> = serde_json::from_slice(&bytes)
            .map_err(|e| Error::json(format!("decoding {}", path.display()), e))?;
        Ok(Some(entry.response))
    }

    pub fn put<Req: Serialize, Resp: Serialize>(
        &self,
        key: &CacheKey,
        request: &Req,
        response: &Resp,
    ) -> Result<()> {
        let bytes = serde_json::to_vec(&Entry { request, response })
            .map_err(|e| Error::json("encoding cache entry", e))?;
        write_if_changed(&self.entry_path(key), &bytes)?;
        Ok(())
    }

    /// Look up `request`, computing and storing the response on a miss.
    pub fn get_or_insert_with<Req, Resp, F>(
        &self,
        namespace: Namespace,
        request: &Req,
        compute: F,
    ) -> Result<Resp>
    where
        Req: Serialize,
        Resp: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<Resp>,
    {
        let key = CacheKey::for_request(namespace, request)?;
        if let Some(hit) = self.get(&key)? {
            return Ok(hit);
        }
        let response = compute()?;
        self.put(&key, request, &response)?;
        Ok(response)
    }
}

/// Atomically replace `path` with `bytes` unless it already holds exactly
/// those bytes. Returns whether the file changed.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if let Ok(existing) = fs::read(path) {
        if existing == bytes {
            return Ok(false);
        }
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::io(format!("creating temp file in {}", dir.display()), e))?;
    tmp.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(format!("renaming into {}", path.display()), e.error))?;
    Ok(true)
}

pub fn write_json_if_changed<T: Serialize>(path: &Path, value: &T) -> Result<bool> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::json(format!("encoding {}", path.display()), e))?;
    bytes.push(b'\n');
    write_if_changed(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Error::json(format!("decoding {}", path.display()), e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(format!("reading {}", path.display()), e)),
    }
}

/// File-name-safe form of a record id. Ids made only of `[A-Za-z0-9._-]`
/// pass through; anything else is replaced and suffixed with a short digest
/// so distinct ids never collide.
pub fn file_stem_for_id(id: &str) -> String {
    let safe = |c: char| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-');
    if !id.is_empty() && id.chars().all(safe) && !id.starts_with('.') {
        return id.to_string();
    }
    let cleaned: String = id.chars().map(|c| if safe(c) { c } else { '_' }).collect();
    let digest = hex::encode(Sha256::digest(id.as_bytes()));
    format!("{}-{}", cleaned.trim_start_matches('.'), &digest[..12])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Req<'a> {
        query: &'a str,
        top_k: usize,
    }

    #[test]
    fn identical_requests_share_a_key() {
        let a = CacheKey::for_request(
            Namespace::Search,
            &Req {
                query: "q",
                top_k: 20,
            },
        )
        .unwrap();
        let b = CacheKey::for_request(
            Namespace::Search,
            &Req {
                query: "q",
                top_k: 20,
            },
        )
        .unwrap();
        let c = CacheKey::for_request(
            Namespace::Search,
            &Req {
                query: "q",
                top_k: 19,
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.digest.len(), 64);
    }

    #[test]
    fn digest_is_pinned() {
        // sha256 of `{"query":"q","top_k":20}`; guards against accidental
        // changes to request encoding, which would orphan existing caches.
        let key = CacheKey::for_request(
            Namespace::Search,
            &Req {
                query: "q",
                top_k: 20,
            },
        )
        .unwrap();
        let expected = hex::encode(Sha256::digest(br#"{"query":"q","top_k":20}"#));
        assert_eq!(key.digest, expected);
    }

    #[test]
    fn put_then_get_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        let req = Req { query: "q", top_k: 3 };
        let key = CacheKey::for_request(Namespace::Search, &req).unwrap();
        assert_eq!(cache.get::<Vec<String>>(&key).unwrap(), None);
        cache.put(&key, &req, &vec!["a".to_string()]).unwrap();
        assert_eq!(
            cache.get::<Vec<String>>(&key).unwrap(),
            Some(vec!["a".to_string()])
        );
        assert!(cache.entry_path(&key).starts_with(dir.path().join("search")));
    }

    #[test]
    fn get_or_insert_computes_once() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        let mut calls = 0;
        for _ in 0..3 {
            let v: u32 = cache
                .get_or_insert_with(Namespace::Lm, &"req", || {
                    calls += 1;
                    Ok(7)
                })
                .unwrap();
            assert_eq!(v, 7);
        }
        assert_eq!(calls, 1);
    }

    #[test]
    fn write_if_changed_reports_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x/y.txt");
        assert!(write_if_changed(&path, b"abc").unwrap());
        assert!(!write_if_changed(&path, b"abc").unwrap());
        assert!(write_if_changed(&path, b"abd").unwrap());
    }

    #[test]
    fn file_stems_are_safe_and_distinct() {
        assert_eq!(file_stem_for_id("q1"), "q1");
        let a = file_stem_for_id("a/b");
        let b = file_stem_for_id("a_b");
        assert_ne!(a, b);
        assert!(!a.contains('/'));
        assert!(!file_stem_for_id("..").starts_with('.'));
    }
}
