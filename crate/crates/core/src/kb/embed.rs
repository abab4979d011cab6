use serde::{Deserialize, Serialize};

use crate::provider::{HttpEndpoint, JsonClient, ProviderError};
use crate::text::tokenize;

/// Turns texts into fixed-length vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// One vector of length [`dim`](Self::dim) per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

/// Check count, length and finiteness of a provider's output.
pub fn check_embeddings(
    provider: &dyn EmbeddingProvider,
    inputs: usize,
    vectors: &[Vec<f32>],
) -> Result<(), ProviderError> {
    if vectors.len() != inputs {
        return Err(ProviderError::invalid(
            provider.name(),
            format!("{} vectors for {inputs} texts", vectors.len()),
        ));
    }
    for v in vectors {
        if v.len() != provider.dim() {
            return Err(ProviderError::invalid(
                provider.name(),
                format!("vector of length {} (expected {})", v.len(), provider.dim()),
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ProviderError::invalid(provider.name(), "non-finite component"));
        }
    }
    Ok(())
}

pub const DEFAULT_DIM: usize = 256;

/// Offline embedder: lowercased tokens hashed (FNV-1a) into `dim` buckets,
/// counted, and L2-normalized. Text without tokens maps to the zero vector.
#[derive(Debug, Clone)]
pub struct HashedBagEmbedder {
    dim: usize,
    name: String,
}

impl HashedBagEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        HashedBagEmbedder {
            dim,
            name: format!("hashed-bow-v1-{dim}"),
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for token in tokenize(text) {
            v[(fnv1a(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for HashedBagEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl EmbeddingProvider for HashedBagEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Remote embedder: POST `{"texts": [...]}` → `{"vectors": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: JsonClient,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(name: impl Into<String>, dim: usize, endpoint: HttpEndpoint) -> Self {
        HttpEmbedder {
            client: JsonClient::new(name, endpoint),
            dim,
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let resp: EmbedResponse = self.client.post(&EmbedRequest { texts })?;
        check_embeddings(self, texts.len(), &resp.vectors)?;
        Ok(resp.vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::testserver;

    #[test]
    fn hashed_vectors_are_unit_and_deterministic() {
        let e = HashedBagEmbedder::default();
        let a = e.embed_one("Scope 1 emissions were 12,500 tCO2e");
        let b = e.embed_one("scope 1 EMISSIONS were 12,500 tco2e");
        assert_eq!(a, b);
        let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(e.embed_one("  ,, ").iter().all(|x| *x == 0.0));
    }

    #[test]
    fn http_embedder_posts_texts() {
        let served = testserver::serve(vec![(200, r#"{"vectors": [[1.0, 0.0], [0.0, 1.0]]}"#.into())]);
        let e = HttpEmbedder::new("remote", 2, HttpEndpoint::new(served.url));
        let v = e.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (_, body) = served.requests.recv().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(sent, serde_json::json!({"texts": ["a", "b"]}));
    }

    #[test]
    fn http_embedder_rejects_wrong_dim() {
        let served = testserver::serve(vec![(200, r#"{"vectors": [[1.0]]}"#.into())]);
        let e = HttpEmbedder::new("remote", 2, HttpEndpoint::new(served.url));
        let err = e.embed(&["a".into()]).unwrap_err();
        assert!(matches!(err, ProviderError::InvalidResponse { .. }));
    }
}
