use std::sync::{Condvar, Mutex};

use anyhow::Result;
use esgx_core::agent::{ChatProvider, ChatRequest, HttpChat, MockProvider};
use esgx_core::kb::{EmbeddingProvider, HashedBagEmbedder, HttpEmbedder, LeadSentences, SummaryProvider};
use esgx_core::provider::ProviderError;
use esgx_core::retrieval::{HttpReranker, JaccardReranker, Reranker};

use crate::commands::{config_error, provider_error};
use crate::config::{Mode, RunConfig};
use crate::manifest::ProviderNames;

/// Caps the number of chat calls in flight.
pub struct BoundedChat {
    inner: Box<dyn ChatProvider>,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl BoundedChat {
    pub fn new(inner: Box<dyn ChatProvider>, limit: usize) -> Self {
        BoundedChat {
            inner,
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }
}

impl ChatProvider for BoundedChat {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, ProviderError> {
        {
            let mut n = self.in_flight.lock().expect("chat limiter");
            while *n >= self.limit {
                n = self.freed.wait(n).expect("chat limiter");
            }
            *n += 1;
        }
        let out = self.inner.complete(req);
        *self.in_flight.lock().expect("chat limiter") -= 1;
        self.freed.notify_one();
        out
    }
}

pub struct Backends {
    pub embedder: Box<dyn EmbeddingProvider>,
    pub reranker: Box<dyn Reranker>,
    pub summarizer: LeadSentences,
    pub chat: Option<BoundedChat>,
}

impl Backends {
    /// Providers named by the config. The chat provider is only built when
    /// `with_chat` is set, since most commands never call it.
    pub fn from_config(cfg: &RunConfig, with_chat: bool) -> Result<Backends> {
        let p = &cfg.providers;
        let summarizer = LeadSentences {
            n: cfg.kb.summary_sentences,
        };
        let b = match p.mode {
            Mode::Offline => {
                let chat = if with_chat {
                    let path = p
                        .mock_replies
                        .as_ref()
                        .ok_or_else(|| config_error("offline extraction needs providers.mock_replies"))?;
                    let mock = MockProvider::load(path).map_err(config_error)?;
                    Some(BoundedChat::new(Box::new(mock), p.max_concurrent_calls))
                } else {
                    None
                };
                Backends {
                    embedder: Box::new(HashedBagEmbedder::new(p.embedding_dim)),
                    reranker: Box::new(JaccardReranker),
                    summarizer,
                    chat,
                }
            }
            Mode::Online => {
                let e = p.embedding.as_ref().expect("validated");
                let embedder = HttpEmbedder::new(&e.name, e.dim.expect("validated"), e.endpoint());
                let reranker: Box<dyn Reranker> = match &p.rerank {
                    Some(r) => Box::new(HttpReranker::new(&r.name, r.endpoint())),
                    None => Box::new(JaccardReranker),
                };
                let chat = with_chat.then(|| {
                    let c = p.chat.as_ref().expect("validated");
                    BoundedChat::new(Box::new(HttpChat::new(&c.name, c.endpoint())), p.max_concurrent_calls)
                });
                let b = Backends {
                    embedder: Box::new(embedder),
                    reranker,
                    summarizer,
                    chat,
                };
                b.probe()?;
                b
            }
        };
        Ok(b)
    }

    /// One small embedding call, so an unreachable endpoint stops the run
    /// before any work.
    fn probe(&self) -> Result<()> {
        match self.embedder.embed(&["probe".to_string()]) {
            Ok(_) => Ok(()),
            Err(e) if e.is_unreachable() => Err(provider_error(format!("embedding provider unreachable: {e}"))),
            Err(e) => Err(provider_error(format!("embedding provider failed: {e}"))),
        }
    }

    pub fn names(&self, use_rerank: bool) -> ProviderNames {
        ProviderNames {
            embedding: Some(format!("{} (dim {})", self.embedder.name(), self.embedder.dim())),
            rerank: use_rerank.then(|| self.reranker.name().to_string()),
            chat: self.chat.as_ref().map(|c| c.name().to_string()),
            summary: Some(self.summarizer.name().to_string()),
        }
    }
}
