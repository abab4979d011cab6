use crate::provider::ProviderError;
use crate::text::{char_len, split_sentences};

/// Produces a short summary of a text chunk.
pub trait SummaryProvider: Send + Sync {
    fn name(&self) -> &str;
    fn summarize(&self, text: &str) -> Result<String, ProviderError>;
}

pub const DEFAULT_LEAD_SENTENCES: usize = 2;

/// Offline summarizer: the first `n` sentences.
#[derive(Debug, Clone, Copy)]
pub struct LeadSentences {
    pub n: usize,
}

impl Default for LeadSentences {
    fn default() -> Self {
        LeadSentences {
            n: DEFAULT_LEAD_SENTENCES,
        }
    }
}

impl LeadSentences {
    pub fn apply(&self, text: &str) -> String {
        split_sentences(text)
            .into_iter()
            .take(self.n.max(1))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl SummaryProvider for LeadSentences {
    fn name(&self) -> &str {
        "lead-sentences"
    }

    fn summarize(&self, text: &str) -> Result<String, ProviderError> {
        Ok(self.apply(text))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub text: String,
    /// The provider failed and the lead-sentence fallback was used.
    pub fallback_used: bool,
}

/// Summarize with `provider`, falling back to the first `fallback_n`
/// sentences when it fails, returns nothing, or returns more than it was
/// given.
pub fn summarize(text: &str, provider: &dyn SummaryProvider, fallback_n: usize) -> Summary {
    let result = provider.summarize(text).and_then(|s| {
        let s = s.trim().to_string();
        if s.is_empty() {
            Err(ProviderError::invalid(provider.name(), "empty summary"))
        } else if char_len(&s) > char_len(text) {
            Err(ProviderError::invalid(provider.name(), "summary longer than its input"))
        } else {
            Ok(s)
        }
    });
    match result {
        Ok(text) => Summary {
            text,
            fallback_used: false,
        },
        Err(e) => {
            log::warn!("summary provider failed, using lead sentences: {e}");
            Summary {
                text: LeadSentences { n: fallback_n }.apply(text),
                fallback_used: true,
            }
        }
    }
}
