//! Prompt-based classification against chat-completion backends.

mod cache;
mod parse;
mod prompt;

#[cfg(feature = "runtime")]
pub mod backend;
#[cfg(feature = "runtime")]
mod batch;

pub use cache::{
    cache_key, digest_fields, CacheEntry, CacheError, CacheRequest, DirCache, MemoryCache,
    ReasoningLevel, ResponseCache,
};
pub use parse::{parse_response, parse_response_detailed, ParseOutcome, RepairRule};
pub use prompt::{
    build_prompt, Feature, NameMode, PromptConfig, PromptError, Template, TemplateError,
    TemplateRegistry, BASELINE_TEMPLATE_ID,
};

#[cfg(feature = "runtime")]
pub use batch::{classify_batch, BackendConfig, BatchError, BatchOutput, UsageReport};
