//! Synthetic user data from a dialog graph: FAQ-style questions per node
//! (methods V1, V2, V3) and answer paraphrases (methods A, B), obtained by
//! prompting a chat-completion model.

mod generate;
mod llm;
mod ner;
mod parse;
mod prompts;

pub use generate::{
    Clock, GenerationFailure, GenerationOutcome, Generator, QuestionMethod, SystemClock,
    FixedClock, V3_TARGET,
};
pub use llm::{
    prompt_hash, ChatMessage, GenerationParams, LlmClient, LlmError, OpenAiClient, Role,
    ScriptedClient,
};
pub use ner::{HeuristicNer, NerProvider, RemoteNer};
pub use parse::parse_numbered_list;
pub use prompts::{render_prompt, template, Bindings, Method, PromptTemplate};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("template {method:?} needs a binding for {placeholder}")]
    MissingBinding {
        method: Method,
        placeholder: &'static str,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no list items parsed from completion after retry")]
    EmptyGeneration,
    #[error("node {0:?} has no text to generate from")]
    EmptyNodeText(String),
    #[error("NER failed: {0}")]
    Ner(String),
}
