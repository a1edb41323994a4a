use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatMessage, DatagenError, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    V1,
    V2,
    #[serde(rename = "V3-base")]
    V3Base,
    #[serde(rename = "V3-entity")]
    V3Entity,
    A,
    B,
}

/// System directive plus user message. `{COUNT}` renders to the method's
/// default count unless bound explicitly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub method: Method,
    pub system: &'static str,
    pub user: &'static str,
    pub default_count: usize,
}

const SYSTEM_V1: &str = "You are a truthful assistant, generating diverse FAQ-style questions given some facts. \
The generated questions should be answerable using the given fact only, without additional knowledge. \
The questions should also be human-like. Try to vary the amount of information between questions. \
Present the results in a numbered list.";

const SYSTEM_V2: &str = "You are a truthful assistant, generating diverse FAQ-style questions given some facts. \
The generated questions should be answerable using the given fact only, without additional knowledge. \
The questions should also be short and human-like. Try to vary the amount of information between questions. \
Present the results in a numbered list.";

const SYSTEM_A: &str = "You are generating semantically similar paraphrases for a given response to some question. \
The generated response paraphrases should be human-like and short, using frequently used words and phrases only. \
Present the results in a numbered list.";

const SYSTEM_B: &str = "You are shortening a given response to some question into a keyword-like prompt. \
Present the results in a numbered list.";

const USER_FAQ: &str = "Generate {COUNT} FAQ-style questions about the given facts: \"{NODE TEXT}\".";
const USER_ENTITY: &str = "Generate {COUNT} questions about the entity \"{NER}\" from the fact: \"{NODE TEXT}\"";
const USER_A: &str = "Generate {COUNT} paraphrases for the response \"{RESPONSE TEXT}\" to the question \"{NODE TEXT}\"";
const USER_B: &str = "Generate {COUNT} options for shortening the response \"{RESPONSE TEXT}\" to the question \"{NODE TEXT}\"";

pub fn template(method: Method) -> PromptTemplate {
    let (system, user, default_count) = match method {
        Method::V1 => (SYSTEM_V1, USER_FAQ, 10),
        Method::V2 => (SYSTEM_V2, USER_FAQ, 10),
        Method::V3Base => (SYSTEM_V2, USER_FAQ, 3),
        Method::V3Entity => (SYSTEM_V2, USER_ENTITY, 3),
        Method::A => (SYSTEM_A, USER_A, 5),
        Method::B => (SYSTEM_B, USER_B, 5),
    };
    PromptTemplate {
        method,
        system,
        user,
        default_count,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bindings {
    pub node_text: Option<String>,
    pub ner: Option<String>,
    pub response_text: Option<String>,
    pub count: Option<usize>,
}

impl Bindings {
    pub fn node(text: impl Into<String>) -> Self {
        Bindings {
            node_text: Some(text.into()),
            ..Default::default()
        }
    }

    pub fn with_ner(mut self, entity: impl Into<String>) -> Self {
        self.ner = Some(entity.into());
        self
    }

    pub fn with_response(mut self, response: impl Into<String>) -> Self {
        self.response_text = Some(response.into());
        self
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = Some(count);
        self
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{(NODE TEXT|NER|RESPONSE TEXT|COUNT)\}").expect("valid regex"))
}

fn fill(template: &PromptTemplate, text: &str, bindings: &Bindings) -> Result<String, DatagenError> {
    let mut out = String::with_capacity(text.len() + 64);
    let mut last = 0;
    for m in placeholder_re().find_iter(text) {
        out.push_str(&text[last..m.start()]);
        let missing = |placeholder| DatagenError::MissingBinding {
            method: template.method,
            placeholder,
        };
        match m.as_str() {
            "{NODE TEXT}" => out.push_str(bindings.node_text.as_deref().ok_or_else(|| missing("NODE TEXT"))?),
            "{NER}" => out.push_str(bindings.ner.as_deref().ok_or_else(|| missing("NER"))?),
            "{RESPONSE TEXT}" => {
                out.push_str(bindings.response_text.as_deref().ok_or_else(|| missing("RESPONSE TEXT"))?)
            }
            _ => out.push_str(&bindings.count.unwrap_or(template.default_count).to_string()),
        }
        last = m.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// Substitutes bindings into the system and user text in a single pass, so
/// bound values are never re-scanned for placeholders.
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &Bindings,
) -> Result<Vec<ChatMessage>, DatagenError> {
    Ok(vec![
        ChatMessage {
            role: Role::System,
            content: fill(template, template.system, bindings)?,
        },
        ChatMessage {
            role: Role::User,
            content: fill(template, template.user, bindings)?,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v1_user_message() {
        let msgs = render_prompt(&template(Method::V1), &Bindings::node("X")).unwrap();
        assert_eq!(msgs[1].content, "Generate 10 FAQ-style questions about the given facts: \"X\".");
        assert_eq!(msgs[0].role, Role::System);
    }

    #[test]
    fn v3_entity_message() {
        let msgs = render_prompt(
            &template(Method::V3Entity),
            &Bindings::node("Y").with_ner("anemia"),
        )
        .unwrap();
        assert_eq!(
            msgs[1].content,
            "Generate 3 questions about the entity \"anemia\" from the fact: \"Y\""
        );
        assert_eq!(msgs[0].content, SYSTEM_V2);
    }

    #[test]
    fn paraphrase_message() {
        let msgs = render_prompt(&template(Method::A), &Bindings::node("Q").with_response("R")).unwrap();
        assert_eq!(
            msgs[1].content,
            "Generate 5 paraphrases for the response \"R\" to the question \"Q\""
        );
    }

    #[test]
    fn missing_binding() {
        let err = render_prompt(&template(Method::B), &Bindings::node("Q")).unwrap_err();
        assert!(matches!(
            err,
            DatagenError::MissingBinding {
                placeholder: "RESPONSE TEXT",
                ..
            }
        ));
    }

    #[test]
    fn bound_values_not_rescanned() {
        let msgs = render_prompt(&template(Method::V1), &Bindings::node("{NER}")).unwrap();
        assert!(msgs[1].content.contains("\"{NER}\""));
    }
}
