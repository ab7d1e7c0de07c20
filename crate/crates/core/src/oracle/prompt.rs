use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{OracleError, Result};
use crate::label::Label;

/// The slot a snippet is substituted into.
pub const PLACEHOLDER: &str = "<Insert Text Snippet>";

const POLITICS: &str = include_str!("../../assets/prompts/politics.txt");
const CLIMATE: &str = include_str!("../../assets/prompts/climate.txt");
const AI: &str = include_str!("../../assets/prompts/ai.txt");
const MAINSTREAM: &str = include_str!("../../assets/prompts/mainstream.txt");
const QUALITY: &str = include_str!("../../assets/prompts/quality.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateName {
    Politics,
    Climate,
    Ai,
    Mainstream,
    Quality,
    Custom,
}

impl TemplateName {
    pub const BUILTIN: [TemplateName; 5] = [
        TemplateName::Politics,
        TemplateName::Climate,
        TemplateName::Ai,
        TemplateName::Mainstream,
        TemplateName::Quality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Politics => "politics",
            TemplateName::Climate => "climate",
            TemplateName::Ai => "ai",
            TemplateName::Mainstream => "mainstream",
            TemplateName::Quality => "quality",
            TemplateName::Custom => "custom",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self> {
        TemplateName::BUILTIN
            .into_iter()
            .chain([TemplateName::Custom])
            .find(|n| n.as_str() == s)
            .ok_or_else(|| OracleError::InvalidTemplate(format!("unknown template {s:?}")))
    }
}

/// A filtering prompt with a single snippet slot and a PASS/FAIL verdict
/// convention.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
    /// Label a PASS verdict maps to before inversion.
    pub pass_maps_to: Label,
    /// Set when the prompt asks for the complement of the filter's target,
    /// so the mapped label is flipped (the mainstream prompt asks whether a
    /// snippet is obscure).
    pub inverted: bool,
}

impl PromptTemplate {
    pub fn builtin(name: TemplateName) -> Result<Self> {
        let body = match name {
            TemplateName::Politics => POLITICS,
            TemplateName::Climate => CLIMATE,
            TemplateName::Ai => AI,
            TemplateName::Mainstream => MAINSTREAM,
            TemplateName::Quality => QUALITY,
            TemplateName::Custom => {
                return Err(OracleError::InvalidTemplate(
                    "custom templates need a body".into(),
                ))
            }
        };
        Ok(PromptTemplate {
            name,
            body: body.trim_end().to_string(),
            pass_maps_to: Label::One,
            inverted: name == TemplateName::Mainstream,
        })
    }

    pub fn custom(body: impl Into<String>) -> Result<Self> {
        let t = PromptTemplate {
            name: TemplateName::Custom,
            body: body.into(),
            pass_maps_to: Label::One,
            inverted: false,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match self.body.matches(PLACEHOLDER).count() {
            1 => Ok(()),
            0 => Err(OracleError::InvalidTemplate(format!(
                "template {} lacks the {PLACEHOLDER} slot",
                self.name
            ))),
            n => Err(OracleError::InvalidTemplate(format!(
                "template {} has {n} {PLACEHOLDER} slots",
                self.name
            ))),
        }
    }

    /// Label implied by a PASS (`true`) or FAIL (`false`) verdict.
    pub fn verdict_label(&self, pass: bool) -> Label {
        let mapped = if pass {
            self.pass_maps_to
        } else {
            self.pass_maps_to.flip()
        };
        if self.inverted {
            mapped.flip()
        } else {
            mapped
        }
    }
}

/// Substitutes the snippet into the template's single slot. The snippet
/// text is inserted verbatim, even if it contains the placeholder itself.
pub fn render_prompt(template: &PromptTemplate, snippet_text: &str) -> Result<String> {
    template.validate()?;
    let (head, tail) = template
        .body
        .split_once(PLACEHOLDER)
        .expect("validated template has a slot");
    let mut out = String::with_capacity(head.len() + snippet_text.len() + tail.len());
    out.push_str(head);
    out.push_str(snippet_text);
    out.push_str(tail);
    Ok(out)
}

/// Reads the verdict from the end of an oracle response: the last token
/// with any alphanumeric content must be PASS or FAIL (case-insensitive,
/// surrounding punctuation ignored). Anything else is an error rather than
/// a guess.
pub fn parse_verdict(raw: &str, template: &PromptTemplate) -> Result<Label> {
    let unparseable = || OracleError::UnparseableVerdict {
        raw: raw.to_string(),
        cost_micro_usd: 0,
    };
    let last = raw
        .split_whitespace()
        .rev()
        .map(|tok| tok.trim_matches(|c: char| !c.is_alphanumeric()))
        .find(|tok| !tok.is_empty())
        .ok_or_else(unparseable)?;
    if last.eq_ignore_ascii_case("pass") {
        Ok(template.verdict_label(true))
    } else if last.eq_ignore_ascii_case("fail") {
        Ok(template.verdict_label(false))
    } else {
        Err(unparseable())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain() -> PromptTemplate {
        PromptTemplate::custom("Q: <Insert Text Snippet>").unwrap()
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_prompt(&plain(), "hi").unwrap(), "Q: hi");
        assert_eq!(
            render_prompt(&plain(), "see <Insert Text Snippet> here").unwrap(),
            "Q: see <Insert Text Snippet> here"
        );
    }

    #[test]
    fn template_slot_count_is_checked() {
        assert!(PromptTemplate::custom("no slot").is_err());
        assert!(PromptTemplate::custom("<Insert Text Snippet> <Insert Text Snippet>").is_err());
        for name in TemplateName::BUILTIN {
            PromptTemplate::builtin(name).unwrap().validate().unwrap();
        }
        assert!(PromptTemplate::builtin(TemplateName::Custom).is_err());
    }

    #[test]
    fn verdict_examples() {
        let t = plain();
        assert_eq!(parse_verdict("...reasoning... PASS", &t).unwrap(), Label::One);
        assert_eq!(parse_verdict("...FAIL.", &t).unwrap(), Label::Zero);
        assert_eq!(parse_verdict("Final answer: **pass**\n\n", &t).unwrap(), Label::One);
        assert_eq!(parse_verdict("FAIL\n---", &t).unwrap(), Label::Zero);
        let mainstream = PromptTemplate::builtin(TemplateName::Mainstream).unwrap();
        assert_eq!(parse_verdict("...PASS", &mainstream).unwrap(), Label::Zero);
        assert_eq!(parse_verdict("...FAIL", &mainstream).unwrap(), Label::One);
    }

    #[test]
    fn verdict_errors() {
        let t = plain();
        for raw in ["", "   ", "PASS or maybe not", "PASS/FAIL", "PASSED", "..."] {
            assert!(
                matches!(parse_verdict(raw, &t), Err(OracleError::UnparseableVerdict { .. })),
                "{raw:?}"
            );
        }
    }

    #[test]
    fn names_round_trip() {
        for name in TemplateName::BUILTIN {
            assert_eq!(name.as_str().parse::<TemplateName>().unwrap(), name);
        }
        assert!("sports".parse::<TemplateName>().is_err());
    }
}
