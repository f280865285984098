//! Prompt templates with `{name}` placeholders.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    name: &'static str,
    text: String,
}

impl Template {
    fn new(name: &'static str, text: String, required: &[&str]) -> Result<Self> {
        for key in required {
            if !text.contains(&format!("{{{key}}}")) {
                return Err(Error::Config(format!(
                    "template `{name}` is missing placeholder {{{key}}}"
                )));
            }
        }
        Ok(Template { name, text })
    }

    pub fn name(&self) -> &str {
        self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Single-pass substitution; placeholder-looking text inside values is left alone.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let replaced = after.find('}').and_then(|close| {
                let key = &after[..close];
                values.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
            });
            match replaced {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// Optional on-disk overrides for the built-in templates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatePaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critique: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regeneration: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dependencies: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub game24_propose: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub generation: Template,
    pub critique: Template,
    pub regeneration: Template,
    pub divergence: Template,
    pub dependencies: Template,
    pub judge: Template,
    pub game24_propose: Template,
}

const GENERATION: &str = include_str!("../templates/generation.txt");
const CRITIQUE: &str = include_str!("../templates/critique.txt");
const REGENERATION: &str = include_str!("../templates/regeneration.txt");
const DIVERGENCE: &str = include_str!("../templates/divergence.txt");
const DEPENDENCIES: &str = include_str!("../templates/dependencies.txt");
const JUDGE: &str = include_str!("../templates/judge.txt");
const GAME24_PROPOSE: &str = include_str!("../templates/game24_propose.txt");

fn load_or(path: Option<&Path>, builtin: &str) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e)),
        None => Ok(builtin.to_string()),
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self::load(&TemplatePaths::default()).expect("built-in templates are valid")
    }

    pub fn load(paths: &TemplatePaths) -> Result<Self> {
        Ok(PromptTemplates {
            generation: Template::new(
                "generation",
                load_or(paths.generation.as_deref(), GENERATION)?,
                &["question", "differentiation", "direction"],
            )?,
            critique: Template::new(
                "critique",
                load_or(paths.critique.as_deref(), CRITIQUE)?,
                &["question", "chain", "findings"],
            )?,
            regeneration: Template::new(
                "regeneration",
                load_or(paths.regeneration.as_deref(), REGENERATION)?,
                &["question", "prefix", "from_step", "feedback"],
            )?,
            divergence: Template::new(
                "divergence",
                load_or(paths.divergence.as_deref(), DIVERGENCE)?,
                &["question", "chain_a", "chain_b"],
            )?,
            dependencies: Template::new(
                "dependencies",
                load_or(paths.dependencies.as_deref(), DEPENDENCIES)?,
                &["question", "nodes"],
            )?,
            judge: Template::new("judge", load_or(paths.judge.as_deref(), JUDGE)?, &["question", "step"])?,
            game24_propose: Template::new(
                "game24_propose",
                load_or(paths.game24_propose.as_deref(), GAME24_PROPOSE)?,
                &["numbers"],
            )?,
        })
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}
