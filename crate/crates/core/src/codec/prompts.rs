//! Decoding prompt payloads. The codec layer only forwards the identifier;
//! endpoints look the text up themselves.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const REPAIR: &str = include_str!("../../prompts/repair.txt");
pub const NO_KNOWLEDGE: &str = include_str!("../../prompts/no_knowledge.txt");
pub const NO_ROLE: &str = include_str!("../../prompts/no_role.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    /// Full repair-engine role with chemistry rules.
    #[default]
    Repair,
    /// Repair role without the rule list.
    NoKnowledge,
    /// Plain echo instruction with no repair role.
    NoRole,
}

impl PromptId {
    pub const ALL: [PromptId; 3] = [PromptId::Repair, PromptId::NoKnowledge, PromptId::NoRole];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::Repair => "repair",
            PromptId::NoKnowledge => "no_knowledge",
            PromptId::NoRole => "no_role",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            PromptId::Repair => REPAIR,
            PromptId::NoKnowledge => NO_KNOWLEDGE,
            PromptId::NoRole => NO_ROLE,
        }
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownPrompt(s.to_string()))
    }
}
