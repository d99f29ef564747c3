//! Interaction prompts, the "the same" retry rule and single-option
//! enforcement for ClosedForm replies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{parse_option, OptionLabel};
use crate::population::{AgentState, OpinionRecord};
use crate::subjects::{render_initial_opinion, DiscussionSubject, SubjectError};

pub const SYSTEM_PROMPT: &str = "You are in a discussion with other participants";
pub const RETRY_SUFFIX: &str = ", even if the funding remains the same.";
pub const MISTRAL_FORMAT_SENTENCE: &str =
    "Your response must always be in the following format: \"Option: [write here (a), (b) or (c)].\"";
pub const MAX_OPTION_REASKS: u32 = 3;

const REASK_SENTENCE: &str = "Select exactly one of the options (a), (b) or (c).";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    #[default]
    FreeForm,
    ClosedForm,
}

impl fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FreeForm => "freeform",
            Self::ClosedForm => "closedform",
        })
    }
}

impl FromStr for UpdateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().replace(['-', '_'], "").as_str() {
            "freeform" => Ok(Self::FreeForm),
            "closedform" => Ok(Self::ClosedForm),
            _ => Err(format!("unknown mode `{s}` (expected freeform or closedform)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    #[default]
    Generic,
    MistralFormat,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
    pub mode: UpdateMode,
    pub memory_variant: bool,
    pub retried: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedOption {
    pub label: OptionLabel,
    pub option_text: String,
}

impl ClosedOption {
    pub fn for_label(label: OptionLabel, subject: &DiscussionSubject) -> Result<Self, SubjectError> {
        Ok(Self {
            label,
            option_text: render_initial_opinion(label.stance(), subject)?,
        })
    }
}

/// Trigger for the retry rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryRule {
    pub trigger: String,
    pub case_sensitive: bool,
}

impl Default for RetryRule {
    fn default() -> Self {
        Self {
            trigger: "the same".into(),
            case_sensitive: false,
        }
    }
}

impl RetryRule {
    pub fn fires_on(&self, response: &str) -> bool {
        if self.case_sensitive {
            response.contains(&self.trigger)
        } else {
            response.to_lowercase().contains(&self.trigger.to_lowercase())
        }
    }
}

fn memory_block(agent: &AgentState, with_memory: bool) -> String {
    if !with_memory || agent.memory.is_empty() {
        return String::new();
    }
    let listed: Vec<String> = agent
        .memory
        .iter()
        .enumerate()
        .map(|(k, r)| format!("Opinion {}: \"{}\"", k + 1, r.text))
        .collect();
    format!(
        " These are your previously held opinions sorted from the most recent to the oldest: {}",
        listed.join(" ")
    )
}

fn opening(agent: &AgentState, partner_opinion: &OpinionRecord, with_memory: bool) -> String {
    format!(
        "This is your current opinion: \"{}\".{} Now, you interact with someone having this opinion: \"{}\".",
        agent.current_opinion.text,
        memory_block(agent, with_memory),
        partner_opinion.text
    )
}

pub fn build_freeform_prompt(
    agent: &AgentState,
    partner_opinion: &OpinionRecord,
    subject: &DiscussionSubject,
    with_memory: bool,
) -> PromptPair {
    PromptPair {
        system: SYSTEM_PROMPT.to_string(),
        user: format!(
            "{} State how much funding should be given to {} after this interaction and explain why. Be concise with your answer.",
            opening(agent, partner_opinion, with_memory),
            subject.item_a_text
        ),
        mode: UpdateMode::FreeForm,
        memory_variant: with_memory,
        retried: false,
    }
}

pub fn build_closedform_prompt(
    agent: &AgentState,
    partner_opinion: &OpinionRecord,
    subject: &DiscussionSubject,
    with_memory: bool,
    family: ModelFamily,
) -> Result<PromptPair, SubjectError> {
    let [a, b, c] = OptionLabel::ALL.map(|l| render_initial_opinion(l.stance(), subject));
    let mut user = format!(
        "{} State which option (a), (b), or (c) is your new opinion regarding {} after this interaction. Option (a) is \"{}\". Option (b) is \"{}\". Option (c) is \"{}\".",
        opening(agent, partner_opinion, with_memory),
        subject.item_a_text,
        a?,
        b?,
        c?
    );
    if family == ModelFamily::MistralFormat {
        user.push(' ');
        user.push_str(MISTRAL_FORMAT_SENTENCE);
    }
    Ok(PromptPair {
        system: SYSTEM_PROMPT.to_string(),
        user,
        mode: UpdateMode::ClosedForm,
        memory_variant: with_memory,
        retried: false,
    })
}

/// Byte offsets of the periods that end a sentence: a `.` followed by
/// whitespace or the end of the text.
fn sentence_ends(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    (0..bytes.len())
        .filter(|&i| bytes[i] == b'.' && (i + 1 == bytes.len() || bytes[i + 1].is_ascii_whitespace()))
        .collect()
}

/// Prompt for the single re-query when the first FreeForm reply matches the
/// retry trigger. Returns `None` if the rule does not fire or was already
/// applied to this prompt.
pub fn apply_same_retry(original: &PromptPair, response: &str, rule: &RetryRule) -> Option<PromptPair> {
    if original.retried || original.mode != UpdateMode::FreeForm || !rule.fires_on(response) {
        return None;
    }
    let ends = sentence_ends(&original.user);
    let cut = *ends.get(ends.len().checked_sub(2)?)?;
    let mut user = String::with_capacity(original.user.len() + RETRY_SUFFIX.len());
    user.push_str(&original.user[..cut]);
    user.push_str(RETRY_SUFFIX);
    user.push_str(&original.user[cut + 1..]);
    Some(PromptPair {
        user,
        retried: true,
        ..original.clone()
    })
}

/// Prompt used to re-ask after an ambiguous ClosedForm reply.
pub fn build_option_reask(original: &PromptPair) -> PromptPair {
    let mut user = original.user.clone();
    if !user.ends_with(MISTRAL_FORMAT_SENTENCE) {
        user.push(' ');
        user.push_str(MISTRAL_FORMAT_SENTENCE);
    }
    user.push(' ');
    user.push_str(REASK_SENTENCE);
    PromptPair {
        user,
        ..original.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptionOutcome {
    /// `None` when every attempt was ambiguous; the agent then keeps its
    /// previous opinion.
    pub selected: Option<ClosedOption>,
    /// Replies to the re-asks, in order.
    pub reask_responses: Vec<String>,
}

/// Parses the first reply and re-asks up to [`MAX_OPTION_REASKS`] times
/// while the selection stays ambiguous. `reask` receives the attempt number
/// starting at 1.
pub fn enforce_single_option<E>(
    response: &str,
    subject: &DiscussionSubject,
    mut reask: impl FnMut(u32) -> Result<String, E>,
) -> Result<OptionOutcome, E>
where
    E: From<SubjectError>,
{
    let mut reask_responses = Vec::new();
    let mut current = response.to_string();
    let mut attempt = 0;
    loop {
        if let Ok(label) = parse_option(&current) {
            return Ok(OptionOutcome {
                selected: Some(ClosedOption::for_label(label, subject)?),
                reask_responses,
            });
        }
        if attempt == MAX_OPTION_REASKS {
            return Ok(OptionOutcome {
                selected: None,
                reask_responses,
            });
        }
        attempt += 1;
        current = reask(attempt)?;
        reask_responses.push(current.clone());
    }
}
