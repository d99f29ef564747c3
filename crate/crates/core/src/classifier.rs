//! Funding-type classification of opinion texts.
//!
//! FreeForm opinions go through an ordered pipeline: an explicit percentage
//! tied to Item A wins; otherwise phrase cues are checked (full, explicit
//! zero, unspecified, partial); otherwise a response that only says the
//! funding did not change is reported as implicit and must be resolved
//! against the agent's own history with [`resolve_implicit`].
//!
//! Matching is clause-scoped. Clauses that report the other agent's position
//! or look back at earlier positions are skipped on the first pass, and cues
//! in clauses that only talk about Item B are ignored.

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::{Regex, RegexBuilder, RegexSetBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::OpinionRecord;
use crate::protocol::UpdateMode;
use crate::subjects::{DiscussionSubject, Stance};

pub const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.toml");

const ITEM_A_TOKEN: &str = "xitemax";
const ITEM_B_TOKEN: &str = "xitembx";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("lexicon parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cue list `{0}` is empty")]
    EmptyList(&'static str),
    #[error("cue `{cue}` appears in both `{first}` and `{second}`")]
    Duplicate {
        cue: String,
        first: &'static str,
        second: &'static str,
    },
    #[error("bad pattern `{pattern}`: {source}")]
    Pattern { pattern: String, source: regex::Error },
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("opinion could not be classified: {0:?}")]
    Unclassified(String),
    #[error("implicit opinion at t={0} has no explicit opinion in its history")]
    EmptyHistory(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoKind {
    ExplicitZero,
    Unspecified,
}

/// Resolved funding type of one opinion.
///
/// `implicit` marks an opinion whose text did not state an amount; its
/// stance was copied from the opinion at `resolved_from_time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedOpinion {
    pub stance: Stance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_kind: Option<NoKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation_range: Option<(f64, f64)>,
    #[serde(default)]
    pub implicit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_from_time: Option<u32>,
}

impl ClassifiedOpinion {
    pub fn of_stance(stance: Stance) -> Self {
        Self {
            stance,
            no_kind: (stance == Stance::No).then_some(NoKind::ExplicitZero),
            allocation: None,
            allocation_range: None,
            implicit: false,
            resolved_from_time: None,
        }
    }

    pub fn unspecified() -> Self {
        Self {
            no_kind: Some(NoKind::Unspecified),
            ..Self::of_stance(Stance::No)
        }
    }

    pub fn from_allocation(a: Allocation) -> Self {
        let stance = if a.value >= 100.0 {
            Stance::Full
        } else if a.value <= 0.0 {
            Stance::No
        } else {
            Stance::Partial
        };
        Self {
            allocation: Some(a.value),
            allocation_range: a.range,
            ..Self::of_stance(stance)
        }
    }

    /// Allocation stated in the text itself (not inherited from history).
    pub fn explicit_allocation(&self) -> Option<f64> {
        if self.implicit {
            None
        } else {
            self.allocation
        }
    }
}

/// Outcome of classifying a single text.
#[derive(Clone, Debug, PartialEq)]
pub enum Classification {
    Explicit(ClassifiedOpinion),
    /// The text says the funding did not change without naming it.
    Implicit,
    Unclassified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptionLabel {
    A,
    B,
    C,
}

impl OptionLabel {
    pub const ALL: [OptionLabel; 3] = [Self::A, Self::B, Self::C];

    pub fn stance(self) -> Stance {
        match self {
            Self::A => Stance::Full,
            Self::B => Stance::Partial,
            Self::C => Stance::No,
        }
    }

    pub fn for_stance(stance: Stance) -> Self {
        match stance {
            Stance::Full => Self::A,
            Stance::Partial => Self::B,
            Stance::No => Self::C,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Self::A => 'a',
            Self::B => 'b',
            Self::C => 'c',
        }
    }

    fn from_letter(c: &str) -> Option<Self> {
        match c {
            "a" => Some(Self::A),
            "b" => Some(Self::B),
            "c" => Some(Self::C),
            _ => None,
        }
    }
}

impl fmt::Display for OptionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.letter())
    }
}

/// Zero or several option labels were found.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("ambiguous option selection, found {found:?}")]
pub struct OptionAmbiguity {
    pub found: Vec<OptionLabel>,
}

/// A point allocation for Item A, with the stated range when one was given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub value: f64,
    pub range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AllocationExtraction {
    pub allocation: Option<Allocation>,
    /// Percentages outside [0, 100] or inverted ranges, discarded.
    pub anomalies: Vec<String>,
}

/// Cue lists as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconConfig {
    pub full: Vec<String>,
    pub zero: Vec<String>,
    pub unspecified: Vec<String>,
    pub partial: Vec<String>,
    pub implicit: Vec<String>,
    pub decision_verbs: Vec<String>,
    pub attribution: Vec<String>,
    pub retrospective: Vec<String>,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }
}

impl LexiconConfig {
    pub fn from_toml(text: &str) -> Result<Self, LexiconError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn cue_lists(&self) -> [(&'static str, &Vec<String>); 5] {
        [
            ("full", &self.full),
            ("zero", &self.zero),
            ("unspecified", &self.unspecified),
            ("partial", &self.partial),
            ("implicit", &self.implicit),
        ]
    }

    pub fn validate(&self) -> Result<(), LexiconError> {
        let lists = self.cue_lists();
        for (name, list) in lists {
            if list.is_empty() {
                return Err(LexiconError::EmptyList(name));
            }
        }
        for (i, (first, a)) in lists.iter().enumerate() {
            for (second, b) in &lists[i + 1..] {
                if let Some(cue) = a.iter().find(|c| b.contains(c)) {
                    return Err(LexiconError::Duplicate {
                        cue: cue.clone(),
                        first,
                        second,
                    });
                }
            }
        }
        Ok(())
    }
}

/// One cue category: the patterns plus a set used to skip the clauses
/// none of them match.
#[derive(Clone, Debug)]
struct Cues {
    set: regex::RegexSet,
    res: Vec<Regex>,
}

impl Cues {
    fn is_match(&self, text: &str) -> bool {
        self.set.is_match(text)
    }

    /// Start offsets of every match of every pattern.
    fn starts<'t>(&'t self, text: &'t str) -> impl Iterator<Item = usize> + 't {
        self.set
            .matches(text)
            .into_iter()
            .flat_map(move |i| self.res[i].find_iter(text).map(|m| m.start()))
    }
}

fn compile(patterns: &[String]) -> Result<Cues, LexiconError> {
    let res = patterns
        .iter()
        .map(|p| {
            RegexBuilder::new(p)
                .case_insensitive(true)
                .build()
                .map_err(|source| LexiconError::Pattern {
                    pattern: p.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let set = RegexSetBuilder::new(patterns)
        .case_insensitive(true)
        .build()
        .map_err(|source| LexiconError::Pattern {
            pattern: patterns.join(" | "),
            source,
        })?;
    Ok(Cues { set, res })
}

#[derive(Clone, Debug)]
struct CompiledLexicon {
    full: Cues,
    zero: Cues,
    unspecified: Cues,
    partial: Cues,
    implicit: Cues,
    decision_verbs: Cues,
    attribution: Cues,
    retrospective: Cues,
}

fn range_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(\d+(?:\.\d+)?)\s*(?:%|percent)?\s*(?:-|–|—|to)\s*(\d+(?:\.\d+)?)\s*(?:%|percent\b)").unwrap()
    })
}

fn single_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d+(?:\.\d+)?)\s*(?:%|percent\b)").unwrap())
}

fn clause_split_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"\s*(?:[,;:()]|\bbecause\b|\band\b|\bbut\b|\bwhile\b|\bwhereas\b|\bwhich\b|\balthough\b|\bthough\b|\bhowever\b)\s*",
        )
        .unwrap()
    })
}

fn object_it_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(?:for|to|into|on) (it)\b").unwrap())
}

/// Replaces an object "it" ("funding for it") with the item named last
/// before it in the same sentence.
fn resolve_it(sentence: &str) -> String {
    let mut out = String::with_capacity(sentence.len());
    let mut last = 0;
    for caps in object_it_re().captures_iter(sentence) {
        let it = caps.get(1).unwrap();
        let before = &sentence[..it.start()];
        let item = match (before.rfind(ITEM_A_TOKEN), before.rfind(ITEM_B_TOKEN)) {
            (Some(a), Some(b)) => Some(if a > b { ITEM_A_TOKEN } else { ITEM_B_TOKEN }),
            (Some(_), None) => Some(ITEM_A_TOKEN),
            (None, Some(_)) => Some(ITEM_B_TOKEN),
            (None, None) => None,
        };
        if let Some(item) = item {
            out.push_str(&sentence[last..it.start()]);
            out.push_str(item);
            last = it.end();
        }
    }
    out.push_str(&sentence[last..]);
    out
}

fn negation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(?:not|no)\b|n't\b").unwrap())
}

#[derive(Debug)]
struct Clause {
    text: String,
    mentions_a: bool,
    mentions_b: bool,
    attributed: bool,
    retrospective: bool,
}

impl Clause {
    fn own_position(&self) -> bool {
        !self.attributed && !self.retrospective
    }

    /// Whether a match at byte offset `pos` is about Item A rather than Item B.
    fn bound_to_a(&self, pos: usize) -> bool {
        if !self.mentions_a {
            return false;
        }
        if !self.mentions_b {
            return true;
        }
        nearest(&self.text, ITEM_A_TOKEN, pos) <= nearest(&self.text, ITEM_B_TOKEN, pos)
    }

    /// Whether a cue at `pos` may refer to Item A: either bound to it, or the
    /// clause names neither item.
    fn admits_cue(&self, pos: usize) -> bool {
        if !self.mentions_b {
            return true;
        }
        self.bound_to_a(pos)
    }
}

fn nearest(text: &str, token: &str, pos: usize) -> usize {
    text.match_indices(token)
        .map(|(i, _)| {
            if i > pos {
                i - pos
            } else {
                pos - (i + token.len()).min(pos)
            }
        })
        .min()
        .unwrap_or(usize::MAX)
}

#[derive(Debug)]
struct Sentence {
    clauses: Vec<Clause>,
    has_decision_verb: bool,
}

/// Splits on `.`, `!`, `?` followed (after optional closing quotes) by
/// whitespace or the end of the text. Decimal points are never split.
fn split_sentences(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'\n' {
            if i > start {
                out.push(&text[start..i]);
            }
            start = i + 1;
        } else if matches!(b, b'.' | b'!' | b'?') {
            let mut j = i + 1;
            while j < bytes.len() && matches!(bytes[j], b'"' | b'\'' | b'.') {
                j += 1;
            }
            if j >= bytes.len() || bytes[j].is_ascii_whitespace() {
                out.push(&text[start..j]);
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if start < bytes.len() {
        out.push(&text[start..]);
    }
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn normalize(text: &str) -> String {
    text.replace(['\u{2019}', '\u{2018}'], "'")
        .replace(['\u{201C}', '\u{201D}'], "\"")
        .replace("\\$", "$")
        .to_lowercase()
}

fn parse_pct(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Percentages found in one clause: (offset, allocation) plus anomalies.
fn percentages_in(clause: &str, anomalies: &mut Vec<String>) -> Vec<(usize, Allocation)> {
    let mut found = Vec::new();
    let mut taken: Vec<(usize, usize)> = Vec::new();
    for cap in range_re().captures_iter(clause) {
        let whole = cap.get(0).unwrap();
        taken.push((whole.start(), whole.end()));
        let (Some(lo), Some(hi)) = (parse_pct(&cap[1]), parse_pct(&cap[2])) else {
            continue;
        };
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo > hi {
            anomalies.push(format!("discarded range {}", whole.as_str()));
            continue;
        }
        found.push((
            whole.start(),
            Allocation {
                value: (lo + hi) / 2.0,
                range: Some((lo, hi)),
            },
        ));
    }
    for cap in single_re().captures_iter(clause) {
        let whole = cap.get(0).unwrap();
        if taken.iter().any(|(s, e)| whole.start() < *e && whole.end() > *s) {
            continue;
        }
        let Some(v) = parse_pct(&cap[1]) else { continue };
        if !(0.0..=100.0).contains(&v) {
            anomalies.push(format!("discarded percentage {}", whole.as_str()));
            continue;
        }
        found.push((whole.start(), Allocation { value: v, range: None }));
    }
    found.sort_by_key(|(pos, _)| *pos);
    found
}

#[derive(Default)]
struct CueHits {
    full: bool,
    zero_sentences: Vec<usize>,
    unspecified_sentences: Vec<usize>,
    partial: bool,
}

impl CueHits {
    fn any(&self) -> bool {
        self.full || !self.zero_sentences.is_empty() || !self.unspecified_sentences.is_empty() || self.partial
    }

    fn decide(&self) -> Option<ClassifiedOpinion> {
        if self.full {
            return Some(ClassifiedOpinion::of_stance(Stance::Full));
        }
        // Within one sentence an unspecified cue outranks a zero cue.
        let unshadowed_zero = self
            .zero_sentences
            .iter()
            .any(|s| !self.unspecified_sentences.contains(s));
        if unshadowed_zero {
            return Some(ClassifiedOpinion::of_stance(Stance::No));
        }
        if !self.unspecified_sentences.is_empty() {
            return Some(ClassifiedOpinion::unspecified());
        }
        if self.partial {
            return Some(ClassifiedOpinion::of_stance(Stance::Partial));
        }
        None
    }
}

/// Rule-based funding classifier bound to a lexicon and, optionally, to the
/// item names of the subject under discussion.
#[derive(Clone, Debug)]
pub struct Classifier {
    lexicon: CompiledLexicon,
    item_a: Option<String>,
    item_b: Option<String>,
}

impl Default for Classifier {
    fn default() -> Self {
        Self::new(&LexiconConfig::default()).expect("bundled lexicon compiles")
    }
}

impl Classifier {
    pub fn new(config: &LexiconConfig) -> Result<Self, LexiconError> {
        config.validate()?;
        Ok(Self {
            lexicon: CompiledLexicon {
                full: compile(&config.full)?,
                zero: compile(&config.zero)?,
                unspecified: compile(&config.unspecified)?,
                partial: compile(&config.partial)?,
                implicit: compile(&config.implicit)?,
                decision_verbs: compile(&config.decision_verbs)?,
                attribution: compile(&config.attribution)?,
                retrospective: compile(&config.retrospective)?,
            },
            item_a: None,
            item_b: None,
        })
    }

    pub fn with_items(mut self, item_a: &str, item_b: &str) -> Self {
        self.item_a = Some(item_a.to_lowercase());
        self.item_b = Some(item_b.to_lowercase());
        self
    }

    pub fn for_subject(self, subject: &DiscussionSubject) -> Self {
        self.with_items(&subject.item_a_text, &subject.item_b_text)
    }

    fn mask_items(&self, mut text: String) -> String {
        let mut items: Vec<(&str, &str)> = Vec::new();
        if let Some(a) = &self.item_a {
            items.push((a, ITEM_A_TOKEN));
        }
        if let Some(b) = &self.item_b {
            items.push((b, ITEM_B_TOKEN));
        }
        items.sort_by_key(|(name, _)| std::cmp::Reverse(name.len()));
        for (name, token) in items {
            if !name.is_empty() {
                text = text.replace(name, token);
            }
        }
        text
    }

    fn any_match(cues: &Cues, text: &str) -> bool {
        cues.is_match(text)
    }

    fn analyze(&self, text: &str) -> Vec<Sentence> {
        let masked = self.mask_items(normalize(text));
        split_sentences(&masked)
            .into_iter()
            .map(|s| {
                let s = resolve_it(s);
                let s = s.as_str();
                let clauses = clause_split_re()
                    .split(s)
                    .map(str::trim)
                    .filter(|c| !c.is_empty())
                    .map(|c| Clause {
                        text: c.to_string(),
                        mentions_a: c.contains(ITEM_A_TOKEN),
                        mentions_b: c.contains(ITEM_B_TOKEN),
                        attributed: Self::any_match(&self.lexicon.attribution, c),
                        retrospective: Self::any_match(&self.lexicon.retrospective, c),
                    })
                    .collect();
                Sentence {
                    clauses,
                    has_decision_verb: Self::any_match(&self.lexicon.decision_verbs, s),
                }
            })
            .collect()
    }

    /// Percentage allocation for Item A, if the text states one.
    ///
    /// The last sentence carrying a percentage bound to Item A wins. When no
    /// percentage names Item A, a percentage in the opening sentence counts
    /// if that sentence is a decision and does not mention Item B.
    pub fn extract_allocation(&self, text: &str) -> AllocationExtraction {
        let sentences = self.analyze(text);
        self.allocation_from(&sentences)
    }

    fn allocation_from(&self, sentences: &[Sentence]) -> AllocationExtraction {
        let mut anomalies = Vec::new();
        let mut chosen: Option<Allocation> = None;
        for sentence in sentences {
            let mut first_in_sentence = None;
            for clause in sentence.clauses.iter().filter(|c| c.own_position()) {
                let hit = percentages_in(&clause.text, &mut anomalies)
                    .into_iter()
                    .find(|(pos, _)| clause.bound_to_a(*pos));
                if let Some((_, a)) = hit {
                    first_in_sentence = Some(a);
                    break;
                }
            }
            if first_in_sentence.is_some() {
                chosen = first_in_sentence;
            }
        }
        if chosen.is_none() {
            if let Some(first) = sentences.first() {
                let names_b = first.clauses.iter().any(|c| c.mentions_b);
                if first.has_decision_verb && !names_b {
                    chosen = first.clauses.iter().filter(|c| c.own_position()).find_map(|c| {
                        percentages_in(&c.text, &mut Vec::new())
                            .into_iter()
                            .next()
                            .map(|(_, a)| a)
                    });
                }
            }
        }
        AllocationExtraction {
            allocation: chosen,
            anomalies,
        }
    }

    fn cue_hits(&self, sentences: &[Sentence], own_only: bool) -> CueHits {
        let mut hits = CueHits::default();
        let lex = &self.lexicon;
        for (si, sentence) in sentences.iter().enumerate() {
            for clause in &sentence.clauses {
                if own_only && !clause.own_position() {
                    continue;
                }
                let admitted = |cues: &Cues| cues.starts(&clause.text).any(|pos| clause.admits_cue(pos));
                let full = lex
                    .full
                    .starts(&clause.text)
                    .any(|pos| clause.admits_cue(pos) && !negation_re().is_match(&clause.text[..pos]));
                hits.full |= full;
                if sentence.has_decision_verb && admitted(&lex.zero) {
                    hits.zero_sentences.push(si);
                }
                if admitted(&lex.unspecified) {
                    hits.unspecified_sentences.push(si);
                }
                hits.partial |= admitted(&lex.partial);
            }
        }
        hits
    }

    /// Classifies one opinion text. ClosedForm replies are parsed as option
    /// selections; ambiguous selections come back as `Unclassified`.
    pub fn classify(&self, text: &str, mode: UpdateMode) -> Classification {
        match mode {
            UpdateMode::ClosedForm => match parse_option(text) {
                Ok(label) => Classification::Explicit(ClassifiedOpinion::of_stance(label.stance())),
                Err(_) => Classification::Unclassified,
            },
            UpdateMode::FreeForm => self.classify_freeform(text),
        }
    }

    fn classify_freeform(&self, text: &str) -> Classification {
        let sentences = self.analyze(text);
        if let Some(a) = self.allocation_from(&sentences).allocation {
            return Classification::Explicit(ClassifiedOpinion::from_allocation(a));
        }
        let own = self.cue_hits(&sentences, true);
        let hits = if own.any() {
            own
        } else {
            self.cue_hits(&sentences, false)
        };
        if let Some(c) = hits.decide() {
            return Classification::Explicit(c);
        }
        let implicit = sentences
            .iter()
            .flat_map(|s| &s.clauses)
            .any(|c| Self::any_match(&self.lexicon.implicit, &c.text));
        if implicit {
            Classification::Implicit
        } else {
            Classification::Unclassified
        }
    }

    /// Classification with implicit opinions resolved against `history`
    /// (the agent's earlier records, oldest first).
    ///
    /// Strict mode turns an unclassifiable text into an error; lenient mode
    /// carries the latest stance over, like an implicit opinion.
    pub fn classify_resolved(
        &self,
        text: &str,
        mode: UpdateMode,
        history: &[OpinionRecord],
        current_time: u32,
        strict: bool,
    ) -> Result<(ClassifiedOpinion, bool), ClassifyError> {
        match self.classify(text, mode) {
            Classification::Explicit(c) => Ok((c, false)),
            Classification::Implicit => Ok((resolve_implicit(history, current_time)?, false)),
            Classification::Unclassified if strict => Err(ClassifyError::Unclassified(text.to_string())),
            Classification::Unclassified => Ok((resolve_implicit(history, current_time)?, true)),
        }
    }
}

/// Walks back through `history` to the nearest opinion whose funding was
/// stated explicitly and copies it.
pub fn resolve_implicit(history: &[OpinionRecord], current_time: u32) -> Result<ClassifiedOpinion, ClassifyError> {
    let source = history
        .iter()
        .rev()
        .filter(|r| r.time < current_time)
        .find(|r| !r.classified.implicit)
        .ok_or(ClassifyError::EmptyHistory(current_time))?;
    Ok(ClassifiedOpinion {
        implicit: true,
        resolved_from_time: Some(source.time),
        ..source.classified.clone()
    })
}

fn format_option_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"option\s*:\s*\[?\s*\(?\s*([abc])\s*\)").unwrap())
}

fn format_bare_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"option\s*:\s*([abc])\b").unwrap())
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([abc])\)|\boption\s+([abc])\b").unwrap())
}

/// Finds the single option label selected in a ClosedForm reply.
///
/// Labels given in the `Option: (x)` format take precedence over labels
/// mentioned anywhere else in the reply.
pub fn parse_option(text: &str) -> Result<OptionLabel, OptionAmbiguity> {
    let lower = text.to_lowercase();
    let collect = |res: &[&Regex]| {
        let mut labels: Vec<OptionLabel> = res
            .iter()
            .flat_map(|re| re.captures_iter(&lower).collect::<Vec<_>>())
            .filter_map(|cap| {
                cap.iter()
                    .skip(1)
                    .flatten()
                    .next()
                    .and_then(|m| OptionLabel::from_letter(m.as_str()))
            })
            .collect();
        labels.sort();
        labels.dedup();
        labels
    };
    let mut labels = collect(&[format_option_re(), format_bare_re()]);
    if labels.is_empty() {
        labels = collect(&[marker_re()]);
    }
    match labels.as_slice() {
        [one] => Ok(*one),
        _ => Err(OptionAmbiguity { found: labels }),
    }
}
