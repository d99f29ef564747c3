//! Discussion subjects: the two competing items, the reasons offered for
//! funding each of them, and the three initial-opinion templates.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubjectError {
    #[error("item text for {0} must not be empty")]
    EmptyItemText(Slot),
    #[error("only one item or reason may carry a non-neutral connotation, found {0}")]
    TooManyNonNeutral(usize),
    #[error("no partial-funding template for reason A {reason_a} with reason B {reason_b}")]
    UnsupportedReasonPair {
        reason_a: Connotation,
        reason_b: Connotation,
    },
    #[error("connotation code must be -1, 0 or 1, got {0}")]
    BadCode(i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connotation {
    Positive,
    Neutral,
    Negative,
}

impl Connotation {
    pub const ALL: [Connotation; 3] = [Self::Positive, Self::Neutral, Self::Negative];

    pub fn code(self) -> i8 {
        match self {
            Self::Positive => 1,
            Self::Neutral => 0,
            Self::Negative => -1,
        }
    }

    pub fn from_code(code: i64) -> Result<Self, SubjectError> {
        match code {
            1 => Ok(Self::Positive),
            0 => Ok(Self::Neutral),
            -1 => Ok(Self::Negative),
            other => Err(SubjectError::BadCode(other)),
        }
    }

    fn index(self) -> usize {
        match self {
            Self::Positive => 0,
            Self::Neutral => 1,
            Self::Negative => 2,
        }
    }
}

impl fmt::Display for Connotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Positive => "positive",
            Self::Neutral => "neutral",
            Self::Negative => "negative",
        })
    }
}

/// The four parts of a subject that carry a connotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    ItemA,
    ItemB,
    ReasonA,
    ReasonB,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ItemA => "item A",
            Self::ItemB => "item B",
            Self::ReasonA => "reason A",
            Self::ReasonB => "reason B",
        })
    }
}

/// Funding position for Item A.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Full,
    Partial,
    No,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Self::Full, Self::Partial, Self::No];

    /// Plot code: full 1, partial 0, no -1.
    pub fn code(self) -> i8 {
        match self {
            Self::Full => 1,
            Self::Partial => 0,
            Self::No => -1,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Self::Full => 'F',
            Self::Partial => 'P',
            Self::No => 'N',
        }
    }

    pub fn index(self) -> usize {
        match self {
            Self::Full => 0,
            Self::Partial => 1,
            Self::No => 2,
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Partial => "partial",
            Self::No => "no",
        })
    }
}

const ITEM_A_VALUES: [&str; 3] = ["affordable housing", "Thing A", "destructive bombs"];
const ITEM_B_VALUES: [&str; 3] = ["affordable public transportation", "Thing B", "nasty pollution"];
const REASON_A_VALUES: [&str; 3] = ["constructive & important", "REASON A", "destructive & devastating"];
const REASON_B_VALUES: [&str; 3] = [
    "increasing/large appreciation",
    "REASON B",
    "not appreciated/largely disdained",
];

/// Table of text values for each slot and connotation.
pub fn default_text_value(slot: Slot, connotation: Connotation) -> &'static str {
    let row = match slot {
        Slot::ItemA => &ITEM_A_VALUES,
        Slot::ItemB => &ITEM_B_VALUES,
        Slot::ReasonA => &REASON_A_VALUES,
        Slot::ReasonB => &REASON_B_VALUES,
    };
    row[connotation.index()]
}

/// Replacement item texts, keyed by connotation. Unset entries keep the defaults.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextOverrides {
    #[serde(default)]
    pub item_a_positive: Option<String>,
    #[serde(default)]
    pub item_a_neutral: Option<String>,
    #[serde(default)]
    pub item_a_negative: Option<String>,
    #[serde(default)]
    pub item_b_positive: Option<String>,
    #[serde(default)]
    pub item_b_neutral: Option<String>,
    #[serde(default)]
    pub item_b_negative: Option<String>,
}

impl TextOverrides {
    fn lookup(&self, slot: Slot, c: Connotation) -> Option<&str> {
        let v = match (slot, c) {
            (Slot::ItemA, Connotation::Positive) => &self.item_a_positive,
            (Slot::ItemA, Connotation::Neutral) => &self.item_a_neutral,
            (Slot::ItemA, Connotation::Negative) => &self.item_a_negative,
            (Slot::ItemB, Connotation::Positive) => &self.item_b_positive,
            (Slot::ItemB, Connotation::Neutral) => &self.item_b_neutral,
            (Slot::ItemB, Connotation::Negative) => &self.item_b_negative,
            _ => &None,
        };
        v.as_deref()
    }

    pub fn text_for(&self, slot: Slot, c: Connotation) -> String {
        self.lookup(slot, c)
            .unwrap_or_else(|| default_text_value(slot, c))
            .to_string()
    }
}

/// Connotation of each slot, independent of the text values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConnotationSetting {
    pub item_a: Connotation,
    pub item_b: Connotation,
    pub reason_a: Connotation,
    pub reason_b: Connotation,
}

impl Default for ConnotationSetting {
    fn default() -> Self {
        Self::neutral()
    }
}

impl ConnotationSetting {
    pub fn neutral() -> Self {
        Self {
            item_a: Connotation::Neutral,
            item_b: Connotation::Neutral,
            reason_a: Connotation::Neutral,
            reason_b: Connotation::Neutral,
        }
    }

    fn with(slot: Slot, c: Connotation) -> Self {
        let mut s = Self::neutral();
        match slot {
            Slot::ItemA => s.item_a = c,
            Slot::ItemB => s.item_b = c,
            Slot::ReasonA => s.reason_a = c,
            Slot::ReasonB => s.reason_b = c,
        }
        s
    }

    pub fn non_neutral_count(&self) -> usize {
        [self.item_a, self.item_b, self.reason_a, self.reason_b]
            .iter()
            .filter(|c| **c != Connotation::Neutral)
            .count()
    }

    /// Label in the `[item A, item B] [reason A, reason B]` code layout.
    pub fn label(&self) -> String {
        format!(
            "[{}, {}] [{}, {}]",
            self.item_a.code(),
            self.item_b.code(),
            self.reason_a.code(),
            self.reason_b.code()
        )
    }

    /// Filesystem-friendly label, e.g. `i0_0_r0_1`.
    pub fn slug(&self) -> String {
        format!(
            "i{}_{}_r{}_{}",
            self.item_a.code(),
            self.item_b.code(),
            self.reason_a.code(),
            self.reason_b.code()
        )
        .replace('-', "m")
    }
}

/// The nine studied settings: all neutral, then one non-neutral slot at a time.
pub fn enumerate_connotation_settings() -> Vec<ConnotationSetting> {
    use Connotation::{Negative, Positive};
    vec![
        ConnotationSetting::neutral(),
        ConnotationSetting::with(Slot::ReasonB, Positive),
        ConnotationSetting::with(Slot::ReasonA, Positive),
        ConnotationSetting::with(Slot::ReasonB, Negative),
        ConnotationSetting::with(Slot::ReasonA, Negative),
        ConnotationSetting::with(Slot::ItemB, Positive),
        ConnotationSetting::with(Slot::ItemA, Positive),
        ConnotationSetting::with(Slot::ItemB, Negative),
        ConnotationSetting::with(Slot::ItemA, Negative),
    ]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscussionSubject {
    pub item_a_text: String,
    pub item_b_text: String,
    pub item_a_connotation: Connotation,
    pub item_b_connotation: Connotation,
    pub reason_a_connotation: Connotation,
    pub reason_b_connotation: Connotation,
    pub strict_single_nonneutral: bool,
}

impl DiscussionSubject {
    pub fn new(
        setting: ConnotationSetting,
        overrides: &TextOverrides,
        strict_single_nonneutral: bool,
    ) -> Result<Self, SubjectError> {
        let subject = Self {
            item_a_text: overrides.text_for(Slot::ItemA, setting.item_a),
            item_b_text: overrides.text_for(Slot::ItemB, setting.item_b),
            item_a_connotation: setting.item_a,
            item_b_connotation: setting.item_b,
            reason_a_connotation: setting.reason_a,
            reason_b_connotation: setting.reason_b,
            strict_single_nonneutral,
        };
        subject.validate()?;
        Ok(subject)
    }

    /// All-neutral subject with the default text values.
    pub fn neutral() -> Self {
        Self::new(ConnotationSetting::neutral(), &TextOverrides::default(), true).expect("neutral subject is valid")
    }

    pub fn setting(&self) -> ConnotationSetting {
        ConnotationSetting {
            item_a: self.item_a_connotation,
            item_b: self.item_b_connotation,
            reason_a: self.reason_a_connotation,
            reason_b: self.reason_b_connotation,
        }
    }

    pub fn validate(&self) -> Result<(), SubjectError> {
        if self.item_a_text.trim().is_empty() {
            return Err(SubjectError::EmptyItemText(Slot::ItemA));
        }
        if self.item_b_text.trim().is_empty() {
            return Err(SubjectError::EmptyItemText(Slot::ItemB));
        }
        let n = self.setting().non_neutral_count();
        if self.strict_single_nonneutral && n > 1 {
            return Err(SubjectError::TooManyNonNeutral(n));
        }
        Ok(())
    }

    fn reason_for_full(&self) -> String {
        match self.reason_a_connotation {
            Connotation::Positive => "they are constructive and important in our culture".into(),
            Connotation::Neutral => "of REASON A".into(),
            Connotation::Negative => "they are destructive and devastating for our culture".into(),
        }
    }

    fn reason_for_partial(&self) -> Result<String, SubjectError> {
        let a = &self.item_a_text;
        let b = &self.item_b_text;
        use Connotation::{Negative, Neutral, Positive};
        let text = match (self.reason_a_connotation, self.reason_b_connotation) {
            (Positive, Neutral) => format!(
                "{b}, justified by REASON B, calls for some funding allocation. However, given the positive cultural importance of {a}, we should keep some funding for it"
            ),
            (Negative, Neutral) => format!(
                "{b}, justified by REASON B, calls for some funding allocation. However, given the negative cultural importance of {a}, we should keep some funding for it"
            ),
            (Neutral, Neutral) => format!(
                "{b}, justified by REASON B, calls for some funding allocation. However, given REASON A justifying {a}, we should keep some funding for it"
            ),
            (Neutral, Positive) => format!(
                "the increasing appreciation of {b} in our culture calls for more funding for it. However, given REASON A justifying {a}, we should keep some funding for it"
            ),
            (Neutral, Negative) => format!(
                "our culture does not appreciate {b}, which calls for more funding for it. However, given REASON A justifying {a}, we should keep some funding for it"
            ),
            (reason_a, reason_b) => {
                return Err(SubjectError::UnsupportedReasonPair { reason_a, reason_b })
            }
        };
        Ok(text)
    }

    fn reason_for_none(&self) -> String {
        let b = &self.item_b_text;
        // The positive and negative variants carry their own closing period,
        // and the template adds another one.
        match self.reason_b_connotation {
            Connotation::Positive => format!(
                "there is a large cultural appreciation of {b} which justifies reallocating all the funding for it."
            ),
            Connotation::Neutral => format!("{b} must get all the funding because of REASON B"),
            Connotation::Negative => format!(
                "there is a large disdain of {b} in our culture, which justifies reallocating all the funding for it."
            ),
        }
    }
}

/// Initial opinion text for `stance` under `subject`.
pub fn render_initial_opinion(stance: Stance, subject: &DiscussionSubject) -> Result<String, SubjectError> {
    subject.validate()?;
    let a = &subject.item_a_text;
    Ok(match stance {
        Stance::Full => format!(
            "I think that {a} should have all the funding because {}.",
            subject.reason_for_full()
        ),
        Stance::Partial => format!(
            "I think that we should provide measured funding for {a} because {}.",
            subject.reason_for_partial()?
        ),
        Stance::No => format!(
            "I think that {a} should not have any funding because {}.",
            subject.reason_for_none()
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_text_values() {
        assert_eq!(default_text_value(Slot::ItemA, Connotation::Neutral), "Thing A");
        assert_eq!(
            default_text_value(Slot::ItemA, Connotation::Negative),
            "destructive bombs"
        );
        assert_eq!(
            default_text_value(Slot::ItemB, Connotation::Positive),
            "affordable public transportation"
        );
        assert_eq!(
            default_text_value(Slot::ItemB, Connotation::Negative),
            "nasty pollution"
        );
        assert_eq!(default_text_value(Slot::ReasonB, Connotation::Neutral), "REASON B");
    }

    #[test]
    fn nine_settings_in_table_order() {
        let settings = enumerate_connotation_settings();
        assert_eq!(settings.len(), 9);
        assert_eq!(settings[0], ConnotationSetting::neutral());
        let labels: Vec<_> = settings.iter().map(|s| s.label()).collect();
        assert_eq!(
            labels,
            [
                "[0, 0] [0, 0]",
                "[0, 0] [0, 1]",
                "[0, 0] [1, 0]",
                "[0, 0] [0, -1]",
                "[0, 0] [-1, 0]",
                "[0, 1] [0, 0]",
                "[1, 0] [0, 0]",
                "[0, -1] [0, 0]",
                "[-1, 0] [0, 0]",
            ]
        );
        assert!(settings.iter().all(|s| s.non_neutral_count() <= 1));
    }

    #[test]
    fn neutral_templates() {
        let s = DiscussionSubject::neutral();
        assert_eq!(
            render_initial_opinion(Stance::Full, &s).unwrap(),
            "I think that Thing A should have all the funding because of REASON A."
        );
        assert_eq!(
            render_initial_opinion(Stance::Partial, &s).unwrap(),
            "I think that we should provide measured funding for Thing A because Thing B, justified by REASON B, calls for some funding allocation. However, given REASON A justifying Thing A, we should keep some funding for it."
        );
        assert_eq!(
            render_initial_opinion(Stance::No, &s).unwrap(),
            "I think that Thing A should not have any funding because Thing B must get all the funding because of REASON B."
        );
    }

    #[test]
    fn reason_variants() {
        let settings = enumerate_connotation_settings();
        let reason_a_pos = DiscussionSubject::new(settings[2], &TextOverrides::default(), true).unwrap();
        assert_eq!(
            render_initial_opinion(Stance::Full, &reason_a_pos).unwrap(),
            "I think that Thing A should have all the funding because they are constructive and important in our culture."
        );
        assert_eq!(
            render_initial_opinion(Stance::Partial, &reason_a_pos).unwrap(),
            "I think that we should provide measured funding for Thing A because Thing B, justified by REASON B, calls for some funding allocation. However, given the positive cultural importance of Thing A, we should keep some funding for it."
        );
        let reason_b_neg = DiscussionSubject::new(settings[3], &TextOverrides::default(), true).unwrap();
        assert_eq!(
            render_initial_opinion(Stance::Partial, &reason_b_neg).unwrap(),
            "I think that we should provide measured funding for Thing A because our culture does not appreciate Thing B, which calls for more funding for it. However, given REASON A justifying Thing A, we should keep some funding for it."
        );
        assert_eq!(
            render_initial_opinion(Stance::No, &reason_b_neg).unwrap(),
            "I think that Thing A should not have any funding because there is a large disdain of Thing B in our culture, which justifies reallocating all the funding for it.."
        );
    }

    #[test]
    fn item_connotation_only_changes_text() {
        let settings = enumerate_connotation_settings();
        let item_a_pos = DiscussionSubject::new(settings[6], &TextOverrides::default(), true).unwrap();
        assert_eq!(
            render_initial_opinion(Stance::No, &item_a_pos).unwrap(),
            "I think that affordable housing should not have any funding because Thing B must get all the funding because of REASON B."
        );
    }

    #[test]
    fn overrides_replace_item_text() {
        let overrides = TextOverrides {
            item_b_negative: Some("destructive bombs".into()),
            ..Default::default()
        };
        let setting = enumerate_connotation_settings()[7];
        let s = DiscussionSubject::new(setting, &overrides, true).unwrap();
        assert_eq!(s.item_b_text, "destructive bombs");
        assert_eq!(s.item_a_text, "Thing A");
    }

    #[test]
    fn strict_mode_rejects_two_non_neutral() {
        let setting = ConnotationSetting {
            item_a: Connotation::Positive,
            reason_b: Connotation::Negative,
            ..ConnotationSetting::neutral()
        };
        assert_eq!(
            DiscussionSubject::new(setting, &TextOverrides::default(), true),
            Err(SubjectError::TooManyNonNeutral(2))
        );
        assert!(DiscussionSubject::new(setting, &TextOverrides::default(), false).is_ok());
    }

    #[test]
    fn lenient_mode_reports_missing_partial_template() {
        let setting = ConnotationSetting {
            reason_a: Connotation::Positive,
            reason_b: Connotation::Negative,
            ..ConnotationSetting::neutral()
        };
        let s = DiscussionSubject::new(setting, &TextOverrides::default(), false).unwrap();
        assert!(render_initial_opinion(Stance::Full, &s).is_ok());
        assert!(matches!(
            render_initial_opinion(Stance::Partial, &s),
            Err(SubjectError::UnsupportedReasonPair { .. })
        ));
    }

    #[test]
    fn all_templates_mention_items() {
        for setting in enumerate_connotation_settings() {
            let s = DiscussionSubject::new(setting, &TextOverrides::default(), true).unwrap();
            for stance in Stance::ALL {
                let text = render_initial_opinion(stance, &s).unwrap();
                assert!(text.contains(&s.item_a_text));
                if stance != Stance::Full {
                    assert!(text.contains(&s.item_b_text), "{text}");
                }
                assert_eq!(text, render_initial_opinion(stance, &s).unwrap());
            }
        }
    }
}
