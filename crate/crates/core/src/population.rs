//! Agent population: initial stance assignment and per-agent opinion memory.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassifiedOpinion;
use crate::subjects::{render_initial_opinion, DiscussionSubject, Stance, SubjectError};

pub const MEMORY_LEN: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum PopulationError {
    #[error("population needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("proportions must be non-negative and sum to 1, got {0:?}")]
    BadProportions([f64; 3]),
    #[error("unknown distribution `{0}`")]
    UnknownDistribution(String),
    #[error("opinion at t={new} does not follow current opinion at t={current}")]
    NonIncreasingTime { current: u32, new: u32 },
    #[error(transparent)]
    Subject(#[from] SubjectError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistributionName {
    Equivalent,
    PolarizationF,
    PolarizationP,
    PolarizationN,
    MajorityF,
    MajorityP,
    MajorityN,
    ConsensusF,
    ConsensusP,
    ConsensusN,
}

impl DistributionName {
    pub const ALL: [DistributionName; 10] = [
        Self::Equivalent,
        Self::PolarizationF,
        Self::PolarizationP,
        Self::PolarizationN,
        Self::MajorityF,
        Self::MajorityP,
        Self::MajorityN,
        Self::ConsensusF,
        Self::ConsensusP,
        Self::ConsensusN,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Equivalent => "Equivalent",
            Self::PolarizationF => "Polarization-F",
            Self::PolarizationP => "Polarization-P",
            Self::PolarizationN => "Polarization-N",
            Self::MajorityF => "Majority-F",
            Self::MajorityP => "Majority-P",
            Self::MajorityN => "Majority-N",
            Self::ConsensusF => "Consensus-F",
            Self::ConsensusP => "Consensus-P",
            Self::ConsensusN => "Consensus-N",
        }
    }

    /// Stance shared by every agent at t = 0, for the consensus starts.
    pub fn consensus_stance(self) -> Option<Stance> {
        match self {
            Self::ConsensusF => Some(Stance::Full),
            Self::ConsensusP => Some(Stance::Partial),
            Self::ConsensusN => Some(Stance::No),
            _ => None,
        }
    }

    /// Proportions (full, partial, no).
    pub fn proportions(self) -> [f64; 3] {
        const THIRD: f64 = 1.0 / 3.0;
        const MAJ: f64 = 16.0 / 18.0;
        const MIN: f64 = 1.0 / 18.0;
        match self {
            Self::Equivalent => [THIRD, THIRD, THIRD],
            Self::PolarizationF => [0.0, 0.5, 0.5],
            Self::PolarizationP => [0.5, 0.0, 0.5],
            Self::PolarizationN => [0.5, 0.5, 0.0],
            Self::MajorityF => [MAJ, MIN, MIN],
            Self::MajorityP => [MIN, MAJ, MIN],
            Self::MajorityN => [MIN, MIN, MAJ],
            Self::ConsensusF => [1.0, 0.0, 0.0],
            Self::ConsensusP => [0.0, 1.0, 0.0],
            Self::ConsensusN => [0.0, 0.0, 1.0],
        }
    }

    /// Exact proportions as (numerator, denominator) over 18ths.
    fn eighteenths(self) -> [u64; 3] {
        match self {
            Self::Equivalent => [6, 6, 6],
            Self::PolarizationF => [0, 9, 9],
            Self::PolarizationP => [9, 0, 9],
            Self::PolarizationN => [9, 9, 0],
            Self::MajorityF => [16, 1, 1],
            Self::MajorityP => [1, 16, 1],
            Self::MajorityN => [1, 1, 16],
            Self::ConsensusF => [18, 0, 0],
            Self::ConsensusP => [0, 18, 0],
            Self::ConsensusN => [0, 0, 18],
        }
    }

    pub fn slug(self) -> String {
        self.label().to_lowercase()
    }
}

impl fmt::Display for DistributionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DistributionName {
    type Err = PopulationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        Self::ALL
            .into_iter()
            .find(|d| d.slug().replace('-', "") == key)
            .ok_or_else(|| PopulationError::UnknownDistribution(s.to_string()))
    }
}

/// Initial stance proportions: a named Table-1 row or custom weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialDistribution {
    Named(DistributionName),
    Custom { full: f64, partial: f64, no: f64 },
}

impl InitialDistribution {
    pub fn proportions(&self) -> [f64; 3] {
        match self {
            Self::Named(n) => n.proportions(),
            Self::Custom { full, partial, no } => [*full, *partial, *no],
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Named(n) => n.label().to_string(),
            Self::Custom { full, partial, no } => format!("Custom({full}, {partial}, {no})"),
        }
    }

    pub fn slug(&self) -> String {
        match self {
            Self::Named(n) => n.slug(),
            Self::Custom { full, partial, no } => format!("custom-{full}-{partial}-{no}"),
        }
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        let p = self.proportions();
        let ok = p.iter().all(|x| x.is_finite() && *x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(PopulationError::BadProportions(p))
        }
    }

    /// Agent counts (full, partial, no) for `n` agents, by largest remainder.
    /// Ties in the remainder go to the earlier stance.
    pub fn counts(&self, n: usize) -> Result<[usize; 3], PopulationError> {
        if n < 2 {
            return Err(PopulationError::TooFewAgents(n));
        }
        self.validate()?;
        if let Self::Named(name) = self {
            // Exact rational arithmetic keeps N = 18 (and multiples) exact.
            let w = name.eighteenths();
            return Ok(largest_remainder(
                w.map(|x| (x * n as u64) / 18),
                w.map(|x| (x * n as u64) % 18),
                n,
            ));
        }
        let p = self.proportions();
        let floors = p.map(|x| (x * n as f64).floor() as u64);
        // Remainders scaled to integers so the tie rule is exact.
        let rems = p.map(|x| {
            let v = x * n as f64;
            ((v - v.floor()) * 1e9).round() as u64
        });
        Ok(largest_remainder(floors, rems, n))
    }
}

impl From<DistributionName> for InitialDistribution {
    fn from(n: DistributionName) -> Self {
        Self::Named(n)
    }
}

fn largest_remainder(floors: [u64; 3], rems: [u64; 3], n: usize) -> [usize; 3] {
    let mut counts = floors.map(|f| f as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| rems[*b].cmp(&rems[*a]).then(a.cmp(b)));
    for k in 0..n.saturating_sub(assigned) {
        counts[order[k % 3]] += 1;
    }
    counts
}

/// One agent's opinion at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpinionRecord {
    pub time: u32,
    pub text: String,
    pub classified: ClassifiedOpinion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: usize,
    pub current_opinion: OpinionRecord,
    /// Up to two earlier opinions, most recent first.
    pub memory: Vec<OpinionRecord>,
    /// Opinion updates applied so far; the initial opinion counts as one.
    pub interaction_count: u32,
    /// Every opinion this agent has held, oldest first. Used to resolve
    /// implicit opinions.
    pub history: Vec<OpinionRecord>,
}

impl AgentState {
    pub fn new(agent_id: usize, initial: OpinionRecord) -> Self {
        Self {
            agent_id,
            current_opinion: initial.clone(),
            memory: Vec::new(),
            interaction_count: 1,
            history: vec![initial],
        }
    }

    pub fn stance(&self) -> Stance {
        self.current_opinion.classified.stance
    }

    /// Makes `opinion` current and shifts the old current opinion into memory.
    pub fn push_opinion(&mut self, opinion: OpinionRecord) -> Result<(), PopulationError> {
        if opinion.time <= self.current_opinion.time {
            return Err(PopulationError::NonIncreasingTime {
                current: self.current_opinion.time,
                new: opinion.time,
            });
        }
        let previous = std::mem::replace(&mut self.current_opinion, opinion.clone());
        self.memory.insert(0, previous);
        self.memory.truncate(MEMORY_LEN);
        self.interaction_count += 1;
        self.history.push(opinion);
        Ok(())
    }
}

/// Builds the t = 0 population: stances in contiguous blocks by index
/// (Full first, then Partial, then No), each holding its template opinion.
pub fn build_initial_population(
    dist: &InitialDistribution,
    n_agents: usize,
    subject: &DiscussionSubject,
) -> Result<Vec<AgentState>, PopulationError> {
    let counts = dist.counts(n_agents)?;
    let mut agents = Vec::with_capacity(n_agents);
    for (stance, count) in Stance::ALL.into_iter().zip(counts) {
        let text = render_initial_opinion(stance, subject)?;
        for _ in 0..count {
            let id = agents.len();
            agents.push(AgentState::new(
                id,
                OpinionRecord {
                    time: 0,
                    text: text.clone(),
                    classified: ClassifiedOpinion::of_stance(stance),
                },
            ));
        }
    }
    Ok(agents)
}

/// Counts of (full, partial, no) among the agents' current opinions.
pub fn stance_counts(agents: &[AgentState]) -> [usize; 3] {
    let mut c = [0; 3];
    for a in agents {
        c[a.stance().index()] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(time: u32) -> OpinionRecord {
        OpinionRecord {
            time,
            text: format!("o{time}"),
            classified: ClassifiedOpinion::of_stance(Stance::Partial),
        }
    }

    #[test]
    fn table_counts_at_18() {
        use DistributionName::*;
        let expected = [
            (Equivalent, [6, 6, 6]),
            (PolarizationF, [0, 9, 9]),
            (PolarizationP, [9, 0, 9]),
            (PolarizationN, [9, 9, 0]),
            (MajorityF, [16, 1, 1]),
            (MajorityP, [1, 16, 1]),
            (MajorityN, [1, 1, 16]),
            (ConsensusF, [18, 0, 0]),
            (ConsensusP, [0, 18, 0]),
            (ConsensusN, [0, 0, 18]),
        ];
        for (d, c) in expected {
            assert_eq!(InitialDistribution::Named(d).counts(18).unwrap(), c, "{d}");
        }
    }

    #[test]
    fn odd_sizes_use_largest_remainder() {
        let eq = InitialDistribution::Named(DistributionName::Equivalent);
        assert_eq!(eq.counts(4).unwrap(), [2, 1, 1]);
        assert_eq!(eq.counts(5).unwrap(), [2, 2, 1]);
        let maj = InitialDistribution::Named(DistributionName::MajorityN);
        assert_eq!(maj.counts(4).unwrap(), [0, 0, 4]);
    }

    #[test]
    fn rejects_tiny_populations_and_bad_weights() {
        let eq = InitialDistribution::Named(DistributionName::Equivalent);
        assert_eq!(eq.counts(1), Err(PopulationError::TooFewAgents(1)));
        let bad = InitialDistribution::Custom {
            full: 0.5,
            partial: 0.6,
            no: 0.0,
        };
        assert!(matches!(bad.counts(10), Err(PopulationError::BadProportions(_))));
    }

    #[test]
    fn names_parse_loosely() {
        assert_eq!(
            "Majority-N".parse::<DistributionName>().unwrap(),
            DistributionName::MajorityN
        );
        assert_eq!(
            "polarization_p".parse::<DistributionName>().unwrap(),
            DistributionName::PolarizationP
        );
        assert!("mostly-f".parse::<DistributionName>().is_err());
    }

    #[test]
    fn population_blocks() {
        let subject = DiscussionSubject::neutral();
        let agents = build_initial_population(&DistributionName::MajorityF.into(), 18, &subject).unwrap();
        assert_eq!(stance_counts(&agents), [16, 1, 1]);
        assert_eq!(agents[15].stance(), Stance::Full);
        assert_eq!(agents[16].stance(), Stance::Partial);
        assert_eq!(agents[17].stance(), Stance::No);
        assert!(agents.iter().enumerate().all(|(i, a)| a.agent_id == i));
        assert_eq!(
            agents[17].current_opinion.text,
            "I think that Thing A should not have any funding because Thing B must get all the funding because of REASON B."
        );
    }

    #[test]
    fn memory_buffer() {
        let mut a = AgentState::new(0, rec(0));
        a.push_opinion(rec(1)).unwrap();
        assert_eq!(a.memory.len(), 1);
        a.push_opinion(rec(2)).unwrap();
        a.push_opinion(rec(3)).unwrap();
        assert_eq!(a.memory.iter().map(|r| r.time).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(a.interaction_count, 4);
        assert_eq!(a.history.len(), 4);
        assert_eq!(
            a.push_opinion(rec(3)),
            Err(PopulationError::NonIncreasingTime { current: 3, new: 3 })
        );
    }

    proptest! {
        #[test]
        fn counts_sum_to_n(full in 0u32..100, partial in 0u32..100, no in 0u32..100, n in 2usize..200) {
            prop_assume!(full + partial + no > 0);
            let total = (full + partial + no) as f64;
            let dist = InitialDistribution::Custom {
                full: full as f64 / total,
                partial: partial as f64 / total,
                no: no as f64 / total,
            };
            // Rounding of the three weights can leave the sum a hair off 1.
            if dist.validate().is_ok() {
                let c = dist.counts(n).unwrap();
                prop_assert_eq!(c.iter().sum::<usize>(), n);
                for (k, p) in dist.proportions().iter().enumerate() {
                    prop_assert!((c[k] as f64 - p * n as f64).abs() < 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn memory_is_bounded_and_ordered(k in 1u32..20) {
            let mut a = AgentState::new(0, rec(0));
            for t in 1..=k {
                a.push_opinion(rec(t * 3)).unwrap();
                prop_assert!(a.memory.len() <= MEMORY_LEN);
                prop_assert!(a.memory.windows(2).all(|w| w[0].time > w[1].time));
                prop_assert_eq!(a.memory[0].time, (t - 1) * 3);
            }
            prop_assert_eq!(a.interaction_count, k + 1);
        }
    }
}
