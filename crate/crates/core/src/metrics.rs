//! Final-opinion distributions, allocation histograms, consensus summaries
//! and per-agent evolution traces.

use serde::{Deserialize, Serialize};

use crate::engine::SimulationResult;
use crate::population::{AgentState, InitialDistribution};
use crate::subjects::Stance;

pub const STD_CONVENTION: &str = "population (divisor n)";
pub const HISTOGRAM_NORMALIZATION: &str = "frequencies divided by n_explicit";
pub const N_BINS: usize = 10;

/// Percentages of agents per final stance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalDistribution {
    pub full_pct: f64,
    pub partial_pct: f64,
    pub no_pct: f64,
}

impl FinalDistribution {
    pub fn from_counts(counts: [usize; 3]) -> Self {
        let n: usize = counts.iter().sum();
        let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
        Self {
            full_pct: pct(counts[0]),
            partial_pct: pct(counts[1]),
            no_pct: pct(counts[2]),
        }
    }

    pub fn get(&self, stance: Stance) -> f64 {
        match stance {
            Stance::Full => self.full_pct,
            Stance::Partial => self.partial_pct,
            Stance::No => self.no_pct,
        }
    }
}

pub fn final_distribution(agents: &[AgentState]) -> FinalDistribution {
    FinalDistribution::from_counts(crate::population::stance_counts(agents))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateDistribution {
    pub full: MeanStd,
    pub partial: MeanStd,
    pub no: MeanStd,
    pub n_simulations: usize,
}

impl AggregateDistribution {
    pub fn get(&self, stance: Stance) -> MeanStd {
        match stance {
            Stance::Full => self.full,
            Stance::Partial => self.partial,
            Stance::No => self.no,
        }
    }
}

pub fn aggregate_distribution(dists: &[FinalDistribution]) -> AggregateDistribution {
    let col = |s: Stance| mean_std(&dists.iter().map(|d| d.get(s)).collect::<Vec<_>>());
    AggregateDistribution {
        full: col(Stance::Full),
        partial: col(Stance::Partial),
        no: col(Stance::No),
        n_simulations: dists.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationHistogram {
    pub bin_edges: [f64; N_BINS + 1],
    pub counts: [usize; N_BINS],
    pub frequencies: [f64; N_BINS],
    pub n_explicit: usize,
    pub n_total: usize,
}

/// Bin of a percentage in [0, 100]; the last bin includes 100.
pub fn bin_index(value: f64) -> usize {
    ((value / 10.0).floor().max(0.0) as usize).min(N_BINS - 1)
}

/// Bins explicit allocations into ten width-10 bins over [0, 100].
pub fn allocation_histogram<I: IntoIterator<Item = f64>>(values: I, n_total: usize) -> AllocationHistogram {
    let mut counts = [0usize; N_BINS];
    let mut n_explicit = 0;
    for v in values {
        counts[bin_index(v)] += 1;
        n_explicit += 1;
    }
    let frequencies = counts.map(|c| {
        if n_explicit == 0 {
            0.0
        } else {
            c as f64 / n_explicit as f64
        }
    });
    AllocationHistogram {
        bin_edges: std::array::from_fn(|k| 10.0 * k as f64),
        counts,
        frequencies,
        n_explicit,
        n_total,
    }
}

/// Histogram over the final opinions of all simulations. Only opinions that
/// state a percentage themselves count; implicit ones are ignored.
pub fn final_allocation_histogram(sims: &[SimulationResult]) -> AllocationHistogram {
    let finals = sims.iter().flat_map(|s| &s.final_agents);
    let values: Vec<f64> = finals
        .clone()
        .filter_map(|a| a.current_opinion.classified.explicit_allocation())
        .collect();
    allocation_histogram(values, finals.count())
}

/// Stance codes (1, 0, -1) per agent for t = 0..=n_rounds.
pub fn evolution_trace(sim: &SimulationResult, n_rounds: u32) -> Vec<Vec<i8>> {
    let mut traces: Vec<Vec<i8>> = sim
        .initial
        .iter()
        .map(|a| {
            let mut v = Vec::with_capacity(n_rounds as usize + 1);
            v.push(a.stance().code());
            v
        })
        .collect();
    let mut events = sim.events.iter().peekable();
    for t in 1..=n_rounds {
        for tr in traces.iter_mut() {
            let last = *tr.last().unwrap();
            tr.push(last);
        }
        while let Some(e) = events.next_if(|e| e.t == t) {
            *traces[e.agent_id].last_mut().unwrap() = e.classified.stance.code();
        }
    }
    traces
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub per_simulation: Vec<FinalDistribution>,
    pub aggregate: AggregateDistribution,
    pub histogram: AllocationHistogram,
}

pub fn batch_metrics(sims: &[SimulationResult]) -> BatchMetrics {
    let per_simulation: Vec<FinalDistribution> = sims.iter().map(|s| final_distribution(&s.final_agents)).collect();
    BatchMetrics {
        aggregate: aggregate_distribution(&per_simulation),
        per_simulation,
        histogram: final_allocation_histogram(sims),
    }
}

/// Final populations of one (distribution, subject) combination.
#[derive(Clone, Debug, PartialEq)]
pub struct ComboOutcome {
    pub distribution: InitialDistribution,
    pub setting_label: String,
    /// Final stance of every agent, one entry per completed simulation.
    pub finals: Vec<Vec<Stance>>,
    pub expected_simulations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    pub noncons_combos_total: usize,
    pub noncons_counted: usize,
    pub cons_combos_total: usize,
    pub cons_counted: usize,
    pub pct_noncons_all_partial: f64,
    pub pct_cons_kept: f64,
    /// Combinations left out because some simulations are missing.
    pub excluded: Vec<String>,
}

fn consensus_start(d: &InitialDistribution) -> Option<Stance> {
    let p = d.proportions();
    Stance::ALL.into_iter().find(|s| (p[s.index()] - 1.0).abs() < 1e-12)
}

fn pct(counted: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * counted as f64 / total as f64
    }
}

/// Share of non-consensus starts where every simulation ends with all agents
/// on partial funding, and of consensus starts where every simulation keeps
/// the initial consensus.
pub fn consensus_summary(combos: &[ComboOutcome]) -> ConsensusSummary {
    let mut s = ConsensusSummary {
        noncons_combos_total: 0,
        noncons_counted: 0,
        cons_combos_total: 0,
        cons_counted: 0,
        pct_noncons_all_partial: 0.0,
        pct_cons_kept: 0.0,
        excluded: Vec::new(),
    };
    for c in combos {
        let label = format!("{} {}", c.distribution.label(), c.setting_label);
        if c.finals.len() < c.expected_simulations || c.finals.is_empty() {
            log::warn!(
                "consensus summary: {label} has {} of {} simulations, excluded",
                c.finals.len(),
                c.expected_simulations
            );
            s.excluded.push(label);
            continue;
        }
        let target = consensus_start(&c.distribution);
        let goal = target.unwrap_or(Stance::Partial);
        let counts = c.finals.iter().all(|pop| pop.iter().all(|st| *st == goal));
        if target.is_some() {
            s.cons_combos_total += 1;
            s.cons_counted += counts as usize;
        } else {
            s.noncons_combos_total += 1;
            s.noncons_counted += counts as usize;
        }
    }
    s.pct_noncons_all_partial = pct(s.noncons_counted, s.noncons_combos_total);
    s.pct_cons_kept = pct(s.cons_counted, s.cons_combos_total);
    s
}
