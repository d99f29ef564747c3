//! Acceptance gate. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. The live-endpoint check runs only with OPINION_SIM_LIVE set.

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use opinion_core::backends::{
    Backend, BackendError, BackendSpec, CompletionRequest, CompletionResult, HttpConfig, MidpointOracle,
    ScriptedBackend,
};
use opinion_core::classifier::{Classification, Classifier, NoKind};
use opinion_core::engine::{run_batch, run_simulation, select_pair, SimulationConfig};
use opinion_core::metrics::{allocation_histogram, consensus_summary, ComboOutcome};
use opinion_core::population::{DistributionName, InitialDistribution};
use opinion_core::protocol::{UpdateMode, RETRY_SUFFIX};
use opinion_core::store;
use opinion_core::subjects::{
    enumerate_connotation_settings, render_initial_opinion, DiscussionSubject, Stance, TextOverrides,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    check(took < limit, format!("took {took:?}, limit {limit:?}"))
}

fn c1_round_trip() -> Outcome {
    let base = Classifier::default();
    let started = Instant::now();
    let mut ok = 0;
    for setting in enumerate_connotation_settings() {
        let subject = DiscussionSubject::new(setting, &TextOverrides::default(), true).map_err(|e| e.to_string())?;
        let classifier = base.clone().for_subject(&subject);
        for s in Stance::ALL {
            let text = render_initial_opinion(s, &subject).map_err(|e| e.to_string())?;
            match classifier.classify(&text, UpdateMode::FreeForm) {
                Classification::Explicit(c) if c.stance == s => {
                    if s == Stance::No {
                        check(
                            c.no_kind == Some(NoKind::ExplicitZero),
                            format!("{text}: {:?}", c.no_kind),
                        )?;
                    }
                    ok += 1;
                }
                other => return Err(format!("{}: {text} -> {other:?}", setting.label())),
            }
        }
    }
    check(ok == 27, format!("{ok}/27"))?;
    within(Duration::from_secs(1), started)?;
    Ok(format!("{ok}/27, {:.1?}", started.elapsed()))
}

fn c2_corpus() -> Outcome {
    #[derive(serde::Deserialize)]
    struct Rec {
        text: String,
        mode: UpdateMode,
        item_a: String,
        item_b: String,
        stance: Stance,
        no_kind: Option<NoKind>,
        allocation: Option<f64>,
    }
    let recs: Vec<Rec> = include_str!("../data/corpus.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    check(recs.len() >= 30, format!("only {} records", recs.len()))?;
    for must in [
        "47.418359375%",
        "$0 funding is justified",
        "no definitive funding figure",
        "100% of the funding",
    ] {
        check(
            recs.iter().any(|r| r.text.replace("\\$", "$").contains(must)),
            format!("corpus lacks `{must}`"),
        )?;
    }
    let base = Classifier::default();
    let mut right = 0;
    for r in &recs {
        let c = base.clone().with_items(&r.item_a, &r.item_b);
        if let Classification::Explicit(o) = c.classify(&r.text, r.mode) {
            if o.stance == r.stance && o.no_kind == r.no_kind && o.allocation == r.allocation {
                right += 1;
            }
        }
    }
    check(right == recs.len(), format!("{right}/{}", recs.len()))?;
    Ok(format!("{right}/{} snippets", recs.len()))
}

fn c3_stubborn() -> Outcome {
    let started = Instant::now();
    let classifier = Classifier::default();
    for name in DistributionName::ALL {
        let cfg = SimulationConfig {
            distribution: name.into(),
            n_agents: 18,
            n_rounds: 90,
            n_simulations: 20,
            ..SimulationConfig::new(UpdateMode::FreeForm, BackendSpec::Stubborn)
        };
        let res = run_batch(
            &cfg,
            BackendSpec::Stubborn.build(None).unwrap(),
            &classifier,
            None,
            false,
        )
        .map_err(|e| e.to_string())?;
        check(res.complete(), format!("{}: failures", name.label()))?;
        let p = name.proportions();
        for s in Stance::ALL {
            let ms = res.metrics.aggregate.get(s);
            check(
                (ms.mean - 100.0 * p[s.index()]).abs() < 1e-9 && ms.std.abs() < 1e-9,
                format!("{} {:?}: {} ± {}", name.label(), s, ms.mean, ms.std),
            )?;
        }
    }
    within(Duration::from_secs(30), started)?;
    Ok(format!(
        "10 distributions preserved, std 0.00, {:.1?}",
        started.elapsed()
    ))
}

fn c4_midpoint() -> Outcome {
    let started = Instant::now();
    let cfg = SimulationConfig {
        distribution: DistributionName::PolarizationP.into(),
        n_simulations: 20,
        ..SimulationConfig::new(UpdateMode::FreeForm, BackendSpec::Midpoint)
    };
    let res =
        run_batch(&cfg, Arc::new(MidpointOracle), &Classifier::default(), None, false).map_err(|e| e.to_string())?;
    check(res.complete() && res.simulations.len() == 20, "incomplete batch")?;
    for sim in &res.simulations {
        let selected: HashSet<usize> = sim.events.iter().map(|e| e.agent_id).collect();
        let n = sim.final_agents.len();
        let partial = sim
            .final_agents
            .iter()
            .filter(|a| a.stance() == Stance::Partial)
            .count();
        let want = 100.0 * selected.len() as f64 / n as f64;
        let got = 100.0 * partial as f64 / n as f64;
        check(
            got == want,
            format!("sim {}: partial {got} vs selected {want}", sim.simulation_index),
        )?;
        for a in sim.final_agents.iter().filter(|a| selected.contains(&a.agent_id)) {
            let v = a.current_opinion.classified.allocation;
            check(
                matches!(v, Some(x) if x > 0.0 && x < 100.0),
                format!("sim {} agent {}: allocation {v:?}", sim.simulation_index, a.agent_id),
            )?;
        }
    }
    within(Duration::from_secs(30), started)?;
    Ok(format!("20/20 simulations, {:.1?}", started.elapsed()))
}

/// Midpoint oracle that starts failing after a fixed number of calls.
struct FailAfter {
    left: AtomicI64,
}

impl Backend for FailAfter {
    fn name(&self) -> &str {
        "midpoint"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        if self.left.fetch_sub(1, Ordering::SeqCst) <= 0 {
            return Err(BackendError::Transport {
                attempts: 1,
                message: "injected failure".into(),
            });
        }
        MidpointOracle.complete(req)
    }
}

fn transcripts(dir: &Path, n: u32) -> Result<Vec<Vec<u8>>, String> {
    (0..n)
        .map(|i| std::fs::read(store::transcript_path(dir, i)).map_err(|e| e.to_string()))
        .collect()
}

fn c5_replay() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SimulationConfig {
        distribution: DistributionName::Equivalent.into(),
        n_rounds: 25,
        n_simulations: 3,
        master_seed: 7,
        ..SimulationConfig::new(UpdateMode::FreeForm, BackendSpec::Midpoint)
    };
    let classifier = Classifier::default();
    let run = |dir: &Path, backend: Arc<dyn Backend>, resume: bool| {
        run_batch(&cfg, backend, &classifier, Some(dir), resume).map_err(|e| e.to_string())
    };
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run(&a, Arc::new(MidpointOracle), false)?;
    run(&b, Arc::new(MidpointOracle), false)?;
    let ta = transcripts(&a, 3)?;
    check(ta == transcripts(&b, 3)?, "repeated runs differ")?;
    let first = run(
        &c,
        Arc::new(FailAfter {
            left: AtomicI64::new(37),
        }),
        false,
    )?;
    check(!first.complete(), "injected failure did not interrupt the run")?;
    let second = run(&c, Arc::new(MidpointOracle), true)?;
    check(second.complete(), "resume left failures")?;
    check(ta == transcripts(&c, 3)?, "resumed transcripts differ")?;
    Ok("byte-identical, resume matches".into())
}

fn c6_uniform() -> Outcome {
    let n = 18;
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = vec![0u64; n * n];
    for _ in 0..draws {
        let (i, j) = select_pair(&mut rng, n);
        counts[i.min(j) * n + i.max(j)] += 1;
    }
    let cells: Vec<u64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| counts[i * n + j])
        .collect();
    check(cells.len() == 153, "pair count")?;
    let expected = draws as f64 / 153.0;
    let stat: f64 = cells.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(152.0).map_err(|e| e.to_string())?.cdf(stat);
    check(p > 0.001, format!("chi2 {stat:.1}, p {p:.4}"))?;
    Ok(format!("chi2 {stat:.1} on 152 df, p = {p:.3}"))
}

fn c7_consensus() -> Outcome {
    let all = |s: Stance| vec![vec![s; 18]];
    let mut combos = Vec::new();
    let noncons: Vec<_> = DistributionName::ALL
        .into_iter()
        .filter(|d| d.consensus_stance().is_none())
        .collect();
    let cons: Vec<_> = DistributionName::ALL
        .into_iter()
        .filter_map(|d| d.consensus_stance().map(|s| (d, s)))
        .collect();
    for k in 0..63 {
        let mut finals = all(Stance::Partial);
        if k >= 52 {
            finals[0][0] = Stance::No;
        }
        combos.push(ComboOutcome {
            distribution: noncons[k % noncons.len()].into(),
            setting_label: format!("s{k}"),
            finals,
            expected_simulations: 1,
        });
    }
    for k in 0..27 {
        let (d, s) = cons[k % cons.len()];
        combos.push(ComboOutcome {
            distribution: d.into(),
            setting_label: format!("c{k}"),
            finals: all(s),
            expected_simulations: 1,
        });
    }
    let s = consensus_summary(&combos);
    let a = format!("{:.2}", s.pct_noncons_all_partial);
    let b = format!("{:.2}", s.pct_cons_kept);
    check(a == "82.54" && b == "100.00", format!("{a} / {b}"))?;
    Ok(format!("{a}% and {b}%"))
}

fn c8_retry_and_option() -> Outcome {
    let classifier = Classifier::default();
    let two = |mode| SimulationConfig {
        distribution: InitialDistribution::Custom {
            full: 0.5,
            partial: 0.0,
            no: 0.5,
        },
        n_agents: 2,
        n_rounds: 1,
        n_simulations: 1,
        ..SimulationConfig::new(mode, BackendSpec::Scripted { responses: vec![] })
    };
    let backend = ScriptedBackend::new([
        "I would keep the same allocation.",
        "After this interaction, I think Thing A should receive 50% of the funding.",
        "After this interaction, I think Thing A should receive 50% of the funding.",
    ]);
    let sim = run_simulation(&two(UpdateMode::FreeForm), 0, &backend, &classifier).map_err(|e| e.to_string())?;
    let reqs = backend.requests();
    check(reqs.len() == 3, format!("{} requests, expected 3", reqs.len()))?;
    let (orig, retry) = (&reqs[0].user_prompt, &reqs[1].user_prompt);
    let sentences: Vec<&str> = orig.split_inclusive(". ").collect();
    let n = sentences.len();
    let head: String = sentences[..n - 2].concat();
    let second_last = sentences[n - 2].trim_end().trim_end_matches('.');
    let want = format!("{head}{second_last}{RETRY_SUFFIX} {}", sentences[n - 1]);
    check(*retry == want, format!("retry prompt mismatch:\n{retry}\n{want}"))?;
    check(sim.events.iter().filter(|e| e.retried).count() == 1, "retried flag")?;

    let backend = ScriptedBackend::new(["Option: (b)", "Option: (b)"]);
    let sim = run_simulation(&two(UpdateMode::ClosedForm), 0, &backend, &classifier).map_err(|e| e.to_string())?;
    let partial = render_initial_opinion(Stance::Partial, &DiscussionSubject::neutral()).map_err(|e| e.to_string())?;
    for a in &sim.final_agents {
        check(
            a.current_opinion.text == partial,
            format!("agent {} holds {:?}", a.agent_id, a.current_opinion.text),
        )?;
    }
    Ok("one retry with suffix, option (b) -> partial template".into())
}

fn c9_histogram() -> Outcome {
    let h = allocation_histogram([5.0, 15.0, 95.0], 3);
    let third = 1.0 / 3.0;
    let mut want = [0.0; 10];
    want[0] = third;
    want[1] = third;
    want[9] = third;
    check(
        h.frequencies.len() == 10 && h.frequencies == want,
        format!("{:?}", h.frequencies),
    )?;
    let h = allocation_histogram([100.0], 1);
    check(h.counts[9] == 1, "100 not in final bin")?;
    let h = allocation_histogram(std::iter::empty(), 0);
    check(h.counts.len() == 10, "empty histogram lost bins")?;
    Ok("(1/3, 1/3, 0, ..., 0, 1/3)".into())
}

fn c10_live() -> Option<Outcome> {
    std::env::var_os("OPINION_SIM_LIVE")?;
    let run = || -> Outcome {
        let backend = BackendSpec::Http {
            model: std::env::var("OPINION_SIM_MODEL").unwrap_or_default(),
            http: HttpConfig::default(),
            max_tokens: None,
        };
        let cfg = SimulationConfig {
            distribution: DistributionName::Equivalent.into(),
            n_agents: 4,
            n_rounds: 6,
            n_simulations: 1,
            strict_classification: false,
            ..SimulationConfig::new(UpdateMode::FreeForm, backend.clone())
        };
        let b = backend.build(None).map_err(|e| e.to_string())?;
        let res = run_batch(&cfg, b, &Classifier::default(), None, false).map_err(|e| e.to_string())?;
        check(res.complete(), format!("{:?}", res.failures))?;
        let unclassified = res.simulations[0]
            .events
            .iter()
            .filter(|e| e.anomalies.iter().any(|a| a.contains("nclassified")))
            .count();
        check(unclassified == 0, format!("{unclassified} unclassified opinions"))?;
        Ok(format!("{} events, 0 unclassified", res.simulations[0].events.len()))
    };
    Some(run())
}

/// Bypasses the test harness's output capture so the report always shows.
fn report(line: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{line}");
}

#[test]
fn acceptance() {
    let criteria: Vec<(u32, &str, Option<Outcome>)> = vec![
        (1, "template round-trip", Some(c1_round_trip())),
        (2, "classifier corpus", Some(c2_corpus())),
        (3, "stubborn-oracle preservation", Some(c3_stubborn())),
        (4, "midpoint-oracle convergence", Some(c4_midpoint())),
        (5, "determinism and resume", Some(c5_replay())),
        (6, "scheduler uniformity", Some(c6_uniform())),
        (7, "consensus-summary arithmetic", Some(c7_consensus())),
        (8, "retry and option rules", Some(c8_retry_and_option())),
        (9, "histogram exactness", Some(c9_histogram())),
        (10, "live endpoint smoke test", c10_live()),
    ];
    let mut failed = Vec::new();
    for (n, name, outcome) in criteria {
        match outcome {
            Some(Ok(detail)) => report(format!("criterion {n:>2} PASS  {name}: {detail}")),
            Some(Err(why)) => {
                report(format!("criterion {n:>2} FAIL  {name}: {why}"));
                failed.push(n);
            }
            None => report(format!("criterion {n:>2} SKIP  {name}: set OPINION_SIM_LIVE to run")),
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
