//! Acceptance gate: one test per release criterion, each printing a
//! single `criterion N (name): PASS/FAIL` line with its runtime.
//!
//! Numeric targets come from independent references (closed-form
//! series, exhaustive enumeration, the exact joint-model oracle),
//! never from the code under test.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use memlens::capacity::{
    capacity, verify_lower_bound, BoundOutcome, CapacityOutcome, JointPolicyModel, ModelEvent,
    DEFAULT_SEARCH_BUDGET,
};
use memlens::synth::{generate, to_joint_model, EnvKind, EnvSpec};
use memlens::{
    count_table, digamma, entropy, extract_samples, grassberger_g, memory_profile,
    profile_with_significance, CountTable, Estimator, ProfileOptions, Projection,
};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn gate(number: u8, name: &str, started: Instant, limit: Duration, mut failures: Vec<String>) {
    let elapsed = started.elapsed();
    if elapsed > limit {
        failures.push(format!(
            "runtime {:.2?} exceeded the {:.0?} budget",
            elapsed, limit
        ));
    }
    if failures.is_empty() {
        println!("criterion {number} ({name}): PASS [{elapsed:.2?}]");
    } else {
        println!(
            "criterion {number} ({name}): FAIL [{elapsed:.2?}]: {}",
            failures.join("; ")
        );
    }
    assert!(
        failures.is_empty(),
        "criterion {number} ({name}): {}",
        failures.join("; ")
    );
}

/// Digamma at integers and half-integers from exact series:
/// psi(n) = -gamma + H_{n-1} and
/// psi(n + 1/2) = -gamma - 2 ln 2 + 2 sum_{k=1..n} 1/(2k - 1).
fn digamma_reference(twice_x: u64) -> f64 {
    if twice_x % 2 == 0 {
        let n = twice_x / 2;
        let mut h = 0.0;
        for k in 1..n {
            h += 1.0 / k as f64;
        }
        -EULER_GAMMA + h
    } else {
        let n = (twice_x - 1) / 2;
        let mut odd = 0.0;
        for k in 1..=n {
            odd += 1.0 / (2 * k - 1) as f64;
        }
        -EULER_GAMMA - 2.0 * 2f64.ln() + 2.0 * odd
    }
}

#[test]
fn criterion_1_special_functions() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let mut worst = 0.0f64;
    for twice_x in 1..=200u64 {
        let x = twice_x as f64 / 2.0;
        let got = digamma(x).unwrap();
        let want = digamma_reference(twice_x);
        worst = worst.max((got - want).abs());
    }
    if worst > 1e-12 {
        failures.push(format!(
            "digamma deviates from the exact series by {worst:.3e} on the half-integer grid"
        ));
    }

    let g1 = grassberger_g(1);
    let g1_exact = -EULER_GAMMA - 2f64.ln();
    if (g1 - g1_exact).abs() > 1e-12 {
        failures.push(format!("G(1) = {g1}, expected {g1_exact}"));
    }

    // Claimed bound G(n) <= ln n. It is false at every even n: the
    // correction oscillates around ln, e.g. G(2) = 1 - gamma - ln 2 + 2
    // = 0.7296... while ln 2 = 0.6931.... The check runs as stated and
    // reports the honest outcome.
    let violations: Vec<u64> = (1..=10_000u64)
        .filter(|&n| grassberger_g(n) > (n as f64).ln())
        .collect();
    if !violations.is_empty() {
        failures.push(format!(
            "G(n) <= ln n fails for {} of 10000 values, first at n = {}: G = {:.10}, ln n = {:.10}",
            violations.len(),
            violations[0],
            grassberger_g(violations[0]),
            (violations[0] as f64).ln()
        ));
    }

    gate(1, "special functions", started, Duration::from_secs(1), failures);
}

#[test]
fn criterion_2_estimator_identities() {
    let started = Instant::now();
    let mut failures = Vec::new();

    for k in [1usize, 2, 3, 4, 7, 10, 16, 100] {
        for c in [1u64, 2, 5] {
            let table = CountTable::from_counts(vec![c; k]);
            let h = entropy(&table, Estimator::Plugin).unwrap();
            if h != (k as f64).ln() {
                failures.push(format!(
                    "plug-in entropy on a uniform table of {k} cells x {c} is {h}, not exactly ln {k}"
                ));
            }
        }
    }

    // Claimed ordering: Grassberger >= plug-in on every count table.
    // The correction is not one-sided; tables whose counts are all
    // even push the corrected value below the plug-in one, e.g.
    // {2, 2}: plug-in ln 2 = 0.6931..., corrected 0.6566....
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_901);
    let mut order_violations = 0usize;
    let mut first: Option<Vec<u64>> = None;
    for _ in 0..1000 {
        let cells = rng.gen_range(1..=20usize);
        let counts: Vec<u64> = (0..cells).map(|_| rng.gen_range(1..=30u64)).collect();
        let table = CountTable::from_counts(counts.clone());
        let plug = entropy(&table, Estimator::Plugin).unwrap();
        let grass = entropy(&table, Estimator::Grassberger).unwrap();
        if grass < plug - 1e-12 {
            order_violations += 1;
            first.get_or_insert(counts);
        }
    }
    if order_violations > 0 {
        failures.push(format!(
            "Grassberger >= plug-in fails on {order_violations} of 1000 random tables, e.g. counts {:?}",
            first.unwrap()
        ));
    }

    let truth = 10f64.ln();
    let (mut mae_plug, mut mae_grass) = (0.0, 0.0);
    let draws = 1000;
    for _ in 0..draws {
        let mut counts = [0u64; 10];
        for _ in 0..50 {
            counts[rng.gen_range(0..10usize)] += 1;
        }
        let table = CountTable::from_counts(counts);
        mae_plug += (entropy(&table, Estimator::Plugin).unwrap() - truth).abs();
        mae_grass += (entropy(&table, Estimator::Grassberger).unwrap() - truth).abs();
    }
    mae_plug /= draws as f64;
    mae_grass /= draws as f64;
    if mae_grass >= mae_plug {
        failures.push(format!(
            "bias correction did not help: MAE {mae_grass:.4} (corrected) vs {mae_plug:.4} (plug-in)"
        ));
    }

    gate(2, "estimator identities", started, Duration::from_secs(10), failures);
}

#[test]
fn criterion_3_telescoping_chain_rule() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let spec = EnvSpec {
        kind: EnvKind::NoisyCopy,
        horizon: 5,
        alphabet_size: 2,
        noise: 0.2,
        reward_cue: false,
        seed: 123,
    };
    // Horizon 5 at max_lag 3 leaves decision steps 4 and 5, so 50000
    // episodes carry 100000 samples.
    let dataset = generate(&spec, 50_000).unwrap();
    let max_lag = 3;
    let samples = extract_samples(&dataset, max_lag, max_lag + 1).unwrap();
    if samples.len() != 100_000 {
        failures.push(format!("expected 100000 samples, got {}", samples.len()));
    }

    for estimator in [Estimator::Plugin, Estimator::Grassberger] {
        let profile = memory_profile(&dataset, max_lag, estimator, None, None).unwrap();
        let chain = profile.chain_sum();
        let h = |x_now, a_now, hist| {
            entropy(&count_table(&samples, Projection::new(x_now, a_now, hist)).unwrap(), estimator)
                .unwrap()
        };
        let block = (h(true, true, 0) - h(true, true, max_lag))
            + (h(true, false, max_lag) - h(true, false, 0));
        if (chain - block).abs() > 1e-10 {
            failures.push(format!(
                "{estimator:?}: chain sum {chain:.15} vs direct block value {block:.15}"
            ));
        }
    }

    gate(3, "telescoping chain rule", started, Duration::from_secs(5), failures);
}

fn environment_zoo() -> Vec<(String, JointPolicyModel)> {
    let mut zoo = Vec::new();
    let mut push = |name: &str, spec: EnvSpec| {
        zoo.push((name.to_owned(), to_joint_model(&spec).unwrap()));
    };
    let base = |kind, horizon, alphabet_size, noise| EnvSpec {
        kind,
        horizon,
        alphabet_size,
        noise,
        reward_cue: false,
        seed: 0,
    };
    push("markov-h3", base(EnvKind::Markov, 3, 2, 0.3));
    push("markov-h2-m3", base(EnvKind::Markov, 2, 3, 0.5));
    push("parity-h3", base(EnvKind::Parity, 3, 2, 0.0));
    push("parity-h4", base(EnvKind::Parity, 4, 2, 0.0));
    push("delayed-cue-h3", base(EnvKind::DelayedCue, 3, 2, 0.0));
    push("delayed-cue-h3-m3", base(EnvKind::DelayedCue, 3, 3, 0.0));
    let mut cue = base(EnvKind::DelayedCue, 3, 2, 0.0);
    cue.reward_cue = true;
    push("reward-cue-h3", cue);
    push("noisy-copy-h2", base(EnvKind::NoisyCopy, 2, 2, 0.1));
    push("noisy-copy-h3", base(EnvKind::NoisyCopy, 3, 2, 0.25));
    zoo
}

/// Random models over a single constant observation, two actions and
/// one reward value: every action sequence gets a product probability
/// from per-history Bernoulli parameters, so |Z| = 2 and capacity is
/// driven purely by how much the action conditionals spread.
fn random_binary_z_models(count: usize, seed: u64) -> Vec<(String, JointPolicyModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|idx| {
            let horizon = 2 + idx % 2;
            let n = 1usize << horizon;
            // One Bernoulli parameter per action history prefix,
            // indexed by (length, bits).
            let mut params = Vec::new();
            for t in 0..horizon {
                params.push((0..(1usize << t)).map(|_| rng.gen_range(0.05..0.95)).collect::<Vec<f64>>());
            }
            let episodes = (0..n)
                .map(|code| {
                    let mut p = 1.0;
                    let mut steps = Vec::with_capacity(horizon);
                    let mut prefix = 0usize;
                    for t in 0..horizon {
                        let a = (code >> t) & 1;
                        let p1 = params[t][prefix];
                        p *= if a == 1 { p1 } else { 1.0 - p1 };
                        prefix |= a << t;
                        steps.push((0usize, a, 0usize));
                    }
                    (steps, p)
                })
                .collect();
            let model = JointPolicyModel::new(
                horizon,
                vec!["0".into()],
                vec!["0".into(), "1".into()],
                vec!["0".into()],
                episodes,
            )
            .unwrap();
            (format!("random-{idx}"), model)
        })
        .collect()
}

#[test]
fn criterion_4_capacity_lower_bound() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let mut models = environment_zoo();
    models.extend(random_binary_z_models(100, 77));

    for (name, model) in &models {
        match verify_lower_bound(model, 5, &[], DEFAULT_SEARCH_BUDGET) {
            Ok(BoundOutcome::Verified(report)) => {
                for check in &report.checks {
                    if !check.holds {
                        failures.push(format!(
                            "{name}: chain sum {:.12} at t = {} exceeds ln {} ",
                            check.chain_sum, check.t, report.capacity
                        ));
                    }
                }
                if name == "parity-h3" {
                    if report.capacity != 2 {
                        failures.push(format!("{name}: capacity {} != 2", report.capacity));
                    }
                    let last = report.checks.iter().find(|c| c.t == 3).unwrap();
                    if (last.chain_sum - 2f64.ln()).abs() > 1e-9 {
                        failures.push(format!(
                            "{name}: bound should be tight, chain sum {:.12} vs ln 2",
                            last.chain_sum
                        ));
                    }
                }
            }
            Ok(BoundOutcome::CapacityExceedsKMax { k_max }) => {
                failures.push(format!("{name}: capacity search gave up at K = {k_max}"));
            }
            Err(err) => failures.push(format!("{name}: {err}")),
        }
    }

    gate(4, "capacity lower bound", started, Duration::from_secs(120), failures);
}

fn fnv1a_bytes(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in bytes {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// A reproducible half-density event over (history prefix, current
/// observation) pairs.
fn random_event(tag: u64) -> ModelEvent {
    ModelEvent::new(format!("event-{tag}"), move |prefix, x_now| {
        let bytes = prefix
            .iter()
            .flat_map(|z| z.to_le_bytes())
            .chain(u16::from(x_now).to_le_bytes())
            .chain(tag.to_le_bytes());
        fnv1a_bytes(bytes) & 1 == 0
    })
}

#[test]
fn criterion_5_event_restricted_bound() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let mut models = environment_zoo();
    models.extend(random_binary_z_models(100, 78));

    for (idx, (name, model)) in models.iter().enumerate() {
        let events: Vec<ModelEvent> =
            (0..20).map(|j| random_event((idx as u64) << 8 | j)).collect();
        match verify_lower_bound(model, 5, &events, DEFAULT_SEARCH_BUDGET) {
            Ok(BoundOutcome::Verified(report)) => {
                for check in report.checks.iter().filter(|c| c.event.is_some()) {
                    if !check.holds {
                        failures.push(format!(
                            "{name}: restricted chain sum {:.12} at t = {} under {:?} exceeds ln {}",
                            check.chain_sum,
                            check.t,
                            check.event.as_deref().unwrap(),
                            report.capacity
                        ));
                    }
                }
            }
            Ok(BoundOutcome::CapacityExceedsKMax { k_max }) => {
                failures.push(format!("{name}: capacity search gave up at K = {k_max}"));
            }
            Err(err) => failures.push(format!("{name}: {err}")),
        }
    }

    gate(5, "event-restricted bound", started, Duration::from_secs(120), failures);
}

#[test]
fn criterion_6_estimation_consistency() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let parity = EnvSpec {
        kind: EnvKind::Parity,
        horizon: 5,
        alphabet_size: 2,
        noise: 0.0,
        reward_cue: false,
        seed: 42,
    };
    let parity_data = generate(&parity, 50_000).unwrap();
    let markov = EnvSpec {
        kind: EnvKind::Markov,
        horizon: 5,
        alphabet_size: 2,
        noise: 0.3,
        reward_cue: false,
        seed: 43,
    };
    let markov_data = generate(&markov, 50_000).unwrap();

    let ln2 = 2f64.ln();
    for estimator in [Estimator::Plugin, Estimator::Grassberger] {
        let profile = memory_profile(&parity_data, 3, estimator, None, None).unwrap();
        let m1 = profile.lags[1].estimate_nats;
        if (m1 - ln2).abs() > 0.1 * ln2 {
            failures.push(format!(
                "{estimator:?}: parity lag-1 estimate {m1:.6} is not within 10% of ln 2"
            ));
        }
        let profile = memory_profile(&markov_data, 3, estimator, None, None).unwrap();
        for lag in &profile.lags[1..] {
            if lag.estimate_nats.abs() >= 0.02 {
                failures.push(format!(
                    "{estimator:?}: reactive data shows {:.4} nats at lag {}",
                    lag.estimate_nats, lag.lag
                ));
            }
        }
    }

    gate(6, "estimation consistency", started, Duration::from_secs(30), failures);
}

#[test]
fn criterion_7_permutation_calibration() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let runs = 200;
    let mut markov_hits = 0usize;
    let mut parity_hits = 0usize;
    for d in 0..runs {
        let markov = EnvSpec {
            kind: EnvKind::Markov,
            horizon: 6,
            alphabet_size: 2,
            noise: 0.3,
            reward_cue: false,
            seed: 9_000 + d,
        };
        let dataset = generate(&markov, 600).unwrap();
        let mut options = ProfileOptions::new(1, Estimator::Grassberger);
        options.seed = d;
        let profile = profile_with_significance(&dataset, &options).unwrap();
        let test = profile.lags[1].permutation.as_ref().unwrap();
        if test.significant {
            markov_hits += 1;
        }

        let parity = EnvSpec {
            kind: EnvKind::Parity,
            horizon: 6,
            alphabet_size: 2,
            noise: 0.0,
            reward_cue: false,
            seed: 5_000 + d,
        };
        let dataset = generate(&parity, 600).unwrap();
        let mut options = ProfileOptions::new(1, Estimator::Grassberger);
        options.seed = d;
        let profile = profile_with_significance(&dataset, &options).unwrap();
        if profile.lags[1].permutation.as_ref().unwrap().significant {
            parity_hits += 1;
        }
    }

    let rate = markov_hits as f64 / runs as f64;
    if !(0.02..=0.08).contains(&rate) {
        failures.push(format!(
            "memoryless false-positive rate {:.1}% ({markov_hits}/{runs}) is outside [2%, 8%]",
            rate * 100.0
        ));
    }
    if parity_hits != runs as usize {
        failures.push(format!(
            "parity lag-1 flagged in only {parity_hits}/{runs} runs"
        ));
    }

    gate(7, "permutation calibration", started, Duration::from_secs(300), failures);
}

fn run_binary(args: &[&str], threads: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_memlens"));
    cmd.args(args);
    if let Some(n) = threads {
        cmd.env("MEMLENS_THREADS", n);
    }
    cmd.output().expect("binary runs")
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("episodes.jsonl");
    let synth = run_binary(
        &[
            "synth", "--env", "noisy_copy", "--episodes", "2000", "--horizon", "5",
            "--seed", "21", "--output", data.to_str().unwrap(),
        ],
        None,
    );
    assert!(synth.status.success());

    let analyze_once = |run: usize, threads: Option<&str>| -> (Vec<u8>, Vec<u8>) {
        let csv = dir.path().join(format!("out-{run}.csv"));
        let svg = dir.path().join(format!("out-{run}.svg"));
        let out = run_binary(
            &[
                "analyze", "--input", data.to_str().unwrap(), "--seed", "6",
                "--output-csv", csv.to_str().unwrap(), "--output-svg", svg.to_str().unwrap(),
            ],
            threads,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (std::fs::read(csv).unwrap(), std::fs::read(svg).unwrap())
    };

    let first = analyze_once(0, None);
    let second = analyze_once(1, None);
    let third = analyze_once(2, Some("1"));
    let fourth = analyze_once(3, Some("4"));
    if first != second {
        failures.push("repeated runs differ".into());
    }
    if first != third || first != fourth {
        failures.push("outputs depend on the worker count".into());
    }

    gate(8, "end-to-end determinism", started, Duration::from_secs(60), failures);
}

/// Sanity check kept next to the gate: the four-history model that
/// motivates the K search refuses small K and accepts K = 4.
#[test]
fn capacity_search_brackets_are_exercised() {
    let q = [0.1, 0.3, 0.6, 0.9];
    let mut episodes = Vec::new();
    for a1 in 0..2usize {
        for a2 in 0..2usize {
            for a3 in 0..2usize {
                let q1 = q[a1 * 2 + a2];
                let pa3 = if a3 == 1 { q1 } else { 1.0 - q1 };
                episodes.push((vec![(0, a1, 0), (0, a2, 0), (0, a3, 0)], 0.25 * pa3));
            }
        }
    }
    let model = JointPolicyModel::new(
        3,
        vec!["0".into()],
        vec!["0".into(), "1".into()],
        vec!["0".into()],
        episodes,
    )
    .unwrap();
    match capacity(&model, 3, DEFAULT_SEARCH_BUDGET).unwrap() {
        CapacityOutcome::ExceedsKMax { k_max } => assert_eq!(k_max, 3),
        other => panic!("unexpected outcome: {other:?}"),
    }
    match capacity(&model, 4, DEFAULT_SEARCH_BUDGET).unwrap() {
        CapacityOutcome::Found { capacity, .. } => assert_eq!(capacity, 4),
        other => panic!("unexpected outcome: {other:?}"),
    }
}
