use std::fs;
use std::path::Path;

use ltf_core::agents::{HeuristicSpec, Preset};
use ltf_core::llm::LlmAgentConfig;
use ltf_core::market::{earnings, FeedbackType, MarketSpec};
use ltf_core::session::{
    replay_config, resume_session, run_session, AgentPolicy, BackendConfig, SessionConfig, SessionEngine,
    SessionError,
};
use ltf_core::transcript::{file_digest, read_transcript, TranscriptError};

fn heuristic(p: Preset) -> AgentPolicy {
    AgentPolicy::Heuristic(HeuristicSpec::preset(p).noise(0.2))
}

fn mixed_config(id: &str, seed: u64) -> SessionConfig {
    let agents = vec![
        heuristic(Preset::Naive),
        heuristic(Preset::TrendFollower),
        heuristic(Preset::Adaptive),
        heuristic(Preset::Obstinate),
        heuristic(Preset::Fundamentalist),
        heuristic(Preset::TrendReverser),
    ];
    SessionConfig::new(id, seed, MarketSpec::new(FeedbackType::Negative), agents)
}

fn mock_llm_config(id: &str, feedback: FeedbackType) -> SessionConfig {
    let llm = AgentPolicy::Llm(LlmAgentConfig::new("mock-model", 0.7, 3));
    SessionConfig::new(id, 11, MarketSpec::new(feedback), vec![llm; 6]).with_backend(BackendConfig::Mock {
        policy: HeuristicSpec::preset(Preset::Adaptive),
        temperature_noise: 0.5,
    })
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    run_session(mixed_config("s", 42), Some(&a)).unwrap();
    run_session(mixed_config("s", 42), Some(&b)).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let c = dir.path().join("c.jsonl");
    run_session(mixed_config("s", 43), Some(&c)).unwrap();
    assert_ne!(file_digest(&a).unwrap(), file_digest(&c).unwrap());
}

#[test]
fn mock_llm_sessions_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    run_session(mock_llm_config("m", FeedbackType::Positive), Some(&a)).unwrap();
    run_session(mock_llm_config("m", FeedbackType::Positive), Some(&b)).unwrap();
    assert_eq!(file_digest(&a).unwrap(), file_digest(&b).unwrap());
    let t = read_transcript(&a).unwrap();
    assert!(t.is_complete());
    assert!(t.records.iter().all(|r| r.agents.iter().all(|e| e.exchange.is_some())));
}

fn copy_prefix(src: &Path, dst: &Path, lines: usize) {
    let text = fs::read_to_string(src).unwrap();
    let prefix: String = text.split_inclusive('\n').take(lines).collect();
    fs::write(dst, prefix).unwrap();
}

#[test]
fn kill_and_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.jsonl");
    let cut = dir.path().join("cut.jsonl");
    run_session(mixed_config("r", 9), Some(&full)).unwrap();
    copy_prefix(&full, &cut, 21);
    assert_eq!(read_transcript(&cut).unwrap().records.len(), 20);
    let engine = resume_session(&cut).unwrap();
    assert!(engine.is_complete());
    assert_eq!(fs::read(&full).unwrap(), fs::read(&cut).unwrap());
}

#[test]
fn llm_session_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.jsonl");
    let cut = dir.path().join("cut.jsonl");
    run_session(mock_llm_config("l", FeedbackType::Negative), Some(&full)).unwrap();
    copy_prefix(&full, &cut, 21);
    resume_session(&cut).unwrap();
    assert_eq!(fs::read(&full).unwrap(), fs::read(&cut).unwrap());
}

#[test]
fn truncated_record_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.jsonl");
    run_session(mixed_config("t", 1).with_rounds(10), Some(&full)).unwrap();
    let bytes = fs::read(&full).unwrap();
    let cut = dir.path().join("cut.jsonl");
    fs::write(&cut, &bytes[..bytes.len() - 40]).unwrap();
    match resume_session(&cut) {
        Err(SessionError::Transcript(TranscriptError::Integrity { round, .. })) => assert_eq!(round, 10),
        other => panic!("expected integrity error, got {other:?}"),
    }

    let mut tampered = String::from_utf8(bytes).unwrap();
    tampered = tampered.replacen("\"price\":", "\"price\":1", 1);
    fs::write(&cut, tampered).unwrap();
    assert!(read_transcript(&cut).is_err());
}

#[test]
fn resuming_a_complete_transcript_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("done.jsonl");
    let first = run_session(mixed_config("d", 3), Some(&path)).unwrap();
    let before = fs::read(&path).unwrap();
    let again = resume_session(&path).unwrap();
    assert!(again.is_complete());
    assert_eq!(again.state(), first.state());
    assert_eq!(fs::read(&path).unwrap(), before);
}

#[test]
fn replay_reproduces_prices_and_earnings() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.jsonl");
    let recorded = run_session(mock_llm_config("p", FeedbackType::Positive), Some(&rec)).unwrap();
    let config = replay_config(&rec).unwrap();
    let replayed = run_session(config, Some(&dir.path().join("rep.jsonl"))).unwrap();
    let (a, b) = (recorded.records(), replayed.records());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.price, y.price);
        assert_eq!(x.predictions(), y.predictions());
        let ex: Vec<f64> = x.agents.iter().map(|e| e.earnings_delta).collect();
        let ey: Vec<f64> = y.agents.iter().map(|e| e.earnings_delta).collect();
        assert_eq!(ex, ey);
    }
    assert_eq!(recorded.state().earnings, replayed.state().earnings);
}

#[test]
fn mixed_replay_recomputes_scripted_slots() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.jsonl");
    let mut config = mock_llm_config("x", FeedbackType::Negative);
    config.agents[5] = heuristic(Preset::TrendFollower);
    let recorded = run_session(config, Some(&rec)).unwrap();
    let replayed = run_session(replay_config(&rec).unwrap(), None).unwrap();
    assert_eq!(recorded.state().price_series(), replayed.state().price_series());
}

#[test]
fn agent_views_hold_only_public_and_own_data() {
    let mut engine = SessionEngine::create(mixed_config("v", 5).with_rounds(5), None).unwrap();
    engine.run_to_end(|_| {}).unwrap();
    let prices: Vec<f64> = engine.records().iter().map(|r| r.price).collect();
    for agent in 0..6 {
        let view = engine.view_for(agent);
        let own: Vec<f64> = engine.records().iter().map(|r| r.agents[agent].prediction).collect();
        let mut chrono_prices = view.price_history.clone();
        chrono_prices.reverse();
        let mut chrono_own = view.own_predictions.clone();
        chrono_own.reverse();
        assert_eq!(chrono_prices, prices);
        assert_eq!(chrono_own, own);
        let total: f64 = engine.records().iter().map(|r| r.agents[agent].earnings_delta).sum();
        assert_eq!(view.total_earnings, total);
    }
}

/// Price iteration of a noiseless negative market with fixed-coefficient
/// agents, computed straight from the laws. An agent whose rule needs a lag
/// that does not exist yet plays its initial value in round 1 and the last
/// price afterwards.
fn iterate(coefs: &[(f64, f64, f64)], initial: &[f64], rounds: usize) -> Vec<f64> {
    let k = 20.0 / 21.0;
    let mut prices: Vec<f64> = Vec::new();
    let mut last: Vec<Option<f64>> = vec![None; coefs.len()];
    for t in 0..rounds {
        let forecasts: Vec<f64> = coefs
            .iter()
            .zip(&last)
            .zip(initial)
            .map(|((&(a1, a2, b), e1), &init)| {
                let lacks_p1 = (a1 != 0.0 || b != 0.0) && t < 1;
                let lacks_p2 = b != 0.0 && t < 2;
                let lacks_e1 = a2 != 0.0 && e1.is_none();
                if lacks_p1 || lacks_p2 || lacks_e1 {
                    return if t == 0 { init } else { prices[t - 1] };
                }
                let p1 = if t >= 1 { prices[t - 1] } else { 60.0 };
                let p2 = if t >= 2 { prices[t - 2] } else { p1 };
                let v = a1 * p1 + a2 * e1.unwrap_or(60.0) + (1.0 - a1 - a2) * 60.0 + b * (p1 - p2);
                v.max(0.01)
            })
            .collect();
        let mean = forecasts.iter().sum::<f64>() / forecasts.len() as f64;
        prices.push((k * (123.0 - mean)).max(0.0));
        last = forecasts.into_iter().map(Some).collect();
    }
    prices
}

#[test]
fn scripted_population_follows_the_laws() {
    let specs = [
        (Preset::Naive, 35.0),
        (Preset::Adaptive, 70.0),
        (Preset::Obstinate, 50.0),
        (Preset::Fundamentalist, 90.0),
        (Preset::TrendFollower, 45.0),
        (Preset::TrendReverser, 65.0),
    ];
    let agents = specs
        .iter()
        .map(|&(p, init)| AgentPolicy::Heuristic(HeuristicSpec::preset(p).initial(init)))
        .collect();
    let config =
        SessionConfig::new("o", 1, MarketSpec::new(FeedbackType::Negative).with_noise_sd(0.0), agents).with_rounds(30);
    let engine = run_session(config, None).unwrap();
    let coefs: Vec<_> = specs.iter().map(|(p, _)| p.coefficients()).collect();
    let inits: Vec<f64> = specs.iter().map(|(_, i)| *i).collect();
    let oracle = iterate(&coefs, &inits, 30);
    for (r, o) in engine.records().iter().zip(&oracle) {
        assert!((r.price - o).abs() <= 1e-9 * o.abs().max(1.0), "round {}: {} vs {o}", r.round, r.price);
    }
}

#[test]
fn mock_naive_llm_sees_two_decimal_prices() {
    let llm = AgentPolicy::Llm(LlmAgentConfig::new("mock", 0.0, 1));
    let config = SessionConfig::new("n", 2, MarketSpec::new(FeedbackType::Negative).with_noise_sd(0.0), vec![llm; 6])
        .with_rounds(20)
        .with_backend(BackendConfig::Mock {
            policy: HeuristicSpec::preset(Preset::Naive).initial(39.0),
            temperature_noise: 0.0,
        });
    let engine = run_session(config, None).unwrap();
    let k = 20.0 / 21.0;
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    let mut expected = vec![k * (123.0 - 39.0)];
    for t in 1..20 {
        expected.push(k * (123.0 - round2(expected[t - 1])));
    }
    for (r, e) in engine.records().iter().zip(&expected) {
        assert!((r.price - e).abs() < 1e-9, "round {}: {} vs {e}", r.round, r.price);
        for a in &r.agents {
            assert_eq!(a.earnings_delta, earnings(r.price, a.prediction));
        }
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
    #[test]
    fn transcript_round_trips(seed: u64, negative: bool, rounds in 3usize..30) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut config = mixed_config("rt", seed);
        config.rounds = rounds;
        if !negative {
            config.market = MarketSpec::new(FeedbackType::Positive);
        }
        let engine = run_session(config.clone(), Some(&path)).unwrap();
        let t = read_transcript(&path).unwrap();
        proptest::prop_assert_eq!(&t.header.config, &config);
        proptest::prop_assert_eq!(t.records.as_slice(), engine.records());
        proptest::prop_assert_eq!(t.records.len(), rounds);
    }
}
