use std::path::{Path, PathBuf};
use std::process::Command;

use ltf_cli::estimate::{self, read_estimates, AlignmentRecord, EstimateOptions, ALIGNMENT_FILE, ESTIMATES_FILE};
use ltf_cli::plotdata::{self, PlotOptions, BOXPLOT_FILE, TIMESERIES_FILE};
use ltf_core::agents::{HeuristicSpec, Preset};
use ltf_core::estimation::LearningRule;
use ltf_core::market::{FeedbackType, MarketSpec};
use ltf_core::session::{run_session, AgentPolicy, SessionConfig};
use proptest::prelude::*;

fn est_opts(inputs: Vec<PathBuf>, out: &Path) -> EstimateOptions {
    EstimateOptions {
        inputs,
        human_csv: None,
        feedback: None,
        out: out.to_path_buf(),
        no_learning_phase: false,
        rule: LearningRule::default(),
        anomaly_threshold: None,
    }
}

fn population(id: &str, preset: Preset, feedback: FeedbackType, seed: u64, rounds: usize) -> SessionConfig {
    let a = AgentPolicy::Heuristic(HeuristicSpec::preset(preset).noise(0.2));
    SessionConfig::new(id, seed, MarketSpec::new(feedback), vec![a; 6]).with_rounds(rounds)
}

fn read_alignment(path: &Path) -> Vec<AlignmentRecord> {
    csv::Reader::from_path(path).unwrap().deserialize().map(|r| r.unwrap()).collect()
}

#[test]
fn naive_negative_transcript_is_labelled_naive() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("naive.jsonl");
    run_session(population("naive", Preset::Naive, FeedbackType::Negative, 5, 50), Some(&t)).unwrap();
    let mut opts = est_opts(vec![t], &dir.path().join("out"));
    opts.no_learning_phase = true;
    let out = estimate::run(&opts, &mut Vec::new()).unwrap();
    let primary: Vec<_> = out.records.iter().filter(|r| r.primary).collect();
    assert_eq!(primary.len(), 6);
    assert_eq!(out.records.len(), 12);
    for r in primary {
        assert_eq!(r.status, "ok");
        assert!((r.alpha1.unwrap() - 1.0).abs() < 0.15, "alpha1 {:?}", r.alpha1);
        assert_eq!(r.nearest, "naive");
    }
}

#[test]
fn short_transcript_reports_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("short.jsonl");
    run_session(population("short", Preset::Naive, FeedbackType::Negative, 1, 8), Some(&t)).unwrap();
    let opts = est_opts(vec![t], &dir.path().join("out"));
    let out = estimate::run(&opts, &mut Vec::new()).unwrap();
    assert_eq!(out.records.len(), 12);
    assert!(out.records.iter().all(|r| r.status == "infeasible" && !r.reason.is_empty()));
    assert!(out
        .records
        .iter()
        .any(|r| r.reason == "insufficient_data" || r.reason == "learning_phase_never_ended"));
    assert_eq!(out.alignment[0].status, "infeasible");
    assert!(out.prism.is_empty());
}

#[test]
fn human_csv_gives_the_same_schema() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("sim.jsonl");
    run_session(population("sim", Preset::Adaptive, FeedbackType::Positive, 2, 50), Some(&t)).unwrap();
    let sim = estimate::run(&est_opts(vec![t.clone()], &dir.path().join("a")), &mut Vec::new()).unwrap();

    // The same session exported as long-format CSV.
    let tr = ltf_core::transcript::read_transcript(&t).unwrap();
    let mut text = String::from("session,round,agent,forecast,price,feedback\n");
    for r in &tr.records {
        for a in &r.agents {
            text.push_str(&format!("sim,{},{},{},{},positive\n", r.round, a.agent, a.prediction, r.price));
        }
    }
    let csv_path = dir.path().join("human.csv");
    std::fs::write(&csv_path, text).unwrap();
    let mut opts = est_opts(vec![], &dir.path().join("b"));
    opts.human_csv = Some(csv_path);
    let human = estimate::run(&opts, &mut Vec::new()).unwrap();

    let header = |p: &Path| std::fs::read_to_string(p).unwrap().lines().next().unwrap().to_string();
    for f in [ESTIMATES_FILE, ALIGNMENT_FILE] {
        assert_eq!(header(&dir.path().join("a").join(f)), header(&dir.path().join("b").join(f)));
    }
    // Same data, same coefficients; only the condition label differs.
    for (x, y) in sim.records.iter().zip(&human.records) {
        assert_eq!((x.alpha1, x.alpha2, x.beta), (y.alpha1, y.alpha2, y.beta));
    }
    assert_eq!(human.records[0].condition, "human|positive");
}

#[test]
fn plotdata_counts_and_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let tdir = dir.path().join("t");
    std::fs::create_dir(&tdir).unwrap();
    // Nine conditions: three presets per feedback plus three explicit rules.
    let conditions: Vec<(String, SessionConfig)> = vec![
        (Preset::Naive, FeedbackType::Negative),
        (Preset::Adaptive, FeedbackType::Negative),
        (Preset::TrendFollower, FeedbackType::Negative),
        (Preset::Naive, FeedbackType::Positive),
        (Preset::Adaptive, FeedbackType::Positive),
        (Preset::TrendFollower, FeedbackType::Positive),
        (Preset::Obstinate, FeedbackType::Positive),
        (Preset::Fundamentalist, FeedbackType::Negative),
        (Preset::TrendReverser, FeedbackType::Negative),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (p, f))| {
        let id = format!("c{i}");
        let cfg = population(&id, p, f, i as u64, 50);
        (id, cfg)
    })
    .collect();
    for (id, cfg) in &conditions {
        run_session(cfg.clone(), Some(&tdir.join(format!("{id}.jsonl")))).unwrap();
    }
    let est_dir = dir.path().join("est");
    estimate::run(&est_opts(vec![tdir.clone()], &est_dir), &mut Vec::new()).unwrap();

    let plot_dir = dir.path().join("plot");
    let out = plotdata::run(
        &PlotOptions {
            transcripts: vec![tdir.join("c0.jsonl")],
            estimates: Some(est_dir.join(ESTIMATES_FILE)),
            out: plot_dir.clone(),
        },
        &mut Vec::new(),
    )
    .unwrap();
    assert_eq!(out.timeseries.len(), 50 * 7);
    assert_eq!(out.timeseries.iter().filter(|p| p.series == "price").count(), 50);
    assert_eq!(out.boxplot.len(), 9);

    let alignment = read_alignment(&est_dir.join(ALIGNMENT_FILE));
    let boxplot = read_alignment(&plot_dir.join(BOXPLOT_FILE));
    assert_eq!(alignment, boxplot);
    assert_eq!(
        std::fs::read(est_dir.join(ALIGNMENT_FILE)).unwrap(),
        std::fs::read(plot_dir.join(BOXPLOT_FILE)).unwrap()
    );
    assert_eq!(std::fs::read_to_string(plot_dir.join(TIMESERIES_FILE)).unwrap().lines().count(), 351);
}

#[test]
fn plotdata_rejects_foreign_schema_versions() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("a.jsonl");
    run_session(population("a", Preset::Naive, FeedbackType::Negative, 1, 5), Some(&t)).unwrap();
    let text = std::fs::read_to_string(&t).unwrap().replacen("\"schema_version\":1", "\"schema_version\":7", 1);
    let b = dir.path().join("b.jsonl");
    std::fs::write(&b, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ltf"))
        .args(["plotdata", t.to_str().unwrap(), b.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mix schema versions"));

    let est = dir.path().join("est.csv");
    estimate::write_csv(&est, &{
        let mut rows = estimate::estimate(&est_opts(vec![t], dir.path())).unwrap().records;
        rows[0].schema_version = 99;
        rows
    })
    .unwrap();
    assert!(read_estimates(&est).is_err());
}

#[test]
fn binary_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = population("e2e", Preset::TrendFollower, FeedbackType::Positive, 3, 50);
    let cfg_path = dir.path().join("c.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let d = dir.path().to_str().unwrap();
    let ltf = |args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_ltf")).args(args).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ltf(&["run", "--config", cfg_path.to_str().unwrap(), "--out", d]);
    let t = dir.path().join("e2e.jsonl");
    let est_out = ltf(&["estimate", t.to_str().unwrap(), "--out", d, "--parallelism", "2"]);
    assert!(est_out.contains("h(") || est_out.contains("trend_follower"), "{est_out}");
    ltf(&["plotdata", t.to_str().unwrap(), "--estimates", dir.path().join(ESTIMATES_FILE).to_str().unwrap(), "--out", d]);
    assert!(dir.path().join(BOXPLOT_FILE).exists());
    assert!(dir.path().join(TIMESERIES_FILE).exists());
}

fn preset_strategy() -> impl Strategy<Value = HeuristicSpec> {
    prop_oneof![
        prop::sample::select(Preset::ALL.to_vec()).prop_map(HeuristicSpec::preset),
        (0.0f64..1.0, 0.0f64..1.0, -1.0f64..1.0).prop_map(|(a1, a2, b)| {
            let a2 = a2 * (1.0 - a1);
            HeuristicSpec::explicit(a1, a2, b)
        }),
    ]
    .prop_flat_map(|s| (Just(s), 0.0f64..1.0).prop_map(|(s, n)| s.noise(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn run_estimate_plot_always_closes(
        agents in prop::collection::vec(preset_strategy(), 1..8),
        positive in any::<bool>(),
        seed in any::<u64>(),
        rounds in 1usize..60,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let feedback = if positive { FeedbackType::Positive } else { FeedbackType::Negative };
        let n = agents.len();
        let cfg = SessionConfig::new(
            "fuzz",
            seed,
            MarketSpec::new(feedback),
            agents.into_iter().map(AgentPolicy::Heuristic).collect(),
        )
        .with_rounds(rounds);
        let t = dir.path().join("fuzz.jsonl");
        run_session(cfg, Some(&t)).unwrap();
        let out = estimate::run(&est_opts(vec![t.clone()], dir.path()), &mut Vec::new()).unwrap();
        prop_assert_eq!(out.records.len(), 2 * n);
        let plot = plotdata::run(
            &PlotOptions { transcripts: vec![t], estimates: Some(dir.path().join(ESTIMATES_FILE)), out: dir.path().to_path_buf() },
            &mut Vec::new(),
        ).unwrap();
        prop_assert_eq!(plot.timeseries.len(), rounds * (n + 1));
        prop_assert_eq!(plot.boxplot, out.alignment);
    }
}
