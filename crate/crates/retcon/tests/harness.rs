use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::atomic::AtomicBool;

use proptest::prelude::*;
use retcon::bundled_corpus;
use retcon::gateway::{Gateway, MockBackend, MockBank};
use retcon::harness::{
    read_records, run_grid, run_to_log, ErrorKind, Experiment, GridConfig, HarnessError, Outcome, QueryRecord,
    ResultsLog, RunOptions,
};
use retcon::report::aggregate;
use retcon_core::{CefrLevel, ConditionKey, HeuristicScorer, PromptTemplateSet, Technique};

fn config(techniques: &[Technique], counts: &[usize]) -> GridConfig {
    GridConfig::from_json(
        &serde_json::json!({
            "techniques": techniques,
            "example_counts": counts,
            "prior_turn_counts": [0, 3, 8],
            "targets": ["A1", "B2", "C2"],
            "repetitions": 2,
            "seed": 11,
            "split_seed": 3,
            "concurrency": 3,
        })
        .to_string(),
    )
    .unwrap()
}

fn experiment(c: GridConfig) -> Experiment {
    Experiment::prepare(c, &bundled_corpus(), PromptTemplateSet::default()).unwrap()
}

fn compliant() -> Gateway<MockBackend> {
    Gateway::new(MockBackend::compliant(MockBank::builtin()), 4)
}

fn run_all(exp: &Experiment, gw: &Gateway<MockBackend>) -> Vec<QueryRecord> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    run_to_log(exp, gw, &HeuristicScorer, &path, false, RunOptions::default()).unwrap();
    read_records(&path).unwrap()
}

fn keyed(records: &[QueryRecord]) -> BTreeMap<ConditionKey, QueryRecord> {
    records.iter().map(|r| (r.key.clone(), r.without_timestamps())).collect()
}

#[test]
fn closed_loop_small_grid_has_zero_error() {
    let exp = experiment(config(&Technique::ALL, &[0, 2]));
    let records = run_all(&exp, &compliant());
    assert_eq!(records.len(), exp.keys().len());
    // zero-shot 1 cell + few-shot 2 + retcon 2, each 2 x 10 x 3 x 3
    assert_eq!(records.len(), 5 * 180);
    assert!(records.iter().all(QueryRecord::is_ok));
    for a in aggregate(&records).unwrap() {
        assert_eq!((a.mse, a.ci95_half_width), (0.0, 0.0), "{a:?}");
    }
}

#[test]
fn log_is_in_key_order_and_deterministic() {
    let exp = experiment(config(&[Technique::FewShot, Technique::Retcon], &[1]));
    let a = run_all(&exp, &compliant());
    let keys: Vec<_> = a.iter().map(|r| r.key.clone()).collect();
    assert_eq!(keys, exp.keys());

    let mut single = config(&[Technique::FewShot, Technique::Retcon], &[1]);
    single.concurrency = 1;
    let b = run_all(&experiment(single), &compliant());
    let strip = |v: &[QueryRecord]| v.iter().map(QueryRecord::without_timestamps).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn exhausted_script_leaves_error_rows() {
    let exp = experiment(config(&[Technique::ZeroShot], &[]));
    let replies: Vec<String> = (0..5)
        .map(|_| retcon_core::render_response_block(CefrLevel::A1, "Oh. I."))
        .collect();
    let mut c = config(&[Technique::ZeroShot], &[]);
    c.concurrency = 1;
    c.attempt_budget = 1;
    let exp1 = experiment(c);
    let gw = Gateway::new(MockBackend::scripted(replies), 1);
    let records = run_all(&exp1, &gw);
    assert_eq!(records.len(), exp.keys().len());
    assert_eq!(records.iter().filter(|r| r.is_ok()).count(), 5);
    assert!(records[5..].iter().all(|r| matches!(
        r.outcome,
        Outcome::Error {
            kind: ErrorKind::Transport,
            ..
        }
    )));
}

#[test]
fn interrupted_run_resumes_to_same_records() {
    let exp = experiment(config(&[Technique::FewShot, Technique::Retcon], &[2]));
    let full = run_all(&exp, &compliant());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let opts = RunOptions {
        limit: Some(100),
        cancel: None,
    };
    let first = run_to_log(&exp, &compliant(), &HeuristicScorer, &path, false, opts).unwrap();
    assert_eq!(first.executed, 100);
    // simulate a kill in the middle of a write
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(br#"{"schema_version":1,"technique":"ret"#)
        .unwrap();
    let before = read_records(&path).unwrap();
    let second = run_to_log(&exp, &compliant(), &HeuristicScorer, &path, true, RunOptions::default()).unwrap();
    assert_eq!(second.skipped, 100);
    let after = read_records(&path).unwrap();
    assert_eq!(after.len(), exp.keys().len());
    assert_eq!(keyed(&after), keyed(&full));
    // completed rows untouched
    assert_eq!(&after[..100], &before[..]);
}

#[test]
fn cancel_flag_stops_the_run() {
    let exp = experiment(config(&[Technique::ZeroShot], &[]));
    let dir = tempfile::tempdir().unwrap();
    let mut log = ResultsLog::create(&dir.path().join("r.jsonl")).unwrap();
    let cancel = AtomicBool::new(true);
    let s = run_grid(
        &exp,
        &compliant(),
        &HeuristicScorer,
        &mut log,
        &HashSet::new(),
        RunOptions {
            limit: None,
            cancel: Some(&cancel),
        },
    )
    .unwrap();
    assert_eq!(s.executed, 0);
}

#[test]
fn create_refuses_existing_log_and_corrupt_lines_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    ResultsLog::create(&path).unwrap();
    assert!(ResultsLog::create(&path).is_err());
    std::fs::write(&path, "not json\n").unwrap();
    let err = ResultsLog::resume(&path).unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
}

#[test]
fn few_shot_and_retcon_share_example_conversations() {
    let exp = experiment(config(&[Technique::FewShot, Technique::Retcon], &[3]));
    let records = run_all(&exp, &compliant());
    let ids_in = |r: &QueryRecord| {
        let prompt = exp.build_prompt(&r.key, &HeuristicScorer).unwrap();
        exp.split
            .examples
            .iter()
            .filter(|c| prompt.text.contains(c.turns()[0].text()))
            .map(|c| c.id().to_owned())
            .collect::<Vec<_>>()
    };
    let few = records.iter().find(|r| r.key.technique == Technique::FewShot).unwrap();
    let mut twin = few.key.clone();
    twin.technique = Technique::Retcon;
    let retcon = records.iter().find(|r| r.key == twin).unwrap();
    assert_eq!(ids_in(few).len(), 3);
    assert_eq!(ids_in(few), ids_in(retcon));
}

#[test]
fn config_validation() {
    let corpus = bundled_corpus();
    let prep = |c: GridConfig| Experiment::prepare(c, &corpus, PromptTemplateSet::default());
    assert!(matches!(prep(config(&[], &[1])), Err(HarnessError::Grid(_))));
    assert!(matches!(prep(config(&[Technique::FewShot], &[11])), Err(HarnessError::Grid(_))));
    assert!(matches!(prep(config(&[Technique::Retcon], &[])), Err(HarnessError::Grid(_))));
    let mut c = config(&[Technique::ZeroShot], &[]);
    c.prior_turn_counts = vec![21];
    assert!(matches!(prep(c), Err(HarnessError::Grid(_))));
    let mut c = config(&[Technique::ZeroShot], &[]);
    c.repetitions = 0;
    assert!(prep(c).is_err());
    let mut c = config(&[Technique::FewShot], &[1]);
    c.few_shot_turn_example_counts = vec![100];
    assert!(prep(c.clone()).is_ok());
    c.few_shot_turn_example_counts = vec![101];
    assert!(prep(c).is_err());
    assert!(GridConfig::from_json(r#"{"techniques": ["one-shot"]}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cardinality_matches_brute_force(
        mask in 1u8..8,
        counts in prop::collection::btree_set(0usize..=10, 1..4),
        priors in prop::collection::btree_set(0usize..=20, 1..5),
        targets in prop::collection::btree_set(0usize..6, 1..4),
        reps in 1usize..3,
    ) {
        let techniques: Vec<Technique> = Technique::ALL.into_iter().enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0).map(|(_, t)| t).collect();
        let mut c = config(&techniques, &counts.iter().copied().collect::<Vec<_>>());
        c.prior_turn_counts = priors.iter().copied().collect();
        c.targets = targets.iter().map(|&i| CefrLevel::ALL[i]).collect();
        c.repetitions = reps;
        let exp = experiment(c);

        let mut brute = 0;
        for t in &techniques {
            let cell_counts: Vec<usize> = if *t == Technique::ZeroShot { vec![0] } else { counts.iter().copied().collect() };
            for _ in cell_counts { for _ in 0..reps { for _ in 0..10 { for _ in &priors { for _ in &targets {
                brute += 1;
            }}}}}
        }
        prop_assert_eq!(exp.keys().len(), brute);
        let unique: HashSet<_> = exp.keys().iter().collect();
        prop_assert_eq!(unique.len(), brute);
    }
}
