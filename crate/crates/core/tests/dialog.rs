mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cts_core::agent::{NetworkConfig, QNetwork};
use cts_core::eval::{evaluate, run_episode, Decision, EvalError, EvalReport, GreedyPolicy, OraclePolicy, Policy, RandomPolicy};
use cts_core::graph::{parse_graph, serialize_graph, Assignments, DatasetSplit, NodeId, Step, Value};
use cts_core::simulator::{default_openers, perceived_length, Action, DialogMode, EnvFactory, Observation, SimulatorConfig};
use cts_core::encoding::HashedNGramEncoder;

#[test]
fn fixture_stats_match_hand_counts() {
    let (graph, train, _) = common::load("fixture10");
    let stats = graph.compute_stats(&train);
    assert_eq!(stats.node_count, 10);
    assert_eq!(stats.tree_depth, 4);
    assert_eq!(stats.max_node_degree, 3);
    assert_eq!(stats.question_count, 21);
    assert_eq!(stats.avg_questions_per_answerable_node, 3.0);
    assert_eq!(graph.goal_candidates().unwrap().len(), 8);
}

#[test]
fn toy_tree_shape() {
    let (graph, train, test) = common::load("toy15");
    let stats = graph.compute_stats(&train);
    assert_eq!(stats.node_count, 15);
    assert_eq!(stats.tree_depth, 4);
    assert_eq!(stats.max_node_degree, 3);
    assert_eq!(stats.question_count, 42);
    assert!(train.questions.values().all(|q| q.len() == 3));
    assert_eq!(test.question_count(), 28);
    train.validate_against(&graph).unwrap();
    test.validate_against(&graph).unwrap();
}

#[test]
fn long_trip_takes_the_over_fourteen_branch() {
    let (graph, _, _) = common::load("fixture10");
    let mut values = Assignments::new();
    values.insert("trip_length".into(), Value::Number(21.0));
    let path = graph.shortest_trajectory(&NodeId::new("long_trip"), &values).unwrap();
    let nodes: Vec<&str> = path.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(nodes, ["start", "trip", "days", "length_check"]);
    assert_eq!(path[3].1, Step::Branch(Some(0)));
    values.insert("trip_length".into(), Value::Number(7.0));
    assert!(graph.shortest_trajectory(&NodeId::new("long_trip"), &values).is_err());
}

#[test]
fn fixtures_round_trip() {
    for name in ["fixture10", "toy15"] {
        let (graph, train, _) = common::load(name);
        let again = parse_graph(&serialize_graph(&graph)).unwrap();
        assert_eq!(*graph, again);
        assert_eq!(DatasetSplit::parse(&train.to_json()).unwrap(), *train);
    }
}

fn tree_document(parents: &[usize]) -> String {
    let mut nodes = Vec::new();
    for i in 0..=parents.len() {
        let children: Vec<usize> = (0..parents.len()).filter(|&c| parents[c] == i).map(|c| c + 1).collect();
        let answers: Vec<serde_json::Value> = children
            .iter()
            .map(|c| serde_json::json!({"id": format!("a{c}"), "text": format!("to {c}"), "target": format!("n{c}")}))
            .collect();
        let kind = if i == 0 { "start" } else if answers.is_empty() { "info" } else { "question" };
        nodes.push(serde_json::json!({"id": format!("n{i}"), "kind": kind, "text": format!("node {i}"), "answers": answers}));
    }
    serde_json::json!({"start": "n0", "nodes": nodes}).to_string()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_trees_round_trip(raw in prop::collection::vec(0usize..1000, 1..20)) {
        let parents: Vec<usize> = raw.iter().enumerate().map(|(i, r)| r % (i + 1)).collect();
        let graph = parse_graph(&tree_document(&parents)).unwrap();
        prop_assert_eq!(parse_graph(&serialize_graph(&graph)).unwrap(), graph.clone());
        for goal in graph.goal_candidates().unwrap() {
            let path = graph.shortest_trajectory(&goal, &Assignments::new()).unwrap();
            prop_assert!(path.len() <= graph.tree_depth());
        }
    }
}

#[test]
fn goals_are_drawn_uniformly() {
    let doc = r#"{"start": "s", "nodes": [
        {"id": "s", "kind": "start", "text": "Hi", "answers": [
            {"id": "a1", "text": "one", "target": "x1"}, {"id": "a2", "text": "two", "target": "x2"},
            {"id": "a3", "text": "three", "target": "x3"}, {"id": "a4", "text": "four", "target": "x4"}]},
        {"id": "x1", "kind": "info", "text": "First"}, {"id": "x2", "kind": "info", "text": "Second"},
        {"id": "x3", "kind": "info", "text": "Third"}, {"id": "x4", "kind": "info", "text": "Fourth"}]}"#;
    let graph = Arc::new(parse_graph(doc).unwrap());
    let split = Arc::new(DatasetSplit::from_graph_inline(&graph));
    let config = SimulatorConfig {
        free_mode_probability: 0.0,
        ..SimulatorConfig::default()
    };
    let factory: EnvFactory<f32> = EnvFactory::new(
        graph,
        split.clone(),
        split,
        default_openers(),
        Arc::new(HashedNGramEncoder::new(32, 0)),
        config,
    )
    .unwrap();
    let mut env = factory.train_env(17).unwrap();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let n = 10_000;
    for _ in 0..n {
        let (_, goal) = env.reset().unwrap();
        *counts.entry(goal.goal.to_string()).or_default() += 1;
    }
    assert_eq!(counts.len(), 4);
    let expected = n as f64 / 4.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 0.999 quantile of chi-square with 3 degrees of freedom
    assert!(chi2 < 16.27, "chi2 {chi2}");
    for c in counts.values() {
        assert!((*c as f64 / n as f64 - 0.25).abs() <= 0.02);
    }
}

#[test]
fn oracle_policy_solves_every_dialog() {
    for name in ["fixture10", "toy15"] {
        let factory = common::factory::<f32>(name, 64);
        let mut env = factory.eval_env(3).unwrap();
        let mut oracle = OraclePolicy::new(factory.graph.clone());
        let report = evaluate(&mut oracle, &mut env, 500).unwrap();
        assert_eq!(report.success_combined, 1.0, "{name}");
        assert_eq!(report.mode_f1, Some(1.0));
        assert_eq!(report.mode_consistency, Some(1.0));
    }
}

struct AlwaysAsk;

impl Policy<f32> for AlwaysAsk {
    fn act(&mut self, _: &Observation<f32>) -> Result<Decision, EvalError> {
        Ok(Decision {
            action: Action::Ask.index(),
            mode: None,
        })
    }
}

#[test]
fn asking_the_start_node_forever_never_succeeds() {
    let factory = common::factory::<f32>("toy15", 64);
    let mut env = factory.eval_env(5).unwrap();
    for mode in [DialogMode::Guided, DialogMode::Free] {
        let out = run_episode(&mut AlwaysAsk, &mut env, mode).unwrap();
        assert!(!out.success);
        assert_eq!(out.perceived_length, 50);
        assert_eq!(perceived_length(env.transcript()), 50);
    }
}

#[test]
fn random_baseline_is_weak() {
    let factory = common::factory::<f32>("toy15", 256);
    let mut env = factory.eval_env(1).unwrap();
    let report = evaluate(&mut RandomPolicy::new(2), &mut env, 500).unwrap();
    assert!(report.success_combined <= 0.25, "{}", report.success_combined);
}

fn check_identity(r: &EvalReport) {
    assert!((r.success_combined - (r.success_guided + r.success_free) / 2.0).abs() < 1e-12);
}

#[test]
fn evaluation_is_deterministic_under_fixed_seed() {
    let factory = common::factory::<f32>("toy15", 256);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net: QNetwork<f32> = QNetwork::new(
        NetworkConfig {
            hidden1: 16,
            hidden2: 16,
            action_dim: 8,
            head_hidden: 8,
            ..NetworkConfig::default()
        },
        &mut rng,
    );
    let run = || {
        let mut env = factory.eval_env(42).unwrap();
        evaluate(&mut GreedyPolicy { net: &net }, &mut env, 500).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.dialogs, 500);
    check_identity(&a);
    let mut env = factory.eval_env(42).unwrap();
    check_identity(&evaluate(&mut RandomPolicy::new(1), &mut env, 100).unwrap());
}
