use proptest::prelude::*;

use mgrs_core::arith::{format_rational, Rational};
use mgrs_core::chains::{perplexity, ReasoningStep, TokenLogProbs};
use mgrs_core::graph::{merge_steps, step_similarity};
use mgrs_core::normalize::normalize_answer;
use mgrs_core::verify::check_arithmetic;
use mgrs_core::{ChainId, Direction, ReasoningChain};

const SENTENCES: [&str; 8] = [
    "Add 3 and 4 to get 7",
    "add 3 and 4 to get 7.",
    "Multiply the total by 2 to get 14",
    "Multiply the result by 2 giving 14",
    "Subtract 5 from 14 to get 9",
    "There are 6 apples in each box",
    "Each box has 6 apples",
    "So the answer follows",
];

fn chains_strategy() -> impl Strategy<Value = Vec<ReasoningChain>> {
    prop::collection::vec((prop::collection::vec(0..SENTENCES.len(), 1..6), 0..3usize), 1..5).prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(c, (steps, answer))| {
                let id = ChainId::new(c as u32, 0);
                ReasoningChain {
                    chain_id: id,
                    branch_id: c as u32,
                    direction: Direction::Forward,
                    steps: steps
                        .into_iter()
                        .enumerate()
                        .map(|(index, s)| ReasoningStep {
                            index,
                            text: SENTENCES[s].into(),
                            chain_id: id,
                        })
                        .collect(),
                    answer_text: ["7", "14", "9"][answer].into(),
                    confidence: None,
                    answer_logprobs: None,
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn similarity_is_symmetric_and_bounded(a in "[a-z0-9 .,]{1,40}", b in "[a-z0-9 .,]{1,40}") {
        let s = step_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, step_similarity(&b, &a));
        prop_assert_eq!(step_similarity(&a, &a), 1.0);
    }

    #[test]
    fn perplexity_at_least_one(values in prop::collection::vec(-20.0f64..=0.0, 1..64)) {
        let p = perplexity(&TokenLogProbs::from_values(&values)).unwrap();
        prop_assert!(p >= 1.0);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(p >= (-max).exp() * (1.0 - 1e-12) && p <= (-min).exp() * (1.0 + 1e-12));
    }

    #[test]
    fn merged_graph_is_a_dag_with_chain_paths(chains in chains_strategy(), threshold in 0.2f64..=1.0) {
        let g = merge_steps(&chains, threshold);
        prop_assert!(g.topological_order().is_ok());
        for c in &chains {
            let path = &g.chain_index[&c.chain_id];
            prop_assert_eq!(path.len(), c.steps.len() + 1);
            for w in path.windows(2) {
                prop_assert!(g.parents(w[1]).contains(&w[0]));
            }
        }
        prop_assert_eq!(g.answer_nodes().count(), chains.iter().map(|c| c.normalized_answer()).collect::<std::collections::BTreeSet<_>>().len());
    }

    #[test]
    fn correct_arithmetic_is_never_flagged(a in 1i64..500, b in 1i64..500, op in 0usize..4) {
        let (sym, value) = match op {
            0 => ("+", Rational::from_integer((a + b) as i128)),
            1 => ("-", Rational::from_integer((a - b) as i128)),
            2 => ("×", Rational::from_integer((a * b) as i128)),
            _ => ("/", Rational::new(a as i128, b as i128)),
        };
        let text = format!("Then {a} {sym} {b} = {} units.", format_rational(&value));
        prop_assert!(check_arithmetic(&text).is_empty(), "{}", text);
        let wrong = format!("Then {a} {sym} {b} = {} units.", format_rational(&(value + Rational::from_integer(1))));
        prop_assert_eq!(check_arithmetic(&wrong).len(), 1, "{}", wrong);
    }

    #[test]
    fn normalization_is_idempotent(s in "[ A-Za-z0-9.,$*]{0,20}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once);
    }
}

/// Node count is not monotone in the threshold under greedy first-fit
/// merging: a low threshold lets `s` join `A`, after which neither `u` nor
/// `v` is close enough to `A`; a higher threshold keeps `s` separate and both
/// join it.
#[test]
fn first_fit_node_count_is_not_monotone_in_threshold() {
    let chain = |c: u32, text: &str| ReasoningChain {
        chain_id: ChainId::new(c, 0),
        branch_id: c,
        direction: Direction::Forward,
        steps: vec![ReasoningStep {
            index: 0,
            text: text.into(),
            chain_id: ChainId::new(c, 0),
        }],
        answer_text: "1".into(),
        confidence: None,
        answer_logprobs: None,
    };
    let a = "a b c d e f";
    let s = "a b c d e f g h i j";
    let u = "a b c g h i j";
    let v = "d e f g h i j";
    assert!((step_similarity(s, a) - 0.6).abs() < 1e-12);
    assert!((step_similarity(u, s) - 0.7).abs() < 1e-12);
    assert!((step_similarity(u, a) - 0.3).abs() < 1e-12);
    let chains = vec![chain(0, a), chain(1, s), chain(2, u), chain(3, v)];
    assert_eq!(merge_steps(&chains, 0.55).step_nodes().count(), 3);
    assert_eq!(merge_steps(&chains, 0.65).step_nodes().count(), 2);
}

/// Cycle avoidance alone also breaks it: at 0.5, `e` joins `t`'s node,
/// which orders that node before chain 1's second step, so `m` can no longer
/// rejoin its twin.
#[test]
fn cycle_avoidance_can_cost_a_merge() {
    let mk = |c: u32, steps: &[&str]| {
        let id = ChainId::new(c, 0);
        ReasoningChain {
            chain_id: id,
            branch_id: c,
            direction: Direction::Forward,
            steps: steps
                .iter()
                .enumerate()
                .map(|(i, t)| ReasoningStep {
                    index: i,
                    text: t.to_string(),
                    chain_id: id,
                })
                .collect(),
            answer_text: "7".into(),
            confidence: None,
            answer_logprobs: None,
        }
    };
    let m = "Multiply the result by 2 giving 14";
    let t = "There are 6 apples in each box";
    let e = "Each box has 6 apples";
    assert_eq!(step_similarity(e, t), 0.5);
    let chains = vec![mk(0, &[m, t]), mk(1, &[e, m]), mk(2, &[e, t])];
    let low = merge_steps(&chains, 0.5);
    let high = merge_steps(&chains, 0.6);
    assert!(low.topological_order().is_ok() && high.topological_order().is_ok());
    assert!(low.step_nodes().count() > high.step_nodes().count());
}

/// What does hold for every threshold: each merged step is at least
/// `threshold` similar to its node's text, and node count is bounded by the
/// step count.
#[test]
fn merged_steps_respect_threshold() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    runner
        .run(&(chains_strategy(), 0.2f64..=1.0), |(chains, threshold)| {
            let g = merge_steps(&chains, threshold);
            let total_steps: usize = chains.iter().map(|c| c.steps.len()).sum();
            prop_assert!(g.step_nodes().count() <= total_steps);
            for n in g.step_nodes() {
                for o in &n.origins {
                    let c = chains.iter().find(|c| c.chain_id == o.chain_id).unwrap();
                    prop_assert!(step_similarity(&c.steps[o.step].text, &n.text) >= threshold);
                }
            }
            Ok(())
        })
        .unwrap();
}
