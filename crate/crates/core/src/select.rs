//! Cumulative success-rate propagation and answer selection.
//!
//! A source node succeeds with its own weight. A node with parents succeeds
//! with its weight times the probability that at least one parent group
//! succeeds (Noisy-OR). Parents that share the same set of origin chains form
//! one group, scored as the product of the members' weights times the upstream
//! success of the group's earliest member.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chains::ChainId;
use crate::error::{Error, Result};
use crate::graph::{NodeId, ReasoningGraph};

/// Product of per-step success rates along one chain.
pub fn chain_success(weights: &[f64]) -> f64 {
    weights.iter().fold(1.0, |acc, w| acc * w)
}

/// Per-node propagation results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Propagation {
    /// P(node): the node's cumulative success rate.
    pub cumulative: BTreeMap<NodeId, f64>,
    /// Success probability of the node's inputs (1 for sources), so that
    /// `cumulative = weight * upstream`.
    pub upstream: BTreeMap<NodeId, f64>,
}

/// Group a node's parents by identical origin-chain sets, members in
/// topological order.
pub fn parent_groups(
    graph: &ReasoningGraph,
    parents: &[NodeId],
    topo_rank: &BTreeMap<NodeId, usize>,
) -> Vec<Vec<NodeId>> {
    let mut groups: BTreeMap<BTreeSet<ChainId>, Vec<NodeId>> = BTreeMap::new();
    let mut singletons = Vec::new();
    for &p in parents {
        let chains = graph.node(p).map(|n| n.origin_chains()).unwrap_or_default();
        if chains.is_empty() {
            singletons.push(vec![p]);
        } else {
            groups.entry(chains).or_default().push(p);
        }
    }
    let mut out: Vec<Vec<NodeId>> = groups.into_values().chain(singletons).collect();
    for g in &mut out {
        g.sort_by_key(|id| topo_rank[id]);
    }
    out.sort_by_key(|g| topo_rank[&g[0]]);
    out
}

pub fn propagate_detailed(graph: &ReasoningGraph) -> Result<Propagation> {
    let order = graph.topological_order()?;
    let rank: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let parents = graph.parent_map();
    let weight: BTreeMap<NodeId, f64> = graph.nodes.iter().map(|n| (n.node_id, n.weight)).collect();

    let mut out = Propagation::default();
    for v in order {
        let ps = &parents[&v];
        let upstream = if ps.is_empty() {
            1.0
        } else {
            let groups = parent_groups(graph, ps, &rank);
            let group_rates: Vec<f64> = groups
                .iter()
                .map(|g| match g.as_slice() {
                    [single] => out.cumulative[single],
                    [earliest, ..] => {
                        chain_success(&g.iter().map(|m| weight[m]).collect::<Vec<_>>()) * out.upstream[earliest]
                    }
                    [] => unreachable!("groups are non-empty"),
                })
                .collect();
            match group_rates.as_slice() {
                [only] => *only,
                rates => 1.0 - rates.iter().fold(1.0, |acc, p| acc * (1.0 - p)),
            }
        };
        out.upstream.insert(v, upstream);
        out.cumulative.insert(v, weight[&v] * upstream);
    }
    Ok(out)
}

/// Cumulative success rate of every node.
pub fn propagate(graph: &ReasoningGraph) -> Result<BTreeMap<NodeId, f64>> {
    Ok(propagate_detailed(graph)?.cumulative)
}

/// Maximum-product path from any source to each node, via longest-path DP over
/// log-weights. Ties keep the smaller parent id.
pub fn best_paths(graph: &ReasoningGraph) -> Result<BTreeMap<NodeId, Vec<NodeId>>> {
    let order = graph.topological_order()?;
    let parents = graph.parent_map();
    let mut score: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut back: BTreeMap<NodeId, Option<NodeId>> = BTreeMap::new();
    for v in &order {
        let w = graph.node(*v).expect("ordered node exists").weight.ln();
        let mut best: Option<(f64, NodeId)> = None;
        for p in &parents[v] {
            let s = score[p];
            best = match best {
                Some((bs, bp)) if bs > s || (bs == s && bp < *p) => Some((bs, bp)),
                _ => Some((s, *p)),
            };
        }
        score.insert(*v, w + best.map_or(0.0, |(s, _)| s));
        back.insert(*v, best.map(|(_, p)| p));
    }
    let mut paths = BTreeMap::new();
    for v in order {
        let mut path = vec![v];
        let mut cur = v;
        while let Some(Some(p)) = back.get(&cur) {
            path.push(*p);
            cur = *p;
        }
        path.reverse();
        paths.insert(v, path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub answer_value: String,
    pub node_id: NodeId,
    pub cumulative: f64,
    /// Distinct chains reaching this answer.
    pub votes: usize,
    /// Mean perplexity of those chains, where known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_perplexity: Option<f64>,
    pub best_path: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: CandidateAnswer,
    pub ranking: Vec<CandidateAnswer>,
    pub per_node_cumulative: BTreeMap<NodeId, f64>,
}

/// cumulative desc, votes desc, perplexity asc (unknown last), answer asc.
pub fn rank_order(a: &CandidateAnswer, b: &CandidateAnswer) -> Ordering {
    b.cumulative
        .total_cmp(&a.cumulative)
        .then(b.votes.cmp(&a.votes))
        .then_with(|| match (a.mean_perplexity, b.mean_perplexity) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        })
        .then_with(|| a.answer_value.cmp(&b.answer_value))
        .then(a.node_id.cmp(&b.node_id))
}

pub fn select_answer(graph: &ReasoningGraph) -> Result<SelectionResult> {
    if graph.answer_nodes().next().is_none() {
        return Err(Error::NoAnswerNodes);
    }
    let cumulative = propagate(graph)?;
    let paths = best_paths(graph)?;
    let mut ranking: Vec<CandidateAnswer> = graph
        .answer_nodes()
        .map(|n| {
            let chains = n.origin_chains();
            let known: Vec<f64> = chains
                .iter()
                .filter_map(|c| graph.chain_confidence.get(c).copied())
                .collect();
            CandidateAnswer {
                answer_value: n.answer_value.clone().unwrap_or_else(|| n.text.clone()),
                node_id: n.node_id,
                cumulative: cumulative[&n.node_id],
                votes: chains.len().max(1),
                mean_perplexity: (!known.is_empty()).then(|| known.iter().sum::<f64>() / known.len() as f64),
                best_path: paths[&n.node_id].clone(),
            }
        })
        .collect();
    ranking.sort_by(rank_order);
    Ok(SelectionResult {
        chosen: ranking[0].clone(),
        ranking,
        per_node_cumulative: cumulative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Origin;

    fn graph(weights: &[f64], edges: &[(usize, usize)], chains: &[&[u32]]) -> ReasoningGraph {
        let mut g = ReasoningGraph::new();
        for (i, w) in weights.iter().enumerate() {
            let id = g.add_node(format!("n{i}"), None);
            let node = g.node_mut(id).unwrap();
            node.weight = *w;
            for (step, c) in chains[i].iter().enumerate() {
                node.origins.insert(Origin {
                    chain_id: ChainId::new(*c, 0),
                    step,
                });
            }
        }
        for &(a, b) in edges {
            assert!(g.try_add_edge(NodeId(a), NodeId(b)));
        }
        g
    }

    #[test]
    fn chain_products() {
        assert_eq!(chain_success(&[0.5]), 0.5);
        assert!((chain_success(&[0.9, 0.9, 0.9]) - 0.729).abs() < 1e-15);
        let w = 0.37;
        let near = chain_success(&[w, 1.0 - 1e-9]);
        assert!(near < w && (w - near) < 1e-9);
        assert!(chain_success(&[w, 1.0 - 1e-6]) < near);
    }

    #[test]
    fn propagation_rules() {
        let p = propagate(&graph(&[0.8], &[], &[&[0]])).unwrap();
        assert_eq!(p[&NodeId(0)], 0.8);

        let p = propagate(&graph(&[0.5, 0.9], &[(0, 1)], &[&[0], &[0]])).unwrap();
        assert!((p[&NodeId(1)] - 0.45).abs() < 1e-15);

        let p = propagate(&graph(&[0.5, 0.5, 0.9], &[(0, 2), (1, 2)], &[&[0], &[1], &[0, 1]])).unwrap();
        assert!((p[&NodeId(2)] - 0.675).abs() < 1e-15);
    }

    #[test]
    fn same_origin_group_uses_product() {
        // u -> a -> b, with a and b (same chain) both feeding c.
        let eps = crate::graph::WEIGHT_EPS;
        let g = graph(
            &[0.6, 0.8, 0.9, 1.0 - eps],
            &[(0, 1), (1, 2), (1, 3), (2, 3)],
            &[&[7], &[0], &[0], &[0, 1]],
        );
        let p = propagate(&g).unwrap();
        let upstream = 0.6;
        assert!((p[&NodeId(3)] - (1.0 - eps) * 0.72 * upstream).abs() < 1e-15);
    }

    #[test]
    fn not_a_dag_is_reported() {
        let mut g = graph(&[0.5, 0.5], &[(0, 1)], &[&[0], &[0]]);
        g.edges.insert(crate::graph::Edge {
            from: NodeId(1),
            to: NodeId(0),
        });
        assert!(matches!(propagate(&g), Err(Error::NotADag)));
    }

    fn with_answers(mut g: ReasoningGraph, answers: &[(usize, &str)]) -> ReasoningGraph {
        for (i, a) in answers {
            let n = g.node_mut(NodeId(*i)).unwrap();
            n.is_answer = true;
            n.answer_value = Some(a.to_string());
        }
        g
    }

    #[test]
    fn select_single_answer() {
        let g = with_answers(graph(&[0.02], &[], &[&[0]]), &[(0, "7")]);
        let s = select_answer(&g).unwrap();
        assert_eq!(s.chosen.answer_value, "7");
        assert_eq!(s.chosen.best_path, vec![NodeId(0)]);
    }

    #[test]
    fn select_highest_cumulative() {
        // answer 24 via Noisy-OR (0.675), answer 22 via a single parent (0.45).
        let g = graph(
            &[0.5, 0.5, 0.9, 0.5, 0.9],
            &[(0, 2), (1, 2), (3, 4)],
            &[&[0], &[1], &[0, 1], &[2], &[2]],
        );
        let g = with_answers(g, &[(2, "24"), (4, "22")]);
        let s = select_answer(&g).unwrap();
        assert_eq!(s.chosen.answer_value, "24");
        assert!((s.chosen.cumulative - 0.675).abs() < 1e-15);
        assert_eq!(s.ranking.len(), 2);
    }

    #[test]
    fn votes_break_exact_ties() {
        let g = graph(&[0.5, 0.5], &[], &[&[0, 1, 2], &[3]]);
        let g = with_answers(g, &[(0, "b"), (1, "a")]);
        let s = select_answer(&g).unwrap();
        assert_eq!(s.chosen.answer_value, "b");
        assert_eq!(s.chosen.votes, 3);
    }

    #[test]
    fn no_answers() {
        assert!(matches!(
            select_answer(&graph(&[0.5], &[], &[&[0]])),
            Err(Error::NoAnswerNodes)
        ));
    }

    #[test]
    fn best_path_prefers_heavier_parent() {
        let g = graph(&[0.9, 0.3, 0.8], &[(0, 2), (1, 2)], &[&[0], &[1], &[0, 1]]);
        let paths = best_paths(&g).unwrap();
        assert_eq!(paths[&NodeId(2)], vec![NodeId(0), NodeId(2)]);
    }
}
