//! Reasoning-relation graph: merged steps as nodes, dependencies as edges.
//!
//! Edges are stored dependency → dependent, so propagation runs along edge
//! direction. The serialized graph carries `convention: "dependency_to_dependent"`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use log::{debug, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, CompletionRequest};
use crate::chains::{ChainId, ReasoningChain};
use crate::error::{Error, Result};
use crate::normalize::similarity_tokens;
use crate::template::Template;

pub const EDGE_CONVENTION: &str = "dependency_to_dependent";

/// Weights are clamped to `[WEIGHT_EPS, 1 - WEIGHT_EPS]`.
pub const WEIGHT_EPS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub chain_id: ChainId,
    /// Step index within the chain; the answer sits at `steps.len()`.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub node_id: NodeId,
    pub text: String,
    pub origins: BTreeSet<Origin>,
    pub weight: f64,
    pub is_answer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_value: Option<String>,
}

impl GraphNode {
    pub fn origin_chains(&self) -> BTreeSet<ChainId> {
        self.origins.iter().map(|o| o.chain_id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningGraph {
    pub convention: String,
    pub nodes: Vec<GraphNode>,
    pub edges: BTreeSet<Edge>,
    pub chain_index: BTreeMap<ChainId, Vec<NodeId>>,
    /// Perplexity of each contributing chain, where known.
    #[serde(default)]
    pub chain_confidence: BTreeMap<ChainId, f64>,
}

impl Default for ReasoningGraph {
    fn default() -> Self {
        ReasoningGraph {
            convention: EDGE_CONVENTION.to_string(),
            nodes: Vec::new(),
            edges: BTreeSet::new(),
            chain_index: BTreeMap::new(),
            chain_confidence: BTreeMap::new(),
        }
    }
}

impl ReasoningGraph {
    pub fn new() -> Self {
        Self::default()
    }

    fn position(&self, id: NodeId) -> Option<usize> {
        // Fast path for graphs built by merge_steps, where ids are positions.
        match self.nodes.get(id.0) {
            Some(n) if n.node_id == id => Some(id.0),
            _ => self.nodes.iter().position(|n| n.node_id == id),
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&GraphNode> {
        self.position(id).map(|i| &self.nodes[i])
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut GraphNode> {
        self.position(id).map(move |i| &mut self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.position(id).is_some()
    }

    fn next_id(&self) -> NodeId {
        NodeId(self.nodes.iter().map(|n| n.node_id.0 + 1).max().unwrap_or(0))
    }

    pub fn add_node(&mut self, text: impl Into<String>, answer_value: Option<String>) -> NodeId {
        let node_id = self.next_id();
        self.nodes.push(GraphNode {
            node_id,
            text: text.into(),
            origins: BTreeSet::new(),
            weight: 0.5,
            is_answer: answer_value.is_some(),
            answer_value,
        });
        node_id
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges
            .range(
                Edge {
                    from: id,
                    to: NodeId(0),
                }..=Edge {
                    from: id,
                    to: NodeId(usize::MAX),
                },
            )
            .map(|e| e.to)
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.edges.iter().filter(|e| e.to == id).map(|e| e.from).collect()
    }

    pub fn parent_map(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut map: BTreeMap<NodeId, Vec<NodeId>> = self.nodes.iter().map(|n| (n.node_id, Vec::new())).collect();
        for e in &self.edges {
            map.entry(e.to).or_default().push(e.from);
        }
        map
    }

    /// Reflexive reachability along edge direction.
    pub fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        if from == to {
            return true;
        }
        let mut seen = BTreeSet::from([from]);
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            for c in self.children(v) {
                if c == to {
                    return true;
                }
                if seen.insert(c) {
                    stack.push(c);
                }
            }
        }
        false
    }

    /// Adds the edge unless it is a duplicate, touches an unknown node, or
    /// would close a cycle.
    pub fn try_add_edge(&mut self, from: NodeId, to: NodeId) -> bool {
        if !self.contains(from) || !self.contains(to) {
            return false;
        }
        let edge = Edge { from, to };
        if self.edges.contains(&edge) {
            return true;
        }
        if self.reaches(to, from) {
            debug!("skipping edge {from} -> {to}: would close a cycle");
            return false;
        }
        self.edges.insert(edge);
        true
    }

    /// Kahn's algorithm, smallest ready id first.
    pub fn topological_order(&self) -> Result<Vec<NodeId>> {
        let mut indegree: BTreeMap<NodeId, usize> = self.nodes.iter().map(|n| (n.node_id, 0)).collect();
        for e in &self.edges {
            if !indegree.contains_key(&e.from) {
                return Err(Error::NotADag);
            }
            *indegree.get_mut(&e.to).ok_or(Error::NotADag)? += 1;
        }
        let mut ready: BTreeSet<NodeId> = indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for c in self.children(v) {
                let d = indegree.get_mut(&c).expect("edge target is a node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::NotADag);
        }
        Ok(order)
    }

    pub fn answer_nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter(|n| n.is_answer)
    }

    pub fn step_nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter(|n| !n.is_answer)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Graphviz rendering; labels carry the node text and weight to 3 decimals.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph reasoning {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let shape = if n.is_answer { "box" } else { "ellipse" };
            out.push_str(&format!(
                "  {} [shape={shape}, label=\"{}\\nW={:.3}\"];\n",
                n.node_id,
                escape_dot(&n.text),
                n.weight
            ));
        }
        for e in &self.edges {
            out.push_str(&format!("  {} -> {};\n", e.from, e.to));
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

/// Token-set Jaccard similarity over lowercased words and canonical numerals.
pub fn step_similarity(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<String> = similarity_tokens(a).into_iter().collect();
    let tb: BTreeSet<String> = similarity_tokens(b).into_iter().collect();
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.intersection(&tb).count();
    let union = ta.union(&tb).count();
    inter as f64 / union as f64
}

/// Greedy first-fit merge in chain order.
///
/// A step joins the first existing step node whose text is at least
/// `threshold` similar, provided the join keeps the graph acyclic; otherwise
/// it becomes a new node. Answers merge on normalized equality. Weights are
/// left at a 0.5 placeholder for [`estimate_weights`].
pub fn merge_steps(chains: &[ReasoningChain], threshold: f64) -> ReasoningGraph {
    let mut graph = ReasoningGraph::new();
    let mut token_cache: Vec<BTreeSet<String>> = Vec::new();

    for chain in chains {
        let mut prev: Option<NodeId> = None;
        let mut path = Vec::with_capacity(chain.steps.len() + 1);
        for step in &chain.steps {
            let tokens: BTreeSet<String> = similarity_tokens(&step.text).into_iter().collect();
            let candidate = graph
                .nodes
                .iter()
                .zip(&token_cache)
                .filter(|(n, _)| !n.is_answer)
                .find(|(n, cached)| {
                    jaccard(&tokens, cached) >= threshold && prev.is_none_or(|p| !graph.reaches(n.node_id, p))
                })
                .map(|(n, _)| n.node_id);
            let id = match candidate {
                Some(id) => id,
                None => {
                    let id = graph.add_node(step.text.clone(), None);
                    token_cache.push(tokens);
                    id
                }
            };
            graph.node_mut(id).expect("node exists").origins.insert(Origin {
                chain_id: chain.chain_id,
                step: step.index,
            });
            if let Some(p) = prev {
                let added = graph.try_add_edge(p, id);
                debug_assert!(added, "merge candidates never close a cycle");
            }
            path.push(id);
            prev = Some(id);
        }

        let value = chain.normalized_answer();
        let answer = graph
            .nodes
            .iter()
            .find(|n| n.answer_value.as_deref() == Some(value.as_str()))
            .map(|n| n.node_id);
        let answer = match answer {
            Some(id) => id,
            None => {
                let id = graph.add_node(chain.answer_text.clone(), Some(value));
                token_cache.push(BTreeSet::new());
                id
            }
        };
        graph.node_mut(answer).expect("node exists").origins.insert(Origin {
            chain_id: chain.chain_id,
            step: chain.steps.len(),
        });
        if let Some(p) = prev {
            graph.try_add_edge(p, answer);
        }
        path.push(answer);
        graph.chain_index.insert(chain.chain_id, path);
        if let Some(c) = chain.confidence {
            graph.chain_confidence.insert(chain.chain_id, c);
        }
    }
    graph
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Prompt listing every step node as `N<id>: text`.
pub fn dependency_prompt(graph: &ReasoningGraph, question: &str, template: &Template) -> String {
    let nodes = graph
        .step_nodes()
        .map(|n| format!("{}: {}", n.node_id, n.text))
        .collect::<Vec<_>>()
        .join("\n");
    template.render(&[("question", question), ("nodes", &nodes)])
}

/// Lines `Nx -> Ny`. `NONE` parses to no edges; anything else unrecognised is `None`.
pub fn parse_dependency_edges(text: &str) -> Option<Vec<(NodeId, NodeId)>> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)\bN(\d+)\s*(?:->|→|=>)\s*N(\d+)\b").unwrap());
    let edges: Vec<(NodeId, NodeId)> = re
        .captures_iter(text)
        .filter_map(|c| Some((NodeId(c[1].parse().ok()?), NodeId(c[2].parse().ok()?))))
        .collect();
    if !edges.is_empty() {
        return Some(edges);
    }
    text.trim().to_ascii_uppercase().starts_with("NONE").then(Vec::new)
}

/// Add proposed cross-chain dependencies; returns how many were added.
/// Answer nodes cannot be dependencies. Cycles and unknown ids are skipped.
pub fn add_cross_dependencies(graph: &mut ReasoningGraph, edges: &[(NodeId, NodeId)]) -> usize {
    let mut added = 0;
    for &(from, to) in edges {
        let valid = from != to
            && graph.node(from).is_some_and(|n| !n.is_answer)
            && graph.contains(to)
            && !graph.edges.contains(&Edge { from, to });
        if !valid {
            debug!("ignoring proposed dependency {from} -> {to}");
            continue;
        }
        if graph.try_add_edge(from, to) {
            added += 1;
        } else {
            warn!("proposed dependency {from} -> {to} would close a cycle; skipped");
        }
    }
    added
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Frequency,
    Judge,
}

impl std::str::FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "frequency" => Ok(WeightMode::Frequency),
            "judge" => Ok(WeightMode::Judge),
            other => Err(format!("unknown weight mode `{other}` (expected frequency or judge)")),
        }
    }
}

pub fn clamp_weight(w: f64) -> f64 {
    w.clamp(WEIGHT_EPS, 1.0 - WEIGHT_EPS)
}

/// Share of the graph's chains that pass through `node`.
pub fn frequency_weight(graph: &ReasoningGraph, node: &GraphNode) -> f64 {
    let total = graph.chain_index.len().max(1);
    clamp_weight(node.origin_chains().len() as f64 / total as f64)
}

/// First number in the reply, read as a probability. Percentages are scaled.
pub fn parse_probability(text: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(\d+(?:\.\d+)?|\.\d+)\s*(%)?").unwrap());
    let caps = re.captures(text)?;
    let mut v: f64 = caps[1].parse().ok()?;
    if caps.get(2).is_some() {
        v /= 100.0;
    }
    (0.0..=1.0).contains(&v).then_some(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JudgeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for JudgeParams {
    fn default() -> Self {
        JudgeParams {
            temperature: 0.0,
            max_tokens: 16,
            seed: 0,
            parallel: false,
        }
    }
}

/// Per-node success-rate weights, all strictly inside (0, 1).
///
/// Judge mode asks the backend for each node; an unparseable reply falls back
/// to the frequency weight.
pub fn estimate_weights(
    graph: &ReasoningGraph,
    mode: WeightMode,
    judge: Option<(&dyn Backend, &Template, &str, &JudgeParams)>,
) -> Result<ReasoningGraph> {
    let mut out = graph.clone();
    let frequency: Vec<f64> = graph.nodes.iter().map(|n| frequency_weight(graph, n)).collect();
    match (mode, judge) {
        (WeightMode::Frequency, _) => {
            for (n, w) in out.nodes.iter_mut().zip(frequency) {
                n.weight = w;
            }
        }
        (WeightMode::Judge, None) => {
            return Err(Error::Config("judge weight mode needs a backend".into()));
        }
        (WeightMode::Judge, Some((backend, template, question, params))) => {
            let request_for = |n: &GraphNode| {
                let step = if n.is_answer {
                    format!("Final answer: {}", n.text)
                } else {
                    n.text.clone()
                };
                CompletionRequest::new(template.render(&[("question", question), ("step", &step)]))
                    .temperature(params.temperature)
                    .max_tokens(params.max_tokens)
                    .seed(Some(params.seed))
            };
            let replies: Vec<_> = if params.parallel {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = graph
                        .nodes
                        .iter()
                        .map(|n| {
                            let req = request_for(n);
                            scope.spawn(move || backend.complete(&req))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("judge thread panicked"))
                        .collect()
                })
            } else {
                graph.nodes.iter().map(|n| backend.complete(&request_for(n))).collect()
            };
            for ((n, reply), fallback) in out.nodes.iter_mut().zip(replies).zip(frequency) {
                n.weight = match parse_probability(&reply?.text) {
                    Some(p) => clamp_weight(p),
                    None => {
                        debug!("judge reply for {} unparseable; using frequency weight", n.node_id);
                        fallback
                    }
                };
            }
        }
    }
    Ok(out)
}

/// BFS distance from sources, used for layered display.
pub fn layers(graph: &ReasoningGraph) -> BTreeMap<NodeId, usize> {
    let parents = graph.parent_map();
    let mut depth: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut queue: VecDeque<NodeId> = parents
        .iter()
        .filter(|(_, p)| p.is_empty())
        .map(|(id, _)| *id)
        .collect();
    for id in &queue {
        depth.insert(*id, 0);
    }
    while let Some(v) = queue.pop_front() {
        let d = depth[&v];
        for c in graph.children(v) {
            if depth.get(&c).is_none_or(|&old| old < d + 1) {
                depth.insert(c, d + 1);
                queue.push_back(c);
            }
        }
    }
    depth
}
