//! Per-instance heterogeneous knowledge graph.
//!
//! Node layout is fixed: the query node is id 0, agents follow in pool
//! order, then entities in mention order, then relation nodes in triple
//! order. Text relations are never stored as entity-entity edges; each
//! triple `(h, r, t)` becomes a relation node with `h -inc_src-> r` and
//! `r -inc_tgt-> t`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{AgentPool, DatasetRecord};
use crate::extract::{
    self, dataset_type_cues, question_type_cues, Cue, EntityMention, MentionKind, RelationTriple,
};
use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Query,
    Agent,
    Entity,
    Relation,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [
        NodeKind::Query,
        NodeKind::Agent,
        NodeKind::Entity,
        NodeKind::Relation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Query => "query",
            NodeKind::Agent => "agent",
            NodeKind::Entity => "entity",
            NodeKind::Relation => "relation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    QueryEntity,
    IncSrc,
    IncTgt,
    AgentEntity,
    QueryAgent,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 5] = [
        EdgeKind::QueryEntity,
        EdgeKind::IncSrc,
        EdgeKind::IncTgt,
        EdgeKind::AgentEntity,
        EdgeKind::QueryAgent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::QueryEntity => "query_entity",
            EdgeKind::IncSrc => "inc_src",
            EdgeKind::IncTgt => "inc_tgt",
            EdgeKind::AgentEntity => "agent_entity",
            EdgeKind::QueryAgent => "query_agent",
        }
    }

    /// (source kind, destination kind) every edge of this kind must have.
    pub fn endpoints(self) -> (NodeKind, NodeKind) {
        match self {
            EdgeKind::QueryEntity => (NodeKind::Query, NodeKind::Entity),
            EdgeKind::IncSrc => (NodeKind::Entity, NodeKind::Relation),
            EdgeKind::IncTgt => (NodeKind::Relation, NodeKind::Entity),
            EdgeKind::AgentEntity => (NodeKind::Agent, NodeKind::Entity),
            EdgeKind::QueryAgent => (NodeKind::Query, NodeKind::Agent),
        }
    }
}

/// Side information used for featurisation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFeatures {
    #[serde(default, skip_serializing_if = "is_zero")]
    pub frequency: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mention_kind: Option<MentionKind>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub cues: BTreeSet<Cue>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub text: String,
    #[serde(default)]
    pub features: NodeFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub kind: EdgeKind,
    pub dst: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub record_id: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub cached_triples: Vec<RelationTriple>,
}

impl KnowledgeGraph {
    pub fn query(&self) -> NodeId {
        0
    }

    /// Agent node ids in pool order.
    pub fn agents(&self) -> Vec<NodeId> {
        self.nodes_of(NodeKind::Agent)
    }

    pub fn nodes_of(&self, kind: NodeKind) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == kind)
            .map(|n| n.id)
            .collect()
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    fn entity_by_surface(&self, surface: &str) -> Option<NodeId> {
        let key = surface.to_lowercase();
        self.nodes
            .iter()
            .find(|n| n.kind == NodeKind::Entity && n.text.to_lowercase() == key)
            .map(|n| n.id)
    }

    fn push_node(&mut self, kind: NodeKind, text: String, features: NodeFeatures) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            kind,
            text,
            features,
        });
        id
    }

    /// Checks every structural invariant; `agent_count` is the pool size.
    pub fn validate(&self, agent_count: usize) -> Result<()> {
        let bad = |m: String| Err(Error::data(format!("graph {}: {m}", self.record_id)));
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("node id {} at position {i}", n.id));
            }
        }
        if self.nodes.first().map(|n| n.kind) != Some(NodeKind::Query)
            || self.nodes_of(NodeKind::Query).len() != 1
        {
            return bad("expected exactly one query node at id 0".into());
        }
        if self.agents().len() != agent_count {
            return bad(format!(
                "{} agent nodes, expected {agent_count}",
                self.agents().len()
            ));
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.src == e.dst {
                return bad(format!("self-loop on node {}", e.src));
            }
            let (Some(s), Some(d)) = (self.nodes.get(e.src), self.nodes.get(e.dst)) else {
                return bad(format!("edge {e:?} references a missing node"));
            };
            if (s.kind, d.kind) != e.kind.endpoints() {
                return bad(format!("edge {e:?} joins {:?} -> {:?}", s.kind, d.kind));
            }
            if !seen.insert(*e) {
                return bad(format!("duplicate edge {e:?}"));
            }
        }
        if self.count_edges(EdgeKind::QueryAgent) != agent_count {
            return bad("query-agent edges do not cover the pool".into());
        }
        for r in self.nodes_of(NodeKind::Relation) {
            let inc = self
                .edges
                .iter()
                .filter(|e| e.kind == EdgeKind::IncSrc && e.dst == r)
                .count();
            let out = self
                .edges
                .iter()
                .filter(|e| e.kind == EdgeKind::IncTgt && e.src == r)
                .count();
            if (inc, out) != (1, 1) {
                return bad(format!("relation node {r} has degrees ({inc}, {out})"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(format!("graph json: {e}")))
    }

    pub fn file_name(record_id: &str) -> String {
        format!("{record_id}.graph.json")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.record_id));
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(dir: &Path, record_id: &str) -> Result<Self> {
        let path = dir.join(Self::file_name(record_id));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}

/// Adds the relation node for `triple` plus its two incidence edges.
/// Rewiring the same triple twice returns the existing node.
pub fn rewire_triple(
    triple: &RelationTriple,
    graph: &mut KnowledgeGraph,
) -> Result<(NodeId, [Edge; 2])> {
    let missing = |s: &str| Error::data(format!("triple endpoint {s:?} is not an entity node"));
    let head = graph
        .entity_by_surface(&triple.head_surface)
        .ok_or_else(|| missing(&triple.head_surface))?;
    let tail = graph
        .entity_by_surface(&triple.tail_surface)
        .ok_or_else(|| missing(&triple.tail_surface))?;
    if head == tail {
        return Err(Error::data(format!(
            "triple {:?} links an entity to itself",
            triple.head_surface
        )));
    }
    let existing = graph.edges.iter().find_map(|e| {
        (e.kind == EdgeKind::IncSrc
            && e.src == head
            && graph.nodes[e.dst].text == triple.relation_label
            && graph.edges.contains(&Edge {
                src: e.dst,
                kind: EdgeKind::IncTgt,
                dst: tail,
            }))
        .then_some(e.dst)
    });
    let rel = match existing {
        Some(r) => r,
        None => {
            let r = graph.push_node(
                NodeKind::Relation,
                triple.relation_label.clone(),
                NodeFeatures::default(),
            );
            graph.edges.push(Edge {
                src: head,
                kind: EdgeKind::IncSrc,
                dst: r,
            });
            graph.edges.push(Edge {
                src: r,
                kind: EdgeKind::IncTgt,
                dst: tail,
            });
            r
        }
    };
    Ok((
        rel,
        [
            Edge {
                src: head,
                kind: EdgeKind::IncSrc,
                dst: rel,
            },
            Edge {
                src: rel,
                kind: EdgeKind::IncTgt,
                dst: tail,
            },
        ],
    ))
}

/// Cue set for a record: keyword cues merged with the dataset type.
pub fn record_cues(record: &DatasetRecord) -> BTreeSet<Cue> {
    let mut cues = question_type_cues(&record.question);
    if let Some(t) = &record.question_type {
        cues.extend(dataset_type_cues(t));
    }
    cues
}

/// Number of lexical agent-entity links made per agent when no judge map
/// is supplied.
pub const LEXICAL_LINKS_PER_AGENT: usize = 5;

fn content_words(text: &str) -> BTreeSet<String> {
    extract::tokenize(text)
        .iter()
        .map(|t| t.text.to_lowercase())
        .filter(|w| !extract::is_stopword(w))
        .collect()
}

/// Lexical stand-in for judge-produced agent-entity links: rank entities by
/// word overlap between the agent's description (plus design keywords) and
/// the sentence holding the entity's first occurrence.
fn lexical_links(
    context: &str,
    mentions: &[EntityMention],
    description: &str,
    keywords: &str,
) -> Vec<usize> {
    let agent_words = content_words(&format!("{description} {keywords}"));
    let sents = extract::sentences(context);
    let mut scored: Vec<(usize, usize)> = mentions
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let first = m.spans.first().map_or(0, |s| s.0);
            let byte = context
                .char_indices()
                .nth(first)
                .map_or(context.len(), |x| x.0);
            let sentence = sents
                .iter()
                .find(|(s, e)| byte >= *s && byte < *e)
                .map_or("", |(s, e)| &context[*s..*e]);
            let overlap = content_words(sentence).intersection(&agent_words).count();
            (overlap, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored
        .into_iter()
        .take(LEXICAL_LINKS_PER_AGENT.min(mentions.len()))
        .map(|(_, i)| i)
        .collect()
}

/// Builds the graph for one record.
///
/// `agent_entity_map` holds judge-selected entity surfaces per agent id.
/// Agents absent from the map fall back to lexical linking. Returns the
/// graph and any warnings (e.g. judge surfaces that are not entities).
pub fn build_graph(
    record: &DatasetRecord,
    mentions: &[EntityMention],
    triples: &[RelationTriple],
    pool: &AgentPool,
    agent_entity_map: &BTreeMap<String, BTreeSet<String>>,
) -> Result<(KnowledgeGraph, Vec<String>)> {
    let mut warnings = Vec::new();
    for agent in agent_entity_map.keys() {
        if pool.index_of(agent).is_none() {
            return Err(Error::data(format!(
                "agent-entity map names unknown agent {agent}"
            )));
        }
    }
    let mut g = KnowledgeGraph {
        record_id: record.id.clone(),
        nodes: Vec::new(),
        edges: Vec::new(),
        cached_triples: triples.to_vec(),
    };
    let q = g.push_node(
        NodeKind::Query,
        record.question.clone(),
        NodeFeatures {
            cues: record_cues(record),
            ..Default::default()
        },
    );
    let agent_nodes: Vec<NodeId> = pool
        .profiles()
        .iter()
        .map(|p| {
            g.push_node(
                NodeKind::Agent,
                p.description_text.clone(),
                NodeFeatures::default(),
            )
        })
        .collect();

    let mut entity_nodes = Vec::with_capacity(mentions.len());
    let mut by_surface: HashMap<String, NodeId> = HashMap::new();
    for m in mentions {
        let key = m.surface.to_lowercase();
        if let Some(&id) = by_surface.get(&key) {
            warnings.push(format!("duplicate mention {:?} merged", m.surface));
            entity_nodes.push(id);
            continue;
        }
        let id = g.push_node(
            NodeKind::Entity,
            m.surface.clone(),
            NodeFeatures {
                frequency: m.frequency,
                mention_kind: Some(m.kind),
                cues: BTreeSet::new(),
            },
        );
        by_surface.insert(key, id);
        entity_nodes.push(id);
    }

    for t in triples {
        rewire_triple(t, &mut g)?;
    }

    let mut referenced = BTreeSet::new();
    for &e in &entity_nodes {
        if referenced.insert(e)
            && !extract::find_word_bounded(&record.question, &g.nodes[e].text).is_empty()
        {
            g.edges.push(Edge {
                src: q,
                kind: EdgeKind::QueryEntity,
                dst: e,
            });
        }
    }

    for (profile, &a) in pool.profiles().iter().zip(&agent_nodes) {
        let mut targets = BTreeSet::new();
        match agent_entity_map.get(&profile.agent_id) {
            Some(surfaces) => {
                for s in surfaces {
                    match by_surface.get(&s.to_lowercase()) {
                        Some(&id) => {
                            targets.insert(id);
                        }
                        None => warnings.push(format!(
                            "{}: judged entity {s:?} is not in the graph, skipped",
                            profile.agent_id
                        )),
                    }
                }
            }
            None => {
                for i in lexical_links(
                    &record.context,
                    mentions,
                    &profile.description_text,
                    profile.design.keywords(),
                ) {
                    targets.insert(entity_nodes[i]);
                }
            }
        }
        for dst in targets {
            g.edges.push(Edge {
                src: a,
                kind: EdgeKind::AgentEntity,
                dst,
            });
        }
        g.edges.push(Edge {
            src: q,
            kind: EdgeKind::QueryAgent,
            dst: a,
        });
    }

    for w in &warnings {
        tracing::warn!(record = %record.id, "{w}");
    }
    Ok((g, warnings))
}

/// Extraction (or pre-extracted import) followed by [`build_graph`].
pub fn build_record_graph(
    record: &DatasetRecord,
    pool: &AgentPool,
    agent_entity_map: &BTreeMap<String, BTreeSet<String>>,
) -> Result<(KnowledgeGraph, Vec<String>)> {
    let (mentions, triples) = match &record.pre_extracted {
        Some(pre) => (pre.entities.clone(), pre.triples.clone()),
        None => {
            let m = extract::extract_entities(&record.context);
            let t = extract::extract_triples(&record.context, &m);
            (m, t)
        }
    };
    build_graph(record, &mentions, &triples, pool, agent_entity_map)
}

/// Average per-graph counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub graphs: usize,
    pub query_nodes: f64,
    pub agent_nodes: f64,
    pub entity_nodes: f64,
    pub relation_nodes: f64,
    /// Entity plus relation nodes.
    pub context_nodes: f64,
    /// Rewired triples.
    pub entity_entity_edges: f64,
    pub agent_entity_edges: f64,
    pub query_entity_edges: f64,
}

pub fn graph_stats(graphs: &[KnowledgeGraph]) -> Result<GraphStats> {
    if graphs.is_empty() {
        return Err(Error::data("graph_stats needs at least one graph"));
    }
    let n = graphs.len() as f64;
    let avg = |f: &dyn Fn(&KnowledgeGraph) -> usize| graphs.iter().map(f).sum::<usize>() as f64 / n;
    let entity = avg(&|g| g.nodes_of(NodeKind::Entity).len());
    let relation = avg(&|g| g.nodes_of(NodeKind::Relation).len());
    Ok(GraphStats {
        graphs: graphs.len(),
        query_nodes: avg(&|g| g.nodes_of(NodeKind::Query).len()),
        agent_nodes: avg(&|g| g.nodes_of(NodeKind::Agent).len()),
        entity_nodes: entity,
        relation_nodes: relation,
        context_nodes: entity + relation,
        entity_entity_edges: relation,
        agent_entity_edges: avg(&|g| g.count_edges(EdgeKind::AgentEntity)),
        query_entity_edges: avg(&|g| g.count_edges(EdgeKind::QueryEntity)),
    })
}

impl GraphStats {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("graphs", self.graphs as f64),
            ("query nodes", self.query_nodes),
            ("agent nodes", self.agent_nodes),
            ("entity nodes", self.entity_nodes),
            ("relation nodes", self.relation_nodes),
            ("entity+relation nodes", self.context_nodes),
            ("entity-entity edges", self.entity_entity_edges),
            ("agent-entity edges", self.agent_entity_edges),
            ("query-entity edges", self.query_entity_edges),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<24}{v:>10.2}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::parse_dataset;

    const FALCON: &str = "Title: The Falcon Takes Over. The Falcon Takes Over (also known as \"The Falcon Steps Out\") is a 1942 black-and-white mystery film directed by Irving Reis. The B film was the third, following \"The Gay Falcon\" and \"A Date with the Falcon\" (1941), to star George Sanders as the character Gay Lawrence, a gentleman detective known by the sobriquet \"the Falcon\".";

    fn record(question: &str, context: &str) -> DatasetRecord {
        let line = serde_json::json!({
            "id": "r0", "question": question, "context": context, "answers": ["x"]
        });
        parse_dataset(&line.to_string(), "t").unwrap().remove(0)
    }

    #[test]
    fn empty_context_graph() {
        let pool = AgentPool::default_pool();
        let r = record("Who?", "nothing here.");
        let (g, _) = build_graph(&r, &[], &[], &pool, &BTreeMap::new()).unwrap();
        assert_eq!(g.nodes.len(), 25);
        assert_eq!(g.edges.len(), 24);
        assert_eq!(g.count_edges(EdgeKind::QueryAgent), 24);
        g.validate(24).unwrap();
    }

    #[test]
    fn single_triple_rewires() {
        let pool = AgentPool::new(vec![crate::dataio::AgentProfile::new(
            "m",
            crate::dataio::AgentDesign::Raw,
        )])
        .unwrap();
        let ctx = "Alpha met Beta.";
        let r = record("Q?", ctx);
        let ms = vec![
            EntityMention::locate(ctx, "Alpha", MentionKind::Named).unwrap(),
            EntityMention::locate(ctx, "Beta", MentionKind::Named).unwrap(),
        ];
        let t = RelationTriple {
            head_surface: "Alpha".into(),
            relation_label: "meet".into(),
            tail_surface: "Beta".into(),
            provenance_span: (0, 14),
        };
        let mut map = BTreeMap::new();
        map.insert(pool.ids()[0].clone(), BTreeSet::new());
        let (mut g, _) = build_graph(&r, &ms, std::slice::from_ref(&t), &pool, &map).unwrap();
        assert_eq!(g.nodes_of(NodeKind::Entity).len(), 2);
        assert_eq!(g.nodes_of(NodeKind::Relation), vec![4]);
        assert!(g.edges.contains(&Edge {
            src: 2,
            kind: EdgeKind::IncSrc,
            dst: 4
        }));
        assert!(g.edges.contains(&Edge {
            src: 4,
            kind: EdgeKind::IncTgt,
            dst: 3
        }));
        assert_eq!(g.nodes[4].text, "meet");
        let before = g.clone();
        let (rel, _) = rewire_triple(&t, &mut g).unwrap();
        assert_eq!(rel, 4);
        assert_eq!(g, before);
        g.validate(1).unwrap();
    }

    #[test]
    fn rewire_needs_endpoints() {
        let pool = AgentPool::default_pool();
        let r = record("Q?", "x");
        let (mut g, _) = build_graph(&r, &[], &[], &pool, &BTreeMap::new()).unwrap();
        let t = RelationTriple {
            head_surface: "X".into(),
            relation_label: "appos".into(),
            tail_surface: "Y".into(),
            provenance_span: (0, 1),
        };
        assert!(rewire_triple(&t, &mut g).is_err());
    }

    #[test]
    fn falcon_graph_has_relation_chain() {
        let pool = AgentPool::default_pool();
        let r = record("Who is known as 'the Falcon'?", FALCON);
        let (g, _) = build_record_graph(&r, &pool, &BTreeMap::new()).unwrap();
        g.validate(24).unwrap();
        let ent = |s: &str| g.entity_by_surface(s).unwrap();
        let hop = |h: NodeId, label: &str, t: NodeId| {
            g.edges.iter().any(|e| {
                e.kind == EdgeKind::IncSrc
                    && e.src == h
                    && g.nodes[e.dst].text == label
                    && g.edges.contains(&Edge {
                        src: e.dst,
                        kind: EdgeKind::IncTgt,
                        dst: t,
                    })
            })
        };
        let (gs, gl, tf) = (
            ent("George Sanders"),
            ent("Gay Lawrence"),
            ent("the Falcon"),
        );
        assert!(hop(gs, "prep:as", gl));
        assert!(hop(gl, "dep:attr", tf));
        assert!(g
            .nodes_of(NodeKind::Entity)
            .into_iter()
            .any(|x| hop(x, "star", gs)));
        assert!(hop(
            ent("The Falcon Takes Over"),
            "dep:alias",
            ent("The Falcon Steps Out")
        ));
        // query references "the Falcon" (and "Falcon"-free entities are not linked)
        assert!(g.edges.contains(&Edge {
            src: 0,
            kind: EdgeKind::QueryEntity,
            dst: tf
        }));
        assert_eq!(g.count_edges(EdgeKind::QueryEntity), 1);
        assert!(g.nodes[0].features.cues.contains(&Cue::Person));
        assert_eq!(g.cached_triples.len(), g.nodes_of(NodeKind::Relation).len());
    }

    #[test]
    fn judge_map_edges_and_unknown_surfaces() {
        let pool = AgentPool::default_pool();
        let r = record("Who is known as 'the Falcon'?", FALCON);
        let agent = pool.ids()[3].clone();
        let mut map = BTreeMap::new();
        map.insert(
            agent.clone(),
            BTreeSet::from([
                "The Falcon Takes Over".to_string(),
                "George Sanders".to_string(),
                "the falcon".to_string(),
                "Nobody".to_string(),
            ]),
        );
        let (g, warnings) = build_record_graph(&r, &pool, &map).unwrap();
        let a = g.agents()[3];
        let linked: Vec<&str> = g
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::AgentEntity && e.src == a)
            .map(|e| g.nodes[e.dst].text.as_str())
            .collect();
        assert_eq!(linked.len(), 3);
        assert!(warnings.iter().any(|w| w.contains("Nobody")));
        // other agents use the lexical fallback: exactly five links each
        let other = g.agents()[0];
        let n = g
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::AgentEntity && e.src == other)
            .count();
        assert_eq!(n, 5);
    }

    #[test]
    fn unknown_agent_in_map_is_an_error() {
        let pool = AgentPool::default_pool();
        let r = record("Q?", "ctx");
        let mut map = BTreeMap::new();
        map.insert("nope".to_string(), BTreeSet::new());
        assert!(build_graph(&r, &[], &[], &pool, &map).is_err());
    }

    #[test]
    fn stats_averages() {
        let pool = AgentPool::default_pool();
        let ctx = "Alpha met Beta. Gamma saw Delta and Epsilon.";
        let r = record("Q?", ctx);
        let ms = crate::extract::extract_entities(ctx);
        assert_eq!(ms.len(), 5);
        let ts = vec![
            RelationTriple {
                head_surface: "Alpha".into(),
                relation_label: "meet".into(),
                tail_surface: "Beta".into(),
                provenance_span: (0, 14),
            },
            RelationTriple {
                head_surface: "Gamma".into(),
                relation_label: "see".into(),
                tail_surface: "Delta".into(),
                provenance_span: (16, 31),
            },
        ];
        let (g, _) = build_graph(&r, &ms, &ts, &pool, &BTreeMap::new()).unwrap();
        let s = graph_stats(&[g]).unwrap();
        assert_eq!(s.query_nodes, 1.0);
        assert_eq!(s.agent_nodes, 24.0);
        assert_eq!(s.entity_nodes, 5.0);
        assert_eq!(s.entity_entity_edges, 2.0);
        assert!(graph_stats(&[]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let pool = AgentPool::default_pool();
        let r = record("Who is known as 'the Falcon'?", FALCON);
        let (g, _) = build_record_graph(&r, &pool, &BTreeMap::new()).unwrap();
        let back = KnowledgeGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
    }
}
