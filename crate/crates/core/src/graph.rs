//! The belief-augmented heterogeneous social network.
//!
//! Three node sets (users, media, beliefs) and three relations: a user
//! follows a user, a user interacted with a media item, a user holds a
//! belief. Belief nodes come from a closed vocabulary of ten basic human
//! values and the ten poles of the five moral foundations.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{self, Dataset, Split};
use crate::persona::LatentPersona;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown belief symbol \"{0}\"")]
    UnknownBelief(String),
    #[error("persona references unknown user \"{0}\"")]
    UnknownPersonaUser(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("malformed node reference \"{0}\"")]
    BadNodeRef(String),
    #[error("edge ({0}, {1}) in relation {2} has a missing endpoint")]
    DanglingEdge(String, String, &'static str),
    #[error("graph file parse error: {0}")]
    Parse(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeliefFamily {
    /// Schwartz basic human values.
    HumanValue,
    /// Moral Foundations poles.
    MoralValue,
}

/// One of the twenty belief symbols.
///
/// Ordering (and therefore iteration order of sets and serialized lists) is
/// alphabetical by symbol; [`BeliefId::index`] gives the stable vocabulary
/// position instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeliefId {
    Conformity,
    Tradition,
    Security,
    Power,
    Achievement,
    Hedonism,
    Stimulation,
    SelfDirection,
    Universalism,
    Benevolence,
    Care,
    Harm,
    Fairness,
    Cheating,
    Loyalty,
    Betrayal,
    Authority,
    Subversion,
    Purity,
    Degradation,
}

impl BeliefId {
    /// Vocabulary order: human values, then moral poles.
    pub const ALL: [BeliefId; 20] = [
        BeliefId::Conformity,
        BeliefId::Tradition,
        BeliefId::Security,
        BeliefId::Power,
        BeliefId::Achievement,
        BeliefId::Hedonism,
        BeliefId::Stimulation,
        BeliefId::SelfDirection,
        BeliefId::Universalism,
        BeliefId::Benevolence,
        BeliefId::Care,
        BeliefId::Harm,
        BeliefId::Fairness,
        BeliefId::Cheating,
        BeliefId::Loyalty,
        BeliefId::Betrayal,
        BeliefId::Authority,
        BeliefId::Subversion,
        BeliefId::Purity,
        BeliefId::Degradation,
    ];

    pub const COUNT: usize = 20;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn family(self) -> BeliefFamily {
        if self.index() < 10 {
            BeliefFamily::HumanValue
        } else {
            BeliefFamily::MoralValue
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BeliefId::Conformity => "conformity",
            BeliefId::Tradition => "tradition",
            BeliefId::Security => "security",
            BeliefId::Power => "power",
            BeliefId::Achievement => "achievement",
            BeliefId::Hedonism => "hedonism",
            BeliefId::Stimulation => "stimulation",
            BeliefId::SelfDirection => "self_direction",
            BeliefId::Universalism => "universalism",
            BeliefId::Benevolence => "benevolence",
            BeliefId::Care => "care",
            BeliefId::Harm => "harm",
            BeliefId::Fairness => "fairness",
            BeliefId::Cheating => "cheating",
            BeliefId::Loyalty => "loyalty",
            BeliefId::Betrayal => "betrayal",
            BeliefId::Authority => "authority",
            BeliefId::Subversion => "subversion",
            BeliefId::Purity => "purity",
            BeliefId::Degradation => "degradation",
        }
    }

    /// Case-insensitive lookup; hyphens and spaces are read as underscores,
    /// so "Self-Direction" resolves to `self_direction`.
    pub fn normalize(token: &str) -> Option<Self> {
        let norm: String = token
            .trim()
            .chars()
            .map(|c| match c {
                '-' | ' ' => '_',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        Self::ALL.into_iter().find(|b| b.as_str() == norm)
    }
}

impl Ord for BeliefId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.as_str().cmp(other.as_str())
    }
}

impl PartialOrd for BeliefId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for BeliefId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BeliefId {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::normalize(s).ok_or_else(|| GraphError::UnknownBelief(s.to_string()))
    }
}

impl Serialize for BeliefId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for BeliefId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    User = 0,
    Media = 1,
    Belief = 2,
}

impl NodeKind {
    pub const ALL: [NodeKind; 3] = [NodeKind::User, NodeKind::Media, NodeKind::Belief];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::User => "user",
            NodeKind::Media => "media",
            NodeKind::Belief => "belief",
        }
    }
}

/// A node addressed by kind and key. Displays as `kind:key`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub key: String,
}

impl NodeRef {
    pub fn user(id: impl Into<String>) -> Self {
        Self {
            kind: NodeKind::User,
            key: id.into(),
        }
    }

    pub fn media(id: impl Into<String>) -> Self {
        Self {
            kind: NodeKind::Media,
            key: id.into(),
        }
    }

    pub fn belief(b: BeliefId) -> Self {
        Self {
            kind: NodeKind::Belief,
            key: b.as_str().to_string(),
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.key)
    }
}

impl FromStr for NodeRef {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, key) = s
            .split_once(':')
            .ok_or_else(|| GraphError::BadNodeRef(s.to_string()))?;
        let kind = match kind {
            "user" => NodeKind::User,
            "media" => NodeKind::Media,
            "belief" => {
                let b: BeliefId = key.parse()?;
                return Ok(NodeRef::belief(b));
            }
            _ => return Err(GraphError::BadNodeRef(s.to_string())),
        };
        Ok(Self {
            kind,
            key: key.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// user -> user
    Follow,
    /// user -> media
    Interact,
    /// user -- belief
    Belief,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Follow => "follow",
            Relation::Interact => "interact",
            Relation::Belief => "belief",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    Both,
}

/// Independent ablation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub without_belief: bool,
    pub without_user_news: bool,
    pub without_profile: bool,
    pub without_history: bool,
    pub random_init: bool,
}

/// How user nodes are initialized under an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserText {
    ProfileAndHistory,
    ProfileOnly,
    HistoryOnly,
    /// Seeded random vector, no text.
    Random,
}

/// The concrete effect of a set of ablation flags on graph and embeddings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationPlan {
    pub node_kinds: Vec<NodeKind>,
    pub relations: Vec<Relation>,
    pub user_text: UserText,
    pub media_random: bool,
}

/// Resolves ablation flags into the node sets, relations and text inputs
/// that remain active.
pub fn apply_ablation(ablation: &Ablation) -> AblationPlan {
    let mut node_kinds = vec![NodeKind::User, NodeKind::Media];
    let mut relations = vec![Relation::Follow];
    if !ablation.without_user_news {
        relations.push(Relation::Interact);
    }
    if !ablation.without_belief {
        node_kinds.push(NodeKind::Belief);
        relations.push(Relation::Belief);
    }
    let user_text = if ablation.random_init {
        UserText::Random
    } else {
        match (ablation.without_profile, ablation.without_history) {
            (false, false) => UserText::ProfileAndHistory,
            (true, false) => UserText::HistoryOnly,
            (false, true) => UserText::ProfileOnly,
            (true, true) => UserText::Random,
        }
    };
    AblationPlan {
        node_kinds,
        relations,
        user_text,
        media_random: ablation.random_init,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphOptions {
    pub ablation: Ablation,
    /// When set, the user node set is restricted to the training/evaluation
    /// responders plus this many most-followed accounts.
    pub influencers: Option<usize>,
}

/// Immutable heterogeneous graph. All sets are kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeteroGraph {
    users: BTreeSet<String>,
    media: BTreeSet<String>,
    beliefs: BTreeSet<BeliefId>,
    follow: BTreeSet<(String, String)>,
    interact: BTreeSet<(String, String)>,
    belief_edges: BTreeSet<(String, BeliefId)>,
    follow_rev: BTreeSet<(String, String)>,
    interact_rev: BTreeSet<(String, String)>,
    belief_rev: BTreeSet<(BeliefId, String)>,
}

impl HeteroGraph {
    /// Assembles a graph, rejecting edges whose endpoints are absent and
    /// collapsing duplicate edges.
    pub fn from_parts(
        users: impl IntoIterator<Item = String>,
        media: impl IntoIterator<Item = String>,
        beliefs: impl IntoIterator<Item = BeliefId>,
        follow: impl IntoIterator<Item = (String, String)>,
        interact: impl IntoIterator<Item = (String, String)>,
        belief_edges: impl IntoIterator<Item = (String, BeliefId)>,
    ) -> Result<Self, GraphError> {
        let mut g = HeteroGraph {
            users: users.into_iter().collect(),
            media: media.into_iter().collect(),
            beliefs: beliefs.into_iter().collect(),
            ..Default::default()
        };
        for (a, b) in follow {
            if !g.users.contains(&a) || !g.users.contains(&b) {
                return Err(GraphError::DanglingEdge(a, b, "follow"));
            }
            g.follow_rev.insert((b.clone(), a.clone()));
            g.follow.insert((a, b));
        }
        for (u, m) in interact {
            if !g.users.contains(&u) || !g.media.contains(&m) {
                return Err(GraphError::DanglingEdge(u, m, "interact"));
            }
            g.interact_rev.insert((m.clone(), u.clone()));
            g.interact.insert((u, m));
        }
        for (u, b) in belief_edges {
            if !g.users.contains(&u) || !g.beliefs.contains(&b) {
                return Err(GraphError::DanglingEdge(u, b.to_string(), "belief"));
            }
            g.belief_rev.insert((b, u.clone()));
            g.belief_edges.insert((u, b));
        }
        Ok(g)
    }

    pub fn users(&self) -> &BTreeSet<String> {
        &self.users
    }

    pub fn media(&self) -> &BTreeSet<String> {
        &self.media
    }

    pub fn beliefs(&self) -> &BTreeSet<BeliefId> {
        &self.beliefs
    }

    pub fn follow_edges(&self) -> &BTreeSet<(String, String)> {
        &self.follow
    }

    pub fn interact_edges(&self) -> &BTreeSet<(String, String)> {
        &self.interact
    }

    pub fn belief_edges(&self) -> &BTreeSet<(String, BeliefId)> {
        &self.belief_edges
    }

    pub fn contains(&self, node: &NodeRef) -> bool {
        match node.kind {
            NodeKind::User => self.users.contains(&node.key),
            NodeKind::Media => self.media.contains(&node.key),
            NodeKind::Belief => BeliefId::normalize(&node.key).is_some_and(|b| self.beliefs.contains(&b)),
        }
    }

    /// All nodes in canonical order: users, media, beliefs, each ascending.
    pub fn nodes(&self) -> Vec<NodeRef> {
        let mut out: Vec<NodeRef> = self.users.iter().map(NodeRef::user).collect();
        out.extend(self.media.iter().map(NodeRef::media));
        out.extend(self.beliefs.iter().copied().map(NodeRef::belief));
        out
    }

    pub fn node_count(&self) -> usize {
        self.users.len() + self.media.len() + self.beliefs.len()
    }

    pub fn edge_count(&self) -> usize {
        self.follow.len() + self.interact.len() + self.belief_edges.len()
    }

    /// Beliefs held by `user`, ascending.
    pub fn beliefs_of(&self, user: &str) -> Vec<BeliefId> {
        range_second(&self.belief_edges, user)
    }

    /// Users followed by `user`.
    pub fn followees(&self, user: &str) -> Vec<String> {
        range_second(&self.follow, user)
    }

    /// Users following `user`.
    pub fn followers(&self, user: &str) -> Vec<String> {
        range_second(&self.follow_rev, user)
    }

    /// Union of followers and followees, ascending, without `user` itself.
    pub fn follow_neighbors(&self, user: &str) -> Vec<String> {
        let mut set: BTreeSet<String> = self.followees(user).into_iter().collect();
        set.extend(self.followers(user));
        set.remove(user);
        set.into_iter().collect()
    }
}

/// Smallest value of a type under its `Ord`, used as a range lower bound.
trait Least {
    fn least() -> Self;
}

impl Least for String {
    fn least() -> Self {
        String::new()
    }
}

impl Least for BeliefId {
    fn least() -> Self {
        BeliefId::Achievement
    }
}

fn range_second<B: Ord + Clone + Least>(set: &BTreeSet<(String, B)>, key: &str) -> Vec<B> {
    set.range((key.to_string(), B::least())..)
        .take_while(|(a, _)| a == key)
        .map(|(_, b)| b.clone())
        .collect()
}

fn range_belief(set: &BTreeSet<(BeliefId, String)>, b: BeliefId) -> Vec<String> {
    set.range((b, String::new())..)
        .take_while(|(x, _)| *x == b)
        .map(|(_, u)| u.clone())
        .collect()
}

/// Neighbors of `node` under `relation`, ascending by key.
///
/// Follow is directed: `Out` gives followees, `In` followers, `Both` the
/// union. Interact and belief edges are traversed from either endpoint.
pub fn neighbors(
    graph: &HeteroGraph,
    node: &NodeRef,
    relation: Relation,
    direction: Direction,
) -> Result<Vec<NodeRef>, GraphError> {
    if !graph.contains(node) {
        return Err(GraphError::UnknownNode(node.to_string()));
    }
    let out = match (node.kind, relation) {
        (NodeKind::User, Relation::Follow) => {
            let mut set = BTreeSet::new();
            if matches!(direction, Direction::Out | Direction::Both) {
                set.extend(graph.followees(&node.key));
            }
            if matches!(direction, Direction::In | Direction::Both) {
                set.extend(graph.followers(&node.key));
            }
            set.into_iter().map(NodeRef::user).collect()
        }
        (NodeKind::User, Relation::Interact) => range_second(&graph.interact, &node.key)
            .into_iter()
            .map(NodeRef::media)
            .collect(),
        (NodeKind::Media, Relation::Interact) => range_second(&graph.interact_rev, &node.key)
            .into_iter()
            .map(NodeRef::user)
            .collect(),
        (NodeKind::User, Relation::Belief) => graph
            .beliefs_of(&node.key)
            .into_iter()
            .map(NodeRef::belief)
            .collect(),
        (NodeKind::Belief, Relation::Belief) => {
            let b = BeliefId::normalize(&node.key).expect("contains() validated the key");
            range_belief(&graph.belief_rev, b).into_iter().map(NodeRef::user).collect()
        }
        _ => Vec::new(),
    };
    Ok(out)
}

/// The `top_n` most-followed accounts among the seed users and everyone
/// they follow, ranked by in-degree within `follow_edges` (descending) with
/// ties broken by ascending id.
pub fn select_influencers<'a>(
    seed_users: impl IntoIterator<Item = &'a str>,
    follow_edges: &[(String, String)],
    top_n: usize,
) -> Vec<String> {
    let mut indegree: HashMap<&str, usize> = HashMap::new();
    for s in seed_users {
        indegree.entry(s).or_insert(0);
    }
    for (_, dst) in follow_edges {
        *indegree.entry(dst.as_str()).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&str, usize)> = indegree.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(top_n).map(|(id, _)| id.to_string()).collect()
}

/// Builds the graph from a dataset and extracted personas.
///
/// Interaction edges come from training responses only. Personas for users
/// outside the node set (possible under influencer restriction) are ignored;
/// personas naming users absent from the dataset are errors.
pub fn build_graph(
    dataset: &Dataset,
    personas: &[LatentPersona],
    options: &GraphOptions,
) -> Result<HeteroGraph, GraphError> {
    let plan = apply_ablation(&options.ablation);
    let users: BTreeSet<String> = match options.influencers {
        None => dataset.users().iter().map(|u| u.id.clone()).collect(),
        Some(top_n) => {
            let seeds: BTreeSet<&str> = dataset.responses().iter().map(|r| r.user_id.as_str()).collect();
            let mut set: BTreeSet<String> = seeds.iter().map(|s| s.to_string()).collect();
            set.extend(select_influencers(seeds.iter().copied(), dataset.follows(), top_n));
            set
        }
    };
    let media: BTreeSet<String> = dataset.news().iter().map(|n| n.id.clone()).collect();
    let follow: Vec<(String, String)> = dataset
        .follows()
        .iter()
        .filter(|(a, b)| users.contains(a) && users.contains(b))
        .cloned()
        .collect();
    let interact: Vec<(String, String)> = if plan.relations.contains(&Relation::Interact) {
        dataset
            .responses()
            .iter()
            .filter(|r| r.split == Split::Train && users.contains(&r.user_id))
            .map(|r| (r.user_id.clone(), r.news_id.clone()))
            .collect()
    } else {
        Vec::new()
    };
    let with_beliefs = plan.node_kinds.contains(&NodeKind::Belief);
    let mut belief_edges = Vec::new();
    for p in personas {
        if dataset.user(&p.user_id).is_none() {
            return Err(GraphError::UnknownPersonaUser(p.user_id.clone()));
        }
        if !with_beliefs || !users.contains(&p.user_id) {
            continue;
        }
        for b in p.beliefs() {
            belief_edges.push((p.user_id.clone(), b));
        }
    }
    let beliefs: Vec<BeliefId> = if with_beliefs { BeliefId::ALL.to_vec() } else { Vec::new() };
    HeteroGraph::from_parts(users, media, beliefs, follow, interact, belief_edges)
}

/// Fraction of belief-holding users that share at least one belief with
/// some other user at undirected follow distance two or more (unreachable
/// counts as far). Returns 0 when no user holds a belief.
pub fn distant_shared_belief_ratio(graph: &HeteroGraph) -> f64 {
    let holders: Vec<&String> = {
        let set: BTreeSet<&String> = graph.belief_edges.iter().map(|(u, _)| u).collect();
        set.into_iter().collect()
    };
    if holders.is_empty() {
        return 0.0;
    }
    let index: HashMap<&str, usize> = holders.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    // Belief sets as 20-bit masks; two users share a belief iff masks intersect.
    let mut masks = vec![0u32; holders.len()];
    for (u, b) in &graph.belief_edges {
        masks[index[u.as_str()]] |= 1 << b.index();
    }
    // Distance >= 2 means "not the same user and not adjacent", so only
    // direct follow neighborhoods matter.
    let mut adjacent: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); holders.len()];
    for (a, b) in &graph.follow {
        if let (Some(&i), Some(&j)) = (index.get(a.as_str()), index.get(b.as_str())) {
            adjacent[i].insert(j);
            adjacent[j].insert(i);
        }
    }
    let distant = (0..holders.len())
        .filter(|&i| {
            (0..holders.len()).any(|j| j != i && masks[i] & masks[j] != 0 && !adjacent[i].contains(&j))
        })
        .count();
    distant as f64 / holders.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub users: usize,
    pub media: usize,
    pub beliefs: usize,
    pub follow_edges: usize,
    pub interact_edges: usize,
    pub belief_edges: usize,
    pub total_edges: usize,
    /// Distinct users per belief; beliefs with no holders are listed with 0.
    pub belief_histogram: BTreeMap<BeliefId, usize>,
}

pub fn graph_stats(graph: &HeteroGraph) -> GraphStats {
    let mut belief_histogram: BTreeMap<BeliefId, usize> = graph.beliefs.iter().map(|&b| (b, 0)).collect();
    for (_, b) in &graph.belief_edges {
        *belief_histogram.entry(*b).or_insert(0) += 1;
    }
    GraphStats {
        users: graph.users.len(),
        media: graph.media.len(),
        beliefs: graph.beliefs.len(),
        follow_edges: graph.follow.len(),
        interact_edges: graph.interact.len(),
        belief_edges: graph.belief_edges.len(),
        total_edges: graph.edge_count(),
        belief_histogram,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    users: Vec<String>,
    media: Vec<String>,
    beliefs: Vec<BeliefId>,
    follow: Vec<(String, String)>,
    interact: Vec<(String, String)>,
    belief_edges: Vec<(String, BeliefId)>,
}

/// Canonical `graph.json` form: every list sorted ascending, compact JSON,
/// trailing newline.
pub fn graph_to_json(graph: &HeteroGraph) -> String {
    let file = GraphFile {
        users: graph.users.iter().cloned().collect(),
        media: graph.media.iter().cloned().collect(),
        beliefs: graph.beliefs.iter().copied().collect(),
        follow: graph.follow.iter().cloned().collect(),
        interact: graph.interact.iter().cloned().collect(),
        belief_edges: graph.belief_edges.iter().cloned().collect(),
    };
    let mut s = serde_json::to_string(&file).expect("graph serializes");
    s.push('\n');
    s
}

pub fn graph_from_json(text: &str) -> Result<HeteroGraph, GraphError> {
    let f: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    HeteroGraph::from_parts(f.users, f.media, f.beliefs, f.follow, f.interact, f.belief_edges)
}

pub fn write_graph(graph: &HeteroGraph, path: &Path) -> Result<(), GraphError> {
    datamodel::write_file(path, graph_to_json(graph).as_bytes()).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_graph(path: &Path) -> Result<HeteroGraph, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    graph_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Intensity, NewsItem, Polarity, ResponseRecord, UserRecord};

    fn s(x: &str) -> String {
        x.to_string()
    }

    fn edges(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(a, b)| (s(a), s(b))).collect()
    }

    #[test]
    fn vocabulary() {
        assert_eq!(BeliefId::ALL.len(), BeliefId::COUNT);
        let names: BTreeSet<&str> = BeliefId::ALL.iter().map(|b| b.as_str()).collect();
        assert_eq!(names.len(), 20);
        for (i, b) in BeliefId::ALL.iter().enumerate() {
            assert_eq!(b.index(), i);
            assert_eq!(BeliefId::normalize(b.as_str()), Some(*b));
        }
        assert_eq!(
            BeliefId::ALL.iter().filter(|b| b.family() == BeliefFamily::MoralValue).count(),
            10
        );
        assert_eq!(BeliefId::normalize("Self-Direction"), Some(BeliefId::SelfDirection));
        assert_eq!(BeliefId::normalize(" CARE "), Some(BeliefId::Care));
        assert_eq!(BeliefId::normalize("honor"), None);
    }

    #[test]
    fn node_ref_parse() {
        assert_eq!("user:u1".parse::<NodeRef>().unwrap(), NodeRef::user("u1"));
        assert_eq!("belief:Care".parse::<NodeRef>().unwrap(), NodeRef::belief(BeliefId::Care));
        assert!("thing:x".parse::<NodeRef>().is_err());
        assert_eq!(NodeRef::media("n:1").to_string(), "media:n:1");
    }

    #[test]
    fn influencers() {
        let e = edges(&[("a", "b"), ("c", "b"), ("a", "c")]);
        let seeds = ["a", "b", "c"];
        assert_eq!(select_influencers(seeds, &e, 1), vec!["b"]);
        assert_eq!(select_influencers(seeds, &e, 2), vec!["b", "c"]);
        assert_eq!(select_influencers(seeds, &e, 10).len(), 3);
    }

    #[test]
    fn influencer_ties_by_id() {
        // x:3, y:3, z:1
        let e = edges(&[
            ("p", "y"),
            ("q", "y"),
            ("r", "y"),
            ("p", "x"),
            ("q", "x"),
            ("r", "x"),
            ("p", "z"),
        ]);
        assert_eq!(select_influencers(["p", "q", "r"], &e, 1), vec!["x"]);
        assert_eq!(select_influencers(["p", "q", "r"], &e, 2), vec!["x", "y"]);
    }

    fn one_user_dataset(responses: usize) -> Dataset {
        Dataset::new(
            vec![UserRecord {
                id: s("u"),
                profile: s("p"),
                history: vec![],
                follower_count: 0,
            }],
            vec![NewsItem {
                id: s("n"),
                headline: s("h"),
            }],
            (0..responses)
                .map(|_| ResponseRecord {
                    user_id: s("u"),
                    news_id: s("n"),
                    polarity: Polarity::Neutral,
                    intensity: Intensity::new(0).unwrap(),
                    split: Split::Train,
                })
                .collect(),
            vec![],
        )
        .unwrap()
    }

    fn persona(user: &str, moral: &[BeliefId]) -> LatentPersona {
        LatentPersona {
            user_id: s(user),
            moral_values: moral.to_vec(),
            ..Default::default()
        }
    }

    #[test]
    fn build_minimal() {
        let ds = one_user_dataset(1);
        let g = build_graph(&ds, &[persona("u", &[BeliefId::Care])], &GraphOptions::default()).unwrap();
        let st = graph_stats(&g);
        assert_eq!((st.users, st.media, st.beliefs), (1, 1, 20));
        assert_eq!((st.interact_edges, st.belief_edges, st.follow_edges), (1, 1, 0));

        let mut opts = GraphOptions::default();
        opts.ablation.without_belief = true;
        let g = build_graph(&ds, &[persona("u", &[BeliefId::Care])], &opts).unwrap();
        assert_eq!(g.belief_edges().len(), 0);
        assert!(g.beliefs().is_empty());
    }

    #[test]
    fn duplicate_responses_one_edge() {
        let ds = one_user_dataset(2);
        let g = build_graph(&ds, &[], &GraphOptions::default()).unwrap();
        assert_eq!(g.interact_edges().len(), 1);
    }

    #[test]
    fn unknown_persona_user() {
        let ds = one_user_dataset(1);
        let r = build_graph(&ds, &[persona("ghost", &[])], &GraphOptions::default());
        assert!(matches!(r, Err(GraphError::UnknownPersonaUser(_))));
    }

    #[test]
    fn ablation_plans() {
        let full = apply_ablation(&Ablation::default());
        assert_eq!(full.relations, vec![Relation::Follow, Relation::Interact, Relation::Belief]);
        assert_eq!(full.user_text, UserText::ProfileAndHistory);
        assert!(!full.media_random);
        let nb = apply_ablation(&Ablation {
            without_belief: true,
            ..Default::default()
        });
        assert_eq!(nb.relations, vec![Relation::Follow, Relation::Interact]);
        assert_eq!(nb.node_kinds, vec![NodeKind::User, NodeKind::Media]);
    }

    #[test]
    fn without_user_news_disconnects_media() {
        let ds = one_user_dataset(1);
        let opts = GraphOptions {
            ablation: Ablation {
                without_user_news: true,
                ..Default::default()
            },
            influencers: None,
        };
        let g = build_graph(&ds, &[], &opts).unwrap();
        assert!(neighbors(&g, &NodeRef::user("u"), Relation::Interact, Direction::Both)
            .unwrap()
            .is_empty());
        assert!(neighbors(&g, &NodeRef::media("n"), Relation::Interact, Direction::Both)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn neighbor_queries() {
        let g = HeteroGraph::from_parts(
            [s("u"), s("v"), s("u1"), s("u2")],
            [],
            BeliefId::ALL,
            edges(&[("u", "v")]),
            [],
            [(s("u2"), BeliefId::Care), (s("u1"), BeliefId::Care)],
        )
        .unwrap();
        assert_eq!(
            neighbors(&g, &NodeRef::user("u"), Relation::Follow, Direction::Out).unwrap(),
            vec![NodeRef::user("v")]
        );
        assert_eq!(
            neighbors(&g, &NodeRef::user("v"), Relation::Follow, Direction::In).unwrap(),
            vec![NodeRef::user("u")]
        );
        assert_eq!(
            neighbors(&g, &NodeRef::belief(BeliefId::Care), Relation::Belief, Direction::Both).unwrap(),
            vec![NodeRef::user("u1"), NodeRef::user("u2")]
        );
        assert!(neighbors(&g, &NodeRef::user("zz"), Relation::Follow, Direction::Out).is_err());
    }

    #[test]
    fn ratio_examples() {
        let g = HeteroGraph::from_parts(
            [s("A"), s("B")],
            [],
            BeliefId::ALL,
            edges(&[("A", "B")]),
            [],
            [(s("A"), BeliefId::Care), (s("B"), BeliefId::Care)],
        )
        .unwrap();
        assert_eq!(distant_shared_belief_ratio(&g), 0.0);

        let g = HeteroGraph::from_parts(
            [s("A"), s("B"), s("C")],
            [],
            BeliefId::ALL,
            edges(&[("A", "B")]),
            [],
            [(s("A"), BeliefId::Care), (s("C"), BeliefId::Care), (s("B"), BeliefId::Power)],
        )
        .unwrap();
        assert!((distant_shared_belief_ratio(&g) - 2.0 / 3.0).abs() < 1e-15);

        let g = HeteroGraph::from_parts(
            [s("A"), s("X"), s("C")],
            [],
            BeliefId::ALL,
            edges(&[("A", "X"), ("X", "C")]),
            [],
            [(s("A"), BeliefId::Loyalty), (s("C"), BeliefId::Loyalty)],
        )
        .unwrap();
        assert_eq!(distant_shared_belief_ratio(&g), 1.0);
        assert_eq!(distant_shared_belief_ratio(&HeteroGraph::default()), 0.0);
    }

    #[test]
    fn stats_histogram() {
        assert_eq!(graph_stats(&HeteroGraph::default()).total_edges, 0);
        let g = HeteroGraph::from_parts(
            [s("a"), s("b")],
            [],
            BeliefId::ALL,
            [],
            [],
            [(s("a"), BeliefId::Care), (s("b"), BeliefId::Care), (s("b"), BeliefId::Loyalty)],
        )
        .unwrap();
        let st = graph_stats(&g);
        assert_eq!(st.belief_histogram[&BeliefId::Care], 2);
        assert_eq!(st.belief_histogram[&BeliefId::Loyalty], 1);
        assert_eq!(st.belief_histogram[&BeliefId::Power], 0);
    }

    #[test]
    fn dangling_edge_rejected() {
        let r = HeteroGraph::from_parts([s("a")], [], [], edges(&[("a", "b")]), [], []);
        assert!(matches!(r, Err(GraphError::DanglingEdge(..))));
    }
}
