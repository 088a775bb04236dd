//! Motif sampling over one domain's bipartite graph.
//!
//! Three motif families: random walks (long-term dependencies),
//! butterflies (fully connected short-term), and three triangle types
//! (partially connected short-term). Butterflies come from a
//! priority-ordered enumeration whose output provably equals brute-force
//! 4-node enumeration without duplicates; triangles are gated by degree
//! thresholds and an item-similarity matrix solved in closed form.

mod butterfly;
mod ease;
mod triangle;
mod walk;

pub use butterfly::{sample_butterflies, ButterflyDict};
pub use ease::{ease_item_matrix, ItemSimMatrix};
pub use triangle::{compute_thresholds, sample_triangles, TriangleThresholds};
pub use walk::sample_random_walk;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Dataset, DomainGraph, NodeId, NodeKind};
use crate::rng;

/// Which structural family a motif instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotifKind {
    Walk,
    Butterfly,
    Triangle(TriangleKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriangleKind {
    /// Three users, every pair sharing enough common items.
    T1,
    /// Two similar users plus one item both interacted with.
    T2,
    /// One user plus two of its items with positive similarity.
    T3,
}

impl MotifKind {
    pub fn tag(&self) -> &'static str {
        match self {
            MotifKind::Walk => "walk",
            MotifKind::Butterfly => "butterfly",
            MotifKind::Triangle(TriangleKind::T1) => "t1",
            MotifKind::Triangle(TriangleKind::T2) => "t2",
            MotifKind::Triangle(TriangleKind::T3) => "t3",
        }
    }

    pub fn from_tag(tag: &str) -> Option<MotifKind> {
        match tag {
            "walk" => Some(MotifKind::Walk),
            "butterfly" => Some(MotifKind::Butterfly),
            "t1" => Some(MotifKind::Triangle(TriangleKind::T1)),
            "t2" => Some(MotifKind::Triangle(TriangleKind::T2)),
            "t3" => Some(MotifKind::Triangle(TriangleKind::T3)),
            _ => None,
        }
    }
}

/// Whether a motif's central node bridges domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifContext {
    Shared,
    Specific,
}

/// A sampled motif: ordered nodes, a designated central node, and the
/// domain it was sampled in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotifInstance {
    pub kind: MotifKind,
    pub nodes: Vec<NodeId>,
    /// Index into `nodes`.
    pub central: usize,
    pub domain_id: u16,
    pub context: MotifContext,
}

impl MotifInstance {
    pub fn central_node(&self) -> NodeId {
        self.nodes[self.central]
    }

    /// Structural validity against the graph, checked purely from
    /// adjacency. Used by tests as an independent validator.
    pub fn validate(&self, graph: &DomainGraph) -> Result<()> {
        if self.central >= self.nodes.len() {
            return Err(Error::Validation("central index out of range".into()));
        }
        for &n in &self.nodes {
            if n.0 as usize >= graph.num_nodes() {
                return Err(Error::UnknownNode(format!("motif node {}", n.0)));
            }
        }
        match self.kind {
            MotifKind::Walk => {
                if self.nodes.len() < 2 {
                    return Err(Error::Validation("walk shorter than 2".into()));
                }
                for w in self.nodes.windows(2) {
                    if !graph.neighbors(w[0]).contains(&w[1]) {
                        return Err(Error::Validation("walk step not an edge".into()));
                    }
                    if graph.kind(w[0]) == graph.kind(w[1]) {
                        return Err(Error::Validation("walk does not alternate sides".into()));
                    }
                }
            }
            MotifKind::Butterfly => {
                if self.nodes.len() != 4 {
                    return Err(Error::Validation("butterfly needs 4 nodes".into()));
                }
                let users: Vec<NodeId> = self
                    .nodes
                    .iter()
                    .copied()
                    .filter(|&n| graph.kind(n) == NodeKind::User)
                    .collect();
                let items: Vec<NodeId> = self
                    .nodes
                    .iter()
                    .copied()
                    .filter(|&n| graph.kind(n) == NodeKind::Item)
                    .collect();
                if users.len() != 2 || items.len() != 2 {
                    return Err(Error::Validation("butterfly needs 2 users + 2 items".into()));
                }
                for &u in &users {
                    for &i in &items {
                        if !graph.has_edge(u, i) {
                            return Err(Error::Validation("butterfly missing an edge".into()));
                        }
                    }
                }
            }
            MotifKind::Triangle(_) => {
                if self.nodes.len() != 3 {
                    return Err(Error::Validation("triangle needs 3 nodes".into()));
                }
            }
        }
        Ok(())
    }
}

/// Motif families requested from the sampler driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifSelection {
    Walk,
    Butterfly,
    Triangle,
    All,
}

impl MotifSelection {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "walk" => Some(Self::Walk),
            "butterfly" => Some(Self::Butterfly),
            "triangle" => Some(Self::Triangle),
            "all" => Some(Self::All),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Walk => "walk",
            Self::Butterfly => "butterfly",
            Self::Triangle => "triangle",
            Self::All => "all",
        }
    }
}

/// Sampler configuration for one pass over a domain.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub selection: MotifSelection,
    pub walk_lengths: Vec<usize>,
    /// Per-central-node instance cap; uniform downsample beyond it.
    pub budget: usize,
    pub seed: u64,
    /// Regularizer of the item-similarity solve (triangles only).
    pub lambda_f: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            selection: MotifSelection::Butterfly,
            walk_lengths: vec![3, 6, 9],
            budget: 8,
            seed: 0,
            lambda_f: 1.0,
        }
    }
}

/// Motifs of one domain grouped by central node.
#[derive(Debug, Clone, Default)]
pub struct MotifSet {
    pub by_central: BTreeMap<NodeId, Vec<MotifInstance>>,
}

impl MotifSet {
    pub fn len(&self) -> usize {
        self.by_central.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_central.is_empty()
    }

    pub fn of(&self, n: NodeId) -> &[MotifInstance] {
        self.by_central.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all(&self) -> impl Iterator<Item = &MotifInstance> {
        self.by_central.values().flatten()
    }

    fn push(&mut self, m: MotifInstance) {
        self.by_central.entry(m.central_node()).or_default().push(m);
    }
}

/// Samples one view of motifs for a domain, applying the per-node budget.
///
/// `view` separates independent samples of the same domain (contrastive
/// views); every (seed, view, central node) triple owns its own rng
/// stream, so sampling is reproducible and order-independent.
pub fn sample_domain(
    dataset: &Dataset,
    domain_index: usize,
    cfg: &SamplerConfig,
    view: u64,
) -> Result<MotifSet> {
    let graph = &dataset.domains[domain_index];
    let mut set = MotifSet::default();
    let context = |n: NodeId| {
        if dataset.is_overlapped(domain_index, n) {
            MotifContext::Shared
        } else {
            MotifContext::Specific
        }
    };

    if matches!(cfg.selection, MotifSelection::Walk | MotifSelection::All) {
        for i in 0..graph.num_nodes() {
            let n = NodeId(i as u32);
            if graph.degree(n) == 0 {
                continue;
            }
            let mut rng = rng::stream(cfg.seed, "walk", &[graph.domain_id as u64, view, n.0 as u64]);
            for w in 0..cfg.budget {
                let len = cfg.walk_lengths[w % cfg.walk_lengths.len()];
                let mut m = sample_random_walk(graph, n, len, &mut rng)?;
                m.context = context(n);
                set.push(m);
            }
        }
    }

    if matches!(cfg.selection, MotifSelection::Butterfly | MotifSelection::All) {
        let dict = sample_butterflies(graph);
        let mut grouped: BTreeMap<NodeId, Vec<MotifInstance>> = BTreeMap::new();
        for m in dict.into_motifs(graph) {
            grouped.entry(m.central_node()).or_default().push(m);
        }
        for (n, motifs) in grouped {
            let picked = downsample(motifs, cfg.budget, cfg.seed, "butterfly", view, n);
            for mut m in picked {
                m.context = context(n);
                set.push(m);
            }
        }
    }

    if matches!(cfg.selection, MotifSelection::Triangle | MotifSelection::All) {
        let thresholds = compute_thresholds(graph)?;
        let sim = ease_item_matrix(graph, cfg.lambda_f)?;
        let mut grouped: BTreeMap<NodeId, Vec<MotifInstance>> = BTreeMap::new();
        for kind in [TriangleKind::T1, TriangleKind::T2, TriangleKind::T3] {
            for m in sample_triangles(graph, kind, &thresholds, Some(&sim))? {
                grouped.entry(m.central_node()).or_default().push(m);
            }
        }
        for (n, motifs) in grouped {
            let picked = downsample(motifs, cfg.budget, cfg.seed, "triangle", view, n);
            for mut m in picked {
                m.context = context(n);
                set.push(m);
            }
        }
    }

    Ok(set)
}

/// Uniform downsample to the budget, seeded per central node.
fn downsample(
    motifs: Vec<MotifInstance>,
    budget: usize,
    seed: u64,
    label: &str,
    view: u64,
    central: NodeId,
) -> Vec<MotifInstance> {
    if motifs.len() <= budget {
        return motifs;
    }
    let domain = motifs[0].domain_id as u64;
    let mut rng = rng::stream(seed, label, &[domain, view, central.0 as u64]);
    let mut indices: Vec<usize> = (0..motifs.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(budget);
    indices.sort_unstable();
    indices.into_iter().map(|ix| motifs[ix].clone()).collect()
}

/// Writes motifs as `kind<TAB>central<TAB>node,node,...` lines, nodes as
/// `u<raw>`/`i<raw>`.
pub fn write_motifs(w: &mut impl Write, graph: &DomainGraph, set: &MotifSet) -> Result<()> {
    let fmt_node = |n: NodeId| {
        let prefix = match graph.kind(n) {
            NodeKind::User => 'u',
            NodeKind::Item => 'i',
        };
        format!("{prefix}{}", graph.raw_id(n))
    };
    for m in set.all() {
        let nodes: Vec<String> = m.nodes.iter().map(|&n| fmt_node(n)).collect();
        writeln!(
            w,
            "{}\t{}\t{}",
            m.kind.tag(),
            fmt_node(m.central_node()),
            nodes.join(",")
        )
        .map_err(|e| Error::Checkpoint(format!("motif write: {e}")))?;
    }
    Ok(())
}

/// Parses a motif file written by [`write_motifs`].
pub fn read_motifs(r: &mut impl BufRead, graph: &DomainGraph) -> Result<Vec<MotifInstance>> {
    let parse_node = |s: &str, lineno: usize| -> Result<NodeId> {
        let (kind, rest) = match s.as_bytes().first() {
            Some(b'u') => (NodeKind::User, &s[1..]),
            Some(b'i') => (NodeKind::Item, &s[1..]),
            _ => return Err(Error::parse("<motifs>", lineno, format!("bad node `{s}`"))),
        };
        let raw: u64 = rest
            .parse()
            .map_err(|_| Error::parse("<motifs>", lineno, format!("bad node `{s}`")))?;
        graph
            .find(kind, raw)
            .ok_or_else(|| Error::UnknownNode(format!("{s} in domain {}", graph.domain_id)))
    };
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Checkpoint(format!("motif read: {e}")))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parts: Vec<&str> = trimmed.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::parse("<motifs>", lineno + 1, "expected 3 fields"));
        }
        let kind = MotifKind::from_tag(parts[0])
            .ok_or_else(|| Error::parse("<motifs>", lineno + 1, format!("bad kind `{}`", parts[0])))?;
        let central = parse_node(parts[1], lineno + 1)?;
        let nodes: Vec<NodeId> = parts[2]
            .split(',')
            .map(|s| parse_node(s, lineno + 1))
            .collect::<Result<_>>()?;
        let central_ix = nodes
            .iter()
            .position(|&n| n == central)
            .ok_or_else(|| Error::parse("<motifs>", lineno + 1, "central not among nodes"))?;
        out.push(MotifInstance {
            kind,
            nodes,
            central: central_ix,
            domain_id: graph.domain_id,
            context: MotifContext::Specific,
        });
    }
    Ok(out)
}

/// Generates `count` uniform random bipartite graphs for oracle tests.
#[cfg(test)]
pub(crate) fn random_bipartite(
    users: usize,
    items: usize,
    edge_prob: f64,
    seed: u64,
) -> DomainGraph {
    use crate::graph::GraphBuilder;
    let mut rng = rng::stream(seed, "random-bipartite", &[]);
    let mut b = GraphBuilder::new();
    for u in 0..users {
        b.node(NodeKind::User, u as u64);
    }
    for i in 0..items {
        b.node(NodeKind::Item, i as u64);
    }
    for u in 0..users {
        for i in 0..items {
            if rng.gen::<f64>() < edge_prob {
                b.edge(u as u64, i as u64);
            }
        }
    }
    b.build(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    fn two_domain_dataset() -> Dataset {
        let mut b0 = GraphBuilder::new();
        b0.edge(0, 0);
        b0.edge(0, 1);
        b0.edge(1, 0);
        b0.edge(1, 1);
        let g0 = b0.build(0);
        let mut b1 = GraphBuilder::new();
        b1.edge(0, 5);
        b1.edge(2, 5);
        let g1 = b1.build(1);
        let entries = vec![crate::graph::OverlapEntry {
            kind: NodeKind::User,
            domain_a: 0,
            raw_a: 0,
            domain_b: 1,
            raw_b: 0,
        }];
        Dataset::assemble(vec![g0, g1], &entries).unwrap()
    }

    #[test]
    fn context_tags_follow_overlap() {
        let ds = two_domain_dataset();
        let cfg = SamplerConfig {
            selection: MotifSelection::Walk,
            walk_lengths: vec![3],
            budget: 2,
            seed: 1,
            lambda_f: 1.0,
        };
        let set = sample_domain(&ds, 0, &cfg, 0).unwrap();
        let overlapped = ds.domains[0].find(NodeKind::User, 0).unwrap();
        let solo = ds.domains[0].find(NodeKind::User, 1).unwrap();
        assert!(set.of(overlapped).iter().all(|m| m.context == MotifContext::Shared));
        assert!(set.of(solo).iter().all(|m| m.context == MotifContext::Specific));
    }

    #[test]
    fn budget_caps_instances_per_central_node() {
        // K_{3,3} has 9 butterflies; the top-priority node centers them all.
        let mut b = GraphBuilder::new();
        for u in 0..3u64 {
            for i in 0..3u64 {
                b.edge(u, i);
            }
        }
        let g = b.build(0);
        let ds = Dataset::assemble(vec![g], &[]).unwrap();
        let cfg = SamplerConfig {
            selection: MotifSelection::Butterfly,
            budget: 4,
            seed: 9,
            ..Default::default()
        };
        let set = sample_domain(&ds, 0, &cfg, 0).unwrap();
        for (_, motifs) in &set.by_central {
            assert!(motifs.len() <= 4);
        }
        // Budget larger than supply keeps everything.
        let cfg_all = SamplerConfig { budget: 100, ..cfg };
        let all = sample_domain(&ds, 0, &cfg_all, 0).unwrap();
        assert_eq!(all.len(), 9);
    }

    #[test]
    fn sampling_is_reproducible_per_seed_and_differs_across_views() {
        let ds = two_domain_dataset();
        let cfg = SamplerConfig {
            selection: MotifSelection::Walk,
            walk_lengths: vec![6],
            budget: 4,
            seed: 42,
            lambda_f: 1.0,
        };
        let a = sample_domain(&ds, 0, &cfg, 0).unwrap();
        let b = sample_domain(&ds, 0, &cfg, 0).unwrap();
        let c = sample_domain(&ds, 0, &cfg, 1).unwrap();
        let flat = |s: &MotifSet| -> Vec<Vec<NodeId>> { s.all().map(|m| m.nodes.clone()).collect() };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn motif_file_round_trip() {
        let ds = two_domain_dataset();
        let cfg = SamplerConfig {
            selection: MotifSelection::All,
            walk_lengths: vec![3],
            budget: 3,
            seed: 5,
            lambda_f: 1.0,
        };
        let set = sample_domain(&ds, 0, &cfg, 0).unwrap();
        let mut buf = Vec::new();
        write_motifs(&mut buf, &ds.domains[0], &set).unwrap();
        let parsed = read_motifs(&mut buf.as_slice(), &ds.domains[0]).unwrap();
        assert_eq!(parsed.len(), set.len());
        for (m, orig) in parsed.iter().zip(set.all()) {
            assert_eq!(m.kind, orig.kind);
            assert_eq!(m.nodes, orig.nodes);
            assert_eq!(m.central_node(), orig.central_node());
            m.validate(&ds.domains[0]).unwrap();
        }
    }
}
