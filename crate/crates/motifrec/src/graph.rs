//! Multi-domain bipartite interaction graphs.
//!
//! A [`DomainGraph`] holds one domain's user-item graph with dense
//! per-domain node ids, adjacency in both directions and the total
//! priority order used by butterfly sampling: `p(n1) > p(n2)` iff
//! `deg(n1) > deg(n2)`, or degrees tie and `n1` has the larger id.
//! Graphs are immutable once built; the [`GraphBuilder`] is the only
//! mutation path.
//!
//! A [`Dataset`] groups several domains with an [`OverlapRegistry`] that
//! links nodes present in more than one domain under a common global id.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Side of the bipartition a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    User,
    Item,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::User => write!(f, "user"),
            NodeKind::Item => write!(f, "item"),
        }
    }
}

/// Dense per-domain node id. Unique across both kinds within a domain,
/// which makes the priority tie-break a strict total order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

/// Dense id across all domains and kinds; overlapped nodes share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GlobalId(pub u32);

pub type DomainId = u16;

/// A node reference within one domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    /// Id from the interaction file (per-kind namespace).
    pub raw_id: u64,
    /// Dense id within the domain (shared namespace across kinds).
    pub per_domain_id: NodeId,
}

/// Incrementally assembles a [`DomainGraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    kinds: Vec<NodeKind>,
    raw_ids: Vec<u64>,
    adj: Vec<Vec<NodeId>>,
    lookup: HashMap<(NodeKind, u64), NodeId>,
    edges: HashSet<(NodeId, NodeId)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a node without edges; returns its dense id.
    pub fn node(&mut self, kind: NodeKind, raw_id: u64) -> NodeId {
        if let Some(&id) = self.lookup.get(&(kind, raw_id)) {
            return id;
        }
        let id = NodeId(self.kinds.len() as u32);
        self.kinds.push(kind);
        self.raw_ids.push(raw_id);
        self.adj.push(Vec::new());
        self.lookup.insert((kind, raw_id), id);
        id
    }

    /// Adds an undirected user-item edge; duplicates collapse to one.
    pub fn edge(&mut self, user_raw: u64, item_raw: u64) {
        let u = self.node(NodeKind::User, user_raw);
        let i = self.node(NodeKind::Item, item_raw);
        if self.edges.insert((u, i)) {
            self.adj[u.0 as usize].push(i);
            self.adj[i.0 as usize].push(u);
        }
    }

    pub fn build(self, domain_id: DomainId) -> DomainGraph {
        let n = self.kinds.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        // Ascending (degree, id) order; rank 1 = lowest priority.
        order.sort_by_key(|&i| (self.adj[i as usize].len(), i));
        let mut priority_rank = vec![0u32; n];
        for (pos, &i) in order.iter().enumerate() {
            priority_rank[i as usize] = pos as u32 + 1;
        }
        let mut users = Vec::new();
        let mut items = Vec::new();
        for (i, kind) in self.kinds.iter().enumerate() {
            match kind {
                NodeKind::User => users.push(NodeId(i as u32)),
                NodeKind::Item => items.push(NodeId(i as u32)),
            }
        }
        DomainGraph {
            domain_id,
            kinds: self.kinds,
            raw_ids: self.raw_ids,
            adj: self.adj,
            edges: self.edges,
            lookup: self.lookup,
            priority_rank,
            users,
            items,
        }
    }
}

/// One domain's bipartite interaction graph, immutable after build.
#[derive(Debug, Clone)]
pub struct DomainGraph {
    pub domain_id: DomainId,
    kinds: Vec<NodeKind>,
    raw_ids: Vec<u64>,
    adj: Vec<Vec<NodeId>>,
    edges: HashSet<(NodeId, NodeId)>,
    lookup: HashMap<(NodeKind, u64), NodeId>,
    priority_rank: Vec<u32>,
    users: Vec<NodeId>,
    items: Vec<NodeId>,
}

impl DomainGraph {
    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn users(&self) -> &[NodeId] {
        &self.users
    }

    pub fn items(&self) -> &[NodeId] {
        &self.items
    }

    pub fn kind(&self, n: NodeId) -> NodeKind {
        self.kinds[n.0 as usize]
    }

    pub fn raw_id(&self, n: NodeId) -> u64 {
        self.raw_ids[n.0 as usize]
    }

    pub fn node_ref(&self, n: NodeId) -> NodeRef {
        NodeRef {
            kind: self.kind(n),
            raw_id: self.raw_id(n),
            per_domain_id: n,
        }
    }

    pub fn find(&self, kind: NodeKind, raw_id: u64) -> Option<NodeId> {
        self.lookup.get(&(kind, raw_id)).copied()
    }

    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.adj[n.0 as usize]
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.adj[n.0 as usize].len()
    }

    pub fn has_edge(&self, user: NodeId, item: NodeId) -> bool {
        self.edges.contains(&(user, item))
    }

    /// All (user, item) edges in deterministic order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut v: Vec<(NodeId, NodeId)> = self.edges.iter().copied().collect();
        v.sort();
        v
    }

    /// Priority rank in `[1, |U|+|I|]`; higher rank = higher priority.
    /// Errors on ids outside the graph.
    pub fn priority(&self, n: NodeId) -> Result<u32> {
        self.priority_rank
            .get(n.0 as usize)
            .copied()
            .ok_or_else(|| Error::UnknownNode(format!("node id {} in domain {}", n.0, self.domain_id)))
    }

    /// Unchecked priority for hot loops; `n` must be in the graph.
    pub(crate) fn rank(&self, n: NodeId) -> u32 {
        self.priority_rank[n.0 as usize]
    }

    /// Rebuilds the graph keeping every node but only the given edges.
    /// Used to carve training graphs out of a full dataset; held-out
    /// users keep their registration even at degree zero.
    pub fn with_edges(&self, keep: &HashSet<(NodeId, NodeId)>) -> DomainGraph {
        let mut b = GraphBuilder::new();
        for i in 0..self.num_nodes() {
            let n = NodeId(i as u32);
            b.node(self.kind(n), self.raw_id(n));
        }
        for (u, i) in self.edges() {
            if keep.contains(&(u, i)) {
                b.edge(self.raw_id(u), self.raw_id(i));
            }
        }
        b.build(self.domain_id)
    }
}

/// Loads `user<TAB>item` interaction lines into a graph.
///
/// Duplicated pairs collapse to a single edge; an empty file yields an
/// empty graph. Malformed lines report their line number.
pub fn load_interactions(path: &Path, domain_id: DomainId) -> Result<DomainGraph> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut b = GraphBuilder::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split('\t');
        let user = parts.next();
        let item = parts.next();
        match (user, item) {
            (Some(u), Some(i)) => {
                let u: u64 = u.trim().parse().map_err(|_| {
                    Error::parse(path.display().to_string(), lineno + 1, format!("bad user id `{u}`"))
                })?;
                let i: u64 = i.trim().parse().map_err(|_| {
                    Error::parse(path.display().to_string(), lineno + 1, format!("bad item id `{i}`"))
                })?;
                b.edge(u, i);
            }
            _ => {
                return Err(Error::parse(
                    path.display().to_string(),
                    lineno + 1,
                    "expected `user<TAB>item`",
                ))
            }
        }
    }
    Ok(b.build(domain_id))
}

/// One declared overlap: the same real-world node in two domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapEntry {
    pub kind: NodeKind,
    pub domain_a: DomainId,
    pub raw_a: u64,
    pub domain_b: DomainId,
    pub raw_b: u64,
}

/// Tracks which nodes are shared between domain pairs.
#[derive(Debug, Clone, Default)]
pub struct OverlapRegistry {
    /// (domain pair, ordered) -> shared global ids.
    pairs: BTreeMap<(DomainId, DomainId), BTreeSet<GlobalId>>,
    pub overlap_role: Option<NodeKind>,
}

impl OverlapRegistry {
    /// Shared global ids between two domains (order-insensitive).
    pub fn shared(&self, a: DomainId, b: DomainId) -> BTreeSet<GlobalId> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.pairs.get(&key).cloned().unwrap_or_default()
    }

    fn insert(&mut self, a: DomainId, b: DomainId, g: GlobalId) {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.pairs.entry(key).or_default().insert(g);
    }
}

/// Several domains plus the global node universe linking them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub domains: Vec<DomainGraph>,
    pub overlap: OverlapRegistry,
    /// `global[d][node.0]` is the global id of node `node` in domain `d`.
    global: Vec<Vec<GlobalId>>,
    num_global: usize,
}

impl Dataset {
    /// Assembles domains and overlap declarations into one universe.
    ///
    /// Every overlap entry must reference existing nodes of the declared
    /// kind in both domains; entries referencing missing nodes are a
    /// validation error. Non-overlapped nodes get fresh global ids.
    pub fn assemble(domains: Vec<DomainGraph>, entries: &[OverlapEntry]) -> Result<Dataset> {
        let index_of: HashMap<DomainId, usize> =
            domains.iter().enumerate().map(|(i, g)| (g.domain_id, i)).collect();
        // Validate entries and group them per node.
        let mut linked: HashMap<(usize, NodeId), Vec<(usize, NodeId)>> = HashMap::new();
        let mut role = None;
        for e in entries {
            let da = *index_of
                .get(&e.domain_a)
                .ok_or_else(|| Error::Validation(format!("unknown domain {}", e.domain_a)))?;
            let db = *index_of
                .get(&e.domain_b)
                .ok_or_else(|| Error::Validation(format!("unknown domain {}", e.domain_b)))?;
            let na = domains[da].find(e.kind, e.raw_a).ok_or_else(|| {
                Error::Validation(format!(
                    "overlap {} {} missing from domain {}",
                    e.kind, e.raw_a, e.domain_a
                ))
            })?;
            let nb = domains[db].find(e.kind, e.raw_b).ok_or_else(|| {
                Error::Validation(format!(
                    "overlap {} {} missing from domain {}",
                    e.kind, e.raw_b, e.domain_b
                ))
            })?;
            match role {
                None => role = Some(e.kind),
                Some(r) if r != e.kind => {
                    return Err(Error::Validation(
                        "mixed overlap roles in one registry".into(),
                    ))
                }
                _ => {}
            }
            linked.entry((da, na)).or_default().push((db, nb));
            linked.entry((db, nb)).or_default().push((da, na));
        }

        // Assign global ids: union-find over linked nodes, dense ids in
        // deterministic (domain, node) order.
        let mut global: Vec<Vec<Option<GlobalId>>> =
            domains.iter().map(|g| vec![None; g.num_nodes()]).collect();
        let mut next = 0u32;
        for d in 0..domains.len() {
            for i in 0..domains[d].num_nodes() {
                let key = (d, NodeId(i as u32));
                if global[d][i].is_some() {
                    continue;
                }
                let g = GlobalId(next);
                next += 1;
                // Flood the linked component.
                let mut stack = vec![key];
                while let Some((dd, nn)) = stack.pop() {
                    let slot = &mut global[dd][nn.0 as usize];
                    if slot.is_some() {
                        continue;
                    }
                    *slot = Some(g);
                    if let Some(peers) = linked.get(&(dd, nn)) {
                        stack.extend(peers.iter().copied());
                    }
                }
            }
        }
        let global: Vec<Vec<GlobalId>> = global
            .into_iter()
            .map(|v| v.into_iter().map(|g| g.expect("assigned")).collect())
            .collect();

        let mut overlap = OverlapRegistry {
            pairs: BTreeMap::new(),
            overlap_role: role,
        };
        for e in entries {
            let da = index_of[&e.domain_a];
            let na = domains[da].find(e.kind, e.raw_a).expect("validated");
            overlap.insert(e.domain_a, e.domain_b, global[da][na.0 as usize]);
        }

        Ok(Dataset {
            domains,
            overlap,
            global,
            num_global: next as usize,
        })
    }

    pub fn num_global(&self) -> usize {
        self.num_global
    }

    pub fn domain_index(&self, id: DomainId) -> Option<usize> {
        self.domains.iter().position(|g| g.domain_id == id)
    }

    pub fn global_id(&self, domain_index: usize, n: NodeId) -> GlobalId {
        self.global[domain_index][n.0 as usize]
    }

    /// Whether the node is registered in more than one domain.
    pub fn is_overlapped(&self, domain_index: usize, n: NodeId) -> bool {
        let g = self.global_id(domain_index, n);
        self.global
            .iter()
            .enumerate()
            .any(|(d, col)| d != domain_index && col.contains(&g))
    }

    /// Locates a global id inside a given domain, if present.
    pub fn node_in_domain(&self, g: GlobalId, domain_index: usize) -> Option<NodeId> {
        self.global[domain_index]
            .iter()
            .position(|&x| x == g)
            .map(|i| NodeId(i as u32))
    }

    /// Rebuilds the dataset with per-domain edge subsets, keeping the
    /// node universe and global ids unchanged.
    pub fn with_edge_subsets(&self, keep: &[HashSet<(NodeId, NodeId)>]) -> Dataset {
        let domains: Vec<DomainGraph> = self
            .domains
            .iter()
            .zip(keep)
            .map(|(g, k)| g.with_edges(k))
            .collect();
        Dataset {
            domains,
            overlap: self.overlap.clone(),
            global: self.global.clone(),
            num_global: self.num_global,
        }
    }
}

/// Parses an overlap map: `kind<TAB>a_local<TAB>b_local<TAB>global` lines.
/// The trailing global id only groups rows; internal ids are reassigned
/// densely at assembly.
pub fn load_overlap(path: &Path, domain_a: DomainId, domain_b: DomainId) -> Result<Vec<OverlapEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parts: Vec<&str> = trimmed.split('\t').collect();
        if parts.len() != 4 {
            return Err(Error::parse(
                path.display().to_string(),
                lineno + 1,
                "expected `kind<TAB>a_local<TAB>b_local<TAB>global`",
            ));
        }
        let kind = match parts[0] {
            "user" => NodeKind::User,
            "item" => NodeKind::Item,
            other => {
                return Err(Error::parse(
                    path.display().to_string(),
                    lineno + 1,
                    format!("bad kind `{other}`"),
                ))
            }
        };
        let parse_u64 = |s: &str| -> Result<u64> {
            s.trim().parse().map_err(|_| {
                Error::parse(path.display().to_string(), lineno + 1, format!("bad id `{s}`"))
            })
        };
        out.push(OverlapEntry {
            kind,
            domain_a,
            raw_a: parse_u64(parts[1])?,
            domain_b,
            raw_b: parse_u64(parts[2])?,
        });
        parse_u64(parts[3])?; // declared global id: validated, not stored
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn graph_from_edges(edges: &[(u64, u64)]) -> DomainGraph {
        let mut b = GraphBuilder::new();
        for &(u, i) in edges {
            b.edge(u, i);
        }
        b.build(0)
    }

    #[test]
    fn empty_file_gives_empty_graph() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.flush().unwrap();
        let g = load_interactions(f.path(), 0).unwrap();
        assert_eq!(g.num_users(), 0);
        assert_eq!(g.num_items(), 0);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn loads_and_dedups_interactions() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "0\t0").unwrap();
        writeln!(f, "0\t1").unwrap();
        writeln!(f, "1\t0").unwrap();
        f.flush().unwrap();
        let g = load_interactions(f.path(), 0).unwrap();
        assert_eq!(g.num_users(), 2);
        assert_eq!(g.num_items(), 2);
        assert_eq!(g.num_edges(), 3);
        let u0 = g.find(NodeKind::User, 0).unwrap();
        assert_eq!(g.degree(u0), 2);
    }

    #[test]
    fn duplicate_line_collapses_to_one_edge() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "0\t0").unwrap();
        writeln!(f, "0\t0").unwrap();
        f.flush().unwrap();
        let g = load_interactions(f.path(), 0).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn malformed_line_reports_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "0\t0").unwrap();
        writeln!(f, "zap\t1").unwrap();
        f.flush().unwrap();
        let err = load_interactions(f.path(), 0).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn priority_orders_by_degree_then_id() {
        // a = user 0 with degree 3, b = user 1 with degree 2.
        let g = graph_from_edges(&[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]);
        let a = g.find(NodeKind::User, 0).unwrap();
        let b = g.find(NodeKind::User, 1).unwrap();
        assert!(g.priority(a).unwrap() > g.priority(b).unwrap());

        // Equal degree: higher per-domain id wins. Items 0,1 both have
        // degree 2 and item 1 was inserted later (larger dense id).
        let i0 = g.find(NodeKind::Item, 0).unwrap();
        let i1 = g.find(NodeKind::Item, 1).unwrap();
        assert_eq!(g.degree(i0), g.degree(i1));
        assert!(i1 > i0);
        assert!(g.priority(i1).unwrap() > g.priority(i0).unwrap());
    }

    #[test]
    fn priority_of_single_node_graph_is_one() {
        let mut b = GraphBuilder::new();
        let n = b.node(NodeKind::User, 0);
        let g = b.build(0);
        assert_eq!(g.priority(n).unwrap(), 1);
    }

    #[test]
    fn priority_unknown_node_errors() {
        let g = graph_from_edges(&[(0, 0)]);
        assert!(g.priority(NodeId(99)).is_err());
    }

    #[test]
    fn overlap_registry_round_trip() {
        let g0 = graph_from_edges(&[(7, 0), (1, 1)]);
        let mut b = GraphBuilder::new();
        b.edge(7, 5);
        b.edge(2, 5);
        let g1 = b.build(1);
        let entries = vec![OverlapEntry {
            kind: NodeKind::User,
            domain_a: 0,
            raw_a: 7,
            domain_b: 1,
            raw_b: 7,
        }];
        let ds = Dataset::assemble(vec![g0, g1], &entries).unwrap();
        let shared = ds.overlap.shared(0, 1);
        assert_eq!(shared.len(), 1);
        let g = *shared.iter().next().unwrap();
        let n0 = ds.domains[0].find(NodeKind::User, 7).unwrap();
        let n1 = ds.domains[1].find(NodeKind::User, 7).unwrap();
        assert_eq!(ds.global_id(0, n0), g);
        assert_eq!(ds.global_id(1, n1), g);
        assert!(ds.is_overlapped(0, n0));
        let solo = ds.domains[0].find(NodeKind::User, 1).unwrap();
        assert!(!ds.is_overlapped(0, solo));
    }

    #[test]
    fn empty_overlap_set_is_empty_intersection() {
        let g0 = graph_from_edges(&[(0, 0)]);
        let g1 = {
            let mut b = GraphBuilder::new();
            b.edge(0, 0);
            b.build(1)
        };
        let ds = Dataset::assemble(vec![g0, g1], &[]).unwrap();
        assert!(ds.overlap.shared(0, 1).is_empty());
        // Without registration, equal raw ids stay distinct globally.
        let n0 = ds.domains[0].find(NodeKind::User, 0).unwrap();
        let n1 = ds.domains[1].find(NodeKind::User, 0).unwrap();
        assert_ne!(ds.global_id(0, n0), ds.global_id(1, n1));
    }

    #[test]
    fn overlap_missing_node_is_validation_error() {
        let g0 = graph_from_edges(&[(9, 0)]);
        let g1 = {
            let mut b = GraphBuilder::new();
            b.edge(1, 0);
            b.build(1)
        };
        let entries = vec![OverlapEntry {
            kind: NodeKind::User,
            domain_a: 0,
            raw_a: 9,
            domain_b: 1,
            raw_b: 9,
        }];
        let err = Dataset::assemble(vec![g0, g1], &entries).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn with_edges_keeps_zero_degree_nodes() {
        let g = graph_from_edges(&[(0, 0), (1, 0)]);
        let keep: HashSet<(NodeId, NodeId)> = g.edges().into_iter().take(1).collect();
        let g2 = g.with_edges(&keep);
        assert_eq!(g2.num_nodes(), g.num_nodes());
        assert_eq!(g2.num_edges(), 1);
    }

    proptest! {
        /// Priority is a strict total order reproduced by sorting on
        /// (degree, id); the graph stays bipartite and adjacency stays
        /// symmetric under arbitrary edge loads.
        #[test]
        fn priority_matches_sort_and_graph_is_bipartite(
            edges in proptest::collection::vec((0u64..12, 0u64..12), 0..60)
        ) {
            let g = graph_from_edges(&edges);
            let n = g.num_nodes();
            let mut ranks: Vec<u32> = (0..n).map(|i| g.priority(NodeId(i as u32)).unwrap()).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=n as u32).collect::<Vec<_>>());

            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by_key(|&i| (g.degree(NodeId(i)), i));
            for (pos, &i) in order.iter().enumerate() {
                prop_assert_eq!(g.priority(NodeId(i)).unwrap(), pos as u32 + 1);
            }

            for i in 0..n {
                let a = NodeId(i as u32);
                prop_assert_eq!(g.degree(a), g.neighbors(a).len());
                for &b in g.neighbors(a) {
                    prop_assert_ne!(g.kind(a), g.kind(b));
                    prop_assert!(g.neighbors(b).contains(&a));
                }
            }
        }
    }
}
