//! Triangle motif enumeration.
//!
//! Three families over one domain:
//! - T1: three users, every pair sharing at least `a1` common items
//!   (user-user friendship is defined by that same co-interaction rule);
//! - T2: two users sharing at least `a2` common items plus one item both
//!   interacted with — one instance per shared item;
//! - T3: a user plus two of its items whose pair similarity exceeds `a3`.
//!
//! Thresholds `a1 = a2` are the lower median of user degrees; `a3` is 0.
//! Enumeration is deterministic given the graph and thresholds.

use std::collections::HashMap;

use super::ease::ItemSimMatrix;
use super::{MotifContext, MotifInstance, MotifKind, TriangleKind};
use crate::error::{Error, Result};
use crate::graph::{DomainGraph, NodeId, NodeKind};

/// Gating thresholds for the three triangle families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleThresholds {
    pub a1: usize,
    pub a2: usize,
    pub a3: f64,
}

/// Lower median of user degrees for `a1`/`a2`; `a3 = 0`.
pub fn compute_thresholds(graph: &DomainGraph) -> Result<TriangleThresholds> {
    if graph.num_users() == 0 {
        return Err(Error::Validation("thresholds need at least one user".into()));
    }
    let mut degrees: Vec<usize> = graph.users().iter().map(|&u| graph.degree(u)).collect();
    degrees.sort_unstable();
    let median = degrees[(degrees.len() - 1) / 2];
    Ok(TriangleThresholds {
        a1: median,
        a2: median,
        a3: 0.0,
    })
}

/// Common-item counts for every user pair that shares at least one item.
/// Keys are ordered `(smaller id, larger id)`.
fn common_item_counts(graph: &DomainGraph) -> HashMap<(NodeId, NodeId), usize> {
    let mut counts: HashMap<(NodeId, NodeId), usize> = HashMap::new();
    for &item in graph.items() {
        let users = graph.neighbors(item);
        for a in 0..users.len() {
            for b in a + 1..users.len() {
                let key = if users[a] < users[b] {
                    (users[a], users[b])
                } else {
                    (users[b], users[a])
                };
                *counts.entry(key).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Enumerates one triangle family, feeding instances to `f` in
/// deterministic order. `sim` is required for T3 only.
pub fn for_each_triangle(
    graph: &DomainGraph,
    kind: TriangleKind,
    thresholds: &TriangleThresholds,
    sim: Option<&ItemSimMatrix>,
    mut f: impl FnMut(MotifInstance),
) -> Result<()> {
    let make = |nodes: Vec<NodeId>| MotifInstance {
        kind: MotifKind::Triangle(kind),
        nodes,
        central: 0,
        domain_id: graph.domain_id,
        context: MotifContext::Specific,
    };
    match kind {
        TriangleKind::T1 => {
            if thresholds.a1 == 0 {
                return Err(Error::Validation(
                    "a1 = 0 would make every user pair friends".into(),
                ));
            }
            let counts = common_item_counts(graph);
            // Friendship adjacency, sorted for ordered triple enumeration.
            let mut friends: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
            for (&(a, b), &c) in &counts {
                if c >= thresholds.a1 {
                    friends.entry(a).or_default().push(b);
                    friends.entry(b).or_default().push(a);
                }
            }
            for v in friends.values_mut() {
                v.sort();
            }
            let mut users: Vec<NodeId> = friends.keys().copied().collect();
            users.sort();
            for &u in &users {
                let fu = &friends[&u];
                for &v in fu.iter().filter(|&&v| v > u) {
                    let fv = &friends[&v];
                    // w > v adjacent to both u and v.
                    for &w in fu.iter().filter(|&&w| w > v) {
                        if fv.binary_search(&w).is_ok() {
                            f(make(vec![u, v, w]));
                        }
                    }
                }
            }
        }
        TriangleKind::T2 => {
            let counts = common_item_counts(graph);
            let mut pairs: Vec<(NodeId, NodeId)> = counts
                .iter()
                .filter(|&(_, &c)| c >= thresholds.a2)
                .map(|(&k, _)| k)
                .collect();
            pairs.sort();
            for (u, v) in pairs {
                // Shared items in sorted order; u is the smaller user.
                let mut shared: Vec<NodeId> = graph
                    .neighbors(u)
                    .iter()
                    .copied()
                    .filter(|i| graph.neighbors(v).contains(i))
                    .collect();
                shared.sort();
                for i in shared {
                    f(make(vec![u, v, i]));
                }
            }
        }
        TriangleKind::T3 => {
            let sim = sim.ok_or_else(|| {
                Error::Validation("T3 sampling requires the item similarity matrix".into())
            })?;
            for &u in graph.users() {
                let mut its: Vec<NodeId> = graph.neighbors(u).to_vec();
                its.sort();
                for a in 0..its.len() {
                    for b in a + 1..its.len() {
                        if sim.pair_sim(its[a], its[b])? > thresholds.a3 {
                            f(make(vec![u, its[a], its[b]]));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Materialized triangle list; empty when nothing qualifies.
pub fn sample_triangles(
    graph: &DomainGraph,
    kind: TriangleKind,
    thresholds: &TriangleThresholds,
    sim: Option<&ItemSimMatrix>,
) -> Result<Vec<MotifInstance>> {
    let mut out = Vec::new();
    for_each_triangle(graph, kind, thresholds, sim, |m| out.push(m))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::motif::ease_item_matrix;

    #[test]
    fn thresholds_are_lower_median_of_user_degrees() {
        // Degrees {1,3,5} -> median 3.
        let mut b = GraphBuilder::new();
        b.edge(0, 0);
        for i in 0..3 {
            b.edge(1, i);
        }
        for i in 0..5 {
            b.edge(2, i);
        }
        let g = b.build(0);
        let t = compute_thresholds(&g).unwrap();
        assert_eq!(t.a1, 3);
        assert_eq!(t.a2, 3);
        assert_eq!(t.a3, 0.0);

        // Even count {2,4} -> lower median 2.
        let mut b = GraphBuilder::new();
        b.edge(0, 0);
        b.edge(0, 1);
        for i in 0..4 {
            b.edge(1, i);
        }
        let g = b.build(0);
        assert_eq!(compute_thresholds(&g).unwrap().a1, 2);
    }

    #[test]
    fn t2_emits_one_instance_per_shared_item() {
        // Two users over the same 3 items; a2 = 2.
        let mut b = GraphBuilder::new();
        for u in 0..2 {
            for i in 0..3 {
                b.edge(u, i);
            }
        }
        let g = b.build(0);
        let t = TriangleThresholds { a1: 2, a2: 2, a3: 0.0 };
        let list = sample_triangles(&g, TriangleKind::T2, &t, None).unwrap();
        assert_eq!(list.len(), 3);
        let u0 = g.find(NodeKind::User, 0).unwrap();
        for m in &list {
            assert_eq!(m.central_node(), u0, "central is the smaller user");
            assert_eq!(m.nodes.len(), 3);
            m.validate(&g).unwrap();
        }
        // Brute-force oracle: all (u,v,i) triples with the gate applied.
        let mut expected = 0;
        let users = g.users();
        for a in 0..users.len() {
            for b2 in a + 1..users.len() {
                let common: Vec<NodeId> = g
                    .neighbors(users[a])
                    .iter()
                    .copied()
                    .filter(|i| g.neighbors(users[b2]).contains(i))
                    .collect();
                if common.len() >= t.a2 {
                    expected += common.len();
                }
            }
        }
        assert_eq!(list.len(), expected);
    }

    #[test]
    fn t1_empty_when_threshold_unreachable() {
        let mut b = GraphBuilder::new();
        for u in 0..3 {
            for i in 0..2 {
                b.edge(u, i);
            }
        }
        let g = b.build(0);
        let t = TriangleThresholds { a1: 99, a2: 99, a3: 0.0 };
        assert!(sample_triangles(&g, TriangleKind::T1, &t, None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn t1_finds_mutually_friendly_user_triples() {
        // Users 0,1,2 all share items {0,1}; user 3 shares nothing.
        let mut b = GraphBuilder::new();
        for u in 0..3 {
            b.edge(u, 0);
            b.edge(u, 1);
        }
        b.edge(3, 7);
        let g = b.build(0);
        let t = TriangleThresholds { a1: 2, a2: 2, a3: 0.0 };
        let list = sample_triangles(&g, TriangleKind::T1, &t, None).unwrap();
        assert_eq!(list.len(), 1);
        let m = &list[0];
        // Central is the lexicographically smallest user.
        assert_eq!(m.central_node(), g.find(NodeKind::User, 0).unwrap());
        assert!(m.nodes.iter().all(|&n| g.kind(n) == NodeKind::User));
    }

    #[test]
    fn t3_gates_on_positive_pair_similarity() {
        // User 0 interacts with items {0,1}; another user shares them, so
        // the items co-occur and similarity is positive.
        let mut b = GraphBuilder::new();
        b.edge(0, 0);
        b.edge(0, 1);
        b.edge(1, 0);
        b.edge(1, 1);
        let g = b.build(0);
        let sim = ease_item_matrix(&g, 0.5).unwrap();
        let i0 = g.find(NodeKind::Item, 0).unwrap();
        let i1 = g.find(NodeKind::Item, 1).unwrap();
        assert!(sim.pair_sim(i0, i1).unwrap() > 0.0);
        let t = TriangleThresholds { a1: 1, a2: 1, a3: 0.0 };
        let list = sample_triangles(&g, TriangleKind::T3, &t, Some(&sim)).unwrap();
        // One instance per user: (u, i0, i1).
        assert_eq!(list.len(), 2);
        for m in &list {
            assert_eq!(g.kind(m.central_node()), NodeKind::User);
            assert_eq!(m.central, 0);
        }
        // Without the similarity matrix, T3 is a validation error.
        assert!(sample_triangles(&g, TriangleKind::T3, &t, None).is_err());
    }

    #[test]
    fn enumeration_is_deterministic() {
        let g = crate::motif::random_bipartite(8, 6, 0.5, 3);
        let t = compute_thresholds(&g).unwrap();
        let sim = ease_item_matrix(&g, 1.0).unwrap();
        for kind in [TriangleKind::T1, TriangleKind::T2, TriangleKind::T3] {
            let a = sample_triangles(&g, kind, &t, Some(&sim)).unwrap();
            let b = sample_triangles(&g, kind, &t, Some(&sim)).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.nodes, y.nodes);
            }
        }
    }
}
