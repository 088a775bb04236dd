//! Random walk sampling on the bipartite interaction graph.

use rand::Rng;

use super::{MotifContext, MotifInstance, MotifKind};
use crate::error::{Error, Result};
use crate::graph::{DomainGraph, NodeId};

/// Samples one walk of `length` nodes starting at `start`, moving to a
/// uniformly random neighbor at each step. Walks alternate sides by
/// bipartiteness; the start node is the central node.
pub fn sample_random_walk(
    graph: &DomainGraph,
    start: NodeId,
    length: usize,
    rng: &mut impl Rng,
) -> Result<MotifInstance> {
    if length < 2 {
        return Err(Error::Sampling(format!("walk length {length} < 2")));
    }
    if graph.degree(start) == 0 {
        return Err(Error::Sampling(format!(
            "walk start {} is isolated",
            start.0
        )));
    }
    let mut nodes = Vec::with_capacity(length);
    nodes.push(start);
    let mut here = start;
    for _ in 1..length {
        let nbrs = graph.neighbors(here);
        here = nbrs[rng.gen_range(0..nbrs.len())];
        nodes.push(here);
    }
    Ok(MotifInstance {
        kind: MotifKind::Walk,
        nodes,
        central: 0,
        domain_id: graph.domain_id,
        context: MotifContext::Specific,
    })
}
