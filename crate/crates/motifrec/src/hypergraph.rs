//! Motif-induced hypergraph and its convolution.
//!
//! Each motif instance becomes one hyperedge (an optional merge folds
//! motifs sharing a node pair into one). With incidence `H`, hyperedge
//! weights `W` (identity here), node degrees `Dv` and hyperedge degrees
//! `De`, one convolution layer is `X ← Dv⁻¹ H W De⁻¹ Hᵀ X`; the output
//! after `L` layers is the average of all layers including layer 0. The
//! composed operator is row-stochastic, so constant inputs are fixed
//! points. Nodes outside every motif are bypassed: they keep their
//! layer-0 rows while remaining visible to lookups.

use std::collections::BTreeMap;
use std::io::Write;
use std::rc::Rc;

use crate::autodiff::{CsrMatrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{DomainGraph, NodeId};
use crate::motif::MotifInstance;

/// Sparse incidence of one domain's sampled motifs.
#[derive(Debug, Clone)]
pub struct HypergraphIncidence {
    pub num_nodes: usize,
    /// Hyperedge -> sorted distinct member nodes.
    pub edges: Vec<Vec<NodeId>>,
    /// Diagonal hyperedge weights `W`.
    pub weights: Vec<f64>,
    /// Node degree diagonal: `Dv_ii = Σ_ε W_εε H_iε`.
    pub dv: Vec<f64>,
    /// Hyperedge degree diagonal: `De_εε = Σ_i H_iε`.
    pub de: Vec<f64>,
}

impl HypergraphIncidence {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_covered(&self, n: NodeId) -> bool {
        self.dv[n.0 as usize] > 0.0
    }

    /// Nodes that appear in at least one hyperedge, ascending.
    pub fn covered_nodes(&self) -> Vec<NodeId> {
        (0..self.num_nodes as u32)
            .map(NodeId)
            .filter(|&n| self.is_covered(n))
            .collect()
    }

    /// Coordinate-list text dump of `H` for debugging.
    pub fn dump_coo(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (e, members) in self.edges.iter().enumerate() {
            for n in members {
                writeln!(w, "{}\t{}\t1", n.0, e)?;
            }
        }
        Ok(())
    }
}

/// Builds the incidence with one hyperedge per motif instance and
/// `W = I`. Empty motif lists and out-of-graph nodes are errors.
pub fn build_incidence(motifs: &[&MotifInstance], domain: &DomainGraph) -> Result<HypergraphIncidence> {
    build_incidence_with(motifs, domain, false)
}

/// As [`build_incidence`]; `merge_shared_pairs` folds motifs that share
/// a node pair into a single hyperedge containing their node union.
pub fn build_incidence_with(
    motifs: &[&MotifInstance],
    domain: &DomainGraph,
    merge_shared_pairs: bool,
) -> Result<HypergraphIncidence> {
    if motifs.is_empty() {
        return Err(Error::Validation("empty hypergraph".into()));
    }
    let num_nodes = domain.num_nodes();
    let mut columns: Vec<Vec<NodeId>> = Vec::with_capacity(motifs.len());
    for m in motifs {
        let mut members = m.nodes.clone();
        for &n in &members {
            if n.0 as usize >= num_nodes {
                return Err(Error::Validation(format!(
                    "motif references unknown node {}",
                    n.0
                )));
            }
        }
        members.sort();
        members.dedup();
        if members.len() < 2 {
            return Err(Error::Validation("hyperedge with fewer than 2 nodes".into()));
        }
        columns.push(members);
    }

    if merge_shared_pairs {
        // Union-find keyed by node pairs: motifs sharing any pair join.
        let mut parent: Vec<usize> = (0..columns.len()).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            let mut root = x;
            while parent[root] != root {
                root = parent[root];
            }
            let mut cur = x;
            while parent[cur] != root {
                let next = parent[cur];
                parent[cur] = root;
                cur = next;
            }
            root
        }
        let mut pair_owner: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
        for (e, members) in columns.iter().enumerate() {
            for a in 0..members.len() {
                for b in a + 1..members.len() {
                    let key = (members[a], members[b]);
                    match pair_owner.get(&key) {
                        Some(&owner) => {
                            let ra = find(&mut parent, owner);
                            let rb = find(&mut parent, e);
                            if ra != rb {
                                parent[rb] = ra;
                            }
                        }
                        None => {
                            pair_owner.insert(key, e);
                        }
                    }
                }
            }
        }
        let mut merged: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
        for (e, members) in columns.iter().enumerate() {
            let root = find(&mut parent, e);
            let entry = merged.entry(root).or_default();
            entry.extend(members.iter().copied());
        }
        columns = merged
            .into_values()
            .map(|mut v| {
                v.sort();
                v.dedup();
                v
            })
            .collect();
    }

    let mut dv = vec![0.0; num_nodes];
    let mut de = Vec::with_capacity(columns.len());
    let weights = vec![1.0; columns.len()];
    for (members, w) in columns.iter().zip(&weights) {
        de.push(members.len() as f64);
        for &n in members {
            dv[n.0 as usize] += w;
        }
    }
    Ok(HypergraphIncidence {
        num_nodes,
        edges: columns,
        weights,
        dv,
        de,
    })
}

/// The composed propagation operator split into two sparse factors:
/// `M1 = Dv⁻¹ H W De⁻¹` (nodes × hyperedges) and `M2 = Hᵀ`.
#[derive(Debug, Clone)]
pub struct ConvOperator {
    pub m1: Rc<CsrMatrix>,
    pub m2: Rc<CsrMatrix>,
}

impl ConvOperator {
    /// Builds the operator over all nodes; errors if any node row has
    /// zero degree (callers must restrict to covered nodes first).
    pub fn new(inc: &HypergraphIncidence) -> Result<ConvOperator> {
        Self::restricted(inc, &(0..inc.num_nodes as u32).map(NodeId).collect::<Vec<_>>())
    }

    /// Builds the operator over a node subset (typically the covered
    /// nodes); rows are indexed by position in `nodes`.
    pub fn restricted(inc: &HypergraphIncidence, nodes: &[NodeId]) -> Result<ConvOperator> {
        let mut pos = vec![usize::MAX; inc.num_nodes];
        for (i, &n) in nodes.iter().enumerate() {
            if inc.dv[n.0 as usize] <= 0.0 {
                return Err(Error::Validation(format!(
                    "node {} has zero hyperedge degree",
                    n.0
                )));
            }
            pos[n.0 as usize] = i;
        }
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        for (e, members) in inc.edges.iter().enumerate() {
            let w = inc.weights[e];
            let de = inc.de[e];
            for &n in members {
                let p = pos[n.0 as usize];
                if p == usize::MAX {
                    continue; // member outside the restriction
                }
                let dv = inc.dv[n.0 as usize];
                t1.push((p, e, w / (dv * de)));
                t2.push((e, p, 1.0));
            }
        }
        Ok(ConvOperator {
            m1: Rc::new(CsrMatrix::from_triplets(nodes.len(), inc.num_edges(), &t1)),
            m2: Rc::new(CsrMatrix::from_triplets(inc.num_edges(), nodes.len(), &t2)),
        })
    }

    /// One propagation layer on the tape.
    pub fn layer(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mid = tape.sparse_apply(&self.m2, x)?;
        tape.sparse_apply(&self.m1, mid)
    }

    /// Dense materialization of `M1·M2` for oracle comparisons.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.m1.rows;
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let mut mid = vec![0.0; self.m2.rows * n];
        self.m2.apply(&eye, n, &mut mid);
        let mut out = vec![0.0; n * n];
        self.m1.apply(&mid, n, &mut out);
        out
    }
}

/// Runs `layers` propagation steps on the tape and returns the average
/// of all layer outputs, layer 0 included. `layers = 0` returns `x0`.
pub fn convolve(tape: &mut Tape, op: &ConvOperator, x0: Var, layers: usize) -> Result<Var> {
    let mut acc = x0;
    let mut x = x0;
    for _ in 0..layers {
        x = op.layer(tape, x)?;
        acc = tape.add(acc, x)?;
    }
    Ok(tape.scale(acc, 1.0 / (layers as f64 + 1.0)))
}

/// Plain-value convolution without a tape; evaluation-side helper.
pub fn convolve_plain(op: &ConvOperator, x0: &[f64], width: usize, layers: usize) -> Vec<f64> {
    let n = op.m1.rows;
    debug_assert_eq!(x0.len(), n * width);
    let mut acc = x0.to_vec();
    let mut x = x0.to_vec();
    let mut mid = vec![0.0; op.m2.rows * width];
    let mut next = vec![0.0; n * width];
    for _ in 0..layers {
        op.m2.apply(&x, width, &mut mid);
        op.m1.apply(&mid, width, &mut next);
        std::mem::swap(&mut x, &mut next);
        for (a, v) in acc.iter_mut().zip(&x) {
            *a += v;
        }
    }
    let inv = 1.0 / (layers as f64 + 1.0);
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}
