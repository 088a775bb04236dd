//! Closed-form item-item similarity.
//!
//! Over the binary interaction matrix `A ∈ {0,1}^{|U|×|I|}`, the model is
//! `B = I − P·DiagMat(1 ⊘ Diag(P))` with `P = (AᵀA + λ_F·I)⁻¹`. The Gram
//! matrix is symmetric positive definite for `λ_F > 0`, so `P` comes from
//! a Cholesky factorization. `diag(B)` is zero by construction.

use crate::error::{Error, Result};
use crate::graph::{DomainGraph, NodeId, NodeKind};

/// Dense item-item similarity matrix for one domain.
#[derive(Debug, Clone)]
pub struct ItemSimMatrix {
    /// Row-major |I|×|I|; entry (j,k) scores item k given item j.
    b: Vec<f64>,
    n: usize,
    /// Item index by per-domain node id.
    index: Vec<Option<usize>>,
    pub lambda_f: f64,
}

impl ItemSimMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, j: usize, k: usize) -> f64 {
        self.b[j * self.n + k]
    }

    /// Symmetrized similarity of an item pair by node id.
    pub fn pair_sim(&self, a: NodeId, b: NodeId) -> Result<f64> {
        let ja = self.index[a.0 as usize]
            .ok_or_else(|| Error::UnknownNode(format!("item {}", a.0)))?;
        let jb = self.index[b.0 as usize]
            .ok_or_else(|| Error::UnknownNode(format!("item {}", b.0)))?;
        Ok(0.5 * (self.entry(ja, jb) + self.entry(jb, ja)))
    }
}

/// Solves the closed form over one domain's interactions.
pub fn ease_item_matrix(graph: &DomainGraph, lambda_f: f64) -> Result<ItemSimMatrix> {
    if lambda_f <= 0.0 {
        return Err(Error::Validation(format!("lambda_f {lambda_f} must be positive")));
    }
    let items = graph.items();
    let n = items.len();
    if n == 0 {
        return Err(Error::Validation("no items in domain".into()));
    }
    let mut index = vec![None; graph.num_nodes()];
    for (j, &it) in items.iter().enumerate() {
        index[it.0 as usize] = Some(j);
    }

    // Gram matrix AᵀA: co-interaction counts accumulated per user.
    let mut gram = vec![0.0; n * n];
    for &u in graph.users() {
        let its: Vec<usize> = graph
            .neighbors(u)
            .iter()
            .map(|&i| index[i.0 as usize].expect("item"))
            .collect();
        for &a in &its {
            for &b in &its {
                gram[a * n + b] += 1.0;
            }
        }
    }
    for j in 0..n {
        gram[j * n + j] += lambda_f;
    }

    let p = cholesky_inverse(&gram, n)?;

    let mut b = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            if j == k {
                continue; // diagonal exactly zero
            }
            b[j * n + k] = -p[j * n + k] / p[k * n + k];
        }
    }
    Ok(ItemSimMatrix {
        b,
        n,
        index,
        lambda_f,
    })
}

/// Inverse of a symmetric positive definite matrix via `G = LLᵀ`.
fn cholesky_inverse(g: &[f64], n: usize) -> Result<Vec<f64>> {
    // Factor.
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Numerical(
                        "gram matrix not positive definite".into(),
                    ));
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // Solve L Y = I column by column, then Lᵀ X = Y.
    let mut inv = vec![0.0; n * n];
    let mut y = vec![0.0; n];
    for col in 0..n {
        for i in 0..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                sum -= l[i * n + k] * y[k];
            }
            y[i] = sum / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= l[k * n + i] * inv[k * n + col];
            }
            inv[i * n + col] = sum / l[i * n + i];
        }
    }
    Ok(inv)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Independent dense route for tests: Gauss-Jordan inverse plus a
    //! literal transcription of the closed form.

    pub fn gauss_jordan_inverse(m: &[f64], n: usize) -> Vec<f64> {
        let mut a = m.to_vec();
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        for col in 0..n {
            // Partial pivot.
            let mut pivot = col;
            for r in col + 1..n {
                if a[r * n + col].abs() > a[pivot * n + col].abs() {
                    pivot = r;
                }
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                    inv.swap(col * n + j, pivot * n + j);
                }
            }
            let d = a[col * n + col];
            assert!(d.abs() > 1e-14, "singular matrix in oracle");
            for j in 0..n {
                a[col * n + j] /= d;
                inv[col * n + j] /= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[r * n + j] -= f * a[col * n + j];
                    inv[r * n + j] -= f * inv[col * n + j];
                }
            }
        }
        inv
    }

    /// `B = I − P·DiagMat(1 ⊘ Diag(P))` spelled out over a dense inverse.
    pub fn ease_closed_form(adjacency: &[f64], users: usize, items: usize, lambda: f64) -> Vec<f64> {
        let n = items;
        let mut gram = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for u in 0..users {
                    s += adjacency[u * n + j] * adjacency[u * n + k];
                }
                gram[j * n + k] = s;
            }
        }
        for j in 0..n {
            gram[j * n + j] += lambda;
        }
        let p = gauss_jordan_inverse(&gram, n);
        let mut b = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                let identity = if j == k { 1.0 } else { 0.0 };
                b[j * n + k] = identity - p[j * n + k] / p[k * n + k];
            }
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::motif::random_bipartite;

    #[test]
    fn single_item_gives_zero_matrix() {
        let mut b = GraphBuilder::new();
        b.edge(0, 0);
        let g = b.build(0);
        let sim = ease_item_matrix(&g, 1.0).unwrap();
        assert_eq!(sim.dim(), 1);
        assert_eq!(sim.entry(0, 0), 0.0);
    }

    #[test]
    fn no_interactions_give_zero_matrix() {
        let mut b = GraphBuilder::new();
        b.node(NodeKind::User, 0);
        b.node(NodeKind::Item, 0);
        b.node(NodeKind::Item, 1);
        let g = b.build(0);
        let sim = ease_item_matrix(&g, 2.5).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert!(sim.entry(j, k).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_by_two_matches_hand_oracle() {
        // A = [[1,1],[1,0]], λ = 1.
        let mut b = GraphBuilder::new();
        b.edge(0, 0);
        b.edge(0, 1);
        b.edge(1, 0);
        let g = b.build(0);
        let sim = ease_item_matrix(&g, 1.0).unwrap();
        let expected = oracle::ease_closed_form(&[1.0, 1.0, 1.0, 0.0], 2, 2, 1.0);
        for j in 0..2 {
            for k in 0..2 {
                assert!(
                    (sim.entry(j, k) - expected[j * 2 + k]).abs() < 1e-10,
                    "({j},{k}): {} vs {}",
                    sim.entry(j, k),
                    expected[j * 2 + k]
                );
            }
        }
    }

    #[test]
    fn matches_oracle_on_random_matrices_with_zero_diagonal() {
        for seed in 0..20u64 {
            let g = random_bipartite(7, 9, 0.4, 1000 + seed);
            let sim = ease_item_matrix(&g, 0.5).unwrap();
            let n = g.num_items();
            // Build the dense adjacency in the same item order.
            let mut index = vec![usize::MAX; g.num_nodes()];
            for (j, &it) in g.items().iter().enumerate() {
                index[it.0 as usize] = j;
            }
            let mut a = vec![0.0; g.num_users() * n];
            for (ui, &u) in g.users().iter().enumerate() {
                for &it in g.neighbors(u) {
                    a[ui * n + index[it.0 as usize]] = 1.0;
                }
            }
            let expected = oracle::ease_closed_form(&a, g.num_users(), n, 0.5);
            for j in 0..n {
                assert_eq!(sim.entry(j, j), 0.0, "diagonal must be exactly zero");
                for k in 0..n {
                    assert!(
                        (sim.entry(j, k) - expected[j * n + k]).abs() < 1e-8,
                        "seed {seed} ({j},{k})"
                    );
                }
            }
        }
    }

    #[test]
    fn non_positive_lambda_rejected() {
        let mut b = GraphBuilder::new();
        b.edge(0, 0);
        let g = b.build(0);
        assert!(ease_item_matrix(&g, 0.0).is_err());
    }
}
