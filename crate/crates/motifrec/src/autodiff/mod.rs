//! Reverse-mode automatic differentiation over dense row-major `f64`
//! matrices.
//!
//! A [`Tape`] records eagerly-evaluated ops; [`Tape::backward`] replays
//! them in reverse, accumulating `∂loss/∂input` into per-node gradient
//! buffers. Trainable tensors live in a [`ParamStore`] and enter a tape
//! through [`Bindings::param`], which also routes gradients back after
//! the backward pass. Everything is 64-bit and single-threaded per tape;
//! distinct tapes are independent.

mod check;
mod store;

pub use check::grad_check;
pub use store::{load_store, save_store, ParamStore};

use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&[Vec<f64>], &mut [Vec<f64>])>;

struct Node {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Eager computation tape. One forward graph per instance.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shape(v), (1, 1));
        self.nodes[v.0].values[0]
    }

    /// Gradient buffer of a node after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }

    fn push(
        &mut self,
        values: Vec<f64>,
        rows: usize,
        cols: usize,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        debug_assert_eq!(values.len(), rows * cols);
        debug_assert!(values.iter().all(|x| x.is_finite()), "non-finite op output");
        self.nodes.push(Node {
            values,
            rows,
            cols,
            backward: if requires_grad { backward } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant leaf (no gradient tracked).
    pub fn constant(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(values, rows, cols, false, None)
    }

    pub fn constant_row(&mut self, values: Vec<f64>) -> Var {
        let cols = values.len();
        self.constant(values, 1, cols)
    }

    /// Differentiable leaf; used by [`Bindings`] for parameters.
    pub fn leaf(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(values, rows, cols, true, None)
    }

    /// Runs the backward pass from a scalar loss, filling node gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Dimension(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::Numerical("non-finite loss".into()));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.values.len()])
            .collect();
        self.grads[loss.0][0] = 1.0;
        let vals: Vec<Vec<f64>> = self.nodes.iter().map(|n| n.values.clone()).collect();
        for k in (0..=loss.0).rev() {
            if let Some(f) = &self.nodes[k].backward {
                f(&vals, &mut self.grads);
            }
        }
        Ok(())
    }

    fn check_same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Arithmetic
    // ------------------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "add")?;
        let (r, c) = self.shape(a);
        let values: Vec<f64> = self.values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        let req = self.requires(a) || self.requires(b);
        let out_pre = self.nodes.len();
        Ok(self.push(
            values,
            r,
            c,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out_pre]);
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi;
                    grads[b.0][i] += gi;
                }
                grads[out_pre] = g;
            })),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "sub")?;
        let (r, c) = self.shape(a);
        let values: Vec<f64> = self.values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x - y)
            .collect();
        let req = self.requires(a) || self.requires(b);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            r,
            c,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi;
                    grads[b.0][i] -= gi;
                }
                grads[out] = g;
            })),
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "mul")?;
        let (r, c) = self.shape(a);
        let values: Vec<f64> = self.values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        let req = self.requires(a) || self.requires(b);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            r,
            c,
            req,
            Some(Box::new(move |vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi * vals[b.0][i];
                    grads[b.0][i] += gi * vals[a.0][i];
                }
                grads[out] = g;
            })),
        ))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        let values: Vec<f64> = self.values(a).iter().map(|x| x * k).collect();
        let req = self.requires(a);
        let out = self.nodes.len();
        self.push(
            values,
            r,
            c,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi * k;
                }
                grads[out] = g;
            })),
        )
    }

    /// Sum of same-shaped terms as a single node.
    pub fn add_n(&mut self, terms: &[Var]) -> Result<Var> {
        let first = *terms
            .first()
            .ok_or_else(|| Error::Dimension("add_n of empty list".into()))?;
        for &t in terms {
            self.check_same_shape(first, t, "add_n")?;
        }
        let (r, c) = self.shape(first);
        let mut values = vec![0.0; r * c];
        for &t in terms {
            for (v, x) in values.iter_mut().zip(self.values(t)) {
                *v += x;
            }
        }
        let req = terms.iter().any(|&t| self.requires(t));
        let parents: Vec<usize> = terms.iter().map(|t| t.0).collect();
        let out = self.nodes.len();
        Ok(self.push(
            values,
            r,
            c,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for &p in &parents {
                    for (i, gi) in g.iter().enumerate() {
                        grads[p][i] += gi;
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    // ------------------------------------------------------------------
    // Linear algebra
    // ------------------------------------------------------------------

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul: ({m}x{ka}) · ({kb}x{n})"
            )));
        }
        let mut values = vec![0.0; m * n];
        {
            let av = self.values(a);
            let bv = self.values(b);
            for i in 0..m {
                for k in 0..ka {
                    let aik = av[i * ka + k];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bv[k * n..(k + 1) * n];
                    let crow = &mut values[i * n..(i + 1) * n];
                    for (cj, bj) in crow.iter_mut().zip(brow) {
                        *cj += aik * bj;
                    }
                }
            }
        }
        let req = self.requires(a) || self.requires(b);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            m,
            n,
            req,
            Some(Box::new(move |vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                // dA += dC · Bᵀ ; dB += Aᵀ · dC
                {
                    let bv = &vals[b.0];
                    let ga = &mut grads[a.0];
                    for i in 0..m {
                        for k in 0..ka {
                            let mut acc = 0.0;
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &bv[k * n..(k + 1) * n];
                            for (gj, bj) in grow.iter().zip(brow) {
                                acc += gj * bj;
                            }
                            ga[i * ka + k] += acc;
                        }
                    }
                }
                {
                    let av = &vals[a.0];
                    let gb = &mut grads[b.0];
                    for k in 0..ka {
                        for i in 0..m {
                            let aik = av[i * ka + k];
                            if aik == 0.0 {
                                continue;
                            }
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &mut gb[k * n..(k + 1) * n];
                            for (bj, gj) in brow.iter_mut().zip(grow) {
                                *bj += aik * gj;
                            }
                        }
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// `a (m×k) · bᵀ (n×k)ᵀ -> m×n`; used for attention scores.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.shape(a);
        let (n, kb) = self.shape(b);
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul_nt: ({m}x{ka}) · ({n}x{kb})ᵀ"
            )));
        }
        let mut values = vec![0.0; m * n];
        {
            let av = self.values(a);
            let bv = self.values(b);
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..ka {
                        acc += av[i * ka + k] * bv[j * ka + k];
                    }
                    values[i * n + j] = acc;
                }
            }
        }
        let req = self.requires(a) || self.requires(b);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            m,
            n,
            req,
            Some(Box::new(move |vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                // dA += dC · B ; dB += dCᵀ · A
                {
                    let bv = &vals[b.0];
                    let ga = &mut grads[a.0];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..ka {
                                ga[i * ka + k] += gij * bv[j * ka + k];
                            }
                        }
                    }
                }
                {
                    let av = &vals[a.0];
                    let gb = &mut grads[b.0];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..ka {
                                gb[j * ka + k] += gij * av[i * ka + k];
                            }
                        }
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// Adds a 1×n row vector to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(Error::Dimension(format!(
                "add_row: {:?} + {:?}",
                self.shape(a),
                self.shape(row)
            )));
        }
        let mut values = self.values(a).to_vec();
        {
            let rv = self.values(row);
            for i in 0..m {
                for j in 0..n {
                    values[i * n + j] += rv[j];
                }
            }
        }
        let req = self.requires(a) || self.requires(row);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            m,
            n,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        grads[a.0][i * n + j] += gij;
                        grads[row.0][j] += gij;
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// Multiplies every row of an m×n matrix elementwise by a 1×n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(Error::Dimension(format!(
                "mul_row: {:?} ⊙ {:?}",
                self.shape(a),
                self.shape(row)
            )));
        }
        let mut values = self.values(a).to_vec();
        {
            let rv = self.values(row);
            for i in 0..m {
                for j in 0..n {
                    values[i * n + j] *= rv[j];
                }
            }
        }
        let req = self.requires(a) || self.requires(row);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            m,
            n,
            req,
            Some(Box::new(move |vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        grads[a.0][i * n + j] += gij * vals[row.0][j];
                        grads[row.0][j] += gij * vals[a.0][i * n + j];
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    // ------------------------------------------------------------------
    // Shape ops
    // ------------------------------------------------------------------

    /// Concatenates row vectors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of empty list".into()));
        }
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != 1 {
                return Err(Error::Dimension(format!(
                    "concat_cols expects row vectors, got {r}x{c}"
                )));
            }
            total += c;
        }
        let mut values = Vec::with_capacity(total);
        for &p in parts {
            values.extend_from_slice(self.values(p));
        }
        let req = parts.iter().any(|&p| self.requires(p));
        let meta: Vec<(usize, usize)> = parts.iter().map(|&p| (p.0, self.shape(p).1)).collect();
        let out = self.nodes.len();
        Ok(self.push(
            values,
            1,
            total,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                let mut off = 0;
                for &(p, c) in &meta {
                    for j in 0..c {
                        grads[p][j] += g[off + j];
                    }
                    off += c;
                }
                grads[out] = g;
            })),
        ))
    }

    /// Columns `[start, start+len)` of an m×n matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start + len > n {
            return Err(Error::Dimension(format!(
                "slice_cols [{start}, {}) of {n}",
                start + len
            )));
        }
        let mut values = Vec::with_capacity(m * len);
        for i in 0..m {
            values.extend_from_slice(&self.values(a)[i * n + start..i * n + start + len]);
        }
        let req = self.requires(a);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            m,
            len,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for i in 0..m {
                    for j in 0..len {
                        grads[a.0][i * n + start + j] += g[i * len + j];
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// Concatenates same-height matrices along columns.
    pub fn concat_cols_mat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of empty list".into()))?;
        let (m, _) = self.shape(first);
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != m {
                return Err(Error::Dimension(format!(
                    "concat_cols_mat: row mismatch {r} vs {m}"
                )));
            }
            total += c;
        }
        let mut values = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let (_, c) = self.shape(p);
                values.extend_from_slice(&self.values(p)[i * c..(i + 1) * c]);
            }
        }
        let req = parts.iter().any(|&p| self.requires(p));
        let meta: Vec<(usize, usize)> = parts.iter().map(|&p| (p.0, self.shape(p).1)).collect();
        let out = self.nodes.len();
        Ok(self.push(
            values,
            m,
            total,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for i in 0..m {
                    let mut off = 0;
                    for &(p, c) in &meta {
                        for j in 0..c {
                            grads[p][i * c + j] += g[i * total + off + j];
                        }
                        off += c;
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// Stacks 1×n rows into an m×n matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Dimension("stack of empty list".into()))?;
        let (_, n) = self.shape(first);
        let mut values = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if self.shape(r) != (1, n) {
                return Err(Error::Dimension(format!(
                    "stack_rows: expected 1x{n}, got {:?}",
                    self.shape(r)
                )));
            }
            values.extend_from_slice(self.values(r));
        }
        let req = rows.iter().any(|&r| self.requires(r));
        let parents: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let m = rows.len();
        let out = self.nodes.len();
        Ok(self.push(
            values,
            m,
            n,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for (i, &p) in parents.iter().enumerate() {
                    for j in 0..n {
                        grads[p][j] += g[i * n + j];
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// Selects rows of a matrix; gradients scatter-add back.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(a);
        for &ix in indices {
            if ix >= m {
                return Err(Error::Dimension(format!(
                    "gather_rows: row {ix} out of {m}"
                )));
            }
        }
        let mut values = Vec::with_capacity(indices.len() * n);
        for &ix in indices {
            values.extend_from_slice(&self.values(a)[ix * n..(ix + 1) * n]);
        }
        let req = self.requires(a);
        let idx: Vec<usize> = indices.to_vec();
        let k = indices.len();
        let out = self.nodes.len();
        Ok(self.push(
            values,
            k,
            n,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for (i, &ix) in idx.iter().enumerate() {
                    for j in 0..n {
                        grads[a.0][ix * n + j] += g[i * n + j];
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// Single row of a matrix as 1×n.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        self.gather_rows(a, &[index])
    }

    // ------------------------------------------------------------------
    // Reductions and nonlinearities
    // ------------------------------------------------------------------

    /// Column-wise mean over rows: m×n -> 1×n.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if m == 0 {
            return Err(Error::Dimension("mean over empty matrix".into()));
        }
        let mut values = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                values[j] += self.values(a)[i * n + j];
            }
        }
        let inv = 1.0 / m as f64;
        for v in &mut values {
            *v *= inv;
        }
        let req = self.requires(a);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            1,
            n,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for i in 0..m {
                    for j in 0..n {
                        grads[a.0][i * n + j] += g[j] * inv;
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// Sum of all entries -> 1×1.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let total: f64 = self.values(a).iter().sum();
        let req = self.requires(a);
        let len = self.values(a).len();
        let out = self.nodes.len();
        self.push(
            vec![total],
            1,
            1,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = grads[out][0];
                for i in 0..len {
                    grads[a.0][i] += g;
                }
            })),
        )
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.values(a)[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                values[i * n + j] = e;
                z += e;
            }
            for j in 0..n {
                values[i * n + j] /= z;
            }
        }
        let req = self.requires(a);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            m,
            n,
            req,
            Some(Box::new(move |vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                let y = &vals[out];
                for i in 0..m {
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += g[i * n + j] * y[i * n + j];
                    }
                    for j in 0..n {
                        grads[a.0][i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// Row-wise layer normalization with learnable gain and bias.
    /// A constant row maps to the bias (all zeros under gain 1, bias 0).
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(gain) != (1, n) || self.shape(bias) != (1, n) {
            return Err(Error::Dimension("layer_norm parameter shape".into()));
        }
        let mut values = vec![0.0; m * n];
        let mut norm = vec![0.0; m * n]; // (x-μ)/σ, saved for backward
        let mut sigma = vec![0.0; m];
        for i in 0..m {
            let row = &self.values(a)[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let s = (var + eps).sqrt();
            sigma[i] = s;
            for j in 0..n {
                norm[i * n + j] = (row[j] - mu) / s;
            }
        }
        let gv = self.values(gain).to_vec();
        let bv = self.values(bias).to_vec();
        for i in 0..m {
            for j in 0..n {
                values[i * n + j] = norm[i * n + j] * gv[j] + bv[j];
            }
        }
        let req = self.requires(a) || self.requires(gain) || self.requires(bias);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            m,
            n,
            req,
            Some(Box::new(move |vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                let gainv = &vals[gain.0];
                for i in 0..m {
                    // d bias, d gain
                    for j in 0..n {
                        grads[bias.0][j] += g[i * n + j];
                        grads[gain.0][j] += g[i * n + j] * norm[i * n + j];
                    }
                    // d input: let h = g ⊙ gain (grad wrt normalized row)
                    let mut mean_h = 0.0;
                    let mut mean_hx = 0.0;
                    for j in 0..n {
                        let h = g[i * n + j] * gainv[j];
                        mean_h += h;
                        mean_hx += h * norm[i * n + j];
                    }
                    mean_h /= n as f64;
                    mean_hx /= n as f64;
                    for j in 0..n {
                        let h = g[i * n + j] * gainv[j];
                        grads[a.0][i * n + j] +=
                            (h - mean_h - norm[i * n + j] * mean_hx) / sigma[i];
                    }
                }
                grads[out] = g;
            })),
        ))
    }

    /// Cosine similarity of two row vectors -> 1×1.
    /// Errors on (near-)zero-norm inputs.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "cosine_similarity")?;
        let (r, _) = self.shape(a);
        if r != 1 {
            return Err(Error::Dimension("cosine expects row vectors".into()));
        }
        let av = self.values(a);
        let bv = self.values(b);
        let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na < 1e-12 || nb < 1e-12 {
            return Err(Error::Numerical("zero-norm embedding in similarity".into()));
        }
        let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        let s = dot / (na * nb);
        let req = self.requires(a) || self.requires(b);
        let n = av.len();
        let out = self.nodes.len();
        Ok(self.push(
            vec![s],
            1,
            1,
            req,
            Some(Box::new(move |vals, grads| {
                let g = grads[out][0];
                let av = &vals[a.0];
                let bv = &vals[b.0];
                for j in 0..n {
                    grads[a.0][j] += g * (bv[j] / (na * nb) - s * av[j] / (na * na));
                    grads[b.0][j] += g * (av[j] / (na * nb) - s * bv[j] / (nb * nb));
                }
            })),
        ))
    }

    /// Elementwise natural log.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.values(a).iter().any(|&x| x <= 0.0) {
            return Err(Error::Numerical("log of non-positive value".into()));
        }
        let values: Vec<f64> = self.values(a).iter().map(|x| x.ln()).collect();
        let req = self.requires(a);
        let out = self.nodes.len();
        Ok(self.push(
            values,
            r,
            c,
            req,
            Some(Box::new(move |vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi / vals[a.0][i];
                }
                grads[out] = g;
            })),
        ))
    }

    /// Elementwise exp.
    pub fn exp(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let values: Vec<f64> = self.values(a).iter().map(|x| x.exp()).collect();
        let req = self.requires(a);
        let out = self.nodes.len();
        self.push(
            values,
            r,
            c,
            req,
            Some(Box::new(move |vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi * vals[out][i];
                }
                grads[out] = g;
            })),
        )
    }

    /// SiLU activation `x·σ(x)`; the smooth nonlinearity of the experts.
    pub fn silu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let values: Vec<f64> = self.values(a)
            .iter()
            .map(|&x| x * sigmoid(x))
            .collect();
        let req = self.requires(a);
        let out = self.nodes.len();
        self.push(
            values,
            r,
            c,
            req,
            Some(Box::new(move |vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                for (i, gi) in g.iter().enumerate() {
                    let x = vals[a.0][i];
                    let s = sigmoid(x);
                    grads[a.0][i] += gi * (s + x * s * (1.0 - s));
                }
                grads[out] = g;
            })),
        )
    }

    /// Numerically stable log(Σ exp) over a row vector -> 1×1.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let (r, n) = self.shape(a);
        if r != 1 || n == 0 {
            return Err(Error::Dimension("log_sum_exp expects nonempty row".into()));
        }
        let av = self.values(a);
        let mx = av.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = av.iter().map(|x| (x - mx).exp()).sum();
        let value = mx + z.ln();
        let req = self.requires(a);
        let out = self.nodes.len();
        Ok(self.push(
            vec![value],
            1,
            1,
            req,
            Some(Box::new(move |vals, grads| {
                let g = grads[out][0];
                let av = &vals[a.0];
                for j in 0..n {
                    grads[a.0][j] += g * (av[j] - value).exp();
                }
            })),
        ))
    }
}

/// Compressed sparse rows; constant coefficient matrices for the tape.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_ix: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; rows];
        let mut col_ix = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            debug_assert!(r < rows && c < cols);
            if prev == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_ix.push(c);
                vals.push(v);
                row_counts[r] += 1;
                prev = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for r in 0..rows {
            row_ptr[r + 1] = row_ptr[r] + row_counts[r];
        }
        CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_ix,
            vals,
        }
    }

    /// `y = self · x` for dense row-major x (cols × width).
    pub fn apply(&self, x: &[f64], width: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols * width);
        debug_assert_eq!(y.len(), self.rows * width);
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rows {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_ix[e];
                let w = self.vals[e];
                let src = &x[c * width..(c + 1) * width];
                let dst = &mut y[r * width..(r + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    /// `y += selfᵀ · x`.
    pub fn apply_transpose_add(&self, x: &[f64], width: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows * width);
        debug_assert_eq!(y.len(), self.cols * width);
        for r in 0..self.rows {
            let src = &x[r * width..(r + 1) * width];
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_ix[e];
                let w = self.vals[e];
                let dst = &mut y[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}

impl Tape {
    /// Multiplies a constant sparse matrix into a dense node:
    /// `y = M · x`; backward is `dX += Mᵀ · dY`.
    pub fn sparse_apply(&mut self, m: &std::rc::Rc<CsrMatrix>, x: Var) -> Result<Var> {
        let (xr, width) = self.shape(x);
        if xr != m.cols {
            return Err(Error::Dimension(format!(
                "sparse_apply: ({}x{}) · ({xr}x{width})",
                m.rows, m.cols
            )));
        }
        let mut values = vec![0.0; m.rows * width];
        m.apply(self.values(x), width, &mut values);
        let req = self.requires(x);
        let mc = std::rc::Rc::clone(m);
        let rows = m.rows;
        let out = self.nodes.len();
        Ok(self.push(
            values,
            rows,
            width,
            req,
            Some(Box::new(move |_vals, grads| {
                let g = std::mem::take(&mut grads[out]);
                mc.apply_transpose_add(&g, width, &mut grads[x.0]);
                grads[out] = g;
            })),
        ))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binds named parameters from a [`ParamStore`] onto a tape, at most once
/// per name, and routes gradients back after the backward pass.
#[derive(Default)]
pub struct Bindings {
    bound: Vec<(usize, Var)>,
    by_name: std::collections::HashMap<String, Var>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn param(&mut self, tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.by_name.get(name) {
            return Ok(v);
        }
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::UnknownNode(format!("parameter `{name}`")))?;
        let (rows, cols) = store.shape_at(idx);
        let v = tape.leaf(store.values_at(idx).to_vec(), rows, cols);
        self.bound.push((idx, v));
        self.by_name.insert(name.to_string(), v);
        Ok(v)
    }

    /// Adds tape gradients into the store's gradient slots.
    pub fn accumulate(&self, tape: &Tape, store: &mut ParamStore) {
        for &(idx, v) in &self.bound {
            store.accumulate_grad_at(idx, tape.grad(v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: Vec<f64>, rows: usize, cols: usize) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, values, rows, cols);
        s
    }

    #[test]
    fn sum_of_squares_gradient() {
        // d/dx Σ x² at (1,2,3) = (2,4,6)
        let mut store = store_with("x", vec![1.0, 2.0, 3.0], 1, 3);
        let mut tape = Tape::new();
        let mut binds = Bindings::new();
        let x = binds.param(&mut tape, &store, "x").unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        binds.accumulate(&tape, &mut store);
        assert_eq!(store.grad("x").unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn softmax_of_uniform_logits_is_uniform() {
        let mut tape = Tape::new();
        let a = tape.constant_row(vec![0.7; 5]);
        let s = tape.softmax_rows(a).unwrap();
        for v in tape.values(s) {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_of_vector_with_itself_is_one() {
        let mut tape = Tape::new();
        let v = tape.constant_row(vec![0.3, -1.2, 2.0]);
        let c = tape.cosine_similarity(v, v).unwrap();
        assert!((tape.scalar(c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_of_zero_vector_errors() {
        let mut tape = Tape::new();
        let z = tape.constant_row(vec![0.0, 0.0]);
        let v = tape.constant_row(vec![1.0, 0.0]);
        assert!(matches!(
            tape.cosine_similarity(z, v),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = tape.constant_row(vec![1.0, 2.0]);
        let b = tape.constant_row(vec![1.0, 2.0, 3.0]);
        assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn layer_norm_of_constant_row_is_bias() {
        let mut tape = Tape::new();
        let a = tape.constant_row(vec![4.2; 6]);
        let gain = tape.constant_row(vec![1.0; 6]);
        let bias = tape.constant_row(vec![0.0; 6]);
        let y = tape.layer_norm(a, gain, bias, 1e-5).unwrap();
        for v in tape.values(y) {
            assert!(v.abs() < 1e-12);
        }
        // Width-1 row: eps keeps the division finite.
        let a1 = tape.constant_row(vec![3.0]);
        let g1 = tape.constant_row(vec![1.0]);
        let b1 = tape.constant_row(vec![0.5]);
        let y1 = tape.layer_norm(a1, g1, b1, 1e-5).unwrap();
        assert!((tape.scalar(y1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn concat_routes_gradient_slices_to_sources() {
        // One-hot perturbation: gradient of y[k] lands in the right source.
        let mut store = ParamStore::new();
        store.insert("a", vec![1.0, 2.0], 1, 2);
        store.insert("b", vec![3.0], 1, 1);
        let mut tape = Tape::new();
        let mut binds = Bindings::new();
        let a = binds.param(&mut tape, &store, "a").unwrap();
        let b = binds.param(&mut tape, &store, "b").unwrap();
        let cat = tape.concat_cols(&[a, b]).unwrap();
        let probe = tape.constant_row(vec![0.0, 0.0, 1.0]);
        let picked = tape.mul(cat, probe).unwrap();
        let loss = tape.sum_all(picked);
        tape.backward(loss).unwrap();
        binds.accumulate(&tape, &mut store);
        assert_eq!(store.grad("a").unwrap(), &[0.0, 0.0]);
        assert_eq!(store.grad("b").unwrap(), &[1.0]);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let mut tape = Tape::new();
        let a = tape.constant_row(vec![0.1, -2.0, 3.5, 1.0]);
        let l = tape.log_sum_exp(a).unwrap();
        let naive: f64 = [0.1f64, -2.0, 3.5, 1.0]
            .iter()
            .map(|x| x.exp())
            .sum::<f64>()
            .ln();
        assert!((tape.scalar(l) - naive).abs() < 1e-12);
    }

    #[test]
    fn gather_rows_scatters_gradients() {
        let mut store = store_with("t", vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2);
        let mut tape = Tape::new();
        let mut binds = Bindings::new();
        let t = binds.param(&mut tape, &store, "t").unwrap();
        let g = tape.gather_rows(t, &[2, 0, 2]).unwrap();
        let loss = tape.sum_all(g);
        tape.backward(loss).unwrap();
        binds.accumulate(&tape, &mut store);
        assert_eq!(store.grad("t").unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
