//! Finite-difference gradient checking.

use super::{Bindings, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(x+h) − f(x−h)) / 2h` for every coordinate of the named parameters.
///
/// `f` must rebuild the same computation on every call (no hidden state);
/// it receives a fresh tape plus the store and returns the scalar loss
/// node. Returns the largest relative error observed. Aborts with a
/// diagnostic when the loss is non-finite at any probe point.
pub fn grad_check<F>(store: &mut ParamStore, names: &[String], f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &mut Bindings, &ParamStore) -> Result<Var>,
{
    assert!(h > 0.0);
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let mut binds = Bindings::new();
        let loss = f(&mut tape, &mut binds, store)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {v} in grad check")));
        }
        Ok(v)
    };

    // Reverse-mode gradients at the base point.
    store.zero_grads();
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let mut binds = Bindings::new();
        let loss = f(&mut tape, &mut binds, store)?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::Numerical("non-finite loss in grad check".into()));
        }
        tape.backward(loss)?;
        binds.accumulate(&tape, store);
        let grads = names
            .iter()
            .map(|n| store.grad(n).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        store.zero_grads();
        grads
    };

    let mut max_rel = 0.0f64;
    for (name, grad) in names.iter().zip(&analytic) {
        for k in 0..grad.len() {
            let orig = store.values(name)?[k];
            store.values_mut(name)?[k] = orig + h;
            let fp = eval(store)?;
            store.values_mut(name)?[k] = orig - h;
            let fm = eval(store)?;
            store.values_mut(name)?[k] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = grad[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_tightly() {
        let mut store = ParamStore::new();
        store.insert("x", vec![1.0, 2.0, 3.0], 1, 3);
        let err = grad_check(
            &mut store,
            &["x".to_string()],
            |tape, binds, store| {
                let x = binds.param(tape, store, "x")?;
                let sq = tape.mul(x, x)?;
                Ok(tape.sum_all(sq))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn composite_ops_pass() {
        let mut store = ParamStore::new();
        store.insert("w", vec![0.3, -0.2, 0.1, 0.4, 0.05, -0.3], 2, 3);
        store.insert("v", vec![0.7, -0.4, 0.2], 1, 3);
        store.insert("g", vec![1.1, 0.9, 1.0], 1, 3);
        store.insert("b", vec![0.0, 0.1, -0.1], 1, 3);
        let names: Vec<String> = ["w", "v", "g", "b"].iter().map(|s| s.to_string()).collect();
        let err = grad_check(
            &mut store,
            &names,
            |tape, binds, store| {
                let w = binds.param(tape, store, "w")?;
                let v = binds.param(tape, store, "v")?;
                let g = binds.param(tape, store, "g")?;
                let b = binds.param(tape, store, "b")?;
                let normed = tape.layer_norm(w, g, b, 1e-5)?;
                let act = tape.silu(normed);
                let scores = tape.matmul_nt(act, v)?; // 2x1
                let sm = tape.softmax_rows(scores)?;
                let pooled = tape.mean_rows(sm)?;
                let m = tape.mean_rows(act)?;
                let cs = tape.cosine_similarity(m, v)?;
                let lse = tape.log_sum_exp(v)?;
                let t = tape.add(cs, lse)?;
                let t2 = tape.add(t, pooled)?;
                Ok(tape.sum_all(t2))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let mut store = ParamStore::new();
        store.insert("x", vec![-1.0], 1, 1);
        let res = grad_check(
            &mut store,
            &["x".to_string()],
            |tape, binds, store| {
                let x = binds.param(tape, store, "x")?;
                let l = tape.log(x)?; // log of negative: error path
                Ok(tape.sum_all(l))
            },
            1e-5,
        );
        assert!(res.is_err());
    }
}
