//! Central finite-difference gradient checking.
//!
//! The forward closure must be deterministic; a non-deterministic forward
//! produces meaningless numbers and is not detected.

use super::{Graph, NodeId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
}

/// Relative error used by the checker: `|a − n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

fn eval_loss<T, F>(store: &ParamStore<T>, forward: &mut F) -> Result<f64>
where
    T: Scalar,
    F: FnMut(&mut Graph<'_, T>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let loss = forward(&mut g)?;
    g.value(loss)
        .scalar_value()
        .map(Scalar::as_f64)
        .ok_or_else(|| Error::Usage("gradient check forward must return a scalar".into()))
}

/// Gradients from one backward pass, one tensor per parameter (zeros if unreached).
pub fn analytic_gradients<T, F>(store: &ParamStore<T>, mut forward: F) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: FnMut(&mut Graph<'_, T>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let loss = forward(&mut g)?;
    let grads = g.backward(loss)?;
    Ok(store
        .ids()
        .map(|id| {
            grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
        })
        .collect())
}

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every parameter entry.
pub fn numeric_gradients<T, F>(store: &mut ParamStore<T>, eps: f64, mut forward: F) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: FnMut(&mut Graph<'_, T>) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference eps must be > 0, got {eps}"
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.value(id).len();
        let mut grad = Tensor::zeros(store.value(id).shape());
        for k in 0..n {
            let orig = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = T::of(orig.as_f64() + eps);
            let plus = eval_loss(store, &mut forward)?;
            store.get_mut(id).value.data_mut()[k] = T::of(orig.as_f64() - eps);
            let minus = eval_loss(store, &mut forward)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            grad.data_mut()[k] = T::of((plus - minus) / (2.0 * eps));
        }
        out.push(grad);
    }
    Ok(out)
}

/// Richardson-extrapolated central differences, `(4·D(ε/2) − D(ε)) / 3`.
///
/// Truncation error drops from O(ε²) to O(ε⁴), which allows a larger `ε`
/// and so less cancellation noise on small gradients.
pub fn extrapolated_gradients<T, F>(
    store: &mut ParamStore<T>,
    eps: f64,
    mut forward: F,
) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: FnMut(&mut Graph<'_, T>) -> Result<NodeId>,
{
    let coarse = numeric_gradients(store, eps, &mut forward)?;
    let fine = numeric_gradients(store, eps / 2.0, &mut forward)?;
    Ok(coarse
        .into_iter()
        .zip(fine)
        .map(|(c, f)| {
            let data = c
                .data()
                .iter()
                .zip(f.data())
                .map(|(&c, &f)| T::of((4.0 * f.as_f64() - c.as_f64()) / 3.0))
                .collect();
            Tensor::new(c.shape().to_vec(), data).expect("same shape")
        })
        .collect())
}

pub fn compare<T: Scalar>(store: &ParamStore<T>, analytic: &[Tensor<T>], numeric: &[Tensor<T>]) -> GradCheck {
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        entries: 0,
    };
    for ((p, a), n) in store.iter().zip(analytic).zip(numeric) {
        for (k, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(av.as_f64(), nv.as_f64());
            report.entries += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = Some((p.name.clone(), k));
            }
        }
    }
    report
}

/// Perturbs every parameter entry by ±`eps` and reports the worst relative
/// disagreement with the analytic gradient.
pub fn finite_diff_check<T, F>(store: &mut ParamStore<T>, eps: f64, mut forward: F) -> Result<GradCheck>
where
    T: Scalar,
    F: FnMut(&mut Graph<'_, T>) -> Result<NodeId>,
{
    let analytic = analytic_gradients(store, &mut forward)?;
    let numeric = numeric_gradients(store, eps, &mut forward)?;
    Ok(compare(store, &analytic, &numeric))
}
