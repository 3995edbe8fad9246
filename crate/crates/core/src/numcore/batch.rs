use rayon::prelude::*;

use super::graph::{Graph, Var};
use super::params::{Grads, ParamSet};
use super::real::Real;
use super::NumError;

/// Evaluates `f` for every item on its own tape (in parallel) and sums the
/// parameter gradients in item order, so the result does not depend on the
/// thread count.
pub fn batch_grads<T, I, S, E, F>(
    params: &ParamSet<T>,
    items: &[I],
    f: F,
) -> Result<(Vec<(T, S)>, Grads<T>), E>
where
    T: Real,
    I: Sync,
    S: Send,
    E: From<NumError> + Send,
    F: Fn(&mut Graph<T>, &[Var], &I) -> Result<(Var, S), E> + Sync,
{
    let per_item: Vec<Result<(T, S, Grads<T>), E>> = items
        .par_iter()
        .map(|item| {
            let mut g = Graph::new();
            let vars = g.bind(params);
            let (out, extra) = f(&mut g, &vars, item)?;
            let value = g.scalar(out);
            let grads = g.backward(out)?.param_grads(&vars, params);
            Ok((value, extra, grads))
        })
        .collect();

    let mut total = Grads::zeros_like(params);
    let mut outputs = Vec::with_capacity(items.len());
    for r in per_item {
        let (value, extra, grads) = r?;
        total.add_assign(&grads);
        outputs.push((value, extra));
    }
    Ok((outputs, total))
}
