//! Dense-tensor differentiable computation: tensors, a recording graph with
//! reverse-mode gradients, the layer set used by the networks, Adam and a
//! finite-difference gradient checker.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{adam_update, Adam, AdamConfig, OptimizerState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use layers::{fc_forward, lstm_step, LayerKind, LayerSpec};
pub use params::ModelParams;
pub use tensor::Tensor;

use crate::error::Result;
use crate::scalar::Scalar;

/// Evaluates the scalar built by `build` and its gradient with respect to
/// every tensor in `params`.
///
/// `build` receives the graph and one leaf per parameter, in slot order.
/// Parameters the expression never touches get zero gradients.
pub fn grad<F, B>(params: &ModelParams<F>, build: B) -> Result<(F, Vec<Tensor<F>>)>
where
    F: Scalar,
    B: FnOnce(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = bind(&mut g, params);
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss, params.len())?;
    let value = g.value(loss).item();
    let grads = grads
        .into_iter()
        .zip(params.iter())
        .map(|(gr, p)| gr.unwrap_or_else(|| Tensor::zeros(p.tensor.shape())))
        .collect();
    Ok((value, grads))
}

/// Evaluates `build` without computing gradients.
pub fn eval<F, B, T>(params: &ModelParams<F>, build: B) -> Result<T>
where
    F: Scalar,
    B: FnOnce(&mut Graph<F>, &[Var]) -> Result<T>,
{
    let mut g = Graph::new();
    let vars = bind(&mut g, params);
    build(&mut g, &vars)
}

/// One leaf per parameter tensor, in slot order.
pub fn bind<F: Scalar>(g: &mut Graph<F>, params: &ModelParams<F>) -> Vec<Var> {
    params
        .iter()
        .enumerate()
        .map(|(slot, p)| g.param(slot, p.tensor.clone()))
        .collect()
}

/// Differentiable squared L2 norm over every parameter not flagged exempt.
pub fn l2_expr<F: Scalar>(g: &mut Graph<F>, vars: &[Var], params: &ModelParams<F>) -> Result<Var> {
    let mut total = g.scalar(F::zero());
    for (v, p) in vars.iter().zip(params.iter()) {
        if p.l2_exempt {
            continue;
        }
        let sq = g.mul(*v, *v)?;
        let s = g.sum(sq);
        total = g.add(total, s)?;
    }
    Ok(total)
}
