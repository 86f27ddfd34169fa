//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices.
//!
//! The engine is deliberately first order. Networks that need the gradient of
//! a critic with respect to its input (the WGAN-GP penalty) build that
//! gradient as an ordinary expression with [`Mlp::input_gradient`], which can
//! then be differentiated with respect to the parameters like any other
//! expression.

mod error;
mod graph;
mod mlp;
mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Activation, Gradients, Graph, Var};
pub use mlp::{Layer, Mlp, MlpForward};
pub use optim::Adam;
pub use params::{ParamSet, ParamVars};
pub use tensor::Tensor;

/// Computes the value and flattened parameter gradient of a scalar expression.
pub fn value_and_grad<F>(params: &ParamSet, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Graph, &ParamVars) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars = graph.params(params);
    let loss = build(&mut graph, &vars)?;
    let grads = graph.backward(loss)?;
    Ok((graph.value(loss).scalar()?, grads.flatten(&vars)))
}

/// Per-example parameter gradients of a row-decomposable loss.
///
/// `build` constructs the loss of example `i` alone; each example gets its own
/// graph, so the gradients are exact and independent. Results come back in
/// example order.
pub fn per_example_grads<F>(params: &ParamSet, examples: usize, mut build: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&mut Graph, &ParamVars, usize) -> Result<Var>,
{
    (0..examples)
        .map(|i| {
            let mut graph = Graph::new();
            let vars = graph.params(params);
            let loss = build(&mut graph, &vars, i)?;
            Ok(graph.backward(loss)?.flatten(&vars))
        })
        .collect()
}
