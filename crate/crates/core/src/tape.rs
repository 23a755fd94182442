//! Dynamic reverse-mode autodiff tape.
//!
//! The tape is rebuilt on every training step: operations append nodes, each
//! node stores its forward value and a backward closure producing parent
//! gradients. Nodes only ever reference earlier nodes, so a single reverse
//! sweep from the loss is a valid topological order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

type BackwardFn<S> = Box<dyn Fn(&Tensor<S>) -> Vec<Option<Tensor<S>>> + Send>;

struct Node<S: Scalar> {
    value: Tensor<S>,
    needs_grad: bool,
    parents: Vec<ValueId>,
    backward: Option<BackwardFn<S>>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert an input node. Gradients flow into it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> ValueId {
        self.nodes.push(Node {
            value,
            needs_grad: requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        ValueId(self.nodes.len() - 1)
    }

    /// Input node that never receives gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> ValueId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn needs_grad(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Append an op result. Verifies the output is finite.
    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor<S>,
        parents: Vec<ValueId>,
        backward: BackwardFn<S>,
    ) -> Result<ValueId> {
        value.ensure_finite(op)?;
        let needs_grad = parents.iter().any(|&p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            needs_grad,
            parents,
            backward: if needs_grad { Some(backward) } else { None },
        });
        Ok(ValueId(self.nodes.len() - 1))
    }

    /// Which parents need a gradient (lets backward closures skip work).
    pub(crate) fn parent_needs(&self, parents: &[ValueId]) -> Vec<bool> {
        parents.iter().map(|&p| self.nodes[p.0].needs_grad).collect()
    }

    /// Reverse sweep from a scalar root. Returns per-node gradients.
    pub fn backward(&self, root: ValueId) -> Result<Gradients<S>> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(format!(
                "backward root must be a scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::ones(&[1]));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            if let Some(back) = &node.backward {
                let parent_grads = back(&grad_out);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (pid, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !self.nodes[pid.0].needs_grad {
                        continue;
                    }
                    pg.ensure_finite("backward")?;
                    match &mut grads[pid.0] {
                        Some(acc) => acc.add_assign(&pg)?,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            // leaves keep their gradient; interior grads were freed by take()
            if node.parents.is_empty() {
                grads[id] = Some(grad_out);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by one backward sweep: only leaves retain gradient.
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ValueId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor<S>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_through_mul_and_add() {
        // f(x, y) = sum(x * y + x)  => df/dx = y + 1, df/dy = x
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![2.0, 3.0]).unwrap(), true);
        let y = tape.leaf(Tensor::from_vec(&[2], vec![5.0, -1.0]).unwrap(), true);
        let xy = tape.mul(x, y).unwrap();
        let s = tape.add(xy, x).unwrap();
        let loss = tape.sum_all(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().as_slice(), &[6.0, 0.0]);
        assert_eq!(grads.get(y).unwrap().as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn grad_accumulates_over_reuse() {
        // f(x) = sum(x * x) => df/dx = 2x
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 4.0]).unwrap(), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().as_slice(), &[2.0, -4.0, 8.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);
        let c = tape.constant(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum_all(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn non_finite_op_output_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[1], vec![0.0]).unwrap(), true);
        // ln(0) = -inf must surface as a numeric error
        assert!(tape.ln(x).is_err());
    }
}
