//! Reverse-mode differentiation over [`Tensor`] graphs.
//!
//! Every tracked tensor owns a node in an implicit DAG. Nodes are created
//! with monotonically increasing ids, so a descending-id sweep of the
//! reachable set is a valid reverse topological order. Graphs live only as
//! long as the tensors that reference them; there is no persistent tape.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Gradients of the parent tensors, aligned with `Node::parents`. `None`
/// marks an input that is not tracked and needs no gradient.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) parents: Vec<Option<Rc<Node>>>,
    pub(crate) backward: BackwardFn,
}

impl Node {
    /// Leaf node for a tracked tensor with no ancestors.
    pub(crate) fn leaf() -> Rc<Node> {
        Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            parents: Vec::new(),
            backward: Box::new(|_| Vec::new()),
        })
    }

    /// Interior node. Returns `None` when no input is tracked, so untracked
    /// computations never allocate graph state.
    pub(crate) fn interior(
        parents: Vec<Option<Rc<Node>>>,
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Option<Rc<Node>> {
        if parents.iter().all(|p| p.is_none()) {
            return None;
        }
        Some(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            parents,
            backward: Box::new(backward),
        }))
    }
}

/// Accumulated gradients keyed by graph node, produced by [`backward`].
pub struct Gradients {
    map: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `t`, if `t` was tracked and reachable.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        t.node_id().and_then(|id| self.map.get(&id)).map(|v| &v[..])
    }
}

/// Runs reverse-mode accumulation from a scalar loss.
///
/// Gradients sum over fan-out: a tensor used twice receives the sum of both
/// path contributions.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    if loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let root = loss.node().ok_or_else(|| {
        Error::Contract("backward requires a loss that belongs to a gradient graph".into())
    })?;

    // Collect the reachable subgraph.
    let mut seen: HashSet<u64> = HashSet::new();
    let mut order: Vec<Rc<Node>> = Vec::new();
    let mut stack: Vec<Rc<Node>> = vec![root.clone()];
    while let Some(n) = stack.pop() {
        if !seen.insert(n.id) {
            continue;
        }
        for p in n.parents.iter().flatten() {
            stack.push(p.clone());
        }
        order.push(n);
    }
    // Descending id = reverse topological order (parents precede children).
    order.sort_by(|a, b| b.id.cmp(&a.id));

    let mut map: HashMap<u64, Vec<f64>> = HashMap::new();
    map.insert(root.id, vec![1.0]);

    for node in &order {
        let out_grad = match map.get(&node.id) {
            Some(g) => g.clone(),
            None => continue, // not on any path to the loss
        };
        let parent_grads = (node.backward)(&out_grad);
        debug_assert_eq!(parent_grads.len(), node.parents.len());
        for (parent, grad) in node.parents.iter().zip(parent_grads) {
            let (Some(parent), Some(grad)) = (parent, grad) else {
                continue;
            };
            match map.entry(parent.id) {
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    let acc = e.get_mut();
                    debug_assert_eq!(acc.len(), grad.len());
                    for (a, g) in acc.iter_mut().zip(&grad) {
                        *a += g;
                    }
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(grad);
                }
            }
        }
    }
    Ok(Gradients { map })
}

/// Compares the reverse-mode gradient of `f` at `point` against central
/// finite differences, component by component. Returns the worst relative
/// error, with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if step <= 0.0 {
        return Err(Error::Contract("grad_check step must be positive".into()));
    }
    let tracked = point.tracked();
    let out = f(&tracked)?;
    if out.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check target must return a scalar, got shape {:?}",
            out.shape()
        )));
    }
    let grads = backward(&out)?;
    let analytic: Vec<f64> = match grads.wrt(&tracked) {
        Some(g) => g.to_vec(),
        None => vec![0.0; point.numel()], // point does not influence the output
    };

    let base = point.data().to_vec();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += step;
        let mut minus = base.clone();
        minus[i] -= step;
        let f_plus = f(&Tensor::from_vec(point.shape().to_vec(), plus)?)?.item()?;
        let f_minus = f(&Tensor::from_vec(point.shape().to_vec(), minus)?)?.item()?;
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identity_loss_has_unit_gradient() {
        let x = Tensor::scalar(3.5).tracked();
        let grads = backward(&x).unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[1.0]);
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let x = Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5])
            .unwrap()
            .tracked();
        let loss = x.mul(&x).unwrap().sum();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn fanout_accumulates() {
        let y = Tensor::scalar(4.0).tracked();
        let loss = y.add(&y).unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.wrt(&y).unwrap(), &[2.0]);
    }

    #[test]
    fn untracked_tensors_receive_no_gradient() {
        let x = Tensor::scalar(1.0).tracked();
        let c = Tensor::scalar(2.0);
        let loss = x.mul(&c).unwrap();
        let grads = backward(&loss).unwrap();
        assert!(grads.wrt(&c).is_none());
        assert_eq!(grads.wrt(&x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let x = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap().tracked();
        assert!(matches!(backward(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_rejects_untracked_loss() {
        let x = Tensor::scalar(1.0);
        assert!(matches!(backward(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_matches_expanded_graph() {
        let data = vec![0.3, -1.2, 2.0, 0.7];
        let x = Tensor::from_vec(vec![4], data.clone()).unwrap().tracked();
        // shared: y = x*x used twice
        let y = x.mul(&x).unwrap();
        let shared = y.add(&y).unwrap().sum();
        let g_shared = backward(&shared).unwrap().wrt(&x).unwrap().to_vec();

        let x2 = Tensor::from_vec(vec![4], data).unwrap().tracked();
        let expanded = x2
            .mul(&x2)
            .unwrap()
            .add(&x2.mul(&x2).unwrap())
            .unwrap()
            .sum();
        let g_expanded = backward(&expanded).unwrap().wrt(&x2).unwrap().to_vec();
        assert_eq!(g_shared, g_expanded);
    }

    #[test]
    fn grad_check_quadratic_is_tight() {
        let point = Tensor::scalar(3.0);
        let err = grad_check(|x| Ok(x.mul(x)?.sum()), &point, 1e-5).unwrap();
        assert!(err < 1e-9, "quadratic grad_check error {err}");
    }

    #[test]
    fn grad_check_linear_is_tighter() {
        let point = Tensor::from_vec(vec![3], vec![1.0, -0.5, 2.0]).unwrap();
        let w = Tensor::from_vec(vec![3], vec![0.4, 1.5, -2.0]).unwrap();
        let err = grad_check(|x| Ok(x.mul(&w)?.sum()), &point, 1e-5).unwrap();
        assert!(err < 1e-10, "linear grad_check error {err}");
    }
}
