//! Tree-structured encoder, attention and decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{dot_attention, mean_context, ChildSumTreeLstmCell, Linear, NodeState};
use crate::error::NnError;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Scalar;

/// Tree topology with nodes in post-order: every child index is smaller
/// than its parent's, and the root is the last node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeShape {
    children: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
}

impl TreeShape {
    /// Builds a shape from per-node child lists already in post-order.
    pub fn from_children(children: Vec<Vec<usize>>) -> Result<Self, String> {
        let n = children.len();
        if n == 0 {
            return Err("empty tree".into());
        }
        let mut parent = vec![None; n];
        for (p, kids) in children.iter().enumerate() {
            for &c in kids {
                if c >= p {
                    return Err(format!("child {c} of {p} is not in post-order"));
                }
                if parent[c].replace(p).is_some() {
                    return Err(format!("node {c} has two parents"));
                }
            }
        }
        let roots = parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 || parent[n - 1].is_some() {
            return Err("tree must have exactly one root, in last position".into());
        }
        Ok(Self { children, parent })
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn root(&self) -> usize {
        self.children.len() - 1
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }
}

/// Runs a Child-Sum Tree-LSTM bottom-up; returns the state of every node.
pub fn encode_tree<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cell: &ChildSumTreeLstmCell,
    shape: &TreeShape,
    inputs: &[Var],
) -> Result<Vec<NodeState>, NnError> {
    let mut states: Vec<NodeState> = Vec::with_capacity(shape.len());
    for i in 0..shape.len() {
        let kids: Vec<NodeState> = shape.children(i).iter().map(|&c| states[c]).collect();
        states.push(cell.forward(g, store, inputs[i], &kids)?);
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TreeMapperConfig {
    pub input: usize,
    pub hidden: usize,
    /// Global dot-product attention; when off the context is the mean encoder state.
    pub attention: bool,
    /// Adds each node's input vector to its decoded output.
    pub residual: bool,
}

/// Shape-preserving tree-to-tree map: encoder → attention → decoder.
///
/// The encoder is a bottom-up Child-Sum Tree-LSTM. Each node then attends
/// over all encoder states. The decoder is a second Child-Sum cell run
/// top-down, with the parent's decoder state as the single predecessor,
/// so every output sees both the subtree below and the path above it.
#[derive(Debug, Clone, Copy)]
pub struct TreeMapper {
    pub cfg: TreeMapperConfig,
    pub encoder: ChildSumTreeLstmCell,
    pub decoder: ChildSumTreeLstmCell,
    pub out: Linear,
}

impl TreeMapper {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: TreeMapperConfig,
        rng: &mut R,
    ) -> Self {
        let h = cfg.hidden;
        Self {
            cfg,
            encoder: ChildSumTreeLstmCell::new(
                store,
                &format!("{name}.encoder"),
                cfg.input,
                h,
                rng,
            ),
            decoder: ChildSumTreeLstmCell::new(store, &format!("{name}.decoder"), 2 * h, h, rng),
            out: Linear::new(store, &format!("{name}.out"), h, cfg.input, rng),
        }
    }

    /// One output vector per node, in the same post-order as the inputs.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        shape: &TreeShape,
        inputs: &[Var],
    ) -> Result<Vec<Var>, NnError> {
        if inputs.len() != shape.len() {
            return Err(NnError::Empty {
                op: "tree mapper inputs",
            });
        }
        let enc = encode_tree(g, store, &self.encoder, shape, inputs)?;
        let hs: Vec<Var> = enc.iter().map(|s| s.h).collect();
        let keys = g.stack_rows(&hs)?;
        let mean = if self.cfg.attention {
            None
        } else {
            Some(mean_context(g, keys)?)
        };
        let mut dec: Vec<Option<NodeState>> = vec![None; shape.len()];
        let mut outputs: Vec<Option<Var>> = vec![None; shape.len()];
        for i in (0..shape.len()).rev() {
            let ctx = match mean {
                Some(m) => m,
                None => dot_attention(g, hs[i], keys)?.0,
            };
            let x = g.concat(&[hs[i], ctx])?;
            let pred: Vec<NodeState> = shape.parent(i).and_then(|p| dec[p]).into_iter().collect();
            let state = self.decoder.forward(g, store, x, &pred)?;
            let mut y = self.out.forward(g, store, state.h)?;
            if self.cfg.residual {
                y = g.add(y, inputs[i])?;
            }
            dec[i] = Some(state);
            outputs[i] = Some(y);
        }
        Ok(outputs
            .into_iter()
            .map(|o| o.expect("every node decoded"))
            .collect())
    }

    pub fn zero_output<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for id in [self.out.w, self.out.b] {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rejects_pre_order() {
        assert!(TreeShape::from_children(vec![vec![1], vec![]]).is_err());
        assert!(TreeShape::from_children(vec![vec![], vec![], vec![0, 1]]).is_ok());
        assert!(TreeShape::from_children(vec![vec![], vec![]]).is_err());
    }
}
