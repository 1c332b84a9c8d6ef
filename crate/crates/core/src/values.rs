//! Flat storage for per-node latent vectors (and for adjoints, which share
//! the same layout).

use std::sync::Arc;

use serde::ser::{Serialize, SerializeSeq, Serializer};

use crate::graph::{LatentDag, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// `offsets[n]..offsets[n + 1]` is node n's slice; node 0 is empty.
    offsets: Vec<usize>,
}

impl Layout {
    pub fn from_dims(dims: &[usize]) -> Arc<Layout> {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &d in dims {
            acc += d;
            offsets.push(acc);
        }
        Arc::new(Layout { offsets })
    }

    pub fn for_dag(dag: &LatentDag) -> Arc<Layout> {
        Self::from_dims(dag.dims())
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 2
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn dim(&self, node: NodeId) -> usize {
        self.offsets[node.index() + 1] - self.offsets[node.index()]
    }

    pub fn range(&self, node: NodeId) -> std::ops::Range<usize> {
        self.offsets[node.index()]..self.offsets[node.index() + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentValues {
    data: Vec<f64>,
    layout: Arc<Layout>,
}

impl LatentValues {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        LatentValues {
            data: vec![0.0; layout.total_dim()],
            layout,
        }
    }

    pub fn from_flat(layout: Arc<Layout>, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), layout.total_dim(), "flat data does not match layout");
        LatentValues { data, layout }
    }

    /// `blocks[k]` holds node `k + 1`.
    pub fn from_blocks(dims: &[usize], blocks: &[Vec<f64>]) -> Self {
        let layout = Layout::from_dims(dims);
        let mut v = Self::zeros(layout);
        for (k, b) in blocks.iter().enumerate() {
            v.block_mut(NodeId(k + 1)).copy_from_slice(b);
        }
        v
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn node_count(&self) -> usize {
        self.layout.node_count()
    }

    pub fn dim(&self, node: NodeId) -> usize {
        self.layout.dim(node)
    }

    #[inline]
    pub fn block(&self, node: NodeId) -> &[f64] {
        &self.data[self.layout.range(node)]
    }

    #[inline]
    pub fn block_mut(&mut self, node: NodeId) -> &mut [f64] {
        let r = self.layout.range(node);
        &mut self.data[r]
    }

    pub fn set_block(&mut self, node: NodeId, v: &[f64]) {
        self.block_mut(node).copy_from_slice(v);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn blocks(&self) -> Vec<Vec<f64>> {
        (1..=self.node_count())
            .map(|n| self.block(NodeId(n)).to_vec())
            .collect()
    }

    /// `self += alpha * other` over the whole state.
    pub fn axpy(&mut self, alpha: f64, other: &LatentValues) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }
}

impl Serialize for LatentValues {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.node_count()))?;
        for n in 1..=self.node_count() {
            seq.serialize_element(self.block(NodeId(n)))?;
        }
        seq.end()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `‖a − b‖₂ / max(‖b‖₂, floor)`.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm2(b).max(floor)
}
