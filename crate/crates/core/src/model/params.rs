//! Named parameter tensors stored in declaration order.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    /// Fixed statistics, never updated by the optimizer.
    Buffer,
    Trunk,
    /// Acoustic pathways that stay frozen during the first training phase.
    Modulation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub group: Group,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Layout {
    pub slots: Vec<SlotSpec>,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, shape: (usize, usize), group: Group) -> usize {
        self.slots.push(SlotSpec {
            name: name.into(),
            shape,
            group,
        });
        self.slots.len() - 1
    }

    pub fn n_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.shape.0 * s.shape.1).sum()
    }

    pub fn n_trainable(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.group != Group::Buffer)
            .map(|s| s.shape.0 * s.shape.1)
            .sum()
    }

    pub fn zeros(&self) -> ParamSet {
        ParamSet {
            tensors: self.slots.iter().map(|s| Array2::zeros(s.shape)).collect(),
        }
    }
}

/// One tensor per layout slot. Vectors are stored as `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn mat(&self, id: usize) -> ArrayView2<'_, f64> {
        self.tensors[id].view()
    }

    pub fn vec(&self, id: usize) -> ArrayView1<'_, f64> {
        self.tensors[id].row(0)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.iter().copied())
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.tensors.iter_mut().flat_map(|t| t.iter_mut())
    }

    /// Mutable access to the `i`-th scalar in declaration order.
    pub fn scalar_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in &mut self.tensors {
            if i < t.len() {
                return t.iter_mut().nth(i).expect("index within tensor");
            }
            i -= t.len();
        }
        panic!("scalar index out of range");
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * k);
        }
    }

    pub fn norm_sq(&self, layout: &Layout, include: impl Fn(Group) -> bool) -> f64 {
        self.tensors
            .iter()
            .zip(&layout.slots)
            .filter(|(_, s)| include(s.group))
            .map(|(t, _)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Round every value to the nearest 32-bit float so the checkpoint
    /// format stores parameters without loss.
    pub fn round_to_f32(&mut self) {
        for v in self.flat_mut() {
            *v = *v as f32 as f64;
        }
    }
}
