//! Fully-connected layer bookkeeping on top of [`ParamStore`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Array, Graph, NodeId, ParamId, ParamKind, ParamStore};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Kaiming normal, `std = sqrt(2 / fan_in)`, for layers followed by ReLU.
    KaimingRelu,
    /// `std = sqrt(1 / fan_in)`, for linear or sigmoid outputs.
    FanIn,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = init_matrix(output, input, init, rng);
        let weight = store.add(format!("{name}.w"), ParamKind::Weight, w);
        let bias = store.add(format!("{name}.b"), ParamKind::Bias, Array::zeros(&[output]));
        Linear {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        let y = g.matvec(w, x)?;
        g.add(y, b)
    }
}

pub fn init_matrix<R: Rng>(rows: usize, cols: usize, init: Init, rng: &mut R) -> Array {
    let std = match init {
        Init::KaimingRelu => (2.0 / cols as f64).sqrt(),
        Init::FanIn => (1.0 / cols as f64).sqrt(),
        Init::Zeros => 0.0,
    };
    let data = if std == 0.0 {
        vec![0.0; rows * cols]
    } else {
        let normal = Normal::new(0.0, std).expect("positive std");
        (0..rows * cols).map(|_| normal.sample(rng)).collect()
    };
    Array::from_rows(rows, cols, data)
}

/// Gaussian rows rescaled to unit norm.
pub fn unit_rows<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array {
    let mut a = init_matrix(rows, cols, Init::FanIn, rng);
    for r in 0..rows {
        let row = a.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    a
}
