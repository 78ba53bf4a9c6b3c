//! Adam with bias correction, shared by SAE training and emission learning.

use ndarray::{Array, ArrayBase, Data, DataMut, Dimension, Zip};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<D: Dimension> {
    m: Array<f64, D>,
    v: Array<f64, D>,
}

impl<D: Dimension + ndarray::RemoveAxis> AdamState<D> {
    pub fn zeros(shape: D) -> Self {
        Self { m: Array::zeros(shape.clone()), v: Array::zeros(shape) }
    }

    /// One update at 1-based step `t`. A zero gradient on a slot whose moments are
    /// still zero leaves that slot unchanged.
    pub fn step<S, G>(&mut self, cfg: &AdamConfig, t: u64, param: &mut ArrayBase<S, D>, grad: &ArrayBase<G, D>)
    where
        S: DataMut<Elem = f64>,
        G: Data<Elem = f64>,
    {
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let step = cfg.learning_rate / bc1;
        Zip::from(param)
            .and(grad)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= step * *m / ((*v / bc2).sqrt() + cfg.eps);
            });
    }

    /// Clears the moments of one slice along the first axis (used when a feature is re-initialised).
    pub fn reset_index(&mut self, axis: usize, index: usize) {
        self.m.index_axis_mut(ndarray::Axis(axis), index).fill(0.0);
        self.v.index_axis_mut(ndarray::Axis(axis), index).fill(0.0);
    }
}
