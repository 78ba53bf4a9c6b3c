use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Activations, Result, SaeError};

/// Activation rule applied after the affine encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// ReLU with an L1 penalty of weight `beta` during training.
    ReluL1 { beta: f64 },
    /// Keep the `k` largest positive pre-activations of each row.
    TopK { k: usize },
    /// Keep the `k * batch` largest positive pre-activations across a batch.
    BatchTopK { k: usize },
}

impl Activation {
    pub fn k(&self) -> Option<usize> {
        match *self {
            Activation::ReluL1 { .. } => None,
            Activation::TopK { k } | Activation::BatchTopK { k } => Some(k),
        }
    }
}

/// Linear-encoder sparse autoencoder `a = act(x W_enc + b_enc)`, `x_hat = a W_dec + b_dec`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    /// `d_in x K`
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    /// `K x d_in`; rows are the feature directions.
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
    pub activation: Activation,
    pub trained_steps: u64,
    /// Inference threshold for BatchTopK, calibrated during training.
    pub batch_threshold: Option<f64>,
}

impl SaeModel {
    /// Random unit decoder rows, `W_enc = W_dec^T`, `b_dec = data_mean`, and
    /// `b_enc = -W_enc^T b_dec` so the encoder initially sees centred input.
    pub fn init<R: Rng + ?Sized>(
        d_in: usize,
        n_features: usize,
        activation: Activation,
        data_mean: Array1<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if d_in == 0 || n_features == 0 {
            return Err(SaeError::InvalidConfig("d_in and n_features must be positive".into()));
        }
        if data_mean.len() != d_in {
            return Err(SaeError::DimensionMismatch { expected: d_in, actual: data_mean.len() });
        }
        if let Some(k) = activation.k() {
            if k == 0 || k > n_features {
                return Err(SaeError::InvalidConfig(format!(
                    "k = {k} must be in 1..={n_features}"
                )));
            }
        }
        let mut w_dec = Array2::from_shape_fn((n_features, d_in), |_| rng.sample::<f64, _>(StandardNormal));
        for mut row in w_dec.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        let w_enc = w_dec.t().to_owned();
        let b_enc = -data_mean.dot(&w_enc);
        Ok(Self {
            w_enc,
            b_enc,
            w_dec,
            b_dec: data_mean,
            activation,
            trained_steps: 0,
            batch_threshold: None,
        })
    }

    pub fn d_in(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.w_enc.ncols()
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.d_in() {
            return Err(SaeError::DimensionMismatch { expected: self.d_in(), actual: x.ncols() });
        }
        Ok(())
    }

    pub fn pre_activations(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(x.dot(&self.w_enc) + &self.b_enc)
    }

    /// Encodes `x` treating it as one batch: BatchTopK selects across all rows.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Activations> {
        let pre = self.pre_activations(x)?;
        Ok(Activations::new(self.n_features(), select(&pre, self.activation)))
    }

    /// Row-independent encoding. BatchTopK uses the calibrated threshold (falling
    /// back to per-row top-k when uncalibrated); other modes match [`encode`](Self::encode).
    pub fn encode_inference(&self, x: ArrayView2<f64>) -> Result<Activations> {
        let pre = self.pre_activations(x)?;
        let rows = match (self.activation, self.batch_threshold) {
            (Activation::BatchTopK { .. }, Some(t)) => pre
                .rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .filter(|(_, &v)| v > t && v > 0.0)
                        .map(|(k, &v)| (k as u32, v))
                        .collect()
                })
                .collect(),
            (Activation::BatchTopK { k }, None) => select(&pre, Activation::TopK { k }),
            (act, _) => select(&pre, act),
        };
        Ok(Activations::new(self.n_features(), rows))
    }

    /// `a W_dec + b_dec`.
    pub fn decode(&self, acts: &Activations) -> Result<Array2<f64>> {
        if acts.n_features() != self.n_features() {
            return Err(SaeError::DimensionMismatch {
                expected: self.n_features(),
                actual: acts.n_features(),
            });
        }
        let mut out = Array2::zeros((acts.n_rows(), self.d_in()));
        for (i, row) in acts.rows().enumerate() {
            let mut o = out.row_mut(i);
            o.assign(&self.b_dec);
            for &(k, v) in row {
                o.scaled_add(v, &self.w_dec.row(k as usize));
            }
        }
        Ok(out)
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decode(&self.encode_inference(x)?)
    }

    /// Unit-normalised decoder rows; these double as topic embeddings.
    pub fn feature_directions(&self) -> Array2<f64> {
        let mut out = self.w_dec.clone();
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
        out
    }

    /// Rescales every decoder row to unit norm and compensates in the encoder
    /// (column of `W_enc` and entry of `b_enc` multiplied by the old norm), so each
    /// product `a_k W_dec[k]` is unchanged.
    pub fn normalize_decoder(&mut self) {
        for k in 0..self.n_features() {
            let mut row = self.w_dec.row_mut(k);
            let n = row.dot(&row).sqrt();
            if n > 0.0 && n.is_finite() {
                row /= n;
                self.w_enc.column_mut(k).mapv_inplace(|v| v * n);
                self.b_enc[k] *= n;
            }
        }
    }

    /// Coefficient of determination of the reconstruction, aggregated over all
    /// entries, with the total sum of squares centred on the per-dimension mean.
    pub fn r_squared(&self, x: ArrayView2<f64>) -> Result<f64> {
        if x.nrows() == 0 {
            return Err(SaeError::DegenerateData("empty input".into()));
        }
        let recon = self.reconstruct(x)?;
        r_squared_of(x, recon.view())
    }

    /// Model whose feature `new` is this model's feature `perm[new]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for (new, &old) in perm.iter().enumerate() {
            out.w_dec.row_mut(new).assign(&self.w_dec.row(old));
            out.w_enc.column_mut(new).assign(&self.w_enc.column(old));
            out.b_enc[new] = self.b_enc[old];
        }
        out
    }
}

/// `1 - SS_res / SS_tot` for a reconstruction of `x`.
pub fn r_squared_of(x: ArrayView2<f64>, recon: ArrayView2<f64>) -> Result<f64> {
    let mean = x.mean_axis(Axis(0)).ok_or_else(|| SaeError::DegenerateData("empty input".into()))?;
    let ss_tot: f64 = x.rows().into_iter().map(|r| (&r - &mean).mapv(|v| v * v).sum()).sum();
    if ss_tot == 0.0 {
        return Err(SaeError::DegenerateData("constant data has zero total variance".into()));
    }
    let ss_res: f64 = (&x - &recon).mapv(|v| v * v).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Descending by value, ties to the lower feature index.
fn by_value_then_feature(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Applies the activation rule to a matrix of pre-activations.
pub(crate) fn select(pre: &Array2<f64>, activation: Activation) -> Vec<Vec<(u32, f64)>> {
    let positive = |r: ndarray::ArrayView1<f64>| -> Vec<(u32, f64)> {
        r.iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(k, &v)| (k as u32, v))
            .collect()
    };
    match activation {
        Activation::ReluL1 { .. } => pre.rows().into_iter().map(positive).collect(),
        Activation::TopK { k } => pre
            .rows()
            .into_iter()
            .map(|r| {
                let mut cand = positive(r);
                if cand.len() > k {
                    cand.select_nth_unstable_by(k - 1, by_value_then_feature);
                    cand.truncate(k);
                }
                cand.sort_by_key(|&(f, _)| f);
                cand
            })
            .collect(),
        Activation::BatchTopK { k } => {
            let budget = k * pre.nrows();
            let mut cand: Vec<(u32, u32, f64)> = Vec::new();
            for (i, r) in pre.rows().into_iter().enumerate() {
                for (f, &v) in r.iter().enumerate() {
                    if v > 0.0 {
                        cand.push((i as u32, f as u32, v));
                    }
                }
            }
            let order = |a: &(u32, u32, f64), b: &(u32, u32, f64)| {
                b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0))
            };
            if cand.len() > budget {
                if budget == 0 {
                    cand.clear();
                } else {
                    cand.select_nth_unstable_by(budget - 1, order);
                    cand.truncate(budget);
                }
            }
            let mut rows = vec![Vec::new(); pre.nrows()];
            for (i, f, v) in cand {
                rows[i as usize].push((f, v));
            }
            for r in &mut rows {
                r.sort_by_key(|&(f, _)| f);
            }
            rows
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn identity_model(activation: Activation, d: usize) -> SaeModel {
        SaeModel {
            w_enc: Array2::eye(d),
            b_enc: Array1::zeros(d),
            w_dec: Array2::eye(d),
            b_dec: Array1::zeros(d),
            activation,
            trained_steps: 0,
            batch_threshold: None,
        }
    }

    #[test]
    fn relu_rectifies() {
        let m = identity_model(Activation::ReluL1 { beta: 0.1 }, 2);
        let a = m.encode(array![[-1.0, 2.0]].view()).unwrap();
        assert_eq!(a.to_dense(), array![[0.0, 2.0]]);
    }

    #[test]
    fn topk_keeps_largest() {
        let m = identity_model(Activation::TopK { k: 2 }, 3);
        let a = m.encode(array![[3.0, 1.0, 2.0]].view()).unwrap();
        assert_eq!(a.to_dense(), array![[3.0, 0.0, 2.0]]);
    }

    #[test]
    fn topk_tie_prefers_lower_index() {
        let m = identity_model(Activation::TopK { k: 1 }, 3);
        let a = m.encode(array![[1.0, 2.0, 2.0]].view()).unwrap();
        assert_eq!(a.to_dense(), array![[0.0, 2.0, 0.0]]);
    }

    #[test]
    fn batch_topk_selects_across_rows() {
        let m = identity_model(Activation::BatchTopK { k: 1 }, 3);
        let a = m.encode(array![[1.0, 0.0, 3.0], [2.0, 5.0, 0.0]].view()).unwrap();
        assert_eq!(a.to_dense(), array![[0.0, 0.0, 3.0], [0.0, 5.0, 0.0]]);
    }

    #[test]
    fn batch_topk_threshold_inference() {
        let mut m = identity_model(Activation::BatchTopK { k: 1 }, 3);
        m.batch_threshold = Some(1.5);
        let a = m.encode_inference(array![[1.0, 0.0, 3.0], [2.0, 5.0, 0.0]].view()).unwrap();
        assert_eq!(a.to_dense(), array![[0.0, 0.0, 3.0], [2.0, 5.0, 0.0]]);
    }

    #[test]
    fn decode_zero_and_single_feature() {
        let mut m = identity_model(Activation::ReluL1 { beta: 0.0 }, 2);
        m.w_dec = array![[0.6, 0.8], [1.0, 0.0]];
        m.b_dec = array![0.5, -0.5];
        let zero = Activations::new(2, vec![vec![], vec![]]);
        assert_eq!(m.decode(&zero).unwrap(), array![[0.5, -0.5], [0.5, -0.5]]);
        let one = Activations::new(2, vec![vec![(0, 1.0)]]);
        assert_eq!(m.decode(&one).unwrap(), array![[1.1, 0.30000000000000004]]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = identity_model(Activation::TopK { k: 1 }, 3);
        assert!(matches!(
            m.encode(array![[1.0, 2.0]].view()),
            Err(SaeError::DimensionMismatch { expected: 3, actual: 2 })
        ));
        let acts = Activations::new(2, vec![vec![]]);
        assert!(m.decode(&acts).is_err());
    }

    #[test]
    fn identity_decoder_directions_are_basis() {
        let m = identity_model(Activation::TopK { k: 1 }, 3);
        assert_eq!(m.feature_directions(), Array2::<f64>::eye(3));
    }

    #[test]
    fn r_squared_extremes() {
        let x = array![[1.0, 2.0], [3.0, 5.0], [0.0, -1.0]];
        assert_eq!(r_squared_of(x.view(), x.view()).unwrap(), 1.0);
        let mean = x.mean_axis(Axis(0)).unwrap();
        let flat = Array2::from_shape_fn((3, 2), |(_, j)| mean[j]);
        assert!(r_squared_of(x.view(), flat.view()).unwrap().abs() < 1e-15);
        let constant = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(r_squared_of(constant.view(), constant.view()), Err(SaeError::DegenerateData(_))));
    }

    #[test]
    fn normalisation_preserves_relu_reconstruction() {
        let mut m = identity_model(Activation::ReluL1 { beta: 0.0 }, 3);
        m.w_dec = array![[2.0, 0.0, 0.0], [0.0, 0.5, 0.5], [1.0, 1.0, 1.0]];
        m.w_enc = array![[0.3, -0.2, 0.1], [0.4, 0.9, -0.5], [0.2, 0.1, 0.7]];
        m.b_enc = array![0.1, -0.1, 0.05];
        let x = array![[1.0, 2.0, -1.0], [0.5, 0.1, 0.9]];
        let before = m.reconstruct(x.view()).unwrap();
        m.normalize_decoder();
        let after = m.reconstruct(x.view()).unwrap();
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for row in m.w_dec.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}
