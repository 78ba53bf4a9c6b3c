use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use super::{CtmError, CtmParams, Result, TopicCovariance};

/// One draw from the generative process, with all latent variables retained.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmSample {
    pub theta: Vec<f64>,
    /// Topic index of each contribution.
    pub assignments: Vec<usize>,
    /// Strength `lambda_n` of each contribution.
    pub strengths: Vec<f64>,
    /// Direction `w_n` of each contribution, `N x d`.
    pub directions: Array2<f64>,
    pub noise: Array1<f64>,
    pub embedding: Array1<f64>,
}

impl CtmSample {
    pub fn num_contributions(&self) -> usize {
        self.assignments.len()
    }

    /// Aggregated activation per topic: `a_k = sum_{n: z_n = k} lambda_n`.
    pub fn topic_activations(&self, num_topics: usize) -> Vec<f64> {
        let mut a = vec![0.0; num_topics];
        for (&z, &l) in self.assignments.iter().zip(&self.strengths) {
            a[z] += l;
        }
        a
    }
}

/// Draws one document. The stream is a ChaCha8 generator seeded with `seed`.
pub fn sample_document(params: &CtmParams, seed: u64) -> Result<CtmSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_document_with_rng(params, &mut rng)
}

pub fn sample_document_with_rng<R: Rng + ?Sized>(
    params: &CtmParams,
    rng: &mut R,
) -> Result<CtmSample> {
    params.validate()?;
    let theta = sample_dirichlet(&params.alpha, rng);
    draw_given_theta(params, theta, rng)
}

/// Runs steps 2-4 of the process with a caller-supplied topic mix. Entries of
/// `theta` may be zero, which restricts the document to a subset of topics.
pub fn sample_document_given_theta<R: Rng + ?Sized>(
    params: &CtmParams,
    theta: &[f64],
    rng: &mut R,
) -> Result<CtmSample> {
    params.validate()?;
    if theta.len() != params.num_topics() {
        return Err(CtmError::InvalidParams(format!(
            "theta has {} entries, expected {}",
            theta.len(),
            params.num_topics()
        )));
    }
    let total: f64 = theta.iter().sum();
    if theta.iter().any(|&t| !(t >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(CtmError::Domain("theta is not on the simplex".into()));
    }
    draw_given_theta(params, theta.to_vec(), rng)
}

/// `n` documents; document `i` uses ChaCha8 stream `i` under `seed`, so any
/// subset can be regenerated independently.
pub fn sample_corpus(params: &CtmParams, n: usize, seed: u64) -> Result<Vec<CtmSample>> {
    params.validate()?;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_document_with_rng(params, &mut rng)
        })
        .collect()
}

fn draw_given_theta<R: Rng + ?Sized>(
    params: &CtmParams,
    theta: Vec<f64>,
    rng: &mut R,
) -> Result<CtmSample> {
    let d = params.dim();
    let n = if params.rho_d > 0.0 {
        let pois = Poisson::new(params.rho_d)
            .map_err(|e| CtmError::InvalidParams(format!("poisson rate: {e}")))?;
        pois.sample(rng) as usize
    } else {
        0
    };

    let factors = match &params.covariance {
        TopicCovariance::Full(mats) => Some(
            mats.iter()
                .map(|m| psd_factor(m).expect("validated PSD"))
                .collect::<Vec<_>>(),
        ),
        TopicCovariance::Isotropic(_) => None,
    };

    let mut assignments = Vec::with_capacity(n);
    let mut strengths = Vec::with_capacity(n);
    let mut directions = Array2::zeros((n, d));
    let mut embedding = Array1::zeros(d);
    let scale = 1.0 / params.gamma_rate;

    for i in 0..n {
        let z = sample_categorical(&theta, rng);
        let mut w = directions.row_mut(i);
        w.assign(&params.mu.row(z));
        match (&params.covariance, &factors) {
            (TopicCovariance::Isotropic(var), _) => {
                if var[z] > 0.0 {
                    let sd = var[z].sqrt();
                    for v in w.iter_mut() {
                        let e: f64 = rng.sample(StandardNormal);
                        *v += sd * e;
                    }
                }
            }
            (TopicCovariance::Full(_), Some(f)) => {
                let e: Array1<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                w += &f[z].dot(&e);
            }
            _ => unreachable!(),
        }
        let gamma = Gamma::new(params.gamma_shape[z], scale)
            .map_err(|e| CtmError::InvalidParams(format!("gamma: {e}")))?;
        let lambda = gamma.sample(rng);
        embedding.scaled_add(lambda, &w);
        assignments.push(z);
        strengths.push(lambda);
    }

    let noise: Array1<f64> = if params.noise_var > 0.0 {
        let sd = params.noise_var.sqrt();
        (0..d)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    } else {
        Array1::zeros(d)
    };
    embedding += &noise;

    Ok(CtmSample {
        theta,
        assignments,
        strengths,
        directions,
        noise,
        embedding,
    })
}

/// `E[D | theta] = sum_k theta_k rho_d (shape_k / rate) mu_k`.
pub fn expected_embedding(params: &CtmParams, theta: &[f64]) -> Result<Array1<f64>> {
    params.validate()?;
    if theta.len() != params.num_topics() {
        return Err(CtmError::InvalidParams(format!(
            "theta has {} entries, expected {}",
            theta.len(),
            params.num_topics()
        )));
    }
    let mut out = Array1::zeros(params.dim());
    for (k, &t) in theta.iter().enumerate() {
        let mean_strength = params.gamma_shape[k] / params.gamma_rate;
        out.scaled_add(t * params.rho_d * mean_strength, &params.mu.row(k));
    }
    Ok(out)
}

/// Dirichlet draw computed in log space, so concentrations far below one do not
/// underflow to an all-zero vector: for `a < 1`,
/// `log G = log Ga(a + 1) + log(U) / a`.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            if a >= 1.0 {
                Gamma::new(a, 1.0).expect("positive shape").sample(rng).ln()
            } else {
                let g = Gamma::new(a + 1.0, 1.0).expect("positive shape").sample(rng);
                let u: f64 = rng.random();
                g.ln() + u.ln() / a
            }
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut theta: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|t| *t /= total);
    theta
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Lower-triangular `L` with `L L^T = m` for symmetric PSD `m`. Pivots within
/// rounding of zero produce zero columns. `None` if `m` is not symmetric PSD.
pub(crate) fn psd_factor(m: &Array2<f64>) -> Option<Array2<f64>> {
    let d = m.nrows();
    if m.ncols() != d {
        return None;
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale;
    for i in 0..d {
        for j in 0..i {
            if (m[[i, j]] - m[[j, i]]).abs() > tol {
                return None;
            }
        }
    }
    let mut l = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let row_j: ArrayView1<f64> = l.row(j);
        let diag = m[[j, j]] - row_j.slice(ndarray::s![..j]).dot(&row_j.slice(ndarray::s![..j]));
        if diag < -1e-9 * scale {
            return None;
        }
        if diag <= tol {
            for i in (j + 1)..d {
                let r = m[[i, j]] - l.row(i).slice(ndarray::s![..j]).dot(&l.row(j).slice(ndarray::s![..j]));
                if r.abs() > 1e-9 * scale {
                    return None;
                }
            }
            continue;
        }
        let pivot = diag.sqrt();
        l[[j, j]] = pivot;
        for i in (j + 1)..d {
            let r = m[[i, j]] - l.row(i).slice(ndarray::s![..j]).dot(&l.row(j).slice(ndarray::s![..j]));
            l[[i, j]] = r / pivot;
        }
    }
    Some(l)
}
