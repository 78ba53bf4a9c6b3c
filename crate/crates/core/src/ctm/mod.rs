//! Continuous topic model: an LDA analogue over embedding vectors.
//!
//! A document embedding is generated as a noisy sum of Gamma-scaled Gaussian
//! directions, each drawn from a topic picked by a Dirichlet topic mix:
//!
//! ```text
//! theta ~ Dir(alpha)
//! N     ~ Pois(rho_d)
//! for n in 1..=N:
//!     z_n      ~ Cat(theta)
//!     w_n      ~ N(mu_{z_n}, Sigma_{z_n})
//!     lambda_n ~ Ga(shape_{z_n}, rate)
//! D = sum_n lambda_n w_n + eps,   eps ~ N(0, noise_var I)
//! ```
//!
//! The module also holds the MAP objectives of the collapsed model, which the
//! SAE objectives are checked against, and the compound Poisson-Gamma law of the
//! per-topic aggregated strength.

mod compound;
mod objective;
mod sampler;
pub mod verify;

use ndarray::Array2;
use thiserror::Error;

pub use compound::{
    compound_gamma_pdf, compound_gamma_zero_mass, sample_aggregated_strength,
    sample_topic_strengths,
};
pub use objective::{
    fixed_sparsity_map, fixed_sparsity_map_objective, map_objective, sae_l1_gradient,
    sae_l1_objective, MapHyper, SparseMapSolution,
};
pub use sampler::{
    expected_embedding, sample_corpus, sample_dirichlet, sample_document,
    sample_document_given_theta, sample_document_with_rng, CtmSample,
};

#[derive(Debug, Error, PartialEq)]
pub enum CtmError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("support size {nonzeros} exceeds limit {limit}")]
    SupportViolation { nonzeros: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, CtmError>;

/// Per-topic direction covariance `Sigma_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum TopicCovariance {
    /// `Sigma_k = v_k I`; one nonnegative variance per topic.
    Isotropic(Vec<f64>),
    /// Full symmetric positive semidefinite `d x d` matrices.
    Full(Vec<Array2<f64>>),
}

/// Generative parameters of the continuous topic model.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmParams {
    /// Dirichlet concentration, one entry per topic.
    pub alpha: Vec<f64>,
    /// Topic directions, `K x d`.
    pub mu: Array2<f64>,
    pub covariance: TopicCovariance,
    /// Gamma shape of the contribution strength, per topic.
    pub gamma_shape: Vec<f64>,
    /// Shared Gamma rate.
    pub gamma_rate: f64,
    /// Poisson rate of the number of contributions.
    pub rho_d: f64,
    /// Variance of the isotropic observation noise.
    pub noise_var: f64,
}

impl CtmParams {
    /// Isotropic parameter set with a shared Gamma shape and shared direction variance.
    pub fn isotropic(
        alpha: Vec<f64>,
        mu: Array2<f64>,
        direction_var: f64,
        gamma_shape: f64,
        gamma_rate: f64,
        rho_d: f64,
        noise_var: f64,
    ) -> Self {
        let k = alpha.len();
        Self {
            alpha,
            mu,
            covariance: TopicCovariance::Isotropic(vec![direction_var; k]),
            gamma_shape: vec![gamma_shape; k],
            gamma_rate,
            rho_d,
            noise_var,
        }
    }

    pub fn num_topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_topics();
        let d = self.dim();
        if k == 0 {
            return Err(CtmError::InvalidParams("K must be positive".into()));
        }
        if d == 0 {
            return Err(CtmError::InvalidParams("d must be positive".into()));
        }
        if self.mu.nrows() != k {
            return Err(CtmError::InvalidParams(format!(
                "mu has {} rows, expected {k}",
                self.mu.nrows()
            )));
        }
        if self.gamma_shape.len() != k {
            return Err(CtmError::InvalidParams(format!(
                "gamma_shape has {} entries, expected {k}",
                self.gamma_shape.len()
            )));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(CtmError::InvalidParams("every alpha_k must be positive".into()));
        }
        if self.gamma_shape.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(CtmError::InvalidParams("every gamma shape must be positive".into()));
        }
        if !(self.gamma_rate > 0.0 && self.gamma_rate.is_finite()) {
            return Err(CtmError::InvalidParams("gamma_rate must be positive".into()));
        }
        if !(self.rho_d >= 0.0 && self.rho_d.is_finite()) {
            return Err(CtmError::InvalidParams("rho_d must be nonnegative".into()));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(CtmError::InvalidParams("noise_var must be nonnegative".into()));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(CtmError::InvalidParams("mu must be finite".into()));
        }
        match &self.covariance {
            TopicCovariance::Isotropic(v) => {
                if v.len() != k {
                    return Err(CtmError::InvalidParams(format!(
                        "covariance has {} entries, expected {k}",
                        v.len()
                    )));
                }
                if v.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
                    return Err(CtmError::InvalidParams(
                        "isotropic variances must be nonnegative".into(),
                    ));
                }
            }
            TopicCovariance::Full(mats) => {
                if mats.len() != k {
                    return Err(CtmError::InvalidParams(format!(
                        "covariance has {} matrices, expected {k}",
                        mats.len()
                    )));
                }
                for (i, m) in mats.iter().enumerate() {
                    if m.dim() != (d, d) {
                        return Err(CtmError::InvalidParams(format!(
                            "Sigma_{i} has shape {:?}, expected ({d}, {d})",
                            m.dim()
                        )));
                    }
                    sampler::psd_factor(m).ok_or_else(|| {
                        CtmError::InvalidParams(format!(
                            "Sigma_{i} is not symmetric positive semidefinite"
                        ))
                    })?;
                }
            }
        }
        Ok(())
    }
}
