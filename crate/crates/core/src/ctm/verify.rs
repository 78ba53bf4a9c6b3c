//! Simulation checks of the SAE-as-MAP derivation, as run by `saetm ctm verify`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    compound_gamma_pdf, compound_gamma_zero_mass, map_objective, sae_l1_objective,
    sample_aggregated_strength, MapHyper, Result,
};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Largest `|map_objective - sae_l1_objective|` over random instances with
/// `kappa = 1`, `alpha = 1`.
pub fn map_equivalence(instances: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d_dim = rng.random_range(1..=8);
        let k = rng.random_range(1..=8);
        let w = Array2::from_shape_fn((d_dim, k), |_| rng.random_range(-2.0..2.0));
        let d: Array1<f64> = (0..d_dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut a: Array1<f64> = (0..k)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) })
            .collect();
        if a.sum() == 0.0 {
            a[0] = 0.5;
        }
        let noise_var = rng.random_range(0.05..2.0);
        let beta = rng.random_range(0.01..3.0);
        let h = MapHyper { kappa: 1.0, beta, alpha: vec![1.0; k], noise_var, decoder: w };
        let map = map_objective(a.view(), d.view(), &h)?;
        let sae = sae_l1_objective(a.view(), d.view(), h.decoder.view(), noise_var, beta);
        worst = worst.max((map - sae).abs());
    }
    Ok(Check {
        name: "map-equivalence".into(),
        passed: worst < 1e-12,
        detail: format!("{instances} instances, max |difference| = {worst:e}"),
    })
}

/// Moments of the aggregated strength at one Poisson rate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentComparison {
    pub rho_d: f64,
    pub mean: f64,
    pub var: f64,
    pub mean_rel_err: f64,
    pub var_rel_err: f64,
    pub mean_rel_se: f64,
    pub var_rel_se: f64,
}

/// Empirical moments of `S_k` with `alpha_0 = kappa / rho_d` against those of
/// the limiting law `Ga(kappa theta_k, beta)`.
pub fn limit_moments(
    kappa: f64,
    beta: f64,
    theta_k: f64,
    rho_d: f64,
    n_samples: usize,
    seed: u64,
) -> Result<MomentComparison> {
    let s = sample_aggregated_strength(rho_d * theta_k, kappa / rho_d, beta, n_samples, seed)?;
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in &s {
        let c = (x - mean) * (x - mean);
        m2 += c;
        m4 += c * c;
    }
    m2 /= n;
    m4 /= n;
    let target_mean = kappa * theta_k / beta;
    let target_var = kappa * theta_k / (beta * beta);
    Ok(MomentComparison {
        rho_d,
        mean,
        var: m2,
        mean_rel_err: (mean - target_mean).abs() / target_mean,
        var_rel_err: (m2 - target_var).abs() / target_var,
        mean_rel_se: (m2 / n).sqrt() / target_mean,
        var_rel_se: ((m4 - m2 * m2) / n).sqrt() / target_var,
    })
}

/// Limit law at `kappa = 2, beta = 1, theta_k = 0.5` over `rho_d` in `{1e2, 1e3, 1e4}`.
/// Passes when both relative moment errors at the largest rate are below 1% and the
/// error sequence never rises by more than three Monte Carlo standard errors.
pub fn limit_law(n_samples: usize, seed: u64) -> Result<(Check, Vec<MomentComparison>)> {
    let rates = [1e2, 1e3, 1e4];
    let rows = rates
        .iter()
        .enumerate()
        .map(|(i, &r)| limit_moments(2.0, 1.0, 0.5, r, n_samples, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let last = rows.last().expect("three rates");
    let close = last.mean_rel_err < 0.01 && last.var_rel_err < 0.01;
    let monotone = rows.windows(2).all(|w| {
        w[1].mean_rel_err <= w[0].mean_rel_err + 3.0 * (w[0].mean_rel_se + w[1].mean_rel_se)
            && w[1].var_rel_err <= w[0].var_rel_err + 3.0 * (w[0].var_rel_se + w[1].var_rel_se)
    });
    let detail = rows
        .iter()
        .map(|r| {
            format!(
                "rho_d={:e}: mean err {:.4}%, var err {:.4}%",
                r.rho_d,
                100.0 * r.mean_rel_err,
                100.0 * r.var_rel_err
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok((
        Check { name: "limit-law".into(), passed: close && monotone, detail },
        rows,
    ))
}

/// Conditional CDF of the positive part, `P(S <= x | S > 0)`, evaluated at
/// increasing `edges` by composite Simpson quadrature of the density under the
/// substitution `a = u^2` (which removes the `1/sqrt(a)` behaviour at the origin).
pub fn positive_part_cdf(edges: &[f64], rho: f64, rate: f64, panels_per_edge: usize) -> Result<Vec<f64>> {
    let norm = 1.0 - compound_gamma_zero_mass(rho);
    let g = |u: f64| -> Result<f64> {
        if u == 0.0 {
            Ok(0.0)
        } else {
            Ok(2.0 * u * compound_gamma_pdf(u * u, rho, rate)?)
        }
    };
    let mut out = Vec::with_capacity(edges.len());
    let mut acc = 0.0;
    let mut prev_u = 0.0;
    let n = panels_per_edge.max(2) & !1;
    for &x in edges {
        let u = x.max(0.0).sqrt();
        let h = (u - prev_u) / n as f64;
        if h > 0.0 {
            let mut s = g(prev_u)? + g(u)?;
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * g(prev_u + i as f64 * h)?;
            }
            acc += s * h / 3.0;
        }
        prev_u = u;
        out.push(acc / norm);
    }
    Ok(out)
}

/// Sampler against closed form: sup distance of the binned conditional CDF of
/// positive samples (< 0.01) and the zero atom inside the 99% binomial interval.
pub fn density(rho: f64, rate: f64, n_samples: usize, seed: u64) -> Result<Check> {
    let mut s = sample_aggregated_strength(rho, 1.0, rate, n_samples, seed)?;
    let zeros = s.iter().filter(|&&v| v == 0.0).count();
    let p0 = compound_gamma_zero_mass(rho);
    let n = n_samples as f64;
    let half_width = 2.575_829_303_548_901 * (p0 * (1.0 - p0) / n).sqrt();
    let atom_ok = (zeros as f64 / n - p0).abs() <= half_width;

    s.retain(|&v| v > 0.0);
    s.sort_by(f64::total_cmp);
    let upper = s[((s.len() as f64) * 0.999) as usize];
    let bins = 200;
    let edges: Vec<f64> = (1..=bins).map(|i| upper * i as f64 / bins as f64).collect();
    let closed = positive_part_cdf(&edges, rho, rate, 64)?;
    let m = s.len() as f64;
    let sup = edges
        .iter()
        .zip(&closed)
        .map(|(&e, &c)| {
            let below = s.partition_point(|&v| v <= e) as f64 / m;
            (below - c).abs()
        })
        .fold(0.0, f64::max);
    Ok(Check {
        name: "compound-gamma-density".into(),
        passed: atom_ok && sup < 0.01,
        detail: format!(
            "rho={rho}, rate={rate}: binned CDF sup distance {sup:.5}; zero mass {:.5} vs {p0:.5} (99% half-width {half_width:.5})",
            zeros as f64 / n
        ),
    })
}
