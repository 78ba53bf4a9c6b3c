use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{CtmError, Result};

/// Hyperparameters of the collapsed model `s ~ Ga(kappa, beta)`,
/// `theta ~ Dir(alpha)`, `D = s W theta + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapHyper {
    pub kappa: f64,
    pub beta: f64,
    pub alpha: Vec<f64>,
    pub noise_var: f64,
    /// Decoder `W`, `d x K`; column k is the direction of topic k.
    pub decoder: Array2<f64>,
}

impl MapHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.beta > 0.0) {
            return Err(CtmError::InvalidParams("kappa and beta must be positive".into()));
        }
        if !(self.noise_var > 0.0) {
            return Err(CtmError::InvalidParams("noise_var must be positive".into()));
        }
        if self.alpha.len() != self.decoder.ncols() {
            return Err(CtmError::InvalidParams(format!(
                "alpha has {} entries but W has {} columns",
                self.alpha.len(),
                self.decoder.ncols()
            )));
        }
        if self.decoder.iter().any(|v| !v.is_finite()) {
            return Err(CtmError::InvalidParams("W must be finite".into()));
        }
        Ok(())
    }
}

fn check_shapes(a: ArrayView1<f64>, d: ArrayView1<f64>, w: ArrayView2<f64>) -> Result<()> {
    if w.ncols() != a.len() || w.nrows() != d.len() {
        return Err(CtmError::InvalidParams(format!(
            "shape mismatch: W is {:?}, a has {}, D has {}",
            w.dim(),
            a.len(),
            d.len()
        )));
    }
    Ok(())
}

/// `(1 / 2 sigma^2) ||D - W a||^2`. Shared by every objective in this module so the
/// reconstruction term is the same floating-point expression everywhere.
fn reconstruction(a: ArrayView1<f64>, d: ArrayView1<f64>, w: ArrayView2<f64>, noise_var: f64) -> f64 {
    let residual = &d - &w.dot(&a);
    residual.dot(&residual) / (2.0 * noise_var)
}

fn l1_mass(a: ArrayView1<f64>) -> f64 {
    a.iter().sum()
}

/// Negative log-posterior of the collapsed model, constant dropped:
/// `(1/2 sigma^2)||D - W a||^2 + beta s + (1 - kappa) log s + sum_k (1 - alpha_k) log theta_k`
/// with `s = ||a||_1` and `theta = a / s`.
///
/// Terms whose coefficient is exactly zero are skipped, so with `kappa = 1` and all
/// `alpha_k = 1` the value is bit-identical to [`sae_l1_objective`].
pub fn map_objective(a: ArrayView1<f64>, d: ArrayView1<f64>, h: &MapHyper) -> Result<f64> {
    h.validate()?;
    check_shapes(a, d, h.decoder.view())?;
    if a.iter().any(|&v| !(v >= 0.0)) {
        return Err(CtmError::Domain("activations must be nonnegative".into()));
    }
    let s = l1_mass(a);
    if s <= 0.0 {
        return Err(CtmError::Domain("theta is undefined when s = 0".into()));
    }
    let mut value = reconstruction(a, d, h.decoder.view(), h.noise_var) + h.beta * s;
    let mass_coef = 1.0 - h.kappa;
    if mass_coef != 0.0 {
        value += mass_coef * s.ln();
    }
    for (&ak, &alpha_k) in a.iter().zip(&h.alpha) {
        let coef = 1.0 - alpha_k;
        if coef == 0.0 {
            continue;
        }
        if ak == 0.0 {
            return Err(CtmError::Domain(format!(
                "log theta_k with theta_k = 0 and alpha_k = {alpha_k}"
            )));
        }
        value += coef * (ak / s).ln();
    }
    Ok(value)
}

/// `(1/2 sigma^2)||D - W a||^2 + beta ||a||_1` for `a >= 0`.
pub fn sae_l1_objective(
    a: ArrayView1<f64>,
    d: ArrayView1<f64>,
    w: ArrayView2<f64>,
    noise_var: f64,
    beta: f64,
) -> f64 {
    reconstruction(a, d, w, noise_var) + beta * l1_mass(a)
}

/// Gradient of [`sae_l1_objective`] on the open positive orthant:
/// `W^T (W a - D) / sigma^2 + beta`.
pub fn sae_l1_gradient(
    a: ArrayView1<f64>,
    d: ArrayView1<f64>,
    w: ArrayView2<f64>,
    noise_var: f64,
    beta: f64,
) -> Array1<f64> {
    let residual = &w.dot(&a) - &d;
    w.t().dot(&residual) / noise_var + beta
}

/// Reconstruction term only; the prior is constant once at most `support_size`
/// activations are nonzero.
pub fn fixed_sparsity_map_objective(
    a: ArrayView1<f64>,
    support_size: usize,
    d: ArrayView1<f64>,
    w: ArrayView2<f64>,
    noise_var: f64,
) -> Result<f64> {
    check_shapes(a, d, w)?;
    let nonzeros = a.iter().filter(|&&v| v != 0.0).count();
    if nonzeros > support_size {
        return Err(CtmError::SupportViolation { nonzeros, limit: support_size });
    }
    Ok(reconstruction(a, d, w, noise_var))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMapSolution {
    pub activations: Array1<f64>,
    pub support: Vec<usize>,
    pub objective: f64,
}

/// Exact MAP under the hard support constraint, by enumeration: every support of
/// size at most `support_size` gets a least-squares fill-in, fills with a negative
/// entry are discarded, and the lowest objective wins. Exponential in K; intended
/// for small problems and as a reference for encoder output.
pub fn fixed_sparsity_map(
    d: ArrayView1<f64>,
    w: ArrayView2<f64>,
    noise_var: f64,
    support_size: usize,
) -> Result<SparseMapSolution> {
    if w.nrows() != d.len() {
        return Err(CtmError::InvalidParams("W rows must match D".into()));
    }
    let k = w.ncols();
    let mut best = SparseMapSolution {
        activations: Array1::zeros(k),
        support: Vec::new(),
        objective: reconstruction(Array1::zeros(k).view(), d, w, noise_var),
    };
    let mut support = Vec::with_capacity(support_size);
    enumerate_supports(k, support_size.min(k), 0, &mut support, &mut |s| {
        if s.is_empty() {
            return;
        }
        let Some(fill) = least_squares_on_support(d, w, s) else {
            return;
        };
        if fill.iter().any(|&v| v < 0.0) {
            return;
        }
        let mut a = Array1::zeros(k);
        for (&j, &v) in s.iter().zip(&fill) {
            a[j] = v;
        }
        let obj = reconstruction(a.view(), d, w, noise_var);
        if obj < best.objective {
            best = SparseMapSolution { activations: a, support: s.to_vec(), objective: obj };
        }
    });
    Ok(best)
}

fn enumerate_supports(
    k: usize,
    max_size: usize,
    start: usize,
    current: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    visit(current);
    if current.len() == max_size {
        return;
    }
    for j in start..k {
        current.push(j);
        enumerate_supports(k, max_size, j + 1, current, visit);
        current.pop();
    }
}

/// Solves the normal equations `(W_S^T W_S) x = W_S^T D` by Gaussian elimination
/// with partial pivoting. `None` when the columns are (numerically) dependent.
fn least_squares_on_support(d: ArrayView1<f64>, w: ArrayView2<f64>, support: &[usize]) -> Option<Vec<f64>> {
    let m = support.len();
    let mut a = vec![vec![0.0; m + 1]; m];
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            a[r][c] = w.column(i).dot(&w.column(j));
        }
        a[r][m] = w.column(i).dot(&d);
    }
    let scale = (0..m).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for col in 0..m {
        let pivot = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        for row in (col + 1)..m {
            let f = a[row][col] / a[col][col];
            for c in col..=m {
                a[row][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let tail: f64 = ((row + 1)..m).map(|c| a[row][c] * x[c]).sum();
        x[row] = (a[row][m] - tail) / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pure_penalty_case() {
        let h = MapHyper {
            kappa: 1.0,
            beta: 2.0,
            alpha: vec![1.0, 1.0],
            noise_var: 1.0,
            decoder: Array2::zeros((3, 2)),
        };
        let v = map_objective(array![0.5, 0.5].view(), Array1::zeros(3).view(), &h).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn map_domain_errors() {
        let mut h = MapHyper {
            kappa: 2.0,
            beta: 1.0,
            alpha: vec![0.5, 1.0],
            noise_var: 1.0,
            decoder: Array2::eye(2),
        };
        let d = array![1.0, 1.0];
        assert!(matches!(map_objective(array![0.0, 0.0].view(), d.view(), &h), Err(CtmError::Domain(_))));
        assert!(matches!(map_objective(array![0.0, 1.0].view(), d.view(), &h), Err(CtmError::Domain(_))));
        // theta_k = 0 is fine when alpha_k = 1
        assert!(map_objective(array![1.0, 0.0].view(), d.view(), &h).is_ok());
        h.noise_var = 0.0;
        assert!(map_objective(array![1.0, 1.0].view(), d.view(), &h).is_err());
    }

    #[test]
    fn exact_reconstruction_leaves_penalty() {
        let w = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let a = array![1.0, 0.0];
        let d = w.dot(&a);
        assert_eq!(sae_l1_objective(a.view(), d.view(), w.view(), 0.7, 0.5), 0.5);
        let zero = Array1::zeros(2);
        let expected = d.dot(&d) / (2.0 * 0.7);
        assert_eq!(sae_l1_objective(zero.view(), d.view(), w.view(), 0.7, 0.5), expected);
    }

    #[test]
    fn fixed_sparsity_objective_checks_support() {
        let w = array![[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]];
        let a = array![0.5, 0.0, 1.0];
        let d = w.dot(&a);
        assert_eq!(fixed_sparsity_map_objective(a.view(), 2, d.view(), w.view(), 1.0).unwrap(), 0.0);
        assert_eq!(
            fixed_sparsity_map_objective(a.view(), 1, d.view(), w.view(), 1.0),
            Err(CtmError::SupportViolation { nonzeros: 2, limit: 1 })
        );
        // k = K: plain least-squares objective
        let b = array![0.1, 0.2, 0.3];
        let r = &d - &w.dot(&b);
        let v = fixed_sparsity_map_objective(b.view(), 3, d.view(), w.view(), 2.0).unwrap();
        assert!((v - r.dot(&r) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_map_recovers_planted_support() {
        let w = array![
            [1.0, 0.0, 0.0, 0.5, 0.3, 0.0],
            [0.0, 1.0, 0.0, 0.5, 0.0, 0.2],
            [0.0, 0.0, 1.0, 0.0, 0.3, 0.7],
            [0.2, 0.0, 0.1, 0.7, 0.9, 0.1]
        ];
        let mut a = Array1::zeros(6);
        a[1] = 2.0;
        a[4] = 0.5;
        let d = w.dot(&a);
        let sol = fixed_sparsity_map(d.view(), w.view(), 0.5, 2).unwrap();
        assert_eq!(sol.support, vec![1, 4]);
        assert!(sol.objective < 1e-20);
        for (x, y) in sol.activations.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
