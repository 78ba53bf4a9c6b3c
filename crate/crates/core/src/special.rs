//! Modified Bessel function of the first kind, order one.
//!
//! The power series is used below [`SERIES_CUTOFF`] and the large-argument
//! asymptotic expansion above it. Both branches are evaluated in exponentially
//! scaled form so that densities such as `e^{-x} I_1(x)` never overflow.

/// Argument at which evaluation switches from the series to the asymptotic expansion.
pub const SERIES_CUTOFF: f64 = 20.0;

const TERM_TOL: f64 = 1e-17;

/// `I_1(x)` for `x >= 0`. Returns `+inf` once the result overflows.
pub fn bessel_i1(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        i1_series(x)
    } else {
        bessel_i1_scaled(x) * x.exp()
    }
}

/// `e^{-x} I_1(x)` for `x >= 0`.
pub fn bessel_i1_scaled(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        i1_series(x) * (-x).exp()
    } else {
        i1_asymptotic_scaled(x)
    }
}

/// `I_1(x) = sum_k (x/2)^{2k+1} / (k! (k+1)!)`. All terms are positive, so the
/// sum carries no cancellation error.
fn i1_series(x: f64) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    let mut term = half;
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + 1.0));
        sum += term;
        if term <= sum * TERM_TOL {
            break;
        }
    }
    sum
}

/// Hankel expansion `e^{-x} I_1(x) ~ (2 pi x)^{-1/2} sum_k (-1)^k a_k / x^k` with
/// `a_k = prod_{j=1..k} (4 - (2j-1)^2) / (k! 8^k)`. Truncated at the smallest term.
fn i1_asymptotic_scaled(x: f64) -> f64 {
    let mut term: f64 = 1.0;
    let mut sum: f64 = 1.0;
    let mut j = 1.0;
    loop {
        let odd = 2.0 * j - 1.0;
        let next = -term * (4.0 - odd * odd) / (j * 8.0 * x);
        if next.abs() >= term.abs() || next.abs() <= sum.abs() * TERM_TOL {
            if next.abs() < term.abs() {
                sum += next;
            }
            break;
        }
        sum += next;
        term = next;
        j += 1.0;
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}
