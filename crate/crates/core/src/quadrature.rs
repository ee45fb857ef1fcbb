//! Gauss-Hermite and Gauss-Legendre nodes and weights.
//!
//! Both rules are computed by Newton iteration on the three-term recurrence,
//! which is accurate to machine precision for the node counts used here
//! (up to a few hundred). Hermite nodes use the physicists' convention with
//! weight function exp(-x^2), so the weights sum to sqrt(pi).

use crate::error::{Result, SimError};

const NEWTON_EPS: f64 = 3e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Nodes and weights for the physicists' Gauss-Hermite rule of order `n`.
///
/// Exact for integrands `p(x) exp(-x^2)` with `deg p <= 2n - 1`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(SimError::InvalidParameter(
            "Gauss-Hermite order must be positive".into(),
        ));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        // Standard initial guesses for the roots, largest first.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            // Orthonormal Hermite recurrence; p1 = value at z, pp = derivative.
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= NEWTON_EPS * (1.0 + z.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SimError::InvalidParameter(format!(
                "Gauss-Hermite Newton iteration stalled at order {n}"
            )));
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[m - 1] = 0.0;
    }
    // Descending order from the construction; flip to ascending.
    nodes.reverse();
    weights.reverse();
    Ok((nodes, weights))
}

/// Nodes and weights for Gauss-Legendre on `(-1, 1)` of order `n`.
///
/// Exact for polynomials of degree `<= 2n - 1`.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(SimError::InvalidParameter(
            "Gauss-Legendre order must be positive".into(),
        ));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= NEWTON_EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SimError::InvalidParameter(format!(
                "Gauss-Legendre Newton iteration stalled at order {n}"
            )));
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok((nodes, weights))
}

/// Gauss-Legendre rule mapped to `(0, 1)`.
pub fn gauss_legendre_unit(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nodes, weights) = gauss_legendre(n)?;
    Ok((
        nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights.iter().map(|w| 0.5 * w).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Exact Gaussian weight-function moments: integral of x^m exp(-x^2)
    // equals Gamma((m+1)/2) for even m, 0 for odd m.
    fn hermite_moment(m: usize) -> f64 {
        if m % 2 == 1 {
            return 0.0;
        }
        // Gamma((m+1)/2) via the half-integer recursion from Gamma(1/2) = sqrt(pi).
        let mut val = std::f64::consts::PI.sqrt();
        let mut k = 0.5;
        while k < (m as f64 + 1.0) / 2.0 - 0.25 {
            val *= k;
            k += 1.0;
        }
        val
    }

    #[test]
    fn hermite_two_point_rule_matches_known_values() {
        let (x, w) = gauss_hermite(2).unwrap();
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(x[0], -inv_sqrt2, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], inv_sqrt2, epsilon = 1e-14);
        assert_abs_diff_eq!(w[0], std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn hermite_degree_exactness() {
        for n in [1usize, 2, 3, 5, 8, 13, 20, 32, 64] {
            let (x, w) = gauss_hermite(n).unwrap();
            for m in 0..2 * n {
                let quad: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(m as i32)).sum();
                let exact = hermite_moment(m);
                let scale = hermite_moment(m - m % 2).max(1.0);
                assert!(
                    (quad - exact).abs() <= 1e-12 * scale,
                    "n={n} m={m}: quad={quad:.16e} exact={exact:.16e}"
                );
            }
        }
    }

    #[test]
    fn hermite_first_failure_is_degree_2n() {
        let n = 6;
        let (x, w) = gauss_hermite(n).unwrap();
        let m = 2 * n;
        let quad: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(m as i32)).sum();
        let exact = hermite_moment(m);
        assert!((quad - exact).abs() > 1e-6 * exact);
    }

    #[test]
    fn legendre_degree_exactness() {
        for n in [1usize, 2, 4, 8, 16, 64] {
            let (x, w) = gauss_legendre(n).unwrap();
            for m in 0..2 * n {
                let quad: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(m as i32)).sum();
                let exact = if m % 2 == 0 { 2.0 / (m as f64 + 1.0) } else { 0.0 };
                assert_abs_diff_eq!(quad, exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn legendre_unit_integrates_monomials() {
        let (x, w) = gauss_legendre_unit(10).unwrap();
        for m in 0..20 {
            let quad: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(m)).sum();
            assert_abs_diff_eq!(quad, 1.0 / (m as f64 + 1.0), epsilon = 1e-13);
        }
    }

    #[test]
    fn zero_order_is_rejected() {
        assert!(gauss_hermite(0).is_err());
        assert!(gauss_legendre(0).is_err());
    }
}
