//! Gauss rules on the reference triangle and the reference edge.
//!
//! The reference triangle is `{(x, y) : x, y >= 0, x + y <= 1}` (measure 1/2),
//! the reference edge is `[0, 1]` (measure 1). Triangle rules are conical
//! products of Gauss-Legendre rules, so every weight is strictly positive and
//! any polynomial exactness up to the supported maximum is available.

use crate::error::{Error, Result};

/// Highest total polynomial degree the triangle rules integrate exactly.
pub const MAX_TRIANGLE_DEGREE: usize = 10;
/// Highest polynomial degree the edge rules integrate exactly.
pub const MAX_EDGE_DEGREE: usize = 12;

/// Quadrature rule on the reference triangle. Weights sum to 1/2.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// Quadrature rule on the reference edge [0, 1]. Weights sum to 1.
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre nodes and weights on [0, 1], exact for degree `2n - 1`.
///
/// Nodes of the Legendre polynomial are found by Newton iteration on the
/// three-term recurrence, which is accurate to machine precision for the
/// small point counts used here.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one Gauss point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess for the i-th root of P_n on [-1, 1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        // Nodes come out in descending order; store ascending on [0, 1].
        points[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (points, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rule integrating bivariate polynomials of total degree <= `degree` exactly
/// over the reference triangle.
pub fn triangle_rule(degree: usize) -> Result<TriangleRule> {
    if degree > MAX_TRIANGLE_DEGREE {
        return Err(Error::invalid(format!(
            "triangle rule degree {degree} exceeds supported maximum {MAX_TRIANGLE_DEGREE}"
        )));
    }
    // Collapse the triangle onto the unit square: x = u, y = v (1 - u) with
    // jacobian (1 - u). The u-integrand gains one degree from the jacobian.
    let nu = (degree + 2).div_ceil(2);
    let nv = (degree + 1).div_ceil(2).max(1);
    let (u_pts, u_wts) = gauss_legendre_01(nu);
    let (v_pts, v_wts) = gauss_legendre_01(nv);
    let mut points = Vec::with_capacity(nu * nv);
    let mut weights = Vec::with_capacity(nu * nv);
    for (u, wu) in u_pts.iter().zip(&u_wts) {
        for (v, wv) in v_pts.iter().zip(&v_wts) {
            points.push([*u, v * (1.0 - u)]);
            weights.push(wu * wv * (1.0 - u));
        }
    }
    Ok(TriangleRule { points, weights })
}

/// Gauss-Legendre rule on [0, 1] exact for polynomials of degree <= `degree`.
pub fn edge_rule(degree: usize) -> Result<EdgeRule> {
    if degree > MAX_EDGE_DEGREE {
        return Err(Error::invalid(format!(
            "edge rule degree {degree} exceeds supported maximum {MAX_EDGE_DEGREE}"
        )));
    }
    let n = (degree + 1).div_ceil(2).max(1);
    let (points, weights) = gauss_legendre_01(n);
    Ok(EdgeRule { points, weights })
}

/// Exact integral of `x^a y^b` over the reference triangle: `a! b! / (a+b+2)!`.
pub fn triangle_monomial_integral(a: usize, b: usize) -> f64 {
    // Evaluate the factorial ratio incrementally to stay in range.
    let mut value = 1.0;
    for k in 1..=(a + b + 2) {
        value /= k as f64;
        if k <= a {
            value *= k as f64;
        }
        if k <= b {
            value *= k as f64;
        }
    }
    value
}
