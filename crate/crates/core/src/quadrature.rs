//! Quadrature on reference simplices via collapsed (Duffy) Gauss-Legendre products.
//!
//! The reference simplex of dimension `d` has vertices `0, e1, .., ed`. All weights are
//! positive and all points lie in the interior.

/// Quadrature rule on a reference simplex. Points are stored with three coordinates; unused
/// coordinates are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Barycentric coordinates `(1 - sum xi, xi_1, .., xi_d)` of point `q`.
    pub fn barycentric(&self, q: usize) -> [f64; 4] {
        let p = &self.points[q];
        let mut lam = [0.0; 4];
        lam[0] = 1.0 - p[..self.dim].iter().sum::<f64>();
        lam[1..=self.dim].copy_from_slice(&p[..self.dim]);
        lam
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton on P_n starting from the Chebyshev-like guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn points_for(degree: usize) -> usize {
    degree / 2 + 1
}

/// A rule on the reference simplex of dimension `dim` (1, 2 or 3) exact for polynomials of
/// total degree `degree`.
pub fn simplex_rule(dim: usize, degree: usize) -> QuadratureRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match dim {
        0 => {
            points.push([0.0; 3]);
            weights.push(1.0);
        }
        1 => {
            let (x, w) = gauss_legendre(points_for(degree));
            for (xi, wi) in x.iter().zip(&w) {
                points.push([*xi, 0.0, 0.0]);
                weights.push(*wi);
            }
        }
        2 => {
            // x = s (1 - t), y = t, jacobian (1 - t)
            let (s, ws) = gauss_legendre(points_for(degree));
            let (t, wt) = gauss_legendre(points_for(degree + 1));
            for (ti, wti) in t.iter().zip(&wt) {
                for (si, wsi) in s.iter().zip(&ws) {
                    points.push([si * (1.0 - ti), *ti, 0.0]);
                    weights.push(wsi * wti * (1.0 - ti));
                }
            }
        }
        3 => {
            // x = s (1 - t)(1 - r), y = t (1 - r), z = r, jacobian (1 - t)(1 - r)^2
            let (s, ws) = gauss_legendre(points_for(degree));
            let (t, wt) = gauss_legendre(points_for(degree + 1));
            let (r, wr) = gauss_legendre(points_for(degree + 2));
            for (ri, wri) in r.iter().zip(&wr) {
                for (ti, wti) in t.iter().zip(&wt) {
                    for (si, wsi) in s.iter().zip(&ws) {
                        points.push([si * (1.0 - ti) * (1.0 - ri), ti * (1.0 - ri), *ri]);
                        weights.push(wsi * wti * wri * (1.0 - ti) * (1.0 - ri) * (1.0 - ri));
                    }
                }
            }
        }
        _ => panic!("no simplex rule for dimension {dim}"),
    }
    QuadratureRule { dim, points, weights, degree }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Exact integral of x^a y^b z^c over the reference simplex: a! b! c! / (a+b+c+d)!.
    fn monomial_integral(dim: usize, e: [usize; 3]) -> f64 {
        factorial(e[0]) * factorial(e[1]) * factorial(e[2]) / factorial(e[0] + e[1] + e[2] + dim)
    }

    #[test]
    fn weights_positive_and_sum_to_volume() {
        for dim in 1..=3 {
            for degree in 0..=10 {
                let rule = simplex_rule(dim, degree);
                assert!(rule.weights.iter().all(|&w| w > 0.0));
                let sum: f64 = rule.weights.iter().sum();
                assert!((sum - 1.0 / factorial(dim)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn monomials_integrated_exactly() {
        for dim in 1..=3 {
            for degree in 0..=10 {
                let rule = simplex_rule(dim, degree);
                for a in 0..=degree {
                    for b in 0..=(degree - a) {
                        for c in 0..=(degree - a - b) {
                            let e = [a, if dim > 1 { b } else { 0 }, if dim > 2 { c } else { 0 }];
                            let approx: f64 = rule
                                .points
                                .iter()
                                .zip(&rule.weights)
                                .map(|(p, w)| w * p[0].powi(e[0] as i32) * p[1].powi(e[1] as i32) * p[2].powi(e[2] as i32))
                                .sum();
                            let exact = monomial_integral(dim, e);
                            assert!((approx - exact).abs() < 1e-13, "dim {dim} degree {degree} {e:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gauss_legendre_small() {
        let (x, w) = gauss_legendre(1);
        assert_eq!((x[0], w[0]), (0.5, 1.0));
        let (x, _) = gauss_legendre(2);
        assert!((x[0] - (0.5 - 0.5 / 3f64.sqrt())).abs() < 1e-15);
    }
}
