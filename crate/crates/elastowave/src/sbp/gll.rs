//! Gauss–Lobatto–Legendre nodes, weights, and the collocation derivative.
//!
//! The N nodes on [−1, 1] are the endpoints together with the roots of
//! P′_{N−1}, the derivative of the Legendre polynomial of degree N−1. The
//! quadrature ω_n = 2 / (N(N−1) P_{N−1}(x_n)²) is exact for polynomials up
//! to degree 2N−3, and the cardinal-function derivative matrix satisfies
//! DᵀH + HD = Q with H = diag(ω) and Q = diag(−1, 0, …, 0, 1).

use crate::{Error, Result};

/// P_n(x) and P′_n(x) via the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut prev, mut cur) = (1.0_f64, x);
    for k in 1..n {
        let next = ((2 * k + 1) as f64 * x * cur - k as f64 * prev) / (k + 1) as f64;
        prev = cur;
        cur = next;
    }
    let denom = x * x - 1.0;
    let dp = if denom.abs() < 1e-12 {
        let sign = if x > 0.0 {
            1.0
        } else {
            (-1.0_f64).powi(n as i32 + 1)
        };
        sign * (n * (n + 1)) as f64 / 2.0
    } else {
        n as f64 * (x * cur - prev) / denom
    };
    (cur, dp)
}

/// GLL nodes in increasing order. Interior nodes are found by Newton
/// iteration on P′_{N−1} from Chebyshev–Lobatto starting guesses
/// (tolerance 1e−14, at most 100 iterations), then symmetrized about 0.
pub fn gll_nodes(n: usize) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::Operator(format!(
            "Gauss–Lobatto rule needs at least 3 nodes, got {n}"
        )));
    }
    let deg = n - 1;
    let mut nodes = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[n - 1] = 1.0;
    for k in 1..n - 1 {
        let mut x = -(std::f64::consts::PI * k as f64 / deg as f64).cos();
        let mut converged = false;
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(deg, x);
            // P″ from the Legendre differential equation
            let ddp = (2.0 * x * dp - (deg * (deg + 1)) as f64 * p) / (1.0 - x * x);
            let step = dp / ddp;
            x -= step;
            if step.abs() <= 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Operator(format!(
                "node iteration for the {n}-point Gauss–Lobatto rule did not converge"
            )));
        }
        nodes[k] = x;
    }
    for k in 1..n / 2 {
        let s = 0.5 * (nodes[k] - nodes[n - 1 - k]);
        nodes[k] = s;
        nodes[n - 1 - k] = -s;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    for k in 1..n {
        if nodes[k] <= nodes[k - 1] {
            return Err(Error::Operator(format!(
                "Gauss–Lobatto nodes for n={n} are not increasing"
            )));
        }
    }
    Ok(nodes)
}

/// Quadrature weights for the given GLL nodes.
pub fn gll_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let deg = n - 1;
    nodes
        .iter()
        .map(|&x| {
            let (p, _) = legendre_with_derivative(deg, x);
            2.0 / ((n * deg) as f64 * p * p)
        })
        .collect()
}

/// Dense collocation derivative D_{ij} = l′_j(x_i) for the Lagrange cardinal
/// functions on the nodes. Diagonal entries come from the zero-row-sum
/// condition, which is exact for the derivative of the constant.
pub fn gll_derivative(nodes: &[f64]) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let deg = n - 1;
    let pv: Vec<f64> = nodes
        .iter()
        .map(|&x| legendre_with_derivative(deg, x).0)
        .collect();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i][j] = pv[i] / (pv[j] * (nodes[i] - nodes[j]));
            }
        }
    }
    for i in 0..n {
        d[i][i] = -(0..n).filter(|&j| j != i).map(|j| d[i][j]).sum::<f64>();
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn legendre_recurrence_matches_closed_forms() {
        let x = 0.5;
        let (p2, dp2) = legendre_with_derivative(2, x);
        assert_abs_diff_eq!(p2, 0.5 * (3.0 * x * x - 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(dp2, 3.0 * x, epsilon = 1e-14);
        let (p3, _) = legendre_with_derivative(3, x);
        assert_abs_diff_eq!(p3, 0.5 * (5.0 * x.powi(3) - 3.0 * x), epsilon = 1e-15);
        // endpoint derivative limit
        let (_, dp4) = legendre_with_derivative(4, 1.0);
        assert_abs_diff_eq!(dp4, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn three_node_rule_is_simpson_like() {
        let nodes = gll_nodes(3).unwrap();
        assert_eq!(nodes, vec![-1.0, 0.0, 1.0]);
        let w = gll_weights(&nodes);
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 1.0 / 3.0, epsilon = 1e-15);
        // exact on 1, x², x³ (degree 2N−3 = 3)
        let q = |f: &dyn Fn(f64) -> f64| nodes.iter().zip(&w).map(|(&x, &w)| w * f(x)).sum::<f64>();
        assert_abs_diff_eq!(q(&|_| 1.0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q(&|x| x * x), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q(&|x| x * x * x), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn quadrature_is_exact_up_to_design_degree() {
        for n in 3..=12 {
            let nodes = gll_nodes(n).unwrap();
            let w = gll_weights(&nodes);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            for m in 0..=(2 * n - 3) {
                let num: f64 = nodes
                    .iter()
                    .zip(&w)
                    .map(|(&x, &w)| w * x.powi(m as i32))
                    .sum();
                let exact = if m % 2 == 0 { 2.0 / (m as f64 + 1.0) } else { 0.0 };
                assert_abs_diff_eq!(num, exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn eight_node_rule_matches_symbolic_integrals() {
        let nodes = gll_nodes(8).unwrap();
        let w = gll_weights(&nodes);
        let m13: f64 = nodes.iter().zip(&w).map(|(&x, &w)| w * x.powi(13)).sum();
        let m12: f64 = nodes.iter().zip(&w).map(|(&x, &w)| w * x.powi(12)).sum();
        assert_abs_diff_eq!(m13, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m12, 2.0 / 13.0, epsilon = 1e-12);
    }

    #[test]
    fn derivative_is_exact_on_the_collocation_space() {
        for n in [3, 6, 9, 12] {
            let nodes = gll_nodes(n).unwrap();
            let d = gll_derivative(&nodes);
            for m in 0..n {
                for i in 0..n {
                    let num: f64 = (0..n).map(|j| d[i][j] * nodes[j].powi(m as i32)).sum();
                    let exact = if m == 0 {
                        0.0
                    } else {
                        m as f64 * nodes[i].powi(m as i32 - 1)
                    };
                    let scale: f64 = (0..n)
                        .map(|j| (d[i][j] * nodes[j].powi(m as i32)).abs())
                        .sum::<f64>()
                        .max(1.0);
                    assert!(
                        (num - exact).abs() <= 1e-11 * scale,
                        "n={n} row {i} monomial {m}: {num} vs {exact}"
                    );
                }
            }
        }
    }
}
