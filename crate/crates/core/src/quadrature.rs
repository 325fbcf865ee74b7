//! Gauss–Hermite quadrature for expectations of functions of standard
//! normal vectors.

use nalgebra::DMatrix;

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0, I_dim)`. Weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub dim: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// One-dimensional rule with `n` points from the Golub–Welsch eigenproblem
/// of the probabilists' Hermite Jacobi matrix. Exact for polynomials of
/// degree `2n − 1`.
pub fn gauss_hermite_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Enforce the exact symmetry of the rule.
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        let (x1, w1) = pairs[k];
        let (x2, w2) = pairs[n - 1 - k];
        nodes[k] = 0.5 * (x1 - x2);
        weights[k] = 0.5 * (w1 + w2);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

impl GaussHermite {
    /// Tensor rule with `per_axis` points along each of `dim` axes.
    pub fn tensor(dim: usize, per_axis: usize) -> Self {
        let (x, w) = gauss_hermite_1d(per_axis);
        let mut nodes: Vec<Vec<f64>> = vec![Vec::new()];
        let mut weights = vec![1.0];
        for _ in 0..dim {
            let mut nn = Vec::with_capacity(nodes.len() * per_axis);
            let mut ww = Vec::with_capacity(nodes.len() * per_axis);
            for (p, pw) in nodes.iter().zip(&weights) {
                for (xi, wi) in x.iter().zip(&w) {
                    let mut q = p.clone();
                    q.push(*xi);
                    nn.push(q);
                    ww.push(pw * wi);
                }
            }
            nodes = nn;
            weights = ww;
        }
        Self { dim, nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(z))
            .sum()
    }
}
