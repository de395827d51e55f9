//! k-nearest-neighbor estimators for differential entropy and KL divergence
//! between point clouds, plus the entropy gradient used by the free-point
//! optimization. Brute-force neighbor search; the clouds here are small.

use std::f64::consts::PI;

/// Digamma function, asymptotic series with upward recurrence.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln() - 0.5 * inv - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0))
}

fn ln_unit_ball_volume(d: usize) -> f64 {
    let d = d as f64;
    (d / 2.0) * PI.ln() - ln_gamma(d / 2.0 + 1.0)
}

/// Log-gamma via the Lanczos approximation.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.9999999999998099,
        676.5203681218851,
        -1259.1392167224028,
        771.3234287776531,
        -176.6150291621406,
        12.507343278686905,
        -0.13857109526572012,
        9.984369578019572e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection.
        return PI.ln() - (PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, &g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The `k` nearest neighbors of `points[i]` within `points` (self excluded),
/// closest first.
pub fn k_neighbors_in_cloud(points: &[Vec<f64>], i: usize, k: usize) -> Vec<(usize, f64)> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (j, p) in points.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = dist(&points[i], p);
        if best.len() < k || d < best.last().unwrap().0 {
            let pos = best.partition_point(|&(bd, _)| bd < d);
            best.insert(pos, (d, j));
            if best.len() > k {
                best.pop();
            }
        }
    }
    best.into_iter().map(|(d, j)| (j, d)).collect()
}

/// Index and distance of the k-th nearest neighbor of `points[i]`.
pub fn kth_neighbor_in_cloud(points: &[Vec<f64>], i: usize, k: usize) -> (usize, f64) {
    *k_neighbors_in_cloud(points, i, k)
        .last()
        .expect("cloud must have more than k points")
}

/// Distance from `x` to its k-th nearest neighbor in `cloud`.
pub fn kth_neighbor_distance(x: &[f64], cloud: &[Vec<f64>], k: usize) -> f64 {
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for p in cloud {
        let d = dist(x, p);
        if best.len() < k || d < *best.last().unwrap() {
            let pos = best.partition_point(|&bd| bd < d);
            best.insert(pos, d);
            if best.len() > k {
                best.pop();
            }
        }
    }
    *best.last().expect("cloud must have at least k points")
}

/// Kozachenko-Leonenko entropy estimate of a point cloud.
pub fn knn_entropy(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut sum_ln = 0.0;
    for i in 0..n {
        let (_, rho) = kth_neighbor_in_cloud(points, i, k);
        sum_ln += rho.max(1e-300).ln();
    }
    (d as f64 / n as f64) * sum_ln + ln_unit_ball_volume(d) + digamma(n as f64)
        - digamma(k as f64)
}

/// k-NN KL divergence estimate between cloud `p` and reference samples `q`.
pub fn knn_kl_divergence(p: &[Vec<f64>], q: &[Vec<f64>], k: usize) -> f64 {
    let n = p.len();
    let m = q.len();
    let d = p[0].len() as f64;
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        let rho = kth_neighbor_in_cloud(p, i, k).1.max(1e-300);
        let nu = kth_neighbor_distance(x, q, k).max(1e-300);
        acc += (nu / rho).ln();
    }
    (d / n as f64) * acc + (m as f64 / (n as f64 - 1.0)).ln()
}

/// Gradient of `n * H` for the shell-averaged KL entropy
/// `H = (d/n) sum_i (1/k) sum_{j<=k} ln rho_{j,i} + const`: every point is
/// pushed away from each of its first `k` neighbors, and reciprocally.
/// Averaging over the shells (rather than the k-th alone) removes the
/// degeneracy where sub-k clumps collapse without penalty. Distances are
/// floored to keep the repulsion finite when points coincide.
pub fn knn_entropy_gradient_scaled(points: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = points.len();
    let d = points[0].len();
    let mut grad = vec![vec![0.0; d]; n];
    for i in 0..n {
        for (j, rho) in k_neighbors_in_cloud(points, i, k) {
            let rho2 = (rho * rho).max(1e-12);
            for c in 0..d {
                let delta = points[i][c] - points[j][c];
                let force = d as f64 * delta / (rho2 * k as f64);
                // d ln rho_{j,i} / d x_i and / d x_j.
                grad[i][c] += force;
                grad[j][c] -= force;
            }
        }
    }
    grad
}

/// Shell-averaged KL entropy estimate matching the gradient above.
pub fn knn_entropy_averaged(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut sum_ln = 0.0;
    for i in 0..n {
        for (_, rho) in k_neighbors_in_cloud(points, i, k) {
            sum_ln += rho.max(1e-300).ln() / k as f64;
        }
    }
    let psi_avg: f64 = (1..=k).map(|j| digamma(j as f64)).sum::<f64>() / k as f64;
    (d as f64 / n as f64) * sum_ln + ln_unit_ball_volume(d) + digamma(n as f64) - psi_avg
}
