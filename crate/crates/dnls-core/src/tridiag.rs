//! Symmetric tridiagonal linear algebra: Sturm bisection, implicit-shift QL
//! with eigenvector accumulation, inverse iteration and pivoted solves.
//!
//! The windowed operator H = -Δ + q is symmetric tridiagonal (diagonal
//! `2 + q(n)`, off-diagonal -1), so bound-state counts, band-edge margins
//! and the spectral propagator all reduce to the routines here.

/// Count eigenvalues of the symmetric tridiagonal matrix strictly less than
/// `lambda` via the Sturm sequence (number of negative LDLᵀ pivots).
///
/// `diag` has length n, `off` length n-1.
pub fn sturm_count(diag: &[f64], off: &[f64], lambda: f64) -> usize {
    let n = diag.len();
    if n == 0 {
        return 0;
    }
    let guard = 1e-300;
    let mut count = 0usize;
    let mut q = diag[0] - lambda;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..n {
        let q_safe = if q.abs() < guard {
            if q >= 0.0 {
                guard
            } else {
                -guard
            }
        } else {
            q
        };
        q = (diag[i] - lambda) - off[i - 1] * off[i - 1] / q_safe;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Gershgorin bounds (lo, hi) enclosing the whole spectrum.
pub fn gershgorin(diag: &[f64], off: &[f64]) -> (f64, f64) {
    let n = diag.len();
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for i in 0..n {
        let e_left = if i > 0 { off[i - 1].abs() } else { 0.0 };
        let e_right = if i < n - 1 { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - e_left - e_right);
        hi = hi.max(diag[i] + e_left + e_right);
    }
    (lo - 1.0, hi + 1.0)
}

/// k-th eigenvalue (ascending, 0-based) by Sturm bisection.
pub fn kth_eigenvalue(diag: &[f64], off: &[f64], k: usize) -> f64 {
    let (mut a, mut b) = gershgorin(diag, off);
    for _ in 0..220 {
        let mid = 0.5 * (a + b);
        if (b - a) < 2.0 * f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
        if sturm_count(diag, off, mid) <= k {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// All eigenvalues, ascending, by Sturm bisection. O(N² log(1/ε)).
pub fn all_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    (0..diag.len()).map(|k| kth_eigenvalue(diag, off, k)).collect()
}

/// Number of eigenvalues in the half-open interval (a, b].
pub fn count_in(diag: &[f64], off: &[f64], a: f64, b: f64) -> usize {
    let nudge = |x: f64| x + 2.0 * f64::EPSILON * x.abs().max(1.0);
    sturm_count(diag, off, nudge(b)) - sturm_count(diag, off, nudge(a))
}

/// Solve (T - shift) x = b for a symmetric tridiagonal T with partial
/// pivoting (LAPACK gtsv-style).  Works for indefinite T.
pub fn solve_shifted(diag: &[f64], off: &[f64], shift: f64, b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert_eq!(b.len(), n);
    // band rows: dl (sub), d (diag), du (super), du2 (fill-in)
    let mut dl: Vec<f64> = off.to_vec();
    let mut d: Vec<f64> = diag.iter().map(|v| v - shift).collect();
    let mut du: Vec<f64> = off.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut x: Vec<f64> = b.to_vec();

    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            // no interchange
            if d[i] == 0.0 {
                d[i] = 1e-300;
            }
            let factor = dl[i] / d[i];
            d[i + 1] -= factor * du[i];
            x[i + 1] -= factor * x[i];
            if i + 2 < n {
                du2[i] = 0.0;
            }
            dl[i] = factor;
        } else {
            // interchange rows i and i+1
            let factor = d[i] / dl[i];
            d[i] = dl[i];
            let tmp = d[i + 1];
            d[i + 1] = du[i] - factor * tmp;
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -factor * du2[i];
            }
            du[i] = tmp;
            x.swap(i, i + 1);
            x[i + 1] -= factor * x[i];
            dl[i] = factor;
        }
    }
    // back substitution
    if d[n - 1] == 0.0 {
        d[n - 1] = 1e-300;
    }
    x[n - 1] /= d[n - 1];
    if n >= 2 {
        x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    x
}

/// Inverse iteration for the eigenvector nearest `lambda0`; returns the
/// Rayleigh-refined eigenvalue and a unit eigenvector.
pub fn inverse_iteration(diag: &[f64], off: &[f64], lambda0: f64) -> (f64, Vec<f64>) {
    let n = diag.len();
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.3 * ((i * 2654435761usize) % 97) as f64 / 97.0)
        .collect();
    normalize(&mut x);
    let mut lambda = lambda0;
    for iter in 0..40 {
        // a slight detuning keeps the shifted matrix numerically invertible
        let shift = if iter < 2 { lambda } else { lambda + 0.0 };
        let mut y = solve_shifted(diag, off, shift, &x);
        let ny = normalize(&mut y);
        x = y;
        let rayleigh = rayleigh_quotient(diag, off, &x);
        let converged = (rayleigh - lambda).abs() <= 1e-15 * rayleigh.abs().max(1.0);
        lambda = rayleigh;
        if converged && iter >= 2 {
            break;
        }
        if ny > 1e14 {
            // solution already dominated by the eigenvector
            let r = residual_norm(diag, off, lambda, &x);
            if r < 1e-13 {
                break;
            }
        }
    }
    (lambda, x)
}

fn rayleigh_quotient(diag: &[f64], off: &[f64], x: &[f64]) -> f64 {
    let n = diag.len();
    let mut num = 0.0;
    for i in 0..n {
        let mut tx = diag[i] * x[i];
        if i > 0 {
            tx += off[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            tx += off[i] * x[i + 1];
        }
        num += x[i] * tx;
    }
    num
}

fn residual_norm(diag: &[f64], off: &[f64], lambda: f64, x: &[f64]) -> f64 {
    let n = diag.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut tx = (diag[i] - lambda) * x[i];
        if i > 0 {
            tx += off[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            tx += off[i] * x[i + 1];
        }
        s += tx * tx;
    }
    s.sqrt()
}

fn normalize(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
    norm
}

/// Full eigendecomposition (values ascending, orthonormal eigenvectors) of a
/// symmetric tridiagonal matrix by implicit-shift QL with accumulation.
///
/// `vectors` is column-major: `vectors[k]` is the eigenvector for
/// `values[k]`.
pub struct TridiagEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

pub fn eigen_ql(diag: &[f64], off: &[f64]) -> TridiagEigen {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    // z[j] holds eigenvector j (updated in place by the rotations)
    let mut z: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut col = vec![0.0; n];
            col[j] = 1.0;
            col
        })
        .collect();

    for l in 0..n {
        let mut iter = 0;
        loop {
            // find small subdiagonal element
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 64, "QL iteration failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                // accumulate rotation into eigenvectors i and i+1
                for k in 0..n {
                    f = z[i + 1][k];
                    z[i + 1][k] = s * z[i][k] + c * f;
                    z[i][k] = c * z[i][k] - s * f;
                }
            }
            if r == 0.0 && m > l {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    // sort ascending
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = order.iter().map(|&i| std::mem::take(&mut z[i])).collect();
    TridiagEigen { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_chain(n: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![2.0; n], vec![-1.0; n - 1])
    }

    #[test]
    fn sturm_count_2x2() {
        // [[1,-1],[-1,3]] -> eigenvalues 2 ± sqrt(2)
        let d = [1.0, 3.0];
        let e = [-1.0];
        assert_eq!(sturm_count(&d, &e, 0.0), 0);
        assert_eq!(sturm_count(&d, &e, 1.0), 1);
        assert_eq!(sturm_count(&d, &e, 4.0), 2);
    }

    #[test]
    fn dirichlet_chain_spectrum() {
        // -Δ on n sites: eigenvalues 2 - 2 cos(kπ/(n+1))
        let n = 60;
        let (d, e) = free_chain(n);
        let evals = all_eigenvalues(&d, &e);
        for k in 1..=n {
            let exact = 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos();
            let best = evals
                .iter()
                .map(|&ev| (ev - exact).abs())
                .fold(f64::MAX, f64::min);
            assert!(best < 1e-10, "k={k}: err {best:.2e}");
        }
    }

    #[test]
    fn shifted_solve_matches_direct() {
        let n = 50;
        let d: Vec<f64> = (0..n).map(|i| 2.0 + ((i * 7) % 5) as f64 * 0.1).collect();
        let e = vec![-1.0; n - 1];
        let b: Vec<f64> = (0..n).map(|i| ((i * 13) % 11) as f64 - 5.0).collect();
        let shift = -0.7;
        let x = solve_shifted(&d, &e, shift, &b);
        // residual
        for i in 0..n {
            let mut tx = (d[i] - shift) * x[i];
            if i > 0 {
                tx += e[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                tx += e[i] * x[i + 1];
            }
            assert!((tx - b[i]).abs() < 1e-10, "row {i}");
        }
    }

    #[test]
    fn inverse_iteration_finds_bound_state() {
        // -Δ - 0.5 δ_0 on a window: single eigenvalue 2 - sqrt(17)/2
        let half = 200i64;
        let n = (2 * half + 1) as usize;
        let mut d = vec![2.0; n];
        d[half as usize] -= 0.5;
        let e = vec![-1.0; n - 1];
        let exact = 2.0 - 17f64.sqrt() / 2.0;
        let k0 = kth_eigenvalue(&d, &e, 0);
        assert!((k0 - exact).abs() < 1e-8, "sturm: {k0} vs {exact}");
        let (lam, v) = inverse_iteration(&d, &e, k0);
        assert!((lam - exact).abs() < 1e-9, "inverse iteration: {lam}");
        // eigenvector decays and is normalized
        let norm: f64 = v.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(v[0].abs() < 1e-12 && v[n - 1].abs() < 1e-12);
    }

    #[test]
    fn ql_matches_sturm_and_is_orthogonal() {
        let n = 80;
        let mut d = vec![2.0; n];
        let e = vec![-1.0; n - 1];
        for i in 0..n {
            d[i] += 0.3 * (-((i as f64 - 40.0) / 4.0).powi(2)).exp();
        }
        let eig = eigen_ql(&d, &e);
        let sturm = all_eigenvalues(&d, &e);
        for (a, b) in eig.values.iter().zip(&sturm) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // orthonormality spot checks
        for &(i, j) in &[(0usize, 0usize), (3, 3), (0, 5), (7, 20)] {
            let dot: f64 = eig.vectors[i]
                .iter()
                .zip(&eig.vectors[j])
                .map(|(a, b)| a * b)
                .sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((dot - expect).abs() < 1e-12, "({i},{j}): {dot}");
        }
        // eigen residual
        for k in [0usize, n / 2, n - 1] {
            let v = &eig.vectors[k];
            let lam = eig.values[k];
            let mut res = 0.0f64;
            for i in 0..n {
                let mut tv = (d[i] - lam) * v[i];
                if i > 0 {
                    tv += e[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    tv += e[i] * v[i + 1];
                }
                res += tv * tv;
            }
            assert!(res.sqrt() < 1e-11, "k={k}: residual {res:.2e}");
        }
    }
}
