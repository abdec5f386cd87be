//! Newton continuation of the standing-wave branch.
//!
//! The stationary equation `Hφ + ωφ - φ⁷ = 0` bifurcates from the lower
//! bound state -E₀ of H: for ω slightly above E₀ there is a real, positive,
//! exponentially decaying solution
//!
//! ```text
//!     φ_ω = (ω - E₀)^{1/6} ||φ₀||₈^{-4/3} (φ₀ + O(ω - E₀)),
//! ```
//!
//! where φ₀ is the normalized positive eigenvector at -E₀.  The branch is
//! continued in ω by damped Newton with the tridiagonal Jacobian
//! `L₊ = H + ω - 7 φ⁶`; the ω-derivative of the wave solves `L₊ ∂_ωφ = -φ`.

use crate::error::Error;
use crate::lattice::{apply_h_real, Lattice, RealField};
use crate::potential::Potential;
use crate::tridiag;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Ground-state data of the linear operator H: E₀ and the normalized
/// positive eigenvector φ₀, plus the upper eigenvalue E₁ when present.
#[derive(Debug, Clone)]
pub struct LinearGroundState {
    pub e0: f64,
    pub phi0: RealField,
    pub e1: Option<f64>,
    pub phi1: Option<RealField>,
}

/// Extract -E₀ (and E₁ if present) with eigenvectors from the windowed H.
pub fn linear_ground_state(q: &Potential) -> Result<LinearGroundState> {
    let lat = q.profile.lattice;
    let (diag, off) = q.tridiagonal();
    let n = diag.len();
    let n_below = tridiag::sturm_count(&diag, &off, 0.0);
    if n_below != 1 {
        return Err(Error::Indeterminate(format!(
            "expected exactly one eigenvalue below 0, found {n_below}"
        )));
    }
    let lam0 = tridiag::kth_eigenvalue(&diag, &off, 0);
    let (lam0, mut v0) = tridiag::inverse_iteration(&diag, &off, lam0);
    // orientation: φ₀(0) > 0
    if v0[lat.idx(0)] < 0.0 {
        for x in v0.iter_mut() {
            *x = -*x;
        }
    }
    let phi0 = RealField::from_values(lat, v0)?;

    let n_above = n - tridiag::sturm_count(&diag, &off, 4.0 + 1e-12);
    let (e1, phi1) = if n_above >= 1 {
        let lam1 = tridiag::kth_eigenvalue(&diag, &off, n - 1);
        let (lam1, mut v1) = tridiag::inverse_iteration(&diag, &off, lam1);
        // orientation: positive at the site of largest amplitude
        let i0 = (0..n)
            .max_by(|a, b| v1[*a].abs().partial_cmp(&v1[*b].abs()).unwrap())
            .unwrap();
        if v1[i0] < 0.0 {
            for x in v1.iter_mut() {
                *x = -*x;
            }
        }
        (Some(lam1), Some(RealField::from_values(lat, v1)?))
    } else {
        (None, None)
    };
    Ok(LinearGroundState {
        e0: -lam0,
        phi0,
        e1,
        phi1,
    })
}

/// Bifurcation seed `c(ω) φ₀` with `c(ω) = (ω - E₀)^{1/6} ||φ₀||₈^{-4/3}`.
pub fn bifurcation_seed(phi0: &RealField, e0: f64, omega: f64) -> Result<RealField> {
    if omega <= e0 {
        return Err(Error::InvalidParameter(format!(
            "omega {omega} must exceed E0 = {e0}"
        )));
    }
    Ok(phi0.scale(seed_amplitude(phi0, e0, omega)))
}

/// The seed amplitude c(ω).
pub fn seed_amplitude(phi0: &RealField, e0: f64, omega: f64) -> f64 {
    (omega - e0).powf(1.0 / 6.0) * phi0.norm_lp(8.0).powf(-4.0 / 3.0)
}

/// Stationary residual `F(φ) = Hφ + ωφ - φ⁷`.
pub fn stationary_residual(q: &Potential, omega: f64, phi: &RealField) -> Result<RealField> {
    let mut f = apply_h_real(&q.effective(), phi)?;
    for (i, v) in f.values.iter_mut().enumerate() {
        let p = phi.values[i];
        *v += omega * p - p.powi(7);
    }
    Ok(f)
}

/// Tridiagonal Jacobian `L₊(φ) = H + ω - 7φ⁶` as (diag, off).
pub fn l_plus(q: &Potential, omega: f64, phi: &RealField) -> (Vec<f64>, Vec<f64>) {
    let qe = q.effective();
    let lat = q.profile.lattice;
    let diag: Vec<f64> = lat
        .sites()
        .map(|n| 2.0 + qe.get(n) + omega - 7.0 * phi.get(n).powi(6))
        .collect();
    let off = vec![-1.0; lat.len() - 1];
    (diag, off)
}

/// `L₋ = H + ω - φ⁶` as (diag, off); `L₋ φ_ω = 0` on the branch.
pub fn l_minus(q: &Potential, omega: f64, phi: &RealField) -> (Vec<f64>, Vec<f64>) {
    let qe = q.effective();
    let lat = q.profile.lattice;
    let diag: Vec<f64> = lat
        .sites()
        .map(|n| 2.0 + qe.get(n) + omega - phi.get(n).powi(6))
        .collect();
    let off = vec![-1.0; lat.len() - 1];
    (diag, off)
}

/// Damped Newton for the stationary equation; converges to an absolute
/// residual of 1e-12 and insists on a positive solution.
pub fn solve_ground_state(q: &Potential, omega: f64, seed: &RealField) -> Result<RealField> {
    let tol = 1e-12;
    let mut phi = seed.clone();
    let mut res = stationary_residual(q, omega, &phi)?;
    let mut res_norm = res.norm_l2();
    let mut iterations = 0usize;
    while res_norm > tol {
        iterations += 1;
        if iterations > 50 {
            return Err(Error::NewtonDiverged {
                iterations,
                residual: res_norm,
            });
        }
        let (diag, off) = l_plus(q, omega, &phi);
        let rhs: Vec<f64> = res.values.iter().map(|v| -v).collect();
        let step = tridiag::solve_shifted(&diag, &off, 0.0, &rhs);
        // full step with halving on residual increase
        let mut t = 1.0f64;
        let mut accepted = false;
        for _ in 0..25 {
            let mut cand = phi.clone();
            for (i, s) in step.iter().enumerate() {
                cand.values[i] += t * s;
            }
            let cand_res = stationary_residual(q, omega, &cand)?;
            let cand_norm = cand_res.norm_l2();
            if cand_norm < res_norm || cand_norm <= tol {
                phi = cand;
                res = cand_res;
                res_norm = cand_norm;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDiverged {
                iterations,
                residual: res_norm,
            });
        }
    }
    // positivity on the central half of the window
    let lat = q.profile.lattice;
    let half_lo = lat.n_min / 2;
    let half_hi = lat.n_max / 2;
    let min_central = (half_lo..=half_hi)
        .map(|n| phi.get(n))
        .fold(f64::MAX, f64::min);
    if min_central <= 0.0 {
        return Err(Error::SignChange);
    }
    Ok(phi)
}

/// A continued branch of ground states on an increasing ω-grid.
#[derive(Debug, Clone)]
pub struct GroundStateBranch {
    pub q: Potential,
    pub e0: f64,
    pub e1: Option<f64>,
    pub phi0: RealField,
    pub phi1: Option<RealField>,
    pub eta: f64,
    pub omegas: Vec<f64>,
    pub phi: Vec<RealField>,
    pub dphi: Vec<RealField>,
    pub d2phi: Vec<RealField>,
    pub mass: Vec<f64>,
    pub mass_prime: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Default branch extent η = min(0.1, gap/2), where the gap is the smaller
/// of E₀ and E₁ - 4.  Keeping ω - E₀ well below the gap keeps the internal
/// mode outside the continuous spectrum.
pub fn default_eta(e0: f64, e1: Option<f64>) -> f64 {
    let gap = match e1 {
        Some(e1) => e0.min(e1 - 4.0),
        None => e0,
    };
    (0.5 * gap).min(0.1)
}

/// Uniform grid of `count` points strictly inside (E₀, E₀ + η).
pub fn default_grid(e0: f64, eta: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|j| e0 + eta * j as f64 / (count + 1) as f64)
        .collect()
}

/// March the grid with warm starts, filling derivatives and masses.
pub fn continue_branch(q: &Potential, omega_grid: &[f64]) -> Result<GroundStateBranch> {
    if omega_grid.len() < 2 {
        return Err(Error::InvalidParameter(
            "branch needs at least 2 grid points".into(),
        ));
    }
    if omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("omega grid must increase".into()));
    }
    let linear = linear_ground_state(q)?;
    let e0 = linear.e0;
    if omega_grid[0] <= e0 {
        return Err(Error::InvalidParameter(format!(
            "grid starts at {} below E0 = {e0}",
            omega_grid[0]
        )));
    }
    let eta = omega_grid.last().unwrap() - e0;

    let mut phi_list = Vec::with_capacity(omega_grid.len());
    let mut dphi_list = Vec::with_capacity(omega_grid.len());
    let mut d2phi_list = Vec::with_capacity(omega_grid.len());
    let mut mass = Vec::with_capacity(omega_grid.len());
    let mut mass_prime = Vec::with_capacity(omega_grid.len());
    let mut residuals = Vec::with_capacity(omega_grid.len());

    let mut seed = bifurcation_seed(&linear.phi0, e0, omega_grid[0])?;
    for &omega in omega_grid {
        let phi = solve_ground_state(q, omega, &seed)?;
        let res = stationary_residual(q, omega, &phi)?.norm_l2();

        let (diag, off) = l_plus(q, omega, &phi);
        let rhs: Vec<f64> = phi.values.iter().map(|v| -v).collect();
        let dphi_vals = tridiag::solve_shifted(&diag, &off, 0.0, &rhs);
        let dphi = RealField::from_values(phi.lattice, dphi_vals)?;
        // implicit-derivative residual gates fold points
        let mut check = apply_h_real(&q.effective(), &dphi)?;
        for (i, v) in check.values.iter_mut().enumerate() {
            *v += omega * dphi.values[i] - 7.0 * phi.values[i].powi(6) * dphi.values[i]
                + phi.values[i];
        }
        let dres = check.norm_l2();
        if dres > 1e-10 * (1.0 + dphi.norm_l2()) {
            return Err(Error::FoldPoint);
        }

        // L₊ ∂²φ = -2 ∂φ + 42 φ⁵ (∂φ)²
        let rhs2: Vec<f64> = (0..phi.values.len())
            .map(|i| {
                -2.0 * dphi.values[i] + 42.0 * phi.values[i].powi(5) * dphi.values[i].powi(2)
            })
            .collect();
        let d2phi_vals = tridiag::solve_shifted(&diag, &off, 0.0, &rhs2);
        let d2phi = RealField::from_values(phi.lattice, d2phi_vals)?;

        mass.push(phi.dot(&phi));
        mass_prime.push(2.0 * phi.dot(&dphi));
        residuals.push(res);
        seed = phi.clone();
        phi_list.push(phi);
        dphi_list.push(dphi);
        d2phi_list.push(d2phi);
    }

    Ok(GroundStateBranch {
        q: q.clone(),
        e0,
        e1: linear.e1,
        phi0: linear.phi0,
        phi1: linear.phi1,
        eta,
        omegas: omega_grid.to_vec(),
        phi: phi_list,
        dphi: dphi_list,
        d2phi: d2phi_list,
        mass,
        mass_prime,
        residuals,
    })
}

/// Branch values interpolated at one ω.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub omega: f64,
    pub phi: RealField,
    pub dphi: RealField,
    pub d2phi: RealField,
    pub mass: f64,
    pub mass_prime: f64,
}

impl GroundStateBranch {
    pub fn lattice(&self) -> Lattice {
        self.q.profile.lattice
    }

    pub fn omega_range(&self) -> (f64, f64) {
        (self.omegas[0], *self.omegas.last().unwrap())
    }

    fn segment(&self, omega: f64) -> Result<usize> {
        let (lo, hi) = self.omega_range();
        if omega < lo - 1e-14 || omega > hi + 1e-14 {
            return Err(Error::BranchRange { omega, lo, hi });
        }
        let mut i = match self
            .omegas
            .binary_search_by(|x| x.partial_cmp(&omega).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i >= self.omegas.len() - 1 {
            i = self.omegas.len() - 2;
        }
        Ok(i)
    }

    /// Cubic-Hermite interpolation in ω: φ from the (φ, ∂φ) pairs, ∂φ from
    /// the (∂φ, ∂²φ) pairs; ∂²φ as the derivative of the latter.  The
    /// branch is analytic in ω, which keeps this accurate to O(h⁴).
    pub fn eval(&self, omega: f64) -> Result<BranchPoint> {
        let i = self.segment(omega)?;
        let h = self.omegas[i + 1] - self.omegas[i];
        let t = (omega - self.omegas[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        let (d00, d10, d01, d11) = hermite_basis_deriv(t);
        let lat = self.lattice();
        let n = lat.len();

        let mut phi = RealField::zero(lat);
        let mut dphi = RealField::zero(lat);
        let mut d2phi = RealField::zero(lat);
        for k in 0..n {
            let (p0, p1) = (self.phi[i].values[k], self.phi[i + 1].values[k]);
            let (m0, m1) = (self.dphi[i].values[k], self.dphi[i + 1].values[k]);
            phi.values[k] = h00 * p0 + h10 * h * m0 + h01 * p1 + h11 * h * m1;
            let (s0, s1) = (self.d2phi[i].values[k], self.d2phi[i + 1].values[k]);
            dphi.values[k] = h00 * m0 + h10 * h * s0 + h01 * m1 + h11 * h * s1;
            d2phi.values[k] = (d00 * m0 + d01 * m1) / h + d10 * s0 + d11 * s1;
        }
        let mass = phi.dot(&phi);
        let mass_prime = 2.0 * phi.dot(&dphi);
        Ok(BranchPoint {
            omega,
            phi,
            dphi,
            d2phi,
            mass,
            mass_prime,
        })
    }

    /// Index of the stored grid point closest to ω.
    pub fn nearest_index(&self, omega: f64) -> usize {
        (0..self.omegas.len())
            .min_by(|a, b| {
                (self.omegas[*a] - omega)
                    .abs()
                    .partial_cmp(&(self.omegas[*b] - omega).abs())
                    .unwrap()
            })
            .unwrap()
    }
}

fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

fn hermite_basis_deriv(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    (
        6.0 * t2 - 6.0 * t,
        3.0 * t2 - 4.0 * t + 1.0,
        -6.0 * t2 + 6.0 * t,
        3.0 * t2 - 2.0 * t,
    )
}

#[derive(Serialize, Deserialize)]
struct BranchManifest {
    eps: f64,
    e0: f64,
    e1: Option<f64>,
    eta: f64,
    n_min: i64,
    n_max: i64,
    omegas: Vec<f64>,
    mass: Vec<f64>,
    mass_prime: Vec<f64>,
    residuals: Vec<f64>,
    potential_file: String,
    field_files: Vec<(String, String, String)>,
    phi0_file: String,
    phi1_file: Option<String>,
}

fn save_real(f: &RealField, path: &Path) -> Result<()> {
    crate::lattice::save_field_to(&f.to_complex(), path)
}

fn load_real(path: &Path) -> Result<RealField> {
    Ok(crate::lattice::load_field_from(path)?.re())
}

/// Persist a branch as a JSON manifest plus per-ω field files.
pub fn save_branch(branch: &GroundStateBranch, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut field_files = Vec::new();
    for (j, _) in branch.omegas.iter().enumerate() {
        let phi_name = format!("phi_{j:03}.txt");
        let dphi_name = format!("dphi_{j:03}.txt");
        let d2phi_name = format!("d2phi_{j:03}.txt");
        save_real(&branch.phi[j], &dir.join(&phi_name))?;
        save_real(&branch.dphi[j], &dir.join(&dphi_name))?;
        save_real(&branch.d2phi[j], &dir.join(&d2phi_name))?;
        field_files.push((phi_name, dphi_name, d2phi_name));
    }
    save_real(&branch.q.profile, &dir.join("potential.txt"))?;
    save_real(&branch.phi0, &dir.join("phi0.txt"))?;
    let phi1_file = if let Some(phi1) = &branch.phi1 {
        save_real(phi1, &dir.join("phi1.txt"))?;
        Some("phi1.txt".to_string())
    } else {
        None
    };
    let manifest = BranchManifest {
        eps: branch.q.eps,
        e0: branch.e0,
        e1: branch.e1,
        eta: branch.eta,
        n_min: branch.lattice().n_min,
        n_max: branch.lattice().n_max,
        omegas: branch.omegas.clone(),
        mass: branch.mass.clone(),
        mass_prime: branch.mass_prime.clone(),
        residuals: branch.residuals.clone(),
        potential_file: "potential.txt".into(),
        field_files,
        phi0_file: "phi0.txt".into(),
        phi1_file,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("branch.json"), json)?;
    Ok(())
}

pub fn load_branch(dir: &Path) -> Result<GroundStateBranch> {
    let manifest: BranchManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("branch.json"))?)?;
    let profile = load_real(&dir.join(&manifest.potential_file))?;
    let q = Potential::new(profile, manifest.eps)?;
    let phi0 = load_real(&dir.join(&manifest.phi0_file))?;
    let phi1 = match &manifest.phi1_file {
        Some(f) => Some(load_real(&dir.join(f))?),
        None => None,
    };
    let mut phi = Vec::new();
    let mut dphi = Vec::new();
    let mut d2phi = Vec::new();
    for (a, b, c) in &manifest.field_files {
        phi.push(load_real(&dir.join(a))?);
        dphi.push(load_real(&dir.join(b))?);
        d2phi.push(load_real(&dir.join(c))?);
    }
    Ok(GroundStateBranch {
        q,
        e0: manifest.e0,
        e1: manifest.e1,
        phi0,
        phi1,
        eta: manifest.eta,
        omegas: manifest.omegas,
        phi,
        dphi,
        d2phi,
        mass: manifest.mass,
        mass_prime: manifest.mass_prime,
        residuals: manifest.residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q03() -> Potential {
        Potential::canonical_three_site(Lattice::symmetric(256).unwrap(), 0.3).unwrap()
    }

    fn small_branch(q: &Potential, count: usize) -> GroundStateBranch {
        let lin = linear_ground_state(q).unwrap();
        let eta = default_eta(lin.e0, lin.e1);
        let grid = default_grid(lin.e0, eta, count);
        continue_branch(q, &grid).unwrap()
    }

    #[test]
    fn seed_scaling_and_zero_limit() {
        let q = q03();
        let lin = linear_ground_state(&q).unwrap();
        let d = 1e-4;
        let s1 = bifurcation_seed(&lin.phi0, lin.e0, lin.e0 + d).unwrap();
        let s2 = bifurcation_seed(&lin.phi0, lin.e0, lin.e0 + 2.0 * d).unwrap();
        let ratio = s2.norm_l2() / s1.norm_l2();
        assert!((ratio - 2f64.powf(1.0 / 6.0)).abs() < 1e-12, "{ratio}");
        // c(ω) → 0 as ω → E₀⁺
        let s = bifurcation_seed(&lin.phi0, lin.e0, lin.e0 * (1.0 + 1e-12)).unwrap();
        assert!(s.norm_l2() < 5e-2);
        assert!(bifurcation_seed(&lin.phi0, lin.e0, lin.e0).is_err());
    }

    #[test]
    fn seed_leading_order_balance() {
        // <F(seed), φ₀> / c = O((ω-E₀)²): the linear term cancels exactly
        let q = q03();
        let lin = linear_ground_state(&q).unwrap();
        for &d in &[1e-4, 5e-5, 2.5e-5] {
            let omega = lin.e0 + d;
            let seed = bifurcation_seed(&lin.phi0, lin.e0, omega).unwrap();
            let c = seed_amplitude(&lin.phi0, lin.e0, omega);
            let f = stationary_residual(&q, omega, &seed).unwrap();
            let proj = f.dot(&lin.phi0) / c;
            assert!(
                proj.abs() < 10.0 * d * d,
                "d={d}: projection {proj:e} not O(d²)"
            );
        }
    }

    #[test]
    fn newton_converges_from_seed() {
        let q = q03();
        let lin = linear_ground_state(&q).unwrap();
        let omega = lin.e0 + 1e-3;
        let seed = bifurcation_seed(&lin.phi0, lin.e0, omega).unwrap();
        let phi = solve_ground_state(&q, omega, &seed).unwrap();
        let res = stationary_residual(&q, omega, &phi).unwrap().norm_l2();
        assert!(res <= 1e-12, "residual {res:e}");
        // strictly positive on the central half
        for n in -128..=128 {
            assert!(phi.get(n) > 0.0, "site {n}");
        }
        // exponential decay certified
        let fit = crate::lattice::fit_exponential_decay(&phi.to_complex()).unwrap();
        assert!(fit.ok && fit.rate > 0.0);
    }

    #[test]
    fn negative_seed_is_rejected() {
        let q = q03();
        let lin = linear_ground_state(&q).unwrap();
        let omega = lin.e0 + 1e-3;
        let seed = bifurcation_seed(&lin.phi0, lin.e0, omega)
            .unwrap()
            .scale(-1.0);
        assert!(matches!(
            solve_ground_state(&q, omega, &seed),
            Err(Error::SignChange)
        ));
    }

    #[test]
    fn norm_scaling_along_branch() {
        // halving ω - E₀ shrinks ||φ_ω||₂ by about 2^{-1/6}
        let q = q03();
        let lin = linear_ground_state(&q).unwrap();
        let d = 1e-4;
        let phi_a = solve_ground_state(
            &q,
            lin.e0 + d,
            &bifurcation_seed(&lin.phi0, lin.e0, lin.e0 + d).unwrap(),
        )
        .unwrap();
        let phi_b = solve_ground_state(
            &q,
            lin.e0 + d / 2.0,
            &bifurcation_seed(&lin.phi0, lin.e0, lin.e0 + d / 2.0).unwrap(),
        )
        .unwrap();
        let ratio = phi_b.norm_l2() / phi_a.norm_l2();
        let expect = 2f64.powf(-1.0 / 6.0);
        // the 1/6-power law up to the O(ω-E₀) branch correction
        assert!((ratio - expect).abs() < 0.03, "ratio {ratio} vs {expect}");
    }

    #[test]
    fn branch_consistency() {
        let q = q03();
        let branch = small_branch(&q, 9);
        // residual invariant at every grid point
        for r in &branch.residuals {
            assert!(*r <= 1e-12);
        }
        // mass' cross-check against centered differences with a local step:
        // q(ω) ~ (ω-E₀)^{1/3} near the bifurcation, so the step must be a
        // small fraction of ω - E₀ for the quadratic FD error to be tiny
        for j in [1usize, branch.omegas.len() / 2, branch.omegas.len() - 1] {
            let omega = branch.omegas[j];
            let delta = 1e-3 * (omega - branch.e0);
            let warm = &branch.phi[j];
            let phi_p = solve_ground_state(&q, omega + delta, warm).unwrap();
            let phi_m = solve_ground_state(&q, omega - delta, warm).unwrap();
            let fd = (phi_p.dot(&phi_p) - phi_m.dot(&phi_m)) / (2.0 * delta);
            let rel = (branch.mass_prime[j] - fd).abs() / fd.abs();
            assert!(
                rel < 1e-6,
                "j={j}: {} vs {fd} ({rel:e})",
                branch.mass_prime[j]
            );
        }
        // implicit-derivative residual
        for j in 0..branch.omegas.len() {
            let (diag, off) = l_plus(&q, branch.omegas[j], &branch.phi[j]);
            let n = diag.len();
            let mut res = 0.0f64;
            for i in 0..n {
                let mut v = diag[i] * branch.dphi[j].values[i] + branch.phi[j].values[i];
                if i > 0 {
                    v += off[i - 1] * branch.dphi[j].values[i - 1];
                }
                if i + 1 < n {
                    v += off[i] * branch.dphi[j].values[i + 1];
                }
                res += v * v;
            }
            assert!(res.sqrt() <= 1e-10, "j={j}: {res:e}");
        }
        // decay fit at every point
        for phi in &branch.phi {
            let fit = crate::lattice::fit_exponential_decay(&phi.to_complex()).unwrap();
            assert!(fit.ok && fit.rate > 0.0);
        }
    }

    #[test]
    fn seed_accuracy_first_order() {
        // ||φ_ω/c(ω) - φ₀||₂ <= C (ω - E₀) with C stable over 3 dyadic levels
        let q = q03();
        let lin = linear_ground_state(&q).unwrap();
        let mut ratios = Vec::new();
        for k in 0..3 {
            let d = 1e-4 / 2f64.powi(k);
            let omega = lin.e0 + d;
            let seed = bifurcation_seed(&lin.phi0, lin.e0, omega).unwrap();
            let phi = solve_ground_state(&q, omega, &seed).unwrap();
            let c = seed_amplitude(&lin.phi0, lin.e0, omega);
            let dev = phi.scale(1.0 / c).sub(&lin.phi0).norm_l2();
            ratios.push(dev / d);
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 2.0, "first-order constant drifts: {ratios:?}");
    }

    #[test]
    fn hermite_interpolation_matches_solver() {
        let q = q03();
        let branch = small_branch(&q, 9);
        // interpolate midway and compare with a direct solve
        let omega = 0.5 * (branch.omegas[3] + branch.omegas[4]);
        let p = branch.eval(omega).unwrap();
        let phi_direct = solve_ground_state(&q, omega, &p.phi).unwrap();
        let err = p.phi.sub(&phi_direct).norm_l2() / phi_direct.norm_l2();
        assert!(err < 1e-5, "interpolation error {err:e}");
        // out-of-range errors
        assert!(branch.eval(branch.e0).is_err());
    }

    #[test]
    fn branch_roundtrip_bytes() {
        // the bound state at ε = 0.3 has decay length ~50 sites, so the
        // window must be a few times that for the eigenvalue to exist
        let q = Potential::canonical_three_site(Lattice::symmetric(200).unwrap(), 0.3).unwrap();
        let lin = linear_ground_state(&q).unwrap();
        let grid = default_grid(lin.e0, default_eta(lin.e0, lin.e1), 3);
        let branch = continue_branch(&q, &grid).unwrap();
        let dir = std::env::temp_dir().join(format!("branch_rt_{}", std::process::id()));
        save_branch(&branch, &dir).unwrap();
        let loaded = load_branch(&dir).unwrap();
        assert_eq!(branch.phi, loaded.phi);
        assert_eq!(branch.omegas, loaded.omegas);
        // byte-identical resave
        let dir2 = std::env::temp_dir().join(format!("branch_rt2_{}", std::process::id()));
        save_branch(&loaded, &dir2).unwrap();
        let a = std::fs::read(dir.join("phi_001.txt")).unwrap();
        let b = std::fs::read(dir2.join("phi_001.txt")).unwrap();
        assert_eq!(a, b);
        std::fs::remove_dir_all(&dir).ok();
        std::fs::remove_dir_all(&dir2).ok();
    }
}
