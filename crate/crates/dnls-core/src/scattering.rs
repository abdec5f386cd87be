//! Jost functions, Wronskians, transmission/reflection coefficients,
//! resolvent kernels and the limiting-absorption projection for the scalar
//! operator H = -Δ + q.
//!
//! Spectral parametrization: λ = 2(1 - cos θ) with the branch Im θ <= 0.
//! The + boundary value on the band (limit from Im z > 0) corresponds to
//! θ = -θ₀ with θ₀ ∈ (0, π); the - side uses θ = +θ₀ (that is,
//! θ → -conj(θ)).  With this orientation the spectral density
//! (1/2πi)(R⁺ - R⁻) is positive.

use crate::error::Error;
use crate::lattice::{apply_h, Lattice, LatticeField};
use crate::potential::Potential;
use crate::tridiag;
use crate::{Complex, Result};

/// Which boundary value of the resolvent on the band to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

/// Solve 2(1 - cos θ) = z on the branch Im θ <= 0.
pub fn theta_from_z(z: Complex) -> Complex {
    let theta = (Complex::new(1.0, 0.0) - z / 2.0).acos();
    if theta.im > 0.0 {
        -theta
    } else {
        theta
    }
}

/// θ for a boundary value λ ± i0 with λ in the open band (0, 4).
pub fn theta_boundary(lambda: f64, side: Side) -> Result<Complex> {
    if !(0.0..=4.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda {lambda} outside the band [0,4]"
        )));
    }
    let theta0 = (1.0 - lambda / 2.0).clamp(-1.0, 1.0).acos();
    Ok(match side {
        Side::Plus => Complex::new(-theta0, 0.0),
        Side::Minus => Complex::new(theta0, 0.0),
    })
}

/// Free resolvent kernel `R_{-Δ}(µ, ν; z) = e^{-iθ|µ-ν|} / (2i sin θ)` for
/// z off the band.
pub fn free_resolvent_kernel(z: Complex, mu: i64, nu: i64) -> Result<Complex> {
    if z.im == 0.0 && (0.0..=4.0).contains(&z.re) {
        return Err(Error::OnBand { z: z.re });
    }
    Ok(free_kernel_at_theta(theta_from_z(z), mu, nu))
}

/// Free resolvent boundary kernel on the band.
pub fn free_resolvent_kernel_boundary(lambda: f64, side: Side, mu: i64, nu: i64) -> Result<Complex> {
    let theta = theta_boundary(lambda, side)?;
    Ok(free_kernel_at_theta(theta, mu, nu))
}

fn free_kernel_at_theta(theta: Complex, mu: i64, nu: i64) -> Complex {
    let i = Complex::i();
    let d = (mu - nu).abs() as f64;
    (-i * theta * d).exp() / (2.0 * i * theta.sin())
}

/// Jost solutions of H f = λ f at spectral parameter θ (Im θ <= 0), with
/// f₊(ν) → e^{-iνθ} as ν → +∞ and f₋(ν) → e^{+iνθ} as ν → -∞.
#[derive(Debug, Clone)]
pub struct JostData {
    pub theta: Complex,
    pub lambda: Complex,
    pub f_plus: LatticeField,
    pub f_minus: LatticeField,
    /// Mean of the Wronskian `f₊(ν+1) f₋(ν) - f₊(ν) f₋(ν+1)` over interior
    /// sites.
    pub wronskian: Complex,
    /// Maximum deviation of the sitewise Wronskian from its mean.
    pub wronskian_spread: f64,
    /// Max sitewise residual of H f = λ f relative to max |f|, interior
    /// rows.
    pub recursion_residual: f64,
}

/// Compute both Jost functions by seeded three-term recursion:
/// `f(ν-1) = (2 - λ + q(ν)) f(ν) - f(ν+1)` marched inward from the edges.
pub fn jost(q: &Potential, theta: Complex) -> Result<JostData> {
    if theta.im > 1e-14 {
        return Err(Error::InvalidParameter(format!(
            "Im theta = {} > 0 violates the branch convention",
            theta.im
        )));
    }
    let lat = q.profile.lattice;
    let qe = q.effective();
    // the recursion must be seeded in a potential-free region
    for n in [lat.n_min, lat.n_min + 1, lat.n_max - 1, lat.n_max] {
        if qe.get(n).abs() > 1e-14 {
            return Err(Error::InvalidParameter(format!(
                "potential not negligible at seeding site {n}; grow the window"
            )));
        }
    }
    let lambda = 2.0 * (Complex::new(1.0, 0.0) - theta.cos());
    let i = Complex::i();

    let mut f_plus = LatticeField::zero(lat);
    f_plus.set(lat.n_max, (-i * theta * lat.n_max as f64).exp());
    f_plus.set(lat.n_max - 1, (-i * theta * (lat.n_max - 1) as f64).exp());
    for nu in (lat.n_min + 1..=lat.n_max - 1).rev() {
        let v = (2.0 - lambda + qe.get(nu)) * f_plus.get(nu) - f_plus.get(nu + 1);
        if v.norm() > 1e250 {
            return Err(Error::JostOverflow { site: nu - 1 });
        }
        f_plus.set(nu - 1, v);
    }

    let mut f_minus = LatticeField::zero(lat);
    f_minus.set(lat.n_min, (i * theta * lat.n_min as f64).exp());
    f_minus.set(lat.n_min + 1, (i * theta * (lat.n_min + 1) as f64).exp());
    for nu in lat.n_min + 1..=lat.n_max - 1 {
        let v = (2.0 - lambda + qe.get(nu)) * f_minus.get(nu) - f_minus.get(nu - 1);
        if v.norm() > 1e250 {
            return Err(Error::JostOverflow { site: nu + 1 });
        }
        f_minus.set(nu + 1, v);
    }

    // sitewise Wronskian
    let mut wmean = Complex::new(0.0, 0.0);
    let mut count = 0usize;
    for nu in lat.n_min..lat.n_max {
        wmean += f_plus.get(nu + 1) * f_minus.get(nu) - f_plus.get(nu) * f_minus.get(nu + 1);
        count += 1;
    }
    wmean /= count as f64;
    let mut spread = 0.0f64;
    for nu in lat.n_min..lat.n_max {
        let w = f_plus.get(nu + 1) * f_minus.get(nu) - f_plus.get(nu) * f_minus.get(nu + 1);
        spread = spread.max((w - wmean).norm());
    }

    // recursion residual relative to max |f|
    let scale = f_plus.norm_sup().max(f_minus.norm_sup());
    let mut residual = 0.0f64;
    for f in [&f_plus, &f_minus] {
        let hf = apply_h(&qe, f)?;
        for nu in lat.n_min + 1..lat.n_max {
            residual = residual.max((hf.get(nu) - lambda * f.get(nu)).norm());
        }
    }
    residual /= scale;

    Ok(JostData {
        theta,
        lambda,
        f_plus,
        f_minus,
        wronskian: wmean,
        wronskian_spread: spread,
        recursion_residual: residual,
    })
}

/// Transmission and reflection coefficients at real θ ∈ (0, π).
#[derive(Debug, Clone, Copy)]
pub struct ScatteringCoefficients {
    pub transmission: Complex,
    pub reflection_plus: Complex,
    pub reflection_minus: Complex,
}

/// Wronskian bracket `[f, g](ν) = f(ν+1) g(ν) - f(ν) g(ν+1)` averaged over
/// interior sites.
fn bracket(f: &LatticeField, g: &LatticeField) -> Complex {
    let lat = f.lattice;
    let mut acc = Complex::new(0.0, 0.0);
    let mut count = 0usize;
    for nu in lat.n_min..lat.n_max {
        acc += f.get(nu + 1) * g.get(nu) - f.get(nu) * g.get(nu + 1);
        count += 1;
    }
    acc / count as f64
}

/// Coefficients from Jost data at real θ, normalized so T → 1 as q → 0.
pub fn scattering_coefficients(data: &JostData) -> Result<ScatteringCoefficients> {
    if data.theta.im.abs() > 1e-12 {
        return Err(Error::InvalidParameter(
            "scattering coefficients need real theta in (0, pi)".into(),
        ));
    }
    let theta = data.theta.re;
    let i = Complex::i();
    let b_mp = bracket(&data.f_minus, &data.f_plus);
    if b_mp.norm() < 1e-10 {
        return Err(Error::SingularWronskian { value: b_mp.norm() });
    }
    let t = 2.0 * i * theta.sin() / b_mp;
    let r_plus = -bracket(&data.f_minus, &data.f_plus.conj()) / b_mp;
    let r_minus = -bracket(&data.f_plus, &data.f_minus.conj()) / bracket(&data.f_plus, &data.f_minus);
    Ok(ScatteringCoefficients {
        transmission: t,
        reflection_plus: r_plus,
        reflection_minus: r_minus,
    })
}

/// Endpoint-resonance certificate: Wronskians at θ = 0 (λ = 0) and θ = π
/// (λ = 4).  Nonresonance requires both to be bounded away from zero.
pub struct ResonanceCheck {
    pub w0: Complex,
    pub wpi: Complex,
    pub ok: bool,
}

pub fn resonance_check(q: &Potential) -> Result<ResonanceCheck> {
    let w0 = jost(q, Complex::new(0.0, 0.0))?.wronskian;
    let wpi = jost(q, Complex::new(std::f64::consts::PI, 0.0))?.wronskian;
    Ok(ResonanceCheck {
        w0,
        wpi,
        ok: w0.norm() > 1e-6 && wpi.norm() > 1e-6,
    })
}

/// Resolvent boundary kernel of H via the Jost factorization:
/// `R(λ ± i0; ν, ν') = -f₊(ν∨ν') f₋(ν∧ν') / W`.
pub struct ResolventH {
    jost: JostData,
}

impl ResolventH {
    pub fn new(q: &Potential, lambda: f64, side: Side) -> Result<Self> {
        let theta = theta_boundary(lambda, side)?;
        let data = jost(q, theta)?;
        if data.wronskian.norm() < 1e-10 {
            return Err(Error::SingularWronskian {
                value: data.wronskian.norm(),
            });
        }
        Ok(ResolventH { jost: data })
    }

    pub fn kernel(&self, mu: i64, nu: i64) -> Complex {
        let (hi, lo) = if mu >= nu { (mu, nu) } else { (nu, mu) };
        -self.jost.f_plus.get(hi) * self.jost.f_minus.get(lo) / self.jost.wronskian
    }

    /// Apply the kernel to a field in O(N) with prefix sums.
    pub fn apply(&self, u: &LatticeField) -> LatticeField {
        apply_jost_kernel(&self.jost.f_plus, &self.jost.f_minus, self.jost.wronskian, u)
    }
}

fn apply_jost_kernel(
    f_plus: &LatticeField,
    f_minus: &LatticeField,
    wronskian: Complex,
    u: &LatticeField,
) -> LatticeField {
    let lat = u.lattice;
    let n = lat.len();
    // prefix[i] = Σ_{j <= i} f₋(j) u(j);  suffix[i] = Σ_{j > i} f₊(j) u(j)
    let mut prefix = vec![Complex::new(0.0, 0.0); n];
    let mut acc = Complex::new(0.0, 0.0);
    for i in 0..n {
        acc += f_minus.values[i] * u.values[i];
        prefix[i] = acc;
    }
    let mut suffix = vec![Complex::new(0.0, 0.0); n];
    let mut acc = Complex::new(0.0, 0.0);
    for i in (0..n).rev() {
        suffix[i] = acc;
        acc += f_plus.values[i] * u.values[i];
    }
    let mut out = LatticeField::zero(lat);
    for i in 0..n {
        out.values[i] = -(f_plus.values[i] * prefix[i] + f_minus.values[i] * suffix[i]) / wronskian;
    }
    out
}

/// Continuous-spectrum projection of H by the resolvent-jump integral
/// `P_c u = (1/2πi) ∫₀⁴ (R⁺(λ) - R⁻(λ)) u dλ`, computed in the θ variable
/// (λ = 2 - 2 cos θ₀, dλ = 2 sin θ₀ dθ₀) with composite Gauss-Legendre
/// panels.  The substitution removes the 1/sin θ endpoint singularity
/// analytically.
pub fn limiting_absorption_projection(q: &Potential, u: &LatticeField) -> Result<LatticeField> {
    let lat = q.profile.lattice;
    if lat != u.lattice {
        return Err(Error::LatticeMismatch(
            "potential and input field windows differ".into(),
        ));
    }
    let check = resonance_check(q)?;
    if !check.ok {
        return Err(Error::QuadratureNonConvergence(
            "endpoint resonance suspected (Wronskian near zero at a band edge)".into(),
        ));
    }
    let k_max = 2.0 * lat.n_max.max(-lat.n_min) as f64;
    let panels0 = ((0.2 * k_max) as usize).max(48);
    let coarse = resolvent_jump_integral(q, u, panels0)?;
    let fine = resolvent_jump_integral(q, u, 2 * panels0)?;
    let err = fine.sub(&coarse).norm_l2();
    let scale = u.norm_l2().max(1e-300);
    if err > 1e-7 * scale {
        let finer = resolvent_jump_integral(q, u, 4 * panels0)?;
        let err2 = finer.sub(&fine).norm_l2();
        if err2 > 1e-7 * scale {
            return Err(Error::QuadratureNonConvergence(format!(
                "resolvent-jump quadrature not converging: {err2:.3e} after refinement"
            )));
        }
        return Ok(finer);
    }
    Ok(fine)
}

fn resolvent_jump_integral(
    q: &Potential,
    u: &LatticeField,
    panels: usize,
) -> Result<LatticeField> {
    // 12-point Gauss-Legendre nodes/weights on [-1, 1]
    const GL_X: [f64; 6] = [
        0.125_233_408_511_468_9,
        0.367_831_498_998_180_2,
        0.587_317_954_286_617_4,
        0.769_902_674_194_304_9,
        0.904_117_256_370_474_9,
        0.981_560_634_246_719_3,
    ];
    const GL_W: [f64; 6] = [
        0.249_147_045_813_402_8,
        0.233_492_536_538_354_8,
        0.203_167_426_723_065_9,
        0.160_078_328_543_346_2,
        0.106_939_325_995_318_4,
        0.047_175_336_386_511_83,
    ];
    let lat = u.lattice;
    let mut out = LatticeField::zero(lat);
    let h = std::f64::consts::PI / panels as f64;
    let two_pi_i = 2.0 * std::f64::consts::PI * Complex::i();
    for p in 0..panels {
        let a = p as f64 * h;
        let mid = a + 0.5 * h;
        for k in 0..12 {
            let (x, w) = if k < 6 {
                (-GL_X[k], GL_W[k])
            } else {
                (GL_X[k - 6], GL_W[k - 6])
            };
            let theta0 = mid + 0.5 * h * x;
            let weight = 0.5 * h * w;
            // plus side: θ = -θ₀
            let data = jost(q, Complex::new(-theta0, 0.0))?;
            if data.wronskian.norm() < 1e-10 {
                return Err(Error::SingularWronskian {
                    value: data.wronskian.norm(),
                });
            }
            let r_plus_u = apply_jost_kernel(&data.f_plus, &data.f_minus, data.wronskian, u);
            // minus side has the conjugate kernel: R⁻ u = conj(R⁺ conj(u))
            let r_minus_u = apply_jost_kernel(
                &data.f_plus,
                &data.f_minus,
                data.wronskian,
                &u.conj(),
            )
            .conj();
            let jump = r_plus_u.sub(&r_minus_u);
            let factor = Complex::new(2.0 * theta0.sin() * weight, 0.0) / two_pi_i;
            out.axpy(factor, &jump);
        }
    }
    Ok(out)
}

/// Discrete bound states of the windowed H (eigenvalues off the band and
/// unit eigenvectors), used as the eigendecomposition-complement oracle for
/// the projection above.
pub fn bound_states(q: &Potential) -> Vec<(f64, LatticeField)> {
    let lat = q.profile.lattice;
    let qe = q.effective();
    let n = lat.len();
    let diag: Vec<f64> = lat.sites().map(|s| 2.0 + qe.get(s)).collect();
    let off = vec![-1.0; n - 1];
    let mut out = Vec::new();
    let n_below = tridiag::sturm_count(&diag, &off, 0.0);
    for k in 0..n_below {
        let lam0 = tridiag::kth_eigenvalue(&diag, &off, k);
        let (lam, v) = tridiag::inverse_iteration(&diag, &off, lam0);
        out.push((lam, real_vec_to_field(lat, &v)));
    }
    let n_above = n - tridiag::sturm_count(&diag, &off, 4.0 + 1e-12);
    for j in 0..n_above {
        let k = n - 1 - j;
        let lam0 = tridiag::kth_eigenvalue(&diag, &off, k);
        let (lam, v) = tridiag::inverse_iteration(&diag, &off, lam0);
        out.push((lam, real_vec_to_field(lat, &v)));
    }
    out
}

fn real_vec_to_field(lat: Lattice, v: &[f64]) -> LatticeField {
    LatticeField::from_values(lat, v.iter().map(|x| Complex::new(*x, 0.0)).collect()).unwrap()
}
