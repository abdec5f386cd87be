//! Construction and certification of potentials for H = -Δ + εq.
//!
//! A zero-sum profile with negative moment functional
//! `Σ |µ-ν| q(µ) q(ν) < 0` produces, for small ε, exactly one eigenvalue
//! below the band and one above it, with no endpoint resonances.  The
//! routines here check the three structural hypotheses directly on the
//! windowed operator:
//!
//!   1. exponential decay of the potential,
//!   2. no resonance at the band edges 0 and 4 (Wronskian test),
//!   3. exactly two simple eigenvalues -E₀ < 0 and E₁ > 4.

use crate::error::Error;
use crate::lattice::{self, fit_exponential_decay, Lattice, LatticeField, RealField};
use crate::scattering;
use crate::tridiag;
use crate::{Complex, Result};
use serde::{Deserialize, Serialize};

/// Real potential profile together with its coupling scale ε.
///
/// `moment_functional`, `zero_sum_check` and the band-edge resolvent limit
/// act on the unscaled profile; operator-level routines use the effective
/// potential `ε q(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub profile: RealField,
    pub eps: f64,
    /// Fitted exponential decay rate of the profile (0 when the support is
    /// too small to fit a slope).
    pub decay_rate: f64,
}

impl Potential {
    pub fn new(profile: RealField, eps: f64) -> Result<Self> {
        if !eps.is_finite() {
            return Err(Error::InvalidParameter("eps must be finite".into()));
        }
        if !profile.values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "potential has non-finite entries".into(),
            ));
        }
        let decay_rate = match fit_exponential_decay(&profile.to_complex()) {
            Ok(fit) => fit.rate.max(0.0),
            Err(_) => 0.0,
        };
        Ok(Potential {
            profile,
            eps,
            decay_rate,
        })
    }

    /// Potential with ε baked into the profile.
    pub fn baked(profile: RealField) -> Result<Self> {
        Potential::new(profile, 1.0)
    }

    pub fn zero(lattice: Lattice) -> Self {
        Potential {
            profile: RealField::zero(lattice),
            eps: 1.0,
            decay_rate: 0.0,
        }
    }

    /// The canonical three-site profile `-δ_{-1}/2 + δ_0 - δ_1/2`: the
    /// minimal-support zero-sum profile with negative moment functional.
    pub fn canonical_three_site(lattice: Lattice, eps: f64) -> Result<Self> {
        let mut profile = RealField::zero(lattice);
        profile.set(-1, -0.5);
        profile.set(0, 1.0);
        profile.set(1, -0.5);
        Potential::new(profile, eps)
    }

    /// Single-site profile `c δ_0` (ε baked in).
    pub fn single_site(lattice: Lattice, c: f64) -> Result<Self> {
        let mut profile = RealField::zero(lattice);
        profile.set(0, c);
        Potential::new(profile, 1.0)
    }

    /// Effective potential samples ε q(n).
    pub fn effective(&self) -> RealField {
        self.profile.scale(self.eps)
    }

    /// Same profile transplanted onto another window (zero-padded).
    pub fn on_lattice(&self, lattice: Lattice) -> Potential {
        Potential {
            profile: self.profile.restricted_to(lattice),
            eps: self.eps,
            decay_rate: self.decay_rate,
        }
    }

    /// Same profile with the sign flipped (reflection partner -q).
    pub fn negated(&self) -> Potential {
        Potential {
            profile: self.profile.scale(-1.0),
            eps: self.eps,
            decay_rate: self.decay_rate,
        }
    }

    /// Tridiagonal form (diag, off) of the windowed H = -Δ + εq.
    pub fn tridiagonal(&self) -> (Vec<f64>, Vec<f64>) {
        let qe = self.effective();
        let diag: Vec<f64> = self
            .profile
            .lattice
            .sites()
            .map(|n| 2.0 + qe.get(n))
            .collect();
        let off = vec![-1.0; self.profile.lattice.len() - 1];
        (diag, off)
    }

    /// Support sites with |q(n)| above the dust threshold.
    fn support(&self) -> Vec<(i64, f64)> {
        self.profile
            .lattice
            .sites()
            .filter_map(|n| {
                let v = self.profile.get(n);
                if v.abs() > 1e-16 {
                    Some((n, v))
                } else {
                    None
                }
            })
            .collect()
    }
}

/// `(Hu)(n) = -(Δu)(n) + ε q(n) u(n)`.
pub fn apply_h(q: &Potential, u: &LatticeField) -> Result<LatticeField> {
    lattice::apply_h(&q.effective(), u)
}

/// Double sum `Σ_{µ,ν} |µ-ν| q(µ) q(ν)` over the profile support.
pub fn moment_functional(q: &Potential) -> f64 {
    let supp = q.support();
    let mut acc = 0.0;
    for &(m, qm) in &supp {
        for &(n, qn) in &supp {
            acc += (m - n).abs() as f64 * qm * qn;
        }
    }
    acc
}

/// True when `Σ q(µ) = 0` within 1e-12 (relative to the l¹ size).
pub fn zero_sum_check(q: &Potential) -> bool {
    let sum: f64 = q.profile.values.iter().sum();
    let scale: f64 = q.profile.values.iter().map(|v| v.abs()).sum();
    sum.abs() <= 1e-12 * scale.max(1.0)
}

/// Richardson-extrapolated limit of `<R_{-Δ}(z) q, q>` as z → 0⁻ along an
/// increasing sequence of negative z (for example -10^{-k}).  For zero-sum
/// q this equals `-moment/2`; for nonzero sum the quantity diverges like
/// |z|^{-1/2} and an error is returned.
pub fn band_edge_resolvent_limit(q: &Potential, z_sequence: &[f64]) -> Result<f64> {
    if !zero_sum_check(q) {
        return Err(Error::DivergentLimit {
            sum: q.profile.values.iter().sum(),
        });
    }
    if z_sequence.len() < 3 || z_sequence.windows(2).any(|w| !(w[1] > w[0]) || w[1] >= 0.0) {
        return Err(Error::InvalidParameter(
            "z sequence must be at least 3 increasing negative values".into(),
        ));
    }
    let supp = q.support();
    let values: Vec<f64> = z_sequence
        .iter()
        .map(|&z| {
            let mut acc = Complex::new(0.0, 0.0);
            for &(m, qm) in &supp {
                for &(n, qn) in &supp {
                    acc += scattering::free_resolvent_kernel(Complex::new(z, 0.0), m, n).unwrap()
                        * qm
                        * qn;
                }
            }
            acc.re
        })
        .collect();

    // error expansion in powers of sqrt(|z|); two Richardson levels with
    // ratios r and r² remove the first two orders
    let m = values.len();
    let level1: Vec<f64> = (0..m - 1)
        .map(|k| {
            let r = (z_sequence[k] / z_sequence[k + 1]).sqrt();
            (r * values[k + 1] - values[k]) / (r - 1.0)
        })
        .collect();
    let r_last = (z_sequence[m - 2] / z_sequence[m - 1]).sqrt();
    let r2 = r_last * r_last;
    let level2: Vec<f64> = (0..level1.len() - 1)
        .map(|k| (r2 * level1[k + 1] - level1[k]) / (r2 - 1.0))
        .collect();
    Ok(*level2.last().unwrap())
}

/// Default z-sequence `-10^{-k}`, k = 1..=8.
pub fn default_z_sequence() -> Vec<f64> {
    (1..=8).map(|k| -(10f64).powi(-k)).collect()
}

/// Leading-order bound-state prediction for H = -Δ + εq from the
/// perturbative Wronskian zero `θ(ε) = i (ε²/4) Σ |µ-ν| q(µ) q(ν)`:
/// `E₀ ≈ 2 (cosh(ε² |moment| / 4) - 1)` and, by the reflection
/// `v(ν) = (-1)^ν u(ν)` applied to -q (same moment), `E₁ ≈ 4 + E₀`.
pub fn predict_small_eps_spectrum(q: &Potential, eps: f64) -> Result<(f64, f64)> {
    let moment = moment_functional(q);
    if moment >= 0.0 {
        return Err(Error::NonnegativeMoment { moment });
    }
    if eps == 0.0 {
        return Ok((0.0, 4.0));
    }
    let t = eps * eps * moment.abs() / 4.0;
    let e0 = 2.0 * (t.cosh() - 1.0);
    Ok((e0, 4.0 + e0))
}

/// Certification record for the structural hypotheses on H = -Δ + εq.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// exponential decay of the potential
    pub decay_ok: bool,
    pub decay_rate: f64,
    pub decay_prefactor: f64,
    /// no endpoint resonance: Wronskians at the band edges
    pub resonance_free: bool,
    pub wronskian_at_0: (f64, f64),
    pub wronskian_at_4: (f64, f64),
    /// two simple eigenvalues off the band, stable under window doubling
    pub band_structure_ok: bool,
    pub eigenvalues_below: Vec<f64>,
    pub eigenvalues_above: Vec<f64>,
    /// E₀ > 0 with -E₀ the lower eigenvalue; E₁ > 4 the upper one
    pub e0: f64,
    pub e1: f64,
    /// window-doubling shifts of the two eigenvalues
    pub truncation_error_e0: f64,
    pub truncation_error_e1: f64,
    /// separation of each eigenvalue from its band edge
    pub margin_e0: f64,
    pub margin_e1: f64,
    pub window_half: i64,
    pub eps: f64,
    pub all_ok: bool,
}

/// Half-width heuristic: bound states near a band edge at distance E decay
/// like exp(-sqrt(E) |n|), so the window must hold several decay lengths.
pub fn required_half_width(q: &Potential, eps: f64) -> i64 {
    let base = q
        .profile
        .lattice
        .n_max
        .max(-q.profile.lattice.n_min)
        .max(256);
    match predict_small_eps_spectrum(q, eps) {
        Ok((e0, _)) if e0 > 0.0 => {
            let needed = (8.0 / e0.sqrt()).ceil() as i64;
            base.max(needed)
        }
        _ => base,
    }
}

/// Validate the three hypotheses for H = -Δ + εq, sizing the window from
/// the predicted eigenvalue scale and re-checking on a doubled window.
pub fn validate_hypotheses(q: &Potential, eps: f64) -> Result<HypothesisReport> {
    let half = required_half_width(q, eps);
    let lat = Lattice::symmetric(half)?;
    let scaled = Potential {
        profile: q.profile.restricted_to(lat),
        eps,
        decay_rate: q.decay_rate,
    };

    // decay of the potential: window-edge dust plus a fitted rate
    let nonzero = scaled.profile.values.iter().any(|v| v.abs() > 0.0);
    let edge_width = (lat.len() / 10).max(2) as i64;
    let edges_clean = lat
        .sites()
        .filter(|n| *n < lat.n_min + edge_width || *n > lat.n_max - edge_width)
        .all(|n| scaled.profile.get(n).abs() < 1e-14);
    let (decay_rate, decay_prefactor) = if nonzero {
        match fit_exponential_decay(&scaled.profile.to_complex()) {
            Ok(fit) => (fit.rate, fit.prefactor),
            Err(_) => (0.0, 0.0),
        }
    } else {
        (0.0, 0.0)
    };
    let decay_ok = edges_clean;

    // endpoint resonances
    let res = scattering::resonance_check(&scaled)?;

    // spectral counts on the window and its double
    let spectrum = |p: &Potential| -> (Vec<f64>, Vec<f64>) {
        let (diag, off) = p.tridiagonal();
        let n = diag.len();
        let n_below = tridiag::sturm_count(&diag, &off, 0.0);
        let below: Vec<f64> = (0..n_below)
            .map(|k| tridiag::kth_eigenvalue(&diag, &off, k))
            .collect();
        let n_above = n - tridiag::sturm_count(&diag, &off, 4.0 + 1e-12);
        let above: Vec<f64> = (0..n_above)
            .map(|j| tridiag::kth_eigenvalue(&diag, &off, n - 1 - j))
            .collect();
        (below, above)
    };
    let (below, above) = spectrum(&scaled);
    let doubled = Potential {
        profile: scaled.profile.restricted_to(lat.doubled()?),
        eps,
        decay_rate: q.decay_rate,
    };
    let (below2, above2) = spectrum(&doubled);

    let counts_ok = below.len() == 1 && above.len() == 1;
    let counts_stable = below2.len() == below.len() && above2.len() == above.len();

    let (e0, e1, trunc0, trunc1, margin0, margin1) = if counts_ok && counts_stable {
        let e0 = -below[0];
        let e1 = above[0];
        let trunc0 = (below[0] - below2[0]).abs();
        let trunc1 = (above[0] - above2[0]).abs();
        (e0, e1, trunc0, trunc1, e0, e1 - 4.0)
    } else {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN, 0.0, 0.0)
    };

    if counts_ok && counts_stable {
        let sep0 = margin0 > 10.0 * trunc0;
        let sep1 = margin1 > 10.0 * trunc1;
        if !(sep0 && sep1) {
            return Err(Error::Indeterminate(format!(
                "eigenvalue within truncation error of a band edge \
                 (margins {margin0:.3e}/{margin1:.3e} vs errors {trunc0:.3e}/{trunc1:.3e})"
            )));
        }
    }

    let band_structure_ok = counts_ok && counts_stable;
    let all_ok = decay_ok && res.ok && band_structure_ok;
    Ok(HypothesisReport {
        decay_ok,
        decay_rate,
        decay_prefactor,
        resonance_free: res.ok,
        wronskian_at_0: (res.w0.re, res.w0.im),
        wronskian_at_4: (res.wpi.re, res.wpi.im),
        band_structure_ok,
        eigenvalues_below: below,
        eigenvalues_above: above,
        e0,
        e1,
        truncation_error_e0: trunc0,
        truncation_error_e1: trunc1,
        margin_e0: margin0,
        margin_e1: margin1,
        window_half: half,
        eps,
        all_ok,
    })
}
