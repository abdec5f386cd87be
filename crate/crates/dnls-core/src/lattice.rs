//! Truncated-lattice representation of sequences on Z, weighted norms, and
//! the operators Δ and H.
//!
//! Every field lives on a finite window `[n_min, n_max]` of the integer
//! lattice with Dirichlet truncation: sites outside the window read as zero.
//! The window stands in for the infinite lattice; all objects of interest
//! either decay exponentially or disperse, and window doubling is the
//! convergence test.
//!
//! Weighted norms use the Japanese bracket `<n> = sqrt(1 + n^2)`, never
//! `|n|`.

use crate::error::Error;
use crate::{Complex, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Boundary treatment of the truncated window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Dirichlet,
}

/// Index window `[n_min, n_max]` of Z, with `n_min < 0 < n_max` and at least
/// 32 sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub n_min: i64,
    pub n_max: i64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl Lattice {
    pub fn new(n_min: i64, n_max: i64) -> Result<Self> {
        if !(n_min < 0 && 0 < n_max) {
            return Err(Error::InvalidLattice {
                n_min,
                n_max,
                reason: "window must contain 0 strictly inside".into(),
            });
        }
        let len = n_max - n_min + 1;
        if len < 32 {
            return Err(Error::InvalidLattice {
                n_min,
                n_max,
                reason: format!("window length {len} < 32"),
            });
        }
        Ok(Lattice {
            n_min,
            n_max,
            boundary: Boundary::Dirichlet,
        })
    }

    /// Symmetric window `[-half, half]`.
    pub fn symmetric(half: i64) -> Result<Self> {
        Lattice::new(-half, half)
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.n_max - self.n_min + 1) as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, n: i64) -> bool {
        n >= self.n_min && n <= self.n_max
    }

    /// Storage index of site `n`; caller must ensure `contains(n)`.
    #[inline]
    pub fn idx(&self, n: i64) -> usize {
        (n - self.n_min) as usize
    }

    /// Site of storage index `i`.
    #[inline]
    pub fn site(&self, i: usize) -> i64 {
        self.n_min + i as i64
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.n_min..=self.n_max
    }

    /// Japanese bracket `<n> = sqrt(1 + n^2)`.
    #[inline]
    pub fn bracket(n: i64) -> f64 {
        let x = n as f64;
        (1.0 + x * x).sqrt()
    }

    /// Window with both endpoints doubled, used by convergence checks.
    pub fn doubled(&self) -> Result<Self> {
        Lattice::new(2 * self.n_min, 2 * self.n_max)
    }
}

/// Specification of an `l^{p,σ}` norm: `||u||^p = Σ <n>^{pσ} |u(n)|^p`
/// (supremum form for p = ∞).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedNormSpec {
    pub p: f64,
    pub sigma: f64,
}

impl WeightedNormSpec {
    pub fn new(p: f64, sigma: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!("p = {p} must be >= 1")));
        }
        Ok(WeightedNormSpec { p, sigma })
    }

    pub fn l2(sigma: f64) -> Self {
        WeightedNormSpec { p: 2.0, sigma }
    }
}

/// Complex-valued sequence on a lattice window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    pub lattice: Lattice,
    pub values: Vec<Complex>,
}

/// Real-valued sequence on a lattice window (potentials, standing waves).
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

macro_rules! field_common {
    ($ty:ident, $scalar:ty, $zero:expr) => {
        impl $ty {
            pub fn zero(lattice: Lattice) -> Self {
                $ty {
                    lattice,
                    values: vec![$zero; lattice.len()],
                }
            }

            pub fn from_values(lattice: Lattice, values: Vec<$scalar>) -> Result<Self> {
                if values.len() != lattice.len() {
                    return Err(Error::LatticeMismatch(format!(
                        "value count {} != window length {}",
                        values.len(),
                        lattice.len()
                    )));
                }
                Ok($ty { lattice, values })
            }

            /// Build from a function of the site index.
            pub fn from_fn(lattice: Lattice, mut f: impl FnMut(i64) -> $scalar) -> Self {
                let values = lattice.sites().map(|n| f(n)).collect();
                $ty { lattice, values }
            }

            /// Value at site `n`; sites outside the window read as 0.
            #[inline]
            pub fn get(&self, n: i64) -> $scalar {
                if self.lattice.contains(n) {
                    self.values[self.lattice.idx(n)]
                } else {
                    $zero
                }
            }

            #[inline]
            pub fn set(&mut self, n: i64, v: $scalar) {
                let i = self.lattice.idx(n);
                self.values[i] = v;
            }

            pub fn is_finite(&self) -> bool {
                self.values.iter().all(|v| {
                    let v: $scalar = *v;
                    scalar_is_finite(v)
                })
            }

            pub fn same_lattice(&self, other: &Self) -> Result<()> {
                if self.lattice != other.lattice {
                    return Err(Error::LatticeMismatch(format!(
                        "[{}, {}] vs [{}, {}]",
                        self.lattice.n_min,
                        self.lattice.n_max,
                        other.lattice.n_min,
                        other.lattice.n_max
                    )));
                }
                Ok(())
            }

            pub fn scale(&self, c: $scalar) -> Self {
                $ty {
                    lattice: self.lattice,
                    values: self.values.iter().map(|v| *v * c).collect(),
                }
            }

            pub fn add(&self, other: &Self) -> Self {
                debug_assert_eq!(self.lattice, other.lattice);
                $ty {
                    lattice: self.lattice,
                    values: self
                        .values
                        .iter()
                        .zip(&other.values)
                        .map(|(a, b)| *a + *b)
                        .collect(),
                }
            }

            pub fn sub(&self, other: &Self) -> Self {
                debug_assert_eq!(self.lattice, other.lattice);
                $ty {
                    lattice: self.lattice,
                    values: self
                        .values
                        .iter()
                        .zip(&other.values)
                        .map(|(a, b)| *a - *b)
                        .collect(),
                }
            }

            /// Restrict to a sub-window (sites outside self read as 0).
            pub fn restricted_to(&self, lattice: Lattice) -> Self {
                $ty::from_fn(lattice, |n| self.get(n))
            }
        }
    };
}

#[inline]
fn scalar_is_finite_f64(v: f64) -> bool {
    v.is_finite()
}

#[inline]
fn scalar_is_finite_c(v: Complex) -> bool {
    v.re.is_finite() && v.im.is_finite()
}

trait IsFinite {
    fn finite(self) -> bool;
}
impl IsFinite for f64 {
    fn finite(self) -> bool {
        scalar_is_finite_f64(self)
    }
}
impl IsFinite for Complex {
    fn finite(self) -> bool {
        scalar_is_finite_c(self)
    }
}

#[inline]
fn scalar_is_finite<T: IsFinite>(v: T) -> bool {
    v.finite()
}

field_common!(LatticeField, Complex, Complex::new(0.0, 0.0));
field_common!(RealField, f64, 0.0);

impl LatticeField {
    /// Kronecker delta at `site`.
    pub fn delta(lattice: Lattice, site: i64) -> Self {
        let mut f = LatticeField::zero(lattice);
        f.set(site, Complex::new(1.0, 0.0));
        f
    }

    /// Sesquilinear inner product `Σ u(n) conj(v(n))` (linear in the first
    /// argument).
    pub fn inner(&self, other: &Self) -> Complex {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b.conj())
            .sum()
    }

    /// Bilinear pairing `Σ u(n) v(n)` (no conjugation).
    pub fn pair(&self, other: &Self) -> Complex {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Pairing against a real field: both conventions agree.
    pub fn pair_real(&self, other: &RealField) -> Complex {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm_sup(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn conj(&self) -> Self {
        LatticeField {
            lattice: self.lattice,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn re(&self) -> RealField {
        RealField {
            lattice: self.lattice,
            values: self.values.iter().map(|v| v.re).collect(),
        }
    }

    pub fn im(&self) -> RealField {
        RealField {
            lattice: self.lattice,
            values: self.values.iter().map(|v| v.im).collect(),
        }
    }

    /// Pointwise product with a real multiplier.
    pub fn mul_real(&self, m: &RealField) -> Self {
        debug_assert_eq!(self.lattice, m.lattice);
        LatticeField {
            lattice: self.lattice,
            values: self
                .values
                .iter()
                .zip(&m.values)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn axpy(&mut self, c: Complex, other: &Self) {
        debug_assert_eq!(self.lattice, other.lattice);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }
}

impl RealField {
    pub fn delta(lattice: Lattice, site: i64) -> Self {
        let mut f = RealField::zero(lattice);
        f.set(site, 1.0);
        f
    }

    pub fn to_complex(&self) -> LatticeField {
        LatticeField {
            lattice: self.lattice,
            values: self.values.iter().map(|v| Complex::new(*v, 0.0)).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sup(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `l^p` norm on the plain (σ = 0) lattice.
    pub fn norm_lp(&self, p: f64) -> f64 {
        if p.is_infinite() {
            self.norm_sup()
        } else {
            self.values
                .iter()
                .map(|v| v.abs().powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
        }
    }

    pub fn mul_pointwise(&self, other: &Self) -> Self {
        debug_assert_eq!(self.lattice, other.lattice);
        RealField {
            lattice: self.lattice,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn powi(&self, k: i32) -> Self {
        RealField {
            lattice: self.lattice,
            values: self.values.iter().map(|v| v.powi(k)).collect(),
        }
    }

    pub fn axpy(&mut self, c: f64, other: &Self) {
        debug_assert_eq!(self.lattice, other.lattice);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }
}

/// `(Δu)(n) = u(n+1) + u(n-1) - 2 u(n)`, Dirichlet ghost values at the
/// window edges.
pub fn apply_laplacian(u: &LatticeField) -> LatticeField {
    LatticeField::from_fn(u.lattice, |n| u.get(n + 1) + u.get(n - 1) - u.get(n) * 2.0)
}

pub fn apply_laplacian_real(u: &RealField) -> RealField {
    RealField::from_fn(u.lattice, |n| u.get(n + 1) + u.get(n - 1) - 2.0 * u.get(n))
}

/// `(Hu)(n) = -(Δu)(n) + q(n) u(n)` for a real potential sample `q`.
pub fn apply_h(q: &RealField, u: &LatticeField) -> Result<LatticeField> {
    if q.lattice != u.lattice {
        return Err(Error::LatticeMismatch(
            "potential and field windows differ".into(),
        ));
    }
    Ok(LatticeField::from_fn(u.lattice, |n| {
        -(u.get(n + 1) + u.get(n - 1) - u.get(n) * 2.0) + u.get(n) * q.get(n)
    }))
}

pub fn apply_h_real(q: &RealField, u: &RealField) -> Result<RealField> {
    if q.lattice != u.lattice {
        return Err(Error::LatticeMismatch(
            "potential and field windows differ".into(),
        ));
    }
    Ok(RealField::from_fn(u.lattice, |n| {
        -(u.get(n + 1) + u.get(n - 1) - 2.0 * u.get(n)) + q.get(n) * u.get(n)
    }))
}

/// `l^{p,σ}` norm of a field; `p = ∞` returns `sup <n>^σ |u(n)|`.
pub fn weighted_norm(u: &LatticeField, spec: &WeightedNormSpec) -> f64 {
    if spec.p.is_infinite() {
        u.lattice
            .sites()
            .map(|n| Lattice::bracket(n).powf(spec.sigma) * u.get(n).norm())
            .fold(0.0, f64::max)
    } else {
        let p = spec.p;
        u.lattice
            .sites()
            .map(|n| Lattice::bracket(n).powf(p * spec.sigma) * u.get(n).norm().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

pub fn weighted_norm_real(u: &RealField, spec: &WeightedNormSpec) -> f64 {
    weighted_norm(&u.to_complex(), spec)
}

/// Result of a least-squares exponential-decay fit `|u(n)| ~ C e^{-a|n|}`.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    pub ok: bool,
    /// RMS residual of log|u| over the outer half of the fitted sites.
    pub tail_residual: f64,
}

/// Least-squares fit of `log|u(n)|` against `|n|` over sites with
/// `|u(n)| > 1e-13`.  `ok` requires a positive rate and a small residual on
/// the tail half of the fitted range, where the asymptotic law is clean.
pub fn fit_exponential_decay(u: &LatticeField) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = u
        .lattice
        .sites()
        .filter_map(|n| {
            let a = u.get(n).norm();
            if a > 1e-13 {
                Some((n.unsigned_abs() as f64, a.ln()))
            } else {
                None
            }
        })
        .collect();
    if pts.is_empty() {
        return Err(Error::AllZeroField);
    }
    let xmax = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let xmin = pts.iter().map(|p| p.0).fold(f64::MAX, f64::min);
    if xmax == xmin {
        // single |n|: slope is undefined, no certified decay
        return Ok(DecayFit {
            rate: 0.0,
            prefactor: pts[0].1.exp(),
            ok: false,
            tail_residual: 0.0,
        });
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let rate = -slope;
    let prefactor = intercept.exp();

    let tail: Vec<&(f64, f64)> = pts.iter().filter(|p| p.0 >= 0.5 * xmax).collect();
    let tail_residual = (tail
        .iter()
        .map(|p| {
            let pred = intercept + slope * p.0;
            (p.1 - pred).powi(2)
        })
        .sum::<f64>()
        / tail.len() as f64)
        .sqrt();

    Ok(DecayFit {
        rate,
        prefactor,
        ok: rate > 0.0 && tail_residual < 0.5,
        tail_residual,
    })
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    n_min: i64,
    n_max: i64,
    boundary: Boundary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    norm_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    norm_sigma: Option<f64>,
}

/// Column text format: one JSON header line, then `site value_re value_im`
/// rows.  Reload is byte-identical because values render with the shortest
/// round-trip float representation.
pub fn save_field<W: Write>(u: &LatticeField, mut w: W) -> Result<()> {
    let header = FieldHeader {
        n_min: u.lattice.n_min,
        n_max: u.lattice.n_max,
        boundary: u.lattice.boundary,
        norm_p: None,
        norm_sigma: None,
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for n in u.lattice.sites() {
        let v = u.get(n);
        writeln!(w, "{} {} {}", n, v.re, v.im)?;
    }
    Ok(())
}

pub fn load_field<R: BufRead>(r: R) -> Result<LatticeField> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format("empty field file".into()))??;
    let header: FieldHeader = serde_json::from_str(&header_line)?;
    let lattice = Lattice::new(header.n_min, header.n_max)?;
    let mut field = LatticeField::zero(lattice);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split_whitespace();
        let n: i64 = cols
            .next()
            .ok_or_else(|| Error::Format("missing site column".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("bad site index: {e}")))?;
        let re: f64 = cols
            .next()
            .ok_or_else(|| Error::Format("missing re column".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("bad re value: {e}")))?;
        let im: f64 = cols
            .next()
            .ok_or_else(|| Error::Format("missing im column".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("bad im value: {e}")))?;
        if !lattice.contains(n) {
            return Err(Error::Format(format!("site {n} outside declared window")));
        }
        field.set(n, Complex::new(re, im));
    }
    Ok(field)
}

pub fn save_field_to(u: &LatticeField, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    save_field(u, std::io::BufWriter::new(f))
}

pub fn load_field_from(path: &Path) -> Result<LatticeField> {
    let f = std::fs::File::open(path)?;
    load_field(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_lattice() -> Lattice {
        Lattice::new(-20, 20).unwrap()
    }

    #[test]
    fn lattice_invariants() {
        assert!(Lattice::new(0, 40).is_err());
        assert!(Lattice::new(-40, 0).is_err());
        assert!(Lattice::new(-10, 10).is_err()); // 21 < 32 sites
        assert!(Lattice::new(-16, 16).is_ok());
    }

    #[test]
    fn laplacian_stencil_on_delta() {
        let u = LatticeField::delta(small_lattice(), 0);
        let lu = apply_laplacian(&u);
        assert_eq!(lu.get(-1), Complex::new(1.0, 0.0));
        assert_eq!(lu.get(0), Complex::new(-2.0, 0.0));
        assert_eq!(lu.get(1), Complex::new(1.0, 0.0));
        assert_eq!(lu.get(2), Complex::new(0.0, 0.0));
    }

    #[test]
    fn laplacian_annihilates_constants_inside() {
        let lat = small_lattice();
        let u = LatticeField::from_fn(lat, |_| Complex::new(1.0, 0.0));
        let lu = apply_laplacian(&u);
        for n in (lat.n_min + 1)..lat.n_max {
            assert!(lu.get(n).norm() < 1e-15, "site {n}");
        }
        // boundary rows see the Dirichlet ghost zeros
        assert_eq!(lu.get(lat.n_min), Complex::new(-1.0, 0.0));
        assert_eq!(lu.get(lat.n_max), Complex::new(-1.0, 0.0));
    }

    #[test]
    fn plane_wave_symbol() {
        let lat = Lattice::new(-64, 64).unwrap();
        for &theta in &[0.3, 1.0, 2.2] {
            let u = LatticeField::from_fn(lat, |n| Complex::from_polar(1.0, theta * n as f64));
            let lu = apply_laplacian(&u);
            let symbol = -2.0 * (1.0 - theta.cos());
            for n in (lat.n_min + 1)..lat.n_max {
                let err = (lu.get(n) - u.get(n) * symbol).norm();
                assert!(err < 1e-12, "theta {theta} site {n}: {err}");
            }
        }
    }

    #[test]
    fn h_on_delta_with_and_without_potential() {
        let lat = small_lattice();
        let u = LatticeField::delta(lat, 0);
        let q0 = RealField::zero(lat);
        let hu = apply_h(&q0, &u).unwrap();
        assert_eq!(hu.get(-1), Complex::new(-1.0, 0.0));
        assert_eq!(hu.get(0), Complex::new(2.0, 0.0));
        assert_eq!(hu.get(1), Complex::new(-1.0, 0.0));

        let qd = RealField::delta(lat, 0);
        let hu = apply_h(&qd, &u).unwrap();
        assert_eq!(hu.get(0), Complex::new(3.0, 0.0));
    }

    #[test]
    fn h_is_symmetric_for_real_potential() {
        let lat = small_lattice();
        let q = RealField::from_fn(lat, |n| (-(n as f64).abs()).exp() * ((n * n % 7) as f64 - 3.0));
        // deterministic pseudo-random complex fields
        let u = LatticeField::from_fn(lat, |n| {
            Complex::new(((n * 37 + 11) % 13) as f64 / 13.0, ((n * 17 + 3) % 7) as f64 / 7.0)
        });
        let v = LatticeField::from_fn(lat, |n| {
            Complex::new(((n * 5 + 1) % 11) as f64 / 11.0, ((n * 29 + 2) % 19) as f64 / 19.0)
        });
        let hu = apply_h(&q, &u).unwrap();
        let hv = apply_h(&q, &v).unwrap();
        let lhs = hu.inner(&v);
        let rhs = u.inner(&hv);
        assert!(
            (lhs - rhs).norm() <= 1e-12 * u.norm_l2() * v.norm_l2(),
            "asymmetry {:e}",
            (lhs - rhs).norm()
        );
        // <Hu, u> real
        let quad = hu.inner(&u);
        assert!(quad.im.abs() < 1e-12 * u.norm_l2().powi(2));
    }

    #[test]
    fn weighted_norm_examples() {
        let lat = small_lattice();
        let d0 = LatticeField::delta(lat, 0);
        for &(p, s) in &[(1.0, 0.0), (2.0, 3.0), (f64::INFINITY, -2.0)] {
            let spec = WeightedNormSpec::new(p, s).unwrap();
            assert!((weighted_norm(&d0, &spec) - 1.0).abs() < 1e-15);
        }
        let d1 = LatticeField::delta(lat, 1);
        let spec = WeightedNormSpec::new(2.0, 1.0).unwrap();
        assert!((weighted_norm(&d1, &spec) - 2f64.sqrt()).abs() < 1e-15);

        // u(n) = 2^{-|n|}: ||u||_{2,0}^2 = Σ 4^{-|n|} = 5/3 (window tail < 1e-13)
        let lat = Lattice::new(-40, 40).unwrap();
        let u = LatticeField::from_fn(lat, |n| {
            Complex::new(2f64.powi(-(n.unsigned_abs() as i32)), 0.0)
        });
        let spec = WeightedNormSpec::new(2.0, 0.0).unwrap();
        assert!((weighted_norm(&u, &spec) - (5f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn norm_monotone_in_sigma() {
        let lat = small_lattice();
        let u = LatticeField::from_fn(lat, |n| Complex::new((n as f64 * 0.7).sin(), 0.3));
        let n1 = weighted_norm(&u, &WeightedNormSpec::l2(-1.0));
        let n2 = weighted_norm(&u, &WeightedNormSpec::l2(0.5));
        let n3 = weighted_norm(&u, &WeightedNormSpec::l2(2.0));
        assert!(n1 <= n2 && n2 <= n3);
    }

    #[test]
    fn decay_fit_pure_exponential() {
        let lat = small_lattice();
        let u = LatticeField::from_fn(lat, |n| Complex::new((-(n.abs() as f64)).exp(), 0.0));
        let fit = fit_exponential_decay(&u).unwrap();
        assert!(fit.ok);
        assert!((fit.rate - 1.0).abs() < 1e-6, "rate {}", fit.rate);
        assert!((fit.prefactor - 1.0).abs() < 1e-6);
    }

    #[test]
    fn decay_fit_rejects_constant() {
        let lat = small_lattice();
        let u = LatticeField::from_fn(lat, |_| Complex::new(1.0, 0.0));
        let fit = fit_exponential_decay(&u).unwrap();
        assert!(!fit.ok);
        assert!(fit.rate.abs() < 1e-12);
    }

    #[test]
    fn decay_fit_zero_field_errors() {
        let u = LatticeField::zero(small_lattice());
        assert!(matches!(fit_exponential_decay(&u), Err(Error::AllZeroField)));
    }

    #[test]
    fn field_roundtrip_bytes() {
        let lat = small_lattice();
        let u = LatticeField::from_fn(lat, |n| {
            Complex::new((n as f64 * 0.1).sin() / 3.0, (n as f64).cos() * 1e-7)
        });
        let mut buf = Vec::new();
        save_field(&u, &mut buf).unwrap();
        let v = load_field(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(u, v);
        let mut buf2 = Vec::new();
        save_field(&v, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn h_is_linear(a_re in -2.0f64..2.0, a_im in -2.0f64..2.0, b_re in -2.0f64..2.0) {
            let lat = small_lattice();
            let q = RealField::from_fn(lat, |n| if n.abs() <= 2 { 0.3 } else { 0.0 });
            let u = LatticeField::from_fn(lat, |n| Complex::new((n as f64 * 0.31).sin(), (n as f64 * 0.17).cos()));
            let v = LatticeField::from_fn(lat, |n| Complex::new((n as f64 * 0.11).cos(), (n as f64 * 0.23).sin()));
            let alpha = Complex::new(a_re, a_im);
            let beta = Complex::new(b_re, 0.7);
            let lhs = apply_h(&q, &u.scale(alpha).add(&v.scale(beta))).unwrap();
            let rhs = apply_h(&q, &u).unwrap().scale(alpha).add(&apply_h(&q, &v).unwrap().scale(beta));
            let err = lhs.sub(&rhs).norm_l2();
            prop_assert!(err <= 1e-12 * (lhs.norm_l2() + 1.0));
        }

        #[test]
        fn weighted_norm_sigma_monotone(s1 in -3.0f64..3.0, s2 in -3.0f64..3.0) {
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let lat = small_lattice();
            let u = LatticeField::from_fn(lat, |n| Complex::new((n as f64 * 0.9).sin(), 0.1 * n as f64));
            prop_assert!(weighted_norm(&u, &WeightedNormSpec::l2(lo)) <= weighted_norm(&u, &WeightedNormSpec::l2(hi)) + 1e-12);
        }
    }
}
