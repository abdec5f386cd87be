//! Integer-order Bessel functions J_n(x) by Miller's backward recurrence,
//! normalized with J_0 + 2 J_2 + 2 J_4 + ... = 1.
//!
//! One call produces all orders 0..=n_max at a fixed argument, which is the
//! access pattern of the free lattice propagator e^{-2it} i^n J_n(2t).

/// All of J_0(x), ..., J_{n_max}(x) for x >= 0.
///
/// Relative accuracy is close to machine precision for the dominant orders;
/// orders far past the turning point are accurate in absolute terms.
pub fn besselj_all(n_max: usize, x: f64) -> Vec<f64> {
    assert!(x >= 0.0, "besselj_all requires x >= 0");
    if x == 0.0 {
        let mut out = vec![0.0; n_max + 1];
        out[0] = 1.0;
        return out;
    }
    let xf = x.max(n_max as f64);
    let start = (xf + 16.0 * xf.cbrt() + 30.0).ceil() as usize;
    let mut out = vec![0.0; n_max + 1];

    let mut jp = 0.0f64; // J_{k+1}
    let mut j = 1e-300f64; // J_k
    let mut norm = 0.0f64; // J_0 + 2 Σ_{even k >= 2} J_k
    let rescale_limit = 1e260;

    for k in (0..=start).rev() {
        if k <= n_max {
            out[k] = j;
        }
        if k % 2 == 0 {
            norm += if k == 0 { j } else { 2.0 * j };
        }
        if j.abs() > rescale_limit {
            let s = 1.0 / j.abs();
            j *= s;
            jp *= s;
            norm *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
        if k > 0 {
            let jm = (2.0 * k as f64 / x) * j - jp; // J_{k-1}
            jp = j;
            j = jm;
        }
    }
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// J_n(x) for a single (possibly negative) order and real x.
pub fn besselj(n: i64, x: f64) -> f64 {
    let (n_abs, order_sign) = (n.unsigned_abs() as usize, if n < 0 && n % 2 != 0 { -1.0 } else { 1.0 });
    let (x_abs, arg_sign) = (x.abs(), if x < 0.0 && n_abs % 2 == 1 { -1.0 } else { 1.0 });
    let all = besselj_all(n_abs, x_abs);
    order_sign * arg_sign * all[n_abs]
}
