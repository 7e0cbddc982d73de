use crate::error::{Error, Result};
use crate::model::Mobility;

const MAX_ROOT_ITERS: usize = 100;

/// Root of a nondecreasing function on `[lo, hi]` by Newton steps with a
/// bisection fallback. `f` returns the value and the derivative.
pub(crate) fn monotone_root<F>(f: F, lo: f64, hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    monotone_root_from(f, lo, hi, None)
}

/// [`monotone_root`] starting from `guess` when it lies inside the bracket.
pub(crate) fn monotone_root_from<F>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    guess: Option<f64>,
) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (f_hi, _) = f(hi);
    if f_hi <= 0.0 {
        return Ok(hi);
    }
    let mut x = match guess {
        Some(g) if g > lo && g < hi => g,
        _ => 0.5 * (lo + hi),
    };
    for _ in 0..MAX_ROOT_ITERS {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1e-300) {
            return Ok(0.5 * (lo + hi));
        }
        let newton = x - fx / dfx;
        let next = if dfx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NoConvergence {
        solver: "scalar prox root",
        iterations: MAX_ROOT_ITERS,
        residual: hi - lo,
    })
}

/// Pointwise proximal map of `(rho, w) -> |w|^2 / m(rho)` with step
/// `sigma`, for a scalar momentum component with squared magnitude
/// `w2 = |w_tilde|^2`. Returns `rho` and the factor `s` with
/// `w = s * w_tilde`.
pub(crate) fn prox_action_scalar(
    rho_tilde: f64,
    w2: f64,
    sigma: f64,
    mob: &Mobility,
) -> Result<(f64, f64)> {
    prox_action_warm(rho_tilde, w2, sigma, mob, None)
}

/// [`prox_action_scalar`] with a starting guess for the density.
pub(crate) fn prox_action_warm(
    rho_tilde: f64,
    w2: f64,
    sigma: f64,
    mob: &Mobility,
    guess: Option<f64>,
) -> Result<(f64, f64)> {
    let lo = rho_tilde.max(0.0);
    if w2 == 0.0 || mob.is_constant() {
        let m = mob.value(lo);
        return Ok((lo, m / (m + 2.0 * sigma)));
    }
    // d/drho of the reduced objective |w~|^2/(m + 2 sigma) + (rho - rho~)^2 / (2 sigma)
    let slope = |r: f64| {
        let m = mob.value(r);
        let d1 = mob.d1(r);
        let d2 = mob.d2(r);
        let den = m + 2.0 * sigma;
        let val = (r - rho_tilde) / sigma - w2 * d1 / (den * den);
        let der = 1.0 / sigma - w2 * (d2 * den - 2.0 * d1 * d1) / (den * den * den);
        (val, der)
    };
    let (s_lo, _) = slope(lo);
    let rho = if s_lo >= 0.0 {
        lo
    } else {
        let d1 = mob.d1(lo);
        let mut hi = if d1.is_finite() {
            let den = mob.value(lo) + 2.0 * sigma;
            lo.max(rho_tilde) + sigma * w2 * d1 / (den * den)
        } else {
            lo + 1.0
        };
        // guard against rounding in the analytic bracket
        let mut grow = 0;
        while slope(hi).0 < 0.0 {
            hi = 2.0 * hi + 1.0;
            grow += 1;
            if grow > 200 {
                return Err(Error::NoConvergence {
                    solver: "prox bracket",
                    iterations: grow,
                    residual: hi,
                });
            }
        }
        monotone_root_from(slope, lo, hi, guess)?
    };
    let m = mob.value(rho);
    Ok((rho, m / (m + 2.0 * sigma)))
}

/// Proximal map of the kinetic action density `|w|^2 / m(rho)`:
/// the minimizer over `rho >= 0` and free `w` of
/// `|w|^2/m(rho) + (|rho - rho_tilde|^2 + |w - w_tilde|^2) / (2 sigma)`.
pub fn prox_action(
    rho_tilde: f64,
    w_tilde: &[f64],
    sigma: f64,
    mob: &Mobility,
) -> Result<(f64, Vec<f64>)> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParams(format!("prox step must be positive, got {sigma}")));
    }
    let w2: f64 = w_tilde.iter().map(|w| w * w).sum();
    let (rho, s) = prox_action_scalar(rho_tilde, w2, sigma, mob)?;
    Ok((rho, w_tilde.iter().map(|w| s * w).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power(alpha: f64, eps: f64) -> Mobility {
        Mobility::Power { alpha, eps }
    }

    #[test]
    fn zero_momentum_clamps_density() {
        let m = power(0.5, 0.1);
        let (r, w) = prox_action(0.7, &[0.0], 0.3, &m).unwrap();
        assert_eq!((r, w[0]), (0.7, 0.0));
        let (r, _) = prox_action(-0.4, &[0.0, 0.0], 0.3, &m).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn vanishing_step_is_identity() {
        let m = power(0.5, 0.1);
        let (r, w) = prox_action(1.3, &[0.4, -0.2], 1e-8, &m).unwrap();
        assert!((r - 1.3).abs() < 1e-6);
        assert!((w[0] - 0.4).abs() < 1e-6 && (w[1] + 0.2).abs() < 1e-6);
    }

    #[test]
    fn stationarity_holds() {
        let m = power(0.5, 0.1);
        let sigma = 0.5;
        let (r, w) = prox_action(1.0, &[1.0], sigma, &m).unwrap();
        let mr = m.value(r);
        assert!((w[0] - mr / (mr + 2.0 * sigma)).abs() < 1e-12);
        let res = r - 1.0 - sigma * w[0] * w[0] * m.d1(r) / (mr * mr);
        assert!(res.abs() < 1e-10, "{res}");
    }

    #[test]
    fn singular_mobility_at_zero() {
        // eps = 0 and alpha < 1: infinite slope at 0 pushes rho off zero
        let m = power(0.5, 0.0);
        let (r, w) = prox_action(-0.2, &[0.5], 0.3, &m).unwrap();
        assert!(r > 0.0);
        let mr = m.value(r);
        let res = r + 0.2 - 0.3 * w[0] * w[0] * m.d1(r) / (mr * mr);
        assert!(res.abs() < 1e-10);
    }

    #[test]
    fn linear_and_constant_mobility() {
        let (r, w) = prox_action(0.5, &[0.3], 0.2, &Mobility::Linear).unwrap();
        let res = r - 0.5 - 0.2 * w[0] * w[0] / (r * r);
        assert!(res.abs() < 1e-10);
        let c = Mobility::Constant { value: 1.0 };
        let (r, w) = prox_action(0.5, &[0.3], 0.2, &c).unwrap();
        assert_eq!(r, 0.5);
        assert!((w[0] - 0.3 / 1.4).abs() < 1e-15);
    }
}
