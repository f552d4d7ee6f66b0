//! Δ and Γ from exact derivatives of the spline expansion, Θ from a one-sided
//! difference of consecutive time levels.
//!
//! For the Leland model `V(S, t) = e^{-κτ} v̂(ln S + κτ, τ)`; for the AFV
//! system `U(S, t) = u(ln(S / S_int), τ)`. With `w` the x-space field and `a`
//! the scaling factor, `Δ = a w_x / S` and `Γ = a (w_xx - w_x) / S²`.

use std::io::Write;

use crate::assembly::Discretization;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::stepper::SolutionSurface;

/// Values of one sensitivity on an S grid at calendar time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreekCurve {
    pub s: Vec<f64>,
    pub values: Vec<f64>,
    pub t: f64,
}

/// Which limit to take at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    #[default]
    Right,
    Left,
}

/// `(x, a)` for spot `s` at backward time `tau`.
fn to_state(model: Model<'_>, s: f64, tau: f64) -> Result<(f64, f64)> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("S = {s} must be positive")));
    }
    Ok(match model {
        Model::Leland(p) => {
            let k = p.kappa();
            (s.ln() + k * tau, (-k * tau).exp())
        }
        Model::Afv(p) => ((s / p.spot).ln(), 1.0),
    })
}

fn calendar_time(model: Model<'_>, tau: f64) -> f64 {
    match model {
        Model::Leland(p) => p.time(tau),
        Model::Afv(p) => p.time(tau),
    }
}

/// Spot values of the Greville points at backward time `tau`.
pub fn greville_s_grid(disc: &Discretization, model: Model<'_>, tau: f64) -> Vec<f64> {
    disc.greville_x()
        .iter()
        .map(|&x| match model {
            Model::Leland(p) => (x - p.kappa() * tau).exp(),
            Model::Afv(p) => p.s_of(x),
        })
        .collect()
}

fn eval(disc: &Discretization, coeffs: &[f64], x: f64, order: usize, side: Side) -> f64 {
    let x = x.clamp(disc.map.x_min, disc.map.x_max);
    match side {
        Side::Right => disc.evaluate(coeffs, x, order),
        Side::Left => disc.evaluate_left(coeffs, x, order),
    }
}

/// Option or bond value in S-space.
pub fn value(disc: &Discretization, coeffs: &[f64], model: Model<'_>, tau: f64, s: &[f64]) -> Result<GreekCurve> {
    let values = s
        .iter()
        .map(|&si| {
            let (x, a) = to_state(model, si, tau)?;
            Ok(a * eval(disc, coeffs, x, 0, Side::Right))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GreekCurve {
        s: s.to_vec(),
        values,
        t: calendar_time(model, tau),
    })
}

pub fn delta(disc: &Discretization, coeffs: &[f64], model: Model<'_>, tau: f64, s: &[f64]) -> Result<GreekCurve> {
    let values = s
        .iter()
        .map(|&si| {
            let (x, a) = to_state(model, si, tau)?;
            Ok(a * eval(disc, coeffs, x, 1, Side::Right) / si)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GreekCurve {
        s: s.to_vec(),
        values,
        t: calendar_time(model, tau),
    })
}

pub fn gamma(disc: &Discretization, coeffs: &[f64], model: Model<'_>, tau: f64, s: &[f64]) -> Result<GreekCurve> {
    gamma_sided(disc, coeffs, model, tau, s, Side::Right)
}

/// Γ with an explicit one-sided limit, for breakpoints where the basis is
/// only C¹ (repeated knots).
pub fn gamma_sided(
    disc: &Discretization,
    coeffs: &[f64],
    model: Model<'_>,
    tau: f64,
    s: &[f64],
    side: Side,
) -> Result<GreekCurve> {
    let degree = disc.basis.degree();
    if degree < 2 {
        return Err(Error::DerivativeOrder { order: 2, degree });
    }
    let values = s
        .iter()
        .map(|&si| {
            let (x, a) = to_state(model, si, tau)?;
            let wx = eval(disc, coeffs, x, 1, side);
            let wxx = eval(disc, coeffs, x, 2, side);
            Ok(a * (wxx - wx) / (si * si))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GreekCurve {
        s: s.to_vec(),
        values,
        t: calendar_time(model, tau),
    })
}

/// Θ = ∂V/∂t from stored slices `index - 1` and `index`, which must be
/// consecutive levels. If a coupon was added on entering level
/// `levels[index]`, the next pair is used instead.
pub fn theta(
    disc: &Discretization,
    surface: &SolutionSurface,
    index: usize,
    field: usize,
    model: Model<'_>,
    s: &[f64],
) -> Result<GreekCurve> {
    let n = surface.slices.len();
    if n < 2 {
        return Err(Error::InvalidParameter("theta needs at least two time levels".into()));
    }
    if index == 0 || index >= n {
        return Err(Error::InvalidParameter(format!("slice index {index} out of 1..{n}")));
    }
    let jump = |i: usize| surface.coupon_levels.contains(&surface.levels[i]);
    let consecutive = |i: usize| surface.levels[i] == surface.levels[i - 1] + 1;
    let k = if jump(index) { index + 1 } else { index };
    if k >= n || jump(k) || !consecutive(k) {
        return Err(Error::InvalidParameter(format!(
            "no consecutive coupon-free pair of levels at slice {index}"
        )));
    }
    let (near, far) = (&surface.slices[k], &surface.slices[k - 1]);
    let t_near = calendar_time(model, near.tau);
    let t_far = calendar_time(model, far.tau);
    let values = s
        .iter()
        .map(|&si| {
            let (x1, a1) = to_state(model, si, near.tau)?;
            let (x0, a0) = to_state(model, si, far.tau)?;
            let v1 = a1 * eval(disc, near.field(field), x1, 0, Side::Right);
            let v0 = a0 * eval(disc, far.field(field), x0, 0, Side::Right);
            Ok((v0 - v1) / (t_far - t_near))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GreekCurve {
        s: s.to_vec(),
        values,
        t: t_near,
    })
}

fn simple_knots_xi(disc: &Discretization) -> Vec<f64> {
    let u = disc.basis.knots().values();
    let p = disc.basis.degree();
    let inner = &u[p + 1..u.len() - p - 1];
    let mut out = Vec::new();
    let mut i = 0;
    while i < inner.len() {
        let mut j = i;
        while j + 1 < inner.len() && inner[j + 1] == inner[i] {
            j += 1;
        }
        if j == i {
            out.push(inner[i]);
        }
        i = j + 1;
    }
    out
}

/// Interior breakpoints of multiplicity one, in x-space.
pub fn simple_knots_x(disc: &Discretization) -> Vec<f64> {
    simple_knots_xi(disc).into_iter().map(|xi| disc.map.to_physical(xi)).collect()
}

/// Largest `|Γ_right - Γ_left|` over the simple interior knots. Both limits
/// are taken at the exact parameter value of the knot; a round trip through
/// x or S could move it into one of the neighbouring spans.
pub fn max_gamma_jump(disc: &Discretization, coeffs: &[f64], model: Model<'_>, tau: f64) -> Result<f64> {
    let degree = disc.basis.degree();
    if degree < 2 {
        return Err(Error::DerivativeOrder { order: 2, degree });
    }
    let (shift, a) = match model {
        Model::Leland(p) => (p.kappa() * tau, (-p.kappa() * tau).exp()),
        Model::Afv(p) => (-p.spot.ln(), 1.0),
    };
    let jac = disc.map.jacobian();
    let g = |xi: f64, side: Side| {
        let d = |order: usize| {
            let v = match side {
                Side::Right => disc.basis.eval_expansion(coeffs, xi, order),
                Side::Left => disc.basis.eval_expansion_left(coeffs, xi, order),
            };
            v / jac.powi(order as i32)
        };
        let s = (disc.map.to_physical(xi) - shift).exp();
        a * (d(2) - d(1)) / (s * s)
    };
    Ok(simple_knots_xi(disc)
        .into_iter()
        .fold(0.0f64, |m, xi| m.max((g(xi, Side::Right) - g(xi, Side::Left)).abs())))
}

/// Writes `S,delta,gamma,theta` rows; the curves must share one S grid.
pub fn write_greeks_csv<W: Write>(
    mut out: W,
    delta: &GreekCurve,
    gamma: &GreekCurve,
    theta: &GreekCurve,
) -> Result<()> {
    if delta.s != gamma.s || delta.s != theta.s {
        return Err(Error::Dimension {
            expected: delta.s.len(),
            got: gamma.s.len().min(theta.s.len()),
        });
    }
    writeln!(out, "S,delta,gamma,theta")?;
    for i in 0..delta.s.len() {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_sig(delta.s[i]),
            fmt_sig(delta.values[i]),
            fmt_sig(gamma.values[i]),
            fmt_sig(theta.values[i])
        )?;
    }
    Ok(())
}

/// Ten significant digits without trailing zeros.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.9e}").parse().expect("formatted float");
    if (1e-9..1e15).contains(&rounded.abs()) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}
