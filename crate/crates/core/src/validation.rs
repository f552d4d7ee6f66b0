//! Invariant checks run by the `validate` command: each compares the
//! implementation against a small independent computation.

use crate::assembly::{assemble, Discretization, PhysicalMap};
use crate::basis::{KnotVector, NurbsBasis};
use crate::error::Result;
use crate::models::{AfvParams, Coupon, LelandParams, Model};
use crate::quadrature::{gauss_legendre, integrate_interval};
use crate::stepper::{step_linear, AfvStepper, LelandStepper, SchemeConfig, ThetaOperator};
use crate::models::{unified_coefficients, Unknown};

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantity and the bound it was compared with.
    pub measured: f64,
    pub bound: f64,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}: {:.3e} (bound {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.bound
        )
    }
}

fn check(name: &'static str, measured: Result<f64>, bound: f64) -> CheckResult {
    let measured = measured.unwrap_or(f64::INFINITY);
    CheckResult {
        name,
        passed: measured <= bound,
        measured,
        bound,
    }
}

/// Weighted cubic basis with a repeated interior knot.
fn sample_basis() -> Result<NurbsBasis> {
    let kv = KnotVector::new(
        vec![0.0, 0.0, 0.0, 0.0, 0.15, 0.3, 0.3, 0.55, 0.8, 1.0, 1.0, 1.0, 1.0],
        3,
    )?;
    NurbsBasis::new(kv, vec![1.0, 0.7, 1.6, 2.4, 1.0, 0.5, 1.3, 3.0, 1.0])
}

pub fn partition_of_unity() -> Result<f64> {
    let b = sample_basis()?;
    let mut worst = 0.0f64;
    for k in 0..=1000 {
        let xi = k as f64 / 1000.0;
        let s: f64 = b.eval_all(xi, 0)?.iter().sum();
        worst = worst.max((s - 1.0).abs());
    }
    Ok(worst)
}

/// Largest relative error of `∫ x^k` on `[-0.5, 1.5]` for `k <= 2 p_L - 1`.
pub fn quadrature_exactness() -> Result<f64> {
    let (a, b) = (-0.5f64, 1.5f64);
    let mut worst = 0.0f64;
    for order in 1..=16 {
        let rule = gauss_legendre(order)?;
        for k in 0..2 * order {
            let kk = k as i32;
            let exact = (b.powi(kk + 1) - a.powi(kk + 1)) / (kk as f64 + 1.0);
            let got = integrate_interval(|x| x.powi(kk), a, b, &rule);
            worst = worst.max((got - exact).abs() / exact.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Cholesky of the dense mass matrix succeeds; returns the largest
/// asymmetry, or infinity if a pivot is not positive.
pub fn mass_spd() -> Result<f64> {
    let b = sample_basis()?;
    let map = PhysicalMap::new(-2.0, 3.0, &b)?;
    let sys = assemble(&b, &map, &gauss_legendre(5)?);
    let m = sys.mass_full.to_dense();
    let n = m.len();
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((m[i][j] - m[j][i]).abs());
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = m[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d <= 0.0 {
            return Ok(f64::INFINITY);
        }
        l[j][j] = d.sqrt();
        for i in j + 1..n {
            l[i][j] = (m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>()) / l[j][j];
        }
    }
    Ok(asym)
}

/// Largest `|Σ_j K_ij|` relative to the largest diagonal entry.
pub fn stiffness_row_sums() -> Result<f64> {
    let b = sample_basis()?;
    let map = PhysicalMap::new(-2.0, 3.0, &b)?;
    let sys = assemble(&b, &map, &gauss_legendre(5)?);
    let k = sys.stiffness_full.to_dense();
    let scale = (0..k.len()).fold(0.0f64, |a, i| a.max(k[i][i].abs()));
    Ok(k.iter()
        .map(|row| row.iter().sum::<f64>().abs())
        .fold(0.0f64, f64::max)
        / scale)
}

/// Banded assembly against dense high-order quadrature of `eval_all`
/// products, relative to the largest entry of each matrix.
pub fn dense_assembly() -> Result<f64> {
    let b = sample_basis()?;
    let (x0, x1) = (-1.0, 2.5);
    let map = PhysicalMap::new(x0, x1, &b)?;
    let rule = gauss_legendre(12)?;
    let sys = assemble(&b, &map, &rule);
    let n = b.n_basis();
    let jac = map.jacobian();
    let mut dm = vec![vec![0.0; n]; n];
    let mut dk = vec![vec![0.0; n]; n];
    let mut dn = vec![vec![0.0; n]; n];
    for (a, c) in b.knots().spans() {
        for (xi, w) in rule.mapped(a, c) {
            let r = b.eval_all(xi, 0)?;
            let dr = b.eval_all(xi, 1)?;
            for i in 0..n {
                for j in 0..n {
                    dm[i][j] += w * r[i] * r[j] * jac;
                    dk[i][j] += w * dr[i] * dr[j] / jac;
                    dn[i][j] += w * r[j] * dr[i];
                }
            }
        }
    }
    let mut worst = 0.0f64;
    for (band, dense) in [
        (&sys.mass_full, &dm),
        (&sys.stiffness_full, &dk),
        (&sys.advection_full, &dn),
    ] {
        let got = band.to_dense();
        let scale = dense.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((got[i][j] - dense[i][j]).abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Rational first and second derivatives against central differences.
pub fn derivative_vs_difference() -> Result<f64> {
    let b = sample_basis()?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for xi in [0.07, 0.21, 0.42, 0.6, 0.9] {
        for order in 1..=2 {
            let an = b.eval_all(xi, order)?;
            let lo = b.eval_all(xi - h, order - 1)?;
            let hi = b.eval_all(xi + h, order - 1)?;
            let scale = an.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for i in 0..an.len() {
                let fd = (hi[i] - lo[i]) / (2.0 * h);
                worst = worst.max((fd - an[i]).abs() / scale);
            }
        }
    }
    Ok(worst)
}

pub fn transform_round_trip() -> Result<f64> {
    let p = LelandParams::new(0.05, 0.2, 100.0, 1.0, 0.3)?;
    let a = AfvParams::reference();
    let mut worst = 0.0f64;
    for (s, t, v) in [(50.0, 0.0, 1.0), (100.0, 0.4, 10.45), (180.0, 0.99, 85.0)] {
        let (x, tau, vh) = p.forward(s, t, v)?;
        let (s2, t2, v2) = p.inverse(x, tau, vh);
        worst = worst.max(((s2 - s) / s).abs()).max((t2 - t).abs()).max(((v2 - v) / v).abs());
        let x = a.x_of(s)?;
        worst = worst.max(((a.s_of(x) - s) / s).abs());
        worst = worst.max((a.time(a.tau(t)) - t).abs());
    }
    Ok(worst)
}

/// The Leland step with `Le = 0` against the linear θ-step.
pub fn leland_zero_step() -> Result<f64> {
    let p = LelandParams::new(0.05, 0.2, 100.0, 1.0, 0.0)?;
    let (x0, x1) = p.default_domain();
    let disc = Discretization::new(NurbsBasis::unweighted(KnotVector::uniform(24, 3)?), x0, x1, 5)?;
    let scheme = SchemeConfig::for_model(Model::Leland(&p), 0.5, 1, 10)?;
    let stepper = LelandStepper::new(&disc, &p, &scheme)?;
    let mut op = ThetaOperator::new(&disc.system, unified_coefficients(Model::Leland(&p), Unknown::VHat)?, scheme.dt());
    op.prepare(&[0.5, 1.0])?;
    let v0 = disc.interpolate(|x| p.initial(x))?;
    let mut worst = 0.0f64;
    for theta in [1.0, 0.5] {
        let tau = scheme.dt();
        let a = stepper.step(&v0, tau, theta)?;
        let b = step_linear(&op, &v0, stepper.boundary(tau), theta)?;
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        worst = a.iter().zip(&b).fold(worst, |m, (x, y)| m.max((x - y).abs() / scale));
    }
    Ok(worst)
}

/// Without default, constraints or coupons, `U = B + C` after a full run.
pub fn afv_superposition() -> Result<f64> {
    let mut p = AfvParams::reference();
    p.hazard = 0.0;
    p.early_conversion = false;
    p.call = None;
    p.put = None;
    p.coupons.clear();
    let disc = Discretization::new(NurbsBasis::unweighted(KnotVector::uniform(32, 3)?), -6.0, 2.0, 5)?;
    let scheme = SchemeConfig::for_model(Model::Afv(&p), 0.5, 2, 50)?;
    let st = AfvStepper::new(&disc, &p, &scheme)?;
    let mut cur = st.initial()?;
    let mut worst = 0.0f64;
    for m in 0..scheme.n_steps {
        cur = st.step(m, &cur)?.slice;
        let (u, b, c) = (&cur.fields[0], &cur.fields[1], &cur.fields[2]);
        worst = (0..u.len()).fold(worst, |w, j| w.max((u[j] - b[j] - c[j]).abs()));
    }
    Ok(worst)
}

/// A step that lands on a coupon level differs from the same step without
/// the coupon by exactly the coupon, for every coefficient of `U` and `B`.
pub fn coupon_jump() -> Result<f64> {
    let mut p = AfvParams::reference();
    p.call = None;
    p.put = None;
    p.coupons = vec![Coupon { time: 4.5, amount: 4.0 }];
    let mut q = p.clone();
    q.coupons.clear();
    let disc = Discretization::new(NurbsBasis::unweighted(KnotVector::uniform(32, 3)?), -6.0, 2.0, 5)?;
    let scheme = SchemeConfig::for_model(Model::Afv(&p), 0.5, 2, 20)?;
    let with = AfvStepper::new(&disc, &p, &scheme)?;
    let without = AfvStepper::new(&disc, &q, &scheme)?;
    let mut cur = without.initial()?;
    let mut worst = 0.0f64;
    for m in 0..scheme.n_steps {
        let a = with.step(m, &cur)?;
        let b = without.step(m, &cur)?;
        if a.coupon {
            for k in 0..2 {
                worst = a.slice.fields[k]
                    .iter()
                    .zip(&b.slice.fields[k])
                    .fold(worst, |w, (x, y)| w.max((x - y - 4.0).abs()));
            }
        }
        cur = b.slice;
    }
    Ok(worst)
}

/// Largest violation of the `U` constraints on interior coefficients of
/// the reference convertible with `ρ = 1e6`: on the final slice, or over
/// every level that carries no coupon when `all_levels` is set.
pub fn afv_constraint_violation(all_levels: bool) -> Result<f64> {
    let p = AfvParams::reference();
    let disc = Discretization::new(NurbsBasis::unweighted(KnotVector::uniform(64, 3)?), -6.0, 2.0, 5)?;
    let scheme = SchemeConfig::for_model(Model::Afv(&p), 0.5, 2, 100)?;
    let st = AfvStepper::new(&disc, &p, &scheme)?;
    let conv: Vec<f64> = disc.greville_x().iter().map(|&x| p.conversion_value(x)).collect();
    let mut cur = st.initial()?;
    let mut worst = 0.0f64;
    for m in 0..scheme.n_steps {
        let out = st.step(m, &cur)?;
        let last = m + 1 == scheme.n_steps;
        if !out.coupon && (all_levels || last) {
            let state = st.constraint_state(m + 1);
            let u = &out.slice.fields[0];
            for j in 1..u.len() - 1 {
                worst = worst.max(state.u_star_put(conv[j]) - u[j]);
                if state.call_active() {
                    worst = worst.max(u[j] - state.u_star_call(conv[j]));
                }
            }
        }
        cur = out.slice;
    }
    Ok(worst)
}

/// Runs every check with its bound.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("partition of unity", partition_of_unity(), 1e-12),
        check("Gauss-Legendre exactness", quadrature_exactness(), 1e-12),
        check("mass matrix symmetric positive definite", mass_spd(), 1e-10),
        check("stiffness row sums vanish", stiffness_row_sums(), 1e-10),
        check("banded vs dense assembly", dense_assembly(), 1e-10),
        check("NURBS derivatives vs differences", derivative_vs_difference(), 1e-5),
        check("transform round trips", transform_round_trip(), 1e-12),
        check("Le = 0 step equals linear step", leland_zero_step(), 1e-12),
        check("AFV superposition U = B + C", afv_superposition(), 1e-8),
        check("coupon jump exactness", coupon_jump(), 1e-10),
        check("post-run constraint violation", afv_constraint_violation(false), 1e-4),
    ]
}
