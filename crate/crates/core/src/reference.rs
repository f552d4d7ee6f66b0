//! Independent oracles: closed-form Black-Scholes prices and Greeks, central
//! finite-difference solvers for the Leland and AFV models, the degree-1
//! Galerkin path and the discrete misfit norm.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::assembly::Discretization;
use crate::basis::{KnotVector, NurbsBasis};
use crate::error::{Error, Result};
use crate::linsolve::{lu_factor, solve, BandedFactorization, BandedMatrix};
use crate::models::{
    afv_terminal, apply_b_constraints, apply_joint_constraints, default_source_terms,
    penalty_terms, unified_coefficients, AfvParams, ConstraintState, LelandParams, Model,
    UnifiedCoefficients, Unknown,
};
use crate::stepper::{
    afv_boundary_step, run, stability_warnings, AfvSchedule, CouponAccrual, SchemeConfig,
    SolutionSurface, Storage,
};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// European call price; at maturity the payoff.
pub fn bs_exact_call(s: f64, strike: f64, rate: f64, sigma: f64, maturity: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if maturity <= 0.0 {
        return (s - strike).max(0.0);
    }
    let n = std_normal();
    let sq = sigma * maturity.sqrt();
    let d1 = ((s / strike).ln() + (rate + 0.5 * sigma * sigma) * maturity) / sq;
    let d2 = d1 - sq;
    s * n.cdf(d1) - strike * (-rate * maturity).exp() * n.cdf(d2)
}

/// Closed-form call sensitivities; `theta` is `∂V/∂t` per year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsGreeks {
    pub delta: f64,
    pub gamma: f64,
    pub theta: f64,
}

pub fn bs_exact_greeks(s: f64, strike: f64, rate: f64, sigma: f64, maturity: f64) -> BsGreeks {
    let n = std_normal();
    let sq = sigma * maturity.sqrt();
    let d1 = ((s / strike).ln() + (rate + 0.5 * sigma * sigma) * maturity) / sq;
    let d2 = d1 - sq;
    let disc = (-rate * maturity).exp();
    BsGreeks {
        delta: n.cdf(d1),
        gamma: n.pdf(d1) / (s * sq),
        theta: -s * n.pdf(d1) * sigma / (2.0 * maturity.sqrt()) - rate * strike * disc * n.cdf(d2),
    }
}

/// Uniform grid and time stepping for the finite-difference oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdmConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_intervals: usize,
    pub scheme: SchemeConfig,
}

impl FdmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max) || self.n_intervals < 2 {
            return Err(Error::InvalidParameter(
                "finite-difference grid needs x_min < x_max and at least 2 intervals".into(),
            ));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_intervals as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_intervals)
            .map(|i| self.x_min + self.dx() * i as f64)
            .collect()
    }
}

/// Final slice of a finite-difference run: nodal values per unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct FdmGrid {
    pub x: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
    pub tau: f64,
    pub unknowns: Vec<Unknown>,
    pub values: Vec<Vec<f64>>,
    pub newton_iterations: Vec<usize>,
    pub warnings: Vec<String>,
}

impl FdmGrid {
    /// Linear interpolation of field `k` at `x`, clamped to the grid.
    pub fn value_at(&self, k: usize, x: f64) -> f64 {
        linear_interp(&self.x, &self.values[k], x)
    }
}

/// Piecewise-linear interpolation on increasing nodes, clamped at the ends.
pub fn linear_interp(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    if x <= nodes[0] {
        return values[0];
    }
    if x >= nodes[n - 1] {
        return values[n - 1];
    }
    let i = nodes.partition_point(|&v| v <= x).clamp(1, n - 1);
    let t = (x - nodes[i - 1]) / (nodes[i] - nodes[i - 1]);
    values[i - 1] + t * (values[i] - values[i - 1])
}

/// Central-difference operator `L w = Υ1 w_xx + Υ2 w_x - Υ3 w` on the
/// interior nodes, with factorizations of `I - θΔτ L`.
struct FdmOperator {
    lower: f64,
    diag: f64,
    upper: f64,
    dt: f64,
    n_interior: usize,
    factors: Vec<(f64, BandedFactorization)>,
}

impl FdmOperator {
    fn new(c: UnifiedCoefficients, dx: f64, dt: f64, n_interior: usize, thetas: &[f64]) -> Result<Self> {
        let d2 = c.diffusion / (dx * dx);
        let d1 = c.advection / (2.0 * dx);
        let mut op = Self {
            lower: d2 - d1,
            diag: -2.0 * d2 - c.reaction,
            upper: d2 + d1,
            dt,
            n_interior,
            factors: Vec::new(),
        };
        for &t in thetas {
            let f = lu_factor(&op.lhs(t))?;
            op.factors.push((t, f));
        }
        Ok(op)
    }

    fn lhs(&self, theta: f64) -> BandedMatrix {
        let n = self.n_interior;
        let k = theta * self.dt;
        let mut a = BandedMatrix::zeros(n, 1, 1);
        for i in 0..n {
            a.set(i, i, 1.0 - k * self.diag);
            if i > 0 {
                a.set(i, i - 1, -k * self.lower);
            }
            if i + 1 < n {
                a.set(i, i + 1, -k * self.upper);
            }
        }
        a
    }

    /// Factorization for a θ passed to `new`.
    fn factor(&self, theta: f64) -> Result<&BandedFactorization> {
        self.factors
            .iter()
            .find(|(t, _)| *t == theta)
            .map(|(_, f)| f)
            .ok_or_else(|| Error::InvalidParameter(format!("theta {theta} was not prepared")))
    }

    /// `(L w)_i` at interior node `i` of a full nodal vector.
    fn apply_at(&self, w: &[f64], i: usize) -> f64 {
        self.lower * w[i - 1] + self.diag * w[i] + self.upper * w[i + 1]
    }

    /// Explicit part plus implicit boundary terms; `source` holds the
    /// time-weighted nodal source per interior node.
    fn rhs(&self, w: &[f64], next_boundary: (f64, f64), theta: f64, source: Option<&[f64]>) -> Vec<f64> {
        let n = self.n_interior;
        let k = theta * self.dt;
        (0..n)
            .map(|j| {
                let i = j + 1;
                let mut r = w[i] + (1.0 - theta) * self.dt * self.apply_at(w, i);
                if j == 0 {
                    r += k * self.lower * next_boundary.0;
                }
                if j + 1 == n {
                    r += k * self.upper * next_boundary.1;
                }
                if let Some(s) = source {
                    r += self.dt * s[j];
                }
                r
            })
            .collect()
    }

    fn step(&self, w: &[f64], next_boundary: (f64, f64), theta: f64, source: Option<&[f64]>) -> Result<Vec<f64>> {
        let rhs = self.rhs(w, next_boundary, theta, source);
        let interior = solve(self.factor(theta)?, &rhs)?;
        Ok(with_boundary(next_boundary, interior))
    }
}

fn with_boundary(b: (f64, f64), interior: Vec<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(interior.len() + 2);
    out.push(b.0);
    out.extend(interior);
    out.push(b.1);
    out
}

fn scheme_thetas(s: &SchemeConfig) -> Vec<f64> {
    let mut t = vec![1.0];
    if !t.contains(&s.theta) {
        t.push(s.theta);
    }
    t
}

fn non_finite(step: usize) -> Error {
    Error::Solver {
        step,
        reason: "non-finite value".into(),
    }
}

/// Leland model on a uniform grid with the explicit `Le |ṽ^m|` source.
pub fn fdm_solve_leland(params: &LelandParams, cfg: &FdmConfig) -> Result<FdmGrid> {
    cfg.validate()?;
    let coeffs = unified_coefficients(Model::Leland(params), Unknown::VHat)?;
    let scheme = cfg.scheme;
    let dx = cfg.dx();
    let x = cfg.nodes();
    let n_int = cfg.n_intervals - 1;
    let op = FdmOperator::new(coeffs, dx, scheme.dt(), n_int, &scheme_thetas(&scheme))?;
    let mut w: Vec<f64> = x.iter().map(|&xi| params.initial(xi)).collect();
    let d2 = coeffs.diffusion / (dx * dx);
    let d1 = coeffs.advection / (2.0 * dx);
    for m in 0..scheme.n_steps {
        let tau = scheme.tau_at(m + 1);
        let src: Vec<f64> = (1..=n_int)
            .map(|i| {
                let aux = d2 * (w[i + 1] - 2.0 * w[i] + w[i - 1]) + d1 * (w[i + 1] - w[i - 1]);
                params.leland * aux.abs()
            })
            .collect();
        let bnd = (
            params.left_boundary(cfg.x_min, tau),
            params.right_boundary(cfg.x_max, tau),
        );
        w = op.step(&w, bnd, scheme.theta_at(m), Some(&src))?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(m + 1));
        }
    }
    Ok(FdmGrid {
        x,
        dx,
        dt: scheme.dt(),
        tau: scheme.horizon,
        unknowns: vec![Unknown::VHat],
        values: vec![w],
        newton_iterations: Vec::new(),
        warnings: if scheme.n_steps > 0 {
            stability_warnings(scheme.dt(), dx)
        } else {
            Vec::new()
        },
    })
}

/// AFV system on a uniform grid with nodal default sources and a nodal
/// penalty-Newton iteration for `U`.
pub fn fdm_solve_afv(params: &AfvParams, cfg: &FdmConfig, accrual: CouponAccrual) -> Result<FdmGrid> {
    cfg.validate()?;
    params.validate()?;
    let scheme = cfg.scheme;
    let dt = scheme.dt();
    let dx = cfg.dx();
    let x = cfg.nodes();
    let n_int = cfg.n_intervals - 1;
    let thetas = scheme_thetas(&scheme);
    let make = |u: Unknown| -> Result<FdmOperator> {
        FdmOperator::new(unified_coefficients(Model::Afv(params), u)?, dx, dt, n_int, &thetas)
    };
    let (op_u, op_b, op_c) = (make(Unknown::U)?, make(Unknown::B)?, make(Unknown::C)?);
    let schedule = AfvSchedule::new(params, &scheme, accrual);
    let conv: Vec<f64> = x.iter().map(|&xi| params.conversion_value(xi)).collect();
    let far = params.conversion_value(cfg.x_max);

    let terminal: Vec<(f64, f64, f64)> = x.iter().map(|&xi| afv_terminal(params.s_of(xi), params)).collect();
    let mut u: Vec<f64> = terminal.iter().map(|t| t.0).collect();
    let mut b: Vec<f64> = terminal.iter().map(|t| t.1).collect();
    let mut c: Vec<f64> = terminal.iter().map(|t| t.2).collect();
    let mut newton_iterations = Vec::with_capacity(scheme.n_steps);

    let sources = |bond: &[f64], equity_part: bool| -> Vec<f64> {
        (1..=n_int)
            .map(|i| {
                let (d, g) = default_source_terms(x[i], bond[i], params);
                params.hazard * if equity_part { g } else { d }
            })
            .collect()
    };
    let blend = |a: &[f64], b: &[f64], theta: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(p, q)| (1.0 - theta) * p + theta * q).collect()
    };

    for m in 0..scheme.n_steps {
        let theta = scheme.theta_at(m);
        let state = schedule.constraint_state(params, m + 1);
        let (u0, b0, c0) = afv_boundary_step(params, dt, theta, (u[0], b[0], c[0]));

        let mut bond = op_b.step(&b, (b0, 0.0), theta, None)?;
        let gamma = blend(&sources(&b, true), &sources(&bond, true), theta);
        let equity = op_c.step(&c, (c0, far), theta, Some(&gamma))?;
        apply_b_constraints(&mut bond, &equity, &state);

        let delta = blend(&sources(&b, false), &sources(&bond, false), theta);
        let rhs = op_u.rhs(&u, (u0, far), theta, Some(&delta));
        let lhs = op_u.lhs(theta);
        let guess = solve(op_u.factor(theta)?, &rhs)?;
        let (interior, iters) = fdm_newton(params, &state, &conv[1..=n_int], &lhs, &rhs, guess, dt)
            .map_err(|e| Error::Solver {
                step: m + 1,
                reason: e.to_string(),
            })?;
        let mut next_u = with_boundary((u0, far), interior);
        apply_joint_constraints(&mut bond, &equity, &state, &conv);
        let mut bond = bond;
        if let Some(k) = schedule.coupon_at(m + 1) {
            next_u.iter_mut().for_each(|v| *v += k);
            bond.iter_mut().for_each(|v| *v += k);
        }
        if next_u.iter().chain(&bond).chain(&equity).any(|v| !v.is_finite()) {
            return Err(non_finite(m + 1));
        }
        newton_iterations.push(iters);
        u = next_u;
        b = bond;
        c = equity;
    }
    Ok(FdmGrid {
        x,
        dx,
        dt,
        tau: scheme.horizon,
        unknowns: vec![Unknown::U, Unknown::B, Unknown::C],
        values: vec![u, b, c],
        newton_iterations,
        warnings: Vec::new(),
    })
}

fn fdm_newton(
    params: &AfvParams,
    state: &ConstraintState,
    conv: &[f64],
    lhs: &BandedMatrix,
    rhs: &[f64],
    mut u: Vec<f64>,
    dt: f64,
) -> Result<(Vec<f64>, usize)> {
    let rho_dt = params.penalty * dt;
    let mut terms = penalty_terms(&u, state, conv, 1.0);
    let mut last_update = f64::INFINITY;
    for k in 1..=params.max_newton {
        if !terms.put.iter().chain(&terms.call).any(|&a| a) {
            return Ok((u, k - 1));
        }
        let lu = lhs.matvec(&u);
        let mut jac = lhs.clone();
        let f: Vec<f64> = (0..u.len())
            .map(|j| {
                let mut pen = 0.0;
                if terms.put[j] {
                    pen += u[j] - state.u_star_put(conv[j]);
                    jac.add(j, j, rho_dt);
                }
                if terms.call[j] {
                    pen += u[j] - state.u_star_call(conv[j]);
                    jac.add(j, j, rho_dt);
                }
                lu[j] - rhs[j] + rho_dt * pen
            })
            .collect();
        let du = solve(&lu_factor(&jac)?, &f)?;
        last_update = du.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        u.iter_mut().zip(&du).for_each(|(v, d)| *v -= d);
        let next = penalty_terms(&u, state, conv, 1.0);
        let unchanged = next.put == terms.put && next.call == terms.call;
        terms = next;
        if last_update <= params.tol || unchanged {
            return Ok((u, k));
        }
    }
    Err(Error::NewtonDivergence {
        iterations: params.max_newton,
        last_update,
    })
}

/// Runs the Galerkin pipeline with open-knot degree-1 B-splines (hat
/// functions) on `n_elements` uniform spans.
pub fn p1fem_solve(
    model: Model<'_>,
    x_min: f64,
    x_max: f64,
    n_elements: usize,
    scheme: &SchemeConfig,
    storage: Storage,
) -> Result<(Discretization, SolutionSurface)> {
    let basis = NurbsBasis::unweighted(KnotVector::uniform(n_elements, 1)?);
    let disc = Discretization::new(basis, x_min, x_max, 2)?;
    let surface = run(model, &disc, scheme, storage)?;
    Ok((disc, surface))
}

/// Values of an expansion at the given physical points.
pub fn sample_expansion(disc: &Discretization, coeffs: &[f64], xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| disc.evaluate(coeffs, x, 0)).collect()
}

/// Plain discrete 2-norm of the pointwise difference of two samples on a
/// common grid.
pub fn misfit_epsilon(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
}
