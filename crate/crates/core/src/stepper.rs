//! θ-scheme time integration of the semi-discrete Galerkin system.
//!
//! Every unknown satisfies `M ẇ = -(Υ1 K + Υ2 N + Υ3 M) w + M ν` on the
//! interior rows, where `N_ij = (R_j, R_i')` comes from integrating the
//! advection term by parts and `ν` are group-FEM coefficients of the
//! nonlinear source. Coefficient vectors are always full length; entries 0
//! and `n-1` are the Dirichlet boundary values.

use crate::assembly::{Discretization, GalerkinSystem};
use crate::error::{Error, Result};
use crate::linsolve::{lu_factor, solve, BandedFactorization, BandedMatrix};
use crate::models::{
    accrued_interest, afv_terminal, apply_b_constraints, apply_joint_constraints,
    default_source_terms, penalty_terms, unified_coefficients, AfvParams, ConstraintState,
    ConstraintWindow, LelandParams, Model, UnifiedCoefficients, Unknown,
};

/// Main-scheme θ, Rannacher startup count and uniform step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub theta: f64,
    pub rannacher_steps: usize,
    pub n_steps: usize,
    pub horizon: f64,
}

impl SchemeConfig {
    pub fn new(theta: f64, rannacher_steps: usize, n_steps: usize, horizon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!("theta {theta} outside [0, 1]")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon {horizon} invalid")));
        }
        Ok(Self {
            theta,
            rannacher_steps,
            n_steps,
            horizon,
        })
    }

    pub fn dt(&self) -> f64 {
        if self.n_steps == 0 {
            0.0
        } else {
            self.horizon / self.n_steps as f64
        }
    }

    /// θ used for step `m` (0-based): fully implicit during startup.
    pub fn theta_at(&self, m: usize) -> f64 {
        if m < self.rannacher_steps {
            1.0
        } else {
            self.theta
        }
    }

    pub fn tau_at(&self, m: usize) -> f64 {
        if m == self.n_steps {
            self.horizon
        } else {
            m as f64 * self.dt()
        }
    }
}

/// Interior operator `A = Υ1 K + Υ2 N + Υ3 M` with factorizations of
/// `M + θΔτ A` cached per θ.
#[derive(Debug, Clone)]
pub struct ThetaOperator<'a> {
    system: &'a GalerkinSystem,
    coeffs: UnifiedCoefficients,
    op: BandedMatrix,
    op_bc: [Vec<f64>; 2],
    dt: f64,
    factors: Vec<(f64, BandedFactorization)>,
}

impl<'a> ThetaOperator<'a> {
    pub fn new(system: &'a GalerkinSystem, coeffs: UnifiedCoefficients, dt: f64) -> Self {
        let UnifiedCoefficients {
            diffusion,
            advection,
            reaction,
        } = coeffs;
        let op = system
            .stiffness
            .combine(diffusion, &system.advection, advection)
            .combine(1.0, &system.mass, reaction);
        let col = |k: usize| -> Vec<f64> {
            (0..system.n_interior())
                .map(|i| {
                    diffusion * system.stiffness_bc[k][i]
                        + advection * system.advection_bc[k][i]
                        + reaction * system.mass_bc[k][i]
                })
                .collect()
        };
        let op_bc = [col(0), col(1)];
        Self {
            system,
            coeffs,
            op,
            op_bc,
            dt,
            factors: Vec::new(),
        }
    }

    pub fn system(&self) -> &GalerkinSystem {
        self.system
    }

    pub fn coefficients(&self) -> UnifiedCoefficients {
        self.coeffs
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Interior block of `A`.
    pub fn operator(&self) -> &BandedMatrix {
        &self.op
    }

    /// `M_II + θΔτ A_II`.
    pub fn lhs_matrix(&self, theta: f64) -> BandedMatrix {
        self.system.mass.combine(1.0, &self.op, theta * self.dt)
    }

    /// Factorizes `M + θΔτ A` for each θ that will be used.
    pub fn prepare(&mut self, thetas: &[f64]) -> Result<()> {
        for &t in thetas {
            if self.factors.iter().all(|(ft, _)| *ft != t) {
                let f = lu_factor(&self.lhs_matrix(t))?;
                self.factors.push((t, f));
            }
        }
        Ok(())
    }

    pub fn factor(&self, theta: f64) -> Option<&BandedFactorization> {
        self.factors.iter().find(|(t, _)| *t == theta).map(|(_, f)| f)
    }

    /// `A` applied to a full coefficient vector, interior rows only.
    pub fn apply(&self, full: &[f64]) -> Vec<f64> {
        let n = full.len();
        let mut out = self.op.matvec(&full[1..n - 1]);
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.op_bc[0][i] * full[0] + self.op_bc[1][i] * full[n - 1];
        }
        out
    }

    /// Right-hand side of the θ-step, without sources:
    /// `M w^m - (1-θ)Δτ A w^m` minus the level-(m+1) boundary terms.
    pub fn rhs(&self, current: &[f64], next_boundary: (f64, f64), theta: f64) -> Vec<f64> {
        let n = current.len();
        let mass_now = mass_apply(self.system, current);
        let op_now = self.apply(current);
        let dt = self.dt;
        (0..n - 2)
            .map(|i| {
                let bc_next = (self.system.mass_bc[0][i] + theta * dt * self.op_bc[0][i])
                    * next_boundary.0
                    + (self.system.mass_bc[1][i] + theta * dt * self.op_bc[1][i])
                        * next_boundary.1;
                mass_now[i] - (1.0 - theta) * dt * op_now[i] - bc_next
            })
            .collect()
    }

    /// Solves `(M + θΔτ A) w_I = rhs` and returns the full vector with the
    /// given boundary values.
    pub fn solve_interior(&self, rhs: &[f64], boundary: (f64, f64), theta: f64) -> Result<Vec<f64>> {
        let interior = match self.factor(theta) {
            Some(f) => solve(f, rhs)?,
            None => solve(&lu_factor(&self.lhs_matrix(theta))?, rhs)?,
        };
        Ok(assemble_full(boundary, &interior))
    }

    /// One θ-step with optional group-FEM source coefficients at levels `m`
    /// and `m+1` (full length).
    pub fn step(
        &self,
        current: &[f64],
        next_boundary: (f64, f64),
        theta: f64,
        source_now: Option<&[f64]>,
        source_next: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let mut rhs = self.rhs(current, next_boundary, theta);
        let dt = self.dt;
        if let Some(s) = source_now {
            let ms = mass_apply(self.system, s);
            for (r, v) in rhs.iter_mut().zip(ms) {
                *r += (1.0 - theta) * dt * v;
            }
        }
        if let Some(s) = source_next {
            let ms = mass_apply(self.system, s);
            for (r, v) in rhs.iter_mut().zip(ms) {
                *r += theta * dt * v;
            }
        }
        self.solve_interior(&rhs, next_boundary, theta)
    }
}

/// Interior rows of `M_full · v` for a full-length `v`.
pub fn mass_apply(system: &GalerkinSystem, full: &[f64]) -> Vec<f64> {
    let n = full.len();
    let mut out = system.mass.matvec(&full[1..n - 1]);
    for (i, o) in out.iter_mut().enumerate() {
        *o += system.mass_bc[0][i] * full[0] + system.mass_bc[1][i] * full[n - 1];
    }
    out
}

pub(crate) fn assemble_full(boundary: (f64, f64), interior: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(interior.len() + 2);
    out.push(boundary.0);
    out.extend_from_slice(interior);
    out.push(boundary.1);
    out
}

/// Coefficients of one time level; boundary values are the first and last
/// entries of each vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlice {
    pub tau: f64,
    pub fields: Vec<Vec<f64>>,
}

impl TimeSlice {
    pub fn field(&self, k: usize) -> &[f64] {
        &self.fields[k]
    }

    pub fn interior(&self, k: usize) -> &[f64] {
        let f = &self.fields[k];
        &f[1..f.len() - 1]
    }

    pub fn boundary(&self, k: usize) -> (f64, f64) {
        let f = &self.fields[k];
        (f[0], f[f.len() - 1])
    }

    pub fn is_finite(&self) -> bool {
        self.fields.iter().flatten().all(|v| v.is_finite())
    }
}

/// Which time levels a run keeps in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    /// Every level `0..=n_τ`.
    Full,
    /// The initial level and the last two levels (enough for Θ at t = 0).
    Endpoints,
    /// Every level divisible by the stride, plus the last two levels.
    Stride(usize),
}

/// Time levels of one run together with the scheme and per-step diagnostics.
#[derive(Debug, Clone)]
pub struct SolutionSurface {
    pub unknowns: Vec<Unknown>,
    pub scheme: SchemeConfig,
    pub slices: Vec<TimeSlice>,
    /// Step index `m` of each stored slice.
    pub levels: Vec<usize>,
    /// Newton iterations per step (AFV only).
    pub newton_iterations: Vec<usize>,
    /// Step indices at which a coupon was added.
    pub coupon_levels: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SolutionSurface {
    pub fn last(&self) -> &TimeSlice {
        self.slices.last().expect("a surface always holds the initial slice")
    }

    /// Index into `slices` of step `m`, if stored.
    pub fn slice_at_level(&self, m: usize) -> Option<&TimeSlice> {
        self.levels.iter().position(|&l| l == m).map(|i| &self.slices[i])
    }

    pub fn field_index(&self, unknown: Unknown) -> Option<usize> {
        self.unknowns.iter().position(|&u| u == unknown)
    }

    pub fn is_finite(&self) -> bool {
        self.slices.iter().all(TimeSlice::is_finite)
    }

    fn push(&mut self, storage: Storage, m: usize, slice: TimeSlice) {
        if storage == Storage::Endpoints && self.slices.len() == 3 {
            self.slices.remove(1);
            self.levels.remove(1);
        }
        self.slices.push(slice);
        self.levels.push(m);
        if let Storage::Stride(k) = storage {
            let n = self.levels.len();
            if n >= 3 {
                let l = self.levels[n - 3];
                if l != 0 && l % k.max(1) != 0 {
                    self.slices.remove(n - 3);
                    self.levels.remove(n - 3);
                }
            }
        }
    }
}

impl SchemeConfig {
    /// Scheme over the model's full backward-time horizon.
    pub fn for_model(model: Model<'_>, theta: f64, rannacher_steps: usize, n_steps: usize) -> Result<Self> {
        let horizon = match model {
            Model::Leland(p) => p.horizon(),
            Model::Afv(p) => p.maturity,
        };
        Self::new(theta, rannacher_steps, n_steps, horizon)
    }

    fn distinct_thetas(&self) -> Vec<f64> {
        let mut t = Vec::new();
        if self.rannacher_steps > 0 && self.n_steps > 0 {
            t.push(1.0);
        }
        if self.n_steps > self.rannacher_steps && !t.contains(&self.theta) {
            t.push(self.theta);
        }
        t
    }
}

/// One θ-step of the linear problem: `step_leland` without the source.
pub fn step_linear(
    op: &ThetaOperator<'_>,
    current: &[f64],
    next_boundary: (f64, f64),
    theta: f64,
) -> Result<Vec<f64>> {
    op.step(current, next_boundary, theta, None, None)
}

/// Linearized θ-stepping of the mixed Leland formulation.
#[derive(Debug, Clone)]
pub struct LelandStepper<'a> {
    disc: &'a Discretization,
    params: &'a LelandParams,
    op: ThetaOperator<'a>,
    mass_factor: BandedFactorization,
}

impl<'a> LelandStepper<'a> {
    pub fn new(disc: &'a Discretization, params: &'a LelandParams, scheme: &SchemeConfig) -> Result<Self> {
        let coeffs = unified_coefficients(Model::Leland(params), Unknown::VHat)?;
        let mut op = ThetaOperator::new(&disc.system, coeffs, scheme.dt());
        op.prepare(&scheme.distinct_thetas())?;
        let mass_factor = lu_factor(&disc.system.mass)?;
        Ok(Self {
            disc,
            params,
            op,
            mass_factor,
        })
    }

    pub fn operator(&self) -> &ThetaOperator<'a> {
        &self.op
    }

    /// Coefficients of `ṽ = v̂_xx - v̂_x` from the weak form `M ṽ = -A v̂`;
    /// both boundary values of `ṽ` are zero for the Leland boundary data.
    pub fn auxiliary(&self, current: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = self.op.apply(current).iter().map(|v| -v).collect();
        let interior = solve(&self.mass_factor, &rhs)?;
        Ok(assemble_full((0.0, 0.0), &interior))
    }

    /// Group-FEM coefficients of `Le |ṽ|`.
    pub fn source(&self, current: &[f64]) -> Result<Vec<f64>> {
        let aux = self.auxiliary(current)?;
        let le = self.params.leland;
        let values: Vec<f64> = self
            .disc
            .values_at_greville(&aux)
            .into_iter()
            .map(|v| le * v.abs())
            .collect();
        self.disc.project(&values)
    }

    /// Boundary values at backward time `tau`.
    pub fn boundary(&self, tau: f64) -> (f64, f64) {
        let map = &self.disc.map;
        (
            self.params.left_boundary(map.x_min, tau),
            self.params.right_boundary(map.x_max, tau),
        )
    }

    /// One step with `|ṽ^{m+1}| ≈ |ṽ^m|`, so the source enters with full weight.
    pub fn step(&self, current: &[f64], tau_next: f64, theta: f64) -> Result<Vec<f64>> {
        let src = self.source(current)?;
        self.op
            .step(current, self.boundary(tau_next), theta, Some(&src), Some(&src))
    }
}

/// How the accrued interest is read on a level that carries a coupon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouponAccrual {
    /// Accrual equals the full coupon on its payment level (`AccI(t_i) = K_i`).
    #[default]
    CumCoupon,
    /// Accrual restarts at zero on the payment level, since the coupon is
    /// added after the constraints.
    ExCoupon,
}

/// Time levels at which coupons are paid and the put binds, plus the
/// accrual convention used for dirty prices.
#[derive(Debug, Clone, PartialEq)]
pub struct AfvSchedule {
    scheme: SchemeConfig,
    coupon_levels: Vec<(usize, f64)>,
    put_level: Option<usize>,
    accrual: CouponAccrual,
}

impl AfvSchedule {
    /// Coupons dated strictly before maturity land on the nearest level;
    /// an instant put window binds on the level nearest to its date.
    pub fn new(params: &AfvParams, scheme: &SchemeConfig, accrual: CouponAccrual) -> Self {
        let dt = scheme.dt();
        let level_of = |t: f64| -> Option<usize> {
            if dt <= 0.0 {
                return None;
            }
            let m = ((params.maturity - t) / dt).round();
            (m >= 1.0 && m <= scheme.n_steps as f64).then_some(m as usize)
        };
        let coupon_levels = params
            .coupons
            .iter()
            .filter(|c| c.time < params.maturity - 1e-12)
            .filter_map(|c| level_of(c.time).map(|m| (m, c.amount)))
            .collect();
        let put_level = params
            .put
            .filter(ConstraintWindow::is_instant)
            .and_then(|w| level_of(w.start));
        Self {
            scheme: *scheme,
            coupon_levels,
            put_level,
            accrual,
        }
    }

    pub fn accrual(&self) -> CouponAccrual {
        self.accrual
    }

    pub fn put_level(&self) -> Option<usize> {
        self.put_level
    }

    /// Total coupon added at level `m`, if any.
    pub fn coupon_at(&self, m: usize) -> Option<f64> {
        self.coupon_levels
            .iter()
            .filter(|(l, _)| *l == m)
            .map(|(_, a)| *a)
            .reduce(|a, b| a + b)
    }

    /// Dirty call/put prices at step `m` (calendar time `T - τ^m`).
    pub fn constraint_state(&self, params: &AfvParams, m: usize) -> ConstraintState {
        let tau = self.scheme.tau_at(m);
        let t = params.time(tau);
        let accrued = match (self.accrual, self.coupon_at(m)) {
            (CouponAccrual::ExCoupon, Some(_)) => 0.0,
            _ => accrued_interest(t, &params.coupons),
        };
        let put_now = match params.put {
            Some(w) if w.is_instant() => self.put_level == Some(m),
            Some(w) => w.contains(t),
            None => false,
        };
        ConstraintState::at(params, t, put_now, accrued)
    }
}

/// θ-scheme for the `S = 0` ODEs of `(U, B, C)`; returns the new values.
pub fn afv_boundary_step(params: &AfvParams, dt: f64, theta: f64, now: (f64, f64, f64)) -> (f64, f64, f64) {
    let p = params;
    let (u0, b0, c0) = now;
    let rb = p.rate + (1.0 - p.recovery) * p.hazard;
    let rc = p.rate + p.hazard;
    let b1 = (1.0 - (1.0 - theta) * dt * rb) / (1.0 + theta * dt * rb) * b0;
    let c1 = (1.0 - (1.0 - theta) * dt * rc) / (1.0 + theta * dt * rc) * c0;
    let src = p.recovery * p.hazard * (theta * b1 + (1.0 - theta) * b0);
    let u1 = ((1.0 - (1.0 - theta) * dt * rc) * u0 + dt * src) / (1.0 + theta * dt * rc);
    (u1, b1, c1)
}

/// Algorithm for one AFV step: boundary ODEs, unconstrained `B`, `C` with the
/// default source, `B` constraints, penalty-Newton for `U`, joint constraints
/// and coupon injection.
#[derive(Debug, Clone)]
pub struct AfvStepper<'a> {
    disc: &'a Discretization,
    params: &'a AfvParams,
    scheme: SchemeConfig,
    op_u: ThetaOperator<'a>,
    op_b: ThetaOperator<'a>,
    op_c: ThetaOperator<'a>,
    conversion: Vec<f64>,
    schedule: AfvSchedule,
}

/// Result of one AFV step.
#[derive(Debug, Clone)]
pub struct AfvStep {
    pub slice: TimeSlice,
    pub newton_iterations: usize,
    pub coupon: bool,
}

impl<'a> AfvStepper<'a> {
    pub fn new(disc: &'a Discretization, params: &'a AfvParams, scheme: &SchemeConfig) -> Result<Self> {
        params.validate()?;
        let dt = scheme.dt();
        let thetas = scheme.distinct_thetas();
        let make = |u: Unknown| -> Result<ThetaOperator<'a>> {
            let mut op = ThetaOperator::new(&disc.system, unified_coefficients(Model::Afv(params), u)?, dt);
            op.prepare(&thetas)?;
            Ok(op)
        };
        Ok(Self {
            disc,
            params,
            scheme: *scheme,
            op_u: make(Unknown::U)?,
            op_b: make(Unknown::B)?,
            op_c: make(Unknown::C)?,
            conversion: disc.greville_x().iter().map(|&x| params.conversion_value(x)).collect(),
            schedule: AfvSchedule::new(params, scheme, CouponAccrual::CumCoupon),
        })
    }

    pub fn with_accrual(mut self, accrual: CouponAccrual) -> Self {
        self.schedule = AfvSchedule::new(self.params, &self.scheme, accrual);
        self
    }

    pub fn schedule(&self) -> &AfvSchedule {
        &self.schedule
    }

    pub fn discretization(&self) -> &Discretization {
        self.disc
    }

    /// Initial slice `[U, B, C]` interpolating the terminal payoff.
    pub fn initial(&self) -> Result<TimeSlice> {
        let p = self.params;
        let fields = (0..3)
            .map(|k| {
                self.disc.interpolate(|x| {
                    let (u, b, c) = afv_terminal(p.s_of(x), p);
                    [u, b, c][k]
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TimeSlice { tau: 0.0, fields })
    }

    pub fn coupon_at(&self, m: usize) -> Option<f64> {
        self.schedule.coupon_at(m)
    }

    pub fn constraint_state(&self, m: usize) -> ConstraintState {
        self.schedule.constraint_state(self.params, m)
    }

    /// θ-scheme for the boundary ODEs at `x_min`; the far boundary is the
    /// conversion value.
    pub fn boundary_step(&self, current: &TimeSlice, theta: f64) -> [(f64, f64); 3] {
        let now = (current.fields[0][0], current.fields[1][0], current.fields[2][0]);
        let (u1, b1, c1) = afv_boundary_step(self.params, self.scheme.dt(), theta, now);
        let far = self.params.conversion_value(self.disc.map.x_max);
        [(u1, far), (b1, 0.0), (c1, far)]
    }

    fn source_values(&self, bond: &[f64], equity_part: bool) -> Result<Vec<f64>> {
        let b_vals = self.disc.values_at_greville(bond);
        let vals: Vec<f64> = self
            .disc
            .greville_x()
            .iter()
            .zip(&b_vals)
            .map(|(&x, &b)| {
                let (d, g) = default_source_terms(x, b, self.params);
                self.params.hazard * if equity_part { g } else { d }
            })
            .collect();
        self.disc.project(&vals)
    }

    /// Advances `current` (level `m`) to level `m + 1`.
    pub fn step(&self, m: usize, current: &TimeSlice) -> Result<AfvStep> {
        let theta = self.scheme.theta_at(m);
        let dt = self.scheme.dt();
        let next = m + 1;
        let state = self.constraint_state(next);
        let [bu, bb, bc] = self.boundary_step(current, theta);
        let (u_m, b_m, c_m) = (&current.fields[0], &current.fields[1], &current.fields[2]);

        let mut bond = self.op_b.step(b_m, bb, theta, None, None)?;
        let gamma_now = self.source_values(b_m, true)?;
        let gamma_next = self.source_values(&bond, true)?;
        let equity = self.op_c.step(c_m, bc, theta, Some(&gamma_now), Some(&gamma_next))?;
        apply_b_constraints(&mut bond, &equity, &state);

        let delta_now = self.source_values(b_m, false)?;
        let delta_next = self.source_values(&bond, false)?;
        let mut rhs = self.op_u.rhs(u_m, bu, theta);
        let md_now = mass_apply(self.op_u.system(), &delta_now);
        let md_next = mass_apply(self.op_u.system(), &delta_next);
        for ((r, a), b) in rhs.iter_mut().zip(md_now).zip(md_next) {
            *r += dt * ((1.0 - theta) * a + theta * b);
        }
        let guess = self.op_u.solve_interior(&rhs, bu, theta)?;
        let (mut u, iterations) = self.newton(guess, &rhs, &state, theta)?;
        apply_joint_constraints(&mut bond, &equity, &state, &self.conversion);
        let mut coupon = false;
        if let Some(k) = self.coupon_at(next) {
            coupon = true;
            u.iter_mut().for_each(|v| *v += k);
            bond.iter_mut().for_each(|v| *v += k);
        }
        Ok(AfvStep {
            slice: TimeSlice {
                tau: self.scheme.tau_at(next),
                fields: vec![u, bond, equity],
            },
            newton_iterations: iterations,
            coupon,
        })
    }

    /// Penalty-Newton iteration for the interior of `U`; returns the full
    /// vector and the iteration count.
    pub fn newton(
        &self,
        guess: Vec<f64>,
        rhs: &[f64],
        state: &ConstraintState,
        theta: f64,
    ) -> Result<(Vec<f64>, usize)> {
        let n = guess.len();
        let rho_dt = self.params.penalty * self.scheme.dt();
        let sys = self.op_u.system();
        let lhs = self.op_u.lhs_matrix(theta);
        let indicators = |u: &[f64]| -> (Vec<bool>, Vec<bool>) {
            let mut terms = penalty_terms(&u[1..n - 1], state, &self.conversion[1..n - 1], 1.0);
            terms.put.insert(0, false);
            terms.put.push(false);
            terms.call.insert(0, false);
            terms.call.push(false);
            (terms.put, terms.call)
        };
        let mut u = guess;
        let (mut put, mut call) = indicators(&u);
        let mut last_update = f64::INFINITY;
        for k in 1..=self.params.max_newton {
            if !put.iter().chain(&call).any(|&a| a) {
                return Ok((u, k - 1));
            }
            let pen: Vec<f64> = (0..n)
                .map(|j| {
                    let ks = self.conversion[j];
                    let mut v = 0.0;
                    if put[j] {
                        v += u[j] - state.u_star_put(ks);
                    }
                    if call[j] {
                        v += u[j] - state.u_star_call(ks);
                    }
                    v
                })
                .collect();
            let lu = lhs.matvec(&u[1..n - 1]);
            let mp = mass_apply(sys, &pen);
            let f: Vec<f64> = (0..n - 2).map(|i| lu[i] - rhs[i] + rho_dt * mp[i]).collect();
            let mut jac = lhs.clone();
            for i in 0..n - 2 {
                for j in jac.row_range(i) {
                    if put[j + 1] || call[j + 1] {
                        jac.add(i, j, rho_dt * sys.mass.get(i, j));
                    }
                }
            }
            let du = solve(&lu_factor(&jac)?, &f)?;
            last_update = du.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (ui, d) in u[1..n - 1].iter_mut().zip(&du) {
                *ui -= d;
            }
            let (np, nc) = indicators(&u);
            let unchanged = np == put && nc == call;
            put = np;
            call = nc;
            if last_update <= self.params.tol || unchanged {
                return Ok((u, k));
            }
        }
        Err(Error::NewtonDivergence {
            iterations: self.params.max_newton,
            last_update,
        })
    }
}

fn at_step<T>(m: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Solver { .. } => e,
        other => Error::Solver {
            step: m,
            reason: other.to_string(),
        },
    })
}

fn check_finite(m: usize, slice: &TimeSlice) -> Result<()> {
    if slice.is_finite() {
        Ok(())
    } else {
        Err(Error::Solver {
            step: m,
            reason: "non-finite coefficient".into(),
        })
    }
}

/// Warnings for `Δτ/Δx >= 1` or `Δτ/Δx² >= 1`.
pub fn stability_warnings(dt: f64, dx: f64) -> Vec<String> {
    let mut w = Vec::new();
    if dt / dx >= 1.0 {
        w.push(format!("dtau/dx = {:.4} >= 1", dt / dx));
    }
    if dt / (dx * dx) >= 1.0 {
        w.push(format!("dtau/dx^2 = {:.4} >= 1", dt / (dx * dx)));
    }
    w
}

/// Runs a model from the interpolated payoff over `scheme.n_steps` steps.
pub fn run(
    model: Model<'_>,
    disc: &Discretization,
    scheme: &SchemeConfig,
    storage: Storage,
) -> Result<SolutionSurface> {
    match model {
        Model::Leland(p) => run_leland(&LelandStepper::new(disc, p, scheme)?, scheme, storage),
        Model::Afv(p) => run_afv(&AfvStepper::new(disc, p, scheme)?, storage),
    }
}

pub fn run_leland(
    stepper: &LelandStepper<'_>,
    scheme: &SchemeConfig,
    storage: Storage,
) -> Result<SolutionSurface> {
    let disc = stepper.disc;
    let params = stepper.params;
    let init = disc.interpolate(|x| params.initial(x))?;
    let mut surface = SolutionSurface {
        unknowns: vec![Unknown::VHat],
        scheme: *scheme,
        slices: vec![TimeSlice {
            tau: 0.0,
            fields: vec![init],
        }],
        levels: vec![0],
        newton_iterations: Vec::new(),
        coupon_levels: Vec::new(),
        warnings: if scheme.n_steps > 0 {
            stability_warnings(scheme.dt(), disc.mean_element_width())
        } else {
            Vec::new()
        },
    };
    let mut current = surface.slices[0].fields[0].clone();
    for m in 0..scheme.n_steps {
        let tau = scheme.tau_at(m + 1);
        current = at_step(m + 1, stepper.step(&current, tau, scheme.theta_at(m)))?;
        let slice = TimeSlice {
            tau,
            fields: vec![current.clone()],
        };
        check_finite(m + 1, &slice)?;
        surface.push(storage, m + 1, slice);
    }
    Ok(surface)
}

pub fn run_afv(stepper: &AfvStepper<'_>, storage: Storage) -> Result<SolutionSurface> {
    let scheme = stepper.scheme;
    let mut surface = SolutionSurface {
        unknowns: vec![Unknown::U, Unknown::B, Unknown::C],
        scheme,
        slices: vec![stepper.initial()?],
        levels: vec![0],
        newton_iterations: Vec::with_capacity(scheme.n_steps),
        coupon_levels: Vec::new(),
        warnings: Vec::new(),
    };
    let mut current = surface.slices[0].clone();
    for m in 0..scheme.n_steps {
        let out = at_step(m + 1, stepper.step(m, &current))?;
        check_finite(m + 1, &out.slice)?;
        surface.newton_iterations.push(out.newton_iterations);
        if out.coupon {
            surface.coupon_levels.push(m + 1);
        }
        current = out.slice;
        surface.push(storage, m + 1, current.clone());
    }
    Ok(surface)
}
