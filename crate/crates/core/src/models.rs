//! Model definitions: transformed PDE coefficients, payoffs, boundary data,
//! accrued interest, default source terms, constraints and penalty terms.
//!
//! The Leland model is solved in `τ = σ²(T-t)/2`, `x = ln S + κτ`,
//! `v̂ = e^{κτ} V` with `κ = 2r/σ²`; `Le = 0` is the linear Black-Scholes
//! equation in the same variables. The AFV convertible-bond system uses
//! `τ = T - t` and `x = ln(S / S_int)`.

use crate::error::{Error, Result};

/// Unknown of the unified PDE `w_τ = Υ1 w_xx + Υ2 w_x - Υ3 w + 𝒩_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unknown {
    /// Transformed option value of the Leland / linear model.
    VHat,
    /// Convertible bond value.
    U,
    /// Bond component.
    B,
    /// Equity component.
    C,
}

/// `(Υ1, Υ2, Υ3)` of the unified PDE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnifiedCoefficients {
    pub diffusion: f64,
    pub advection: f64,
    pub reaction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LelandParams {
    pub rate: f64,
    pub sigma: f64,
    pub strike: f64,
    pub maturity: f64,
    pub leland: f64,
}

impl LelandParams {
    pub fn new(rate: f64, sigma: f64, strike: f64, maturity: f64, leland: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        if !(maturity > 0.0) {
            return Err(Error::InvalidParameter("maturity must be positive".into()));
        }
        if !(strike > 0.0) {
            return Err(Error::InvalidParameter("strike must be positive".into()));
        }
        if !(leland >= 0.0) {
            return Err(Error::InvalidParameter("Leland number must be >= 0".into()));
        }
        Ok(Self {
            rate,
            sigma,
            strike,
            maturity,
            leland,
        })
    }

    /// Leland number from a round-trip cost fraction and a rebalancing interval.
    pub fn leland_number(cost: f64, sigma: f64, rebalance_dt: f64) -> f64 {
        (2.0 / std::f64::consts::PI).sqrt() * cost / (sigma * rebalance_dt.sqrt())
    }

    pub fn kappa(&self) -> f64 {
        2.0 * self.rate / (self.sigma * self.sigma)
    }

    /// Backward-time horizon `σ² T / 2`.
    pub fn horizon(&self) -> f64 {
        0.5 * self.sigma * self.sigma * self.maturity
    }

    pub fn tau(&self, t: f64) -> f64 {
        0.5 * self.sigma * self.sigma * (self.maturity - t)
    }

    pub fn time(&self, tau: f64) -> f64 {
        self.maturity - 2.0 * tau / (self.sigma * self.sigma)
    }

    /// `(S, t, V) -> (x, τ, v̂)`.
    pub fn forward(&self, s: f64, t: f64, v: f64) -> Result<(f64, f64, f64)> {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("S = {s} must be positive")));
        }
        let tau = self.tau(t);
        let k = self.kappa();
        Ok((s.ln() + k * tau, tau, (k * tau).exp() * v))
    }

    /// `(x, τ, v̂) -> (S, t, V)`.
    pub fn inverse(&self, x: f64, tau: f64, vhat: f64) -> (f64, f64, f64) {
        let k = self.kappa();
        ((x - k * tau).exp(), self.time(tau), (-k * tau).exp() * vhat)
    }

    /// Initial condition `max(e^x - K̂, 0)`.
    pub fn initial(&self, x: f64) -> f64 {
        (x.exp() - self.strike).max(0.0)
    }

    pub fn left_boundary(&self, _x: f64, _tau: f64) -> f64 {
        0.0
    }

    /// Far-field value `e^x - K̂`.
    pub fn right_boundary(&self, x: f64, _tau: f64) -> f64 {
        x.exp() - self.strike
    }

    /// Default physical interval `[ln K̂ - 5, ln K̂ + 3]`.
    pub fn default_domain(&self) -> (f64, f64) {
        let lk = self.strike.ln();
        (lk - 5.0, lk + 3.0)
    }
}

/// Constraint with a clean price, active on `start < t <= end`; a window of
/// zero length is active only at its single instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintWindow {
    pub start: f64,
    pub end: f64,
    pub clean: f64,
}

impl ConstraintWindow {
    pub fn contains(&self, t: f64) -> bool {
        if self.is_instant() {
            (t - self.start).abs() <= 1e-12
        } else {
            t > self.start + 1e-12 && t <= self.end + 1e-12
        }
    }

    /// A window of zero length, realized on a single time level.
    pub fn is_instant(&self) -> bool {
        self.end - self.start <= 1e-12
    }
}

/// Coupon payment `(time, amount)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupon {
    pub time: f64,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AfvParams {
    pub rate: f64,
    pub sigma: f64,
    pub hazard: f64,
    pub eta: f64,
    pub recovery: f64,
    pub conversion: f64,
    pub face: f64,
    pub coupons: Vec<Coupon>,
    pub call: Option<ConstraintWindow>,
    pub put: Option<ConstraintWindow>,
    pub penalty: f64,
    pub tol: f64,
    pub max_newton: usize,
    pub spot: f64,
    pub maturity: f64,
    /// Holder may convert at any time (`U >= kS`); off gives a convertible
    /// that converts only at maturity.
    pub early_conversion: bool,
}

impl AfvParams {
    /// Five-year semiannual convertible with call from year 2 and a put at year 3.
    pub fn reference() -> Self {
        Self {
            rate: 0.05,
            sigma: 0.2,
            hazard: 0.02,
            eta: 0.0,
            recovery: 0.0,
            conversion: 1.0,
            face: 100.0,
            coupons: (1..=10)
                .map(|i| Coupon {
                    time: 0.5 * i as f64,
                    amount: 4.0,
                })
                .collect(),
            call: Some(ConstraintWindow {
                start: 2.0,
                end: 5.0,
                clean: 110.0,
            }),
            put: Some(ConstraintWindow {
                start: 3.0,
                end: 3.0,
                clean: 105.0,
            }),
            penalty: 1e6,
            tol: 1e-6,
            max_newton: 50,
            spot: 100.0,
            maturity: 5.0,
            early_conversion: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.maturity > 0.0) {
            return bad("maturity must be positive");
        }
        if !(0.0..=1.0).contains(&self.eta) || !(0.0..=1.0).contains(&self.recovery) {
            return bad("eta and recovery must lie in [0, 1]");
        }
        if !(self.penalty > 0.0) || !(self.tol > 0.0) {
            return bad("penalty and tolerance must be positive");
        }
        if !(self.spot > 0.0) {
            return bad("spot must be positive");
        }
        if self.coupons.windows(2).any(|w| w[1].time <= w[0].time) {
            return bad("coupon times must be strictly increasing");
        }
        if self
            .coupons
            .iter()
            .any(|c| c.time <= 0.0 || c.time > self.maturity + 1e-12)
        {
            return bad("coupon times must lie in (0, T]");
        }
        for w in [self.call, self.put].into_iter().flatten() {
            if w.start < -1e-12 || w.end > self.maturity + 1e-12 || w.end < w.start {
                return bad("constraint windows must lie in [0, T]");
            }
        }
        Ok(())
    }

    /// Coupon paid exactly at maturity (part of the redemption amount).
    pub fn final_coupon(&self) -> f64 {
        self.coupons
            .iter()
            .find(|c| (c.time - self.maturity).abs() <= 1e-12)
            .map_or(0.0, |c| c.amount)
    }

    pub fn x_of(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("S = {s} must be positive")));
        }
        Ok((s / self.spot).ln())
    }

    pub fn s_of(&self, x: f64) -> f64 {
        self.spot * x.exp()
    }

    /// Conversion value `k S_int e^x`.
    pub fn conversion_value(&self, x: f64) -> f64 {
        self.conversion * self.s_of(x)
    }

    pub fn tau(&self, t: f64) -> f64 {
        self.maturity - t
    }

    pub fn time(&self, tau: f64) -> f64 {
        self.maturity - tau
    }

    pub fn default_domain(&self) -> (f64, f64) {
        (-6.0, 2.0)
    }
}

/// `(U, B, C)` at maturity.
pub fn afv_terminal(s: f64, params: &AfvParams) -> (f64, f64, f64) {
    let redemption = params.face + params.final_coupon();
    let ks = params.conversion * s;
    let u = if redemption >= ks { redemption } else { ks };
    (u, redemption, (ks - redemption).max(0.0))
}

/// Unified-PDE coefficients for the Leland model (`VHat`) or the AFV system.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    Leland(&'a LelandParams),
    Afv(&'a AfvParams),
}

pub fn unified_coefficients(model: Model<'_>, unknown: Unknown) -> Result<UnifiedCoefficients> {
    match (model, unknown) {
        (Model::Leland(_), Unknown::VHat) => Ok(UnifiedCoefficients {
            diffusion: 1.0,
            advection: -1.0,
            reaction: 0.0,
        }),
        (Model::Afv(p), Unknown::U | Unknown::B | Unknown::C) => {
            let half_var = 0.5 * p.sigma * p.sigma;
            let base = p.rate + p.hazard;
            Ok(UnifiedCoefficients {
                diffusion: half_var,
                advection: p.rate + p.hazard * p.eta - half_var,
                reaction: if unknown == Unknown::B {
                    base - p.recovery * p.hazard
                } else {
                    base
                },
            })
        }
        (m, u) => Err(Error::InvalidParameter(format!(
            "unknown {u:?} is not part of model {}",
            match m {
                Model::Leland(_) => "leland",
                Model::Afv(_) => "afv",
            }
        ))),
    }
}

/// Accrued interest at calendar time `t`.
///
/// Brackets are `[t_{i-1}, t_i]` with `t_0 = 0`; times outside the schedule
/// are clamped to the first or last bracket.
pub fn accrued_interest(t: f64, coupons: &[Coupon]) -> f64 {
    if coupons.is_empty() {
        return 0.0;
    }
    let idx = coupons
        .iter()
        .position(|c| t <= c.time + 1e-12)
        .unwrap_or(coupons.len() - 1);
    let prev = if idx == 0 { 0.0 } else { coupons[idx - 1].time };
    let next = coupons[idx];
    let frac = ((t - prev) / (next.time - prev)).clamp(0.0, 1.0);
    next.amount * frac
}

/// `(δ, γ)`: recovery-or-conversion value on default and the equity part of it.
pub fn default_source_terms(x: f64, bond: f64, params: &AfvParams) -> (f64, f64) {
    let conv = params.conversion_value(x) * (1.0 - params.eta);
    let rec = params.recovery * bond;
    (conv.max(rec), (conv - rec).max(0.0))
}

/// Dirty call/put prices at one time level; inactive windows are ±∞.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintState {
    pub tau: f64,
    pub call_dirty: f64,
    pub put_dirty: f64,
    /// Whether `U >= kS` is enforced.
    pub conversion_floor: bool,
}

impl ConstraintState {
    pub fn inactive(tau: f64) -> Self {
        Self {
            tau,
            call_dirty: f64::INFINITY,
            put_dirty: f64::NEG_INFINITY,
            conversion_floor: true,
        }
    }

    /// Dirty prices at calendar time `t`. `put_now` says whether the put
    /// binds on this level (instant windows bind on exactly one level).
    pub fn at(params: &AfvParams, t: f64, put_now: bool, accrued: f64) -> Self {
        let call_dirty = match params.call {
            Some(w) if w.contains(t) => w.clean + accrued,
            _ => f64::INFINITY,
        };
        let put_dirty = match params.put {
            Some(w) if put_now => w.clean + accrued,
            _ => f64::NEG_INFINITY,
        };
        Self {
            tau: params.tau(t),
            call_dirty,
            put_dirty,
            conversion_floor: params.early_conversion,
        }
    }

    pub fn call_active(&self) -> bool {
        self.call_dirty.is_finite()
    }

    pub fn put_active(&self) -> bool {
        self.put_dirty.is_finite()
    }

    /// `U⋆_put = max(B_put, kS)`, or `B_put` without the conversion floor.
    pub fn u_star_put(&self, conversion_value: f64) -> f64 {
        if self.conversion_floor {
            self.put_dirty.max(conversion_value)
        } else {
            self.put_dirty
        }
    }

    /// `U⋆_call = max(B_call, kS)`.
    pub fn u_star_call(&self, conversion_value: f64) -> f64 {
        self.call_dirty.max(conversion_value)
    }
}

/// `B <- min(B, B_call)` and `B <- max(B, B_put - C)` where active.
pub fn apply_b_constraints(bond: &mut [f64], equity: &[f64], state: &ConstraintState) {
    for (b, c) in bond.iter_mut().zip(equity) {
        if state.call_active() {
            *b = b.min(state.call_dirty);
        }
        if state.put_active() {
            *b = b.max(state.put_dirty - c);
        }
    }
}

/// Clips `B` so that `kS <= B + C <= max(B_call, kS)` (upper bound only
/// while the call is active, lower bound only with the conversion floor).
pub fn apply_joint_constraints(
    bond: &mut [f64],
    equity: &[f64],
    state: &ConstraintState,
    conversion_values: &[f64],
) {
    for ((b, c), ks) in bond.iter_mut().zip(equity).zip(conversion_values) {
        if state.call_active() {
            let cap = state.call_dirty.max(*ks);
            if *b + c > cap {
                *b = cap - c;
            }
        }
        if state.conversion_floor && *b + c < *ks {
            *b = ks - c;
        }
    }
}

/// Penalty indicators and residual contribution at one set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTerms {
    /// `ρ (α_call (U - U⋆_call) + α_put (U⋆_put - U))` per node.
    pub contribution: Vec<f64>,
    pub put: Vec<bool>,
    pub call: Vec<bool>,
}

/// Indicators `α_put = [U⋆_put - U >= 0]`, `α_call = [U - U⋆_call >= 0]`.
pub fn penalty_terms(
    u: &[f64],
    state: &ConstraintState,
    conversion_values: &[f64],
    rho: f64,
) -> PenaltyTerms {
    let mut out = PenaltyTerms {
        contribution: vec![0.0; u.len()],
        put: vec![false; u.len()],
        call: vec![false; u.len()],
    };
    for (i, (&ui, &ks)) in u.iter().zip(conversion_values).enumerate() {
        let put_star = state.u_star_put(ks);
        let call_star = state.u_star_call(ks);
        if put_star - ui >= 0.0 {
            out.put[i] = true;
            out.contribution[i] += rho * (put_star - ui);
        }
        if state.call_active() && ui - call_star >= 0.0 {
            out.call[i] = true;
            out.contribution[i] += rho * (ui - call_star);
        }
    }
    out
}
