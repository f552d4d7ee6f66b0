//! Open knot vectors, B-spline and NURBS basis evaluation.
//!
//! Indices are zero-based throughout: basis function `i` is supported on
//! `[values[i], values[i + degree + 1])`. The last non-empty span is closed on
//! the right so that the final basis function interpolates at the upper end.

use std::path::Path;

use crate::error::{Error, Result};

const KNOT_EPS: f64 = 1e-14;

/// Nondecreasing open knot vector in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    values: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    /// Validates and wraps a raw knot sequence.
    pub fn new(values: Vec<f64>, degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidKnots("degree must be at least 1".into()));
        }
        let m = values.len();
        if m < 2 * (degree + 1) {
            return Err(Error::InvalidKnots(format!(
                "need at least {} knots for degree {degree}, got {m}",
                2 * (degree + 1)
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidKnots("non-finite knot".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be nondecreasing".into()));
        }
        let (lo, hi) = (values[0], values[m - 1]);
        if hi <= lo {
            return Err(Error::InvalidKnots("empty parameter range".into()));
        }
        let mult_lo = values.iter().take_while(|&&v| v == lo).count();
        let mult_hi = values.iter().rev().take_while(|&&v| v == hi).count();
        if mult_lo != degree + 1 || mult_hi != degree + 1 {
            return Err(Error::InvalidKnots(format!(
                "end knots must be repeated exactly {} times (got {mult_lo} and {mult_hi})",
                degree + 1
            )));
        }
        for (value, mult) in multiplicities(&values[mult_lo..m - mult_hi]) {
            if mult > degree {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {value} has multiplicity {mult} > degree {degree}"
                )));
            }
        }
        Ok(Self { values, degree })
    }

    /// Open knot vector on [0, 1] with `n_elements` equal spans.
    pub fn uniform(n_elements: usize, degree: usize) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::InvalidKnots("n_elements must be positive".into()));
        }
        let breaks: Vec<f64> = (0..=n_elements)
            .map(|i| i as f64 / n_elements as f64)
            .collect();
        Self::from_breakpoints(&breaks, degree, &[])
    }

    /// Open knot vector with spans clustered geometrically toward `kink` and
    /// the kink repeated `kink_multiplicity` times.
    ///
    /// Span widths on either side of the kink shrink by `cluster_ratio` per
    /// span when moving toward it, so `cluster_ratio < 1` concentrates knots
    /// at the kink and `cluster_ratio == 1` gives uniform spacing. A
    /// multiplicity of 0 leaves the breakpoints untouched when the kink does
    /// not fall on one.
    pub fn refined(
        n_elements: usize,
        degree: usize,
        kink: f64,
        cluster_ratio: f64,
        kink_multiplicity: usize,
    ) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::InvalidKnots("n_elements must be positive".into()));
        }
        if !(kink > 0.0 && kink < 1.0) {
            return Err(Error::InvalidKnots(format!("kink {kink} not interior to (0,1)")));
        }
        if !(cluster_ratio > 0.0 && cluster_ratio.is_finite()) {
            return Err(Error::InvalidKnots("cluster_ratio must be positive".into()));
        }
        if kink_multiplicity > degree {
            return Err(Error::InvalidKnots(format!(
                "kink multiplicity {kink_multiplicity} > degree {degree}"
            )));
        }
        let breaks = if cluster_ratio == 1.0 {
            (0..=n_elements)
                .map(|i| i as f64 / n_elements as f64)
                .collect::<Vec<_>>()
        } else {
            clustered_breakpoints(n_elements, kink, cluster_ratio)
        };
        check_spacing(&breaks)?;
        let mut breaks = breaks;
        let on_break = breaks.iter().position(|b| (b - kink).abs() <= KNOT_EPS);
        match on_break {
            Some(idx) => breaks[idx] = kink,
            None if kink_multiplicity > 0 => {
                let pos = breaks.partition_point(|&b| b < kink);
                breaks.insert(pos, kink);
            }
            None => {}
        }
        let extra = if kink_multiplicity > 1 {
            vec![kink; kink_multiplicity - 1]
        } else {
            Vec::new()
        };
        Self::from_breakpoints(&breaks, degree, &extra)
    }

    fn from_breakpoints(breaks: &[f64], degree: usize, extra: &[f64]) -> Result<Self> {
        let mut values = Vec::with_capacity(breaks.len() + 2 * degree + extra.len());
        values.extend(std::iter::repeat_n(breaks[0], degree));
        values.extend_from_slice(breaks);
        values.extend_from_slice(extra);
        values.extend(std::iter::repeat_n(breaks[breaks.len() - 1], degree));
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite knots"));
        Self::new(values, degree)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions `n = m - p - 1`.
    pub fn n_basis(&self) -> usize {
        self.values.len() - self.degree - 1
    }

    /// Parameter range `(ξ_1, ξ_m)`.
    pub fn domain(&self) -> (f64, f64) {
        (self.values[0], self.values[self.values.len() - 1])
    }

    /// Distinct breakpoints (element boundaries).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &v in &self.values {
            if out.last().is_none_or(|&l| v > l) {
                out.push(v);
            }
        }
        out
    }

    /// Non-empty knot spans as `(lo, hi)` pairs.
    pub fn spans(&self) -> Vec<(f64, f64)> {
        self.breakpoints().windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_elements(&self) -> usize {
        self.breakpoints().len() - 1
    }

    fn check_range(&self, xi: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(xi >= lo && xi <= hi) {
            return Err(Error::OutOfRange { xi, lo, hi });
        }
        Ok(())
    }

    /// Index `s` of the span with `ξ_s <= xi < ξ_{s+1}`; the last non-empty
    /// span is right-closed.
    pub fn find_span(&self, xi: f64) -> usize {
        let n = self.n_basis();
        let p = self.degree;
        let u = &self.values;
        if xi >= u[n] {
            return n - 1;
        }
        if xi <= u[p] {
            return p;
        }
        // largest s in [p, n-1] with u[s] <= xi
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if xi < u[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Nonzero basis functions and their derivatives up to `nders` at `xi`,
    /// returned as `ders[k][j]` for basis `span - p + j`.
    pub(crate) fn ders_local(&self, span: usize, xi: f64, nders: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.values;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = xi - u[span + 1 - j];
            right[j] = u[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let nd = nders.min(p);
        let mut ders = vec![vec![0.0; p + 1]; nders + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r as isize <= pk as isize {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().take(nd + 1).skip(1) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Values `N_{i,p}(xi)` for every basis function by the Cox-de Boor
    /// recursion, with `0/0 := 0`.
    pub fn eval_bspline_all(&self, xi: f64) -> Result<Vec<f64>> {
        self.check_range(xi)?;
        let u = &self.values;
        let p = self.degree;
        let m = u.len();
        let last = self.find_span(xi);
        // degree-0 functions: one per knot interval
        let mut level: Vec<f64> = (0..m - 1)
            .map(|i| if i == last { 1.0 } else { 0.0 })
            .collect();
        for d in 1..=p {
            let next: Vec<f64> = (0..m - 1 - d)
                .map(|i| {
                    let left = ratio(xi - u[i], u[i + d] - u[i]) * level[i];
                    let right = ratio(u[i + d + 1] - xi, u[i + d + 1] - u[i + 1]) * level[i + 1];
                    left + right
                })
                .collect();
            level = next;
        }
        Ok(level)
    }

    /// Derivatives of order 1 or 2 of every B-spline basis function.
    pub fn eval_bspline_deriv_all(&self, xi: f64, order: usize) -> Result<Vec<f64>> {
        self.check_range(xi)?;
        if order == 0 {
            return self.eval_bspline_all(xi);
        }
        if order > self.degree {
            return Err(Error::DerivativeOrder {
                order,
                degree: self.degree,
            });
        }
        let span = self.find_span(xi);
        let ders = self.ders_local(span, xi, order);
        let mut out = vec![0.0; self.n_basis()];
        for (j, v) in ders[order].iter().enumerate() {
            out[span - self.degree + j] = *v;
        }
        Ok(out)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn multiplicities(values: &[f64]) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        match out.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

fn clustered_breakpoints(n_elements: usize, kink: f64, q: f64) -> Vec<f64> {
    let n_left = ((n_elements as f64 * kink).round() as usize).clamp(1, n_elements.max(2) - 1);
    let n_right = n_elements.saturating_sub(n_left).max(1);
    // widths grow by 1/q moving away from the kink
    let side = |count: usize, length: f64| -> Vec<f64> {
        let raw: Vec<f64> = (0..count).map(|k| q.powi(-(k as i32))).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w * length / total).collect()
    };
    let left = side(n_left, kink);
    let right = side(n_right, 1.0 - kink);
    let mut breaks = Vec::with_capacity(n_left + n_right + 1);
    breaks.push(0.0);
    let mut acc = 0.0;
    for w in left.iter().rev() {
        acc += w;
        breaks.push(acc);
    }
    let last_left = breaks.len() - 1;
    breaks[last_left] = kink;
    acc = kink;
    for w in &right {
        acc += w;
        breaks.push(acc);
    }
    let last = breaks.len() - 1;
    breaks[last] = 1.0;
    breaks
}

fn check_spacing(breaks: &[f64]) -> Result<()> {
    match breaks.windows(2).map(|w| w[1] - w[0]).reduce(f64::min) {
        Some(min) if min <= KNOT_EPS => Err(Error::InvalidKnots(format!(
            "clustering collapses spans (smallest width {min:e}); use a ratio closer to 1"
        ))),
        _ => Ok(()),
    }
}

/// Greville abscissae `(ξ_{i+1} + … + ξ_{i+p}) / p` for each basis function.
pub fn greville_abscissae(knots: &KnotVector) -> Vec<f64> {
    let p = knots.degree();
    let u = knots.values();
    (0..knots.n_basis())
        .map(|i| u[i + 1..=i + p].iter().sum::<f64>() / p as f64)
        .collect()
}

/// Local NURBS values and derivatives at one parameter point.
#[derive(Debug, Clone)]
pub struct LocalNurbs {
    /// Index of the first nonzero basis function.
    pub first: usize,
    /// `ders[k][j]`: k-th derivative of basis `first + j`.
    pub ders: Vec<Vec<f64>>,
}

/// Rational basis `R_i = ω_i N_i / Σ ω_j N_j` over an open knot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsBasis {
    knots: KnotVector,
    weights: Vec<f64>,
}

impl NurbsBasis {
    pub fn new(knots: KnotVector, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != knots.n_basis() {
            return Err(Error::InvalidWeights(format!(
                "expected {} weights, got {}",
                knots.n_basis(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {w} is not positive")));
        }
        Ok(Self { knots, weights })
    }

    /// All weights equal to one (plain B-splines).
    pub fn unweighted(knots: KnotVector) -> Self {
        let weights = vec![1.0; knots.n_basis()];
        Self { knots, weights }
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degree(&self) -> usize {
        self.knots.degree()
    }

    pub fn n_basis(&self) -> usize {
        self.knots.n_basis()
    }

    /// Nonzero rational basis values and derivatives up to `nders` (≤ 2).
    pub fn eval_local(&self, xi: f64, nders: usize) -> LocalNurbs {
        let p = self.degree();
        let span = self.knots.find_span(xi);
        let first = span - p;
        let b = self.knots.ders_local(span, xi, nders);
        let ders = rational_from_bspline(&b, &self.weights[first..=span], nders);
        LocalNurbs { first, ders }
    }

    /// Values (`order = 0`) or derivatives (1, 2) of every `R_{i,p}` at `xi`.
    pub fn eval_all(&self, xi: f64, order: usize) -> Result<Vec<f64>> {
        self.knots.check_range(xi)?;
        if order > 2 || (order > 0 && order > self.degree()) {
            return Err(Error::DerivativeOrder {
                order,
                degree: self.degree(),
            });
        }
        let local = self.eval_local(xi, order);
        let mut out = vec![0.0; self.n_basis()];
        for (j, v) in local.ders[order].iter().enumerate() {
            out[local.first + j] = *v;
        }
        Ok(out)
    }

    /// Evaluates `Σ c_i R_i^{(order)}(xi)` for a coefficient vector.
    pub fn eval_expansion(&self, coeffs: &[f64], xi: f64, order: usize) -> f64 {
        let local = self.eval_local(xi, order);
        local.ders[order]
            .iter()
            .enumerate()
            .map(|(j, v)| v * coeffs[local.first + j])
            .sum()
    }

    /// Left-sided version of [`eval_expansion`](Self::eval_expansion): at a
    /// breakpoint the span to the left is used.
    pub fn eval_expansion_left(&self, coeffs: &[f64], xi: f64, order: usize) -> f64 {
        let p = self.degree();
        let u = self.knots.values();
        let mut span = self.knots.find_span(xi);
        while span > p && u[span] >= xi {
            span -= 1;
        }
        let b = self.knots.ders_local(span, xi, order);
        let first = span - p;
        let w = &self.weights[first..=span];
        // rebuild the rational derivatives for this span
        let local = rational_from_bspline(&b, w, order);
        local[order]
            .iter()
            .enumerate()
            .map(|(j, v)| v * coeffs[first + j])
            .sum()
    }
}

fn rational_from_bspline(b: &[Vec<f64>], w: &[f64], nders: usize) -> Vec<Vec<f64>> {
    let p1 = w.len();
    let wsum = |k: usize| -> f64 { b[k].iter().zip(w).map(|(n, w)| n * w).sum() };
    let big_w = wsum(0);
    assert!(big_w > 0.0, "NURBS denominator vanished");
    let mut ders = vec![vec![0.0; p1]; nders + 1];
    for j in 0..p1 {
        ders[0][j] = w[j] * b[0][j] / big_w;
    }
    if nders >= 1 {
        let w1 = wsum(1);
        for j in 0..p1 {
            ders[1][j] = w[j] * (b[1][j] * big_w - b[0][j] * w1) / (big_w * big_w);
        }
        if nders >= 2 {
            let w2 = wsum(2);
            for j in 0..p1 {
                ders[2][j] = w[j]
                    * (b[2][j] / big_w - 2.0 * b[1][j] * w1 / (big_w * big_w)
                        - b[0][j] * w2 / (big_w * big_w)
                        + 2.0 * b[0][j] * w1 * w1 / (big_w * big_w * big_w));
            }
        }
    }
    ders
}

/// Reads one positive weight per line; blank lines and `#` comments are skipped.
pub fn load_weights(path: &Path, n_basis: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_weights(&text, n_basis)
}

pub fn parse_weights(text: &str, n_basis: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let w: f64 = line.parse().map_err(|_| {
            Error::InvalidWeights(format!("line {}: cannot parse {line:?}", idx + 1))
        })?;
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidWeights(format!(
                "line {}: weight {w} is not positive",
                idx + 1
            )));
        }
        out.push(w);
    }
    if out.len() != n_basis {
        return Err(Error::InvalidWeights(format!(
            "expected {n_basis} weights, file has {}",
            out.len()
        )));
    }
    Ok(out)
}
