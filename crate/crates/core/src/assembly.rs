//! Galerkin mass, stiffness and advection matrices over a NURBS basis,
//! boundary lifting, and group-FEM projection of nonlinear terms.

use std::io::Write;

use crate::basis::{greville_abscissae, LocalNurbs, NurbsBasis};
use crate::error::{Error, Result};
use crate::linsolve::{lu_factor, solve, BandedFactorization, BandedMatrix};
use crate::quadrature::{gauss_legendre, QuadratureRule};

/// Affine map between the parameter range and the physical interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalMap {
    pub x_min: f64,
    pub x_max: f64,
    pub xi_min: f64,
    pub xi_max: f64,
}

impl PhysicalMap {
    pub fn new(x_min: f64, x_max: f64, basis: &NurbsBasis) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "physical interval ({x_min}, {x_max}) is empty"
            )));
        }
        let (xi_min, xi_max) = basis.knots().domain();
        Ok(Self {
            x_min,
            x_max,
            xi_min,
            xi_max,
        })
    }

    /// `dx/dξ = |Ω| / |Ω_ξ|`.
    pub fn jacobian(&self) -> f64 {
        (self.x_max - self.x_min) / (self.xi_max - self.xi_min)
    }

    pub fn to_physical(&self, xi: f64) -> f64 {
        self.x_min + self.jacobian() * (xi - self.xi_min)
    }

    /// Inverse map, clamped into the parameter range.
    pub fn to_parameter(&self, x: f64) -> f64 {
        let xi = self.xi_min + (x - self.x_min) / self.jacobian();
        xi.clamp(self.xi_min, self.xi_max)
    }
}

/// Interior-length contributions of the two boundary coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryVector {
    pub mass: Vec<f64>,
    pub stiffness: Vec<f64>,
    pub advection: Vec<f64>,
}

/// Assembled Galerkin operators.
///
/// The `*_full` matrices cover all `n` basis functions; the interior blocks
/// drop the first and last index and the boundary columns hold what was
/// dropped from the interior rows.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    n_basis: usize,
    degree: usize,
    pub mass_full: BandedMatrix,
    pub stiffness_full: BandedMatrix,
    pub advection_full: BandedMatrix,
    pub mass: BandedMatrix,
    pub stiffness: BandedMatrix,
    pub advection: BandedMatrix,
    pub mass_bc: [Vec<f64>; 2],
    pub stiffness_bc: [Vec<f64>; 2],
    pub advection_bc: [Vec<f64>; 2],
}

impl GalerkinSystem {
    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn n_interior(&self) -> usize {
        self.n_basis - 2
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Writes `(row, col, value)` triplets of the full matrices as CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "matrix,row,col,value")?;
        for (name, m) in [
            ("M", &self.mass_full),
            ("K", &self.stiffness_full),
            ("N", &self.advection_full),
        ] {
            for i in 0..m.dim() {
                for j in m.row_range(i) {
                    writeln!(out, "{name},{i},{j},{:e}", m.get(i, j))?;
                }
            }
        }
        Ok(())
    }
}

/// Assembles M, K and N span by span with the given Gauss rule.
///
/// `M_ij = (|Ω|/|Ω_ξ|) (R_j, R_i)_ξ`, `K_ij = (|Ω_ξ|/|Ω|) (R_j', R_i')_ξ`,
/// `N_ij = (R_j, R_i')_ξ`.
pub fn assemble(basis: &NurbsBasis, map: &PhysicalMap, rule: &QuadratureRule) -> GalerkinSystem {
    let n = basis.n_basis();
    let p = basis.degree();
    let mut mass = BandedMatrix::zeros(n, p, p);
    let mut stiff = BandedMatrix::zeros(n, p, p);
    let mut adv = BandedMatrix::zeros(n, p, p);
    let jac = map.jacobian();
    for (a, b) in basis.knots().spans() {
        for (xi, w) in rule.mapped(a, b) {
            let local = basis.eval_local(xi, 1);
            let (r, dr) = (&local.ders[0], &local.ders[1]);
            for li in 0..=p {
                let i = local.first + li;
                for lj in 0..=p {
                    let j = local.first + lj;
                    mass.add(i, j, w * r[lj] * r[li] * jac);
                    stiff.add(i, j, w * dr[lj] * dr[li] / jac);
                    adv.add(i, j, w * r[lj] * dr[li]);
                }
            }
        }
    }
    let interior = |m: &BandedMatrix| -> BandedMatrix {
        let ni = n - 2;
        let mut out = BandedMatrix::zeros(ni.max(1), p, p);
        for i in 0..ni {
            for j in out.row_range(i) {
                out.set(i, j, m.get(i + 1, j + 1));
            }
        }
        out
    };
    let cols = |m: &BandedMatrix| -> [Vec<f64>; 2] {
        let ni = n - 2;
        [
            (0..ni).map(|i| m.get(i + 1, 0)).collect(),
            (0..ni).map(|i| m.get(i + 1, n - 1)).collect(),
        ]
    };
    GalerkinSystem {
        n_basis: n,
        degree: p,
        mass: interior(&mass),
        stiffness: interior(&stiff),
        advection: interior(&adv),
        mass_bc: cols(&mass),
        stiffness_bc: cols(&stiff),
        advection_bc: cols(&adv),
        mass_full: mass,
        stiffness_full: stiff,
        advection_full: adv,
    }
}

fn combine_cols(cols: &[Vec<f64>; 2], w_first: f64, w_last: f64) -> Vec<f64> {
    cols[0]
        .iter()
        .zip(&cols[1])
        .map(|(a, b)| a * w_first + b * w_last)
        .collect()
}

/// Boundary-column products for boundary coefficients `(w_1, w_n)`.
pub fn lift_boundary(system: &GalerkinSystem, w_first: f64, w_last: f64) -> BoundaryVector {
    BoundaryVector {
        mass: combine_cols(&system.mass_bc, w_first, w_last),
        stiffness: combine_cols(&system.stiffness_bc, w_first, w_last),
        advection: combine_cols(&system.advection_bc, w_first, w_last),
    }
}

/// Collocation at Greville abscissae: maps point values of a function to
/// NURBS coefficients reproducing those values at the same points.
#[derive(Debug, Clone)]
pub struct GrevilleProjector {
    points: Vec<f64>,
    factor: BandedFactorization,
}

impl GrevilleProjector {
    pub fn new(basis: &NurbsBasis) -> Result<Self> {
        let points = greville_abscissae(basis.knots());
        let n = basis.n_basis();
        let p = basis.degree();
        let mut colloc = BandedMatrix::zeros(n, p, p);
        for (i, &g) in points.iter().enumerate() {
            let local = basis.eval_local(g, 0);
            for (lj, v) in local.ders[0].iter().enumerate() {
                let j = local.first + lj;
                if colloc.in_band(i, j) {
                    colloc.add(i, j, *v);
                } else {
                    assert!(v.abs() < 1e-14, "collocation entry outside band");
                }
            }
        }
        let factor = lu_factor(&colloc)?;
        Ok(Self { points, factor })
    }

    /// Greville abscissae in parameter space.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn project(&self, values: &[f64]) -> Result<Vec<f64>> {
        solve(&self.factor, values)
    }
}

/// Coefficients `ν` of the group-FEM expansion of values sampled at the
/// Greville abscissae.
pub fn group_project(values_at_greville: &[f64], basis: &NurbsBasis) -> Result<Vec<f64>> {
    if values_at_greville.len() != basis.n_basis() {
        return Err(Error::Dimension {
            expected: basis.n_basis(),
            got: values_at_greville.len(),
        });
    }
    GrevilleProjector::new(basis)?.project(values_at_greville)
}

/// Basis, physical map, assembled operators and Greville collocation data
/// for one spatial discretization.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub basis: NurbsBasis,
    pub map: PhysicalMap,
    pub system: GalerkinSystem,
    projector: GrevilleProjector,
    greville_x: Vec<f64>,
    greville_local: Vec<LocalNurbs>,
}

impl Discretization {
    pub fn new(basis: NurbsBasis, x_min: f64, x_max: f64, quad_order: usize) -> Result<Self> {
        let map = PhysicalMap::new(x_min, x_max, &basis)?;
        let rule = gauss_legendre(quad_order)?;
        let system = assemble(&basis, &map, &rule);
        let projector = GrevilleProjector::new(&basis)?;
        let greville_x = projector.points().iter().map(|&g| map.to_physical(g)).collect();
        let greville_local = projector
            .points()
            .iter()
            .map(|&g| basis.eval_local(g, 0))
            .collect();
        Ok(Self {
            basis,
            map,
            system,
            projector,
            greville_x,
            greville_local,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.basis.n_basis()
    }

    /// Physical images of the Greville abscissae.
    pub fn greville_x(&self) -> &[f64] {
        &self.greville_x
    }

    /// Element width for a uniform layout, `|Ω| / n_E`.
    pub fn mean_element_width(&self) -> f64 {
        (self.map.x_max - self.map.x_min) / self.basis.knots().n_elements() as f64
    }

    /// Coefficients whose expansion interpolates `f` at the Greville points.
    pub fn interpolate<F: Fn(f64) -> f64>(&self, f: F) -> Result<Vec<f64>> {
        let values: Vec<f64> = self.greville_x.iter().map(|&x| f(x)).collect();
        self.projector.project(&values)
    }

    /// Group-FEM coefficients from values at the Greville points.
    pub fn project(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.n_basis() {
            return Err(Error::Dimension {
                expected: self.n_basis(),
                got: values.len(),
            });
        }
        self.projector.project(values)
    }

    /// Expansion values at the Greville points.
    pub fn values_at_greville(&self, coeffs: &[f64]) -> Vec<f64> {
        self.greville_local
            .iter()
            .map(|l| {
                l.ders[0]
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * coeffs[l.first + j])
                    .sum()
            })
            .collect()
    }

    /// Parameter of `x`, moved onto a knot when the map's rounding left it
    /// within a few ulps of one, so one-sided limits pick the intended span.
    fn snapped_parameter(&self, x: f64) -> f64 {
        let xi = self.map.to_parameter(x);
        let u = self.basis.knots().values();
        let (lo, hi) = self.basis.knots().domain();
        let tol = 16.0 * f64::EPSILON * (hi - lo).max(xi.abs());
        let k = u.partition_point(|&v| v < xi);
        [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter_map(|i| u.get(i).copied())
            .find(|&v| (v - xi).abs() <= tol)
            .unwrap_or(xi)
    }

    /// Expansion value (or x-derivative of order 1, 2) at a physical point.
    pub fn evaluate(&self, coeffs: &[f64], x: f64, order: usize) -> f64 {
        let xi = self.snapped_parameter(x);
        self.basis.eval_expansion(coeffs, xi, order) / self.map.jacobian().powi(order as i32)
    }

    /// Left limit of [`evaluate`](Self::evaluate) at a breakpoint.
    pub fn evaluate_left(&self, coeffs: &[f64], x: f64, order: usize) -> f64 {
        let xi = self.snapped_parameter(x);
        self.basis.eval_expansion_left(coeffs, xi, order) / self.map.jacobian().powi(order as i32)
    }

    /// Physical images of the distinct breakpoints.
    pub fn breakpoints_x(&self) -> Vec<f64> {
        self.basis
            .knots()
            .breakpoints()
            .into_iter()
            .map(|b| self.map.to_physical(b))
            .collect()
    }
}
