use approx::assert_abs_diff_eq;
use isoprice::assembly::Discretization;
use isoprice::basis::{greville_abscissae, KnotVector, NurbsBasis};
use isoprice::models::{AfvParams, ConstraintWindow, LelandParams, Model, UnifiedCoefficients};
use isoprice::quadrature::gauss_legendre;
use isoprice::stepper::*;

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

/// Full M, K and N (`N_ij = ∫ R_j R_i'`) by direct quadrature in x.
fn dense_matrices(kv: &KnotVector, x0: f64, x1: f64) -> [Vec<Vec<f64>>; 3] {
    let basis = NurbsBasis::unweighted(kv.clone());
    let n = kv.n_basis();
    let rule = gauss_legendre(8).unwrap();
    let (mut m, mut k, mut nn) = (vec![vec![0.0; n]; n], vec![vec![0.0; n]; n], vec![vec![0.0; n]; n]);
    let jac = x1 - x0;
    for (a, b) in kv.spans() {
        for (xi, w) in rule.mapped(a, b) {
            let r = basis.eval_all(xi, 0).unwrap();
            let d: Vec<f64> = basis.eval_all(xi, 1).unwrap().iter().map(|v| v / jac).collect();
            let wx = w * jac;
            for i in 0..n {
                for j in 0..n {
                    m[i][j] += wx * r[i] * r[j];
                    k[i][j] += wx * d[i] * d[j];
                    nn[i][j] += wx * r[j] * d[i];
                }
            }
        }
    }
    [m, k, nn]
}

#[test]
fn leland_step_matches_dense_oracle() {
    let p = LelandParams::new(0.05, 0.2, 100.0, 1.0, 0.8).unwrap();
    let kv = KnotVector::uniform(3, 3).unwrap();
    let (x0, x1) = (100f64.ln() - 1.0, 100f64.ln() + 1.0);
    let disc = Discretization::new(NurbsBasis::unweighted(kv.clone()), x0, x1, 5).unwrap();
    assert_eq!(disc.n_basis(), 6);
    let scheme = SchemeConfig::for_model(Model::Leland(&p), 0.5, 0, 4).unwrap();
    let stepper = LelandStepper::new(&disc, &p, &scheme).unwrap();
    let v: Vec<f64> = vec![0.0, 3.0, 1.0, 40.0, 90.0, p.right_boundary(x1, 0.0)];
    let theta = 0.5;
    let tau1 = scheme.tau_at(1);
    let got = stepper.step(&v, tau1, theta).unwrap();

    let [m, k, nn] = dense_matrices(&kv, x0, x1);
    let n = 6;
    let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| k[i][j] - nn[i][j]).collect()).collect();
    let dt = scheme.dt();
    let interior = 1..n - 1;
    // ṽ from M ṽ = -A v̂ on interior rows, zero boundary values.
    let av = matvec(&a, &v);
    let m_ii: Vec<Vec<f64>> = interior.clone().map(|i| m[i][1..n - 1].to_vec()).collect();
    let aux_i = dense_solve(m_ii, interior.clone().map(|i| -av[i]).collect());
    let mut aux = vec![0.0];
    aux.extend(&aux_i);
    aux.push(0.0);
    // Le |ṽ| at Greville points, interpolated back to coefficients.
    let basis = NurbsBasis::unweighted(kv.clone());
    let g = greville_abscissae(&kv);
    let colloc: Vec<Vec<f64>> = g.iter().map(|&xi| basis.eval_all(xi, 0).unwrap()).collect();
    let vals: Vec<f64> = matvec(&colloc, &aux).iter().map(|v| p.leland * v.abs()).collect();
    let nu = dense_solve(colloc, vals);
    // θ-step with explicit source of full weight.
    let bnext = (0.0, p.right_boundary(x1, tau1));
    let mv = matvec(&m, &v);
    let mnu = matvec(&m, &nu);
    let lhs: Vec<Vec<f64>> = interior
        .clone()
        .map(|i| (1..n - 1).map(|j| m[i][j] + theta * dt * a[i][j]).collect())
        .collect();
    let rhs: Vec<f64> = interior
        .clone()
        .map(|i| {
            mv[i] - (1.0 - theta) * dt * av[i] + dt * mnu[i]
                - (m[i][0] + theta * dt * a[i][0]) * bnext.0
                - (m[i][n - 1] + theta * dt * a[i][n - 1]) * bnext.1
        })
        .collect();
    let want = dense_solve(lhs, rhs);
    assert_eq!(got[0], bnext.0);
    assert_abs_diff_eq!(got[n - 1], bnext.1, epsilon = 1e-12);
    for (g, w) in got[1..n - 1].iter().zip(&want) {
        assert_abs_diff_eq!(*g, *w, epsilon = 1e-9);
    }
}

fn small_disc() -> Discretization {
    Discretization::new(NurbsBasis::unweighted(KnotVector::uniform(10, 3).unwrap()), -1.0, 1.0, 5).unwrap()
}

#[test]
fn zero_data_stays_zero() {
    let disc = small_disc();
    let coeffs = UnifiedCoefficients {
        diffusion: 0.3,
        advection: -0.2,
        reaction: 0.1,
    };
    let op = ThetaOperator::new(&disc.system, coeffs, 0.01);
    let zero = vec![0.0; disc.n_basis()];
    let out = step_linear(&op, &zero, (0.0, 0.0), 0.5).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn pure_reaction_decays_by_scalar_factor() {
    let disc = small_disc();
    let lambda = 3.0;
    let dt = 0.02;
    let coeffs = UnifiedCoefficients {
        diffusion: 0.0,
        advection: 0.0,
        reaction: lambda,
    };
    for theta in [0.0, 0.5, 1.0] {
        let factor = (1.0 - (1.0 - theta) * dt * lambda) / (1.0 + theta * dt * lambda);
        let op = ThetaOperator::new(&disc.system, coeffs, dt);
        let mut w = vec![2.5; disc.n_basis()];
        for step in 1..=5 {
            let b = 2.5 * factor.powi(step);
            w = step_linear(&op, &w, (b, b), theta).unwrap();
            for v in &w {
                assert_abs_diff_eq!(*v, b, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn zero_steps_keep_payoff() {
    let p = LelandParams::new(0.05, 0.2, 100.0, 1.0, 0.5).unwrap();
    let (a, b) = p.default_domain();
    let disc = Discretization::new(NurbsBasis::unweighted(KnotVector::uniform(16, 3).unwrap()), a, b, 5).unwrap();
    let scheme = SchemeConfig::for_model(Model::Leland(&p), 0.5, 2, 0).unwrap();
    let s = run(Model::Leland(&p), &disc, &scheme, Storage::Full).unwrap();
    assert_eq!(s.slices.len(), 1);
    assert_eq!(s.slices[0].fields[0], disc.interpolate(|x| p.initial(x)).unwrap());
}

#[test]
fn rannacher_startup_is_fully_implicit() {
    let s = SchemeConfig::new(0.5, 2, 10, 1.0).unwrap();
    assert_eq!((s.theta_at(0), s.theta_at(1), s.theta_at(2)), (1.0, 1.0, 0.5));
    assert_eq!(s.tau_at(10), 1.0);
    assert!(SchemeConfig::new(1.5, 0, 1, 1.0).is_err());
}

#[test]
fn afv_boundary_ode_examples() {
    let mut p = AfvParams::reference();
    p.hazard = 0.0;
    let (u, b, c) = afv_boundary_step(&p, 0.1, 1.0, (100.0, 80.0, 20.0));
    assert_abs_diff_eq!(b, 80.0 / (1.0 + 0.1 * 0.05), epsilon = 1e-12);
    assert_abs_diff_eq!(u, 100.0 / (1.0 + 0.1 * 0.05), epsilon = 1e-12);
    assert_abs_diff_eq!(c, 20.0 / (1.0 + 0.1 * 0.05), epsilon = 1e-12);

    // Zero recovery: B and C decay with the same factor r + p.
    let p = AfvParams::reference();
    let (_, b, c) = afv_boundary_step(&p, 0.1, 0.5, (1.0, 1.0, 1.0));
    assert_abs_diff_eq!(b, c, epsilon = 1e-15);
}

fn unconstrained() -> AfvParams {
    let mut p = AfvParams::reference();
    p.call = None;
    p.put = None;
    p.early_conversion = false;
    p
}

#[test]
fn newton_is_idle_without_active_constraints() {
    let p = unconstrained();
    let disc = Discretization::new(NurbsBasis::unweighted(KnotVector::uniform(32, 3).unwrap()), -6.0, 2.0, 5).unwrap();
    let scheme = SchemeConfig::for_model(Model::Afv(&p), 0.5, 2, 20).unwrap();
    let surface = run(Model::Afv(&p), &disc, &scheme, Storage::Endpoints).unwrap();
    assert!(surface.newton_iterations.iter().all(|&k| k == 0), "{:?}", surface.newton_iterations);
}

/// Distance of the interior of `U` below a put level of 1000 after one step.
fn put_gap(rho: f64) -> f64 {
    let mut p = unconstrained();
    p.coupons.clear();
    p.penalty = rho;
    p.put = Some(ConstraintWindow {
        start: 0.0,
        end: 5.0,
        clean: 1000.0,
    });
    let disc = Discretization::new(NurbsBasis::unweighted(KnotVector::uniform(8, 3).unwrap()), -1.0, 1.0, 5).unwrap();
    let scheme = SchemeConfig::for_model(Model::Afv(&p), 1.0, 0, 50).unwrap();
    let st = AfvStepper::new(&disc, &p, &scheme).unwrap();
    let out = st.step(0, &st.initial().unwrap()).unwrap();
    let u = &out.slice.fields[0];
    u[1..u.len() - 1].iter().fold(0.0f64, |m, v| m.max((1000.0 - v).abs()))
}

#[test]
fn penalty_converges_to_the_put_level() {
    let g1 = put_gap(1e6);
    let g2 = put_gap(1e7);
    assert!(g1 < 1e-2 * 1000.0, "{g1}");
    // The excess shrinks like 1/ρ.
    assert_abs_diff_eq!(g1 / g2, 10.0, epsilon = 0.5);
}

#[test]
fn coupon_steps_add_the_coupon_to_u_and_b() {
    let p = unconstrained();
    let disc = Discretization::new(NurbsBasis::unweighted(KnotVector::uniform(16, 3).unwrap()), -6.0, 2.0, 5).unwrap();
    let scheme = SchemeConfig::for_model(Model::Afv(&p), 0.5, 2, 10).unwrap();
    let with = AfvStepper::new(&disc, &p, &scheme).unwrap();
    let mut q = p.clone();
    q.coupons.retain(|c| (c.time - 4.5).abs() > 1e-9);
    let without = AfvStepper::new(&disc, &q, &scheme).unwrap();
    let start = with.initial().unwrap();
    let a = with.step(0, &start).unwrap();
    let b = without.step(0, &start).unwrap();
    assert!(a.coupon && !b.coupon);
    for (k, jump) in [(0, 4.0), (1, 4.0), (2, 0.0)] {
        for (x, y) in a.slice.fields[k].iter().zip(&b.slice.fields[k]) {
            assert_abs_diff_eq!(x - y, jump, epsilon = 1e-10);
        }
    }
}

#[test]
fn stride_storage_keeps_multiples_and_the_last_two_levels() {
    let p = LelandParams::new(0.05, 0.2, 100.0, 1.0, 0.0).unwrap();
    let disc = small_disc();
    let scheme = SchemeConfig::for_model(Model::Leland(&p), 0.5, 2, 23).unwrap();
    let s = run(Model::Leland(&p), &disc, &scheme, Storage::Stride(5)).unwrap();
    assert_eq!(s.levels, vec![0, 5, 10, 15, 20, 22, 23]);
    let e = run(Model::Leland(&p), &disc, &scheme, Storage::Endpoints).unwrap();
    assert_eq!(e.levels, vec![0, 22, 23]);
    assert_eq!(e.last(), s.last());
}

#[test]
fn stability_warnings_fire_on_coarse_steps() {
    assert!(stability_warnings(0.001, 0.1).is_empty());
    assert_eq!(stability_warnings(0.05, 0.1).len(), 1);
    assert_eq!(stability_warnings(0.2, 0.1).len(), 2);
}
