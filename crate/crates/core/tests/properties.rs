use isoprice::basis::{KnotVector, NurbsBasis};
use isoprice::greeks::fmt_sig;
use isoprice::linsolve::{lu_factor, solve, BandedMatrix};
use isoprice::models::*;
use proptest::prelude::*;

fn basis_strategy() -> impl Strategy<Value = NurbsBasis> {
    (1usize..=4, 1usize..=24, 0.05f64..0.95, 0.8f64..1.0, 0usize..=4, any::<u64>()).prop_map(
        |(degree, ne, kink, ratio, mult, seed)| {
            let kv = KnotVector::refined(ne, degree, kink, ratio, mult.min(degree)).unwrap();
            let mut state = seed | 1;
            let weights = (0..kv.n_basis())
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    0.2 + 4.8 * (state % 10_000) as f64 / 10_000.0
                })
                .collect();
            NurbsBasis::new(kv, weights).unwrap()
        },
    )
}

fn state_strategy() -> impl Strategy<Value = ConstraintState> {
    (prop::option::of(90.0f64..140.0), prop::option::of(80.0f64..130.0), any::<bool>()).prop_map(
        |(call, put, floor)| ConstraintState {
            tau: 0.0,
            call_dirty: call.unwrap_or(f64::INFINITY),
            put_dirty: put.unwrap_or(f64::NEG_INFINITY),
            conversion_floor: floor,
        },
    )
}

proptest! {
    #[test]
    fn nurbs_partition_of_unity(basis in basis_strategy(), t in 0.0f64..=1.0) {
        let r = basis.eval_all(t, 0).unwrap();
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.iter().all(|&v| v >= -1e-15));
        if basis.degree() >= 2 {
            let d1: f64 = basis.eval_all(t, 1).unwrap().iter().sum();
            let d2: f64 = basis.eval_all(t, 2).unwrap().iter().sum();
            prop_assert!(d1.abs() < 1e-8 && d2.abs() < 1e-6, "{} {}", d1, d2);
        }
    }

    #[test]
    fn leland_transform_round_trip(
        s in 1e-3f64..1e4, t in 0.0f64..1.0, v in -50.0f64..500.0,
        r in -0.02f64..0.15, sigma in 0.05f64..0.8,
    ) {
        let p = LelandParams::new(r, sigma, 100.0, 1.0, 0.5).unwrap();
        let (x, tau, vh) = p.forward(s, t, v).unwrap();
        let (s2, t2, v2) = p.inverse(x, tau, vh);
        prop_assert!((s2 - s).abs() <= 1e-12 * s);
        prop_assert!((t2 - t).abs() <= 1e-12);
        prop_assert!((v2 - v).abs() <= 1e-12 * (1.0 + v.abs()));
    }

    #[test]
    fn afv_transform_round_trip(s in 1e-3f64..1e4) {
        let p = AfvParams::reference();
        let back = p.s_of(p.x_of(s).unwrap());
        prop_assert!((back - s).abs() <= 1e-12 * s);
    }

    #[test]
    fn constraints_are_idempotent(
        state in state_strategy(),
        b in prop::collection::vec(50.0f64..150.0, 6),
        c in prop::collection::vec(0.0f64..60.0, 6),
        ks in prop::collection::vec(40.0f64..160.0, 6),
    ) {
        let mut once = b.clone();
        apply_b_constraints(&mut once, &c, &state);
        let mut twice = once.clone();
        apply_b_constraints(&mut twice, &c, &state);
        prop_assert_eq!(&once, &twice);

        let mut j1 = b.clone();
        apply_joint_constraints(&mut j1, &c, &state, &ks);
        let mut j2 = j1.clone();
        apply_joint_constraints(&mut j2, &c, &state, &ks);
        for (p, q) in j1.iter().zip(&j2) {
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
        for i in 0..6 {
            let total = j1[i] + c[i];
            if state.conversion_floor {
                prop_assert!(total >= ks[i] - 1e-12);
            } else if state.call_active() {
                prop_assert!(total <= state.call_dirty.max(ks[i]) + 1e-12);
            }
        }
    }

    #[test]
    fn accrued_interest_is_monotone_within_a_period(a in 0.0f64..0.5, b in 0.0f64..0.5, k in 0usize..10) {
        let c = AfvParams::reference().coupons;
        let start = 0.5 * k as f64 + 1e-9;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let x = accrued_interest(start + lo * (1.0 - 4e-9), &c);
        let y = accrued_interest(start + hi * (1.0 - 4e-9), &c);
        prop_assert!(x <= y + 1e-12);
        prop_assert!((0.0..=4.0).contains(&x));
    }

    #[test]
    fn banded_solve_residual(n in 2usize..40, lower in 0usize..4, upper in 0usize..4, seed in any::<u64>()) {
        let mut a = BandedMatrix::zeros(n, lower, upper);
        let mut state = seed | 1;
        let mut rnd = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 20_001) as f64 / 10_000.0 - 1.0
        };
        for i in 0..n {
            for j in a.row_range(i) {
                a.set(i, j, rnd());
            }
            a.set(i, i, 2.0 * (lower + upper + 1) as f64 + rnd());
        }
        let b: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let x = solve(&lu_factor(&a).unwrap(), &b).unwrap();
        let r = a.matvec(&x);
        let err = r.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        prop_assert!(err <= 1e-12);
    }

    #[test]
    fn ten_digit_formatting_round_trips(v in prop::num::f64::NORMAL) {
        let s = fmt_sig(v);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - v).abs() <= 1e-9 * v.abs(), "{} -> {}", v, s);
        prop_assert!(!s.contains('.') || !s.split('e').next().unwrap().ends_with('0'));
    }
}
