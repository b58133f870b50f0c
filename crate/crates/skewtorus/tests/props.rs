//! Property tests of structural invariants: invertibility, volume
//! preservation, angle wrapping, lattice arithmetic, hyperbolic time
//! detection, and the observable parser.

use proptest::prelude::*;
use skewtorus::ergodic::Observable;
use skewtorus::linalg::{eigendata, IntMat2};
use skewtorus::maps::{standard_map, standard_map_inverse, Shear, SkewProduct};
use skewtorus::pliss::{pliss_times, pliss_times_brute, PlissParams};
use skewtorus::scales::Scales;
use skewtorus::torus::{
    circle_dist, from_lattice, reduce_mod_2pi, to_lattice, torus_dist2, torus_dist4, ModMat2,
    LATTICE_SIZE, TAU,
};

fn angle() -> impl Strategy<Value = f64> {
    // Beyond one period on both sides so wrapping is always exercised.
    -10.0..10.0_f64
}

fn point4() -> impl Strategy<Value = [f64; 4]> {
    [angle(), angle(), angle(), angle()]
}

fn shear() -> impl Strategy<Value = Shear> {
    (0usize..4, [-3i64..=3, -3..=3, -3..=3, -3..=3], 0.0..0.05_f64).prop_map(
        |(target, mut freq, eps)| {
            // A shear phase never reads its own target coordinate.
            freq[target] = 0;
            Shear::new(target, freq, eps).unwrap()
        },
    )
}

fn skew_map() -> impl Strategy<Value = SkewProduct> {
    (
        1u32..=40,
        proptest::collection::vec(shear(), 0..3),
        proptest::collection::vec(shear(), 0..3),
    )
        .prop_map(|(n, pre, post)| SkewProduct::new(n, IntMat2::cat(), pre, post).unwrap())
}

fn small_skew_map() -> impl Strategy<Value = SkewProduct> {
    (
        1u32..=4,
        proptest::collection::vec(shear(), 0..3),
        proptest::collection::vec(shear(), 0..3),
    )
        .prop_map(|(n, pre, post)| SkewProduct::new(n, IntMat2::cat(), pre, post).unwrap())
}

fn det4(m: &[[f64; 4]; 4]) -> f64 {
    // Gaussian elimination with partial pivoting.
    let mut a = *m;
    let mut det = 1.0;
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..4 {
            let r = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= r * a[col][k];
            }
        }
    }
    det
}

proptest! {
    #[test]
    fn map_inverse_round_trips(f in skew_map(), m in point4()) {
        let fwd = f.apply(m).unwrap();
        let back = f.inverse(fwd).unwrap();
        prop_assert!(torus_dist4(back, m) <= 1e-9);
        let pre = f.inverse(m).unwrap();
        let again = f.apply(pre).unwrap();
        prop_assert!(torus_dist4(again, m) <= 1e-9);
    }

    #[test]
    fn derivative_preserves_volume(f in small_skew_map(), m in point4()) {
        // det error in f64 grows like eps * mu^(4n), so keep n small here
        let d = f.df_full(m).unwrap();
        prop_assert!((det4(&d) - 1.0).abs() <= 1e-7);
    }

    #[test]
    fn semiconjugacy_holds_for_base_shears(f in skew_map(), m in point4()) {
        let touches_fiber = f
            .pre_shears()
            .iter()
            .chain(f.post_shears())
            .any(|s| s.target >= 2);
        if !touches_fiber {
            prop_assert_eq!(f.semiconjugacy_residual(m).unwrap(), 0.0);
        }
    }

    #[test]
    fn reduction_is_canonical_and_idempotent(x in -1e6..1e6_f64) {
        let r = reduce_mod_2pi(x).unwrap();
        prop_assert!((0.0..TAU).contains(&r));
        prop_assert_eq!(reduce_mod_2pi(r).unwrap(), r);
        prop_assert!(circle_dist(x, r) <= 1e-9);
    }

    #[test]
    fn circle_distance_is_a_metric(a in angle(), b in angle(), c in angle()) {
        let ab = circle_dist(a, b);
        prop_assert!((0.0..=TAU / 2.0 + 1e-12).contains(&ab));
        prop_assert!((ab - circle_dist(b, a)).abs() <= 1e-12);
        prop_assert!(ab <= circle_dist(a, c) + circle_dist(c, b) + 1e-9);
        prop_assert!(circle_dist(a, a) == 0.0);
    }

    #[test]
    fn lattice_round_trip_is_within_resolution(x in angle()) {
        let t = to_lattice(x);
        prop_assert!(t < LATTICE_SIZE);
        let back = from_lattice(t);
        // Quantization to 2^-48 of a turn, plus the wrap rounding.
        prop_assert!(circle_dist(back, x) <= TAU * 2.0_f64.powi(-47));
    }

    #[test]
    fn lattice_powers_compose(b in 1i64..=6, j in 0u32..8, k in 0u32..8, z in any::<u64>(), w in any::<u64>()) {
        let a = IntMat2::new(1, b, 1, b + 1);
        let t = [z % LATTICE_SIZE, w % LATTICE_SIZE];
        let m = ModMat2::from_int(&a);
        let joint = m.pow(j + k).apply(t);
        let staged = m.pow(j).apply(m.pow(k).apply(t));
        prop_assert_eq!(joint, staged);
    }

    #[test]
    fn twist_map_round_trips(n in 1u32..=100, x in angle(), y in angle()) {
        let p = standard_map(n, [x, y]).unwrap();
        let back = standard_map_inverse(n, p).unwrap();
        let fwd = standard_map(n, back).unwrap();
        prop_assert!(torus_dist2(fwd, p) <= 1e-9);
    }

    #[test]
    fn pliss_times_match_brute_force(
        a in -5.0..5.0_f64,
        span in 0.01..5.0_f64,
        eps in 0.01..2.0_f64,
        raw in proptest::collection::vec(0.0..10.0_f64, 1..24),
    ) {
        let params = PlissParams::new(eps, a, a + span).unwrap();
        // Entries stay strictly above alpha1, as the detector requires.
        let seq: Vec<f64> = raw.iter().map(|u| a + 1e-6 + u).collect();
        let horizon = seq.len();
        let rep = pliss_times(&seq, &params, horizon).unwrap();
        prop_assert_eq!(&rep.times, &pliss_times_brute(&seq, &params, horizon));
        prop_assert!(rep.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(rep.times.iter().all(|&t| t < horizon));
    }

    #[test]
    fn trig_observables_parse_and_evaluate(
        cos in any::<bool>(),
        freq in [-5i64..=5, -5..=5, -5..=5, -5..=5],
        m in point4(),
    ) {
        prop_assume!(freq.iter().any(|&k| k != 0));
        let vars = ["x", "y", "z", "w"];
        let mut body = String::new();
        for (i, &k) in freq.iter().enumerate() {
            if k == 0 {
                continue;
            }
            if k > 0 && !body.is_empty() {
                body.push('+');
            }
            if k == -1 {
                body.push('-');
            } else if k != 1 {
                body.push_str(&k.to_string());
            }
            body.push_str(vars[i]);
        }
        let text = format!("{}({body})", if cos { "cos" } else { "sin" });
        let obs = Observable::parse(&text).unwrap();
        let phase: f64 = (0..4).map(|i| freq[i] as f64 * m[i]).sum();
        let expect = if cos { phase.cos() } else { phase.sin() };
        prop_assert!((obs.eval(m) - expect).abs() <= 1e-12);
        prop_assert!(obs.eval(m).abs() <= obs.sup_norm() + 1e-12);
        prop_assert_eq!(obs.space_average(), 0.0);
        // The canonical id reparses to the same observable.
        let again = Observable::parse(obs.id()).unwrap();
        prop_assert!((again.eval(m) - obs.eval(m)).abs() == 0.0);
    }

    #[test]
    fn scale_pack_echoes_its_formulas(n in 2u32..=10_000, delta in 0.001..0.2_f64, dt in 0.01..0.5_f64) {
        let s = Scales::derive(n, delta, dt).unwrap();
        let nf = n as f64;
        prop_assert_eq!(s.theta1, nf.powf(-2.0 / 5.0));
        prop_assert_eq!(s.theta2, nf.powf(-3.0 / 5.0));
        prop_assert_eq!(s.theta3, 2.0 * s.theta2);
        prop_assert_eq!(s.r0, nf.powf(-7.0));
        prop_assert_eq!(s.eta, 5.0 / (std::f64::consts::PI * nf.powf(dt)));
        prop_assert_eq!(s.t_window, ((1.0 + 7.0 * delta) / (28.0 * delta)).floor() as i64);
        prop_assert!(s.theta2 < s.theta1);
    }

    #[test]
    fn eigendata_solves_the_fiber_matrix(b in 1i64..=12) {
        let a = IntMat2::new(1, b, 1, b + 1);
        let h = eigendata(&a).unwrap();
        prop_assert!((h.mu * h.lambda - 1.0).abs() <= 1e-12);
        prop_assert!(h.mu > 1.0);
        // A e_u = mu e_u componentwise.
        let img = [
            h.e_u[0] + b as f64 * h.e_u[1],
            h.e_u[0] + (b + 1) as f64 * h.e_u[1],
        ];
        prop_assert!((img[0] - h.mu * h.e_u[0]).abs() <= 1e-9);
        prop_assert!((img[1] - h.mu * h.e_u[1]).abs() <= 1e-9);
    }
}
