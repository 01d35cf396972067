use num_complex::Complex64;
use proptest::prelude::*;
use sgbound::hhull::{fold, hhull, lift};

fn point() -> impl Strategy<Value = Complex64> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(re, im)| Complex64::new(re, im))
}

fn points(max: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec(point(), 1..max)
}

fn same_vertices(a: &[Complex64], b: &[Complex64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .all(|z| b.iter().any(|w| (z - w).norm() <= 1e-12 * (1.0 + z.norm())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn idempotent(s in points(40)) {
        let h = hhull(&s).unwrap();
        let again = hhull(&h.vertices).unwrap();
        prop_assert!(same_vertices(&h.vertices, &again.vertices));
    }

    #[test]
    fn monotone(s in points(30), t in points(30)) {
        let small = hhull(&s).unwrap();
        let all: Vec<Complex64> = s.iter().chain(&t).copied().collect();
        let big = hhull(&all).unwrap();
        for v in &small.vertices {
            prop_assert!(big.contains(*v));
        }
    }

    #[test]
    fn contains_its_points(s in points(40)) {
        let h = hhull(&s).unwrap();
        for z in &s {
            prop_assert!(h.contains(*z));
            prop_assert!(h.contains(z.conj()));
        }
    }

    #[test]
    fn conjugate_symmetric(s in points(40)) {
        let conj: Vec<Complex64> = s.iter().map(|z| z.conj()).collect();
        let a = hhull(&s).unwrap();
        let b = hhull(&conj).unwrap();
        prop_assert!(same_vertices(&a.vertices, &b.vertices));
        prop_assert!(a.vertices.iter().all(|z| z.im >= 0.0));
    }

    #[test]
    fn edges_lift_to_segments(s in points(40)) {
        let h = hhull(&s).unwrap();
        for e in &h.edges {
            let (a, b) = (lift(fold(e.from)), lift(fold(e.to)));
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            for k in 0..=16 {
                let p = lift(e.geodesic.point(k as f64 / 16.0));
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                let scale = 1.0 + a[0].abs() + a[1].abs() + b[0].abs() + b[1].abs();
                prop_assert!(cross.abs() / len.max(f64::MIN_POSITIVE) <= 1e-9 * scale);
            }
        }
    }
}
