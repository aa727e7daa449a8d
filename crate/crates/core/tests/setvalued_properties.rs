mod common;

use nslab::problems::{registry, Problem};
use nslab::setvalued::{
    default_policy_family, estimate_aumann, min_norm_point, support_function, AumannMode, AumannOptions, SetEstimate,
};
use nslab::types::{ParamVector, RngSpec};
use proptest::prelude::*;

fn problem(name: &str) -> Problem {
    registry().into_iter().find(|(n, _)| *n == name).unwrap().1.build_unchecked().unwrap()
}

fn set_of(points: &[Vec<f64>]) -> SetEstimate {
    SetEstimate::from_points(points.iter().map(|p| ParamVector::new(p.clone()).unwrap()).collect()).unwrap()
}

/// Clouds of 1..=8 points in dimension 1..=3; half of them on an integer
/// lattice so duplicates and affine dependence show up often.
fn cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=3, 1usize..=8, any::<bool>()).prop_flat_map(|(p, n, lattice)| {
        let coord = if lattice { (-2i32..=2).prop_map(f64::from).boxed() } else { (-2.0f64..2.0).boxed() };
        prop::collection::vec(prop::collection::vec(coord, p), n)
    })
}

fn scale(points: &[Vec<f64>]) -> f64 {
    points.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn support_function_is_sublinear(
        points in cloud(),
        q1 in prop::collection::vec(-3.0f64..3.0, 3),
        q2 in prop::collection::vec(-3.0f64..3.0, 3),
        t in 0.01f64..100.0,
    ) {
        let p = points[0].len();
        let set = set_of(&points);
        let q1 = ParamVector::new(q1[..p].to_vec()).unwrap();
        let q2 = ParamVector::new(q2[..p].to_vec()).unwrap();
        prop_assume!(q1.norm() > 1e-9 && q2.norm() > 1e-9);
        let sum = ParamVector::new(q1.as_slice().iter().zip(q2.as_slice()).map(|(a, b)| a + b).collect()).unwrap();
        let ulp = 4.0 * f64::EPSILON * scale(&points) * 6.0 * p as f64;
        let h1 = support_function(&set, &q1).unwrap();
        let h2 = support_function(&set, &q2).unwrap();
        if sum.norm() > 1e-9 {
            prop_assert!(support_function(&set, &sum).unwrap() <= h1 + h2 + ulp);
        }
        let tq = q1.scale(t).unwrap();
        let htq = support_function(&set, &tq).unwrap();
        prop_assert!((htq - t * h1).abs() <= t * ulp, "h(tq) = {} vs t h(q) = {}", htq, t * h1);
    }

    #[test]
    fn min_norm_point_is_certified_and_matches_brute_force(points in cloud()) {
        let mn = min_norm_point(&set_of(&points));
        let sc = scale(&points);
        prop_assert!(mn.certificate >= -1e-10 * sc * sc, "certificate {}", mn.certificate);
        let wsum: f64 = mn.weights.iter().sum();
        prop_assert!(mn.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((wsum - 1.0).abs() <= 1e-12);
        for (j, x) in mn.point.as_slice().iter().enumerate() {
            let rebuilt: f64 = points.iter().zip(&mn.weights).map(|(p, w)| w * p[j]).sum();
            prop_assert!((rebuilt - x).abs() <= 1e-12 * sc);
        }
        let brute = common::brute_force_min_norm(&points);
        let brute_norm = brute.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((mn.norm - brute_norm).abs() <= 1e-9 * sc, "wolfe {} brute {}", mn.norm, brute_norm);
        if points.len() <= 4 {
            // No grid point of the simplex can beat the optimum.
            prop_assert!(common::simplex_grid_min_norm(&points, 40) >= mn.norm - 1e-12 * sc);
        }
    }
}

/// Support of the exact expectation: sum over atoms of the largest
/// selection in direction `q` among the extreme policies.
fn atom_support(name: &str, w: f64, q: f64) -> f64 {
    let problem = problem(name);
    problem
        .atoms()
        .unwrap()
        .iter()
        .map(|(s, p)| {
            let best = default_policy_family()
                .iter()
                .map(|pol| problem.value_and_selection(&[w], s, pol).unwrap().1[0] * q)
                .fold(f64::NEG_INFINITY, f64::max);
            p * best
        })
        .sum()
}

#[test]
fn exhaustive_aumann_matches_atom_enumeration() {
    for name in ["abs_rademacher", "distance_to_c"] {
        let problem = problem(name);
        for w in [0.0, 0.5, -0.3, 1.0 / 3.0, 1.0 / 7.0, 1e-9] {
            let opts = AumannOptions::new(1, default_policy_family()).mode(AumannMode::Exhaustive);
            let set = estimate_aumann(&problem, &ParamVector::scalar(w).unwrap(), &opts, RngSpec::new(3, 0)).unwrap();
            assert!(set.meta.exact);
            for q in [1.0, -1.0] {
                let h = support_function(&set, &ParamVector::scalar(q).unwrap()).unwrap();
                let oracle = atom_support(name, w, q);
                assert!((h - oracle).abs() <= 1e-12, "{name} at {w}: h({q}) = {h} vs {oracle}");
            }
        }
    }
}

#[test]
fn exhaustive_aumann_on_quadratic_is_the_mean_gradient() {
    let problem = problem("quadratic");
    let atoms = problem.atoms().unwrap();
    let w = ParamVector::new(vec![0.4, -1.2]).unwrap();
    let opts = AumannOptions::new(1, default_policy_family()).mode(AumannMode::Exhaustive);
    let set = estimate_aumann(&problem, &w, &opts, RngSpec::new(3, 0)).unwrap();
    let mut mean = [0.0; 2];
    for (s, p) in &atoms {
        let g = problem.value_and_selection(w.as_slice(), s, &Default::default()).unwrap().1;
        mean[0] += p * g[0];
        mean[1] += p * g[1];
    }
    for pt in &set.points {
        assert!((pt[0] - mean[0]).abs() <= 1e-12 && (pt[1] - mean[1]).abs() <= 1e-12);
    }
}
