use nslab::dynamics::{noise_decomposition, run_sgd, RunConfig};
use nslab::problems::{registry, Problem};
use nslab::setvalued::{min_norm_point, SetEstimate};
use nslab::tape::SelectionPolicy;
use nslab::types::{ParamVector, RngSpec, RunStatus, StepSchedule};
use proptest::prelude::*;
use rand::Rng;

fn problem(name: &str) -> Problem {
    registry().into_iter().find(|(n, _)| *n == name).unwrap().1.build_unchecked().unwrap()
}

const NAMES: [&str; 6] =
    ["abs_rademacher", "abs_uniform", "quadratic", "affine_regression", "teacher_student", "identity_relu"];

fn schedule() -> impl Strategy<Value = StepSchedule> {
    prop_oneof![
        (0.01f64..1.0, 0.3f64..1.2).prop_map(|(a, g)| StepSchedule::power_law(a, g).unwrap()),
        (0.001f64..0.2).prop_map(|a| StepSchedule::constant(a).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursion_is_exact_and_runs_reproduce(
        which in 0usize..NAMES.len(),
        sched in schedule(),
        seed in any::<u64>(),
        n_iters in 1u64..2000,
        record_every in 1u64..5,
    ) {
        let p = problem(NAMES[which]);
        let mut rng = RngSpec::new(seed, 0).rng();
        let w0 = ParamVector::new((0..p.w_dim()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut cfg = RunConfig::new(sched, w0, n_iters, RngSpec::new(seed, 1));
        cfg.record_every = record_every;
        let a = run_sgd(&p, &cfg).unwrap();
        prop_assert_eq!(a.verify_recursion(), Ok(()));
        match a.status {
            RunStatus::Completed => prop_assert_eq!(a.final_k, n_iters),
            RunStatus::Diverged { k, .. } => prop_assert!(k == a.final_k && k <= n_iters),
        }
        let b = run_sgd(&p, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca, 1).unwrap();
        b.write_csv(&mut cb, 1).unwrap();
        prop_assert_eq!(ca, cb);
    }
}

/// `a_k` is a convex combination of the per-atom selections at `w_k`: the
/// hull of the shifted selections contains the origin.
#[test]
fn drift_lies_in_hull_of_atom_selections() {
    let policy = SelectionPolicy::default();
    for (name, w0) in [("abs_rademacher", vec![0.3]), ("quadratic", vec![0.7, -0.4]), ("distance_to_c", vec![0.9])] {
        let p = problem(name);
        let atoms = p.atoms().unwrap();
        let cfg = RunConfig::new(
            StepSchedule::power_law(0.5, 0.8).unwrap(),
            ParamVector::new(w0).unwrap(),
            400,
            RngSpec::new(5, 0),
        );
        let traj = run_sgd(&p, &cfg).unwrap();
        let d = noise_decomposition(&traj, &p, &policy, 0, RngSpec::new(5, 1)).unwrap();
        assert!(d.exact);
        for (k, rec) in traj.records.iter().enumerate() {
            let a = d.a(k);
            let shifted: Vec<ParamVector> = atoms
                .iter()
                .map(|(s, _)| {
                    let g = p.value_and_selection(rec.w.as_slice(), s, &policy).unwrap().1;
                    ParamVector::new(g.iter().zip(a).map(|(g, a)| g - a).collect()).unwrap()
                })
                .collect();
            let scale = shifted.iter().map(|v| v.norm()).fold(1.0, f64::max);
            let mn = min_norm_point(&SetEstimate::from_points(shifted).unwrap());
            assert!(mn.norm <= 1e-12 * scale, "{name} k={k}: distance {}", mn.norm);
            let u: Vec<f64> = rec.v.as_slice().iter().zip(a).map(|(v, a)| v - a).collect();
            assert_eq!(u.as_slice(), d.u(k));
        }
    }
}

#[cfg(feature = "parallel")]
#[test]
fn results_do_not_depend_on_thread_count() {
    use nslab::setvalued::{default_policy_family, estimate_aumann, AumannMode, AumannOptions};

    let p = problem("teacher_student");
    let w = ParamVector::new(vec![0.3; p.w_dim()]).unwrap();
    let run = || {
        let risk = p.risk_mc(w.as_slice(), RngSpec::new(9, 0), 5000).unwrap();
        let opts = AumannOptions::new(3000, default_policy_family()).mode(AumannMode::MonteCarlo);
        let set = estimate_aumann(&p, &w, &opts, RngSpec::new(9, 1)).unwrap();
        (risk.mean.to_bits(), risk.se.to_bits(), set)
    };
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(run);
    let three = pool(3).install(run);
    assert_eq!(one.0, three.0);
    assert_eq!(one.1, three.1);
    assert_eq!(one.2, three.2);
}
