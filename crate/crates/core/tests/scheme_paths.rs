use nsdde_core::brownian::{coarsen_increments, dyadic_grid, sample_fine_path};
use nsdde_core::experiments::run_strong_convergence;
use nsdde_core::taming::tame_drift;
use nsdde_core::{builtin_problem, InitialSegment, MonteCarlo, NsddeProblem, Rational, SchemeKind, Trajectory};

fn run(problem: &NsddeProblem, e: u32, fine_e: u32, path: u64, kind: SchemeKind) -> Trajectory {
    let grid = dyadic_grid(problem.delay, problem.horizon, e).unwrap();
    let fine = sample_fine_path(1, path, problem.horizon, problem.delay / Rational::from_integer(1 << fine_e)).unwrap();
    let inc = coarsen_increments(&fine, &grid).unwrap();
    nsdde_core::simulate_path(problem, &grid, &inc, kind, 0.5)
}

#[test]
fn history_equals_segment_bit_for_bit() {
    for name in ["linear-sdde", "cubic-tamed", "pure-neutral"] {
        let problem = builtin_problem(name).unwrap();
        for e in [1, 3, 6] {
            let a = run(&problem, e, 8, 0, SchemeKind::TamedMilstein);
            let b = run(&problem, e, 8, 5, SchemeKind::Milstein);
            let m = a.grid.m as isize;
            for k in -2 * m..=0 {
                let want = problem.evaluate_segment(a.grid.node_time(k)).unwrap();
                assert_eq!(a.state(k).unwrap(), &want[..], "{name} k={k}");
                assert_eq!(b.state(k).unwrap(), &want[..], "{name} k={k}");
            }
        }
    }
}

#[test]
fn every_tamed_drift_step_is_clamped() {
    let problem = builtin_problem("cubic-tamed").unwrap();
    let c = &problem.coefficients;
    for e in [2, 4, 6] {
        for path in 0..20 {
            let traj = run(&problem, e, 9, path, SchemeKind::TamedMilstein);
            assert!(!traj.exploded);
            let dt = traj.grid.dt();
            let m = traj.grid.m as isize;
            let mut b = vec![0.0];
            for k in 0..traj.last_index() {
                c.drift(traj.state(k).unwrap(), traj.state(k - m).unwrap(), &mut b);
                let bh = tame_drift(&b, dt, 0.5).unwrap().value;
                assert!(bh[0].abs() * dt <= dt.powf(0.5) * (1.0 + 1e-15));
            }
        }
    }
}

/// cubic-tamed started far from its equilibria.
fn cubic_from(level: f64) -> NsddeProblem {
    NsddeProblem { segment: InitialSegment::constant(vec![level]), ..builtin_problem("cubic-tamed").unwrap() }
}

#[test]
fn euler_explodes_where_taming_holds() {
    let problem = cubic_from(5.0);
    for path in 0..10 {
        let em = run(&problem, 1, 8, path, SchemeKind::EulerMaruyama);
        assert!(em.exploded, "path {path}");
        assert!(em.explosion_step.unwrap() <= 4);
        for kind in [SchemeKind::TamedMilstein, SchemeKind::TamedEulerMaruyama] {
            let t = run(&problem, 1, 8, path, kind);
            assert!(!t.exploded, "{kind} path {path}");
            assert!(t.nodes().all(|y| y[0].is_finite()));
        }
    }
}

#[test]
fn exploded_paths_are_truncated_and_reported() {
    let problem = cubic_from(5.0);
    let traj = run(&problem, 1, 8, 0, SchemeKind::EulerMaruyama);
    let j = traj.explosion_step.unwrap() as isize;
    assert_eq!(traj.last_index(), j - 1);
    assert!(traj.state(j).is_none());
    assert!(traj.nodes().all(|y| y[0].abs() < 1e12));
}

#[test]
fn reruns_are_bit_identical() {
    let problem = builtin_problem("cubic-tamed").unwrap();
    let mc = MonteCarlo::new(50, 9);
    let schemes = SchemeKind::ALL;
    let a = run_strong_convergence(&problem, &schemes, &[2, 3, 4], 8, 2.0, &mc).unwrap();
    let b = run_strong_convergence(&problem, &schemes, &[2, 3, 4], 8, 2.0, &mc).unwrap();
    assert_eq!(a, b);
    for row in &a.rows {
        if row.exploded_fraction == 0.0 {
            assert!(row.error.is_finite() && row.stderr.is_finite(), "{row:?}");
        }
    }
}
