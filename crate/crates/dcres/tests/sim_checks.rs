mod common;

use approx::{assert_abs_diff_eq, assert_relative_eq};
use common::{benchmark, linear_step_peak};
use dcres::metrics::nadir;
use dcres::model::{linearize, solve_equilibrium};
use dcres::sim::{
    simulate, steady_window, DisturbanceSchedule, LoadStep, SecondaryControl, SimError,
};

#[test]
fn equilibrium_start_holds_for_ten_seconds() {
    let p = benchmark(0.02);
    let traj = simulate(
        &p,
        &DisturbanceSchedule::quiet(10.0),
        &SecondaryControl::disabled(),
        5e-5,
    )
    .unwrap();
    let v_star = solve_equilibrium(&p, 5e6).unwrap().v_bus_star;
    let worst = traj
        .v_bus()
        .iter()
        .map(|v| (v - v_star).abs())
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-6 * v_star, "drift {worst} V from equilibrium");
}

#[test]
fn halving_the_step_barely_moves_the_nadir() {
    let p = benchmark(0.02);
    let schedule = DisturbanceSchedule {
        load_steps: vec![LoadStep {
            time: 0.5,
            delta_p: 5e6,
        }],
        perturbation: None,
        t_end: 2.0,
    };
    let secondary = SecondaryControl::disabled();
    let coarse = simulate(&p, &schedule, &secondary, 5e-5).unwrap();
    let fine = simulate(&p, &schedule, &secondary, 2.5e-5).unwrap();
    let n_coarse = nadir(&coarse, 0.5).unwrap();
    let n_fine = nadir(&fine, 0.5).unwrap();
    let deviation = solve_equilibrium(&p, 5e6).unwrap().v_bus_star - n_fine;
    assert!(
        (n_coarse - n_fine).abs() < 1e-3 * deviation,
        "nadir moved {} of a {} V excursion",
        (n_coarse - n_fine).abs(),
        deviation
    );
}

#[test]
fn nadir_matches_the_independent_integrator() {
    let p = benchmark(0.02);
    let schedule = DisturbanceSchedule {
        load_steps: vec![LoadStep {
            time: 2.0,
            delta_p: 5e6,
        }],
        perturbation: None,
        t_end: 6.0,
    };
    let traj = simulate(&p, &schedule, &SecondaryControl::disabled(), 5e-5).unwrap();
    assert_abs_diff_eq!(
        nadir(&traj, 2.0).unwrap(),
        5896.147753990232,
        epsilon = 5e-6
    );
}

#[test]
fn small_steps_follow_the_linearized_model() {
    let p = benchmark(0.02);
    let schedule = DisturbanceSchedule {
        load_steps: vec![LoadStep {
            time: 1.0,
            delta_p: 5e4,
        }],
        perturbation: None,
        t_end: 3.0,
    };
    let traj = simulate(&p, &schedule, &SecondaryControl::disabled(), 5e-5).unwrap();
    let v_pre = traj.v_bus()[traj.index_of_time(0.99)];
    let peak = traj
        .v_bus()
        .iter()
        .map(|v| (v - v_pre).abs())
        .fold(0.0f64, f64::max);
    assert_abs_diff_eq!(peak, 0.6566163584493552, epsilon = 1e-6);

    let eq = solve_equilibrium(&p, 5e6).unwrap();
    let lin = linearize(&p, &eq).unwrap();
    let lin_peak = linear_step_peak(&lin, 5e4, 2.0, 5e-5);
    assert_relative_eq!(peak, lin_peak, max_relative = 0.02);
}

#[test]
fn secondary_control_restores_the_nominal_voltage() {
    let p = benchmark(0.02);
    let schedule = DisturbanceSchedule {
        load_steps: vec![LoadStep {
            time: 10.0,
            delta_p: 5e6,
        }],
        perturbation: None,
        t_end: 20.0,
    };
    let secondary = SecondaryControl::with_gain(5.0);
    let traj = simulate(&p, &schedule, &secondary, 5e-5).unwrap();

    // the bus leaves the 0.1% band at the step and re-enters for good near
    // t = 10.65 s
    let band = 6.0;
    let last_outside = traj
        .v_bus()
        .iter()
        .enumerate()
        .filter(|(_, v)| (**v - 6000.0).abs() > band)
        .map(|(k, _)| traj.time_at(k))
        .fold(0.0f64, f64::max);
    assert!(
        (10.5..10.8).contains(&last_outside),
        "band re-entry at {last_outside}"
    );

    let tail = steady_window(&traj, 18.0).unwrap();
    assert_abs_diff_eq!(tail.mean, 6000.0, epsilon = 0.01);
}

#[test]
fn droop_only_operation_keeps_the_post_step_offset() {
    let p = benchmark(0.02);
    let schedule = DisturbanceSchedule {
        load_steps: vec![LoadStep {
            time: 10.0,
            delta_p: 5e6,
        }],
        perturbation: None,
        t_end: 20.0,
    };
    let traj = simulate(&p, &schedule, &SecondaryControl::disabled(), 5e-5).unwrap();
    let tail = steady_window(&traj, 19.0).unwrap();
    let v_post = solve_equilibrium(&p, 10e6).unwrap().v_bus_star;
    // the storage integrators approach the new droop equilibrium slowly;
    // after ten seconds the residual gap is below a tenth of a volt
    assert_abs_diff_eq!(tail.mean, v_post, epsilon = 0.1);
    assert!(tail.mean < 5962.0);
}

#[test]
fn coarse_steps_are_rejected() {
    let p = benchmark(0.02);
    match simulate(
        &p,
        &DisturbanceSchedule::quiet(1.0),
        &SecondaryControl::disabled(),
        2e-4,
    ) {
        Err(SimError::TimeStepTooCoarse { dt, limit }) => {
            assert_eq!(dt, 2e-4);
            assert!(limit < 2e-4);
        }
        other => panic!("expected step-size rejection, got {other:?}"),
    }
}

#[test]
fn collapse_under_overload_is_reported_in_time() {
    let p = benchmark(0.02);
    let p_max = p.droop_conductance() * p.v_ref * p.v_ref / 4.0;
    let schedule = DisturbanceSchedule {
        load_steps: vec![LoadStep {
            time: 0.5,
            delta_p: 1.4 * p_max - 5e6,
        }],
        perturbation: None,
        t_end: 5.0,
    };
    match simulate(&p, &schedule, &SecondaryControl::disabled(), 5e-5) {
        Err(SimError::NonPhysicalState { time, .. }) => {
            assert!(time > 0.5, "collapse before the step at {time}");
        }
        other => panic!("expected voltage collapse, got {other:?}"),
    }
}
