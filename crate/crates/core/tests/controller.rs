use approx::assert_relative_eq;
use marginscope::controller::{
    controller_step, run_episode, run_episodes, usable_steps, Action, ControllerConfig, ControllerState, Status, WindowObservation,
    DMR_ACTIVE_CORES,
};
use marginscope::model::{calibrate, CalibrationTargets};
use marginscope::{DeviceModelParams, GuardbandTable, OperatingPoint};
use proptest::prelude::*;

fn params() -> DeviceModelParams {
    calibrate(&GuardbandTable::datasheet(), &CalibrationTargets::default()).unwrap().params
}

fn state_strategy() -> impl Strategy<Value = ControllerState> {
    (2usize..6)
        .prop_flat_map(|n| (0..n, Just(n), 0u32..4, 0u32..4, proptest::option::of(0..n)))
        .prop_map(|(step, n_steps, holds, hold_remaining, error_floor)| ControllerState {
            consecutive_holds: holds,
            hold_remaining,
            error_floor,
            status: if hold_remaining > 0 { Status::SafetyHold } else { Status::Seeking },
            ..ControllerState::new(step, n_steps)
        })
}

fn rank(a: Action) -> i8 {
    match a {
        Action::StepDown => -1,
        Action::Hold => 0,
        Action::StepUp => 1,
    }
}

proptest! {
    #[test]
    fn more_errors_never_lower_the_supply(state in state_strategy(), e1 in 0u32..=200, e2 in 0u32..=200, lockups in 0u32..2) {
        let cfg = ControllerConfig::default();
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        let (_, a_lo) = controller_step(&state, &cfg, WindowObservation { errors: lo, lockups });
        let (s_hi, a_hi) = controller_step(&state, &cfg, WindowObservation { errors: hi, lockups });
        prop_assert!(rank(a_hi) >= rank(a_lo));
        if hi > 0 {
            prop_assert_ne!(a_hi, Action::StepDown);
        }
        prop_assert!(s_hi.step < s_hi.n_steps);
    }

    #[test]
    fn steps_stay_in_range(state in state_strategy(), errors in 0u32..=200, lockups in 0u32..3) {
        let (next, action) = controller_step(&state, &ControllerConfig::default(), WindowObservation { errors, lockups });
        prop_assert!(next.step < next.n_steps);
        let delta = next.step as i64 - state.step as i64;
        prop_assert_eq!(delta, i64::from(rank(action)));
        prop_assert_eq!(next.windows_elapsed, state.windows_elapsed + 1);
    }
}

#[test]
fn converges_for_every_feasible_target() {
    let p = params();
    let table = GuardbandTable::datasheet();
    let mut checked = 0;
    for target in (100_000..=330_000).step_by(10_000) {
        let cfg = ControllerConfig { target_freq_khz: target, run_items: 1_000, ..ControllerConfig::default() };
        if usable_steps(&p, &table, &cfg).is_err() {
            continue;
        }
        for seed in 0..5 {
            let r = run_episode(&p, &table, &cfg, seed, 10 + cfg.settle_windows).unwrap();
            assert!(r.settled(), "target {target} seed {seed} did not settle: {:?}", r.trace.iter().map(|w| (w.voltage_mv, w.errors, w.action)).collect::<Vec<_>>());
            checked += 1;
        }
    }
    assert!(checked >= 50, "only {checked} feasible episodes");
}

#[test]
fn energy_equals_independent_reintegration() {
    let p = params();
    let cfg = ControllerConfig { target_freq_khz: 230_000, run_items: 1_000, ..ControllerConfig::default() };
    let r = run_episode(&p, &GuardbandTable::datasheet(), &cfg, 3, 20).unwrap();
    let f_hz = 230e6;
    let mut energy = 0.0;
    let mut recovery = 0u64;
    for w in &r.trace {
        let expected_recovery = u64::from(w.errors) * cfg.recovery_cycles()
            + u64::from(w.lockups) * ((cfg.timeout_factor * cfg.run_cycles() as f64).ceil() as u64 + cfg.recovery_cycles());
        assert_eq!(w.recovery_cycles, expected_recovery);
        let power = p.power(&OperatingPoint::cluster(w.voltage_mv, 230_000).unwrap(), DMR_ACTIVE_CORES).unwrap();
        energy += power * (w.useful_cycles + w.recovery_cycles) as f64 / f_hz;
        recovery += w.recovery_cycles;
    }
    assert_relative_eq!(r.energy_j, energy, max_relative = 1e-12);
    assert_eq!(r.recovery_cycles, recovery);
    assert_eq!(r.useful_cycles, 20 * 200 * cfg.run_cycles());
    assert_relative_eq!(r.overhead, recovery as f64 / (recovery + r.useful_cycles) as f64);
}

#[test]
fn target_above_every_guardband_uses_flagged_baseline() {
    let cfg = ControllerConfig { target_freq_khz: 200_000, run_items: 1_000, ..ControllerConfig::default() };
    let r = run_episode(&params(), &GuardbandTable::datasheet(), &cfg, 1, 5).unwrap();
    assert!(!r.baseline_within_guardband);
    assert_eq!(r.baseline_voltage_mv, 1200);
}

#[test]
fn episodes_are_reproducible_and_independent_of_workers() {
    let p = params();
    let table = GuardbandTable::datasheet();
    let cfg = ControllerConfig { target_freq_khz: 230_000, run_items: 1_000, ..ControllerConfig::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_episodes(&p, &table, &cfg, 77, 8, 12).unwrap())
    };
    assert_eq!(run(1), run(4));
}
