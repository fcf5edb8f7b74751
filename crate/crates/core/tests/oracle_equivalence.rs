//! The closed-form model against the fine-step forward simulation.
//!
//! The simulation integrates the same maneuver the model plans (steer-out,
//! pass, steer-in) but step by step, and judges safety by watching the
//! actual head-on gap instead of comparing TTO with TTC. The two must agree
//! on virtually every random scenario, and where they differ the scenario
//! must sit inside the discretization band around TTO = TTC.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ovsim_core::harness::{ground_truth, random_scenario, simulate_maneuver};
use ovsim_core::kinematics::{
    assess_safety, Lane, NodeId, OvertakeScenario, RoadGeometry, VehicleState,
    DEFAULT_LANE_CHANGE_ANGLE,
};

#[test]
fn closed_form_tto_matches_fine_step_simulation() {
    // Four-vehicle scenario with full information; no oncoming vehicle so
    // the simulated maneuver runs to completion.
    let make = |id: u32, pos: f64, speed: f64| {
        VehicleState::new(NodeId(id), pos, Lane::Right, speed, 4.0).unwrap()
    };
    let s = OvertakeScenario::new(
        make(0, 0.0, 27.78),
        make(1, 10.0, 22.22),
        make(2, 30.0, 22.22),
        None,
        RoadGeometry::default(),
        DEFAULT_LANE_CHANGE_ANGLE,
    )
    .unwrap();
    let assessment = assess_safety(&s).unwrap();
    let outcome = simulate_maneuver(&s, 0.001);
    assert!(outcome.completed);
    let rel = (outcome.duration_s - assessment.tto_s).abs() / assessment.tto_s;
    assert!(
        rel < 0.01,
        "simulated {} vs closed-form {} (rel {rel})",
        outcome.duration_s,
        assessment.tto_s
    );
}

#[test]
fn verdicts_agree_with_the_collision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c0ffee);
    let total = 10_000u32;
    let mut agreements = 0u32;
    let mut worst_band = 0.0f64;
    for _ in 0..total {
        let s = random_scenario(&mut rng);
        let predicted = assess_safety(&s).unwrap();
        let truth = ground_truth(&s);
        if predicted.verdict == truth {
            agreements += 1;
        } else {
            // Every disagreement must sit in the numerical band around the
            // TTO = TTC boundary.
            let band = (predicted.tto_s - predicted.ttc_s).abs();
            worst_band = worst_band.max(band);
            assert!(
                band < 0.2,
                "disagreement outside the band: tto {} ttc {} ({:?} vs {:?})",
                predicted.tto_s,
                predicted.ttc_s,
                predicted.verdict,
                truth
            );
        }
    }
    let rate = f64::from(agreements) / f64::from(total);
    assert!(
        rate >= 0.99,
        "agreement rate {rate} below 99% ({agreements}/{total}), worst band {worst_band}"
    );
}
