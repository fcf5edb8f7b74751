//! Monte Carlo experiment engine.
//!
//! Scenarios are drawn from per-study speed and gap intervals, the oncoming
//! vehicle is planted near the communication boundary, and each scenario is
//! judged twice: once by the predictor, which only sees vehicles inside the
//! communication range, and once by a fine-step forward simulation of the
//! full maneuver with complete information. Disagreements are
//! mis-predictions; counting them per range point over a grid of
//! communication ranges reproduces the range-vs-mis-prediction curves.
//!
//! Censoring is the whole mechanism: an oncoming vehicle beyond radio reach
//! yields an infinite TTC (optimism), and an out-of-range farthest same-lane
//! vehicle makes the predictor plan a shorter pass than it will need.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{
    assess_safety, Lane, NodeId, OvertakeScenario, RoadGeometry, VehicleState, Verdict,
    DEFAULT_LANE_CHANGE_ANGLE,
};
use crate::localization::{self, ControlInput, TrackPoint};

/// Vehicle body length used for generated scenarios, meters.
pub const GENERATED_VEHICLE_LENGTH: f64 = 4.0;
/// Ground-truth oracle integration step, seconds.
pub const ORACLE_DT: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("interval [{lo}, {hi}] for {name} is invalid")]
    BadInterval { name: &'static str, lo: f64, hi: f64 },
    #[error("scenario count must be positive")]
    ZeroCount,
    #[error("could not draw a feasible scenario after {0} attempts")]
    GenerationFailed(u32),
    #[error("range grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Kinematics(#[from] crate::kinematics::KinematicsError),
}

/// Closed interval `[lo, hi]`, sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval(pub f64, pub f64);

impl Interval {
    fn validate(&self, name: &'static str) -> Result<(), HarnessError> {
        if self.0.is_finite() && self.1.is_finite() && self.0 <= self.1 {
            Ok(())
        } else {
            Err(HarnessError::BadInterval {
                name,
                lo: self.0,
                hi: self.1,
            })
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.1 > self.0 {
            rng.random_range(self.0..self.1)
        } else {
            self.0
        }
    }
}

/// One experiment configuration: where speeds, gaps and the oncoming vehicle
/// come from, and how many maneuvers to draw per range point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    /// Overtaker speed interval, km/h.
    pub overtaker_kmh: Interval,
    /// Speed interval shared by the passed vehicles, km/h.
    pub passed_kmh: Interval,
    /// Oncoming vehicle speed interval, km/h.
    pub oncoming_kmh: Interval,
    /// Gap overtaker → nearest same-lane vehicle, meters.
    pub d12_m: Interval,
    /// Gap overtaker → farthest same-lane vehicle, meters.
    pub d13_m: Interval,
    /// Oncoming vehicle distance relative to the communication range, meters.
    pub oncoming_offset_m: Interval,
    /// Maneuvers per range point.
    pub count: u32,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.overtaker_kmh.validate("overtaker_kmh")?;
        self.passed_kmh.validate("passed_kmh")?;
        self.oncoming_kmh.validate("oncoming_kmh")?;
        self.d12_m.validate("d12_m")?;
        self.d13_m.validate("d13_m")?;
        self.oncoming_offset_m.validate("oncoming_offset_m")?;
        if self.count == 0 {
            return Err(HarnessError::ZeroCount);
        }
        Ok(())
    }
}

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / 3.6
}

/// The six documented study configurations.
///
/// The three velocity studies vary the speed bands and share the short gap
/// intervals; the three distance studies vary the gap bands at a fixed
/// 60–70 km/h over 40–50 km/h speed profile, which keeps the pass brisk and
/// puts the mis-prediction drop in the middle of the range grid. All place
/// the oncoming vehicle within ±15 m of the communication boundary.
pub fn builtin_specs() -> Vec<ScenarioSpec> {
    let offset = Interval(-15.0, 15.0);
    let short_gaps = (Interval(1.0, 8.0), Interval(9.0, 17.0));
    vec![
        ScenarioSpec {
            name: "low-velocity".into(),
            overtaker_kmh: Interval(50.0, 60.0),
            passed_kmh: Interval(40.0, 50.0),
            oncoming_kmh: Interval(50.0, 60.0),
            d12_m: short_gaps.0,
            d13_m: short_gaps.1,
            oncoming_offset_m: offset,
            count: 500,
            seed: 101,
        },
        ScenarioSpec {
            name: "medium-velocity".into(),
            overtaker_kmh: Interval(70.0, 80.0),
            passed_kmh: Interval(60.0, 70.0),
            oncoming_kmh: Interval(70.0, 80.0),
            d12_m: short_gaps.0,
            d13_m: short_gaps.1,
            oncoming_offset_m: offset,
            count: 500,
            seed: 102,
        },
        ScenarioSpec {
            name: "high-velocity".into(),
            overtaker_kmh: Interval(100.0, 120.0),
            passed_kmh: Interval(80.0, 90.0),
            oncoming_kmh: Interval(100.0, 120.0),
            d12_m: short_gaps.0,
            d13_m: short_gaps.1,
            oncoming_offset_m: offset,
            count: 500,
            seed: 103,
        },
        ScenarioSpec {
            name: "short-distance".into(),
            overtaker_kmh: Interval(60.0, 70.0),
            passed_kmh: Interval(40.0, 50.0),
            oncoming_kmh: Interval(60.0, 70.0),
            d12_m: Interval(1.0, 8.0),
            d13_m: Interval(9.0, 17.0),
            oncoming_offset_m: offset,
            count: 500,
            seed: 201,
        },
        ScenarioSpec {
            name: "medium-distance".into(),
            overtaker_kmh: Interval(60.0, 70.0),
            passed_kmh: Interval(40.0, 50.0),
            oncoming_kmh: Interval(60.0, 70.0),
            d12_m: Interval(5.0, 14.0),
            d13_m: Interval(15.0, 24.0),
            oncoming_offset_m: offset,
            count: 500,
            seed: 202,
        },
        ScenarioSpec {
            name: "long-distance".into(),
            overtaker_kmh: Interval(60.0, 70.0),
            passed_kmh: Interval(40.0, 50.0),
            oncoming_kmh: Interval(60.0, 70.0),
            d12_m: Interval(10.0, 34.0),
            d13_m: Interval(35.0, 44.0),
            oncoming_offset_m: offset,
            count: 500,
            seed: 203,
        },
    ]
}

/// Looks a built-in spec up by name.
pub fn builtin_spec(name: &str) -> Option<ScenarioSpec> {
    builtin_specs().into_iter().find(|s| s.name == name)
}

const GENERATION_ATTEMPTS: u32 = 64;

/// Draws one scenario from the spec for a given communication range.
/// Speeds and gaps come from the spec intervals (km/h converted to m/s);
/// the oncoming vehicle sits at `comm_range + offset`. Infeasible draws
/// (ordering violations) are redrawn a bounded number of times.
pub fn generate_scenario(
    spec: &ScenarioSpec,
    comm_range: f64,
    rng: &mut ChaCha8Rng,
) -> Result<OvertakeScenario, HarnessError> {
    spec.validate()?;
    for _ in 0..GENERATION_ATTEMPTS {
        let v1 = kmh_to_ms(spec.overtaker_kmh.sample(rng));
        let v23 = kmh_to_ms(spec.passed_kmh.sample(rng));
        let v4 = kmh_to_ms(spec.oncoming_kmh.sample(rng));
        let d12 = spec.d12_m.sample(rng);
        let d13 = spec.d13_m.sample(rng);
        let d14 = comm_range + spec.oncoming_offset_m.sample(rng);
        if d13 < d12 || d14 <= 0.0 {
            continue;
        }
        let make = |id: u32, pos: f64, lane: Lane, speed: f64| {
            VehicleState::new(NodeId(id), pos, lane, speed, GENERATED_VEHICLE_LENGTH)
        };
        let scenario = make(0, 0.0, Lane::Right, v1)
            .and_then(|c1| {
                Ok((
                    c1,
                    make(1, d12, Lane::Right, v23)?,
                    make(2, d13, Lane::Right, v23)?,
                    make(3, d14, Lane::Opposite, v4)?,
                ))
            })
            .and_then(|(c1, c2, c3, c4)| {
                OvertakeScenario::new(
                    c1,
                    c2,
                    c3,
                    Some(c4),
                    RoadGeometry::default(),
                    DEFAULT_LANE_CHANGE_ANGLE,
                )
            });
        if let Ok(s) = scenario {
            return Ok(s);
        }
    }
    Err(HarnessError::GenerationFailed(GENERATION_ATTEMPTS))
}

/// How a simulated maneuver ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverOutcome {
    /// False when the overtaker cannot out-run the lead traffic.
    pub completed: bool,
    /// Maneuver duration when completed, seconds.
    pub duration_s: f64,
    /// Time the head-on gap closed while the overtaker was off its lane.
    pub collision_s: Option<f64>,
}

/// Fine-step forward simulation of the full maneuver.
///
/// The overtaker steers out at the scenario angle until it has covered the
/// lane width laterally, passes at full speed until its relative advance
/// over the farthest passed vehicle covers the planned opposite-lane
/// distance (gap at the end of the steer-out plus its own length, the
/// safety gap, and the lane-change-induced gap change), then steers back.
/// The run stops at the first instant the head-on gap to the oncoming
/// vehicle reaches zero while the overtaker is off its lane.
pub fn simulate_maneuver(s: &OvertakeScenario, dt: f64) -> ManeuverOutcome {
    let v1 = s.c1.speed;
    let v23 = s.c2.speed;
    let v4 = s.c4.as_ref().map_or(0.0, |c| c.speed);
    if v1 <= v23 {
        return ManeuverOutcome {
            completed: false,
            duration_s: f64::INFINITY,
            collision_s: None,
        };
    }
    let (sin_t, cos_t) = (s.theta.sin(), s.theta.cos());
    let lane_width = s.road.lane_width;

    let mut t = 0.0f64;
    let mut x1 = s.c1.pos_x;
    let mut x2 = s.c2.pos_x;
    let mut x3 = s.c3.pos_x;
    let mut x4 = s.c4.as_ref().map(|c| c.pos_x);
    let mut y = 0.0f64;

    let d12_start = x2 - x1;

    let collision = |x1: f64, x4: Option<f64>, t: f64| -> bool {
        matches!(x4, Some(x4) if x4 - x1 <= 0.0) && t > 0.0
    };

    // Phase 1: steer out.
    while y < lane_width {
        x1 += v1 * cos_t * dt;
        y += v1 * sin_t * dt;
        x2 += v23 * dt;
        x3 += v23 * dt;
        if let Some(x4) = x4.as_mut() {
            *x4 -= v4 * dt;
        }
        t += dt;
        if collision(x1, x4, t) {
            return ManeuverOutcome {
                completed: false,
                duration_s: t,
                collision_s: Some(t),
            };
        }
    }

    // The plan is fixed at the end of the steer-out: clear the measured gap
    // to the farthest vehicle, the overtaker's own body, the safety gap and
    // the lane-change-induced gap change, all relative to the lead traffic.
    let delta = ((x2 - x1) - d12_start).abs();
    let target_advance = (x3 - x1) + s.c1.length + s.road.safety_gap + delta;
    let advance_base = x1 - x3;

    // Phase 2: pass at full speed on the opposite lane. Only the overtaker,
    // the farthest passed vehicle and the oncoming vehicle matter from here.
    while (x1 - x3) - advance_base < target_advance {
        x1 += v1 * dt;
        x3 += v23 * dt;
        if let Some(x4) = x4.as_mut() {
            *x4 -= v4 * dt;
        }
        t += dt;
        if collision(x1, x4, t) {
            return ManeuverOutcome {
                completed: false,
                duration_s: t,
                collision_s: Some(t),
            };
        }
    }

    // Phase 3: steer back in.
    while y > 0.0 {
        x1 += v1 * cos_t * dt;
        y -= v1 * sin_t * dt;
        if let Some(x4) = x4.as_mut() {
            *x4 -= v4 * dt;
        }
        t += dt;
        if collision(x1, x4, t) {
            return ManeuverOutcome {
                completed: false,
                duration_s: t,
                collision_s: Some(t),
            };
        }
    }

    ManeuverOutcome {
        completed: true,
        duration_s: t,
        collision_s: None,
    }
}

/// Ground-truth verdict: forward-simulates the full-information maneuver at
/// [`ORACLE_DT`]. Unsafe when the head-on gap closes while the overtaker is
/// off its lane, or when the pass never completes.
pub fn ground_truth(s: &OvertakeScenario) -> Verdict {
    let outcome = simulate_maneuver(s, ORACLE_DT);
    if outcome.completed && outcome.collision_s.is_none() {
        Verdict::Safe
    } else {
        Verdict::Unsafe
    }
}

/// What the censored predictor said about a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Verdict(Verdict),
    /// Even the nearest same-lane vehicle is invisible: no overtake is
    /// attempted and the scenario does not count.
    NoAttempt,
}

/// Restricts the scenario to what the overtaker can hear and assesses it.
///
/// An invisible oncoming vehicle disappears entirely (TTC becomes
/// unbounded); an invisible farthest same-lane vehicle is replaced by the
/// farthest visible one.
pub fn censored_prediction(full: &OvertakeScenario, comm_range: f64) -> Prediction {
    let visible =
        |v: &VehicleState| (v.pos_x - full.c1.pos_x).abs() <= comm_range;
    if !visible(&full.c2) {
        return Prediction::NoAttempt;
    }
    let c3 = if visible(&full.c3) {
        full.c3.clone()
    } else {
        full.c2.clone()
    };
    let c4 = full.c4.clone().filter(|c| visible(c));
    let censored = OvertakeScenario::new(
        full.c1.clone(),
        full.c2.clone(),
        c3,
        c4,
        full.road,
        full.theta,
    )
    .expect("censoring preserves scenario invariants");
    let assessment = assess_safety(&censored).expect("censored scenario assesses");
    Prediction::Verdict(assessment.verdict)
}

/// Counts for one communication-range point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangePoint {
    pub comm_range_m: f64,
    /// Scenarios in which an overtake was attempted.
    pub total: u32,
    pub mispredictions: u32,
    /// Predicted safe, actually unsafe.
    pub false_safe: u32,
    /// Predicted unsafe, actually safe.
    pub false_unsafe: u32,
}

/// Per-range-point mis-prediction counts for one spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub name: String,
    pub points: Vec<RangePoint>,
}

impl SweepResult {
    /// CSV export: header plus one row per range point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("comm_range_m,total,mispredictions,false_safe,false_unsafe\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.comm_range_m, p.total, p.mispredictions, p.false_safe, p.false_unsafe
            ));
        }
        out
    }
}

/// The documented default grid: 100 m to 1000 m in 50 m steps.
pub fn default_range_grid() -> Vec<f64> {
    range_grid(100.0, 1000.0, 50.0)
}

/// Inclusive arithmetic grid of communication ranges.
pub fn range_grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    if step <= 0.0 || max < min {
        return grid;
    }
    let mut k = 0u32;
    loop {
        let value = min + f64::from(k) * step;
        if value > max + 1e-9 {
            break;
        }
        grid.push(value);
        k += 1;
    }
    grid
}

/// splitmix64: decorrelates per-range-point seeds from the spec seed.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent seed for one range point's scenario batch.
pub fn derive_seed(seed: u64, range_index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(range_index.wrapping_add(1)))
}

/// Localization options for the predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PredictorInput {
    TrueStates,
    /// Positions perturbed with GPS noise and run through the fusion filter
    /// before prediction.
    Fused { gps_sigma: f64 },
}

fn run_point(
    spec: &ScenarioSpec,
    comm_range: f64,
    range_index: u64,
    input: PredictorInput,
) -> Result<RangePoint, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, range_index));
    let mut point = RangePoint {
        comm_range_m: comm_range,
        total: 0,
        mispredictions: 0,
        false_safe: 0,
        false_unsafe: 0,
    };
    for _ in 0..spec.count {
        let scenario = generate_scenario(spec, comm_range, &mut rng)?;
        let prediction = match input {
            PredictorInput::TrueStates => censored_prediction(&scenario, comm_range),
            PredictorInput::Fused { gps_sigma } => {
                fused_prediction(&scenario, comm_range, gps_sigma, &mut rng)
            }
        };
        let Prediction::Verdict(predicted) = prediction else {
            continue;
        };
        let truth = ground_truth(&scenario);
        point.total += 1;
        if predicted != truth {
            point.mispredictions += 1;
            match predicted {
                Verdict::Safe => point.false_safe += 1,
                Verdict::Unsafe => point.false_unsafe += 1,
            }
        }
    }
    Ok(point)
}

/// Runs the sweep over the grid, one seeded batch per range point, in
/// parallel. Identical to [`run_sweep_serial`] result-for-result.
pub fn run_sweep(spec: &ScenarioSpec, grid: &[f64]) -> Result<SweepResult, HarnessError> {
    run_sweep_inner(spec, grid, PredictorInput::TrueStates, true)
}

/// Serial variant of [`run_sweep`]; exists to pin down the parallel-equals-
/// serial contract.
pub fn run_sweep_serial(spec: &ScenarioSpec, grid: &[f64]) -> Result<SweepResult, HarnessError> {
    run_sweep_inner(spec, grid, PredictorInput::TrueStates, false)
}

/// Sweep variant in which the predictor sees Kalman-fused vehicle states
/// derived from GPS-noisy positions instead of true states. Quantifies what
/// the localization filter does to the mis-prediction counts.
pub fn run_sweep_with_localization(
    spec: &ScenarioSpec,
    grid: &[f64],
    gps_sigma: f64,
) -> Result<SweepResult, HarnessError> {
    run_sweep_inner(spec, grid, PredictorInput::Fused { gps_sigma }, true)
}

fn run_sweep_inner(
    spec: &ScenarioSpec,
    grid: &[f64],
    input: PredictorInput,
    parallel: bool,
) -> Result<SweepResult, HarnessError> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let points: Result<Vec<RangePoint>, HarnessError> = if parallel {
        grid.par_iter()
            .enumerate()
            .map(|(i, &r)| run_point(spec, r, i as u64, input))
            .collect()
    } else {
        grid.iter()
            .enumerate()
            .map(|(i, &r)| run_point(spec, r, i as u64, input))
            .collect()
    };
    Ok(SweepResult {
        name: spec.name.clone(),
        points: points?,
    })
}

const FUSION_WARMUP_STEPS: usize = 30;
const FUSION_DT: f64 = 0.1;

/// Fused (position, speed) estimate for one vehicle at decision time: the
/// vehicle's recent constant-speed history is measured with GPS noise and
/// run through the fusion filter; the final estimate stands in for the true
/// state.
fn fuse_vehicle(v: &VehicleState, gps_sigma: f64, seed: u64) -> (f64, f64) {
    let dir = v.lane.direction();
    let horizon = (FUSION_WARMUP_STEPS - 1) as f64 * FUSION_DT;
    let start = v.pos_x - v.speed * dir * horizon;
    let trajectory: Vec<TrackPoint> = (0..FUSION_WARMUP_STEPS)
        .map(|k| TrackPoint {
            control: ControlInput::zero(),
            truth: nalgebra::Vector4::new(
                start + v.speed * dir * (k as f64 * FUSION_DT),
                0.0,
                v.speed * dir,
                0.0,
            ),
        })
        .collect();
    let out = localization::track(&trajectory, FUSION_DT, gps_sigma, seed)
        .expect("fusion trajectory is valid");
    let last = &out.fused.last().expect("non-empty trajectory").s;
    (last[0], (last[2] * dir).max(0.0))
}

/// Censored prediction over fused states instead of true ones.
///
/// Visibility still follows the true geometry (radios do not care about the
/// receiver's position estimate); the arithmetic uses fused values. The two
/// passed vehicles share the mean of their fused speeds so the model
/// assumption keeps holding, and estimates that scramble the vehicle
/// ordering mean no overtake is attempted.
fn fused_prediction(
    full: &OvertakeScenario,
    comm_range: f64,
    gps_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Prediction {
    let visible =
        |v: &VehicleState| (v.pos_x - full.c1.pos_x).abs() <= comm_range;
    if !visible(&full.c2) {
        return Prediction::NoAttempt;
    }
    let mut fuse = |v: &VehicleState| fuse_vehicle(v, gps_sigma, rng.random());

    let (c1_pos, c1_speed) = fuse(&full.c1);
    let (c2_pos, c2_speed) = fuse(&full.c2);
    let true_c3 = if visible(&full.c3) { &full.c3 } else { &full.c2 };
    let (c3_pos, c3_speed) = if true_c3.id == full.c2.id {
        (c2_pos, c2_speed)
    } else {
        fuse(true_c3)
    };
    let c4 = full.c4.as_ref().filter(|c| visible(c)).map(|c| {
        let (pos, speed) = fuse(c);
        (c.id, pos, speed, c.length)
    });

    // Rebuild the roles from the estimates.
    let passed_speed = 0.5 * (c2_speed + c3_speed);
    let (near_pos, far_pos) = if c2_pos <= c3_pos {
        (c2_pos, c3_pos)
    } else {
        (c3_pos, c2_pos)
    };
    if near_pos <= c1_pos {
        // The estimate puts the lead traffic behind the overtaker; nothing
        // to overtake from where the predictor stands.
        return Prediction::NoAttempt;
    }
    let build = || -> Result<OvertakeScenario, crate::kinematics::KinematicsError> {
        let c1 = VehicleState::new(full.c1.id, c1_pos, Lane::Right, c1_speed, full.c1.length)?;
        let c2 = VehicleState::new(full.c2.id, near_pos, Lane::Right, passed_speed, full.c2.length)?;
        let c3 = VehicleState::new(true_c3.id, far_pos, Lane::Right, passed_speed, true_c3.length)?;
        let c4 = match c4 {
            Some((id, pos, speed, length)) if pos > c1_pos => {
                Some(VehicleState::new(id, pos, Lane::Opposite, speed, length)?)
            }
            _ => None,
        };
        OvertakeScenario::new(c1, c2, c3, c4, full.road, full.theta)
    };
    match build() {
        Ok(censored) => {
            let assessment = assess_safety(&censored).expect("fused scenario assesses");
            Prediction::Verdict(assessment.verdict)
        }
        Err(_) => Prediction::NoAttempt,
    }
}

/// A full-information random scenario drawn across the studied speed and gap
/// envelopes; used by the model-versus-oracle equivalence checks.
pub fn random_scenario(rng: &mut ChaCha8Rng) -> OvertakeScenario {
    loop {
        let v1_kmh = rng.random_range(50.0..120.0);
        let v23_kmh = rng.random_range(40.0..(v1_kmh - 2.0));
        let v4_kmh = rng.random_range(40.0..120.0);
        let d12 = rng.random_range(2.0..30.0);
        let d13 = d12 + rng.random_range(2.0..30.0);
        let with_oncoming = rng.random_range(0.0..1.0) < 0.9;
        let d14 = rng.random_range(50.0..1000.0);
        let length = rng.random_range(3.0..6.0);
        let make = |id: u32, pos: f64, lane: Lane, speed_kmh: f64| {
            VehicleState::new(NodeId(id), pos, lane, kmh_to_ms(speed_kmh), length)
                .expect("generated vehicle is valid")
        };
        let c4 = with_oncoming.then(|| make(3, d14, Lane::Opposite, v4_kmh));
        if let Ok(s) = OvertakeScenario::new(
            make(0, 0.0, Lane::Right, v1_kmh),
            make(1, d12, Lane::Right, v23_kmh),
            make(2, d13, Lane::Right, v23_kmh),
            c4,
            RoadGeometry::default(),
            DEFAULT_LANE_CHANGE_ANGLE,
        ) {
            return s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::assess_safety;

    fn worked_scenario(c4: Option<(f64, f64)>) -> OvertakeScenario {
        let make = |id: u32, pos: f64, lane: Lane, speed: f64| {
            VehicleState::new(NodeId(id), pos, lane, speed, 4.0).unwrap()
        };
        OvertakeScenario::new(
            make(0, 0.0, Lane::Right, 27.78),
            make(1, 10.0, Lane::Right, 22.22),
            make(2, 30.0, Lane::Right, 22.22),
            c4.map(|(pos, speed)| make(3, pos, Lane::Opposite, speed)),
            RoadGeometry::default(),
            DEFAULT_LANE_CHANGE_ANGLE,
        )
        .unwrap()
    }

    #[test]
    fn close_oncoming_vehicle_is_unsafe_ground_truth() {
        // Combined closing speed 52.78 m/s over 200 m meets at ~3.8 s, well
        // inside the ~9.4 s maneuver.
        let s = worked_scenario(Some((200.0, 25.0)));
        let outcome = simulate_maneuver(&s, ORACLE_DT);
        let collision = outcome.collision_s.expect("must collide");
        assert!((collision - 3.79).abs() < 0.05, "collision at {collision}");
        assert_eq!(ground_truth(&s), Verdict::Unsafe);
    }

    #[test]
    fn no_oncoming_vehicle_is_safe_ground_truth() {
        assert_eq!(ground_truth(&worked_scenario(None)), Verdict::Safe);
    }

    #[test]
    fn slower_overtaker_never_completes() {
        let mut s = worked_scenario(None);
        s.c1.speed = 20.0;
        let outcome = simulate_maneuver(&s, ORACLE_DT);
        assert!(!outcome.completed);
        assert_eq!(ground_truth(&s), Verdict::Unsafe);
    }

    #[test]
    fn generation_is_deterministic_and_within_ranges() {
        let spec = builtin_spec("low-velocity").unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(5);
        let mut rng_b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = generate_scenario(&spec, 400.0, &mut rng_a).unwrap();
            let b = generate_scenario(&spec, 400.0, &mut rng_b).unwrap();
            assert_eq!(a, b);
            let v1 = a.c1.speed * 3.6;
            let v23 = a.c2.speed * 3.6;
            assert!((50.0..60.0).contains(&v1), "overtaker speed {v1}");
            assert!((40.0..50.0).contains(&v23), "passed speed {v23}");
            assert_eq!(a.c2.speed, a.c3.speed);
            let d12 = a.gap_to_nearest();
            let d13 = a.gap_to_farthest();
            assert!((1.0..8.0).contains(&d12), "d12 {d12}");
            assert!((9.0..17.0).contains(&d13), "d13 {d13}");
            let d14 = a.gap_to_oncoming().unwrap();
            assert!((385.0..415.0).contains(&d14), "d14 {d14}");
        }
    }

    #[test]
    fn short_distance_spec_draws_documented_gaps() {
        let spec = builtin_spec("short-distance").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = generate_scenario(&spec, 300.0, &mut rng).unwrap();
            assert!((1.0..8.0).contains(&s.gap_to_nearest()));
            assert!((9.0..17.0).contains(&s.gap_to_farthest()));
        }
    }

    #[test]
    fn censoring_substitutes_farthest_visible_vehicle() {
        let make = |id: u32, pos: f64, lane: Lane, speed: f64| {
            VehicleState::new(NodeId(id), pos, lane, speed, 4.0).unwrap()
        };
        let full = OvertakeScenario::new(
            make(0, 0.0, Lane::Right, 27.78),
            make(1, 40.0, Lane::Right, 22.22),
            make(2, 160.0, Lane::Right, 22.22),
            Some(make(3, 600.0, Lane::Opposite, 25.0)),
            RoadGeometry::default(),
            DEFAULT_LANE_CHANGE_ANGLE,
        )
        .unwrap();
        // Range 100: c3 (160 m) and c4 (600 m) are invisible; the predictor
        // plans against c2 only, with an unbounded TTC.
        let censored_verdict = censored_prediction(&full, 100.0);
        let shortened = OvertakeScenario::new(
            full.c1.clone(),
            full.c2.clone(),
            full.c2.clone(),
            None,
            full.road,
            full.theta,
        )
        .unwrap();
        let expected = assess_safety(&shortened).unwrap().verdict;
        assert_eq!(censored_verdict, Prediction::Verdict(expected));
        // Even c2 out of range: no attempt.
        assert_eq!(censored_prediction(&full, 30.0), Prediction::NoAttempt);
    }

    #[test]
    fn sweep_counts_are_consistent_and_reproducible() {
        let mut spec = builtin_spec("medium-velocity").unwrap();
        spec.count = 60;
        let grid = range_grid(100.0, 400.0, 100.0);
        let a = run_sweep(&spec, &grid).unwrap();
        let b = run_sweep(&spec, &grid).unwrap();
        assert_eq!(a, b);
        for p in &a.points {
            assert_eq!(p.mispredictions, p.false_safe + p.false_unsafe);
            assert!(p.mispredictions <= p.total);
            assert!(p.total <= spec.count);
        }
    }

    #[test]
    fn parallel_and_serial_sweeps_agree_exactly() {
        let mut spec = builtin_spec("long-distance").unwrap();
        spec.count = 80;
        let grid = range_grid(100.0, 700.0, 150.0);
        assert_eq!(
            run_sweep(&spec, &grid).unwrap(),
            run_sweep_serial(&spec, &grid).unwrap()
        );
    }

    #[test]
    fn invisible_oncoming_vehicle_forces_false_safes() {
        // Oncoming vehicle planted 60-100 m beyond a 100 m range: invisible
        // to the predictor, and close enough (TTC below any possible TTO)
        // that the maneuver is truly unsafe.
        let spec = ScenarioSpec {
            name: "forced-censoring".into(),
            overtaker_kmh: Interval(60.0, 70.0),
            passed_kmh: Interval(40.0, 50.0),
            oncoming_kmh: Interval(60.0, 70.0),
            d12_m: Interval(5.0, 14.0),
            d13_m: Interval(15.0, 24.0),
            oncoming_offset_m: Interval(60.0, 100.0),
            count: 100,
            seed: 7,
        };
        let result = run_sweep(&spec, &[100.0]).unwrap();
        let point = &result.points[0];
        assert!(point.false_safe > 0);
        assert!(point.false_safe as f64 >= 0.9 * point.total as f64);
    }

    #[test]
    fn default_grid_has_nineteen_points() {
        let grid = default_range_grid();
        assert_eq!(grid.len(), 19);
        assert_eq!(grid[0], 100.0);
        assert_eq!(grid[18], 1000.0);
    }

    #[test]
    fn csv_has_header_and_one_row_per_point() {
        let mut spec = builtin_spec("low-velocity").unwrap();
        spec.count = 10;
        let result = run_sweep(&spec, &[100.0, 500.0]).unwrap();
        let csv = result.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "comm_range_m,total,mispredictions,false_safe,false_unsafe");
        assert!(lines[1].starts_with("100,"));
        assert!(lines[2].starts_with("500,"));
    }

    #[test]
    fn localization_sweep_runs_and_reports() {
        let mut spec = builtin_spec("medium-distance").unwrap();
        spec.count = 25;
        let result = run_sweep_with_localization(&spec, &[200.0, 600.0], 7.0).unwrap();
        assert_eq!(result.points.len(), 2);
        for p in &result.points {
            assert!(p.total <= spec.count);
            assert_eq!(p.mispredictions, p.false_safe + p.false_unsafe);
        }
        // Deterministic too.
        let again = run_sweep_with_localization(&spec, &[200.0, 600.0], 7.0).unwrap();
        assert_eq!(result, again);
    }

    #[test]
    fn spec_json_round_trips() {
        let spec = builtin_spec("high-velocity").unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
