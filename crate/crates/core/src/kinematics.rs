//! The 2⁺ overtaking model: a single maneuver that passes two or more
//! vehicles at once on a two-lane road.
//!
//! Four vehicles matter for the safety question: the overtaker `c1`, the
//! nearest (`c2`) and farthest (`c3`) vehicles ahead on the same lane, and
//! the nearest oncoming vehicle `c4`. The maneuver is lane-out at a fixed
//! angle, a constant-heading pass on the opposite lane, and lane-in ending a
//! configured safety gap ahead of `c3`. The verdict compares the total time
//! to overtake (TTO) against the time to collision with `c4` (TTC): the
//! maneuver is safe iff `TTO < TTC`, strictly.
//!
//! Units are SI throughout: meters, seconds, radians. Positions are
//! longitudinal reference-point coordinates on a shared axis; right-lane
//! traffic travels toward +x, opposite-lane traffic toward -x.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default lane-change angle: 10 degrees.
pub const DEFAULT_LANE_CHANGE_ANGLE: f64 = 10.0 * std::f64::consts::PI / 180.0;
/// Default lane width, meters.
pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
/// Default clearance left ahead of the passed vehicle when merging back, meters.
pub const DEFAULT_SAFETY_GAP: f64 = 10.0;
/// Sanity bound on vehicle body length, meters. Trucks can exceed 25 m.
pub const MAX_VEHICLE_LENGTH: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("{name} must be finite and non-negative, got {value}")]
    NegativeInput { name: &'static str, value: f64 },
    #[error("{name} must be finite and positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("vehicle length must lie in (0, {MAX_VEHICLE_LENGTH}] m, got {0}")]
    BadVehicleLength(f64),
    #[error("lane-change angle must lie in (0, pi/2], got {0} rad")]
    BadAngle(f64),
    #[error("overtaker speed {overtaker} m/s does not exceed the lead vehicle speed {lead} m/s")]
    SlowerThanLead { overtaker: f64, lead: f64 },
    #[error("time to collision is undefined when both vehicles are stationary")]
    StationaryPair,
    #[error("scenario invariant violated: {0}")]
    InvalidScenario(String),
}

/// Identifier of a vehicle / network node.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which of the two lanes a vehicle occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    /// Travel direction +x.
    Right,
    /// Oncoming traffic, travel direction -x.
    Opposite,
}

impl Lane {
    /// Sign of the travel direction along the shared longitudinal axis.
    pub fn direction(self) -> f64 {
        match self {
            Lane::Right => 1.0,
            Lane::Opposite => -1.0,
        }
    }
}

/// True kinematic state of one vehicle on the road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: NodeId,
    /// Longitudinal reference-point position, meters.
    pub pos_x: f64,
    pub lane: Lane,
    /// Scalar speed, meters/second.
    pub speed: f64,
    /// Body length, meters.
    pub length: f64,
}

impl VehicleState {
    pub fn new(
        id: NodeId,
        pos_x: f64,
        lane: Lane,
        speed: f64,
        length: f64,
    ) -> Result<Self, KinematicsError> {
        let v = Self {
            id,
            pos_x,
            lane,
            speed,
            length,
        };
        v.validate()?;
        Ok(v)
    }

    /// Re-checks the per-vehicle invariants; deserialized values must pass
    /// through here (or through a constructor) before use.
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !self.pos_x.is_finite() {
            return Err(KinematicsError::InvalidScenario(format!(
                "vehicle {} position must be finite, got {}",
                self.id, self.pos_x
            )));
        }
        if !self.speed.is_finite() || self.speed < 0.0 {
            return Err(KinematicsError::NegativeInput {
                name: "speed",
                value: self.speed,
            });
        }
        if !self.length.is_finite() || self.length <= 0.0 || self.length > MAX_VEHICLE_LENGTH {
            return Err(KinematicsError::BadVehicleLength(self.length));
        }
        Ok(())
    }
}

/// Road constants shared by every scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    /// Lane width: lateral distance to the center of the opposite lane, meters.
    pub lane_width: f64,
    /// Clearance left ahead of the passed vehicle after merging back, meters.
    pub safety_gap: f64,
}

impl RoadGeometry {
    pub fn new(lane_width: f64, safety_gap: f64) -> Result<Self, KinematicsError> {
        if !lane_width.is_finite() || lane_width <= 0.0 {
            return Err(KinematicsError::NonPositive {
                name: "lane_width",
                value: lane_width,
            });
        }
        if !safety_gap.is_finite() || safety_gap < 0.0 {
            return Err(KinematicsError::NegativeInput {
                name: "safety_gap",
                value: safety_gap,
            });
        }
        Ok(Self {
            lane_width,
            safety_gap,
        })
    }
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            lane_width: DEFAULT_LANE_WIDTH,
            safety_gap: DEFAULT_SAFETY_GAP,
        }
    }
}

/// The four-role vehicle configuration of a 2⁺ overtaking situation.
///
/// `c1` is the overtaker; `c2` and `c3` are the nearest and farthest
/// same-lane vehicles to be passed in one maneuver (any vehicles between
/// them are absorbed into the `c1`–`c3` gap); `c4` is the nearest oncoming
/// vehicle, absent when none is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvertakeScenario {
    pub c1: VehicleState,
    pub c2: VehicleState,
    pub c3: VehicleState,
    pub c4: Option<VehicleState>,
    pub road: RoadGeometry,
    /// Lane-change angle with the road axis, radians, in (0, pi/2).
    pub theta: f64,
}

// The model assumes the passed vehicles share one speed; allow only for
// floating-point dust between them.
const SPEED_MATCH_TOL: f64 = 1e-9;

impl OvertakeScenario {
    pub fn new(
        c1: VehicleState,
        c2: VehicleState,
        c3: VehicleState,
        c4: Option<VehicleState>,
        road: RoadGeometry,
        theta: f64,
    ) -> Result<Self, KinematicsError> {
        let s = Self {
            c1,
            c2,
            c3,
            c4,
            road,
            theta,
        };
        s.validate()?;
        Ok(s)
    }

    /// Re-checks every scenario invariant, per-vehicle ones included;
    /// deserialized scenarios must pass through here before use.
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.theta.is_finite()
            && self.theta > 0.0
            && self.theta < std::f64::consts::FRAC_PI_2)
        {
            return Err(KinematicsError::BadAngle(self.theta));
        }
        RoadGeometry::new(self.road.lane_width, self.road.safety_gap)?;
        for (role, v) in [("c1", &self.c1), ("c2", &self.c2), ("c3", &self.c3)] {
            v.validate()?;
            if v.lane != Lane::Right {
                return Err(KinematicsError::InvalidScenario(format!(
                    "{role} must be on the right lane"
                )));
            }
        }
        let (c1, c2, c3) = (&self.c1, &self.c2, &self.c3);
        if c2.pos_x <= c1.pos_x {
            return Err(KinematicsError::InvalidScenario(format!(
                "c2 must be ahead of c1 ({} <= {})",
                c2.pos_x, c1.pos_x
            )));
        }
        if c3.pos_x < c2.pos_x {
            return Err(KinematicsError::InvalidScenario(format!(
                "c3 must not be behind c2 ({} < {})",
                c3.pos_x, c2.pos_x
            )));
        }
        let speed_scale = c2.speed.abs().max(1.0);
        if (c2.speed - c3.speed).abs() > SPEED_MATCH_TOL * speed_scale {
            return Err(KinematicsError::InvalidScenario(format!(
                "c2 and c3 must share one speed, got {} and {}",
                c2.speed, c3.speed
            )));
        }
        if let Some(c4) = &self.c4 {
            c4.validate()?;
            if c4.lane != Lane::Opposite {
                return Err(KinematicsError::InvalidScenario(
                    "c4 must be on the opposite lane".into(),
                ));
            }
            if c4.pos_x <= c1.pos_x {
                return Err(KinematicsError::InvalidScenario(format!(
                    "c4 must be ahead of c1 ({} <= {})",
                    c4.pos_x, c1.pos_x
                )));
            }
        }
        Ok(())
    }

    /// Initial gap `c1`→`c2`, meters.
    pub fn gap_to_nearest(&self) -> f64 {
        self.c2.pos_x - self.c1.pos_x
    }

    /// Initial gap `c1`→`c3`, meters.
    pub fn gap_to_farthest(&self) -> f64 {
        self.c3.pos_x - self.c1.pos_x
    }

    /// Initial gap `c1`→`c4`, meters, when an oncoming vehicle is known.
    pub fn gap_to_oncoming(&self) -> Option<f64> {
        self.c4.as_ref().map(|c4| c4.pos_x - self.c1.pos_x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Safe,
    Unsafe,
}

/// Why an assessment came back `Unsafe` without a finite TTO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsafeReason {
    /// The overtaker is not faster than the vehicles it must pass; the pass
    /// never completes.
    SlowerThanLead,
}

/// The verdict together with every intermediate quantity that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyAssessment {
    /// Total time to overtake, seconds. Infinite when the pass never completes.
    pub tto_s: f64,
    /// Time to collision with the oncoming vehicle, seconds. Infinite when no
    /// oncoming vehicle is known.
    pub ttc_s: f64,
    pub verdict: Verdict,
    /// Duration of one lane change, seconds.
    pub t_lane_change_s: f64,
    /// Magnitude of the `c1`–`c2` gap change induced by the lane change, meters.
    pub delta_gap_m: f64,
    /// Total longitudinal distance covered on the opposite lane, relative to
    /// the passed vehicles, meters.
    pub opposite_lane_distance_m: f64,
    pub reason: Option<UnsafeReason>,
}

impl SafetyAssessment {
    /// A synthetic safe assessment with the given TTO and no known oncoming
    /// vehicle. Used by scripted simulations that inject intents directly;
    /// the `Safe ⇔ TTO < TTC` invariant holds since TTC is infinite.
    pub fn assume_safe(tto_s: f64) -> Self {
        Self {
            tto_s,
            ttc_s: f64::INFINITY,
            verdict: Verdict::Safe,
            t_lane_change_s: 0.0,
            delta_gap_m: 0.0,
            opposite_lane_distance_m: 0.0,
            reason: None,
        }
    }
}

/// Projected distance between two vehicles after `tau` seconds, from the
/// initial gap and the two scalar speeds.
///
/// Uses the magnitude of the speed difference, so the projected gap never
/// shrinks; closing gaps inside the TTO computation use the signed relative
/// longitudinal velocity instead.
pub fn distance_at_time(
    d0: f64,
    speed_i: f64,
    speed_j: f64,
    tau: f64,
) -> Result<f64, KinematicsError> {
    for (name, value) in [
        ("initial distance", d0),
        ("speed_i", speed_i),
        ("speed_j", speed_j),
        ("tau", tau),
    ] {
        if !value.is_finite() || value < 0.0 {
            return Err(KinematicsError::NegativeInput { name, value });
        }
    }
    Ok(d0 + tau * (speed_i - speed_j).abs())
}

/// Time for the overtaker to cover the lateral lane width at the given
/// lane-change angle: `lane_width / (speed * sin(theta))`.
pub fn lane_change_time(
    speed: f64,
    theta: f64,
    lane_width: f64,
) -> Result<f64, KinematicsError> {
    if !speed.is_finite() || speed <= 0.0 {
        return Err(KinematicsError::NonPositive {
            name: "speed",
            value: speed,
        });
    }
    if !lane_width.is_finite() || lane_width <= 0.0 {
        return Err(KinematicsError::NonPositive {
            name: "lane_width",
            value: lane_width,
        });
    }
    if !(theta.is_finite() && theta > 0.0 && theta <= std::f64::consts::FRAC_PI_2) {
        return Err(KinematicsError::BadAngle(theta));
    }
    Ok(lane_width / (speed * theta.sin()))
}

/// Intermediate quantities of the TTO computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtoBreakdown {
    /// Total time to overtake: two lane changes plus the pass, seconds.
    pub tto: f64,
    /// Duration of one lane change, seconds.
    pub t_lane_change: f64,
    /// |gap change to `c2` over the lane change|, meters.
    pub delta_gap: f64,
    /// Relative distance to cover on the opposite lane, meters.
    pub opposite_lane_distance: f64,
}

/// Lane-change profile shared by the TTO computation and the degenerate
/// slower-than-lead case: lane-change time, the gap change it induces, and
/// the resulting opposite-lane distance.
fn lane_change_profile(
    s: &OvertakeScenario,
    d12_0: f64,
    d13_0: f64,
) -> Result<(f64, f64, f64), KinematicsError> {
    let v1 = s.c1.speed;
    let t_l = lane_change_time(v1, s.theta, s.road.lane_width)?;
    // Longitudinal speed component while steering at theta.
    let v1_x = v1 * s.theta.cos();
    // Gap changes during the lane change use the signed relative longitudinal
    // velocity: the gap to the lead traffic may shrink or grow.
    let d12_end = d12_0 + (s.c2.speed - v1_x) * t_l;
    let delta_gap = (d12_end - d12_0).abs();
    let d13_end = d13_0 + (s.c3.speed - v1_x) * t_l;
    let opposite_lane_distance = d13_end + s.c1.length + s.road.safety_gap + delta_gap;
    Ok((t_l, delta_gap, opposite_lane_distance))
}

/// Total time to overtake from the initial gaps to `c2` and `c3`.
///
/// The maneuver is lane-out, pass, lane-in; both lane changes take
/// `t_lane_change`. The gap to `c3` is projected to the end of the first
/// lane change, the pass must additionally clear the overtaker's own body
/// length, the configured safety gap, and the gap change `delta_gap` induced
/// by a lane change, and proceeds at the relative speed over the passed
/// vehicles.
pub fn compute_tto(
    s: &OvertakeScenario,
    d12_0: f64,
    d13_0: f64,
) -> Result<TtoBreakdown, KinematicsError> {
    for (name, value) in [("d12_0", d12_0), ("d13_0", d13_0)] {
        if !value.is_finite() || value < 0.0 {
            return Err(KinematicsError::NegativeInput { name, value });
        }
    }
    let (v1, v3) = (s.c1.speed, s.c3.speed);
    if v1 <= v3 {
        return Err(KinematicsError::SlowerThanLead {
            overtaker: v1,
            lead: v3,
        });
    }
    let (t_lane_change, delta_gap, opposite_lane_distance) =
        lane_change_profile(s, d12_0, d13_0)?;
    let pass_time = opposite_lane_distance / (v1 - v3);
    Ok(TtoBreakdown {
        tto: 2.0 * t_lane_change + pass_time,
        t_lane_change,
        delta_gap,
        opposite_lane_distance,
    })
}

/// Time until the overtaker and the oncoming vehicle meet at their combined
/// closing speed: `d14_0 / (speed_c1 + speed_c4)`.
pub fn compute_ttc(
    d14_0: f64,
    speed_c1: f64,
    speed_c4: f64,
) -> Result<f64, KinematicsError> {
    for (name, value) in [
        ("d14_0", d14_0),
        ("speed_c1", speed_c1),
        ("speed_c4", speed_c4),
    ] {
        if !value.is_finite() || value < 0.0 {
            return Err(KinematicsError::NegativeInput { name, value });
        }
    }
    let closing = speed_c1 + speed_c4;
    if closing == 0.0 {
        return Err(KinematicsError::StationaryPair);
    }
    Ok(d14_0 / closing)
}

/// Full safety assessment of a scenario: Safe iff `TTO < TTC`, strictly.
///
/// A tie is judged unsafe. An absent oncoming vehicle yields an infinite TTC,
/// so any completable overtake is judged safe; with a limited communication
/// range this optimism is exactly what turns censored oncoming vehicles into
/// mis-predictions. An overtaker that is not faster than the lead traffic
/// yields verdict `Unsafe` with [`UnsafeReason::SlowerThanLead`].
pub fn assess_safety(s: &OvertakeScenario) -> Result<SafetyAssessment, KinematicsError> {
    let d12_0 = s.gap_to_nearest();
    let d13_0 = s.gap_to_farthest();
    let ttc_s = match (&s.c4, s.gap_to_oncoming()) {
        (Some(c4), Some(d14_0)) => compute_ttc(d14_0, s.c1.speed, c4.speed)?,
        _ => f64::INFINITY,
    };
    match compute_tto(s, d12_0, d13_0) {
        Ok(b) => Ok(SafetyAssessment {
            tto_s: b.tto,
            ttc_s,
            verdict: if b.tto < ttc_s {
                Verdict::Safe
            } else {
                Verdict::Unsafe
            },
            t_lane_change_s: b.t_lane_change,
            delta_gap_m: b.delta_gap,
            opposite_lane_distance_m: b.opposite_lane_distance,
            reason: None,
        }),
        Err(KinematicsError::SlowerThanLead { .. }) => {
            // The pass never completes: never safe, whatever the TTC.
            let (t_lane_change_s, delta_gap_m, opposite_lane_distance_m) =
                lane_change_profile(s, d12_0, d13_0)?;
            Ok(SafetyAssessment {
                tto_s: f64::INFINITY,
                ttc_s,
                verdict: Verdict::Unsafe,
                t_lane_change_s,
                delta_gap_m,
                opposite_lane_distance_m,
                reason: Some(UnsafeReason::SlowerThanLead),
            })
        }
        Err(e) => Err(e),
    }
}
