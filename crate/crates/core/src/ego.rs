//! Rule-based driving agent under test.
//!
//! Behaviour layers, highest priority first:
//!
//! 1. emergency brake when the ETTC to an in-path leader drops below
//!    [`EMERGENCY_ETTC`];
//! 2. gap-and-speed following of the in-path leader;
//! 3. a lane change when held below 60 % of cruise speed for 2 s and the
//!    neighbouring lane has room;
//! 4. cruise control with lane centring.
//!
//! The agent sees other vehicles as they were `reaction_delay` seconds ago;
//! its own state is read without delay.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::math::{clamp, wrap_angle};
use crate::metrics::ettc;
use crate::road::{Control, VehicleState, World, SPEED_LIMIT_60_MPH};

pub const EMERGENCY_ETTC: f64 = 1.5;
/// Bumper gap kept at standstill, metres.
pub const STANDSTILL_GAP: f64 = 2.0;
const BLOCKED_SPEED_FRACTION: f64 = 0.6;
const BLOCKED_TIME: f64 = 2.0;
const GAP_GAIN: f64 = 0.25;
const RELATIVE_SPEED_GAIN: f64 = 0.8;
const CRUISE_GAIN: f64 = 1.0;
/// Look-ahead for lane centring, seconds of travel (minimum 5 m).
const LANE_KEEP_TIME: f64 = 1.0;
/// Extra lateral clearance for counting a vehicle as in the ego's path.
const PATH_MARGIN: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgoParams {
    pub cruise_speed: f64,
    pub time_headway: f64,
    pub reaction_delay: f64,
    /// Positive magnitude of the emergency deceleration.
    pub max_brake: f64,
    pub lane_change_gap: f64,
    pub lane_keep_gain: f64,
}

impl Default for EgoParams {
    fn default() -> Self {
        EgoParams {
            cruise_speed: SPEED_LIMIT_60_MPH,
            time_headway: 1.5,
            reaction_delay: 0.5,
            max_brake: 6.0,
            lane_change_gap: 15.0,
            lane_keep_gain: 1.5,
        }
    }
}

impl EgoParams {
    pub fn validate(&self, dt: f64) -> Result<(), Error> {
        let positive = [
            self.cruise_speed,
            self.time_headway,
            self.max_brake,
            self.lane_change_gap,
            self.lane_keep_gain,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.reaction_delay >= 0.0) {
            return Err(Error::InvalidConfig("ego parameters must be positive"));
        }
        let steps = self.reaction_delay / dt;
        if (steps - libm::round(steps)).abs() > 1e-6 {
            return Err(Error::InvalidConfig(
                "ego.reaction_delay must be a multiple of dt",
            ));
        }
        Ok(())
    }

    pub fn delay_steps(&self, dt: f64) -> usize {
        libm::round(self.reaction_delay / dt) as usize
    }
}

/// State the agent carries between steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EgoMemory {
    /// Recent snapshots of the other vehicles, newest last.
    perceived: VecDeque<Vec<VehicleState>>,
    /// Lane the agent is centring on; `None` until the first decision.
    pub target_lane: Option<usize>,
    blocked_since: Option<f64>,
}

impl EgoMemory {
    pub fn new() -> Self {
        EgoMemory::default()
    }
}

fn in_path(ego: &VehicleState, other: &VehicleState) -> bool {
    (other.position.y - ego.position.y).abs() < 0.5 * (ego.width + other.width) + PATH_MARGIN
}

/// Nearest perceived vehicle ahead in the ego's path, with its longitudinal offset.
fn leader<'a>(ego: &VehicleState, others: &'a [VehicleState]) -> Option<(&'a VehicleState, f64)> {
    let dir = ego.direction();
    others
        .iter()
        .map(|o| (o, (o.position - ego.position).dot(dir)))
        .filter(|(o, ahead)| *ahead > 0.0 && in_path(ego, o))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// The leader projected onto the ego's heading line, so that the crossing
/// point of the two headings is the leader's own position.
fn snapped_to_path(ego: &VehicleState, other: &VehicleState, ahead: f64) -> VehicleState {
    VehicleState {
        position: ego.position + ego.direction() * ahead,
        heading: ego.heading,
        ..*other
    }
}

fn lane_gap_clear(world: &World, others: &[VehicleState], lane: usize, need: f64) -> bool {
    let ego = &world.ego;
    others.iter().all(|o| {
        world.road.lane_of(o.position.y) != Some(lane)
            || (o.position.x - ego.position.x).abs() - 0.5 * (o.length + ego.length) >= need
    })
}

/// One decision of the agent. Pure in `(world, params, memory)`.
pub fn ego_decide(world: &World, params: &EgoParams, memory: &mut EgoMemory) -> Control {
    let ego = &world.ego;
    let road = &world.road;
    let now = world.sim_time();

    let delay = params.delay_steps(world.dt);
    memory.perceived.push_back(world.npcs.clone());
    while memory.perceived.len() > delay + 1 {
        memory.perceived.pop_front();
    }
    let others: &[VehicleState] = memory.perceived.front().map_or(&[], Vec::as_slice);

    let current_lane = road.nearest_lane(ego.position.y);
    let target_lane = *memory.target_lane.get_or_insert(current_lane);
    let cruise = params.cruise_speed.min(road.speed_limit);

    let lead = leader(ego, others);
    let mut accel = CRUISE_GAIN * (cruise - ego.speed);
    if let Some((lv, ahead)) = lead {
        if ettc(ego, &snapped_to_path(ego, lv, ahead)) < EMERGENCY_ETTC {
            accel = -params.max_brake;
        } else {
            let gap = ahead - 0.5 * (ego.length + lv.length);
            let desired = STANDSTILL_GAP + params.time_headway * ego.speed;
            let follow = GAP_GAIN * (gap - desired) + RELATIVE_SPEED_GAIN * (lv.speed - ego.speed);
            accel = accel.min(follow);
        }
    }

    let blocked = lead.is_some() && ego.speed < BLOCKED_SPEED_FRACTION * cruise;
    if !blocked {
        memory.blocked_since = None;
    } else {
        let since = *memory.blocked_since.get_or_insert(now);
        if now - since > BLOCKED_TIME && target_lane == current_lane {
            let candidates = [current_lane + 1, current_lane.wrapping_sub(1)];
            let free = candidates.into_iter().find(|&lane| {
                lane < road.lane_count
                    && lane_gap_clear(world, others, lane, params.lane_change_gap)
            });
            if let Some(lane) = free {
                memory.target_lane = Some(lane);
                memory.blocked_since = None;
            }
        }
    }

    let target_y = road.lane_center(memory.target_lane.unwrap_or(current_lane));
    let offset = ego.position.y - target_y;
    let look_ahead = (ego.speed * LANE_KEEP_TIME).max(5.0);
    let desired_heading = -libm::atan2(offset, look_ahead);
    let steer = params.lane_keep_gain * wrap_angle(desired_heading - ego.heading);

    let accel = clamp(accel, -params.max_brake, world.limits.accel_max);
    world.limits.apply(Control { steer, accel })
}

/// Lateral offset of the ego from the centre of `lane`.
pub fn lane_offset(world: &World, lane: usize) -> f64 {
    world.ego.position.y - world.road.lane_center(lane)
}
