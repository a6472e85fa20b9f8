//! Fixed-timestep multi-lane straight road with kinematic vehicles.
//!
//! The road runs along +x. Lane `i` spans `y ∈ [i·w, (i+1)·w)`; lane 0 is the
//! rightmost lane and "left" is +y.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::math::{clamp, wrap_angle, Vec2};

/// 60 mph in m/s.
pub const SPEED_LIMIT_60_MPH: f64 = 26.8224;
/// Physics rate is 30 Hz.
pub const DEFAULT_DT: f64 = 1.0 / 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadModel {
    pub lane_count: usize,
    pub lane_width: f64,
    pub road_length: f64,
    pub speed_limit: f64,
}

impl Default for RoadModel {
    fn default() -> Self {
        RoadModel {
            lane_count: 4,
            lane_width: 3.5,
            road_length: 2000.0,
            speed_limit: SPEED_LIMIT_60_MPH,
        }
    }
}

impl RoadModel {
    pub fn validate(&self) -> Result<(), Error> {
        if self.lane_count < 2 {
            return Err(Error::InvalidConfig("road.lane_count must be at least 2"));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::InvalidConfig("road.lane_width must be positive"));
        }
        if !(self.road_length > 0.0) {
            return Err(Error::InvalidConfig("road.road_length must be positive"));
        }
        if !(self.speed_limit > 0.0) {
            return Err(Error::InvalidConfig("road.speed_limit must be positive"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.lane_count as f64 * self.lane_width
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Lane index containing lateral coordinate `y`, or `None` when `y` is off
    /// the road band. Lane boundaries belong to the upper lane.
    pub fn lane_of(&self, y: f64) -> Option<usize> {
        if !(y >= 0.0 && y < self.width()) {
            return None;
        }
        let lane = libm::floor(y / self.lane_width) as usize;
        Some(lane.min(self.lane_count - 1))
    }

    /// Nearest lane, clamping positions that are off the road.
    pub fn nearest_lane(&self, y: f64) -> usize {
        let lane = libm::floor(y / self.lane_width);
        clamp(lane, 0.0, (self.lane_count - 1) as f64) as usize
    }
}

/// Bounds applied to every control before it is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlLimits {
    /// Maximum heading rate, rad/s.
    pub steer_max: f64,
    pub accel_max: f64,
    /// Strongest deceleration; negative.
    pub brake_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        ControlLimits {
            steer_max: 0.6,
            accel_max: 4.0,
            brake_max: -8.0,
        }
    }
}

impl ControlLimits {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.steer_max > 0.0 && self.accel_max > 0.0 && self.brake_max < 0.0) {
            return Err(Error::InvalidConfig(
                "limits need steer_max > 0, accel_max > 0, brake_max < 0",
            ));
        }
        Ok(())
    }

    pub fn apply(&self, c: Control) -> Control {
        let steer = if c.steer.is_nan() {
            0.0
        } else {
            clamp(c.steer, -self.steer_max, self.steer_max)
        };
        let accel = if c.accel.is_nan() {
            0.0
        } else {
            clamp(c.accel, self.brake_max, self.accel_max)
        };
        Control { steer, accel }
    }
}

/// Heading-rate and longitudinal acceleration command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub steer: f64,
    pub accel: f64,
}

impl Control {
    pub const ZERO: Control = Control {
        steer: 0.0,
        accel: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    /// Radians from the road direction, in (−π, π].
    pub heading: f64,
    pub speed: f64,
    /// Realised acceleration over the last step.
    pub accel: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn new(position: Vec2, heading: f64, speed: f64, length: f64, width: f64) -> Self {
        VehicleState {
            position,
            heading: wrap_angle(heading),
            speed: speed.max(0.0),
            accel: 0.0,
            length,
            width,
        }
    }

    pub fn direction(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }

    pub fn velocity(&self) -> Vec2 {
        self.direction() * self.speed
    }

    pub fn footprint(&self) -> Footprint {
        Footprint {
            center: self.position,
            axis: self.direction(),
            half_length: 0.5 * self.length,
            half_width: 0.5 * self.width,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite()
            && self.accel.is_finite()
    }

    /// Integrates one step: heading first, then speed (never negative), then
    /// position along the new heading.
    pub fn integrate(&mut self, control: Control, dt: f64) {
        let previous_speed = self.speed;
        self.heading = wrap_angle(self.heading + control.steer * dt);
        self.speed = (self.speed + control.accel * dt).max(0.0);
        self.accel = (self.speed - previous_speed) / dt;
        self.position = self.position + self.direction() * (self.speed * dt);
    }
}

/// Oriented rectangle used for the separating-axis test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub center: Vec2,
    /// Unit vector along the length.
    pub axis: Vec2,
    pub half_length: f64,
    pub half_width: f64,
}

impl Footprint {
    fn lateral(&self) -> Vec2 {
        Vec2::new(-self.axis.y, self.axis.x)
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let l = self.axis * self.half_length;
        let w = self.lateral() * self.half_width;
        [
            self.center + l - w,
            self.center + l + w,
            self.center - l + w,
            self.center - l - w,
        ]
    }

    fn radius_along(&self, axis: Vec2) -> f64 {
        self.half_length * self.axis.dot(axis).abs()
            + self.half_width * self.lateral().dot(axis).abs()
    }

    /// Separating-axis overlap test. Touching edges do not count as overlap.
    pub fn overlaps(&self, other: &Footprint) -> bool {
        let d = other.center - self.center;
        let axes = [self.axis, self.lateral(), other.axis, other.lateral()];
        axes.iter()
            .all(|&axis| d.dot(axis).abs() < self.radius_along(axis) + other.radius_along(axis))
    }
}

/// What the ego ran into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Collider {
    Npc(usize),
    /// The ego left the paved road band.
    StaticObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub collider: Collider,
    pub relative_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub road: RoadModel,
    pub limits: ControlLimits,
    pub dt: f64,
    pub tick: u64,
    pub ego: VehicleState,
    pub npcs: Vec<VehicleState>,
}

impl World {
    pub fn new(
        road: RoadModel,
        limits: ControlLimits,
        dt: f64,
        ego: VehicleState,
        npcs: Vec<VehicleState>,
    ) -> Self {
        World {
            road,
            limits,
            dt,
            tick: 0,
            ego,
            npcs,
        }
    }

    /// Simulated time, computed from the integer step count.
    pub fn sim_time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    /// Pure transition: returns the world one step later.
    ///
    /// Panics if `npc_controls` does not hold one control per NPC.
    pub fn step(&self, ego_control: Control, npc_controls: &[Control]) -> World {
        let mut next = self.clone();
        next.advance(ego_control, npc_controls);
        next
    }

    /// In-place form of [`World::step`].
    pub fn advance(&mut self, ego_control: Control, npc_controls: &[Control]) {
        assert_eq!(
            npc_controls.len(),
            self.npcs.len(),
            "one control per NPC is required"
        );
        let dt = self.dt;
        self.ego.integrate(self.limits.apply(ego_control), dt);
        for (npc, &c) in self.npcs.iter_mut().zip(npc_controls) {
            npc.integrate(self.limits.apply(c), dt);
        }
        self.tick += 1;
    }

    pub fn is_finite(&self) -> bool {
        self.ego.is_finite() && self.npcs.iter().all(VehicleState::is_finite)
    }

    /// Ego collision check: lowest-index overlapping NPC first, then the road edge.
    pub fn detect_collision(&self) -> Option<CollisionEvent> {
        let ego_fp = self.ego.footprint();
        let time = self.sim_time();
        for (i, npc) in self.npcs.iter().enumerate() {
            if ego_fp.overlaps(&npc.footprint()) {
                return Some(CollisionEvent {
                    time,
                    collider: Collider::Npc(i),
                    relative_speed: (self.ego.velocity() - npc.velocity()).norm(),
                });
            }
        }
        if self.road.lane_of(self.ego.position.y).is_none() {
            return Some(CollisionEvent {
                time,
                collider: Collider::StaticObject,
                relative_speed: self.ego.speed,
            });
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn car(x: f64, y: f64, heading: f64, speed: f64) -> VehicleState {
        VehicleState::new(Vec2::new(x, y), heading, speed, 5.0, 2.0)
    }

    fn wide_limits() -> ControlLimits {
        ControlLimits {
            steer_max: 1.0,
            accel_max: 30.0,
            brake_max: -30.0,
        }
    }

    fn world_with(ego: VehicleState, npcs: Vec<VehicleState>, dt: f64) -> World {
        World::new(RoadModel::default(), wide_limits(), dt, ego, npcs)
    }

    #[test]
    fn straight_line_motion() {
        let w = world_with(car(0.0, 0.0, 0.0, 10.0), Vec::new(), 0.1);
        let next = w.step(Control::ZERO, &[]);
        assert!((next.ego.position.x - 1.0).abs() < 1e-12);
        assert_eq!(next.ego.position.y, 0.0);
        assert!((next.sim_time() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn braking_never_reverses() {
        let w = world_with(car(0.0, 0.0, 0.0, 1.0), Vec::new(), 0.1);
        let next = w.step(
            Control {
                steer: 0.0,
                accel: -20.0,
            },
            &[],
        );
        assert_eq!(next.ego.speed, 0.0);
        assert_eq!(next.ego.position, Vec2::ZERO);
    }

    #[test]
    fn axis_aligned_motion() {
        let w = world_with(car(0.0, 0.0, PI / 2.0, 5.0), Vec::new(), 0.2);
        let next = w.step(Control::ZERO, &[]);
        assert!(next.ego.position.x.abs() < 1e-12);
        assert!((next.ego.position.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn controls_are_clamped() {
        let limits = ControlLimits::default();
        let c = limits.apply(Control {
            steer: 9.0,
            accel: -99.0,
        });
        assert_eq!(c.steer, limits.steer_max);
        assert_eq!(c.accel, limits.brake_max);
        let c = limits.apply(Control {
            steer: f64::NAN,
            accel: 99.0,
        });
        assert_eq!(c.steer, 0.0);
        assert_eq!(c.accel, limits.accel_max);
    }

    #[test]
    fn lane_of_boundaries() {
        let road = RoadModel::default();
        assert_eq!(road.lane_of(1.0), Some(0));
        assert_eq!(road.lane_of(3.5), Some(1));
        assert_eq!(road.lane_of(-0.1), None);
        assert_eq!(road.lane_of(14.0), None);
        assert_eq!(road.lane_of(13.99), Some(3));
        assert_eq!(road.lane_of(f64::NAN), None);
    }

    #[test]
    fn coincident_vehicles_collide() {
        let w = world_with(
            car(0.0, 5.0, 0.0, 0.0),
            Vec::from([car(0.0, 5.0, 0.0, 0.0)]),
            0.1,
        );
        let ev = w.detect_collision().unwrap();
        assert_eq!(ev.collider, Collider::Npc(0));
    }

    #[test]
    fn distant_vehicles_do_not_collide() {
        let w = world_with(
            car(0.0, 5.0, 0.0, 0.0),
            Vec::from([car(100.0, 5.0, 0.0, 0.0)]),
            0.1,
        );
        assert!(w.detect_collision().is_none());
    }

    #[test]
    fn lowest_index_wins() {
        let w = world_with(
            car(0.0, 5.0, 0.0, 0.0),
            Vec::from([
                car(50.0, 5.0, 0.0, 0.0),
                car(1.0, 5.0, 0.0, 0.0),
                car(0.5, 5.0, 0.0, 0.0),
            ]),
            0.1,
        );
        assert_eq!(w.detect_collision().unwrap().collider, Collider::Npc(1));
    }

    #[test]
    fn leaving_the_road_is_a_static_collision() {
        let w = world_with(car(10.0, -0.5, 0.0, 3.0), Vec::new(), 0.1);
        let ev = w.detect_collision().unwrap();
        assert_eq!(ev.collider, Collider::StaticObject);
        assert_eq!(ev.relative_speed, 3.0);
    }

    #[test]
    fn touching_is_not_overlap() {
        let a = car(0.0, 0.0, 0.0, 0.0).footprint();
        let b = car(5.0, 0.0, 0.0, 0.0).footprint();
        assert!(!a.overlaps(&b));
        let c = car(4.9, 0.0, 0.0, 0.0).footprint();
        assert!(a.overlaps(&c));
    }
}
