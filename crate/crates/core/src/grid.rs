//! The ego-relative 3×3 grid and the controller that drives NPCs between its cells.
//!
//! Cells are numbered around the ego in ring order, starting front-left:
//!
//! ```text
//!        rear      ego      front   → +x (road direction)
//!  left   7         8         1
//!         6       [ego]       2
//!  right  5         4         3
//! ```
//!
//! Two cells are adjacent when they are neighbours on that ring, so every
//! cell has exactly two adjacent cells.

use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{clamp, wrap_angle, Vec2};
use crate::road::{Control, ControlLimits, RoadModel, VehicleState, World};

/// One of the eight target cells around the ego.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct GridCell(u8);

impl GridCell {
    pub const ALL: [GridCell; 8] = [
        GridCell(1),
        GridCell(2),
        GridCell(3),
        GridCell(4),
        GridCell(5),
        GridCell(6),
        GridCell(7),
        GridCell(8),
    ];
    pub const FRONT: GridCell = GridCell(2);
    pub const RIGHT: GridCell = GridCell(4);
    pub const REAR: GridCell = GridCell(6);
    pub const LEFT: GridCell = GridCell(8);

    pub const fn new(id: u8) -> Option<GridCell> {
        if id >= 1 && id <= 8 {
            Some(GridCell(id))
        } else {
            None
        }
    }

    pub const fn id(self) -> u8 {
        self.0
    }

    /// Offset of the cell centre in cell units: (+1 = ahead, +1 = left).
    pub const fn unit_offset(self) -> (i8, i8) {
        match self.0 {
            1 => (1, 1),
            2 => (1, 0),
            3 => (1, -1),
            4 => (0, -1),
            5 => (-1, -1),
            6 => (-1, 0),
            7 => (-1, 1),
            _ => (0, 1),
        }
    }

    fn from_unit_offset(lon: i8, lat: i8) -> Option<GridCell> {
        GridCell::ALL
            .into_iter()
            .find(|c| c.unit_offset() == (lon, lat))
    }

    /// The two ring neighbours, in increasing ring direction.
    pub const fn neighbors(self) -> [GridCell; 2] {
        let prev = if self.0 == 1 { 8 } else { self.0 - 1 };
        let next = if self.0 == 8 { 1 } else { self.0 + 1 };
        [GridCell(prev), GridCell(next)]
    }

    pub fn is_adjacent(self, other: GridCell) -> bool {
        self.neighbors().contains(&other)
    }
}

impl fmt::Debug for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cell({})", self.0)
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<u8> for GridCell {
    type Error = &'static str;
    fn try_from(id: u8) -> Result<Self, Self::Error> {
        GridCell::new(id).ok_or("grid cell id must be in 1..=8")
    }
}

impl From<GridCell> for u8 {
    fn from(c: GridCell) -> u8 {
        c.0
    }
}

/// Orthogonally adjacent cells of `cell` (its two ring neighbours).
pub fn adjacent_cells(cell: GridCell) -> [GridCell; 2] {
    cell.neighbors()
}

/// A target cell paired with the speed to adopt there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionInstruction {
    pub cell: GridCell,
    pub speed: f64,
}

/// The grid anchored on the ego's current pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub origin: Vec2,
    pub heading: f64,
    /// Ego length.
    pub cell_length: f64,
    /// Width of the ego's lane.
    pub cell_width: f64,
}

impl GridFrame {
    pub fn around(ego: &VehicleState, road: &RoadModel) -> GridFrame {
        GridFrame {
            origin: ego.position,
            heading: ego.heading,
            cell_length: ego.length,
            cell_width: road.lane_width,
        }
    }

    pub fn local_offset(&self, cell: GridCell) -> Vec2 {
        let (lon, lat) = cell.unit_offset();
        Vec2::new(lon as f64 * self.cell_length, lat as f64 * self.cell_width)
    }

    /// World position of the centre of `cell`.
    pub fn cell_center(&self, cell: GridCell) -> Vec2 {
        self.origin + self.local_offset(cell).rotate(self.heading)
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotate(-self.heading)
    }

    /// Cell whose rectangle contains `p`, or `None` beyond the grid or inside
    /// the ego's own cell. Rectangles are half-open on their upper edges.
    pub fn locate(&self, p: Vec2) -> Option<GridCell> {
        let local = self.to_local(p);
        let index = |v: f64, size: f64| -> Option<i8> {
            let i = libm::floor(v / size + 0.5);
            (-1.0..=1.0).contains(&i).then_some(i as i8)
        };
        let lon = index(local.x, self.cell_length)?;
        let lat = index(local.y, self.cell_width)?;
        GridCell::from_unit_offset(lon, lat)
    }
}

/// Cell currently occupied by the NPC's centre point.
pub fn locate_cell(frame: &GridFrame, npc: &VehicleState) -> Option<GridCell> {
    frame.locate(npc.position)
}

/// True when the centre of `cell` lies on the road under `frame`.
pub fn cell_on_road(frame: &GridFrame, road: &RoadModel, cell: GridCell) -> bool {
    road.lane_of(frame.cell_center(cell).y).is_some()
}

/// Whether moving from `current` to `next` is allowed right now: the cells
/// must be ring-adjacent (or identical, a hold) and `next` must be on the road.
pub fn is_pi_valid(current: GridCell, next: GridCell, world: &World) -> bool {
    let frame = GridFrame::around(&world.ego, &world.road);
    is_transition_valid(current, next, &frame, &world.road)
}

pub fn is_transition_valid(
    current: GridCell,
    next: GridCell,
    frame: &GridFrame,
    road: &RoadModel,
) -> bool {
    (next == current || current.is_adjacent(next)) && cell_on_road(frame, road, next)
}

/// Replaces an invalid target with a random valid neighbour of `current`
/// (uniform over the valid ones), or `current` when no neighbour is valid.
/// Valid targets are returned unchanged without consuming randomness.
pub fn repair_pi<R: Rng + ?Sized>(
    current: GridCell,
    proposed: GridCell,
    world: &World,
    rng: &mut R,
) -> GridCell {
    let frame = GridFrame::around(&world.ego, &world.road);
    repair_transition(current, proposed, &frame, &world.road, rng)
}

pub fn repair_transition<R: Rng + ?Sized>(
    current: GridCell,
    proposed: GridCell,
    frame: &GridFrame,
    road: &RoadModel,
    rng: &mut R,
) -> GridCell {
    if is_transition_valid(current, proposed, frame, road) {
        return proposed;
    }
    let [a, b] = current.neighbors();
    match (cell_on_road(frame, road, a), cell_on_road(frame, road, b)) {
        (true, true) => {
            if rng.gen_bool(0.5) {
                a
            } else {
                b
            }
        }
        (true, false) => a,
        (false, true) => b,
        (false, false) => current,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    /// Heading error → heading rate.
    pub lateral: Gains,
    /// Speed error → acceleration.
    pub longitudinal: Gains,
    /// Symmetric bound on each channel's integral state.
    pub integrator_clamp: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            lateral: Gains {
                kp: 2.5,
                ki: 0.0,
                kd: 0.5,
            },
            longitudinal: Gains {
                kp: 1.5,
                ki: 0.1,
                kd: 0.0,
            },
            integrator_clamp: 5.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), crate::Error> {
        let all = [
            self.lateral.kp,
            self.lateral.ki,
            self.lateral.kd,
            self.longitudinal.kp,
            self.longitudinal.ki,
            self.longitudinal.kd,
        ];
        if all.iter().any(|g| !(*g >= 0.0)) || !(self.integrator_clamp >= 0.0) {
            return Err(crate::Error::InvalidConfig(
                "PID gains and clamp must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidChannel {
    pub integral: f64,
    pub previous_error: Option<f64>,
}

impl PidChannel {
    fn update(&mut self, error: f64, gains: Gains, clamp_bound: f64, dt: f64) -> f64 {
        self.integral = clamp(self.integral + error * dt, -clamp_bound, clamp_bound);
        let derivative = self.previous_error.map_or(0.0, |prev| (error - prev) / dt);
        self.previous_error = Some(error);
        gains.kp * error + gains.ki * self.integral + gains.kd * derivative
    }
}

/// Per-NPC controller memory, owned by whoever runs the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub lateral: PidChannel,
    pub longitudinal: PidChannel,
}

/// Minimum distance of the steering aim point ahead of the NPC.
pub const AIM_MIN_DISTANCE: f64 = 8.0;
/// Aim point distance grows with speed at this many seconds of travel.
pub const AIM_TIME: f64 = 1.0;

/// Steering and throttle toward `waypoint` at `target_speed`.
///
/// The lateral channel acts on the heading error toward an aim point at the
/// waypoint's lateral position, never closer ahead than the look-ahead
/// distance; this keeps NPCs driving forward when the waypoint is beside or
/// behind them. The longitudinal channel acts on the speed error.
pub fn pid_control(
    npc: &VehicleState,
    waypoint: Vec2,
    target_speed: f64,
    gains: &PidGains,
    state: &mut PidState,
    limits: &ControlLimits,
    dt: f64,
) -> Control {
    let to_wp = waypoint - npc.position;
    let look_ahead = (npc.speed * AIM_TIME).max(AIM_MIN_DISTANCE);
    let desired_heading = libm::atan2(to_wp.y, to_wp.x.max(look_ahead));
    let heading_error = wrap_angle(desired_heading - npc.heading);
    let steer = state
        .lateral
        .update(heading_error, gains.lateral, gains.integrator_clamp, dt);
    let accel = state.longitudinal.update(
        target_speed - npc.speed,
        gains.longitudinal,
        gains.integrator_clamp,
        dt,
    );
    limits.apply(Control { steer, accel })
}

/// Timing rules for moving through a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanTiming {
    /// Time after arriving in the target cell before the next instruction.
    pub dwell: f64,
    /// Forced advance if the target cell is not reached in this time.
    pub arrival_timeout: f64,
}

impl Default for PlanTiming {
    fn default() -> Self {
        PlanTiming {
            dwell: 1.0,
            arrival_timeout: 10.0,
        }
    }
}

/// Position within an NPC's plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanCursor {
    pub index: usize,
    /// When the current instruction became active.
    pub started_at: f64,
    /// When the NPC first reached the current target cell.
    pub arrived_at: Option<f64>,
}

impl PlanCursor {
    pub fn start(now: f64) -> Self {
        PlanCursor {
            index: 0,
            started_at: now,
            arrived_at: None,
        }
    }

    pub fn has_arrived(&self) -> bool {
        self.arrived_at.is_some()
    }
}

/// Updates the plan cursor for the current step and returns the active instruction.
///
/// The cursor moves on `timing.dwell` seconds after the NPC first entered the
/// target cell, or `timing.arrival_timeout` seconds after the instruction
/// started if the cell was never reached. The last instruction stays active.
///
/// Panics if `plan` is empty or the cursor is out of bounds.
pub fn advance_plan(
    plan: &[PositionInstruction],
    mut cursor: PlanCursor,
    npc: &VehicleState,
    frame: &GridFrame,
    now: f64,
    timing: &PlanTiming,
) -> (PositionInstruction, PlanCursor) {
    assert!(cursor.index < plan.len(), "plan cursor out of bounds");
    let target = plan[cursor.index].cell;
    if cursor.arrived_at.is_none() && locate_cell(frame, npc) == Some(target) {
        cursor.arrived_at = Some(now);
    }
    if cursor.index + 1 < plan.len() {
        let dwelt = cursor.arrived_at.is_some_and(|t| now - t >= timing.dwell);
        let timed_out =
            cursor.arrived_at.is_none() && now - cursor.started_at >= timing.arrival_timeout;
        if dwelt || timed_out {
            cursor = PlanCursor {
                index: cursor.index + 1,
                started_at: now,
                arrived_at: None,
            };
        }
    }
    (plan[cursor.index], cursor)
}
