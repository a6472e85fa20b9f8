//! Surrogate safety metrics and the scalar fitness.
//!
//! All metrics are computed between vehicle centre points. The fitness is a
//! weighted sum of four normalised terms, each in `[0, 1]`, where a higher
//! score means a more safety-critical scenario.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::math::{clamp, Vec2};
use crate::road::{VehicleState, World};

/// Look-ahead horizon of the safety-distance term, seconds.
pub const SAFETY_DISTANCE_HORIZON: f64 = 3.0;

const PARALLEL_TOLERANCE: f64 = 1e-9;
const COLLINEAR_TOLERANCE: f64 = 1e-6;
const SPEED_EPSILON: f64 = 1e-9;
/// Below this |sin| or |cos| the tan/cot closed form is ill-conditioned and
/// the direction-vector form is used instead.
const TRIG_CONDITIONING: f64 = 1e-3;

/// Point where the two heading rays' supporting lines cross, using the
/// tangent/cotangent closed form. `None` if the form is singular here.
fn crossing_point_closed_form(p1: Vec2, theta1: f64, p2: Vec2, theta2: f64) -> Option<Vec2> {
    let (s1, c1) = (libm::sin(theta1), libm::cos(theta1));
    let (s2, c2) = (libm::sin(theta2), libm::cos(theta2));
    if [s1, c1, s2, c2].iter().any(|v| v.abs() < TRIG_CONDITIONING) {
        return None;
    }
    let (tan1, tan2) = (s1 / c1, s2 / c2);
    let (cot1, cot2) = (c1 / s1, c2 / s2);
    let x = (p2.y - p1.y + p1.x * tan1 - p2.x * tan2) / (tan1 - tan2);
    let y = (p2.x - p1.x + p1.y * cot1 - p2.y * cot2) / (cot1 - cot2);
    Some(Vec2::new(x, y))
}

fn crossing_point_vector_form(p1: Vec2, d1: Vec2, p2: Vec2, d2: Vec2) -> Vec2 {
    let s = (p2 - p1).cross(d2) / d1.cross(d2);
    p1 + d1 * s
}

/// Estimated time for the ego (`ev`) to reach the crossing point of the two
/// heading lines, travelling at its current speed.
///
/// Returns `+∞` when the headings are parallel (unless the NPC sits on the
/// ego's forward ray, in which case the NPC position is the crossing point),
/// when the crossing lies behind the ego, or when the ego is stationary.
pub fn ettc(ev: &VehicleState, npc: &VehicleState) -> f64 {
    if ev.speed < SPEED_EPSILON {
        return f64::INFINITY;
    }
    let (p1, p2) = (ev.position, npc.position);
    let (d1, d2) = (ev.direction(), npc.direction());
    let rel = p2 - p1;
    let crossing = if d1.cross(d2).abs() < PARALLEL_TOLERANCE {
        if rel.cross(d1).abs() < COLLINEAR_TOLERANCE && rel.dot(d1) >= 0.0 {
            p2
        } else {
            return f64::INFINITY;
        }
    } else {
        match crossing_point_closed_form(p1, ev.heading, p2, npc.heading) {
            Some(p) if p.is_finite() => p,
            _ => crossing_point_vector_form(p1, d1, p2, d2),
        }
    };
    let to_crossing = crossing - p1;
    if to_crossing.dot(d1) < 0.0 {
        return f64::INFINITY;
    }
    to_crossing.norm() / ev.speed
}

/// Euclidean distance between vehicle centres.
pub fn min_distance(ev: &VehicleState, npc: &VehicleState) -> f64 {
    (npc.position - ev.position).norm()
}

/// Gap the ego needs over `horizon` seconds given the relative speed and
/// acceleration. Negative when the ego is slower or decelerating relative to
/// the NPC.
pub fn safety_distance(ev: &VehicleState, npc: &VehicleState, horizon: f64) -> f64 {
    (ev.speed - npc.speed) * horizon + 0.5 * (ev.accel - npc.accel) * horizon * horizon
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpcSafety {
    /// Seconds; `+∞` is encoded as `null` in JSON.
    #[serde(with = "infinite_as_null")]
    pub ettc: f64,
    pub distance: f64,
    pub safety_distance: f64,
}

impl NpcSafety {
    pub fn violates_safety_distance(&self) -> bool {
        self.distance < self.safety_distance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySample {
    pub time: f64,
    pub npcs: Vec<NpcSafety>,
}

/// Snapshot of the three per-NPC metrics at the current world state.
pub fn sample_safety(world: &World) -> SafetySample {
    let npcs = world
        .npcs
        .iter()
        .map(|npc| NpcSafety {
            ettc: ettc(&world.ego, npc),
            distance: min_distance(&world.ego, npc),
            safety_distance: safety_distance(&world.ego, npc, SAFETY_DISTANCE_HORIZON),
        })
        .collect();
    SafetySample {
        time: world.sim_time(),
        npcs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitnessWeights {
    pub w_mettc: f64,
    pub w_md: f64,
    pub w_sd: f64,
    pub w_et: f64,
    pub ettc_cap: f64,
    pub d_cap: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        FitnessWeights {
            w_mettc: 1.0,
            w_md: 1.0,
            w_sd: 1.0,
            w_et: 1.0,
            ettc_cap: 10.0,
            d_cap: 50.0,
        }
    }
}

impl FitnessWeights {
    pub fn validate(&self) -> Result<(), Error> {
        let w = [self.w_mettc, self.w_md, self.w_sd, self.w_et];
        if w.iter().any(|v| !(*v >= 0.0)) || !(w.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidConfig(
                "fitness weights must be >= 0 with a positive sum",
            ));
        }
        if !(self.ettc_cap > 0.0 && self.d_cap > 0.0) {
            return Err(Error::InvalidConfig("fitness caps must be positive"));
        }
        Ok(())
    }

    pub fn max_score(&self) -> f64 {
        self.w_mettc + self.w_md + self.w_sd + self.w_et
    }

    pub fn scaled(&self, k: f64) -> Self {
        FitnessWeights {
            w_mettc: self.w_mettc * k,
            w_md: self.w_md * k,
            w_sd: self.w_sd * k,
            w_et: self.w_et * k,
            ..*self
        }
    }
}

/// How a scenario ended, as far as the fitness is concerned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ending {
    Collision {
        time: f64,
    },
    /// Ego left the road; a violation, but not a vehicle collision.
    OffRoad {
        time: f64,
    },
    /// Ran to the budget (or ran out of road) without a violation.
    Survived,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    /// Minimum ETTC over all samples and NPCs, capped at `ettc_cap`.
    #[serde(with = "infinite_as_null")]
    pub mettc: f64,
    /// Minimum centre distance over all samples and NPCs.
    #[serde(with = "infinite_as_null")]
    pub md: f64,
    /// Smallest margin `distance − safety_distance`; negative means violated.
    #[serde(with = "infinite_as_null")]
    pub sd_min: f64,
    /// Fraction of samples in which some NPC was closer than its safety distance.
    pub sd_violation_rate: f64,
    /// Time until the violation, or the full budget.
    pub et: f64,
    pub collided: bool,
    pub score: f64,
}

impl FitnessRecord {
    /// Fitness of an aborted (diverged) scenario.
    pub fn minimum(budget: f64) -> Self {
        FitnessRecord {
            mettc: f64::INFINITY,
            md: f64::INFINITY,
            sd_min: f64::INFINITY,
            sd_violation_rate: 0.0,
            et: budget,
            collided: false,
            score: 0.0,
        }
    }
}

/// The four normalised terms, each clamped to `[0, 1]`.
pub fn score_terms(
    mettc: f64,
    md: f64,
    sd_violation_rate: f64,
    et: f64,
    budget: f64,
    w: &FitnessWeights,
) -> [f64; 4] {
    let unit = |v: f64| clamp(v, 0.0, 1.0);
    [
        unit(1.0 - mettc / w.ettc_cap),
        unit(1.0 - md / w.d_cap),
        unit(sd_violation_rate),
        unit(1.0 - et / budget),
    ]
}

pub fn combine_score(
    mettc: f64,
    md: f64,
    sd_violation_rate: f64,
    et: f64,
    budget: f64,
    w: &FitnessWeights,
) -> f64 {
    let t = score_terms(mettc, md, sd_violation_rate, et, budget, w);
    w.w_mettc * t[0] + w.w_md * t[1] + w.w_sd * t[2] + w.w_et * t[3]
}

/// Aggregates the 6 Hz samples of a finished scenario into its fitness.
pub fn finalize_fitness(
    samples: &[SafetySample],
    ending: Ending,
    budget: f64,
    w: &FitnessWeights,
) -> Result<FitnessRecord, Error> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let entries = || samples.iter().flat_map(|s| s.npcs.iter());
    let mettc = entries().map(|e| e.ettc).fold(w.ettc_cap, f64::min);
    let md = entries().map(|e| e.distance).fold(f64::INFINITY, f64::min);
    let sd_min = entries()
        .map(|e| e.distance - e.safety_distance)
        .fold(f64::INFINITY, f64::min);
    let violating = samples
        .iter()
        .filter(|s| s.npcs.iter().any(NpcSafety::violates_safety_distance))
        .count();
    let sd_violation_rate = violating as f64 / samples.len() as f64;
    let (et, collided) = match ending {
        Ending::Collision { time } => (time, true),
        Ending::OffRoad { time } => (time, false),
        Ending::Survived => (budget, false),
    };
    Ok(FitnessRecord {
        mettc,
        md,
        sd_min,
        sd_violation_rate,
        et,
        collided,
        score: combine_score(mettc, md, sd_violation_rate, et, budget, w),
    })
}

/// Serialises non-finite floats as `null` so records stay valid JSON.
pub mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
