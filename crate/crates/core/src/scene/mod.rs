//! Urban geometry: axis-aligned buildings on a ground plane, a receiver
//! roster and the UAV flight volume.

mod io;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::geometry::{Aabb, Axis, Vec3};
pub use io::{read_scene, scene_from_str, scene_to_string, write_scene, SceneParseError};

/// Height of ground receivers above the ground plane, meters.
pub const RECEIVER_HEIGHT: f64 = 1.5;

/// Receivers placed per attempt budget (attempts = this × receivers requested).
const PLACEMENT_ATTEMPTS_PER_RECEIVER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub min_corner: Vec3,
    pub max_corner: Vec3,
    /// Amplitude reflection coefficient of the four walls.
    pub reflectance: f64,
}

impl Building {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.min_corner, self.max_corner)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaceOwner {
    Ground,
    Building(usize),
}

/// A planar rectangular reflector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub owner: FaceOwner,
    /// Plane normal axis.
    pub axis: Axis,
    /// Plane position along `axis`.
    pub offset: f64,
    /// +1.0 when the outward normal points along `axis`, -1.0 otherwise.
    pub outward: f64,
    /// Extent along the first in-plane axis (see [`Axis::in_plane`]).
    pub u: (f64, f64),
    /// Extent along the second in-plane axis.
    pub v: (f64, f64),
    pub reflectance: f64,
}

impl Face {
    /// Signed distance of `p` from the plane, positive on the outward side.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        (p.get(self.axis) - self.offset) * self.outward
    }

    /// Whether an in-plane point lies within the rectangular extent.
    pub fn extent_contains(&self, p: Vec3) -> bool {
        let (ua, va) = self.axis.in_plane();
        let (u, v) = (p.get(ua), p.get(va));
        u >= self.u.0 && u <= self.u.1 && v >= self.v.0 && v <= self.v.1
    }

    fn on_face(&self, p: Vec3) -> bool {
        let tol = 1e-9 * (1.0 + self.offset.abs());
        (p.get(self.axis) - self.offset).abs() <= tol && self.extent_contains(p)
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.owner {
            FaceOwner::Ground => write!(f, "ground"),
            FaceOwner::Building(i) => write!(
                f,
                "building {i} face {}{:?}",
                if self.outward > 0.0 { '+' } else { '-' },
                self.axis
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub buildings: Vec<Building>,
    pub ground_reflectance: f64,
    pub receivers: Vec<Vec3>,
    pub uav_start: Vec3,
    /// Flight volume of the UAV. Receivers sit below it on the ground and
    /// are only required to be inside its horizontal footprint.
    pub bounds: Aabb,
}

impl Scene {
    /// Scene complexity: buildings plus candidate reflecting faces.
    pub fn complexity(&self) -> usize {
        self.buildings.len() + candidate_face_count(self)
    }

    pub fn receiver_count(&self) -> usize {
        self.receivers.len()
    }
}

/// Parameters of the procedural city block grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UrbanGridParams {
    pub rows: usize,
    pub cols: usize,
    pub building_footprint: f64,
    pub street_width: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub n_receivers: usize,
    pub seed: u64,
    pub uav_altitude: f64,
    pub flight_floor: f64,
    pub flight_ceiling: f64,
    pub building_reflectance: f64,
    pub ground_reflectance: f64,
}

impl Default for UrbanGridParams {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 4,
            building_footprint: 40.0,
            street_width: 20.0,
            height_min: 20.0,
            height_max: 70.0,
            n_receivers: 3,
            seed: 42,
            uav_altitude: 40.0,
            flight_floor: 10.0,
            flight_ceiling: 120.0,
            building_reflectance: 0.6,
            ground_reflectance: 0.6,
        }
    }
}

impl UrbanGridParams {
    /// Checks the parameter ranges; returns one message per problem.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rows < 1 || self.cols < 1 {
            out.push(format!("rows and cols must be >= 1 (got {}x{})", self.rows, self.cols));
        }
        if self.n_receivers < 1 {
            out.push("n_receivers must be >= 1".into());
        }
        if !(self.building_footprint > 0.0) {
            out.push("building_footprint must be > 0".into());
        }
        if !(self.street_width > 0.0) {
            out.push("street_width must be > 0".into());
        }
        if !(self.height_min > 0.0) || !(self.height_min <= self.height_max) {
            out.push(format!(
                "height range must satisfy 0 < min <= max (got [{}, {}])",
                self.height_min, self.height_max
            ));
        }
        if !(self.flight_floor < self.flight_ceiling) || self.flight_floor < 0.0 {
            out.push("flight floor must be >= 0 and below the ceiling".into());
        }
        if !(self.uav_altitude >= self.flight_floor && self.uav_altitude <= self.flight_ceiling) {
            out.push("uav_altitude must lie within [flight_floor, flight_ceiling]".into());
        }
        for (name, r) in [
            ("building_reflectance", self.building_reflectance),
            ("ground_reflectance", self.ground_reflectance),
        ] {
            if !(0.0..=1.0).contains(&r) {
                out.push(format!("{name} must lie in [0, 1] (got {r})"));
            }
        }
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid grid parameters: {0}")]
    InvalidParams(String),
    #[error("placed only {placed} of {requested} receivers outside buildings after {attempts} attempts")]
    ReceiverPlacement {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
}

/// Rounds to the millimetre so generated coordinates survive the
/// 9-significant-digit text format unchanged.
fn quantize(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Builds a `rows x cols` block grid with a street ring around it.
pub fn generate_urban_grid(params: &UrbanGridParams) -> Result<Scene, SceneError> {
    let problems = params.problems();
    if !problems.is_empty() {
        return Err(SceneError::InvalidParams(problems.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let f = params.building_footprint;
    let s = params.street_width;
    let pitch = f + s;

    let mut buildings = Vec::with_capacity(params.rows * params.cols);
    for r in 0..params.rows {
        for c in 0..params.cols {
            let h = if params.height_max > params.height_min {
                rng.gen_range(params.height_min..=params.height_max)
            } else {
                params.height_min
            };
            let min = Vec3::new(quantize(s + c as f64 * pitch), quantize(s + r as f64 * pitch), 0.0);
            let max = Vec3::new(quantize(min.x + f), quantize(min.y + f), quantize(h));
            buildings.push(Building {
                min_corner: min,
                max_corner: max,
                reflectance: params.building_reflectance,
            });
        }
    }

    let width = quantize(params.cols as f64 * pitch + s);
    let depth = quantize(params.rows as f64 * pitch + s);
    let bounds = Aabb::new(
        Vec3::new(0.0, 0.0, params.flight_floor),
        Vec3::new(width, depth, params.flight_ceiling),
    );

    let budget = PLACEMENT_ATTEMPTS_PER_RECEIVER * params.n_receivers;
    let mut receivers = Vec::with_capacity(params.n_receivers);
    let mut attempts = 0;
    while receivers.len() < params.n_receivers {
        if attempts == budget {
            return Err(SceneError::ReceiverPlacement {
                placed: receivers.len(),
                requested: params.n_receivers,
                attempts,
            });
        }
        attempts += 1;
        let p = Vec3::new(
            quantize(rng.gen_range(0.0..=width)),
            quantize(rng.gen_range(0.0..=depth)),
            RECEIVER_HEIGHT,
        );
        if !buildings.iter().any(|b| b.aabb().contains(p)) {
            receivers.push(p);
        }
    }

    Ok(Scene {
        buildings,
        ground_reflectance: params.ground_reflectance,
        receivers,
        uav_start: Vec3::new(quantize(width / 2.0), quantize(depth / 2.0), params.uav_altitude),
        bounds,
    })
}

fn candidate_face_count(scene: &Scene) -> usize {
    4 * scene.buildings.len() + 1
}

/// The ground plus the four walls of every building, ordered by building
/// index then face index (-X, +X, -Y, +Y).
pub fn candidate_faces(scene: &Scene) -> Vec<Face> {
    let mut faces = Vec::with_capacity(candidate_face_count(scene));
    faces.push(Face {
        owner: FaceOwner::Ground,
        axis: Axis::Z,
        offset: 0.0,
        outward: 1.0,
        u: (scene.bounds.min.x, scene.bounds.max.x),
        v: (scene.bounds.min.y, scene.bounds.max.y),
        reflectance: scene.ground_reflectance,
    });
    for (i, b) in scene.buildings.iter().enumerate() {
        let (lo, hi) = (b.min_corner, b.max_corner);
        for (axis, outward) in [(Axis::X, -1.0), (Axis::X, 1.0), (Axis::Y, -1.0), (Axis::Y, 1.0)] {
            let (ua, va) = axis.in_plane();
            faces.push(Face {
                owner: FaceOwner::Building(i),
                axis,
                offset: if outward < 0.0 { lo.get(axis) } else { hi.get(axis) },
                outward,
                u: (lo.get(ua), hi.get(ua)),
                v: (lo.get(va), hi.get(va)),
                reflectance: b.reflectance,
            });
        }
    }
    faces
}

/// Slab-method occlusion test of the open segment `(p, q)` against every
/// building box. Contact only at `p` or `q` does not occlude; contact lying
/// on `exclude` (within its extent) is ignored.
pub fn segment_occluded(scene: &Scene, p: Vec3, q: Vec3, exclude: Option<&Face>) -> bool {
    let mut tests = 0;
    segment_occluded_counting(scene, p, q, exclude, &mut tests)
}

/// [`segment_occluded`] that also counts box tests performed.
pub fn segment_occluded_counting(
    scene: &Scene,
    p: Vec3,
    q: Vec3,
    exclude: Option<&Face>,
    box_tests: &mut u64,
) -> bool {
    let d = q - p;
    for b in &scene.buildings {
        *box_tests += 1;
        let Some((t0, t1)) = b.aabb().slab_interval(p, q) else {
            continue;
        };
        if t1 <= 0.0 || t0 >= 1.0 {
            continue;
        }
        if let Some(face) = exclude {
            let a = p + d * t0.max(0.0);
            let z = p + d * t1.min(1.0);
            if face.on_face(a) && face.on_face(z) {
                continue;
            }
        }
        return true;
    }
    false
}

/// A broken scene invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |entity: String, message: String| out.push(Violation { entity, message });

    let bounds = scene.bounds;
    if !bounds.min.is_finite() || !bounds.max.is_finite() {
        push("bounds".into(), "non-finite corner".into());
    } else if Axis::ALL.iter().any(|&a| bounds.min.get(a) >= bounds.max.get(a)) {
        push("bounds".into(), "min must be below max on every axis".into());
    }
    if !(0.0..=1.0).contains(&scene.ground_reflectance) {
        push("ground".into(), format!("reflectance {} outside [0, 1]", scene.ground_reflectance));
    }
    for (i, b) in scene.buildings.iter().enumerate() {
        let name = format!("building {i}");
        if !b.min_corner.is_finite() || !b.max_corner.is_finite() {
            push(name.clone(), "non-finite corner".into());
            continue;
        }
        if Axis::ALL
            .iter()
            .any(|&a| b.min_corner.get(a) >= b.max_corner.get(a))
        {
            push(name.clone(), "min_corner must be below max_corner on every axis".into());
        }
        if b.min_corner.z != 0.0 {
            push(name.clone(), format!("must rise from the ground (min z = {})", b.min_corner.z));
        }
        if !(0.0..=1.0).contains(&b.reflectance) {
            push(name, format!("reflectance {} outside [0, 1]", b.reflectance));
        }
    }
    if scene.receivers.is_empty() {
        push("receivers".into(), "at least one receiver is required".into());
    }
    for (i, r) in scene.receivers.iter().enumerate() {
        let name = format!("receiver {i}");
        if !r.is_finite() {
            push(name, "non-finite position".into());
            continue;
        }
        if !bounds.contains_xy(*r) || r.z < 0.0 || r.z > bounds.max.z {
            push(name.clone(), format!("position {r} outside the scene footprint"));
        }
        if let Some(b) = scene.buildings.iter().position(|b| b.aabb().contains(*r)) {
            push(name, format!("position {r} inside building {b}"));
        }
    }
    if !scene.uav_start.is_finite() || !bounds.contains(scene.uav_start) {
        push("uav_start".into(), format!("position {} outside bounds", scene.uav_start));
    }
    out
}
