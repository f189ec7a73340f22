//! First-order (LOS + single specular bounce) channel model, link budget,
//! SINR and Shannon capacity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{candidate_faces, segment_occluded_counting, Face, Scene, Vec3};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Links shorter than this are rejected (near field).
pub const MIN_LINK_DISTANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    /// Hz.
    pub carrier_frequency: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Watts.
    pub tx_power: f64,
    /// dB.
    pub noise_figure: f64,
    /// Kelvin.
    pub reference_temperature: f64,
    pub max_reflection_order: u32,
    pub sinr_floor_db: f64,
    pub sinr_ceiling_db: f64,
    /// Combine path amplitudes with phase instead of summing powers.
    pub coherent: bool,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            carrier_frequency: 2.4e9,
            bandwidth: 20e6,
            tx_power: 1.0,
            noise_figure: 7.0,
            reference_temperature: 290.0,
            max_reflection_order: 1,
            sinr_floor_db: -40.0,
            sinr_ceiling_db: 60.0,
            coherent: false,
        }
    }
}

impl RadioConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("carrier_frequency", self.carrier_frequency),
            ("bandwidth", self.bandwidth),
            ("tx_power", self.tx_power),
            ("reference_temperature", self.reference_temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive and finite (got {v})"));
            }
        }
        if !(self.noise_figure >= 0.0) {
            out.push(format!("noise_figure must be >= 0 dB (got {})", self.noise_figure));
        }
        if self.max_reflection_order != 1 {
            out.push(format!(
                "max_reflection_order must be 1 (got {})",
                self.max_reflection_order
            ));
        }
        if !(self.sinr_floor_db < self.sinr_ceiling_db) {
            out.push("sinr_floor_db must be below sinr_ceiling_db".into());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathKind {
    Los,
    /// Index into [`candidate_faces`].
    Reflected(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    pub kind: PathKind,
    /// Meters.
    pub length: f64,
    /// Seconds.
    pub delay: f64,
    /// Linear power gain.
    pub power_gain: f64,
    /// Radians in [0, 2π).
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelImpulseResponse {
    /// Sorted by ascending delay.
    pub paths: Vec<PropagationPath>,
    pub tx_pos: Vec3,
    pub rx_pos: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub receiver: usize,
    /// Watts.
    pub received_power: f64,
    pub sinr_linear: f64,
    /// Clamped to the configured floor/ceiling.
    pub sinr_db: f64,
    /// Bits per second.
    pub capacity: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("link distance {distance} m between {tx} and {rx} is below the {MIN_LINK_DISTANCE} m near-field guard")]
    NearField { tx: Vec3, rx: Vec3, distance: f64 },
    #[error("receiver index {index} out of range ({count} receivers)")]
    NoSuchReceiver { index: usize, count: usize },
}

/// Loop counters of the tracer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceStats {
    /// LOS + one per candidate face, per traced link.
    pub candidates: u64,
    /// Building box tests performed by occlusion queries.
    pub box_tests: u64,
}

/// Specular point on `face` for a `tx -> rx` bounce via the image method.
/// Both endpoints must lie strictly on the outward side of the face.
pub fn reflection_point(face: &Face, tx: Vec3, rx: Vec3) -> Option<Vec3> {
    if tx == rx || face.signed_distance(tx) <= 0.0 || face.signed_distance(rx) <= 0.0 {
        return None;
    }
    let axis = face.axis;
    let mut image = tx;
    image.set(axis, 2.0 * face.offset - tx.get(axis));
    let t = (face.offset - image.get(axis)) / (rx.get(axis) - image.get(axis));
    let mut p = image + (rx - image) * t;
    p.set(axis, face.offset);
    face.extent_contains(p).then_some(p)
}

fn make_path(kind: PathKind, length: f64, amplitude_reflectance: f64, radio: &RadioConfig) -> PropagationPath {
    let lambda = radio.wavelength();
    let fspl = lambda / (4.0 * PI * length);
    PropagationPath {
        kind,
        length,
        delay: length / SPEED_OF_LIGHT,
        power_gain: fspl * fspl * amplitude_reflectance * amplitude_reflectance,
        phase: (-2.0 * PI * length / lambda).rem_euclid(2.0 * PI),
    }
}

pub fn trace_paths(
    scene: &Scene,
    tx: Vec3,
    rx: Vec3,
    radio: &RadioConfig,
) -> Result<ChannelImpulseResponse, ChannelError> {
    let faces = candidate_faces(scene);
    trace_paths_with_faces(scene, &faces, tx, rx, radio, &mut TraceStats::default())
}

/// [`trace_paths`] against a precomputed face list, accumulating loop counters.
pub fn trace_paths_with_faces(
    scene: &Scene,
    faces: &[Face],
    tx: Vec3,
    rx: Vec3,
    radio: &RadioConfig,
    stats: &mut TraceStats,
) -> Result<ChannelImpulseResponse, ChannelError> {
    let distance = tx.distance(rx);
    if !(distance >= MIN_LINK_DISTANCE) {
        return Err(ChannelError::NearField { tx, rx, distance });
    }
    let mut paths = Vec::new();

    stats.candidates += 1;
    if !segment_occluded_counting(scene, tx, rx, None, &mut stats.box_tests) {
        paths.push(make_path(PathKind::Los, distance, 1.0, radio));
    }

    for (i, face) in faces.iter().enumerate() {
        stats.candidates += 1;
        if face.reflectance == 0.0 {
            continue;
        }
        let Some(p) = reflection_point(face, tx, rx) else {
            continue;
        };
        if segment_occluded_counting(scene, tx, p, Some(face), &mut stats.box_tests)
            || segment_occluded_counting(scene, p, rx, Some(face), &mut stats.box_tests)
        {
            continue;
        }
        let length = tx.distance(p) + p.distance(rx);
        paths.push(make_path(PathKind::Reflected(i), length, face.reflectance, radio));
    }

    paths.sort_by(|a, b| a.delay.total_cmp(&b.delay));
    Ok(ChannelImpulseResponse { paths, tx_pos: tx, rx_pos: rx })
}

/// Received power in watts; see [`RadioConfig::coherent`].
pub fn received_power(cir: &ChannelImpulseResponse, radio: &RadioConfig) -> f64 {
    if cir.paths.is_empty() {
        return 0.0;
    }
    if radio.coherent {
        let (re, im) = cir.paths.iter().fold((0.0, 0.0), |(re, im), p| {
            let a = p.power_gain.sqrt();
            (re + a * p.phase.cos(), im + a * p.phase.sin())
        });
        radio.tx_power * (re * re + im * im)
    } else {
        radio.tx_power * cir.paths.iter().map(|p| p.power_gain).sum::<f64>()
    }
}

/// Thermal noise power in watts.
pub fn noise_power(radio: &RadioConfig) -> f64 {
    BOLTZMANN * radio.reference_temperature * radio.bandwidth * 10f64.powf(radio.noise_figure / 10.0)
}

/// Builds a report from signal and interference powers.
pub fn report_from_powers(receiver: usize, signal: f64, interference: f64, radio: &RadioConfig) -> LinkReport {
    let sinr_linear = signal / (noise_power(radio) + interference);
    let sinr_db = if sinr_linear > 0.0 {
        (10.0 * sinr_linear.log10()).clamp(radio.sinr_floor_db, radio.sinr_ceiling_db)
    } else {
        radio.sinr_floor_db
    };
    LinkReport {
        receiver,
        received_power: signal,
        sinr_linear,
        sinr_db,
        capacity: radio.bandwidth * (1.0 + sinr_linear).log2(),
    }
}

pub fn link_report(
    scene: &Scene,
    uav_pos: Vec3,
    receiver_index: usize,
    interferers: &[Vec3],
    radio: &RadioConfig,
) -> Result<LinkReport, ChannelError> {
    let faces = candidate_faces(scene);
    link_report_with_faces(scene, &faces, uav_pos, receiver_index, interferers, radio, &mut TraceStats::default())
}

pub fn link_report_with_faces(
    scene: &Scene,
    faces: &[Face],
    uav_pos: Vec3,
    receiver_index: usize,
    interferers: &[Vec3],
    radio: &RadioConfig,
    stats: &mut TraceStats,
) -> Result<LinkReport, ChannelError> {
    let rx = *scene
        .receivers
        .get(receiver_index)
        .ok_or(ChannelError::NoSuchReceiver {
            index: receiver_index,
            count: scene.receivers.len(),
        })?;
    let signal = received_power(&trace_paths_with_faces(scene, faces, uav_pos, rx, radio, stats)?, radio);
    let mut interference = 0.0;
    for &src in interferers {
        interference += received_power(&trace_paths_with_faces(scene, faces, src, rx, radio, stats)?, radio);
    }
    Ok(report_from_powers(receiver_index, signal, interference, radio))
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Aabb, Axis, Building, FaceOwner};

    fn open_scene(ground_reflectance: f64) -> Scene {
        Scene {
            buildings: vec![],
            ground_reflectance,
            receivers: vec![Vec3::new(10.0, 0.0, 10.0)],
            uav_start: Vec3::new(0.0, 0.0, 10.0),
            bounds: Aabb::new(Vec3::new(-100.0, -100.0, 1.0), Vec3::new(100.0, 100.0, 100.0)),
        }
    }

    fn db(x: f64) -> f64 {
        10.0 * x.log10()
    }

    #[test]
    fn ground_reflection_points() {
        let ground = candidate_faces(&open_scene(1.0))[0];
        let p = reflection_point(&ground, Vec3::new(0.0, 0.0, 10.0), Vec3::new(10.0, 0.0, 10.0)).unwrap();
        assert_eq!(p, Vec3::new(5.0, 0.0, 0.0));
        // Image at (0,0,-10); the line to (10,0,30) crosses z=0 at a quarter.
        let p = reflection_point(&ground, Vec3::new(0.0, 0.0, 10.0), Vec3::new(10.0, 0.0, 30.0)).unwrap();
        assert!((p.x - 2.5).abs() < 1e-12 && p.y == 0.0 && p.z == 0.0);
    }

    #[test]
    fn wall_behind_endpoints_gives_no_point() {
        // +X wall of a building occupying x in [4, 5]: points at x = 0 are behind it.
        let wall = Face {
            owner: FaceOwner::Building(0),
            axis: Axis::X,
            offset: 5.0,
            outward: 1.0,
            u: (0.0, 1.0),
            v: (0.0, 10.0),
            reflectance: 0.6,
        };
        assert!(reflection_point(&wall, Vec3::new(0.0, 10.0, 5.0), Vec3::new(0.0, -10.0, 5.0)).is_none());
        // Opposite sides of the plane.
        assert!(reflection_point(&wall, Vec3::new(0.0, 0.5, 5.0), Vec3::new(9.0, 0.5, 5.0)).is_none());
        // Valid geometry, but the specular point misses the 1 m wide extent.
        assert!(reflection_point(&wall, Vec3::new(9.0, 10.0, 5.0), Vec3::new(9.0, 4.0, 5.0)).is_none());
        assert!(reflection_point(&wall, Vec3::new(9.0, 1.0, 5.0), Vec3::new(9.0, 0.0, 5.0)).is_some());
    }

    #[test]
    fn friis_at_one_meter() {
        let radio = RadioConfig::default();
        let cir = trace_paths(&open_scene(0.0), Vec3::new(0.0, 0.0, 10.0), Vec3::new(1.0, 0.0, 10.0), &radio).unwrap();
        assert_eq!(cir.paths.len(), 1);
        assert_eq!(cir.paths[0].kind, PathKind::Los);
        assert!((db(cir.paths[0].power_gain) + 40.05).abs() < 0.01);
    }

    #[test]
    fn two_ray_geometry() {
        let radio = RadioConfig::default();
        let cir = trace_paths(&open_scene(1.0), Vec3::new(0.0, 0.0, 10.0), Vec3::new(10.0, 0.0, 10.0), &radio).unwrap();
        assert_eq!(cir.paths.len(), 2);
        assert_eq!(cir.paths[0].length, 10.0);
        let expected = 2.0 * 125f64.sqrt();
        assert!((cir.paths[1].length - expected).abs() / expected < 1e-12);
        assert!(cir.paths[0].delay < cir.paths[1].delay);
        assert!((cir.paths[0].delay - 10.0 / SPEED_OF_LIGHT).abs() < 1e-24);
    }

    #[test]
    fn blocked_link_has_no_paths() {
        let mut scene = open_scene(0.0);
        scene.buildings.push(Building {
            min_corner: Vec3::new(4.0, -50.0, 0.0),
            max_corner: Vec3::new(6.0, 50.0, 90.0),
            reflectance: 0.6,
        });
        let radio = RadioConfig::default();
        let cir = trace_paths(&scene, Vec3::new(0.0, 0.0, 10.0), Vec3::new(10.0, 0.0, 10.0), &radio).unwrap();
        assert!(cir.paths.is_empty());
        assert_eq!(received_power(&cir, &radio), 0.0);
        let r = link_report(&scene, Vec3::new(0.0, 0.0, 10.0), 0, &[], &radio).unwrap();
        assert_eq!(r.sinr_linear, 0.0);
        assert_eq!(r.sinr_db, radio.sinr_floor_db);
        assert_eq!(r.capacity, 0.0);
    }

    #[test]
    fn near_field_guard() {
        let radio = RadioConfig::default();
        let p = Vec3::new(0.0, 0.0, 10.0);
        let err = trace_paths(&open_scene(0.0), p, p + Vec3::new(0.005, 0.0, 0.0), &radio).unwrap_err();
        assert!(matches!(err, ChannelError::NearField { .. }));
    }

    #[test]
    fn received_power_cases() {
        let radio = RadioConfig {
            tx_power: 2.0,
            ..Default::default()
        };
        let path = |gain, phase| PropagationPath {
            kind: PathKind::Los,
            length: 1.0,
            delay: 0.0,
            power_gain: gain,
            phase,
        };
        let mut cir = ChannelImpulseResponse {
            paths: vec![],
            tx_pos: Vec3::ZERO,
            rx_pos: Vec3::ZERO,
        };
        assert_eq!(received_power(&cir, &radio), 0.0);
        cir.paths.push(path(1e-6, 0.3));
        assert_eq!(received_power(&cir, &radio), 2e-6);
        cir.paths = vec![path(1e-6, 0.0), path(1e-6, PI)];
        let coherent = RadioConfig { coherent: true, ..radio.clone() };
        assert!(received_power(&cir, &coherent) < 1e-25);
        assert!((received_power(&cir, &radio) - 4e-6).abs() < 1e-20);
    }

    #[test]
    fn noise_power_examples() {
        let radio = RadioConfig::default();
        assert!((watts_to_dbm(noise_power(&radio)) + 93.99).abs() < 0.05);
        let one_hz = RadioConfig {
            bandwidth: 1.0,
            noise_figure: 0.0,
            ..Default::default()
        };
        assert!((watts_to_dbm(noise_power(&one_hz)) + 173.98).abs() < 0.05);
        let double = RadioConfig {
            bandwidth: 2.0 * radio.bandwidth,
            ..radio.clone()
        };
        assert_eq!(noise_power(&double), 2.0 * noise_power(&radio));
    }

    #[test]
    fn report_at_unit_snr() {
        let radio = RadioConfig::default();
        let n = noise_power(&radio);
        let r = report_from_powers(0, n, 0.0, &radio);
        assert!(r.sinr_db.abs() < 1e-12);
        assert!((r.capacity - radio.bandwidth).abs() < 1e-6);
        // Interferer as strong as the signal, negligible noise.
        let r = report_from_powers(0, 1.0, 1.0, &radio);
        assert!(r.sinr_db.abs() < 1e-9);
    }

    #[test]
    fn sinr_clamped_to_ceiling() {
        let radio = RadioConfig::default();
        let r = report_from_powers(0, 1.0, 0.0, &radio);
        assert_eq!(r.sinr_db, radio.sinr_ceiling_db);
        assert!(r.sinr_linear > 1e6);
    }

    #[test]
    fn los_power_decreases_with_distance() {
        let scene = open_scene(0.0);
        let radio = RadioConfig::default();
        let tx = Vec3::new(0.0, 0.0, 10.0);
        let mut last = f64::INFINITY;
        for k in 1..200 {
            let rx = Vec3::new(0.5 * k as f64, 0.0, 10.0);
            let p = received_power(&trace_paths(&scene, tx, rx, &radio).unwrap(), &radio);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn radio_validation() {
        assert!(RadioConfig::default().problems().is_empty());
        let bad = RadioConfig {
            bandwidth: 0.0,
            sinr_floor_db: 10.0,
            sinr_ceiling_db: 0.0,
            ..Default::default()
        };
        assert_eq!(bad.problems().len(), 2);
    }
}
