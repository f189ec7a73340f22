//! Line-oriented scene text format (`scene v1`).

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Aabb, Building, Scene, Vec3};

const HEADER: &str = "scene v1";

#[derive(Debug, Error, PartialEq)]
pub enum SceneParseError {
    #[error("missing scene header")]
    MissingHeader,
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("scene is missing a `{0}` record")]
    MissingRecord(&'static str),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Formats like C's `%.9g`.
pub(crate) fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let fixed = format!("{x:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

fn fmt_vec(v: Vec3) -> String {
    format!("{},{},{}", fmt_num(v.x), fmt_num(v.y), fmt_num(v.z))
}

pub fn scene_to_string(scene: &Scene) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&format!("ground reflectance={}\n", fmt_num(scene.ground_reflectance)));
    out.push_str(&format!(
        "bounds min={} max={}\n",
        fmt_vec(scene.bounds.min),
        fmt_vec(scene.bounds.max)
    ));
    for b in &scene.buildings {
        out.push_str(&format!(
            "building min={} max={} reflectance={}\n",
            fmt_vec(b.min_corner),
            fmt_vec(b.max_corner),
            fmt_num(b.reflectance)
        ));
    }
    for r in &scene.receivers {
        out.push_str(&format!("receiver pos={}\n", fmt_vec(*r)));
    }
    out.push_str(&format!("uav start={}\n", fmt_vec(scene.uav_start)));
    out
}

pub fn write_scene(scene: &Scene, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, scene_to_string(scene))
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<Scene, SceneParseError> {
    let text = fs::read_to_string(path).map_err(|e| SceneParseError::Io(e.to_string()))?;
    scene_from_str(&text)
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, rest: &[&'a str]) -> Result<Self, SceneParseError> {
        let mut pairs = Vec::new();
        for tok in rest {
            let (k, v) = tok.split_once('=').ok_or_else(|| SceneParseError::Record {
                line,
                message: format!("expected key=value, got `{tok}`"),
            })?;
            pairs.push((k, v));
        }
        Ok(Self { line, pairs })
    }

    fn raw(&self, key: &str) -> Result<&'a str, SceneParseError> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| self.err(key, "missing"))
    }

    fn err(&self, field: &str, message: impl Into<String>) -> SceneParseError {
        SceneParseError::Field {
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn expect_only(&self, keys: &[&str]) -> Result<(), SceneParseError> {
        match self.pairs.iter().find(|(k, _)| !keys.contains(k)) {
            Some((k, _)) => Err(self.err(k, "unknown field")),
            None => Ok(()),
        }
    }

    fn num(&self, key: &str) -> Result<f64, SceneParseError> {
        let raw = self.raw(key)?;
        let x: f64 = raw
            .parse()
            .map_err(|_| self.err(key, format!("`{raw}` is not a number")))?;
        if !x.is_finite() {
            return Err(self.err(key, "must be finite"));
        }
        Ok(x)
    }

    fn reflectance(&self, key: &str) -> Result<f64, SceneParseError> {
        let r = self.num(key)?;
        if !(0.0..=1.0).contains(&r) {
            return Err(self.err(key, format!("{r} outside [0, 1]")));
        }
        Ok(r)
    }

    fn vec(&self, key: &str) -> Result<Vec3, SceneParseError> {
        let raw = self.raw(key)?;
        let parts: Vec<&str> = raw.split(',').collect();
        if parts.len() != 3 {
            return Err(self.err(key, format!("expected x,y,z, got `{raw}`")));
        }
        let mut xyz = [0.0f64; 3];
        for (slot, p) in xyz.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| self.err(key, format!("`{p}` is not a number")))?;
            if !slot.is_finite() {
                return Err(self.err(key, "must be finite"));
            }
        }
        Ok(Vec3::new(xyz[0], xyz[1], xyz[2]))
    }
}

pub fn scene_from_str(text: &str) -> Result<Scene, SceneParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    match lines.next() {
        Some((_, HEADER)) => {}
        Some((line, other)) if other.starts_with("scene") => {
            return Err(SceneParseError::Record {
                line,
                message: format!("unsupported header `{other}`"),
            })
        }
        _ => return Err(SceneParseError::MissingHeader),
    }

    let mut ground = None;
    let mut bounds = None;
    let mut uav = None;
    let mut buildings = Vec::new();
    let mut receivers = Vec::new();

    for (line, text) in lines {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let fields = Fields::parse(line, &tokens[1..])?;
        match tokens[0] {
            "ground" => {
                fields.expect_only(&["reflectance"])?;
                ground = Some(fields.reflectance("reflectance")?);
            }
            "bounds" => {
                fields.expect_only(&["min", "max"])?;
                bounds = Some(Aabb::new(fields.vec("min")?, fields.vec("max")?));
            }
            "building" => {
                fields.expect_only(&["min", "max", "reflectance"])?;
                buildings.push(Building {
                    min_corner: fields.vec("min")?,
                    max_corner: fields.vec("max")?,
                    reflectance: fields.reflectance("reflectance")?,
                });
            }
            "receiver" => {
                fields.expect_only(&["pos"])?;
                receivers.push(fields.vec("pos")?);
            }
            "uav" => {
                fields.expect_only(&["start"])?;
                uav = Some(fields.vec("start")?);
            }
            other => {
                return Err(SceneParseError::Record {
                    line,
                    message: format!("unknown record `{other}`"),
                })
            }
        }
    }

    Ok(Scene {
        buildings,
        ground_reflectance: ground.ok_or(SceneParseError::MissingRecord("ground"))?,
        receivers,
        uav_start: uav.ok_or(SceneParseError::MissingRecord("uav"))?,
        bounds: bounds.ok_or(SceneParseError::MissingRecord("bounds"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_urban_grid, UrbanGridParams};
    use proptest::prelude::*;

    #[test]
    fn number_format_matches_percent_g() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.5), "1.5");
        assert_eq!(fmt_num(45.123), "45.123");
        assert_eq!(fmt_num(-260.0), "-260");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_num(123456789.0), "123456789");
        assert_eq!(fmt_num(1234567890.0), "1.23456789e9");
        assert_eq!(fmt_num(0.0000123), "1.23e-5");
    }

    #[test]
    fn round_trip_generated_scene() {
        let scene = generate_urban_grid(&UrbanGridParams::default()).unwrap();
        let text = scene_to_string(&scene);
        assert!(text.starts_with("scene v1\nground reflectance=0.6\nbounds "));
        assert_eq!(scene_from_str(&text).unwrap(), scene);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("city.scene");
        let scene = generate_urban_grid(&UrbanGridParams::default()).unwrap();
        write_scene(&scene, &path).unwrap();
        assert_eq!(read_scene(&path).unwrap(), scene);
    }

    #[test]
    fn bad_reflectance_names_field() {
        let text = "scene v1\nground reflectance=1.3\n";
        match scene_from_str(text) {
            Err(SceneParseError::Field { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "reflectance");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_reports_missing_header() {
        let err = scene_from_str("").unwrap_err();
        assert_eq!(err.to_string(), "missing scene header");
    }

    #[test]
    fn malformed_vector_reports_field() {
        let text = "scene v1\nground reflectance=0.5\nbounds min=0,0 max=1,1,1\n";
        match scene_from_str(text) {
            Err(SceneParseError::Field { line: 3, field, .. }) => assert_eq!(field, "min"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn generated_scenes_round_trip(
            rows in 1usize..5,
            cols in 1usize..5,
            footprint in 5.0f64..80.0,
            street in 3.0f64..40.0,
            n in 1usize..6,
            seed in any::<u64>(),
        ) {
            let params = UrbanGridParams {
                rows, cols, building_footprint: footprint, street_width: street,
                n_receivers: n, seed, ..Default::default()
            };
            let scene = generate_urban_grid(&params).unwrap();
            prop_assert_eq!(scene_from_str(&scene_to_string(&scene)).unwrap(), scene);
        }
    }
}
