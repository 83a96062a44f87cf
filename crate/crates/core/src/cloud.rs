//! Labelled point clouds and the columnar scene text format.
//!
//! Scene files start with one header line
//!
//! ```text
//! # sphmask-scene v1 points=<N> instances=<M> colors=<0|1>
//! ```
//!
//! followed by exactly `N` point lines `x y z [r g b] instance_id semantic_id`.
//! `instance_id = -1` marks background. Coordinates are written with the
//! shortest representation that round-trips, so write/read is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

pub const BACKGROUND: i32 = -1;
pub const SCENE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<[u8; 3]>>,
    /// Ground-truth instance id per point, [`BACKGROUND`] for unlabelled points.
    pub instance_ids: Vec<i32>,
    /// Semantic class per point, [`BACKGROUND`] for unlabelled points.
    pub semantic_ids: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub instance_id: i32,
    pub class_id: i32,
    pub point_indices: Vec<usize>,
}

impl GroundTruthInstance {
    pub fn validate(&self, point_count: usize) -> Result<()> {
        if self.point_indices.is_empty() {
            return Err(Error::invalid(format!("instance {} has no points", self.instance_id)));
        }
        if let Some(&bad) = self.point_indices.iter().find(|&&i| i >= point_count) {
            return Err(Error::invalid(format!(
                "instance {} references point {bad} but the cloud has {point_count} points",
                self.instance_id
            )));
        }
        Ok(())
    }

    pub fn membership(&self, point_count: usize) -> Vec<bool> {
        let mut m = vec![false; point_count];
        for &i in &self.point_indices {
            m[i] = true;
        }
        m
    }
}

impl PointCloud {
    pub fn unlabeled(points: Vec<Point3>) -> Self {
        let n = points.len();
        Self {
            points,
            colors: None,
            instance_ids: vec![BACKGROUND; n],
            semantic_ids: vec![BACKGROUND; n],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        Error::check_len("instance labels", n, self.instance_ids.len())?;
        Error::check_len("semantic labels", n, self.semantic_ids.len())?;
        if let Some(c) = &self.colors {
            Error::check_len("colors", n, c.len())?;
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        Ok(())
    }

    /// Ground-truth instances, ordered by instance id.
    pub fn instances(&self) -> Result<Vec<GroundTruthInstance>> {
        self.validate()?;
        let mut by_id: BTreeMap<i32, GroundTruthInstance> = BTreeMap::new();
        for (i, (&inst, &sem)) in self.instance_ids.iter().zip(&self.semantic_ids).enumerate() {
            if inst == BACKGROUND {
                continue;
            }
            if inst < 0 {
                return Err(Error::invalid(format!("point {i} has negative instance id {inst}")));
            }
            let entry = by_id.entry(inst).or_insert_with(|| GroundTruthInstance {
                instance_id: inst,
                class_id: sem,
                point_indices: Vec::new(),
            });
            if entry.class_id != sem {
                return Err(Error::invalid(format!(
                    "instance {inst} mixes semantic classes {} and {sem}",
                    entry.class_id
                )));
            }
            entry.point_indices.push(i);
        }
        Ok(by_id.into_values().collect())
    }

    pub fn select(&self, indices: &[usize]) -> Vec<Point3> {
        indices.iter().map(|&i| self.points[i]).collect()
    }

    pub fn to_scene_string(&self) -> Result<String> {
        self.validate()?;
        let instance_count = self.instances()?.len();
        let mut out = String::with_capacity(self.len() * 48 + 64);
        writeln!(
            out,
            "# sphmask-scene v{} points={} instances={} colors={}",
            SCENE_FORMAT_VERSION,
            self.len(),
            instance_count,
            u8::from(self.colors.is_some())
        )
        .unwrap();
        for i in 0..self.len() {
            let p = self.points[i];
            write!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
            if let Some(c) = &self.colors {
                write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2]).unwrap();
            }
            writeln!(out, " {} {}", self.instance_ids[i], self.semantic_ids[i]).unwrap();
        }
        Ok(out)
    }

    pub fn from_scene_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty scene file".into(),
        })?;
        let header = parse_header(header)?;

        let mut cloud = PointCloud {
            points: Vec::with_capacity(header.points),
            colors: header.colors.then(|| Vec::with_capacity(header.points)),
            instance_ids: Vec::with_capacity(header.points),
            semantic_ids: Vec::with_capacity(header.points),
        };
        let expected_fields = if header.colors { 8 } else { 5 };

        for (idx, line) in lines {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != expected_fields {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {expected_fields} fields, found {}", fields.len()),
                });
            }
            let coord = |k: usize| -> Result<f64> {
                let v: f64 = fields[k].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad coordinate '{}'", fields[k]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse { line: line_no, message: "non-finite coordinate".into() });
                }
                Ok(v)
            };
            cloud.points.push(Point3::new(coord(0)?, coord(1)?, coord(2)?));
            if let Some(colors) = cloud.colors.as_mut() {
                let mut c = [0u8; 3];
                for (k, slot) in c.iter_mut().enumerate() {
                    *slot = fields[3 + k].parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad color component '{}'", fields[3 + k]),
                    })?;
                }
                colors.push(c);
            }
            let label = |k: usize| -> Result<i32> {
                fields[k].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad label '{}'", fields[k]),
                })
            };
            cloud.instance_ids.push(label(expected_fields - 2)?);
            cloud.semantic_ids.push(label(expected_fields - 1)?);
        }

        if cloud.len() != header.points {
            return Err(Error::Parse {
                line: 1,
                message: format!("header declares {} points, file has {}", header.points, cloud.len()),
            });
        }
        let found = cloud.instances()?.len();
        if found != header.instances {
            return Err(Error::Parse {
                line: 1,
                message: format!("header declares {} instances, file has {found}", header.instances),
            });
        }
        Ok(cloud)
    }
}

struct SceneHeader {
    points: usize,
    instances: usize,
    colors: bool,
}

fn parse_header(line: &str) -> Result<SceneHeader> {
    let err = |m: String| Error::Parse { line: 1, message: m };
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("#") || tokens.next() != Some("sphmask-scene") {
        return Err(err("missing '# sphmask-scene' header".into()));
    }
    let version = tokens.next().unwrap_or("");
    if version != format!("v{SCENE_FORMAT_VERSION}") {
        return Err(err(format!("unsupported scene format version '{version}'")));
    }
    let (mut points, mut instances, mut colors) = (None, None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field '{tok}'")))?;
        let n: usize = value
            .parse()
            .map_err(|_| err(format!("bad value for header field '{key}'")))?;
        match key {
            "points" => points = Some(n),
            "instances" => instances = Some(n),
            "colors" if n <= 1 => colors = Some(n == 1),
            _ => return Err(err(format!("unexpected header field '{tok}'"))),
        }
    }
    Ok(SceneHeader {
        points: points.ok_or_else(|| err("header lacks points=".into()))?,
        instances: instances.ok_or_else(|| err("header lacks instances=".into()))?,
        colors: colors.ok_or_else(|| err("header lacks colors=".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PointCloud {
        PointCloud {
            points: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(0.1, -2.5, 1e-7),
                Point3::new(3.0, 4.0, 5.0),
            ],
            colors: Some(vec![[1, 2, 3], [4, 5, 6], [255, 0, 9]]),
            instance_ids: vec![0, BACKGROUND, 0],
            semantic_ids: vec![2, BACKGROUND, 2],
        }
    }

    #[test]
    fn scene_text_round_trip() {
        let c = tiny();
        let text = c.to_scene_string().unwrap();
        assert!(text.starts_with("# sphmask-scene v1 points=3 instances=1 colors=1\n"));
        assert_eq!(PointCloud::from_scene_str(&text).unwrap(), c);

        let mut plain = c.clone();
        plain.colors = None;
        let text = plain.to_scene_string().unwrap();
        assert_eq!(PointCloud::from_scene_str(&text).unwrap(), plain);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# sphmask-scene v1 points=2 instances=0 colors=0\n0 0 0 -1 -1\n0 zz 0 -1 -1\n";
        match PointCloud::from_scene_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "# sphmask-scene v1 points=2 instances=0 colors=0\n0 0 0 -1\n";
        assert!(matches!(PointCloud::from_scene_str(text), Err(Error::Parse { line: 2, .. })));
        let text = "# sphmask-scene v1 points=2 instances=0 colors=0\n0 0 0 -1 -1\n";
        assert!(matches!(PointCloud::from_scene_str(text), Err(Error::Parse { line: 1, .. })));
        assert!(PointCloud::from_scene_str("x y z\n").is_err());
    }

    #[test]
    fn instances_grouped_and_checked() {
        let c = tiny();
        let inst = c.instances().unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].point_indices, vec![0, 2]);
        assert_eq!(inst[0].class_id, 2);

        let mut bad = c.clone();
        bad.semantic_ids[2] = 7;
        assert!(bad.instances().is_err());
        let empty = GroundTruthInstance { instance_id: 0, class_id: 0, point_indices: vec![] };
        assert!(empty.validate(3).is_err());
        let oob = GroundTruthInstance { instance_id: 0, class_id: 0, point_indices: vec![3] };
        assert!(oob.validate(3).is_err());
    }
}
