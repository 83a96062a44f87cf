//! File formats shared by the command-line tools: scenes (see [`crate::cloud`])
//! and prediction sets with run-length-encoded masks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::ScoredMask;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub const PREDICTIONS_FORMAT: &str = "sphmask-predictions";
pub const PREDICTIONS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionsFile {
    pub format: String,
    pub version: u32,
    pub point_count: usize,
    /// Class ids the predictions are scored over.
    pub classes: Vec<i32>,
    pub predictions: Vec<ScoredMask>,
}

impl PredictionsFile {
    pub fn new(point_count: usize, classes: Vec<i32>, predictions: Vec<ScoredMask>) -> Self {
        Self {
            format: PREDICTIONS_FORMAT.to_string(),
            version: PREDICTIONS_VERSION,
            point_count,
            classes,
            predictions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != PREDICTIONS_FORMAT || self.version != PREDICTIONS_VERSION {
            return Err(Error::invalid(format!(
                "unsupported predictions file {} v{}",
                self.format, self.version
            )));
        }
        for (i, p) in self.predictions.iter().enumerate() {
            if p.mask.len() != self.point_count {
                return Err(Error::invalid(format!(
                    "prediction {i} has a mask over {} points, expected {}",
                    p.mask.len(),
                    self.point_count
                )));
            }
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(Error::invalid(format!("prediction {i} confidence {} outside [0, 1]", p.confidence)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        f.validate()?;
        Ok(f)
    }
}

pub fn read_scene(path: &Path) -> Result<PointCloud> {
    PointCloud::from_scene_str(&fs::read_to_string(path)?)
}

pub fn write_scene(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, cloud.to_scene_string()?)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Parses JSON, reporting the line of the first syntax or schema error.
pub fn from_json_str<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::BinaryMask;

    #[test]
    fn predictions_round_trip_and_validation() {
        let p = PredictionsFile::new(
            3,
            vec![0, 1],
            vec![ScoredMask { class_id: 1, confidence: 0.75, mask: BinaryMask::from_bits(vec![false, true, true]) }],
        );
        let text = to_json_string(&p).unwrap();
        assert!(text.contains("\"counts\""));
        assert_eq!(PredictionsFile::from_json(&text).unwrap(), p);

        let mut bad = p.clone();
        bad.point_count = 4;
        assert!(PredictionsFile::from_json(&to_json_string(&bad).unwrap()).is_err());
        assert!(matches!(PredictionsFile::from_json("{\n\"format\": 3\n}"), Err(Error::Parse { line: 2, .. })));
    }
}
