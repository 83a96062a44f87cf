//! The JSON report every command prints.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sphmask::fitter::{FitConfig, Lambdas};
use sphmask::{NmsConfig, SectorGrid};

use crate::Common;

pub const REPORT_SCHEMA: &str = "sphmask-run-report/1";

/// Grid, loss weights and thresholds in effect for the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub grid: SectorGrid,
    pub lambdas: Lambdas,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub seed: Option<u64>,
}

impl Settings {
    pub fn from_common(common: &Common, seed: Option<u64>) -> Self {
        let nms = NmsConfig::default();
        Self {
            grid: common.grid.unwrap_or_default(),
            lambdas: common.lambda.unwrap_or_default(),
            conf_threshold: common.conf_threshold.unwrap_or(nms.conf_threshold),
            nms_iou: common.nms_iou.unwrap_or(nms.iou_threshold),
            seed: seed.or(common.seed),
        }
    }

    pub fn from_config(cfg: &FitConfig, common: &Common) -> Self {
        Self {
            grid: cfg.grid,
            lambdas: cfg.lambdas,
            conf_threshold: cfg.nms.conf_threshold,
            nms_iou: cfg.nms.iou_threshold,
            seed: common.seed.or(Some(cfg.seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub command: String,
    pub version: String,
    pub settings: Settings,
    pub config: Value,
    pub outputs: Vec<String>,
    pub metrics: Value,
    /// Milliseconds per stage; only present when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

impl RunReport {
    pub fn new(command: &str, settings: Settings, config: Value, outputs: Vec<String>, metrics: Value) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            settings,
            config,
            outputs,
            metrics,
            timings_ms: None,
        }
    }

    pub fn with_timings(mut self, timings: Option<BTreeMap<String, f64>>) -> Self {
        self.timings_ms = timings;
        self
    }
}
