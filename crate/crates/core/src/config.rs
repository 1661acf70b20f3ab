//! Run configuration: JSON with a `version` field, unknown keys rejected,
//! `key=value` overrides applied on top.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::index::MatchParams;
use crate::pointcloud::GroundParams;
use crate::pose::{CompactParams, Icp3Params, NicpParams};
use crate::DescriptorParams;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    /// BEV window side, meters.
    pub window: f64,
    /// BEV bins per side.
    pub bins: usize,
    pub crop: usize,
    pub rings: usize,
    pub sectors: usize,
    /// Candidates fetched from the key tree per query.
    pub candidates: usize,
    pub tau_l1: f64,
    pub tau_r: f64,
    pub exclusion_horizon: usize,
    pub keyframe_spacing: f64,
    pub tp_radius: f64,
    pub ground: GroundParams,
    pub compact: CompactParams,
    pub nicp: NicpParams,
    pub icp3: Icp3Params,
    pub stage2: bool,
    /// Optional stage-one MSE above which a pose is rejected.
    pub stage1_mse_gate: Option<f64>,
}

impl Default for Config {
    fn default() -> Self {
        let d = DescriptorParams::default();
        let m = MatchParams::default();
        Self {
            version: CONFIG_VERSION,
            window: d.window,
            bins: d.bins,
            crop: d.crop,
            rings: d.rings,
            sectors: d.sectors,
            candidates: m.candidates,
            tau_l1: m.tau_l1,
            tau_r: m.tau_r,
            exclusion_horizon: 30,
            keyframe_spacing: 2.0,
            tp_radius: 10.0,
            ground: GroundParams::default(),
            compact: CompactParams::default(),
            nicp: NicpParams::default(),
            icp3: Icp3Params::default(),
            stage2: true,
            stage1_mse_gate: None,
        }
    }
}

fn check(ok: bool, name: &'static str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::param(name, msg))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::param("config", e.to_string()))
}

/// Nested objects merge key by key; anything else replaces.
fn merge(base: &mut serde_json::Map<String, Value>, key: String, value: Value) {
    match (base.get_mut(&key), value) {
        (Some(Value::Object(inner)), Value::Object(update)) => {
            for (k, v) in update {
                merge(inner, k, v);
            }
        }
        (_, value) => {
            base.insert(key, value);
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::resolve(Some(parse_json(text)?), &[] as &[&str])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read(path.as_ref())?)
    }

    /// Reads an optional config file, applies `key=value` overrides and
    /// validates the result once, so an override can repair a file value.
    pub fn load_with_overrides<S: AsRef<str>>(path: Option<&Path>, overrides: &[S]) -> Result<Self> {
        let file = match path {
            Some(p) => Some(parse_json(&read(p)?)?),
            None => None,
        };
        Self::resolve(file, overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides. Keys may be dotted (`nicp.gate_start`);
    /// values are parsed as JSON and fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        Self::resolve(Some(serde_json::to_value(self).expect("config serializes")), overrides)
    }

    fn resolve<S: AsRef<str>>(file: Option<Value>, overrides: &[S]) -> Result<Self> {
        let mut root = serde_json::to_value(Config::default()).expect("config serializes");
        if let Some(file) = file {
            let Value::Object(map) = file else {
                return Err(Error::param("config", "expected a JSON object"));
            };
            if !map.contains_key("version") {
                return Err(Error::param("version", "missing"));
            }
            // keys are checked against the schema when deserializing below
            let Value::Object(base) = &mut root else { unreachable!() };
            for (k, v) in map {
                merge(base, k, v);
            }
        }
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::param("set", format!("expected key=value, got {item:?}")))?;
            let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().into()));
            let mut slot = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let Value::Object(map) = slot else {
                    return Err(Error::param("set", format!("{key} is not a nested key")));
                };
                let Some(next) = map.get_mut(*part) else {
                    return Err(Error::param("set", format!("unknown key {key}")));
                };
                if i + 1 == parts.len() {
                    *next = value.clone();
                }
                slot = next;
            }
        }
        let c: Config = serde_json::from_value(root).map_err(|e| Error::param("config", e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.version == CONFIG_VERSION, "version", "unsupported version")?;
        check(positive(self.window), "window", "must be positive")?;
        check(self.bins >= 8, "bins", "must be at least 8")?;
        check(self.crop >= 2 && self.crop <= self.bins, "crop", "must be in [2, bins]")?;
        check(self.rings > 0, "rings", "must be positive")?;
        check(self.sectors > 0 && self.sectors.is_multiple_of(2), "sectors", "must be even and positive")?;
        check(self.candidates > 0, "candidates", "must be positive")?;
        check(self.tau_l1 >= 0.0, "tau_l1", "must be non-negative")?;
        check((0.0..=2.0).contains(&self.tau_r), "tau_r", "must be in [0, 2]")?;
        check(positive(self.keyframe_spacing), "keyframe_spacing", "must be positive")?;
        check(positive(self.tp_radius), "tp_radius", "must be positive")?;
        check(positive(self.ground.cell), "ground.cell", "must be positive")?;
        check(self.ground.z_margin >= 0.0, "ground.z_margin", "must be non-negative")?;
        check(positive(self.compact.grid), "compact.grid", "must be positive")?;
        check(positive(self.compact.voxel), "compact.voxel", "must be positive")?;
        check(self.compact.cap > 0, "compact.cap", "must be positive")?;
        check(self.compact.neighbors >= 3, "compact.neighbors", "must be at least 3")?;
        check(
            (0.0..=1.0).contains(&self.compact.max_eigen_ratio),
            "compact.max_eigen_ratio",
            "must be in [0, 1]",
        )?;
        check(self.nicp.max_iterations > 0, "nicp.max_iterations", "must be positive")?;
        check(
            positive(self.nicp.gate_end) && self.nicp.gate_start >= self.nicp.gate_end,
            "nicp.gate_start",
            "gates must be positive and non-increasing",
        )?;
        check(self.icp3.max_iterations > 0, "icp3.max_iterations", "must be positive")?;
        check(positive(self.icp3.voxel), "icp3.voxel", "must be positive")?;
        check(
            positive(self.icp3.gate_end) && self.icp3.gate_start >= self.icp3.gate_end,
            "icp3.gate_start",
            "gates must be positive and non-increasing",
        )?;
        check(positive(self.icp3.mse_gate), "icp3.mse_gate", "must be positive")?;
        if let Some(g) = self.stage1_mse_gate {
            check(positive(g), "stage1_mse_gate", "must be positive")?;
        }
        Ok(())
    }

    pub fn descriptor_params(&self) -> DescriptorParams {
        DescriptorParams {
            window: self.window,
            bins: self.bins,
            crop: self.crop,
            rings: self.rings,
            sectors: self.sectors,
            ground: self.ground,
        }
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            candidates: self.candidates,
            tau_l1: self.tau_l1,
            tau_r: self.tau_r,
        }
    }

    pub fn compact_params(&self) -> CompactParams {
        self.compact
    }

    pub fn nicp_params(&self) -> NicpParams {
        self.nicp
    }

    pub fn icp3_params(&self) -> Icp3Params {
        self.icp3
    }
}
