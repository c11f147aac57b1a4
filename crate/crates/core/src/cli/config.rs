use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DegradeProfile, PRESET_QPS};
use crate::error::{Error, Result};
use crate::metrics::BdInterp;
use crate::model::ModelConfig;
use crate::train::TrainSchedule;

/// File name of the resolved-config echo written into every output directory.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

/// Everything a command needs; loadable from TOML with `key=value` overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSchedule,
    pub degrade: DegradeProfile,
    pub synth: SynthConfig,
    pub io: IoConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
    pub bench: BenchConfig,
}

/// Content generator settings; frame extent comes from `io.dims`, seed from `train.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub frames: usize,
    pub shapes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { frames: 8, shapes: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// `WxH` of headerless YUV files; also the synthetic extent.
    pub dims: Option<String>,
    pub raw: Vec<PathBuf>,
    pub compressed: Vec<PathBuf>,
    pub enhanced: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub qs: Vec<u32>,
    /// kbps per compressed stream, aligned with `compressed`; enables BD-rate.
    pub rates: Vec<f64>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            dims: None,
            raw: Vec::new(),
            compressed: Vec::new(),
            enhanced: Vec::new(),
            checkpoint: None,
            out: None,
            qs: PRESET_QPS.to_vec(),
            rates: Vec::new(),
        }
    }
}

impl IoConfig {
    /// `(width, height)` parsed from `dims`.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let d = self.dims.as_deref().ok_or_else(|| Error::Usage("--dims WxH is required".into()))?;
        parse_dims(d)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Usage("--out DIR is required".into()))
    }
}

pub fn parse_dims(d: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("dims must look like 416x240, got {d:?}"));
    let (w, h) = d.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub interp: BdInterp,
    /// Frame rate used by the synthetic rate proxy.
    pub fps: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            interp: BdInterp::Pchip,
            fps: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub height: usize,
    pub width: usize,
    pub coords_per_tensor: usize,
    pub op_step: f64,
    pub op_tol: f64,
    pub model_step: f64,
    pub model_tol: f64,
    pub perturb: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            height: 16,
            width: 16,
            coords_per_tensor: 8,
            op_step: 1e-5,
            op_tol: 1e-5,
            model_step: 1e-4,
            model_tol: 1e-4,
            perturb: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// `WxH` list; defaults to four pixel doublings from 32x32.
    pub sizes: Vec<String>,
    pub channels: usize,
    pub heads: usize,
    pub window_size: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: ["32x32", "64x32", "64x64", "128x64", "128x128"].map(String::from).to_vec(),
            channels: 16,
            heads: 1,
            window_size: 8,
            repeats: 5,
        }
    }
}

/// Merged TOML plus whether the user touched the `[model]` table.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub model_given: bool,
}

/// Parses `value` as a TOML value, falling back to a bare string.
pub fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Sets a dotted key, creating intermediate tables.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Loads `path` (if any), applies `key=value` overrides in order, validates.
pub fn resolve(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Resolved> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        set_dotted(&mut table, k, v.clone())?;
    }
    let model_given = table.contains_key("model");
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(Resolved { config, model_given })
}

/// Splits `key=value` strings.
pub fn parse_overrides(items: &[String]) -> Result<Vec<(String, toml::Value)>> {
    items
        .iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override {s:?} is not key=value")))?;
            Ok((k.trim().to_string(), parse_value(v.trim())))
        })
        .collect()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.degrade.validate()?;
        if let Some(d) = &self.io.dims {
            parse_dims(d)?;
        }
        if self.eval.fps <= 0.0 {
            return Err(Error::Config("eval.fps must be positive".into()));
        }
        for s in &self.bench.sizes {
            parse_dims(s)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Writes the resolved-config echo into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(RESOLVED_CONFIG);
        std::fs::write(&p, self.to_toml()?).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}
