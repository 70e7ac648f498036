//! Experiment configuration: TOML (sections of key = value) or JSON, with
//! defaults filled in and unknown keys rejected by name.

use crate::error::{Error, Result};
use crate::models::{check_assumptions, SpectralDensity, WaveletSpec};
use crate::scattering::{ScatterSettings, Scatterer};
use crate::synth::GridSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative tolerance of finite-scale quadratures.
    pub quad_rel: f64,
    /// Relative tolerance of the outer limit-constant integrals.
    pub limit_rel: f64,
    /// Agreement threshold in standard errors.
    pub se_multiple: f64,
    /// Largest acceptable KS distance at the largest jM.
    pub ks_max: f64,
    /// Bootstrap resamples (>= 500).
    pub bootstrap: usize,
    /// Accepted window for fitted log2 slopes.
    pub slope_window: [f64; 2],
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            quad_rel: 1e-10,
            limit_rel: 1e-3,
            se_multiple: 3.0,
            ks_max: 0.05,
            bootstrap: 500,
            slope_window: [-0.7, -0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: String,
    /// Also write per-replica samples as CSV.
    pub write_samples: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            write_samples: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub density: String,
    pub wavelet: String,
    /// (j1, ..., j_{M-1}); the depth is its length plus one.
    pub scales_prefix: Vec<i32>,
    /// Final scales jM to test.
    pub jm: Vec<i32>,
    pub replicas: usize,
    /// Sample times t (rescaled to 2^{jM} t on the grid).
    pub times: Vec<f64>,
    pub seed: u64,
    pub grid: GridSpec,
    pub scatter: ScatterSettings,
    pub tolerances: Tolerances,
    pub output: OutputConfig,
    /// Checks that decide the exit status; empty means every check a
    /// subcommand reports.
    pub checks: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            density: "gauss-lrd:beta=0.5".into(),
            wavelet: "mexican-hat".into(),
            scales_prefix: vec![0],
            jm: vec![4, 6, 8, 10],
            replicas: 10_000,
            times: vec![0.0],
            seed: 20_240_601,
            grid: GridSpec { n: 1 << 18, dt: 1.0 / 64.0 },
            scatter: ScatterSettings::default(),
            tolerances: Tolerances::default(),
            output: OutputConfig::default(),
            checks: Vec::new(),
        }
    }
}

fn unknown_keys(input: &Value, schema: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(a), Value::Object(b)) = (input, schema) {
        for (k, v) in a {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match b.get(k) {
                None => out.push(path),
                Some(s) => unknown_keys(v, s, &path, out),
            }
        }
    }
}

impl ExperimentConfig {
    pub fn depth(&self) -> usize {
        self.scales_prefix.len() + 1
    }

    pub fn density(&self) -> Result<SpectralDensity> {
        SpectralDensity::from_id(&self.density)
    }

    pub fn wavelet(&self) -> Result<WaveletSpec> {
        WaveletSpec::from_id(&self.wavelet)
    }

    /// Full scale vector (prefix, jm).
    pub fn scales(&self, jm: i32) -> Vec<i32> {
        let mut s = self.scales_prefix.clone();
        s.push(jm);
        s
    }

    /// Parses TOML, or JSON when the text starts with '{'.
    pub fn from_str_any(text: &str) -> Result<Self> {
        let raw: Value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            let t: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            serde_json::to_value(t)?
        };
        let schema = serde_json::to_value(ExperimentConfig::default())?;
        let mut unknown = Vec::new();
        unknown_keys(&raw, &schema, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::UnknownConfigKeys(unknown));
        }
        let cfg: ExperimentConfig = serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (supported: {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Structural checks that need no numerics beyond the assumption probes.
    pub fn validate(&self) -> Result<()> {
        if self.replicas < 100 {
            return Err(Error::invalid(format!("replicas must be >= 100 (got {})", self.replicas)));
        }
        if self.jm.is_empty() {
            return Err(Error::invalid("at least one jM is required"));
        }
        if self.times.is_empty() {
            return Err(Error::invalid("at least one sample time is required"));
        }
        if self.scales_prefix.is_empty() {
            return Err(Error::invalid("scales_prefix must hold at least j1"));
        }
        if self.tolerances.bootstrap < 500 {
            return Err(Error::invalid("bootstrap resamples must be >= 500"));
        }
        if !(self.tolerances.se_multiple > 0.0) {
            return Err(Error::invalid("se_multiple must be positive"));
        }
        self.grid.validate()?;
        let sd = self.density()?;
        let w = self.wavelet()?;
        let report = check_assumptions(&sd, &w);
        if let Some(f) = report.failures().first() {
            return Err(Error::AssumptionViolated(format!("{}: {}", f.name, f.detail)));
        }
        Ok(())
    }

    /// Span and resolution checks for every (jM, t) pair.
    pub fn validate_spans(&self) -> Result<()> {
        let sc = Scatterer::new(&self.wavelet()?, self.grid, self.scatter)?;
        for &jm in &self.jm {
            sc.check_scales(&self.scales(jm))?;
            sc.time_indices(jm, &self.times)?;
        }
        Ok(())
    }
}

/// Reads, fills defaults, and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg = ExperimentConfig::from_str_any(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_str_any("density = \"gauss-lrd:beta=0.5\"\nwavelet = \"mexican-hat\"\n").unwrap();
        assert_eq!(c.grid.n, 1 << 18);
        assert_eq!(c.grid.dt, 1.0 / 64.0);
        assert_eq!(c.replicas, 10_000);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_listed() {
        let e = ExperimentConfig::from_str_any("densty = \"x\"\n[grid]\nn = 1024\nstep = 2\n").unwrap_err();
        match e {
            Error::UnknownConfigKeys(k) => assert_eq!(k, vec!["densty".to_string(), "grid.step".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hypothesis_violation_is_quoted() {
        let c = ExperimentConfig::from_str_any("wavelet = \"morlet:lambda0=5\"\n").unwrap();
        c.validate().unwrap();
        // 2 * 0.2 + 0.5 < 1
        let bad = ExperimentConfig::from_str_any("wavelet = \"power-gauss:alpha=0.2\"\n").unwrap();
        let err = bad.validate().unwrap_err();
        assert!(err.to_string().contains("hypothesis_2alpha_plus_beta_ge_1"), "{err}");
    }

    #[test]
    fn roundtrip_toml_and_json() {
        let mut c = ExperimentConfig::default();
        c.jm = vec![4, 8];
        c.times = vec![0.0, 0.5];
        c.checks = vec!["ks_max".into()];
        let t = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_str_any(&t).unwrap(), c);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_str_any(&j).unwrap(), c);
    }

    #[test]
    fn replicas_and_schema_validation() {
        let c = ExperimentConfig::from_str_any("replicas = 0\n").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("replicas"));
        assert!(ExperimentConfig::from_str_any("schema_version = 7\n").is_err());
    }

    #[test]
    fn span_check_rejects_default_grid_at_fine_scale() {
        let c = ExperimentConfig::default();
        assert!(c.validate_spans().is_err());
        let ok = ExperimentConfig {
            grid: GridSpec { n: 1 << 16, dt: 0.25 },
            ..ExperimentConfig::default()
        };
        ok.validate_spans().unwrap();
    }
}
