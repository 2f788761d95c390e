use std::path::PathBuf;

use golp_core::{Backend, GateConfig, WorkloadSpec};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MARGINS: [f64; 3] = [0.0, 0.005, 0.010];
pub const DEFAULT_OUTPUT_DIR: &str = "golp-out";

/// Everything a benchmark run needs. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    pub gate: GateConfig,
    pub backend: Backend,
    pub output_dir: PathBuf,
    /// Proxy worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    /// Margins evaluated by the margin sweep, in seconds.
    pub margins: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workload: WorkloadSpec::default(),
            gate: GateConfig::default(),
            backend: Backend::Modeled,
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
            workers: None,
            margins: DEFAULT_MARGINS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> golp_core::Result<()> {
        self.workload.validate()?;
        self.gate.validate()?;
        if self.margins.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(golp_core::Error::InvalidConfig(
                "margins must be finite and nonnegative",
            ));
        }
        if self.workers == Some(0) {
            return Err(golp_core::Error::InvalidConfig(
                "workers must be at least 1",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"backend":"proxy","workload":{"repeats":5}}"#).unwrap();
        assert_eq!(cfg.backend, Backend::Proxy);
        assert_eq!(cfg.workload.repeats, 5);
        assert_eq!(cfg.workload.k, 100);
        assert_eq!(cfg.gate.min_n_guard, None);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_gate_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"gate":{"margin_s":0.002,"profile":{"launch_overhead":1e-3}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.gate.margin, 0.002);
        assert_eq!(cfg.gate.profile.launch_overhead, 1e-3);
        assert_eq!(
            cfg.gate.profile.h2d_bandwidth,
            golp_core::DeviceProfile::default().h2d_bandwidth
        );
        assert_eq!(cfg.gate.cpu_model, golp_core::CpuCostModel::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"gate":{"margin":0.1}}"#).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"bakend":"proxy"}"#).is_err());
    }

    #[test]
    fn empty_grid_is_invalid() {
        let cfg: RunConfig = serde_json::from_str(r#"{"workload":{"n_grid":[]}}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
