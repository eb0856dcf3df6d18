//! Run configuration and report types.

use serde::{Deserialize, Serialize};

/// Current on-disk format version for trees, functions, and CSV reports.
pub const FORMAT_VERSION: u32 = 1;

/// Relative tolerance for measure bookkeeping (children summing to parents).
pub const TAU_MEAS: f64 = 1e-12;
/// Tolerance for integral comparisons and inequality slacks.
pub const TAU_NUM: f64 = 1e-9;
/// Residual tolerance for scalar root finding.
pub const TAU_ROOT: f64 = 1e-13;
/// Leaf values below `ZETA * f` count as zero when measuring {phi = 0}.
pub const ZETA: f64 = 1e-12;
/// Exponents are restricted to (1, P_MAX] to keep z^p finite at our scales.
pub const P_MAX: f64 = 64.0;

/// Tolerances and defaults for a laboratory run. Serialized into every
/// report header so outputs are self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabConfig {
    pub tau_meas: f64,
    pub tau_num: f64,
    pub tau_root: f64,
    pub default_p: f64,
    pub seed: u64,
    pub out_dir: String,
    pub format_version: u32,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            tau_meas: TAU_MEAS,
            tau_num: TAU_NUM,
            tau_root: TAU_ROOT,
            default_p: 2.0,
            seed: 7,
            out_dir: "out".to_string(),
            format_version: FORMAT_VERSION,
        }
    }
}

/// Outcome of one acceptance check inside a full-suite run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    /// Worst observed slack / deviation, when the check has one.
    pub detail: String,
    pub seconds: f64,
}

/// Consolidated result of a full-suite run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: LabConfig,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}
