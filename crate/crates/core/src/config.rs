//! Declarative scenario documents (JSON) and the bundled reference presets.
//!
//! A [`ScenarioFile`] is the raw, unvalidated document; [`crate::market::validate_scenario`]
//! turns it into a [`crate::market::Scenario`] or a list of every violation found.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MfeError, Result};
use crate::market::{AgentType, BiasField, OrderFlowField, PayoffField, UtilityMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub lattice: LatticeFile,
    pub y_chain: ChainFile,
    pub populations: Vec<PopulationFile>,
    #[serde(default)]
    pub order_flow: OrderFlowField,
    #[serde(default)]
    pub analysis: AnalysisFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeFile {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: f64,
    pub r: f64,
    pub s0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_tilde: Option<f64>,
}

/// A factor chain: binomial parameters or an explicit time-homogeneous chain.
///
/// Binomial keys accept both the `y0/sigma_y/p_y` and `z0/sigma_z/p_z` spellings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainFile {
    Binomial {
        #[serde(alias = "y0", alias = "z0")]
        start: f64,
        #[serde(alias = "sigma_y", alias = "sigma_z")]
        sigma: f64,
        #[serde(alias = "p_y", alias = "p_z")]
        p_up: f64,
    },
    Explicit {
        states: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationFile {
    pub weight: f64,
    pub mode: UtilityMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_grid: Option<GridFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub types: Option<Vec<AgentType>>,
    pub z_chain: ChainFile,
    #[serde(rename = "F", default)]
    pub liability: PayoffField,
    #[serde(default)]
    pub g: EndowmentFile,
    #[serde(default)]
    pub bias: BiasField,
}

/// Endowment: one field applied at every step `1..=N`, or one field per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EndowmentFile {
    Uniform(PayoffField),
    PerStep(Vec<PayoffField>),
}

impl Default for EndowmentFile {
    fn default() -> Self {
        EndowmentFile::Uniform(PayoffField::Zero)
    }
}

/// Uniform type grid; `N_gamma + 1` by `N_psi + 1` points with `zeta = psi / a_zeta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub n_gamma: usize,
    #[serde(default = "one")]
    pub psi_min: f64,
    #[serde(default = "one")]
    pub psi_max: f64,
    #[serde(default)]
    pub n_psi: usize,
    #[serde(default = "one")]
    pub a_zeta: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub xi: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PercentileConvention {
    #[default]
    NodeIndex,
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExcessReturnConvention {
    /// `(1/t) log(E[S_t]/s0) - r`.
    #[default]
    Log,
    /// `(E[S_t] - s0 beta^n) / (s0 t)`.
    Simple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisFile {
    /// Steps at which distributions are reported; empty means `{N/3, N}`.
    pub report_steps: Vec<usize>,
    /// Lower and upper Y percentiles used for the conditional measures.
    pub percentiles: [f64; 2],
    pub percentile_convention: PercentileConvention,
    pub excess_return_convention: ExcessReturnConvention,
    pub path_mode: bool,
    pub path_cap: usize,
    pub seed: u64,
    /// Lower and upper price thresholds for tail masses.
    pub tail_thresholds: [f64; 2],
    pub converge_sizes: Vec<usize>,
    pub replications: usize,
    /// Decision step at which excess demand is measured; `None` means `N - 1`.
    pub converge_step: Option<usize>,
}

impl Default for AnalysisFile {
    fn default() -> Self {
        Self {
            report_steps: Vec::new(),
            percentiles: [0.25, 0.75],
            percentile_convention: PercentileConvention::NodeIndex,
            excess_return_convention: ExcessReturnConvention::Log,
            path_mode: false,
            path_cap: crate::lattice::DEFAULT_PATH_CAP,
            seed: 0,
            tail_thresholds: [0.5, 2.0],
            converge_sizes: vec![100, 1000, 10000],
            replications: 200,
            converge_step: None,
        }
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialisation is infallible")
    }

    /// SHA-256 of the canonical (compact, field-ordered) serialisation.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("scenario serialisation is infallible");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Steps reported by the analyzer, defaulting to one third and all of the horizon.
    pub fn report_steps(&self) -> Vec<usize> {
        if self.analysis.report_steps.is_empty() {
            let n = self.lattice.n;
            let mut v = vec![n / 3, n];
            v.dedup();
            v
        } else {
            self.analysis.report_steps.clone()
        }
    }
}

/// Names of the bundled presets.
pub const PRESET_NAMES: &[&str] = &[
    "table1_f1",
    "table1_f2",
    "table1_flow_pos",
    "table1_flow_neg",
    "table2_az090",
    "table2_az095",
    "table2_az100",
    "table2_az105",
    "table2_flow_off",
    "table2_flow_on",
    "table2_contrarian",
    "table2_momentum",
    "table3_sz00",
    "table3_sz05",
    "table3_sz10",
    "table3_sz15",
    "table3_sz20",
];

/// Load a bundled preset by name.
pub fn preset(name: &str) -> Result<ScenarioFile> {
    let text = match name {
        "table1_f1" => include_str!("../scenarios/table1_f1.json"),
        "table1_f2" => include_str!("../scenarios/table1_f2.json"),
        "table1_flow_pos" => include_str!("../scenarios/table1_flow_pos.json"),
        "table1_flow_neg" => include_str!("../scenarios/table1_flow_neg.json"),
        "table2_az090" => include_str!("../scenarios/table2_az090.json"),
        "table2_az095" => include_str!("../scenarios/table2_az095.json"),
        "table2_az100" => include_str!("../scenarios/table2_az100.json"),
        "table2_az105" => include_str!("../scenarios/table2_az105.json"),
        "table2_flow_off" => include_str!("../scenarios/table2_flow_off.json"),
        "table2_flow_on" => include_str!("../scenarios/table2_flow_on.json"),
        "table2_contrarian" => include_str!("../scenarios/table2_contrarian.json"),
        "table2_momentum" => include_str!("../scenarios/table2_momentum.json"),
        "table3_sz00" => include_str!("../scenarios/table3_sz00.json"),
        "table3_sz05" => include_str!("../scenarios/table3_sz05.json"),
        "table3_sz10" => include_str!("../scenarios/table3_sz10.json"),
        "table3_sz15" => include_str!("../scenarios/table3_sz15.json"),
        "table3_sz20" => include_str!("../scenarios/table3_sz20.json"),
        other => return Err(MfeError::Input(format!("unknown preset '{other}'"))),
    };
    ScenarioFile::from_json(text)
}
