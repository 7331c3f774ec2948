//! TOML experiment configurations. Unknown keys are rejected so a typo in an
//! experiment file fails loudly instead of silently running something else.

use std::path::PathBuf;

use serde::Deserialize;

fn default_ts() -> f64 {
    0.01
}

fn default_format() -> String {
    "binary".to_string()
}

fn default_method() -> String {
    "normal_equations".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenConfig {
    /// vdp | motor | kdv
    pub system: String,
    pub trajectories: usize,
    pub steps: usize,
    #[serde(default = "default_ts")]
    pub ts: f64,
    #[serde(default)]
    pub seed: u64,
    /// csv | binary
    #[serde(default = "default_format")]
    pub format: String,
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    /// rbf | kdv | identity
    pub kind: String,
    #[serde(default)]
    pub count: usize,
    /// thin_plate | gauss
    #[serde(default)]
    pub rbf: Option<String>,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// per-dimension [lo, hi] the RBF centers are drawn from
    #[serde(default)]
    pub sample_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    pub n_delays: usize,
    /// which state rows are measured outputs
    pub output_rows: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// normal_equations | pseudoinverse
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub ridge: f64,
    pub dictionary: DictionaryConfig,
    /// delay-embed the data set before fitting (input-output identification)
    #[serde(default)]
    pub delay: Option<DelayConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    /// square | binary | uniform | zero
    pub kind: String,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub system: String,
    pub model: PathBuf,
    pub x0: Vec<f64>,
    pub steps: usize,
    #[serde(default = "default_ts")]
    pub ts: f64,
    pub forcing: ForcingConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delay: Option<DelayConfig>,
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// refit from this data set for every entry of `rbf_counts`
    pub dataset: PathBuf,
    pub rbf_counts: Vec<usize>,
    #[serde(default)]
    pub dict_seed: u64,
    #[serde(default)]
    pub rbf: Option<String>,
    #[serde(default)]
    pub width: Option<f64>,
    pub sample_box: Vec<[f64; 2]>,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub ridge: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub system: String,
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// any of: koopman, loclin0, loclin_x0, carleman, truth
    #[serde(default)]
    pub predictors: Vec<String>,
    pub trials: usize,
    pub horizon_steps: usize,
    #[serde(default = "default_ts")]
    pub ts: f64,
    pub forcing: ForcingConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub carleman_degree: Option<usize>,
    #[serde(default)]
    pub delay: Option<DelayConfig>,
    pub out: PathBuf,
    /// summary table target; defaults to `<out>.summary.csv`
    #[serde(default)]
    pub summary_out: Option<PathBuf>,
    /// lift-dimension sweep mode (refits per dictionary size)
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// constant | piecewise | cosine
    pub kind: String,
    #[serde(default)]
    pub value: Option<f64>,
    /// piecewise: segment start times (seconds) and values
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub period: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    /// vdp | motor | kdv
    pub system: String,
    /// koopman | loclin
    pub controller: String,
    #[serde(default)]
    pub model: Option<PathBuf>,
    pub steps: usize,
    #[serde(default = "default_ts")]
    pub ts: f64,
    pub horizon: usize,
    /// scalar weights broadcast to identity matrices
    pub q: f64,
    #[serde(default)]
    pub q_terminal: Option<f64>,
    pub r: f64,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub y_min: Option<f64>,
    #[serde(default)]
    pub y_max: Option<f64>,
    #[serde(default)]
    pub u_min: Option<f64>,
    #[serde(default)]
    pub u_max: Option<f64>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// KdV only: start from one of the three campaign profiles
    #[serde(default)]
    pub kdv_profile: Option<usize>,
    #[serde(default)]
    pub delay: Option<DelayConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub qp_max_iters: Option<usize>,
    pub out: PathBuf,
}

pub fn load<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
}
