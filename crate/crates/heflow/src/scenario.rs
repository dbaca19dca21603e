//! Versioned scenario configs: the JSON fixtures consumed by the command
//! line runner and the acceptance suite.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::bundle::{BackgroundA, Bundle, BundleError, MetricField};
use crate::flow::FlowConfig;
use crate::grid::{DerivScheme, OrbifoldGrid};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridBlock {
    pub n1: usize,
    pub n2: usize,
    pub tau_re: f64,
    pub tau_im: f64,
    #[serde(default = "one")]
    pub k: u32,
    #[serde(default = "spectral")]
    pub scheme: DerivScheme,
}

fn one() -> u32 {
    1
}

fn spectral() -> DerivScheme {
    DerivScheme::Spectral
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleBlock {
    pub twists: Vec<i64>,
    #[serde(default)]
    pub isotropy: Option<Vec<i64>>,
    #[serde(default)]
    pub background: Option<BackgroundA>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialMetric {
    /// The flat reference metric (Hermitian-Einstein on split bundles).
    Reference,
    /// `K exp(s)` with `s` a random low-mode self-adjoint field.
    Random {
        seed: u64,
        amplitude: f64,
        #[serde(default = "two")]
        max_mode: i64,
    },
}

fn two() -> i64 {
    2
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputsBlock {
    #[serde(default)]
    pub trace: Option<String>,
    #[serde(default)]
    pub report: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub grid: GridBlock,
    pub bundle: BundleBlock,
    #[serde(default)]
    pub flow: FlowConfig,
    pub initial_metric: InitialMetric,
    #[serde(default)]
    pub outputs: OutputsBlock,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let sc: Scenario = serde_json::from_str(text)
            .map_err(|e| BundleError::Invalid(format!("scenario parse error: {e}")))?;
        if sc.schema_version != SCHEMA_VERSION {
            return Err(BundleError::Invalid(format!(
                "unsupported schema_version {} (expected {})",
                sc.schema_version, SCHEMA_VERSION
            )));
        }
        Ok(sc)
    }

    pub fn build_bundle(&self) -> Result<Bundle, BundleError> {
        let grid = OrbifoldGrid::build(
            self.grid.n1,
            self.grid.n2,
            C64::new(self.grid.tau_re, self.grid.tau_im),
            self.grid.k,
            self.grid.scheme,
        )
        .map_err(|e| BundleError::Invalid(format!("grid: {e}")))?;
        let iso = self
            .bundle
            .isotropy
            .clone()
            .unwrap_or_else(|| vec![0; self.bundle.twists.len()]);
        Bundle::new(
            Arc::new(grid),
            self.bundle.twists.clone(),
            iso,
            self.bundle.background.clone().unwrap_or(BackgroundA::None),
        )
    }

    /// Build the initial metric; `seed_override` replaces the configured seed.
    pub fn build_initial_metric(
        &self,
        bundle: &Bundle,
        seed_override: Option<u64>,
    ) -> Result<MetricField, BundleError> {
        let k = bundle.flat_reference_metric();
        match &self.initial_metric {
            InitialMetric::Reference => Ok(k),
            InitialMetric::Random {
                seed,
                amplitude,
                max_mode,
            } => {
                if !amplitude.is_finite() {
                    return Err(BundleError::Invalid("amplitude must be finite".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed_override.unwrap_or(*seed));
                let mut s = bundle.random_self_adjoint(&k, &mut rng, *amplitude, *max_mode);
                if bundle.grid.k > 1 {
                    s = bundle.group_project_endo(&s);
                    let adj = bundle.adjoint_wrt(&k, &s);
                    s.add_scaled(&adj, C64::new(1.0, 0.0));
                    s = s.scaled(C64::new(0.5, 0.0));
                }
                bundle.metric_exp(&k, &s)
            }
        }
    }
}
