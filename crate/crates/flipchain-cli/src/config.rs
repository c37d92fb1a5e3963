//! Experiment configuration: flat key = value sections, schema-validated,
//! unknown keys rejected. The parsed struct re-serializes canonically, so a
//! run manifest round-trips to an identical config.

use flipchain::chain::BoundaryCondition;
use flipchain::conductivity::ChainVariant;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub disorder: Disorder,
    pub noise: Noise,
    pub schedule: Schedule,
    pub ensemble: Ensemble,
    pub run: Run,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    PinnedDisordered,
    PinnedOrdered,
    UnpinnedMassDisordered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub variant: VariantKind,
    pub n: usize,
    pub bc: BoundaryCondition,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disorder {
    pub nu_min: f64,
    pub nu_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    /// λ grid; single-entry grids mean a scalar run.
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub lambda_prime: f64,
}

fn default_t_end() -> f64 {
    200.0
}

fn default_times() -> Vec<f64> {
    vec![10.0, 30.0, 100.0, 300.0]
}

fn default_z_factors() -> Vec<f64> {
    flipchain::conductivity::default_z_factors()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Monte Carlo horizon.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Horizons for the insulator diagnostic.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Splitting step; 0 selects the stability default.
    #[serde(default)]
    pub dt: f64,
    /// Resolvent shifts as multiples of λ, positive decreasing.
    #[serde(default = "default_z_factors")]
    pub z_factors: Vec<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            t_end: default_t_end(),
            times: default_times(),
            dt: 0.0,
            z_factors: default_z_factors(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub n_disorder: usize,
    pub n_trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Run {
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization: hashing and round-trip checks use this.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        let e = &self.experiment;
        if e.n < 2 {
            return Err("experiment.n must be at least 2".into());
        }
        if !(e.temperature > 0.0) {
            return Err("experiment.temperature must be positive".into());
        }
        let d = &self.disorder;
        match e.variant {
            VariantKind::PinnedDisordered => {
                if !(d.nu_min > 0.0) || d.nu_min > d.nu_max {
                    return Err("pinned-disordered needs 0 < nu_min <= nu_max".into());
                }
            }
            VariantKind::PinnedOrdered => {
                if !(d.nu_min > 0.0) || d.nu_min != d.nu_max {
                    return Err("pinned-ordered needs nu_min = nu_max > 0".into());
                }
            }
            VariantKind::UnpinnedMassDisordered => {
                if d.nu_min != 0.0 || d.nu_max != 0.0 {
                    return Err("unpinned variant needs nu_min = nu_max = 0".into());
                }
                match (d.mass_min, d.mass_max) {
                    (Some(lo), Some(hi)) if lo > 0.0 && lo <= hi => {}
                    _ => return Err("unpinned variant needs 0 < mass_min <= mass_max".into()),
                }
                if e.bc == BoundaryCondition::Periodic {
                    return Err("unpinned chains need fixed boundaries (zero mode)".into());
                }
            }
        }
        let n = &self.noise;
        if n.lambda.is_empty() {
            return Err("noise.lambda grid must be nonempty".into());
        }
        if n.lambda.iter().any(|&l| l < 0.0) || !n.lambda.iter().all(|l| l.is_finite()) {
            return Err("noise.lambda entries must be finite and nonnegative".into());
        }
        if n.lambda_prime < 0.0 || !n.lambda_prime.is_finite() {
            return Err("noise.lambda_prime must be finite and nonnegative".into());
        }
        let s = &self.schedule;
        if !(s.t_end > 0.0) {
            return Err("schedule.t_end must be positive".into());
        }
        if s.dt < 0.0 {
            return Err("schedule.dt must be nonnegative".into());
        }
        if s.times.is_empty() || s.times.iter().any(|&t| t <= 0.0) {
            return Err("schedule.times must be positive".into());
        }
        if s.z_factors.len() < 2
            || s.z_factors.iter().any(|&z| z <= 0.0)
            || s.z_factors.windows(2).any(|w| w[0] <= w[1])
        {
            return Err("schedule.z_factors must be positive and strictly decreasing".into());
        }
        let ens = &self.ensemble;
        if ens.n_disorder == 0 || ens.n_trajectories == 0 {
            return Err("ensemble sizes must be positive".into());
        }
        Ok(())
    }

    pub fn variant(&self) -> ChainVariant {
        match self.experiment.variant {
            VariantKind::PinnedDisordered => ChainVariant::PinnedDisordered {
                nu_min: self.disorder.nu_min,
                nu_max: self.disorder.nu_max,
            },
            VariantKind::PinnedOrdered => ChainVariant::PinnedOrdered {
                nu: self.disorder.nu_min,
            },
            VariantKind::UnpinnedMassDisordered => ChainVariant::UnpinnedMassDisordered {
                mass_min: self.disorder.mass_min.unwrap(),
                mass_max: self.disorder.mass_max.unwrap(),
            },
        }
    }
}
