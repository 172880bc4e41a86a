use serde::{Deserialize, Serialize};
use splatseg_core::decoder::{BatchSplit, DecoderParams, OverwritePolicy, DEFAULT_GROWTH_RADIUS_M};
use splatseg_core::projection::DEFAULT_RHO2_THRESHOLD;
use splatseg_core::refine::RefineParams;

/// Every tunable of a session. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionParams {
    pub opacity_threshold: f64,
    pub sigma_m: f64,
    pub radius_m: f64,
    pub height_m: f64,
    pub up: [f64; 3],
    pub growth_radius_m: f64,
    pub rho2: f64,
    pub seed: u64,
    pub batch_cap: usize,
    pub split: BatchSplit,
    pub overwrite: OverwritePolicy,
    pub refine: RefineParams,
}

impl Default for SessionParams {
    fn default() -> Self {
        let d = DecoderParams::default();
        Self {
            opacity_threshold: d.opacity_threshold,
            sigma_m: d.sigma_m,
            radius_m: d.radius_m,
            height_m: d.height_m,
            up: d.up,
            growth_radius_m: DEFAULT_GROWTH_RADIUS_M,
            rho2: DEFAULT_RHO2_THRESHOLD,
            seed: d.seed,
            batch_cap: d.batch_cap,
            split: d.split,
            overwrite: d.overwrite,
            refine: RefineParams::default(),
        }
    }
}

impl SessionParams {
    pub fn decoder(&self) -> DecoderParams {
        DecoderParams {
            opacity_threshold: self.opacity_threshold,
            sigma_m: self.sigma_m,
            radius_m: self.radius_m,
            height_m: self.height_m,
            up: self.up,
            batch_cap: self.batch_cap,
            seed: self.seed,
            split: self.split,
            overwrite: self.overwrite,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("sigma_m", self.sigma_m),
            ("radius_m", self.radius_m),
            ("height_m", self.height_m),
            ("growth_radius_m", self.growth_radius_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.opacity_threshold > 0.0 && self.opacity_threshold < 1.0) {
            return Err(format!("opacity_threshold must be in (0, 1), got {}", self.opacity_threshold));
        }
        if !(self.rho2 >= 0.0 && self.rho2.is_finite()) {
            return Err(format!("rho2 must be non-negative, got {}", self.rho2));
        }
        if self.batch_cap == 0 {
            return Err("batch_cap must be positive".into());
        }
        if self.up.iter().all(|&c| c == 0.0) {
            return Err("up must be non-zero".into());
        }
        self.refine.validate()
    }
}
