use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::image::ContractError;

/// An L2 magnitude, either absolute (pixel-L2 units) or relative to the
/// distance between the clean frame and its heavy-noise anchor.
///
/// Text form: `"0.05x"` is relative, `"1500"` is absolute.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Magnitude {
    Relative(f64),
    Absolute(f64),
}

impl Magnitude {
    pub fn resolve(self, anchor_distance: f64) -> f64 {
        match self {
            Magnitude::Relative(f) => f * anchor_distance,
            Magnitude::Absolute(v) => v,
        }
    }

    fn value(self) -> f64 {
        match self {
            Magnitude::Relative(v) | Magnitude::Absolute(v) => v,
        }
    }
}

impl fmt::Display for Magnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Magnitude::Relative(v) => write!(f, "{v}x"),
            Magnitude::Absolute(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Magnitude {
    type Err = ContractError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (num, relative) = match s.strip_suffix('x') {
            Some(rest) => (rest, true),
            None => (s, false),
        };
        let v: f64 = num
            .parse()
            .map_err(|_| ContractError::invalid(format!("invalid magnitude {s:?}")))?;
        Ok(if relative { Magnitude::Relative(v) } else { Magnitude::Absolute(v) })
    }
}

impl TryFrom<String> for Magnitude {
    type Error = ContractError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Magnitude> for String {
    fn from(m: Magnitude) -> Self {
        m.to_string()
    }
}

/// Every tunable of the attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Weight of the spatial IoU in the fused score; `1 - lambda_fuse` goes to temporal.
    pub lambda_fuse: f64,
    /// Tangential candidates evaluated per iteration.
    pub n_candidates: usize,
    /// Iteration cap per frame.
    pub max_iters: usize,
    /// Initial normal step length.
    pub eps_init: Magnitude,
    pub eps_growth: f64,
    pub eps_shrink: f64,
    /// Backtracking attempts per iteration after the first normal step is rejected.
    pub max_retries: usize,
    /// Spread of each tangential draw as a fraction of the current noise radius.
    pub tangent_scale: f64,
    pub alpha_transfer: f64,
    /// How many following frames inherit a frame's learned perturbation.
    pub transfer_horizon: usize,
    pub heavy_noise_amplitude: f64,
    pub stop_iou: f64,
    pub max_noise_l2: Magnitude,
    pub rng_seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            lambda_fuse: 0.6,
            n_candidates: 10,
            max_iters: 20,
            eps_init: Magnitude::Relative(0.05),
            eps_growth: 1.2,
            eps_shrink: 0.5,
            max_retries: 3,
            tangent_scale: 0.1,
            alpha_transfer: 0.5,
            transfer_horizon: 1,
            heavy_noise_amplitude: 128.0,
            stop_iou: 0.2,
            max_noise_l2: Magnitude::Relative(0.5),
            rng_seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), ContractError> {
        let fail = |msg: String| Err(ContractError::Invalid(msg));
        if !(0.0..=1.0).contains(&self.lambda_fuse) {
            return fail(format!("lambda_fuse {} outside [0, 1]", self.lambda_fuse));
        }
        if self.n_candidates < 1 {
            return fail("n_candidates must be at least 1".into());
        }
        if !(self.eps_init.value() > 0.0 && self.eps_init.value().is_finite()) {
            return fail(format!("eps_init {} must be positive", self.eps_init));
        }
        if !(self.eps_growth > 1.0 && self.eps_growth.is_finite()) {
            return fail(format!("eps_growth {} must exceed 1", self.eps_growth));
        }
        if !(self.eps_shrink > 0.0 && self.eps_shrink < 1.0) {
            return fail(format!("eps_shrink {} outside (0, 1)", self.eps_shrink));
        }
        if !(self.tangent_scale > 0.0 && self.tangent_scale.is_finite()) {
            return fail(format!("tangent_scale {} must be positive", self.tangent_scale));
        }
        if !(0.0..=1.0).contains(&self.alpha_transfer) {
            return fail(format!("alpha_transfer {} outside [0, 1]", self.alpha_transfer));
        }
        if !(self.heavy_noise_amplitude > 0.0 && self.heavy_noise_amplitude <= 255.0) {
            return fail(format!(
                "heavy_noise_amplitude {} outside (0, 255]",
                self.heavy_noise_amplitude
            ));
        }
        if !(0.0..1.0).contains(&self.stop_iou) {
            return fail(format!("stop_iou {} outside [0, 1)", self.stop_iou));
        }
        if !(self.max_noise_l2.value() > 0.0 && self.max_noise_l2.value().is_finite()) {
            return fail(format!("max_noise_l2 {} must be positive", self.max_noise_l2));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        AttackConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let bad = [
            AttackConfig { lambda_fuse: 1.5, ..Default::default() },
            AttackConfig { n_candidates: 0, ..Default::default() },
            AttackConfig { eps_growth: 1.0, ..Default::default() },
            AttackConfig { eps_shrink: 1.0, ..Default::default() },
            AttackConfig { stop_iou: 1.0, ..Default::default() },
            AttackConfig { heavy_noise_amplitude: 0.0, ..Default::default() },
            AttackConfig { heavy_noise_amplitude: 300.0, ..Default::default() },
            AttackConfig { max_noise_l2: Magnitude::Absolute(0.0), ..Default::default() },
            AttackConfig { eps_init: Magnitude::Relative(-1.0), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn magnitude_text_forms() {
        assert_eq!("0.5x".parse::<Magnitude>().unwrap(), Magnitude::Relative(0.5));
        assert_eq!("1500".parse::<Magnitude>().unwrap(), Magnitude::Absolute(1500.0));
        assert!("abc".parse::<Magnitude>().is_err());
        assert_eq!(Magnitude::Relative(0.25).resolve(100.0), 25.0);
        assert_eq!(Magnitude::Absolute(7.0).resolve(100.0), 7.0);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = AttackConfig { eps_init: Magnitude::Absolute(12.5), rng_seed: 99, ..Default::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains(r#""eps_init":"12.5""#));
        assert_eq!(serde_json::from_str::<AttackConfig>(&text).unwrap(), cfg);
        let partial: AttackConfig = serde_json::from_str(r#"{"n_candidates": 4}"#).unwrap();
        assert_eq!(partial.n_candidates, 4);
        assert_eq!(partial.lambda_fuse, 0.6);
    }
}
