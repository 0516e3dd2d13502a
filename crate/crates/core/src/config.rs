//! Partial overrides on top of the noise-level defaults, and stable hashing
//! of resolved configurations.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::iteration::LichiConfig;
use crate::weights::PilotMethod;

/// Every field left as `None` keeps the default for the noise level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub patch: Option<usize>,
    pub group: Option<usize>,
    pub iters: Option<usize>,
    pub window: Option<usize>,
    pub step: Option<usize>,
    pub rematch: Option<usize>,
    pub tau_scale: Option<f64>,
    /// Pilot family by name (`sure`, `nr2n`, `avg`, `noisy`); `alpha` sets the nr2n ratio.
    #[serde(with = "pilot_name")]
    pub pilot: Option<PilotMethod>,
    pub alpha: Option<f64>,
    pub pilot_patch: Option<usize>,
    pub pilot_group: Option<usize>,
}

mod pilot_name {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::weights::PilotMethod;

    pub fn serialize<S: Serializer>(m: &Option<PilotMethod>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => s.serialize_some(m.name()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<PilotMethod>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|name| name.parse().map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl Overrides {
    /// Fields set in `other` win.
    pub fn merge(self, other: Overrides) -> Overrides {
        Overrides {
            patch: other.patch.or(self.patch),
            group: other.group.or(self.group),
            iters: other.iters.or(self.iters),
            window: other.window.or(self.window),
            step: other.step.or(self.step),
            rematch: other.rematch.or(self.rematch),
            tau_scale: other.tau_scale.or(self.tau_scale),
            pilot: other.pilot.or(self.pilot),
            alpha: other.alpha.or(self.alpha),
            pilot_patch: other.pilot_patch.or(self.pilot_patch),
            pilot_group: other.pilot_group.or(self.pilot_group),
        }
    }

    /// Defaults for `sigma` with these overrides applied, validated.
    pub fn resolve(&self, sigma: f64) -> Result<LichiConfig> {
        let mut cfg = LichiConfig::for_sigma(sigma)?;
        if let Some(v) = self.patch {
            cfg.patch_side = v;
        }
        if let Some(v) = self.group {
            cfg.group_size = v;
        }
        if let Some(v) = self.iters {
            cfg.iterations = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
            cfg.pilot.window = v;
        }
        if let Some(v) = self.step {
            cfg.step = v;
            cfg.pilot.step = v;
        }
        if let Some(v) = self.rematch {
            cfg.rematch_period = v;
        }
        if let Some(v) = self.tau_scale {
            cfg.tau_scale = v;
        }
        if let Some(v) = self.pilot_patch {
            cfg.pilot.patch_side = v;
        }
        if let Some(v) = self.pilot_group {
            cfg.pilot.group_size = v;
        }
        if let Some(m) = self.pilot {
            cfg.pilot.method = m;
        }
        if let Some(alpha) = self.alpha {
            match &mut cfg.pilot.method {
                PilotMethod::Noisier2Noise { alpha: a } => *a = alpha,
                other => {
                    return Err(Error::Config(format!(
                        "--alpha only applies to the nr2n pilot, not {}",
                        other.name()
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// First 16 hex digits of the SHA-256 of the JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes to JSON");
    Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_at_sigma_25() {
        let cfg = Overrides::default().resolve(25.0).unwrap();
        assert_eq!(cfg.iterations, 9);
        assert_eq!((cfg.pilot.patch_side, cfg.pilot.group_size), (11, 16));
        assert_eq!((cfg.patch_side * cfg.patch_side, cfg.group_size), (36, 64));
    }

    #[test]
    fn later_overrides_win() {
        let file = Overrides {
            iters: Some(3),
            group: Some(32),
            ..Default::default()
        };
        let flags = Overrides {
            iters: Some(5),
            ..Default::default()
        };
        let cfg = file.merge(flags).resolve(15.0).unwrap();
        assert_eq!((cfg.iterations, cfg.group_size), (5, 32));
    }

    #[test]
    fn alpha_needs_nr2n() {
        let o = Overrides {
            pilot: Some(PilotMethod::Sure),
            alpha: Some(0.3),
            ..Default::default()
        };
        assert!(o.resolve(15.0).is_err());
        let o = Overrides {
            alpha: Some(0.3),
            ..Default::default()
        };
        assert_eq!(
            o.resolve(15.0).unwrap().pilot.method,
            PilotMethod::Noisier2Noise { alpha: 0.3 }
        );
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Overrides::default().resolve(15.0).unwrap();
        let b = Overrides::default().resolve(15.0).unwrap();
        let c = Overrides::default().resolve(35.0).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 16);
    }
}
