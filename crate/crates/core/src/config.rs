//! Simulation parameters and their on-disk TOML form.
//!
//! Every key is named after the corresponding [`SimConfig`] field. Logarithmic
//! quantities carry a `_db` / `_dbm` suffix and are converted to linear scale
//! (milliwatts for powers) by [`SimConfig::powers`]. Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::pilots::PilotPolicy;

/// Converts a dB (or dBm) value to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub area_radius_m: f64,
    pub num_aps: usize,
    pub num_seus: usize,
    pub num_ues: usize,
    pub antennas_per_ap: usize,
    pub min_access_distance_m: f64,
    pub pathloss_exponent: f64,
    /// Linear path-loss constant `c` in `c * d^-alpha`.
    pub pathloss_constant: f64,
    /// Log-normal shadowing standard deviation; 0 disables shadowing.
    #[serde(default)]
    pub shadowing_sigma_db: f64,
    pub ul_power_dbm: f64,
    /// Optional per-UE override of `ul_power_dbm` (length `num_ues`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ul_power_per_ue_dbm: Option<Vec<f64>>,
    /// Pilot transmit power; defaults to the uplink data power.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_power_dbm: Option<f64>,
    pub noise_power_dbm: f64,
    /// Optional per-SEU override of the uplink data noise (length `num_seus`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power_per_seu_dbm: Option<Vec<f64>>,
    pub num_pilots: usize,
    pub selection_threshold_db: Threshold,
    /// Optional cap on the number of UEs a single AP may serve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ues_per_ap: Option<usize>,
    #[serde(default)]
    pub pilot_policy: PilotPolicy,
    pub rng_seed: u64,
}

/// AP selection threshold in dB below each UE's strongest AP.
///
/// `Threshold::ALL` (written as `"all"` or `inf` in config files) selects
/// every AP for every UE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold(pub f64);

impl Threshold {
    pub const ALL: Threshold = Threshold(f64::INFINITY);

    pub fn db(self) -> f64 {
        self.0
    }

    pub fn is_all(self) -> bool {
        self.0 == f64::INFINITY
    }
}

impl From<f64> for Threshold {
    fn from(db: f64) -> Self {
        Threshold(db)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_all() {
            f.write_str("all")
        } else {
            write!(f, "{} dB", self.0)
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_all() {
            s.serialize_str("all")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct ThresholdVisitor;

        impl Visitor<'_> for ThresholdVisitor {
            type Value = Threshold;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a threshold in dB or the string \"all\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Threshold, E> {
                Ok(Threshold(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Threshold, E> {
                Ok(Threshold(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Threshold, E> {
                Ok(Threshold(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Threshold, E> {
                match v {
                    "all" | "inf" => Ok(Threshold::ALL),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }

        d.deserialize_any(ThresholdVisitor)
    }
}

/// Linear-scale powers derived from a [`SimConfig`], in milliwatts.
#[derive(Clone, Debug, PartialEq)]
pub struct Powers {
    /// Uplink data power per UE (rho_k).
    pub ul: Vec<f64>,
    /// Pilot power (rho_p).
    pub pilot: f64,
    /// Uplink data noise per SEU (sigma^2_ul,l).
    pub noise_ul: Vec<f64>,
    /// Pilot noise (sigma^2_p).
    pub noise_pilot: f64,
}

impl Powers {
    /// Training SNR `gamma_p = rho_p / sigma^2_p`.
    pub fn training_snr(&self) -> f64 {
        self.pilot / self.noise_pilot
    }

    /// Returns a copy with the per-SEU noise vector resized to `num_seus`,
    /// reusing the first entry. Used when an architecture regroups APs.
    pub(crate) fn with_seu_count(&self, num_seus: usize) -> Powers {
        let mut p = self.clone();
        if p.noise_ul.len() != num_seus {
            p.noise_ul = vec![self.noise_ul[0]; num_seus];
        }
        p
    }
}

impl SimConfig {
    /// Simulation setup of the reference deployment: 1 km disk, 256 APs,
    /// 4 SEUs, 32 UEs, 15 dBm uplink power and -84 dBm noise.
    pub fn full() -> SimConfig {
        SimConfig {
            area_radius_m: 1000.0,
            num_aps: 256,
            num_seus: 4,
            num_ues: 32,
            antennas_per_ap: 4,
            min_access_distance_m: 30.0,
            pathloss_exponent: 3.7,
            pathloss_constant: 1.0,
            shadowing_sigma_db: 0.0,
            ul_power_dbm: 15.0,
            ul_power_per_ue_dbm: None,
            pilot_power_dbm: None,
            noise_power_dbm: -84.0,
            noise_power_per_seu_dbm: None,
            num_pilots: 8,
            selection_threshold_db: Threshold(20.0),
            max_ues_per_ap: None,
            pilot_policy: PilotPolicy::RoundRobin,
            rng_seed: 1,
        }
    }

    /// Reduced deployment that runs in seconds: 64 APs, 16 UEs, 8 pilots.
    pub fn desk() -> SimConfig {
        SimConfig {
            num_aps: 64,
            num_ues: 16,
            ..SimConfig::full()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<SimConfig> {
        let cfg: SimConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path)?;
        SimConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("SimConfig always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_aps == 0 || self.num_seus == 0 || self.num_ues == 0 {
            return fail("num_aps, num_seus and num_ues must be positive".into());
        }
        if self.antennas_per_ap == 0 {
            return fail("antennas_per_ap must be positive".into());
        }
        if self.num_pilots == 0 || self.num_pilots > self.num_ues {
            return fail(format!(
                "num_pilots must satisfy 1 <= num_pilots <= num_ues ({}), got {}",
                self.num_ues, self.num_pilots
            ));
        }
        if !(self.area_radius_m.is_finite() && self.area_radius_m > 0.0) {
            return fail("area_radius_m must be positive and finite".into());
        }
        if !(self.min_access_distance_m >= 0.0 && self.area_radius_m > self.min_access_distance_m) {
            return fail("need 0 <= min_access_distance_m < area_radius_m".into());
        }
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent > 0.0) {
            return fail("pathloss_exponent must be positive".into());
        }
        if !(self.pathloss_constant.is_finite() && self.pathloss_constant > 0.0) {
            return fail("pathloss_constant must be positive".into());
        }
        if !(self.shadowing_sigma_db.is_finite() && self.shadowing_sigma_db >= 0.0) {
            return fail("shadowing_sigma_db must be non-negative".into());
        }
        let finite = [self.ul_power_dbm, self.noise_power_dbm]
            .into_iter()
            .chain(self.pilot_power_dbm)
            .chain(self.ul_power_per_ue_dbm.iter().flatten().copied())
            .chain(self.noise_power_per_seu_dbm.iter().flatten().copied())
            .all(f64::is_finite);
        if !finite {
            return fail("all powers must be finite".into());
        }
        if let Some(p) = &self.ul_power_per_ue_dbm {
            if p.len() != self.num_ues {
                return fail(format!("ul_power_per_ue_dbm needs {} entries", self.num_ues));
            }
        }
        if let Some(n) = &self.noise_power_per_seu_dbm {
            if n.len() != self.num_seus {
                return fail(format!("noise_power_per_seu_dbm needs {} entries", self.num_seus));
            }
        }
        if self.selection_threshold_db.0.is_nan() || self.selection_threshold_db.0 < 0.0 {
            return fail("selection_threshold_db must be >= 0 or \"all\"".into());
        }
        if self.max_ues_per_ap == Some(0) {
            return fail("max_ues_per_ap must be positive when set".into());
        }
        Ok(())
    }

    pub fn powers(&self) -> Powers {
        let ul = match &self.ul_power_per_ue_dbm {
            Some(p) => p.iter().map(|&x| db_to_linear(x)).collect(),
            None => vec![db_to_linear(self.ul_power_dbm); self.num_ues],
        };
        let noise_ul = match &self.noise_power_per_seu_dbm {
            Some(n) => n.iter().map(|&x| db_to_linear(x)).collect(),
            None => vec![db_to_linear(self.noise_power_dbm); self.num_seus],
        };
        Powers {
            ul,
            pilot: db_to_linear(self.pilot_power_dbm.unwrap_or(self.ul_power_dbm)),
            noise_ul,
            noise_pilot: db_to_linear(self.noise_power_dbm),
        }
    }
}
