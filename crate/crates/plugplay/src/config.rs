//! Experiment description files.
//!
//! A flat `key = value` text format with bracketed sections, chosen over
//! a general serialization format so that golden outputs stay bit-exact
//! and every key maps one to one onto a field of the simulation types.
//! Unknown sections and keys are hard errors with line numbers; missing
//! keys fall back to the documented defaults of the installed-cable
//! experiment (22.8 km, 0.1 photons per pulse, 2.5 MHz trains).
//!
//! ```
//! use plugplay::config::ExperimentConfig;
//!
//! let cfg: ExperimentConfig = "
//!     [link]
//!     length_km = 4.9
//!
//!     [protocol]
//!     mu = 0.2
//! "
//! .parse()
//! .unwrap();
//! assert_eq!(cfg.link.length_km, 4.9);
//! let setup = cfg.session_setup().unwrap();
//! assert_eq!(setup.policy.mu, 0.2);
//! ```

use std::str::FromStr;

use crate::alignment::{AlignmentError, CountNoise, ReflectionScene};
use crate::analytic::{self, AnalyticError, LinkBudget, TrainSchedule};
use crate::protocol::{CascadeParams, ProtocolError, SessionPolicy, SessionSetup};
use crate::sim::{
    calibrate_backscatter, Afterpulse, Attacker, BackscatterModel, DetectorModel, EveBasis,
    OperatingCurve, OperatingPoint, OpticalConfig, SimConfig, SimError,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key '{key}' in [{section}]")]
    UnknownKey {
        line: usize,
        section: &'static str,
        key: String,
    },
    #[error("line {line}: bad value for '{key}': {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// `[link]`: the fiber plant and receiver losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSection {
    /// Transmission line length in km. Default 22.8.
    pub length_km: f64,
    /// Fiber attenuation in dB/km. Default 10.5 dB over 22.8 km.
    pub fiber_loss_db_per_km: f64,
    /// Loss inside the receiver in dB. Default 6.6.
    pub bob_loss_db: f64,
    /// Interferometer extinction ratio in dB, setting the optical QBER
    /// floor. Default 28.6.
    pub extinction_db: f64,
}

impl Default for LinkSection {
    fn default() -> LinkSection {
        LinkSection {
            length_km: 22.8,
            fiber_loss_db_per_km: 10.5 / 22.8,
            bob_loss_db: 6.6,
            extinction_db: 28.6,
        }
    }
}

/// `[detector]`: the gated single-photon counters.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSection {
    /// Quantum efficiency. Default 0.1.
    pub eta_d: f64,
    /// Noise count probability per gate. Default 1e-5.
    pub p_noise_per_gate: f64,
    /// Gate width in ns. Default 2.
    pub gate_ns: f64,
    /// Afterpulse probability right after a click; 0 disables. Default 0.
    pub afterpulse_prob: f64,
    /// Afterpulse decay constant in slots. Default 10.
    pub afterpulse_decay: f64,
    /// Noise-versus-efficiency operating curve as `eta:p_noise` pairs,
    /// strictly increasing in both. Default none.
    pub curve: Option<Vec<(f64, f64)>>,
}

impl Default for DetectorSection {
    fn default() -> DetectorSection {
        DetectorSection {
            eta_d: 0.1,
            p_noise_per_gate: 1e-5,
            gate_ns: 2.0,
            afterpulse_prob: 0.0,
            afterpulse_decay: 10.0,
            curve: None,
        }
    }
}

/// `[train]`: pulse timing and the storage-line duty cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    /// Base repetition rate in MHz. Default 2.5.
    pub rep_rate_mhz: f64,
    /// Pulse separation within a train in ns. Default 400.
    pub pulse_spacing_ns: f64,
    /// Pulses per train; `auto` fills the storage-line capacity.
    pub pulses_per_train: Option<u32>,
    /// Storage line length in km; `auto` is half the transmission line.
    pub storage_km: Option<f64>,
    /// Group velocity in the fiber in m/s. Default 2.04e8.
    pub velocity_m_per_s: f64,
}

impl Default for TrainSection {
    fn default() -> TrainSection {
        TrainSection {
            rep_rate_mhz: 2.5,
            pulse_spacing_ns: 400.0,
            pulses_per_train: None,
            storage_km: None,
            velocity_m_per_s: 2.04e8,
        }
    }
}

/// `[protocol]`: source brightness and post-processing policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSection {
    /// Mean photon number per pulse leaving the sender. Default 0.1.
    pub mu: f64,
    /// Fraction of the sifted key disclosed for error estimation.
    /// Default 0.5.
    pub sample_fraction: f64,
    /// Reconciliation passes. Default 4.
    pub passes: u32,
    /// First-pass block sizing coefficient. Default 0.73.
    pub initial_block_coeff: f64,
    /// Extra bits removed by privacy amplification. Default 64.
    pub margin_bits: u64,
    /// Estimated QBER at which sessions abort; `auto` is the distillation
    /// threshold of the closed-form model.
    pub abort_qber: Option<f64>,
}

impl Default for ProtocolSection {
    fn default() -> ProtocolSection {
        ProtocolSection {
            mu: 0.1,
            sample_fraction: 0.5,
            passes: 4,
            initial_block_coeff: 0.73,
            margin_bits: 64,
            abort_qber: None,
        }
    }
}

/// `[backscatter]`: Rayleigh backscatter noise from train overfill.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BackscatterSection {
    /// Whether overfilled trains add backscatter noise. Default false.
    pub enabled: bool,
    /// Extra noise probability per overlapping pulse; `auto` calibrates
    /// one overlapping pulse to the detector's own noise floor.
    pub noise_per_overlapping_pulse: Option<f64>,
}

/// `[attacker]`: eavesdropping on the quantum channel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AttackerSection {
    /// Measure and resend every pulse in a random basis. Default false.
    pub intercept_resend: bool,
}

/// `[alignment]`: the reflection scene for the timing scan.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSection {
    /// Operator's line length guess in km; `auto` uses the true length.
    pub guess_km: Option<f64>,
    /// Mirror reflection amplitude. Default 1.
    pub mirror_amplitude: f64,
    /// Parasite reflections as `position_km:amplitude` pairs. Default
    /// none.
    pub parasites: Vec<(f64, f64)>,
    /// Instrument delay added to the geometric round trip, in ns.
    /// Default 0.
    pub offset_ns: f64,
    /// Expected detector counts for a unit-amplitude reflection; absent
    /// means a noiseless scan.
    pub poisson_counts: Option<f64>,
    /// Dwell per coarse step in ms, for the wall-clock report. Default
    /// 1.2.
    pub coarse_dwell_ms: f64,
    /// Dwell per fine step in s. Default 2.9.
    pub fine_dwell_s: f64,
}

impl Default for AlignmentSection {
    fn default() -> AlignmentSection {
        AlignmentSection {
            guess_km: None,
            mirror_amplitude: 1.0,
            parasites: Vec::new(),
            offset_ns: 0.0,
            poisson_counts: None,
            coarse_dwell_ms: 1.2,
            fine_dwell_s: 2.9,
        }
    }
}

/// `[reproduce]`: tolerance bands for the published-value comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproduceSection {
    /// Relative band on reproduced rates. Default 0.02.
    pub rate_tol_frac: f64,
    /// Relative band on reproduced QBER values. Default 0.02.
    pub qber_tol_frac: f64,
    /// Sigma multiplier for Monte Carlo ratio checks. Default 3.
    pub ratio_sigma: f64,
    /// Relative band on the overfill QBER doubling. Default 0.2.
    pub double_tol_frac: f64,
    /// Sigma multiplier for flatness checks. Default 1.
    pub flat_sigma: f64,
}

impl Default for ReproduceSection {
    fn default() -> ReproduceSection {
        ReproduceSection {
            rate_tol_frac: 0.02,
            qber_tol_frac: 0.02,
            ratio_sigma: 3.0,
            double_tol_frac: 0.2,
            flat_sigma: 1.0,
        }
    }
}

/// A fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub link: LinkSection,
    pub detector: DetectorSection,
    pub train: TrainSection,
    pub protocol: ProtocolSection,
    pub backscatter: BackscatterSection,
    pub attacker: AttackerSection,
    pub alignment: AlignmentSection,
    pub reproduce: ReproduceSection,
}

/// One `key = value` occurrence waiting to be claimed by its section.
struct Pending {
    section: &'static str,
    key: String,
    value: String,
    line: usize,
}

struct Entries(Vec<Pending>);

impl Entries {
    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let at = self
            .0
            .iter()
            .position(|p| p.section == section && p.key == key)?;
        let p = self.0.remove(at);
        Some((p.value, p.line))
    }
}

const SECTIONS: [&str; 8] = [
    "link",
    "detector",
    "train",
    "protocol",
    "backscatter",
    "attacker",
    "alignment",
    "reproduce",
];

fn split_entries(text: &str) -> Result<Entries, ConfigError> {
    let mut entries: Vec<Pending> = Vec::new();
    let mut section: Option<&'static str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                reason: "section header missing ']'".into(),
            })?;
            section = Some(
                SECTIONS
                    .iter()
                    .find(|s| **s == name)
                    .copied()
                    .ok_or_else(|| ConfigError::UnknownSection {
                        line,
                        name: name.to_string(),
                    })?,
            );
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            reason: "expected 'key = value'".into(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                reason: "empty key or value".into(),
            });
        }
        let section = section.ok_or_else(|| ConfigError::Syntax {
            line,
            reason: "key before any [section] header".into(),
        })?;
        if entries.iter().any(|p| p.section == section && p.key == key) {
            return Err(ConfigError::Syntax {
                line,
                reason: format!("duplicate key '{key}' in [{section}]"),
            });
        }
        entries.push(Pending {
            section,
            key,
            value,
            line,
        });
    }
    Ok(Entries(entries))
}

fn f64_value(raw: &str, key: &str, line: usize) -> Result<f64, ConfigError> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("'{raw}' is not a finite number"),
        }),
    }
}

fn u32_value(raw: &str, key: &str, line: usize) -> Result<u32, ConfigError> {
    raw.parse::<u32>().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: format!("'{raw}' is not a whole number"),
    })
}

fn u64_value(raw: &str, key: &str, line: usize) -> Result<u64, ConfigError> {
    raw.parse::<u64>().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: format!("'{raw}' is not a whole number"),
    })
}

fn bool_value(raw: &str, key: &str, line: usize) -> Result<bool, ConfigError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("'{raw}' is not 'true' or 'false'"),
        }),
    }
}

/// `a:b, c:d` pair lists, used for curves and parasite tables.
fn pairs_value(raw: &str, key: &str, line: usize) -> Result<Vec<(f64, f64)>, ConfigError> {
    raw.split(',')
        .map(|item| {
            let item = item.trim();
            let (a, b) = item.split_once(':').ok_or_else(|| ConfigError::BadValue {
                line,
                key: key.to_string(),
                reason: format!("'{item}' is not an 'a:b' pair"),
            })?;
            Ok((
                f64_value(a.trim(), key, line)?,
                f64_value(b.trim(), key, line)?,
            ))
        })
        .collect()
}

macro_rules! set_field {
    // `auto` resolves to None; any other value must parse.
    ($entries:ident, $section:literal, $key:literal, $slot:expr, opt $parser:ident) => {
        if let Some((raw, line)) = $entries.take($section, $key) {
            $slot = if raw == "auto" {
                None
            } else {
                Some($parser(&raw, $key, line)?)
            };
        }
    };
    ($entries:ident, $section:literal, $key:literal, $slot:expr, $parser:ident) => {
        if let Some((raw, line)) = $entries.take($section, $key) {
            $slot = $parser(&raw, $key, line)?;
        }
    };
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut e = split_entries(text)?;
        let mut cfg = ExperimentConfig::default();

        set_field!(e, "link", "length_km", cfg.link.length_km, f64_value);
        set_field!(
            e,
            "link",
            "fiber_loss_db_per_km",
            cfg.link.fiber_loss_db_per_km,
            f64_value
        );
        set_field!(e, "link", "bob_loss_db", cfg.link.bob_loss_db, f64_value);
        set_field!(e, "link", "extinction_db", cfg.link.extinction_db, f64_value);

        set_field!(e, "detector", "eta_d", cfg.detector.eta_d, f64_value);
        set_field!(
            e,
            "detector",
            "p_noise_per_gate",
            cfg.detector.p_noise_per_gate,
            f64_value
        );
        set_field!(e, "detector", "gate_ns", cfg.detector.gate_ns, f64_value);
        set_field!(
            e,
            "detector",
            "afterpulse_prob",
            cfg.detector.afterpulse_prob,
            f64_value
        );
        set_field!(
            e,
            "detector",
            "afterpulse_decay",
            cfg.detector.afterpulse_decay,
            f64_value
        );
        if let Some((raw, line)) = e.take("detector", "curve") {
            cfg.detector.curve = Some(pairs_value(&raw, "curve", line)?);
        }

        set_field!(e, "train", "rep_rate_mhz", cfg.train.rep_rate_mhz, f64_value);
        set_field!(
            e,
            "train",
            "pulse_spacing_ns",
            cfg.train.pulse_spacing_ns,
            f64_value
        );
        set_field!(
            e,
            "train",
            "pulses_per_train",
            cfg.train.pulses_per_train,
            opt u32_value
        );
        set_field!(e, "train", "storage_km", cfg.train.storage_km, opt f64_value);
        set_field!(
            e,
            "train",
            "velocity_m_per_s",
            cfg.train.velocity_m_per_s,
            f64_value
        );

        set_field!(e, "protocol", "mu", cfg.protocol.mu, f64_value);
        set_field!(
            e,
            "protocol",
            "sample_fraction",
            cfg.protocol.sample_fraction,
            f64_value
        );
        set_field!(e, "protocol", "passes", cfg.protocol.passes, u32_value);
        set_field!(
            e,
            "protocol",
            "initial_block_coeff",
            cfg.protocol.initial_block_coeff,
            f64_value
        );
        set_field!(
            e,
            "protocol",
            "margin_bits",
            cfg.protocol.margin_bits,
            u64_value
        );
        set_field!(e, "protocol", "abort_qber", cfg.protocol.abort_qber, opt f64_value);

        set_field!(
            e,
            "backscatter",
            "enabled",
            cfg.backscatter.enabled,
            bool_value
        );
        set_field!(
            e,
            "backscatter",
            "noise_per_overlapping_pulse",
            cfg.backscatter.noise_per_overlapping_pulse,
            opt f64_value
        );

        set_field!(
            e,
            "attacker",
            "intercept_resend",
            cfg.attacker.intercept_resend,
            bool_value
        );

        set_field!(e, "alignment", "guess_km", cfg.alignment.guess_km, opt f64_value);
        set_field!(
            e,
            "alignment",
            "mirror_amplitude",
            cfg.alignment.mirror_amplitude,
            f64_value
        );
        if let Some((raw, line)) = e.take("alignment", "parasites") {
            cfg.alignment.parasites = pairs_value(&raw, "parasites", line)?;
        }
        set_field!(e, "alignment", "offset_ns", cfg.alignment.offset_ns, f64_value);
        if let Some((raw, line)) = e.take("alignment", "poisson_counts") {
            cfg.alignment.poisson_counts = Some(f64_value(&raw, "poisson_counts", line)?);
        }
        set_field!(
            e,
            "alignment",
            "coarse_dwell_ms",
            cfg.alignment.coarse_dwell_ms,
            f64_value
        );
        set_field!(
            e,
            "alignment",
            "fine_dwell_s",
            cfg.alignment.fine_dwell_s,
            f64_value
        );

        set_field!(
            e,
            "reproduce",
            "rate_tol_frac",
            cfg.reproduce.rate_tol_frac,
            f64_value
        );
        set_field!(
            e,
            "reproduce",
            "qber_tol_frac",
            cfg.reproduce.qber_tol_frac,
            f64_value
        );
        set_field!(e, "reproduce", "ratio_sigma", cfg.reproduce.ratio_sigma, f64_value);
        set_field!(
            e,
            "reproduce",
            "double_tol_frac",
            cfg.reproduce.double_tol_frac,
            f64_value
        );
        set_field!(e, "reproduce", "flat_sigma", cfg.reproduce.flat_sigma, f64_value);

        if let Some(left) = e.0.first() {
            return Err(ConfigError::UnknownKey {
                line: left.line,
                section: left.section,
                key: left.key.clone(),
            });
        }
        Ok(cfg)
    }

    /// The closed-form link budget for these settings.
    pub fn link_budget(&self) -> Result<LinkBudget, ConfigError> {
        let qber_opt = crate::sim::extinction_to_qberopt(self.link.extinction_db)?;
        Ok(LinkBudget::new(
            0.5,
            self.protocol.mu,
            self.train.rep_rate_mhz * 1e6,
            self.detector.eta_d,
            self.link.fiber_loss_db_per_km,
            self.link.length_km,
            self.link.bob_loss_db,
            self.detector.p_noise_per_gate,
            qber_opt,
        )?)
    }

    /// Storage line length after resolving `auto`.
    pub fn storage_km(&self) -> f64 {
        self.train
            .storage_km
            .unwrap_or(self.link.length_km / 2.0)
    }

    /// The train timing, filling the storage line when `pulses_per_train`
    /// is `auto`.
    pub fn schedule(&self) -> Result<TrainSchedule, ConfigError> {
        let spacing_s = self.train.pulse_spacing_ns * 1e-9;
        let storage = self.storage_km();
        let ppt = match self.train.pulses_per_train {
            Some(n) => n,
            None => {
                let probe = TrainSchedule::new(
                    1,
                    spacing_s,
                    storage,
                    self.train.velocity_m_per_s,
                    self.link.length_km,
                )?;
                probe.capacity_pulses().max(1)
            }
        };
        Ok(TrainSchedule::new(
            ppt,
            spacing_s,
            storage,
            self.train.velocity_m_per_s,
            self.link.length_km,
        )?)
    }

    /// The Monte Carlo configuration for these settings.
    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let budget = self.link_budget()?;
        let optical = OpticalConfig::new(
            self.protocol.mu,
            budget.transfer_efficiency(),
            self.link.extinction_db,
        )?;
        let mut detector = DetectorModel::new(
            self.detector.eta_d,
            self.detector.p_noise_per_gate,
            self.detector.gate_ns * 1e-9,
        )?;
        if let Some(points) = &self.detector.curve {
            let points = points
                .iter()
                .map(|&(eta_d, p_noise)| OperatingPoint { eta_d, p_noise })
                .collect();
            detector = detector.with_curve(OperatingCurve::new(points)?);
        }
        if self.detector.afterpulse_prob > 0.0 {
            detector = detector.with_afterpulse(Afterpulse::new(
                self.detector.afterpulse_prob,
                self.detector.afterpulse_decay,
            )?);
        }
        let backscatter = if self.backscatter.enabled {
            Some(match self.backscatter.noise_per_overlapping_pulse {
                Some(x) => BackscatterModel::new(x)?,
                None => calibrate_backscatter(self.detector.p_noise_per_gate)?,
            })
        } else {
            None
        };
        let attacker = if self.attacker.intercept_resend {
            Attacker::InterceptResend {
                basis: EveBasis::Random,
            }
        } else {
            Attacker::None
        };
        Ok(SimConfig {
            optical,
            detector,
            backscatter,
            attacker,
            base_rep_rate_hz: self.train.rep_rate_mhz * 1e6,
        })
    }

    /// The post-processing policy for these settings.
    pub fn session_policy(&self) -> SessionPolicy {
        SessionPolicy {
            mu: self.protocol.mu,
            sample_fraction: self.protocol.sample_fraction,
            cascade: CascadeParams {
                passes: self.protocol.passes,
                initial_block_coeff: self.protocol.initial_block_coeff,
            },
            pa_safety_margin_bits: self.protocol.margin_bits,
            qber_abort_threshold: self
                .protocol
                .abort_qber
                .unwrap_or_else(analytic::distillation_threshold),
        }
    }

    /// Everything a session endpoint needs, validated as a whole. The
    /// source brightness is shared between the optics and the policy by
    /// construction.
    pub fn session_setup(&self) -> Result<SessionSetup, ConfigError> {
        let setup = SessionSetup {
            sim: self.sim_config()?,
            schedule: self.schedule()?,
            policy: self.session_policy(),
        };
        setup.validate()?;
        Ok(setup)
    }

    /// The reflection scene for the timing scan, plus the operator's line
    /// length guess in km.
    pub fn alignment_scene(&self) -> Result<(ReflectionScene, f64), ConfigError> {
        let round_trip =
            |km: f64| 2.0 * km * 1000.0 / self.train.velocity_m_per_s;
        let true_delay = round_trip(self.link.length_km) + self.alignment.offset_ns * 1e-9;
        let parasites = self
            .alignment
            .parasites
            .iter()
            .map(|&(km, amp)| (round_trip(km), amp))
            .collect();
        let scene = ReflectionScene::new(true_delay, self.alignment.mirror_amplitude, parasites)?;
        let guess = self.alignment.guess_km.unwrap_or(self.link.length_km);
        Ok((scene, guess))
    }

    /// Counting noise for the timing scan, seeded for reproducibility.
    pub fn alignment_noise(&self, seed: u64) -> CountNoise {
        match self.alignment.poisson_counts {
            Some(counts) => CountNoise::poisson(counts, seed),
            None => CountNoise::Off,
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_installed_cable_experiment() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.link.length_km, 22.8);
        assert_eq!(cfg.protocol.mu, 0.1);
        assert_eq!(cfg.detector.eta_d, 0.1);
        assert_eq!(cfg.detector.p_noise_per_gate, 1e-5);
        assert_eq!(cfg.detector.gate_ns, 2.0);
        assert_eq!(cfg.train.rep_rate_mhz, 2.5);
        assert_eq!(cfg.train.pulse_spacing_ns, 400.0);
        assert_eq!(cfg.storage_km(), 11.4);
    }

    #[test]
    fn every_key_round_trips() {
        let text = "
            # a fully explicit experiment
            [link]
            length_km = 4.9
            fiber_loss_db_per_km = 0.35
            bob_loss_db = 5.0
            extinction_db = 30.0

            [detector]
            eta_d = 0.2
            p_noise_per_gate = 1e-4
            gate_ns = 1.5
            afterpulse_prob = 0.01
            afterpulse_decay = 7.5
            curve = 0.1:1e-5, 0.2:1e-4

            [train]
            rep_rate_mhz = 5.0
            pulse_spacing_ns = 200
            pulses_per_train = 100
            storage_km = 3.0
            velocity_m_per_s = 2.0e8

            [protocol]
            mu = 0.2
            sample_fraction = 0.25
            passes = 3
            initial_block_coeff = 0.8
            margin_bits = 32
            abort_qber = 0.12

            [backscatter]
            enabled = true
            noise_per_overlapping_pulse = 2e-7

            [attacker]
            intercept_resend = true

            [alignment]
            guess_km = 6.0
            mirror_amplitude = 2.0
            parasites = 1.0:0.05, 3.5:0.2
            offset_ns = 12.5
            poisson_counts = 1500
            coarse_dwell_ms = 1.0
            fine_dwell_s = 2.0

            [reproduce]
            rate_tol_frac = 0.05
            qber_tol_frac = 0.03
            ratio_sigma = 2.0
            double_tol_frac = 0.25
            flat_sigma = 1.5
        ";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.link.length_km, 4.9);
        assert_eq!(cfg.link.fiber_loss_db_per_km, 0.35);
        assert_eq!(cfg.link.bob_loss_db, 5.0);
        assert_eq!(cfg.link.extinction_db, 30.0);
        assert_eq!(cfg.detector.eta_d, 0.2);
        assert_eq!(cfg.detector.p_noise_per_gate, 1e-4);
        assert_eq!(cfg.detector.gate_ns, 1.5);
        assert_eq!(cfg.detector.afterpulse_prob, 0.01);
        assert_eq!(cfg.detector.afterpulse_decay, 7.5);
        assert_eq!(
            cfg.detector.curve,
            Some(vec![(0.1, 1e-5), (0.2, 1e-4)])
        );
        assert_eq!(cfg.train.rep_rate_mhz, 5.0);
        assert_eq!(cfg.train.pulse_spacing_ns, 200.0);
        assert_eq!(cfg.train.pulses_per_train, Some(100));
        assert_eq!(cfg.train.storage_km, Some(3.0));
        assert_eq!(cfg.train.velocity_m_per_s, 2.0e8);
        assert_eq!(cfg.protocol.mu, 0.2);
        assert_eq!(cfg.protocol.sample_fraction, 0.25);
        assert_eq!(cfg.protocol.passes, 3);
        assert_eq!(cfg.protocol.initial_block_coeff, 0.8);
        assert_eq!(cfg.protocol.margin_bits, 32);
        assert_eq!(cfg.protocol.abort_qber, Some(0.12));
        assert!(cfg.backscatter.enabled);
        assert_eq!(cfg.backscatter.noise_per_overlapping_pulse, Some(2e-7));
        assert!(cfg.attacker.intercept_resend);
        assert_eq!(cfg.alignment.guess_km, Some(6.0));
        assert_eq!(cfg.alignment.mirror_amplitude, 2.0);
        assert_eq!(cfg.alignment.parasites, vec![(1.0, 0.05), (3.5, 0.2)]);
        assert_eq!(cfg.alignment.offset_ns, 12.5);
        assert_eq!(cfg.alignment.poisson_counts, Some(1500.0));
        assert_eq!(cfg.alignment.coarse_dwell_ms, 1.0);
        assert_eq!(cfg.alignment.fine_dwell_s, 2.0);
        assert_eq!(cfg.reproduce.rate_tol_frac, 0.05);
        assert_eq!(cfg.reproduce.qber_tol_frac, 0.03);
        assert_eq!(cfg.reproduce.ratio_sigma, 2.0);
        assert_eq!(cfg.reproduce.double_tol_frac, 0.25);
        assert_eq!(cfg.reproduce.flat_sigma, 1.5);
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected_with_lines() {
        let err = ExperimentConfig::parse("[link]\nlenght_km = 5").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, section, key } => {
                assert_eq!(line, 2);
                assert_eq!(section, "link");
                assert_eq!(key, "lenght_km");
            }
            other => panic!("unexpected error {other}"),
        }

        let err = ExperimentConfig::parse("\n[links]\n").unwrap_err();
        match err {
            ConfigError::UnknownSection { line, name } => {
                assert_eq!(line, 2);
                assert_eq!(name, "links");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        for (text, needle) in [
            ("mu = 0.1", "before any"),
            ("[link\nlength_km = 1", "missing ']'"),
            ("[link]\nlength_km", "key = value"),
            ("[link]\nlength_km =", "empty key or value"),
            ("[link]\nlength_km = 1\nlength_km = 2", "duplicate"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            let msg = err.to_string();
            assert!(
                msg.contains(needle) && msg.contains("line"),
                "{text:?} gave {msg:?}"
            );
        }
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = ExperimentConfig::parse("[protocol]\nmu = fast").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("'mu'"), "{msg}");

        let err = ExperimentConfig::parse("[backscatter]\nenabled = on").unwrap_err();
        assert!(err.to_string().contains("'enabled'"));

        let err = ExperimentConfig::parse("[alignment]\nparasites = 1.0").unwrap_err();
        assert!(err.to_string().contains("pair"));
    }

    #[test]
    fn auto_values_resolve_from_the_link() {
        let cfg = ExperimentConfig::parse(
            "[train]\npulses_per_train = auto\nstorage_km = auto",
        )
        .unwrap();
        assert_eq!(cfg.train.pulses_per_train, None);
        let schedule = cfg.schedule().unwrap();
        // Half the 22.8 km line stores 11.4 km of pulses; the capacity
        // is one pulse per 400 ns of round trip inside it.
        assert_eq!(cfg.storage_km(), 11.4);
        assert_eq!(schedule.pulses_per_train, schedule.capacity_pulses());
        assert!(schedule.fits_storage_line());
    }

    #[test]
    fn builders_produce_a_coherent_session_setup() {
        let cfg = ExperimentConfig::parse("").unwrap();
        let setup = cfg.session_setup().unwrap();
        assert_eq!(setup.policy.mu, setup.sim.optical.mu);
        assert_eq!(setup.sim.base_rep_rate_hz, 2.5e6);
        let budget = cfg.link_budget().unwrap();
        assert!((budget.transfer_efficiency() - setup.sim.optical.eta_t).abs() < 1e-15);
        // Same text, same digest.
        let again = ExperimentConfig::parse("").unwrap().session_setup().unwrap();
        assert_eq!(setup.digest(), again.digest());
    }

    #[test]
    fn attacker_and_backscatter_flags_reach_the_simulation() {
        let cfg = ExperimentConfig::parse(
            "[attacker]\nintercept_resend = true\n[backscatter]\nenabled = true",
        )
        .unwrap();
        let sim = cfg.sim_config().unwrap();
        assert_eq!(
            sim.attacker,
            Attacker::InterceptResend {
                basis: EveBasis::Random
            }
        );
        let auto = sim.backscatter.expect("backscatter enabled");
        let explicit = ExperimentConfig::parse(
            "[backscatter]\nenabled = true\nnoise_per_overlapping_pulse = 42e-9",
        )
        .unwrap()
        .sim_config()
        .unwrap()
        .backscatter
        .unwrap();
        assert_eq!(
            auto,
            calibrate_backscatter(cfg.detector.p_noise_per_gate).unwrap()
        );
        assert_eq!(explicit, BackscatterModel::new(42e-9).unwrap());
    }

    #[test]
    fn alignment_scene_tracks_the_link_length() {
        let cfg = ExperimentConfig::parse(
            "[alignment]\nparasites = 1.0:0.05\noffset_ns = 10",
        )
        .unwrap();
        let (scene, guess) = cfg.alignment_scene().unwrap();
        let geometric = 2.0 * 22.8 * 1000.0 / 2.04e8;
        assert!((scene.true_delay_s - geometric - 10e-9).abs() < 1e-15);
        assert_eq!(guess, 22.8);
        assert_eq!(scene.parasites.len(), 1);
        assert!(matches!(cfg.alignment_noise(7), CountNoise::Off));
        let noisy = ExperimentConfig::parse("[alignment]\npoisson_counts = 100").unwrap();
        assert!(matches!(
            noisy.alignment_noise(7),
            CountNoise::Poisson { .. }
        ));
    }
}
