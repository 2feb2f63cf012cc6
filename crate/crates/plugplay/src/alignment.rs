//! Two-stage reflectometry scan for detector gate timing.
//!
//! Gated single-photon detectors only see a pulse if they open at the
//! right moment, so before any key material flows the receiver must
//! measure the round-trip flight time to the far mirror to a precision
//! of the order of 100 ps. The scan runs photon-counting reflectometry
//! in two stages: a coarse sweep over the operator's distance guess
//! (give or take [`GUESS_WINDOW_KM`]) in 1 ns steps locates the mirror
//! reflection, which dwarfs every parasite reflection in the system,
//! then a fine sweep of a 2 ns region around it in 100 ps steps centers
//! the estimate on the peak.
//!
//! The response model is noiseless rectangular peaks: a probe step sees
//! a reflection's amplitude when the reflection falls inside the step's
//! cell, within half a step width either way, so consecutive cells tile
//! the window without gaps. Counting statistics can be layered on top
//! with [`CountNoise`].

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};

/// Coarse scan step, 1 ns.
pub const COARSE_STEP_S: f64 = 1e-9;
/// Fine scan step, 100 ps.
pub const FINE_STEP_S: f64 = 100e-12;
/// Half-width of the coarse window around the operator's guess, in km of
/// line length.
pub const GUESS_WINDOW_KM: f64 = 5.0;
/// Full width of the fine window around the coarse candidate.
pub const FINE_WINDOW_S: f64 = 2e-9;

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum AlignmentError {
    #[error("scene violates its contract: {0}")]
    BadScene(&'static str),
    #[error("{name} out of range: {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("no reflection found in the scanned window")]
    NotFound,
    #[error("alignment failed: no peak in the fine window")]
    NoPeak,
}

/// What the reflectometer looks at: one dominant mirror reflection plus
/// the weak parasites thrown back by connectors and splices.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionScene {
    /// Round-trip delay to the far mirror, in seconds.
    pub true_delay_s: f64,
    /// Mirror reflection amplitude, in arbitrary units.
    pub mirror_amplitude: f64,
    /// Parasite reflections as `(round-trip delay s, amplitude)`.
    pub parasites: Vec<(f64, f64)>,
}

impl ReflectionScene {
    /// Builds a scene, checking that the mirror dominates: it must be at
    /// least ten times stronger than any single parasite, otherwise the
    /// coarse argmax has no justification.
    pub fn new(
        true_delay_s: f64,
        mirror_amplitude: f64,
        parasites: Vec<(f64, f64)>,
    ) -> Result<ReflectionScene, AlignmentError> {
        if !true_delay_s.is_finite() || true_delay_s < 0.0 {
            return Err(AlignmentError::BadScene("mirror delay must be nonnegative"));
        }
        if !mirror_amplitude.is_finite() || mirror_amplitude <= 0.0 {
            return Err(AlignmentError::BadScene("mirror amplitude must be positive"));
        }
        for &(d, a) in &parasites {
            if !d.is_finite() || d < 0.0 {
                return Err(AlignmentError::BadScene("parasite delay must be nonnegative"));
            }
            if !a.is_finite() || a <= 0.0 {
                return Err(AlignmentError::BadScene("parasite amplitude must be positive"));
            }
            if a * 10.0 > mirror_amplitude {
                return Err(AlignmentError::BadScene(
                    "mirror must be at least 10x stronger than every parasite",
                ));
            }
        }
        Ok(ReflectionScene {
            true_delay_s,
            mirror_amplitude,
            parasites,
        })
    }

    /// Detector response at probe delay `t_s` for a scan of the given
    /// step width. Rectangular model: every reflection inside the
    /// probe's cell, half a step width either way, contributes its full
    /// amplitude. Cell boundaries belong to both neighbors so no delay
    /// ever falls between cells.
    fn response(&self, t_s: f64, step_s: f64) -> f64 {
        let half = step_s / 2.0;
        let mut r = 0.0;
        if (t_s - self.true_delay_s).abs() <= half {
            r += self.mirror_amplitude;
        }
        for &(d, a) in &self.parasites {
            if (t_s - d).abs() <= half {
                r += a;
            }
        }
        r
    }
}

/// Counting statistics applied to each probe step.
pub enum CountNoise {
    /// The ideal reflectometer: reads the response directly.
    Off,
    /// Photon counting: a response of amplitude `a` yields
    /// `Poisson(a * counts_at_unit)` detections, reported back in
    /// amplitude units. Larger `counts_at_unit` means longer dwell per
    /// step and tighter estimates.
    Poisson {
        counts_at_unit: f64,
        rng: ChaCha12Rng,
    },
}

impl CountNoise {
    pub fn poisson(counts_at_unit: f64, seed: u64) -> CountNoise {
        CountNoise::Poisson {
            counts_at_unit,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    fn observe(&mut self, amplitude: f64) -> f64 {
        match self {
            CountNoise::Off => amplitude,
            CountNoise::Poisson {
                counts_at_unit,
                rng,
            } => {
                let lambda = amplitude * *counts_at_unit;
                if lambda <= 0.0 {
                    return 0.0;
                }
                let counts = Poisson::new(lambda).expect("lambda is positive").sample(rng);
                counts / *counts_at_unit
            }
        }
    }
}

/// Where the coarse stage thinks the mirror is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseCandidate {
    /// Probe delay of the strongest response, in seconds. Within one
    /// coarse step of the true delay when the guess honored its window.
    pub delay_s: f64,
    /// Probe steps spent.
    pub steps: u64,
}

/// Outcome of the full two-stage scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    /// Round-trip delay estimate, in seconds. Within 100 ps of the true
    /// delay on success.
    pub estimated_delay_s: f64,
    pub coarse_steps: u64,
    pub fine_steps: u64,
}

impl std::fmt::Display for AlignmentResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gate delay {:.4} us after {} coarse + {} fine steps",
            self.estimated_delay_s * 1e6,
            self.coarse_steps,
            self.fine_steps
        )
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), AlignmentError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(AlignmentError::BadParameter { name, value });
    }
    Ok(())
}

/// Sweeps the round-trip delays of line lengths `operator_guess_km` give
/// or take [`GUESS_WINDOW_KM`] in 1 ns steps and returns the step with
/// the strongest response, earliest delay winning ties.
///
/// Fails with [`AlignmentError::NotFound`] when the whole window is
/// dark. The guess must be within [`GUESS_WINDOW_KM`] of the true line
/// length for the mirror to be captured; a worse guess either misses
/// everything or locks onto a parasite, exactly as a real reflectometer
/// would.
pub fn coarse_scan(
    scene: &ReflectionScene,
    operator_guess_km: f64,
    velocity_m_per_s: f64,
    noise: &mut CountNoise,
) -> Result<CoarseCandidate, AlignmentError> {
    check_positive("velocity_m_per_s", velocity_m_per_s)?;
    if !operator_guess_km.is_finite() || operator_guess_km < 0.0 {
        return Err(AlignmentError::BadParameter {
            name: "operator_guess_km",
            value: operator_guess_km,
        });
    }
    let round_trip = |km: f64| 2.0 * km * 1000.0 / velocity_m_per_s;
    let lo = round_trip((operator_guess_km - GUESS_WINDOW_KM).max(0.0));
    let hi = round_trip(operator_guess_km + GUESS_WINDOW_KM);
    // Inclusive endpoints; the tiny slack keeps the count stable when
    // the window span is an exact multiple of the step.
    let steps = ((hi - lo) / COARSE_STEP_S + 1e-6) as u64 + 1;

    let mut best = (0.0f64, lo);
    for i in 0..steps {
        let t = lo + i as f64 * COARSE_STEP_S;
        let r = noise.observe(scene.response(t, COARSE_STEP_S));
        if r > best.0 {
            best = (r, t);
        }
    }
    if best.0 <= 0.0 {
        return Err(AlignmentError::NotFound);
    }
    Ok(CoarseCandidate {
        delay_s: best.1,
        steps,
    })
}

/// Sweeps a [`FINE_WINDOW_S`] region centered on the coarse candidate in
/// 100 ps steps and centers the estimate on the peak: the centroid of
/// the contiguous run of steps at or above half the maximum response.
///
/// With the candidate within one coarse step of the truth (which
/// [`coarse_scan`] guarantees) the noiseless error is at most half a
/// fine step, comfortably inside the 100 ps contract.
pub fn fine_scan(
    scene: &ReflectionScene,
    coarse: &CoarseCandidate,
    noise: &mut CountNoise,
) -> Result<AlignmentResult, AlignmentError> {
    let lo = (coarse.delay_s - FINE_WINDOW_S / 2.0).max(0.0);
    let steps = (FINE_WINDOW_S / FINE_STEP_S + 1e-6) as u64 + 1;
    let responses: Vec<(f64, f64)> = (0..steps)
        .map(|i| {
            let t = lo + i as f64 * FINE_STEP_S;
            (t, noise.observe(scene.response(t, FINE_STEP_S)))
        })
        .collect();

    let peak = responses
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, &(_, r))| (i, r))
        .expect("window is never empty");
    if peak.1 <= 0.0 {
        return Err(AlignmentError::NoPeak);
    }

    // Expand around the peak while the response holds half maximum, then
    // take the amplitude-weighted centroid of that run.
    let half = peak.1 / 2.0;
    let mut first = peak.0;
    while first > 0 && responses[first - 1].1 >= half {
        first -= 1;
    }
    let mut last = peak.0;
    while last + 1 < responses.len() && responses[last + 1].1 >= half {
        last += 1;
    }
    let (mut weighted, mut total) = (0.0, 0.0);
    for &(t, r) in &responses[first..=last] {
        weighted += t * r;
        total += r;
    }
    Ok(AlignmentResult {
        estimated_delay_s: weighted / total,
        coarse_steps: coarse.steps,
        fine_steps: steps,
    })
}

/// Runs both stages back to back.
pub fn align(
    scene: &ReflectionScene,
    operator_guess_km: f64,
    velocity_m_per_s: f64,
    noise: &mut CountNoise,
) -> Result<AlignmentResult, AlignmentError> {
    let coarse = coarse_scan(scene, operator_guess_km, velocity_m_per_s, noise)?;
    fine_scan(scene, &coarse, noise)
}

/// Wall-clock cost of the scan for the given dwell per probe step.
///
/// At roughly a millisecond per coarse step the whole bring-up, scan
/// included, fits in a few minutes.
pub fn procedure_time_s(
    result: &AlignmentResult,
    coarse_dwell_s: f64,
    fine_dwell_s: f64,
) -> f64 {
    result.coarse_steps as f64 * coarse_dwell_s + result.fine_steps as f64 * fine_dwell_s
}
