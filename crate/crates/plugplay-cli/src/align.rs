//! Bring-up demo: recover the round-trip gate delay from the reflection
//! scene declared in the experiment description.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use plugplay::alignment::{align, procedure_time_s, AlignmentError};

use crate::output::Csv;

#[derive(Args)]
pub struct AlignArgs {
    /// Experiment description; its [alignment] section defines the scene
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// CSV destination; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const CSV_HEADER: &str =
    "true_delay_us,estimated_delay_us,error_ps,coarse_steps,fine_steps,procedure_s";

pub fn run(args: AlignArgs) -> anyhow::Result<ExitCode> {
    let cfg = crate::load_config(args.config.as_deref())?;
    let (scene, guess_km) = cfg.alignment_scene()?;
    let mut noise = cfg.alignment_noise(args.seed);

    let result = match align(&scene, guess_km, cfg.train.velocity_m_per_s, &mut noise) {
        Ok(r) => r,
        Err(e @ (AlignmentError::NotFound | AlignmentError::NoPeak)) => {
            eprintln!("{e}");
            return Ok(ExitCode::FAILURE);
        }
        Err(e) => return Err(e.into()),
    };
    let err_s = result.estimated_delay_s - scene.true_delay_s;
    let time =
        procedure_time_s(&result, cfg.alignment.coarse_dwell_ms * 1e-3, cfg.alignment.fine_dwell_s);

    let mut csv = Csv::open(args.out.as_deref(), CSV_HEADER)?;
    csv.line(&format!(
        "{},{},{},{},{},{}",
        scene.true_delay_s * 1e6,
        result.estimated_delay_s * 1e6,
        err_s * 1e12,
        result.coarse_steps,
        result.fine_steps,
        time
    ))?;
    csv.finish()?;

    eprintln!("{result}; residual {:.1} ps, {:.0} s of scanning", err_s.abs() * 1e12, time);
    Ok(ExitCode::SUCCESS)
}
