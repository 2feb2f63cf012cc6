//! Closed-form link predictions: raw rate, error budget and the secret
//! rate left after distillation, at one detector operating point or swept
//! along the whole curve.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::bail;
use clap::Args;
use plugplay::analytic::{
    distillation_estimate, effective_rep_rate, qber_det, qber_total, raw_rate, AnalyticError,
    LinkBudget,
};
use plugplay::config::ExperimentConfig;
use plugplay::sim::{OperatingCurve, OperatingPoint};

use crate::output::Csv;

#[derive(Args)]
pub struct ModelArgs {
    /// Experiment description; defaults to the installed-cable link
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Points to evaluate along the detector operating curve; 0 emits the
    /// header only
    #[arg(long)]
    pub sweep: Option<u32>,
    /// Anchor the raw rate to a measured value instead of the closed form
    #[arg(long = "raw-hz")]
    pub raw_hz: Option<f64>,
    /// Anchor the error rate to a measured value instead of the closed form
    #[arg(long)]
    pub qber: Option<f64>,
    /// CSV destination; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const CSV_HEADER: &str = "eta_d,p_noise,raw_rate_hz,qber,useful_rate_hz";

pub struct ModelRow {
    pub eta_d: f64,
    pub p_noise: f64,
    pub raw_rate_hz: f64,
    pub qber: f64,
    pub useful_rate_hz: f64,
}

impl ModelRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.eta_d, self.p_noise, self.raw_rate_hz, self.qber, self.useful_rate_hz
        )
    }
}

/// Evaluates the closed forms at one operating point. Anchors substitute
/// measured values for the modelled rate or error before distillation is
/// priced, which grounds the estimate in a real run instead of the timing
/// model.
pub fn evaluate(
    budget: &LinkBudget,
    nu_eff_hz: f64,
    raw_anchor: Option<f64>,
    qber_anchor: Option<f64>,
) -> anyhow::Result<ModelRow> {
    let qd = qber_det(budget.p_noise, budget.mu, budget.eta_d, budget.transfer_efficiency())?;
    let qber = match qber_anchor {
        Some(q) => q,
        None => match qber_total(qd, budget.qber_opt, 0.0) {
            Ok(q) => q,
            // The linear budget extrapolates past the point where the
            // sifted stream is pure noise; pin it there.
            Err(AnalyticError::ChannelUnusable { .. }) => 0.5,
            Err(e) => return Err(e.into()),
        },
    };
    let raw = raw_anchor.unwrap_or_else(|| raw_rate(budget, nu_eff_hz));
    let useful = distillation_estimate(raw, qber).map(|d| d.useful_rate_hz).unwrap_or(0.0);
    Ok(ModelRow {
        eta_d: budget.eta_d,
        p_noise: budget.p_noise,
        raw_rate_hz: raw,
        qber,
        useful_rate_hz: useful,
    })
}

/// Budgets along the detector operating curve: efficiency interpolated
/// linearly between the declared anchors, noise geometrically.
pub fn sweep_budgets(cfg: &ExperimentConfig, n: u32) -> anyhow::Result<Vec<LinkBudget>> {
    let base = cfg.link_budget()?;
    let Some(points) = &cfg.detector.curve else {
        bail!("sweep needs a detector operating curve ([detector] curve = eta:p, ...)");
    };
    let curve = OperatingCurve::new(
        points.iter().map(|&(eta_d, p_noise)| OperatingPoint { eta_d, p_noise }).collect(),
    )?;
    let lo = curve.points().first().expect("curve is never empty").eta_d;
    let hi = curve.points().last().expect("curve is never empty").eta_d;
    let mut budgets = Vec::with_capacity(n as usize);
    for i in 0..n {
        let t = if n < 2 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let mut b = base.clone();
        b.eta_d = lo + t * (hi - lo);
        b.p_noise = curve.p_noise_at(b.eta_d)?;
        b.validate()?;
        budgets.push(b);
    }
    Ok(budgets)
}

pub fn run(args: ModelArgs) -> anyhow::Result<ExitCode> {
    let cfg = crate::load_config(args.config.as_deref())?;
    let schedule = cfg.schedule()?;
    let base = cfg.link_budget()?;
    let eff = effective_rep_rate(&schedule, base.nu_hz);

    let rows = match args.sweep {
        None => vec![evaluate(&base, eff.hz, args.raw_hz, args.qber)?],
        Some(0) => Vec::new(),
        Some(n) => {
            if args.raw_hz.is_some() || args.qber.is_some() {
                bail!("measured anchors apply to a single point, not a sweep");
            }
            sweep_budgets(&cfg, n)?
                .iter()
                .map(|b| evaluate(b, eff.hz, None, None))
                .collect::<anyhow::Result<Vec<_>>>()?
        }
    };

    let mut csv = Csv::open(args.out.as_deref(), CSV_HEADER)?;
    for row in &rows {
        csv.line(&row.csv())?;
    }
    csv.finish()?;

    if let Some(peak) = rows.iter().max_by(|a, b| a.useful_rate_hz.total_cmp(&b.useful_rate_hz)) {
        eprintln!(
            "{} point(s); best useful rate {:.1} Hz at eta_d={:.3} (qber {:.2}%)",
            rows.len(),
            peak.useful_rate_hz,
            peak.eta_d,
            100.0 * peak.qber
        );
    } else {
        eprintln!("empty sweep; header only");
    }
    Ok(ExitCode::SUCCESS)
}
