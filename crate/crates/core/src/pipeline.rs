//! End-to-end closed loops: simulate a detector, then reconstruct or fit it.

use rayon::prelude::*;

use crate::error::Result;
use crate::loss::predict_through_loss;
use crate::modelfit::{fit_and_prune, loss_scaling_analysis, FitReport, LossScaling};
use crate::povm::NonlinearSpdParams;
use crate::simulator::{simulate, sweep_probe_grid, ExperimentConfig, SweepOptions, Truth};
use crate::tomography::{scaled_fit_workflow, ClickRecord, ProbeSet, ScaledFit};

/// Simulated run over the default probe sweep of `truth` behind loss `eta`.
pub fn simulated_run(truth: &Truth, eta: f64, trials: u64, seed: u64) -> Result<(ProbeSet, ClickRecord)> {
    let probes = sweep_probe_grid(truth, eta, SweepOptions::default(), trials)?;
    let config = ExperimentConfig::new(truth.clone(), probes.clone(), seed).with_loss(eta);
    Ok((probes, simulate(&config)?))
}

/// Raw-probe click probabilities predicted from a rescaled reconstruction by putting the
/// loss `k` back in front of it.
pub fn predict_raw_probes(fit: &ScaledFit, raw: &ProbeSet) -> Result<Vec<f64>> {
    raw.intensities()
        .iter()
        .map(|&mu| predict_through_loss(fit.povm(), fit.k, mu))
        .collect()
}

/// Absolute prediction errors of a rescaled reconstruction on its own raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct UnscalingCheck {
    pub fit: ScaledFit,
    pub errors: Vec<f64>,
}

impl UnscalingCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_error(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }
}

pub fn unscaling_check(probes: &ProbeSet, record: &ClickRecord, target: f64) -> Result<UnscalingCheck> {
    let fit = scaled_fit_workflow(probes, record, target)?;
    let predicted = predict_raw_probes(&fit, probes)?;
    let errors = predicted
        .iter()
        .zip(record.frequencies())
        .map(|(p, c)| (p - c).abs())
        .collect();
    Ok(UnscalingCheck { fit, errors })
}

/// Fits of one detector observed behind several losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSweep {
    pub fits: Vec<(f64, FitReport)>,
    pub scaling: LossScaling,
}

/// Simulates `truth` behind each transmissivity (seed `seed + index`), fits and prunes, and
/// regresses `ln P_n` on `ln eta`.
pub fn loss_sweep(
    truth: &NonlinearSpdParams,
    etas: &[f64],
    trials: u64,
    seed: u64,
    max_order: usize,
    threshold: f64,
) -> Result<LossSweep> {
    let truth = Truth::Params(truth.clone());
    let fits = etas
        .par_iter()
        .enumerate()
        .map(|(i, &eta)| {
            let (probes, record) = simulated_run(&truth, eta, trials, seed.wrapping_add(i as u64))?;
            Ok((eta, fit_and_prune(&probes, &record, max_order, threshold)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let params = fits
        .iter()
        .map(|(eta, report)| Ok((*eta, report.params()?)))
        .collect::<Result<Vec<_>>>()?;
    let scaling = loss_scaling_analysis(&params)?;
    Ok(LossSweep { fits, scaling })
}
