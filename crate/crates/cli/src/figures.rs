//! Plot-ready series for the detector figures.

use std::fmt::Write;

use clap::ValueEnum;

use nlspd::bias_points::{bias_point, BiasPoint};
use nlspd::modelfit::{DEFAULT_MAX_ORDER, DEFAULT_PRUNE_THRESHOLD};
use nlspd::pipeline::{loss_sweep, simulated_run};
use nlspd::povm::{coherent_click_probability, nonlinear_povm, truncation_for, DEFAULT_TAIL_MASS};
use nlspd::simulator::Truth;
use nlspd::tomography::{default_smoothing, reconstruct};

use crate::failure::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureId {
    /// Click probability against mean photon number for the unscaled detector, model and
    /// simulated data.
    Fig1b,
    /// POVM reconstructed from simulated rescaled data next to the model POVM.
    Fig2a,
    /// Model POVM of the rescaled detector.
    Fig2b,
    /// ln P_n against ln eta from fits behind several losses, with fitted slopes.
    Fig3b,
}

impl FigureId {
    pub fn name(self) -> &'static str {
        match self {
            FigureId::Fig1b => "fig1b",
            FigureId::Fig2a => "fig2a",
            FigureId::Fig2b => "fig2b",
            FigureId::Fig3b => "fig3b",
        }
    }

    pub fn default_current(self) -> u32 {
        match self {
            FigureId::Fig3b => 20,
            _ => 25,
        }
    }
}

pub const LOSS_SWEEP_ETAS: [f64; 4] = [1.0, 0.5, 0.25, 0.1];

pub struct FigureRequest {
    pub id: FigureId,
    pub current_ua: u32,
    pub seed: u64,
    pub trials: u64,
}

fn bias(current_ua: u32) -> Result<BiasPoint, Failure> {
    bias_point(current_ua).ok_or_else(|| {
        Failure::Validation(anyhow::anyhow!(
            "no parameter set for {current_ua} uA; choose 25, 20 or 16"
        ))
    })
}

pub fn render(request: &FigureRequest) -> Result<String, Failure> {
    let bias = bias(request.current_ua)?;
    let mut out = String::new();
    match request.id {
        FigureId::Fig1b => {
            let params = bias.raw_params();
            let (probes, record) =
                simulated_run(&Truth::Params(params.clone()), 1.0, request.trials, request.seed)?;
            out.push_str("mean_photons,model,simulated\n");
            for (mu, f) in probes.intensities().iter().zip(record.frequencies()) {
                writeln!(out, "{mu},{},{f}", coherent_click_probability(&params, *mu)?).unwrap();
            }
        }
        FigureId::Fig2a => {
            let params = bias.scaled_params();
            let (probes, record) =
                simulated_run(&Truth::Params(params.clone()), 1.0, request.trials, request.seed)?;
            let n = truncation_for(probes.max_intensity(), DEFAULT_TAIL_MASS)?;
            let result = reconstruct(&probes, &record, n, default_smoothing(probes.len()))?;
            let model = nonlinear_povm(&params, n)?;
            out.push_str("m,reconstructed,model\n");
            for (m, (r, t)) in result.povm.click().iter().zip(model.click()).enumerate() {
                writeln!(out, "{m},{r},{t}").unwrap();
            }
        }
        FigureId::Fig2b => {
            let params = bias.scaled_params();
            let probes = nlspd::sweep_probe_grid(
                &Truth::Params(params.clone()),
                1.0,
                Default::default(),
                request.trials,
            )?;
            let n = truncation_for(probes.max_intensity(), DEFAULT_TAIL_MASS)?;
            out.push_str("m,click\n");
            for (m, c) in nonlinear_povm(&params, n)?.click().iter().enumerate() {
                writeln!(out, "{m},{c}").unwrap();
            }
        }
        FigureId::Fig3b => {
            let sweep = loss_sweep(
                &bias.scaled_params(),
                &LOSS_SWEEP_ETAS,
                request.trials,
                request.seed,
                DEFAULT_MAX_ORDER,
                DEFAULT_PRUNE_THRESHOLD,
            )?;
            for excluded in &sweep.scaling.excluded {
                eprintln!("note: order {} left out: {}", excluded.order, excluded.note);
            }
            let slopes = &sweep.scaling.slopes;
            out.push_str("ln_eta");
            for s in slopes {
                write!(out, ",ln_P{}[slope={:.4}]", s.order, s.slope).unwrap();
            }
            out.push('\n');
            for (row, eta) in LOSS_SWEEP_ETAS.iter().enumerate() {
                write!(out, "{}", eta.ln()).unwrap();
                for s in slopes {
                    write!(out, ",{}", s.points[row].1).unwrap();
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}
