use std::path::Path;

use serde_json::Value;

use nlspd::io::{read_probe_csv, write_probe_csv};
use nlspd::modelfit::fit_and_prune;
use nlspd::povm::{nonlinear_povm, truncation_for, DiagonalPovm, NonlinearSpdParams, DEFAULT_TAIL_MASS};
use nlspd::simulator::{simulate, ExperimentDocument};
use nlspd::tomography::{
    default_smoothing, fidelity, reconstruct, scaled_fit_workflow_with, ClickRecord, ProbeSet,
    DEFAULT_SCALING_TARGET,
};

use crate::failure::{Failure, Invalid};
use crate::output::{json_bytes, publish, read_text, RunManifest};
use crate::{FitArgs, ReconstructArgs};

type Outcome = Result<(), Failure>;

fn read_probe_data(path: &Path) -> Result<(ProbeSet, ClickRecord), Failure> {
    let text = read_text(path).invalid()?;
    read_probe_csv(text.as_bytes()).invalid()
}

pub fn simulate_command(config: &Path, out: &Path) -> Outcome {
    let text = read_text(config).invalid()?;
    let document = ExperimentDocument::from_json(&text)?;
    let experiment = document.resolve()?;
    let record = simulate(&experiment)?;
    let mut bytes = Vec::new();
    write_probe_csv(&mut bytes, &experiment.probes, &record)?;
    let manifest = RunManifest::new("simulate")
        .input(config)
        .parameter("trials", document.trials)
        .parameter("eta", document.eta)
        .parameter("probes", experiment.probes.len())
        .seed(document.seed);
    publish(out, &bytes, manifest)?;
    println!(
        "simulated {} probes at {} trials each",
        record.len(),
        record.trials()
    );
    Ok(())
}

pub fn reconstruct_command(args: &ReconstructArgs) -> Outcome {
    let (probes, record) = read_probe_data(&args.data)?;
    let mut manifest = RunManifest::new("reconstruct").input(&args.data);
    if let Some(n) = args.truncation {
        manifest = manifest.parameter("truncation", n);
    }
    let smoothing = args.smoothing.unwrap_or_else(|| default_smoothing(probes.len()));
    manifest = manifest.parameter("smoothing", smoothing);

    let mut document;
    if args.scale_to_95 {
        let fit = scaled_fit_workflow_with(
            &probes,
            &record,
            DEFAULT_SCALING_TARGET,
            args.truncation,
            Some(smoothing),
        )?;
        document = serde_json::to_value(fit.povm()).map_err(anyhow::Error::from)?;
        document["k"] = Value::from(fit.k);
        manifest = manifest.parameter("scale_to_95", true);
        println!(
            "k = {} (target {} reached at raw mean {}), truncation {}",
            fit.k,
            DEFAULT_SCALING_TARGET,
            fit.crossing,
            fit.povm().truncation()
        );
    } else {
        let n = match args.truncation {
            Some(n) => n,
            None => truncation_for(probes.max_intensity(), DEFAULT_TAIL_MASS)?,
        };
        let result = reconstruct(&probes, &record, n, smoothing)?;
        document = serde_json::to_value(&result.povm).map_err(anyhow::Error::from)?;
        println!("truncation {n}, data residual {:e}", result.data_residual);
    }
    publish(&args.out, &json_bytes(&document)?, manifest)?;
    Ok(())
}

pub fn fit_command(args: &FitArgs) -> Outcome {
    let (probes, record) = read_probe_data(&args.data)?;
    let report = fit_and_prune(&probes, &record, args.max_order, args.prune_threshold)?;
    if report.degenerate {
        eprintln!(
            "warning: pruning removed every order; kept the best single order {:?}",
            report.kept_orders
        );
    }
    let manifest = RunManifest::new("fit")
        .input(&args.data)
        .parameter("max_order", args.max_order)
        .parameter("prune_threshold", args.prune_threshold);
    publish(&args.out, &json_bytes(&report)?, manifest)?;
    println!(
        "kept orders {:?}, objective {:e}",
        report.kept_orders, report.objective
    );
    Ok(())
}

/// A POVM document, or a parameter document to be expanded at a truncation chosen later.
enum Operand {
    Povm(DiagonalPovm),
    Params(NonlinearSpdParams),
}

fn read_operand(path: &Path) -> Result<Operand, Failure> {
    let text = read_text(path).invalid()?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
        .invalid()?;
    if value.get("click").is_some() {
        Ok(Operand::Povm(serde_json::from_value(value).invalid()?))
    } else if value.get("p").is_some() {
        Ok(Operand::Params(serde_json::from_value(value).invalid()?))
    } else {
        Err(anyhow::anyhow!(
            "{} holds neither a POVM nor detector parameters",
            path.display()
        ))
        .invalid()
    }
}

pub fn compare_command(a: &Path, b: &Path, truncation: usize) -> Outcome {
    let (a, b) = (read_operand(a)?, read_operand(b)?);
    let expand = |params: &NonlinearSpdParams, n: usize| nonlinear_povm(params, n);
    let (a, b) = match (a, b) {
        (Operand::Povm(a), Operand::Povm(b)) => (a, b),
        (Operand::Povm(a), Operand::Params(b)) => {
            let n = a.truncation();
            (a, expand(&b, n)?)
        }
        (Operand::Params(a), Operand::Povm(b)) => (expand(&a, b.truncation())?, b),
        (Operand::Params(a), Operand::Params(b)) => (expand(&a, truncation)?, expand(&b, truncation)?),
    };
    let n = a.truncation().max(b.truncation());
    if a.truncation() != b.truncation() {
        eprintln!(
            "warning: truncations differ ({} vs {}); the shorter operand is padded with its last entry",
            a.truncation(),
            b.truncation()
        );
    }
    let gaps: Vec<f64> = (0..n)
        .map(|m| (a.click_padded(m) - b.click_padded(m)).abs())
        .collect();
    let f = fidelity(&a, &b)?;
    println!("fidelity {f}");
    println!("max_gap {}", gaps.iter().copied().fold(0.0, f64::max));
    println!("mean_gap {}", gaps.iter().sum::<f64>() / n as f64);
    Ok(())
}
