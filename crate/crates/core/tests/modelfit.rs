use nalgebra::DMatrix;
use proptest::prelude::*;

use nlspd::bias_points::{BIAS_20UA, BIAS_25UA};
use nlspd::modelfit::{
    fit_and_prune, fit_objective, fit_params, fit_params_restricted, prune_mechanisms, FitProblem,
    MechanismLogVector, MAX_FIT_TRUNCATION,
};
use nlspd::numerics::binomial_exponent;
use nlspd::pipeline::simulated_run;
use nlspd::povm::{truncation_for, NonlinearSpdParams, DEFAULT_TAIL_MASS};
use nlspd::simulator::{expected_record, sweep_probe_grid, ExperimentConfig, SweepOptions, Truth};
use nlspd::tomography::q_function_crossing;
use nlspd::tomography::{ClickRecord, ProbeSet};

const EXACT_TRIALS: u64 = 1_000_000_000_000_000_000;

fn exact_run(params: &NonlinearSpdParams) -> (ProbeSet, ClickRecord) {
    let truth = Truth::Params(params.clone());
    let probes = sweep_probe_grid(&truth, 1.0, SweepOptions::default(), EXACT_TRIALS).unwrap();
    let record = expected_record(&ExperimentConfig::new(params.clone(), probes.clone(), 0)).unwrap();
    (probes, record)
}

/// Probe-by-probe model click probability with recursive Poisson weights and an explicit
/// product over mechanisms.
fn scalar_click(h: &[f64], mu: f64, truncation: usize) -> f64 {
    let mut log_weight = -mu;
    let mut total = 0.0;
    for m in 0..truncation {
        if m > 0 {
            log_weight += mu.ln() - (m as f64).ln();
        }
        let mut exponent = 0.0;
        let mut binomial = 1.0f64;
        for (n, hn) in h.iter().enumerate() {
            if n > m {
                break;
            }
            if n > 0 {
                binomial = binomial * (m + 1 - n) as f64 / n as f64;
            }
            if *hn != 0.0 {
                exponent += binomial * hn;
            }
        }
        total += log_weight.exp() * -exponent.exp_m1();
    }
    total
}

#[test]
fn exact_data_has_zero_objective() {
    for params in [BIAS_25UA.scaled_params(), BIAS_20UA.scaled_params()] {
        let (probes, record) = exact_run(&params);
        let n = truncation_for(probes.max_intensity(), DEFAULT_TAIL_MASS).unwrap();
        let h = MechanismLogVector::from_params(&params, n).unwrap();
        let objective = fit_objective(&h, &probes, &record).unwrap();
        // the record and the fit truncate the Poisson sums at different photon numbers
        let bound: f64 = record
            .frequencies()
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|c| (2.0 * DEFAULT_TAIL_MASS / c).powi(2))
            .sum();
        assert!(objective <= bound, "{objective:e} above {bound:e}");
    }
}

#[test]
fn dead_detector_has_unit_residuals() {
    let params = BIAS_25UA.scaled_params();
    let (probes, record) = simulated_run(&Truth::Params(params), 1.0, 100_000, 2).unwrap();
    let included = record.clicks().iter().filter(|&&c| c > 0).count();
    let h = MechanismLogVector::new(vec![0.0; 3], 10).unwrap();
    assert_eq!(fit_objective(&h, &probes, &record).unwrap(), included as f64);
    let problem = FitProblem::new(&probes, &record, 3).unwrap();
    for (r, c) in problem.residuals(&[0.0; 3]).iter().zip(record.clicks()) {
        assert_eq!(*r, if *c > 0 { 1.0 } else { 0.0 });
    }
}

#[test]
fn no_clicks_at_all_is_degenerate() {
    let probes = ProbeSet::new(vec![0.0, 1.0, 2.0], 10).unwrap();
    let record = ClickRecord::new(vec![0, 0, 0], 10).unwrap();
    assert!(fit_params(&probes, &record, 2).is_err());
}

#[test]
fn matrix_and_scalar_forms_agree() {
    let params = BIAS_20UA.scaled_params();
    let (probes, record) = simulated_run(&Truth::Params(params.clone()), 1.0, 100_000, 9).unwrap();
    let n = truncation_for(probes.max_intensity(), DEFAULT_TAIL_MASS).unwrap();
    for h in [
        params.log_complements(),
        vec![-1e-4, -0.03, -1e-3, 0.0, -1e-6],
        vec![0.0, -0.2, 0.0, -5e-4],
    ] {
        let matrix_form =
            fit_objective(&MechanismLogVector::new(h.clone(), n).unwrap(), &probes, &record).unwrap();
        let scalar_form: f64 = probes
            .intensities()
            .iter()
            .zip(record.frequencies())
            .filter(|(_, c)| *c > 0.0)
            .map(|(&mu, c)| ((c - scalar_click(&h, mu, n)) / c).powi(2))
            .sum();
        assert!(
            (matrix_form - scalar_form).abs() <= 1e-12 * scalar_form.max(1.0),
            "{matrix_form} vs {scalar_form}"
        );
    }
}

#[test]
fn larger_models_never_fit_worse() {
    let (probes, record) = simulated_run(&Truth::Params(BIAS_20UA.scaled_params()), 1.0, 100_000, 5).unwrap();
    let mut previous = f64::INFINITY;
    for order in 1..=6 {
        let objective = fit_params(&probes, &record, order).unwrap().objective;
        assert!(
            objective <= previous * (1.0 + 1e-9),
            "M = {order}: {objective} after {previous}"
        );
        previous = objective;
    }
}

/// Linearised spread of the fitted efficiencies under binomial counting noise.
fn propagated_standard_errors(
    problem: &FitProblem,
    h: &[f64],
    record: &ClickRecord,
    probes: &ProbeSet,
) -> Vec<f64> {
    let order = h.len();
    let frequencies = record.frequencies();
    let included: Vec<usize> = (0..frequencies.len()).filter(|&i| frequencies[i] > 0.0).collect();
    let mut jacobian = DMatrix::zeros(included.len(), order);
    for n in 0..order {
        let step = 1e-6 * h[n].abs().max(1e-9);
        let mut up = h.to_vec();
        let mut down = h.to_vec();
        up[n] -= step;
        down[n] -= 2.0 * step;
        let (ru, rd) = (problem.residuals(&up), problem.residuals(&down));
        let r0 = problem.residuals(h);
        for (row, &i) in included.iter().enumerate() {
            // one-sided stencil that stays inside h <= 0
            jacobian[(row, n)] = (-3.0 * r0[i] + 4.0 * ru[i] - rd[i]) / (-2.0 * step);
        }
    }
    let model = problem.model_frequencies(h);
    let normal = jacobian.transpose() * &jacobian;
    let inverse = normal.try_inverse().unwrap();
    let sensitivity = &inverse * jacobian.transpose();
    (0..order)
        .map(|n| {
            let variance: f64 = included
                .iter()
                .enumerate()
                .map(|(row, &i)| {
                    let q = model[i].clamp(1e-300, 1.0);
                    let dr = 1.0 / frequencies[i];
                    (sensitivity[(n, row)] * dr).powi(2) * q * (1.0 - q) / probes.trials() as f64
                })
                .sum();
            // dP/dh = -exp(h)
            h[n].exp() * variance.sqrt()
        })
        .collect()
}

#[test]
fn linear_detector_recovery() {
    let truth = NonlinearSpdParams::new(vec![0.0, 0.05, 0.0]).unwrap();
    let (probes, record) = simulated_run(&Truth::Params(truth.clone()), 1.0, 100_000, 13).unwrap();
    let fit = fit_params(&probes, &record, 3).unwrap();
    let problem = FitProblem::new(&probes, &record, 3).unwrap();
    let se = propagated_standard_errors(&problem, &truth.log_complements(), &record, &probes);
    for (n, se) in se.iter().enumerate() {
        assert!(
            (fit.p[n] - truth.p()[n]).abs() <= 3.0 * se,
            "P_{n} = {} (se {se:e})",
            fit.p[n]
        );
    }
}

#[test]
fn independent_datasets_agree_within_counting_noise() {
    let truth = BIAS_25UA.scaled_params();
    let (probes, first) = simulated_run(&Truth::Params(truth.clone()), 1.0, 100_000, 101).unwrap();
    let (_, second) = simulated_run(&Truth::Params(truth.clone()), 1.0, 100_000, 202).unwrap();
    let a = fit_params(&probes, &first, 2).unwrap();
    let b = fit_params(&probes, &second, 2).unwrap();
    let problem = FitProblem::new(&probes, &first, 2).unwrap();
    let se = propagated_standard_errors(&problem, &truth.log_complements(), &first, &probes);
    for (n, se) in se.iter().enumerate() {
        let bound = 3.0 * std::f64::consts::SQRT_2 * se;
        assert!(
            (a.p[n] - b.p[n]).abs() < bound,
            "P_{n}: {} vs {} (bound {bound:e})",
            a.p[n],
            b.p[n]
        );
    }
}

#[test]
fn essential_orders_survive_pruning() {
    let (probes, record) = simulated_run(&Truth::Params(BIAS_25UA.scaled_params()), 1.0, 100_000, 7).unwrap();
    let full = fit_params(&probes, &record, 2).unwrap();
    let pruned = prune_mechanisms(&full, &probes, &record, 0.01).unwrap();
    assert_eq!(pruned.kept_orders, vec![0, 1]);
    assert!(!pruned.degenerate);
    assert!((pruned.objective - full.objective).abs() <= 1e-9 * full.objective);
}

#[test]
fn infinite_threshold_keeps_the_best_single_order() {
    let (probes, record) = simulated_run(&Truth::Params(BIAS_25UA.scaled_params()), 1.0, 100_000, 7).unwrap();
    let full = fit_params(&probes, &record, 3).unwrap();
    let pruned = prune_mechanisms(&full, &probes, &record, f64::INFINITY).unwrap();
    assert!(pruned.degenerate);
    assert_eq!(pruned.kept_orders.len(), 1);
    let best = (0..3)
        .map(|n| {
            fit_params_restricted(&probes, &record, 3, &[n])
                .unwrap()
                .objective
        })
        .fold(f64::INFINITY, f64::min);
    assert!((pruned.objective - best).abs() <= 1e-9 * best);
}

#[test]
fn raw_twenty_five_microamp_prunes_to_dark_counts_and_linear() {
    let (probes, record) = simulated_run(&Truth::Params(BIAS_25UA.raw_params()), 1.0, 100_000, 3).unwrap();
    let full = fit_params(&probes, &record, 4).unwrap();
    let pruned = prune_mechanisms(&full, &probes, &record, 0.01).unwrap();
    assert_eq!(pruned.kept_orders, vec![0, 1]);
}

#[test]
fn raw_twenty_microamp_fit_tracks_the_data() {
    let (probes, record) = simulated_run(&Truth::Params(BIAS_20UA.raw_params()), 1.0, 100_000, 3).unwrap();
    let fit = fit_params(&probes, &record, 3).unwrap();
    let problem = FitProblem::new(&probes, &record, 3).unwrap();
    let model = problem.model_frequencies(&fit.params().unwrap().log_complements());
    let mean_gap = model
        .iter()
        .zip(record.frequencies())
        .map(|(m, c)| (m - c).abs())
        .sum::<f64>()
        / probes.len() as f64;
    assert!(mean_gap < 0.0034, "mean click gap {mean_gap}");
}

#[test]
fn solver_variables_are_scaled_by_binomials_at_half_click() {
    let (probes, record) = simulated_run(&Truth::Params(BIAS_20UA.raw_params()), 1.0, 100_000, 3).unwrap();
    let problem = FitProblem::new(&probes, &record, 4).unwrap();
    let m = q_function_crossing(&probes, &record, 0.5).unwrap().round() as u64;
    assert!(m > 100, "half-click point {m}");
    for (n, s) in problem.scales().iter().enumerate() {
        assert_eq!(*s, binomial_exponent(m, n as u64).max(1.0));
    }
}

#[test]
fn weak_two_photon_term_under_strong_dark_counts() {
    // stalled on a saturated plateau when every order started from the same h
    let truth = NonlinearSpdParams::new(vec![1.4041292714403566e-3, 0.0, 2.181098712120265e-8]).unwrap();
    let (probes, record) = simulated_run(&Truth::Params(truth.clone()), 1.0, 100_000, 8).unwrap();
    let fit = fit_and_prune(&probes, &record, 6, 0.01).unwrap();
    assert!(
        fit.kept_orders.contains(&0) && fit.kept_orders.contains(&2),
        "{:?}",
        fit.kept_orders
    );
    assert!(
        (fit.p[2] / truth.p()[2] - 1.0).abs() < 0.1,
        "P_2 = {:e}",
        fit.p[2]
    );
}

#[test]
fn extreme_photon_numbers_hit_the_truncation_limit() {
    let truth = Truth::Params(NonlinearSpdParams::new(vec![0.0, 1e-7]).unwrap());
    let (probes, record) = simulated_run(&truth, 1.0, 1_000, 1).unwrap();
    match fit_params(&probes, &record, 2) {
        Err(nlspd::Error::TruncationLimit { limit, .. }) => assert_eq!(limit, MAX_FIT_TRUNCATION),
        other => panic!("expected a truncation limit, got {other:?}"),
    }
}

fn random_detector() -> impl Strategy<Value = (Vec<f64>, u64)> {
    (
        -4.0f64..-1.0,
        prop::collection::vec(prop_oneof![Just(None), (-8.0f64..-1.0).prop_map(Some)], 3),
        any::<u64>(),
    )
        .prop_map(|(linear, others, seed)| {
            let mut p: Vec<f64> = others.iter().map(|o| o.map_or(0.0, |l| 10f64.powf(l))).collect();
            p.insert(1, 10f64.powf(linear));
            (p, seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The generating parameters, padded with zeros, are feasible, so no converged fit may
    /// end above their objective.
    #[test]
    fn fits_converge_at_or_below_the_truth((p, seed) in random_detector()) {
        let truth = NonlinearSpdParams::new(p).unwrap();
        let (probes, record) = simulated_run(&Truth::Params(truth.clone()), 1.0, 100_000, seed).unwrap();
        let fit = fit_params(&probes, &record, 6).unwrap();
        let mut h = truth.log_complements();
        h.resize(6, 0.0);
        let at_truth = FitProblem::new(&probes, &record, 6).unwrap().objective(&h);
        prop_assert!(fit.objective <= at_truth * (1.0 + 1e-9) + 1e-15, "{} > {}", fit.objective, at_truth);
    }
}
