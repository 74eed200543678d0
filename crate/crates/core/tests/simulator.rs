use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};

use nlspd::bias_points::{BIAS_16UA, BIAS_25UA};
use nlspd::povm::{spd_povm, NonlinearSpdParams};
use nlspd::simulator::{
    sample_binomial, simulate, sweep_probe_grid, ExperimentConfig, ExperimentDocument, ProbeSpec,
    SweepOptions, Truth, REFERENCE_TRIALS,
};
use nlspd::tomography::ProbeSet;

/// Click probability summed term by term: log Poisson weights by recurrence, no-click
/// factors by `powf`.
fn direct_click(p: &[f64], mu: f64) -> f64 {
    let mut log_weight = -mu;
    let mut no_click = 0.0;
    let terms = (mu + 40.0 * mu.sqrt() + 60.0) as usize;
    for m in 0..terms {
        let mut factor = 1.0;
        let mut binomial = 1.0f64;
        for (n, pn) in p.iter().enumerate().take(m + 1) {
            if n > 0 {
                binomial = binomial * (m + 1 - n) as f64 / n as f64;
            }
            factor *= (1.0 - pn).powf(binomial);
        }
        no_click += log_weight.exp() * factor;
        log_weight += (mu / (m + 1) as f64).ln();
    }
    1.0 - no_click
}

fn grid(points: usize, max: f64, trials: u64) -> ProbeSet {
    ProbeSet::new(
        std::iter::once(0.0)
            .chain((0..points).map(|j| 1e-2 * (max / 1e-2).powf(j as f64 / (points - 1) as f64)))
            .collect(),
        trials,
    )
    .unwrap()
}

fn binomial_sd(trials: u64, q: f64) -> f64 {
    (trials as f64 * q * (1.0 - q)).sqrt()
}

#[test]
fn equal_seeds_are_bitwise_equal() {
    let config = ExperimentConfig::new(BIAS_25UA.scaled_params(), grid(40, 60.0, REFERENCE_TRIALS), 17);
    assert_eq!(simulate(&config).unwrap(), simulate(&config).unwrap());
}

#[test]
fn different_seeds_stay_within_ten_standard_deviations() {
    let probes = grid(40, 60.0, REFERENCE_TRIALS);
    let a = simulate(&ExperimentConfig::new(
        BIAS_25UA.scaled_params(),
        probes.clone(),
        1,
    ))
    .unwrap();
    let b = simulate(&ExperimentConfig::new(
        BIAS_25UA.scaled_params(),
        probes.clone(),
        2,
    ))
    .unwrap();
    assert_ne!(a, b);
    let p = BIAS_25UA.scaled_params();
    for ((mu, x), y) in probes.intensities().iter().zip(a.clicks()).zip(b.clicks()) {
        let sd = binomial_sd(REFERENCE_TRIALS, direct_click(p.p(), *mu));
        assert!((*x as f64 - *y as f64).abs() <= 10.0 * std::f64::consts::SQRT_2 * sd.max(1.0));
    }
}

#[test]
fn draws_depend_only_on_seed_and_probe_index() {
    let long = grid(30, 50.0, 1000);
    let short = ProbeSet::new(long.intensities()[..12].to_vec(), 1000).unwrap();
    let truth = BIAS_16UA.scaled_params();
    let full = simulate(&ExperimentConfig::new(truth.clone(), long, 5)).unwrap();
    let prefix = simulate(&ExperimentConfig::new(truth, short, 5)).unwrap();
    assert_eq!(&full.clicks()[..12], prefix.clicks());
}

#[test]
fn linear_detector_frequencies_at_a_million_trials() {
    let trials = 1_000_000;
    let probes = grid(30, 80.0, trials);
    let record = simulate(&ExperimentConfig::new(
        spd_povm(0.05, 400).unwrap(),
        probes.clone(),
        8,
    ))
    .unwrap();
    for (mu, clicks) in probes.intensities().iter().zip(record.clicks()) {
        let q = -(-0.05 * mu).exp_m1();
        let sd = binomial_sd(trials, q);
        assert!(
            (*clicks as f64 - trials as f64 * q).abs() <= 5.0 * sd.max(1e-9),
            "mu {mu}: {clicks}"
        );
    }
}

#[test]
fn unscaled_twenty_five_microamp_curve_follows_the_model() {
    let raw = BIAS_25UA.raw_params();
    let probes = sweep_probe_grid(
        &Truth::Params(raw.clone()),
        1.0,
        SweepOptions::default(),
        REFERENCE_TRIALS,
    )
    .unwrap();
    let record = simulate(&ExperimentConfig::new(raw.clone(), probes.clone(), 21)).unwrap();
    for (mu, f) in probes.intensities().iter().zip(record.frequencies()) {
        let q = direct_click(raw.p(), *mu);
        let se = (q * (1.0 - q) / REFERENCE_TRIALS as f64).sqrt();
        assert!((f - q).abs() <= 5.0 * se, "mu {mu}: {f} vs {q}");
    }
}

#[test]
fn mean_over_many_seeds_is_unbiased() {
    let trials = 2000;
    let probes = grid(15, 60.0, trials);
    let truth = BIAS_25UA.scaled_params();
    let seeds = 200;
    let mut sums = vec![0.0; probes.len()];
    for seed in 0..seeds {
        let record = simulate(&ExperimentConfig::new(truth.clone(), probes.clone(), seed)).unwrap();
        for (s, f) in sums.iter_mut().zip(record.frequencies()) {
            *s += f;
        }
    }
    for (mu, s) in probes.intensities().iter().zip(sums) {
        let q = direct_click(truth.p(), *mu);
        let se = (q * (1.0 - q) / (trials * seeds) as f64).sqrt();
        let mean = s / seeds as f64;
        assert!(
            (mean - q).abs() <= 4.0 * se,
            "mu {mu}: mean {mean} vs {q} (se {se:e})"
        );
    }
}

fn exact_binomial_cdf(n: u64, q_num: i64, q_den: i64) -> Vec<f64> {
    let q = BigRational::new(BigInt::from(q_num), BigInt::from(q_den));
    let r = BigRational::one() - q.clone();
    let mut cdf = Vec::new();
    let mut total = BigRational::zero();
    let mut choose = BigInt::one();
    for k in 0..=n {
        if k > 0 {
            choose = choose * BigInt::from(n - k + 1) / BigInt::from(k);
        }
        let mut term = BigRational::from_integer(choose.clone());
        for _ in 0..k {
            term *= q.clone();
        }
        for _ in k..n {
            term *= r.clone();
        }
        total += term;
        cdf.push(total.to_f64().unwrap());
    }
    cdf
}

#[test]
fn inversion_matches_the_exact_cdf() {
    for (n, num, den) in [(30u64, 3i64, 10i64), (12, 1, 7), (50, 49, 50)] {
        let cdf = exact_binomial_cdf(n, num, den);
        let q = num as f64 / den as f64;
        for u in (1..200).map(|i| i as f64 / 200.0) {
            let expected = cdf.iter().position(|&c| c >= u).unwrap() as u64;
            let got = sample_binomial(n, q, u);
            // a u within rounding of a CDF step may fall either way
            if (cdf[expected as usize] - u).abs() > 1e-12 {
                assert_eq!(got, expected, "n {n} q {q} u {u}");
            }
        }
    }
}

#[test]
fn sweep_of_a_linear_detector_ends_at_the_closed_form() {
    let truth = Truth::Params(NonlinearSpdParams::new(vec![0.0, 0.1]).unwrap());
    let probes = sweep_probe_grid(&truth, 1.0, SweepOptions::default(), 10).unwrap();
    let expected = -(1e-3f64.ln()) / 0.1;
    assert_eq!(probes.intensities()[0], 0.0);
    assert_eq!(probes.len(), 61);
    assert!(
        (probes.max_intensity() - expected).abs() <= 1e-6 * expected,
        "{}",
        probes.max_intensity()
    );
    assert!((probes.intensities()[1] - 1e-2).abs() < 1e-15);
}

#[test]
fn dark_counts_alone_never_saturate() {
    let truth = Truth::Params(NonlinearSpdParams::new(vec![0.2]).unwrap());
    assert!(sweep_probe_grid(&truth, 1.0, SweepOptions::default(), 10).is_err());
}

#[test]
fn sixteen_microamp_sweep_endpoint() {
    let p = BIAS_16UA.scaled_params();
    let (mut lo, mut hi) = (1.0, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if direct_click(p.p(), mid) > 0.999 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let probes = sweep_probe_grid(&Truth::Params(p), 1.0, SweepOptions::default(), 10).unwrap();
    let ratio = probes.max_intensity() / hi;
    assert!(
        (0.5..=2.0).contains(&ratio),
        "endpoint {} vs {hi}",
        probes.max_intensity()
    );
}

#[test]
fn experiment_documents() {
    let doc = ExperimentDocument::from_json(
        r#"{"truth": {"p": [7.29e-4, 9.95e-2]}, "probes": {"sweep": {"points": 20}}, "seed": 4}"#,
    )
    .unwrap();
    assert_eq!(doc.trials, REFERENCE_TRIALS);
    assert_eq!(doc.eta, 1.0);
    let config = doc.resolve().unwrap();
    assert_eq!(config.probes.len(), 21);
    let back = ExperimentDocument::from_json(&serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(back, doc);

    let povm = ExperimentDocument::from_json(
        r#"{"truth": {"truncation": 3, "click": [0.0, 0.5, 0.75]}, "probes": [0.0, 1.0], "seed": 1, "trials": 7, "eta": 0.5}"#,
    )
    .unwrap();
    assert!(matches!(povm.truth, Truth::Povm(_)));
    assert!(matches!(povm.probes, ProbeSpec::Intensities(_)));
    assert_eq!(povm.resolve().unwrap().eta, 0.5);

    for bad in [
        r#"{"truth": {"p": [0.1]}, "probes": [1.0], "seed": 1, "colour": 3}"#,
        r#"{"truth": {"p": [0.1]}, "probes": [1.0], "seed": 1, "trials": 0}"#,
        r#"{"truth": {"p": [0.1]}, "probes": [1.0], "seed": 1, "eta": 0.0}"#,
        r#"{"truth": {"p": [1.5]}, "probes": [1.0], "seed": 1}"#,
        r#"{"probes": [1.0], "seed": 1}"#,
    ] {
        assert!(
            ExperimentDocument::from_json(bad)
                .and_then(|d| d.resolve())
                .is_err(),
            "{bad}"
        );
    }
}
