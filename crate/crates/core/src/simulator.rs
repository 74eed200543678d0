//! In-silico coherent-state tomography runs.
//!
//! Each probe is sent `R_T` times; the click count is a binomial draw with the truth's
//! coherent click probability. Draws use exact inversion of the binomial CDF driven by a
//! ChaCha stream per probe, so a record depends only on the seed and the probe index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::povm::{coherent_click_probability, DiagonalPovm, NonlinearSpdParams};
use crate::tomography::{ClickRecord, ProbeSet};

/// Number of trials per probe used in the reference experiment.
pub const REFERENCE_TRIALS: u64 = 100_000;

/// Ground truth of a simulated detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Truth {
    Params(NonlinearSpdParams),
    Povm(DiagonalPovm),
}

impl Truth {
    /// Noiseless click probability at coherent mean `mu`.
    pub fn click_probability(&self, mu: f64) -> Result<f64> {
        match self {
            Truth::Params(p) => coherent_click_probability(p, mu),
            Truth::Povm(p) => p.coherent_response(mu),
        }
    }
}

impl From<NonlinearSpdParams> for Truth {
    fn from(p: NonlinearSpdParams) -> Self {
        Truth::Params(p)
    }
}

impl From<DiagonalPovm> for Truth {
    fn from(p: DiagonalPovm) -> Self {
        Truth::Povm(p)
    }
}

/// A fully specified simulated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub truth: Truth,
    pub probes: ProbeSet,
    pub seed: u64,
    /// Transmissivity of a loss placed in front of the detector.
    pub eta: f64,
}

impl ExperimentConfig {
    pub fn new(truth: impl Into<Truth>, probes: ProbeSet, seed: u64) -> Self {
        ExperimentConfig {
            truth: truth.into(),
            probes,
            seed,
            eta: 1.0,
        }
    }

    pub fn with_loss(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn trials(&self) -> u64 {
        self.probes.trials()
    }

    fn check(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Domain(format!(
                "transmissivity {} outside (0, 1]",
                self.eta
            )));
        }
        Ok(())
    }

    /// Noiseless click probabilities of every probe.
    pub fn click_probabilities(&self) -> Result<Vec<f64>> {
        self.check()?;
        self.probes
            .intensities()
            .par_iter()
            .map(|&mu| {
                let q = self.truth.click_probability(self.eta * mu)?;
                if !(-1e-12..=1.0 + 1e-12).contains(&q) {
                    return Err(Error::Consistency(format!("click probability {q} at mean {mu}")));
                }
                Ok(q.clamp(0.0, 1.0))
            })
            .collect()
    }
}

/// Runs the experiment: `clicks[i] ~ Binomial(R_T, q_i)`.
pub fn simulate(config: &ExperimentConfig) -> Result<ClickRecord> {
    let q = config.click_probabilities()?;
    let trials = config.trials();
    let clicks = q
        .par_iter()
        .enumerate()
        .map(|(i, &qi)| {
            let mut rng = probe_stream(config.seed, i);
            sample_binomial(trials, qi, rng.random::<f64>())
        })
        .collect();
    ClickRecord::new(clicks, trials)
}

/// Counts `round(q_i * R_T)`: the record of an experiment without sampling noise.
pub fn expected_record(config: &ExperimentConfig) -> Result<ClickRecord> {
    let trials = config.trials();
    let clicks = config
        .click_probabilities()?
        .into_iter()
        .map(|q| (q * trials as f64).round() as u64)
        .collect();
    ClickRecord::new(clicks, trials)
}

fn probe_stream(seed: u64, probe: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(probe as u64);
    rng
}

/// Smallest `k` with `P(X <= k) >= u` for `X ~ Binomial(n, q)`.
///
/// The CDF is accumulated over a window of +-(12 sd + 12) around the mean, where the
/// pmf is evaluated by recurrence outward from the mode; mass outside it is below 1e-30.
pub fn sample_binomial(n: u64, q: f64, u: f64) -> u64 {
    if q <= 0.0 || n == 0 {
        return 0;
    }
    if q >= 1.0 {
        return n;
    }
    let nf = n as f64;
    let mean = nf * q;
    let sd = (mean * (1.0 - q)).sqrt();
    let lo = (mean - 12.0 * sd - 12.0).floor().max(0.0) as u64;
    let hi = ((mean + 12.0 * sd + 12.0).ceil() as u64).min(n);
    let mode = (((nf + 1.0) * q).floor() as u64).clamp(lo, hi);

    let log_mode = ln_factorial(n) - ln_factorial(mode) - ln_factorial(n - mode)
        + mode as f64 * q.ln()
        + (n - mode) as f64 * (-q).ln_1p();
    let odds = q / (1.0 - q);
    let len = (hi - lo + 1) as usize;
    let mut pmf = vec![0.0; len];
    let at = (mode - lo) as usize;
    pmf[at] = log_mode.exp();
    for k in mode..hi {
        let i = (k - lo) as usize;
        pmf[i + 1] = pmf[i] * (n - k) as f64 / (k + 1) as f64 * odds;
    }
    for k in (lo + 1..=mode).rev() {
        let i = (k - lo) as usize;
        pmf[i - 1] = pmf[i] * k as f64 / (n - k + 1) as f64 / odds;
    }
    let total: f64 = pmf.iter().sum();
    let goal = u * total;
    let mut cdf = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        cdf += p;
        if cdf >= goal {
            return lo + i as u64;
        }
    }
    hi
}

/// Geometric probe grid options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    /// Smallest nonzero intensity.
    pub start: f64,
    /// The sweep stops once the click probability exceeds `1 - saturation_tolerance`.
    pub saturation_tolerance: f64,
    /// Nonzero intensities in the grid.
    pub points: usize,
    /// Largest mean photon number searched for saturation.
    pub cap: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            start: 1e-2,
            saturation_tolerance: 1e-3,
            points: 60,
            cap: 1e8,
        }
    }
}

/// Vacuum plus a geometric grid from `options.start` up to the first intensity at which the
/// noiseless click probability of `click` exceeds `1 - saturation_tolerance`.
pub fn sweep_probe_grid_by<F>(click: F, options: SweepOptions, trials: u64) -> Result<ProbeSet>
where
    F: Fn(f64) -> Result<f64>,
{
    let SweepOptions {
        start,
        saturation_tolerance,
        points,
        cap,
    } = options;
    if !(start > 0.0 && start.is_finite()) || points == 0 {
        return Err(Error::Domain(
            "sweep needs a positive start and at least one point".into(),
        ));
    }
    if !(saturation_tolerance > 0.0 && saturation_tolerance < 1.0) {
        return Err(Error::Domain(format!(
            "saturation tolerance {saturation_tolerance} outside (0, 1)"
        )));
    }
    let threshold = 1.0 - saturation_tolerance;
    let saturated = |mu: f64| -> Result<bool> { Ok(click(mu)? > threshold) };

    let mut upper = start;
    while !saturated(upper)? {
        upper *= 2.0;
        if upper > cap {
            return Err(Error::Range(format!(
                "click probability stays below {threshold} up to mean photon number {cap:e}"
            )));
        }
    }
    let mut lower = if upper > start { upper / 2.0 } else { upper };
    while upper / lower > 1.0 + 1e-12 {
        let mid = (lower * upper).sqrt();
        if saturated(mid)? {
            upper = mid;
        } else {
            lower = mid;
        }
    }
    let end = upper;
    let mut intensities = vec![0.0];
    if points == 1 || end <= start {
        intensities.push(end.max(start));
    } else {
        let ratio = (end / start).ln() / (points - 1) as f64;
        intensities.extend((0..points).map(|j| start * (ratio * j as f64).exp()));
        intensities[points] = end;
    }
    ProbeSet::new(intensities, trials)
}

/// [`sweep_probe_grid_by`] for a simulated detector behind loss `eta`.
pub fn sweep_probe_grid(truth: &Truth, eta: f64, options: SweepOptions, trials: u64) -> Result<ProbeSet> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!("transmissivity {eta} outside (0, 1]")));
    }
    sweep_probe_grid_by(|mu| truth.click_probability(eta * mu), options, trials)
}

/// Probe description in an experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbeSpec {
    Intensities(Vec<f64>),
    Sweep { sweep: SweepOptions },
}

/// JSON form of [`ExperimentConfig`]:
/// `{"truth": {"p": [...]} | {"truncation": N, "click": [...]}, "probes": [...] | {"sweep": {...}},
///   "seed": s, "trials": R_T, "eta": 1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentDocument {
    pub truth: Truth,
    pub probes: ProbeSpec,
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "unit_eta")]
    pub eta: f64,
}

fn default_trials() -> u64 {
    REFERENCE_TRIALS
}

fn unit_eta() -> f64 {
    1.0
}

impl ExperimentDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        if self.trials == 0 {
            return Err(Error::Domain("trials per probe must be >= 1".into()));
        }
        let probes = match &self.probes {
            ProbeSpec::Intensities(v) => ProbeSet::new(v.clone(), self.trials)?,
            ProbeSpec::Sweep { sweep } => sweep_probe_grid(&self.truth, self.eta, *sweep, self.trials)?,
        };
        let config = ExperimentConfig::new(self.truth.clone(), probes, self.seed).with_loss(self.eta);
        config.check()?;
        Ok(config)
    }
}
