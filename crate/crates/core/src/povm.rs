//! Diagonal POVMs of binary photon detectors.
//!
//! A binary detector that is insensitive to phase is described by the diagonal of
//! its Click operator in the photon-number basis. The constructors here cover the
//! standard linear detector, the `n`-photon detector and the logical OR of several
//! `n`-photon detectors, plus their response to coherent states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{binomial_exponent, log_poisson_unchecked, scaled_log, LogProb};

/// Default Poisson tail mass tolerated beyond the truncation.
pub const DEFAULT_TAIL_MASS: f64 = 1e-12;

/// Diagonal of a Click operator truncated at photon number `N - 1`.
///
/// The No-Click diagonal is `1 - click` elementwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PovmDocument", into = "PovmDocument")]
pub struct DiagonalPovm {
    click: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PovmDocument {
    truncation: usize,
    click: Vec<f64>,
}

impl TryFrom<PovmDocument> for DiagonalPovm {
    type Error = Error;
    fn try_from(doc: PovmDocument) -> Result<Self> {
        if doc.truncation != doc.click.len() {
            return Err(Error::Parse(format!(
                "truncation {} does not match {} click entries",
                doc.truncation,
                doc.click.len()
            )));
        }
        DiagonalPovm::new(doc.click)
    }
}

impl From<DiagonalPovm> for PovmDocument {
    fn from(povm: DiagonalPovm) -> Self {
        PovmDocument {
            truncation: povm.click.len(),
            click: povm.click,
        }
    }
}

impl DiagonalPovm {
    pub fn new(click: Vec<f64>) -> Result<Self> {
        if click.is_empty() {
            return Err(Error::Domain(
                "a POVM needs at least one photon-number entry".into(),
            ));
        }
        if let Some((m, v)) = click.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("click[{m}] = {v} outside [0, 1]")));
        }
        Ok(DiagonalPovm { click })
    }

    pub fn zeros(truncation: usize) -> Result<Self> {
        DiagonalPovm::new(vec![0.0; truncation])
    }

    pub fn click(&self) -> &[f64] {
        &self.click
    }

    pub fn no_click(&self) -> Vec<f64> {
        self.click.iter().map(|c| 1.0 - c).collect()
    }

    pub fn truncation(&self) -> usize {
        self.click.len()
    }

    pub fn into_click(self) -> Vec<f64> {
        self.click
    }

    /// Click value at photon number `m`, extended past the truncation by the last entry.
    pub fn click_padded(&self, m: usize) -> f64 {
        self.click
            .get(m)
            .copied()
            .unwrap_or(self.click[self.click.len() - 1])
    }

    /// Copy resized to `truncation`, padding with the last entry or dropping the tail.
    pub fn resized(&self, truncation: usize) -> Result<Self> {
        DiagonalPovm::new((0..truncation).map(|m| self.click_padded(m)).collect())
    }

    pub fn is_monotone(&self) -> bool {
        self.click.windows(2).all(|w| w[1] >= w[0])
    }

    /// Click probability for a coherent state of mean photon number `mu`.
    ///
    /// Photon numbers past the truncation take the last click value.
    pub fn coherent_response(&self, mu: f64) -> Result<f64> {
        let window = PoissonWindow::new(mu, truncation_for(mu, DEFAULT_TAIL_MASS)?)?;
        let n = self.click.len();
        let mut inside = 0.0;
        let mut acc = 0.0;
        for (m, w) in window.iter() {
            if m < n {
                inside += w;
                acc += w * self.click[m];
            }
        }
        let last = self.click[n - 1];
        Ok((acc + (1.0 - inside).max(0.0) * last).clamp(0.0, 1.0))
    }
}

/// Efficiencies `{P_n}` of `M` concurrent `n`-photon detectors, `n = 0..M-1`.
///
/// `P_0` is the dark-count probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDocument", into = "ParamsDocument")]
pub struct NonlinearSpdParams {
    p: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsDocument {
    p: Vec<f64>,
}

impl TryFrom<ParamsDocument> for NonlinearSpdParams {
    type Error = Error;
    fn try_from(doc: ParamsDocument) -> Result<Self> {
        NonlinearSpdParams::new(doc.p)
    }
}

impl From<NonlinearSpdParams> for ParamsDocument {
    fn from(params: NonlinearSpdParams) -> Self {
        ParamsDocument { p: params.p }
    }
}

impl NonlinearSpdParams {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Domain(
                "at least one mechanism (order 0) is required".into(),
            ));
        }
        if let Some((n, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("P_{n} = {v} outside [0, 1]")));
        }
        Ok(NonlinearSpdParams { p })
    }

    /// Recovers `P_n = 1 - exp(h_n)` from log no-click factors `h_n <= 0`.
    pub fn from_log_complements(h: &[f64]) -> Result<Self> {
        if let Some((n, v)) = h.iter().enumerate().find(|(_, v)| v.is_nan() || **v > 0.0) {
            return Err(Error::Domain(format!("h[{n}] = {v} must be <= 0")));
        }
        NonlinearSpdParams::new(h.iter().map(|v| (0.0 - v.exp_m1()).clamp(0.0, 1.0)).collect())
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn order(&self) -> usize {
        self.p.len()
    }

    /// `ln(1 - P_n)` per order.
    pub fn log_complements(&self) -> Vec<f64> {
        self.p.iter().map(|p| (-p).ln_1p()).collect()
    }

    /// Order-`M` copy padded with zero efficiencies or truncated.
    pub fn with_order(&self, order: usize) -> Result<Self> {
        let mut p = self.p.clone();
        p.resize(order, 0.0);
        NonlinearSpdParams::new(p)
    }

    fn log_no_click(log_complements: &[f64], m: u64) -> f64 {
        log_complements
            .iter()
            .enumerate()
            .map(|(n, &h)| scaled_log(binomial_exponent(m, n as u64), h))
            .sum()
    }
}

/// Standard linear detector: `click[m] = 1 - (1 - p1)^m`.
pub fn spd_povm(p1: f64, truncation: usize) -> Result<DiagonalPovm> {
    npd_povm(p1, 1, truncation)
}

/// `n`-photon detector: `click[m] = 1 - (1 - pn)^C(m, n)`.
pub fn npd_povm(pn: f64, order: u64, truncation: usize) -> Result<DiagonalPovm> {
    let h = LogProb::complement_of(pn)?.value();
    let click = (0..truncation as u64)
        .map(|m| match binomial_exponent(m, order) {
            1.0 => pn,
            exponent => 0.0 - scaled_log(exponent, h).exp_m1(),
        })
        .collect();
    DiagonalPovm::new(click)
}

/// Logical OR of `M` `n`-photon detectors.
pub fn nonlinear_povm(params: &NonlinearSpdParams, truncation: usize) -> Result<DiagonalPovm> {
    let h = params.log_complements();
    let click = (0..truncation as u64)
        .scan(0.0f64, |floor, m| {
            let value = match m {
                0 => params.p()[0],
                _ => 0.0 - NonlinearSpdParams::log_no_click(&h, m).exp_m1(),
            };
            // exp_m1 of the round-tripped log may land an ulp below the previous entry
            *floor = floor.max(value);
            Some(*floor)
        })
        .collect();
    DiagonalPovm::new(click)
}

/// Click probability of the nonlinear detector for a coherent state of mean `mean_photons`,
/// the Poisson average of [`nonlinear_povm`] over the default truncation.
pub fn coherent_click_probability(params: &NonlinearSpdParams, mean_photons: f64) -> Result<f64> {
    let window = PoissonWindow::new(mean_photons, truncation_for(mean_photons, DEFAULT_TAIL_MASS)?)?;
    let h = params.log_complements();
    let click = |m: usize| match m {
        0 => params.p()[0],
        _ => 0.0 - NonlinearSpdParams::log_no_click(&h, m as u64).exp_m1(),
    };
    let q: f64 = window.iter().map(|(m, w)| w * click(m)).sum();
    Ok(q.clamp(0.0, 1.0))
}

/// Smallest `N` such that the Poisson(`max_mean_photons`) mass at photon numbers `>= N`
/// is below `tail_mass`.
pub fn truncation_for(max_mean_photons: f64, tail_mass: f64) -> Result<usize> {
    if !max_mean_photons.is_finite() || max_mean_photons < 0.0 {
        return Err(Error::Domain(format!(
            "mean photon number {max_mean_photons} must be finite and >= 0"
        )));
    }
    if !(tail_mass > 0.0 && tail_mass < 1.0) {
        return Err(Error::Domain(format!("tail mass {tail_mass} outside (0, 1)")));
    }
    let mu = max_mean_photons;
    let upper = (mu + 50.0 * mu.sqrt() + 60.0).ceil() as u64;
    let mut n = upper + 1;
    let mut tail = 0.0;
    while n > 0 {
        let next = tail + log_poisson_unchecked(mu, n - 1).exp();
        if next >= tail_mass {
            break;
        }
        tail = next;
        n -= 1;
    }
    Ok(n as usize)
}

/// Poisson weights `exp(log_poisson_weight(mu, m))` for `m < truncation`, restricted to the
/// contiguous range where they do not underflow to zero.
#[derive(Debug, Clone)]
pub struct PoissonWindow {
    start: usize,
    weights: Vec<f64>,
}

impl PoissonWindow {
    pub fn new(mu: f64, truncation: usize) -> Result<Self> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(Error::Domain(format!(
                "mean photon number {mu} must be finite and >= 0"
            )));
        }
        if truncation == 0 {
            return Ok(PoissonWindow {
                start: 0,
                weights: Vec::new(),
            });
        }
        // weights increase up to the mode, so scanning from a safe lower guess is exact
        let reach = (2.0 * mu * 760.0).sqrt() + 2.0;
        let mut start = (mu - reach).floor().max(0.0) as usize;
        start = start.min(truncation - 1);
        while start + 1 < truncation
            && (start as f64) < mu
            && log_poisson_unchecked(mu, start as u64).exp() == 0.0
        {
            start += 1;
        }
        let mut weights = Vec::new();
        let mut m = start;
        while m < truncation {
            let w = log_poisson_unchecked(mu, m as u64).exp();
            if w == 0.0 && (m as f64) > mu {
                break;
            }
            weights.push(w);
            m += 1;
        }
        Ok(PoissonWindow { start, weights })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.start + self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &w)| (self.start + i, w))
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}
