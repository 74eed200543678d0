//! Model-free reconstruction of a diagonal POVM from coherent-probe click statistics.
//!
//! The click frequency of probe `i` is `C_i = sum_m F[i][m] * click[m]` with Poisson
//! weights `F`. The reconstruction solves the box-constrained least-squares problem
//! `min ||C - F click||^2 + w * sum_m (click[m+1] - click[m])^2`, `0 <= click <= 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::povm::{truncation_for, DiagonalPovm, PoissonWindow, DEFAULT_TAIL_MASS};
use crate::solver::{minimize, Bounds, SmoothObjective, Solution, SolverOptions};

/// Stationarity target of the reconstruction.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-10;
pub const RECONSTRUCTION_MAX_ITERATIONS: usize = 50_000;
/// Largest truncation handled by the dense reconstruction.
pub const MAX_DENSE_TRUNCATION: usize = 2_500;
/// Mean photon number at which the rescaled detector reaches the target click probability.
pub const SCALING_REFERENCE_MEAN: f64 = 30.0;
pub const DEFAULT_SCALING_TARGET: f64 = 0.95;

/// Default smoothing weight `1e-3 * D` for `D` probes.
pub fn default_smoothing(probe_count: usize) -> f64 {
    1e-3 * probe_count as f64
}

/// Coherent probe intensities `|alpha_i|^2` and the number of trials per probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    intensities: Vec<f64>,
    trials: u64,
}

impl ProbeSet {
    /// Intensities must start at the vacuum probe and be ascending; `D >= 2`.
    pub fn new(intensities: Vec<f64>, trials: u64) -> Result<Self> {
        if intensities.len() < 2 {
            return Err(Error::Domain(format!(
                "at least two probes are required, got {}",
                intensities.len()
            )));
        }
        if intensities[0] != 0.0 {
            return Err(Error::Domain(
                "the first probe must be the vacuum (intensity 0)".into(),
            ));
        }
        if intensities.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("probe intensities must be finite and >= 0".into()));
        }
        if intensities.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("probe intensities must be ascending".into()));
        }
        if trials == 0 {
            return Err(Error::Domain("trials per probe must be >= 1".into()));
        }
        Ok(ProbeSet { intensities, trials })
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn max_intensity(&self) -> f64 {
        self.intensities[self.intensities.len() - 1]
    }

    /// Same probes with every intensity multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Domain(format!("scale factor {factor} must be positive")));
        }
        ProbeSet::new(self.intensities.iter().map(|v| v * factor).collect(), self.trials)
    }

    pub fn with_trials(&self, trials: u64) -> Result<Self> {
        ProbeSet::new(self.intensities.clone(), trials)
    }
}

/// Click counts `R_1` out of `R_T` trials per probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    clicks: Vec<u64>,
    trials: u64,
}

impl ClickRecord {
    pub fn new(clicks: Vec<u64>, trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::Domain("trials per probe must be >= 1".into()));
        }
        if let Some((i, c)) = clicks.iter().enumerate().find(|(_, c)| **c > trials) {
            return Err(Error::Domain(format!(
                "probe {i}: {c} clicks exceed {trials} trials"
            )));
        }
        Ok(ClickRecord { clicks, trials })
    }

    pub fn clicks(&self) -> &[u64] {
        &self.clicks
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    /// `C_i = R_1 / R_T`.
    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.trials as f64;
        self.clicks.iter().map(|&c| c as f64 / total).collect()
    }

    pub(crate) fn check_against(&self, probes: &ProbeSet) -> Result<()> {
        if self.clicks.len() != probes.len() {
            return Err(Error::Dimension(format!(
                "{} click counts for {} probes",
                self.clicks.len(),
                probes.len()
            )));
        }
        if self.trials != probes.trials() {
            return Err(Error::Dimension(format!(
                "record has {} trials per probe, probe set {}",
                self.trials,
                probes.trials()
            )));
        }
        Ok(())
    }
}

/// The `D x N` Poisson matrix `F[i][m] = exp(log_poisson_weight(mu_i, m))`.
///
/// Rows are stored over the range where the weights do not underflow; all other entries
/// are exactly zero.
#[derive(Debug, Clone)]
pub struct ProbeMatrix {
    rows: Vec<PoissonWindow>,
    truncation: usize,
}

impl ProbeMatrix {
    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn row(&self, i: usize) -> &PoissonWindow {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, m: usize) -> f64 {
        let row = &self.rows[i];
        if m < row.start() || m >= row.end() {
            0.0
        } else {
            row.weights()[m - row.start()]
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(PoissonWindow::mass).collect()
    }

    /// `F * v` for a vector of length `N`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(m, w)| w * v[m]).sum())
            .collect()
    }

    /// `F^T * u` for a vector of length `D`.
    pub fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.truncation];
        for (row, ui) in self.rows.iter().zip(u) {
            for (m, w) in row.iter() {
                out[m] += w * ui;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.truncation, |i, m| self.entry(i, m))
    }
}

/// Probe matrix at the default tail mass.
pub fn build_probe_matrix(probes: &ProbeSet, truncation: usize) -> Result<ProbeMatrix> {
    build_probe_matrix_with_tail(probes, truncation, DEFAULT_TAIL_MASS)
}

/// Probe matrix, requiring the Poisson mass beyond `truncation - 1` to stay below `tail_mass`
/// for every probe.
pub fn build_probe_matrix_with_tail(
    probes: &ProbeSet,
    truncation: usize,
    tail_mass: f64,
) -> Result<ProbeMatrix> {
    let required = truncation_for(probes.max_intensity(), tail_mass)?;
    if truncation < required {
        return Err(Error::Truncation { truncation, required });
    }
    let rows = probes
        .intensities()
        .iter()
        .map(|&mu| PoissonWindow::new(mu, truncation))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeMatrix { rows, truncation })
}

/// A reconstructed POVM with the terms of its objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub povm: DiagonalPovm,
    /// `||C - F click||^2 + w * ||D click||^2` at the solution.
    pub objective: f64,
    /// `||C - F click||^2` at the solution.
    pub data_residual: f64,
    pub projected_gradient_norm: f64,
    pub iterations: usize,
}

struct SmoothedLeastSquares<'a> {
    matrix: &'a ProbeMatrix,
    target: &'a [f64],
    smoothing: f64,
    hessian: DMatrix<f64>,
}

impl<'a> SmoothedLeastSquares<'a> {
    fn new(matrix: &'a ProbeMatrix, target: &'a [f64], smoothing: f64) -> Self {
        let n = matrix.truncation();
        let dense = matrix.to_dense();
        let mut hessian = dense.transpose() * &dense;
        for m in 0..n.saturating_sub(1) {
            hessian[(m, m)] += smoothing;
            hessian[(m + 1, m + 1)] += smoothing;
            hessian[(m, m + 1)] -= smoothing;
            hessian[(m + 1, m)] -= smoothing;
        }
        hessian *= 2.0;
        SmoothedLeastSquares {
            matrix,
            target,
            smoothing,
            hessian,
        }
    }

    fn data_residual(&self, x: &[f64]) -> f64 {
        self.matrix
            .apply(x)
            .iter()
            .zip(self.target)
            .map(|(p, c)| (c - p) * (c - p))
            .sum()
    }

    fn roughness(&self, x: &[f64]) -> f64 {
        x.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum()
    }
}

impl SmoothObjective for SmoothedLeastSquares<'_> {
    fn dim(&self) -> usize {
        self.matrix.truncation()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.data_residual(x) + self.smoothing * self.roughness(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let residual: Vec<f64> = self
            .matrix
            .apply(x)
            .iter()
            .zip(self.target)
            .map(|(p, c)| p - c)
            .collect();
        let mut g = self.matrix.apply_transpose(&residual);
        for v in g.iter_mut() {
            *v *= 2.0;
        }
        for m in 0..x.len().saturating_sub(1) {
            let diff = 2.0 * self.smoothing * (x[m + 1] - x[m]);
            g[m] -= diff;
            g[m + 1] += diff;
        }
        g
    }

    fn hessian(&self, _: &[f64]) -> DMatrix<f64> {
        self.hessian.clone()
    }
}

/// Reconstructs the Click diagonal from probe frequencies.
pub fn reconstruct(
    probes: &ProbeSet,
    record: &ClickRecord,
    truncation: usize,
    smoothing_weight: f64,
) -> Result<Reconstruction> {
    let matrix = build_probe_matrix(probes, truncation)?;
    reconstruct_with_matrix(&matrix, probes, record, smoothing_weight)
}

/// [`reconstruct`] against a prebuilt probe matrix.
pub fn reconstruct_with_matrix(
    matrix: &ProbeMatrix,
    probes: &ProbeSet,
    record: &ClickRecord,
    smoothing_weight: f64,
) -> Result<Reconstruction> {
    record.check_against(probes)?;
    if matrix.rows() != probes.len() {
        return Err(Error::Dimension(
            "probe matrix rows do not match the probes".into(),
        ));
    }
    if !(smoothing_weight.is_finite() && smoothing_weight >= 0.0) {
        return Err(Error::Domain(format!(
            "smoothing weight {smoothing_weight} must be >= 0"
        )));
    }
    let truncation = matrix.truncation();
    if truncation > MAX_DENSE_TRUNCATION {
        return Err(Error::TruncationLimit {
            truncation,
            limit: MAX_DENSE_TRUNCATION,
        });
    }
    let target = record.frequencies();
    let mut start = interpolated_start(probes.intensities(), &target, truncation);
    if smoothing_weight == 0.0 {
        // the unsmoothed minimiser is not unique once N > D; start it from the smoothed one
        let warm = SmoothedLeastSquares::new(matrix, &target, default_smoothing(probes.len()));
        start = solve_box(&warm, start)?.x;
    }
    let problem = SmoothedLeastSquares::new(matrix, &target, smoothing_weight);
    let solution = solve_box(&problem, start)?;
    let data_residual = problem.data_residual(&solution.x);
    Ok(Reconstruction {
        povm: DiagonalPovm::new(solution.x)?,
        objective: solution.value,
        data_residual,
        projected_gradient_norm: solution.projected_gradient_norm,
        iterations: solution.iterations,
    })
}

fn solve_box(problem: &SmoothedLeastSquares<'_>, start: Vec<f64>) -> Result<Solution> {
    let solution = minimize(
        problem,
        &Bounds::uniform(start.len(), 0.0, 1.0),
        &start,
        SolverOptions {
            tolerance: RECONSTRUCTION_TOLERANCE,
            max_iterations: RECONSTRUCTION_MAX_ITERATIONS,
        },
    );
    if !solution.converged {
        return Err(Error::Convergence {
            iterations: solution.iterations,
            residual: solution.projected_gradient_norm,
        });
    }
    Ok(solution)
}

/// Reconstructed Click diagonal; see [`reconstruct`].
pub fn reconstruct_povm(
    probes: &ProbeSet,
    record: &ClickRecord,
    truncation: usize,
    smoothing_weight: f64,
) -> Result<DiagonalPovm> {
    reconstruct(probes, record, truncation, smoothing_weight).map(|r| r.povm)
}

/// Starting point `click[m] = Q(m)`: the monotone envelope of the measured Q-function read
/// off at mean photon number `m`. A Poisson probe of mean `m` is concentrated near `m`
/// photons, so this is close to the answer wherever the detector response is smooth.
fn interpolated_start(intensities: &[f64], frequencies: &[f64], truncation: usize) -> Vec<f64> {
    let envelope = monotone_envelope(frequencies);
    (0..truncation)
        .map(|m| interpolate_linear(intensities, &envelope, m as f64).clamp(0.0, 1.0))
        .collect()
}

fn monotone_envelope(values: &[f64]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    values
        .iter()
        .map(|&v| {
            best = best.max(v);
            best
        })
        .collect()
}

fn interpolate_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Outcome of the rescaled reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledFit {
    /// Factor applied to every probe intensity.
    pub k: f64,
    /// Raw-probe mean at which the measured Q-function reaches the target.
    pub crossing: f64,
    pub probes: ProbeSet,
    pub reconstruction: Reconstruction,
}

impl ScaledFit {
    pub fn povm(&self) -> &DiagonalPovm {
        &self.reconstruction.povm
    }
}

/// Raw-probe mean photon number at which the measured Q-function first reaches `target`.
///
/// The frequencies are replaced by their running maximum, and the bracketing pair is
/// interpolated linearly in `(ln mu, ln(-ln(1 - Q)))`, which is exact for the linear
/// detector and for any power-law onset.
pub fn q_function_crossing(probes: &ProbeSet, record: &ClickRecord, target: f64) -> Result<f64> {
    record.check_against(probes)?;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Domain(format!(
            "target click probability {target} outside (0, 1)"
        )));
    }
    let q = monotone_envelope(&record.frequencies());
    let mu = probes.intensities();
    let i = q.iter().position(|&v| v >= target).ok_or_else(|| {
        Error::Range(format!(
            "click probability never reaches {target} (maximum {:.6})",
            q[q.len() - 1]
        ))
    })?;
    if i == 0 || mu[i] == 0.0 {
        return Err(Error::Range(format!(
            "click probability is already {} at the vacuum probe",
            q[0]
        )));
    }
    let (x0, x1, y0, y1) = (mu[i - 1], mu[i], q[i - 1], q[i]);
    if q[i] == target || x0 == x1 {
        return Ok(x1);
    }
    let transformed = |v: f64| (-(-v).ln_1p()).ln();
    if x0 > 0.0 && y0 > 0.0 && y1 < 1.0 {
        let (lx0, lx1) = (x0.ln(), x1.ln());
        let (ly0, ly1, lt) = (transformed(y0), transformed(y1), transformed(target));
        return Ok((lx0 + (lx1 - lx0) * (lt - ly0) / (ly1 - ly0)).exp());
    }
    Ok(x0 + (x1 - x0) * (target - y0) / (y1 - y0))
}

/// Rescales the probes so the detector clicks with probability `target` at mean 30, then
/// reconstructs the POVM of the rescaled (efficiency-boosted) detector.
///
/// The raw detector is the rescaled one behind a loss of transmissivity `k`.
pub fn scaled_fit_workflow(probes: &ProbeSet, record: &ClickRecord, target: f64) -> Result<ScaledFit> {
    scaled_fit_workflow_with(probes, record, target, None, None)
}

/// [`scaled_fit_workflow`] with optional truncation and smoothing overrides.
pub fn scaled_fit_workflow_with(
    probes: &ProbeSet,
    record: &ClickRecord,
    target: f64,
    truncation: Option<usize>,
    smoothing_weight: Option<f64>,
) -> Result<ScaledFit> {
    let crossing = q_function_crossing(probes, record, target)?;
    let k = SCALING_REFERENCE_MEAN / crossing;
    let scaled = probes.rescaled(k)?;
    let truncation = match truncation {
        Some(n) => n,
        None => truncation_for(scaled.max_intensity(), DEFAULT_TAIL_MASS)?,
    };
    let smoothing = smoothing_weight.unwrap_or_else(|| default_smoothing(probes.len()));
    let reconstruction = reconstruct(&scaled, record, truncation, smoothing)?;
    Ok(ScaledFit {
        k,
        crossing,
        probes: scaled,
        reconstruction,
    })
}

/// Fidelity `(sum_m sqrt(a[m] b[m]))^2` of the click vectors normalised to unit sum.
///
/// The shorter operand is padded with its last entry.
pub fn fidelity(a: &DiagonalPovm, b: &DiagonalPovm) -> Result<f64> {
    let n = a.truncation().max(b.truncation());
    let xs: Vec<f64> = (0..n).map(|m| a.click_padded(m)).collect();
    let ys: Vec<f64> = (0..n).map(|m| b.click_padded(m)).collect();
    let (sa, sb): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::UndefinedFidelity);
    }
    let overlap: f64 = xs.iter().zip(&ys).map(|(x, y)| (x / sa * (y / sb)).sqrt()).sum();
    Ok((overlap * overlap).min(1.0))
}
