//! Fitting the nonlinear detector model to click statistics.
//!
//! With `h[n] = ln(1 - P_n)` and `G[m][n] = C(m, n)`, the model click frequencies are
//! `F (1 - exp(G h))`. The fit minimises the squared norm of the residuals normalised by
//! the measured frequencies, subject to `h <= 0`.
//!
//! The solver works in the scaled variables `y[n] = C(m*, n) h[n]`, where `m*` is the mean
//! photon number at which the detector clicks half the time. `y[n]` is the share of order
//! `n` in the exponent at that point, so every order lives on a comparable scale even
//! though `C(m, 5)` spans twelve decades over a typical sweep.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::binomial_exponent;
use crate::povm::{truncation_for, NonlinearSpdParams, DEFAULT_TAIL_MASS};
use crate::solver::{minimize, Bounds, SmoothObjective, Solution, SolverOptions};
use crate::tomography::{build_probe_matrix, q_function_crossing, ClickRecord, ProbeMatrix, ProbeSet};

pub const DEFAULT_MAX_ORDER: usize = 6;
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.01;
pub const FIT_TOLERANCE: f64 = 1e-9;
pub const FIT_MAX_ITERATIONS: usize = 100_000;
/// Largest photon-number truncation the fit accepts. The binomial design is held densely,
/// `order` values per photon number.
pub const MAX_FIT_TRUNCATION: usize = 1_000_000;
/// Starting value of every scaled exponent `y[n]` not seeded from the data.
pub const INITIAL_SCALED_EXPONENT: f64 = -1e-3;
/// Click probability at which the linear efficiency is read off for the warm start.
pub const LINEAR_ESTIMATE_CLICK: f64 = 0.1;
/// Click probability whose mean photon number `m*` fixes the variable scaling.
pub const SCALE_REFERENCE_CLICK: f64 = 0.5;
/// Objective changes below this are treated as rounding when pruning.
const PRUNE_ABSOLUTE_FLOOR: f64 = 1e-12;

/// `h[n] = ln(1 - P_n)` with the binomial design `G[m][n] = C(m, n)` at a truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismLogVector {
    h: Vec<f64>,
    design: Vec<Vec<f64>>,
}

impl MechanismLogVector {
    pub fn new(h: Vec<f64>, truncation: usize) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::Domain("at least one mechanism is required".into()));
        }
        if let Some((n, v)) = h.iter().enumerate().find(|(_, v)| v.is_nan() || **v > 0.0) {
            return Err(Error::Domain(format!("h[{n}] = {v} violates h <= 0")));
        }
        let design = binomial_design(truncation, h.len());
        Ok(MechanismLogVector { h, design })
    }

    pub fn from_params(params: &NonlinearSpdParams, truncation: usize) -> Result<Self> {
        MechanismLogVector::new(params.log_complements(), truncation)
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// `G`, one row per photon number.
    pub fn design(&self) -> &[Vec<f64>] {
        &self.design
    }

    pub fn params(&self) -> Result<NonlinearSpdParams> {
        NonlinearSpdParams::from_log_complements(&self.h)
    }
}

/// `G[m][n] = C(m, n)` for `m < truncation`, `n < order`.
pub fn binomial_design(truncation: usize, order: usize) -> Vec<Vec<f64>> {
    (0..truncation as u64)
        .map(|m| (0..order as u64).map(|n| binomial_exponent(m, n)).collect())
        .collect()
}

/// Result of a model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub p: Vec<f64>,
    pub kept_orders: Vec<usize>,
    /// Minimum of the squared normalised residual norm.
    pub objective: f64,
    /// Normalised residual `(C_i - model_i) / C_i` per probe, `0` for probes without clicks
    /// (excluded from the objective). Their squares sum to `objective`.
    pub per_probe_residuals: Vec<f64>,
    /// Set when pruning removed every order and the best single mechanism was kept instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl FitReport {
    pub fn params(&self) -> Result<NonlinearSpdParams> {
        NonlinearSpdParams::new(self.p.clone())
    }

    /// `objective / D`.
    pub fn mean_square_residual(&self) -> f64 {
        self.objective / self.per_probe_residuals.len() as f64
    }
}

/// The normalised-residual objective on fixed data.
#[derive(Debug, Clone)]
pub struct FitProblem {
    matrix: ProbeMatrix,
    design: Vec<Vec<f64>>,
    frequencies: Vec<f64>,
    included: Vec<usize>,
    order: usize,
    scales: Vec<f64>,
}

impl FitProblem {
    pub fn new(probes: &ProbeSet, record: &ClickRecord, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Domain("the model needs at least one order".into()));
        }
        if record.len() != probes.len() {
            return Err(Error::Dimension(format!(
                "{} click counts for {} probes",
                record.len(),
                probes.len()
            )));
        }
        let frequencies = record.frequencies();
        let included: Vec<usize> = (0..frequencies.len()).filter(|&i| frequencies[i] > 0.0).collect();
        if included.is_empty() {
            return Err(Error::DegenerateData("no probe recorded a click".into()));
        }
        let truncation = truncation_for(probes.max_intensity(), DEFAULT_TAIL_MASS)?;
        if truncation > MAX_FIT_TRUNCATION {
            return Err(Error::TruncationLimit {
                truncation,
                limit: MAX_FIT_TRUNCATION,
            });
        }
        let matrix = build_probe_matrix(probes, truncation)?;
        let reference = q_function_crossing(probes, record, SCALE_REFERENCE_CLICK)
            .unwrap_or_else(|_| probes.max_intensity());
        let m = (reference.round() as u64).clamp(1, truncation.max(2) as u64 - 1);
        Ok(FitProblem {
            design: binomial_design(truncation, order),
            matrix,
            frequencies,
            included,
            order,
            scales: (0..order as u64)
                .map(|n| binomial_exponent(m, n).max(1.0))
                .collect(),
        })
    }

    /// `C(m*, n)` per order, floored at 1: the factor taking `h[n]` to the solver variable.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn truncation(&self) -> usize {
        self.matrix.truncation()
    }

    pub fn included_rows(&self) -> &[usize] {
        &self.included
    }

    /// `G h` per photon number.
    fn exponents(&self, h: &[f64]) -> Vec<f64> {
        self.design
            .iter()
            .map(|row| {
                row.iter()
                    .zip(h)
                    .map(|(g, v)| if *g == 0.0 { 0.0 } else { g * v })
                    .sum::<f64>()
            })
            .collect()
    }

    fn click(exponents: &[f64]) -> Vec<f64> {
        exponents.iter().map(|x| 0.0 - x.exp_m1()).collect()
    }

    /// Normalised residuals for every probe, zero on excluded rows.
    pub fn residuals(&self, h: &[f64]) -> Vec<f64> {
        let model = self.model_frequencies(h);
        let mut r = vec![0.0; self.frequencies.len()];
        for &i in &self.included {
            let c = self.frequencies[i];
            r[i] = (c - model[i]) / c;
        }
        r
    }

    /// Model click frequencies `F (1 - exp(G h))`.
    pub fn model_frequencies(&self, h: &[f64]) -> Vec<f64> {
        let click = Self::click(&self.exponents(h));
        (0..self.frequencies.len())
            .map(|i| self.matrix.row(i).iter().map(|(m, w)| w * click[m]).sum())
            .collect()
    }

    pub fn objective(&self, h: &[f64]) -> f64 {
        self.residuals(h).iter().map(|r| r * r).sum()
    }

    /// Residuals, Jacobian rows and (optionally) the second-derivative term.
    fn derivatives(&self, h: &[f64], second: bool) -> (Vec<f64>, Vec<Vec<f64>>, DMatrix<f64>) {
        let x = self.exponents(h);
        let click = Self::click(&x);
        let k = self.order;
        let mut residuals = Vec::with_capacity(self.included.len());
        let mut jacobian = Vec::with_capacity(self.included.len());
        let mut curvature = DMatrix::zeros(k, k);
        for &i in &self.included {
            let c = self.frequencies[i];
            let mut model = 0.0;
            let mut row = vec![0.0; k];
            let dim = if second { k } else { 0 };
            let mut local = DMatrix::<f64>::zeros(dim, dim);
            for (m, w) in self.matrix.row(i).iter() {
                model += w * click[m];
                let we = w * x[m].exp();
                if we == 0.0 {
                    continue;
                }
                let g = &self.design[m];
                for a in 0..k {
                    row[a] += we * g[a];
                    if second {
                        for b in 0..=a {
                            local[(a, b)] += we * g[a] * g[b];
                        }
                    }
                }
            }
            let r = (c - model) / c;
            for v in row.iter_mut() {
                *v /= c;
            }
            if second {
                for a in 0..k {
                    for b in 0..=a {
                        curvature[(a, b)] += r * local[(a, b)] / c;
                    }
                }
            }
            residuals.push(r);
            jacobian.push(row);
        }
        for a in 0..k {
            for b in 0..a {
                curvature[(b, a)] = curvature[(a, b)];
            }
        }
        (residuals, jacobian, curvature)
    }

    /// Gradient of [`FitProblem::objective`] with respect to `h`.
    pub fn gradient(&self, h: &[f64]) -> Vec<f64> {
        let (r, j, _) = self.derivatives(h, false);
        let mut g = vec![0.0; self.order];
        for (ri, row) in r.iter().zip(&j) {
            for (gn, jn) in g.iter_mut().zip(row) {
                *gn += 2.0 * ri * jn;
            }
        }
        g
    }
}

impl SmoothObjective for FitProblem {
    fn dim(&self) -> usize {
        self.order
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.objective(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        FitProblem::gradient(self, x)
    }

    /// Exact Hessian when it is positive definite, Gauss-Newton otherwise.
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (_, j, curvature) = self.derivatives(x, true);
        let k = self.order;
        let mut gauss_newton = DMatrix::zeros(k, k);
        for row in &j {
            for a in 0..k {
                for b in 0..k {
                    gauss_newton[(a, b)] += 2.0 * row[a] * row[b];
                }
            }
        }
        let full = &gauss_newton + curvature * 2.0;
        if full.clone().cholesky().is_some() {
            full
        } else {
            gauss_newton
        }
    }
}

/// [`FitProblem`] in the scaled variables `y = C(m*, n) h`.
struct Scaled<'a>(&'a FitProblem);

impl Scaled<'_> {
    fn unscaled(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.0.scales).map(|(v, s)| v / s).collect()
    }
}

impl SmoothObjective for Scaled<'_> {
    fn dim(&self) -> usize {
        self.0.order
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.0.objective(&self.unscaled(y))
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let g = FitProblem::gradient(self.0, &self.unscaled(y));
        g.iter().zip(&self.0.scales).map(|(v, s)| v / s).collect()
    }

    fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        let s = &self.0.scales;
        let h = SmoothObjective::hessian(self.0, &self.unscaled(y));
        DMatrix::from_fn(h.nrows(), h.ncols(), |a, b| h[(a, b)] / (s[a] * s[b]))
    }
}

/// Squared norm of the normalised residual vector at `h`; probes without clicks are skipped.
pub fn fit_objective(h: &MechanismLogVector, probes: &ProbeSet, record: &ClickRecord) -> Result<f64> {
    let problem = FitProblem::new(probes, record, h.h().len())?;
    Ok(problem.objective(h.h()))
}

/// Initial `h`. The vacuum probe seeds `h[0]` (half a click when it saw none), the linear
/// efficiency read off where the click probability is 0.1 seeds `h[1]`, and every other
/// order starts at the scaled exponent [`INITIAL_SCALED_EXPONENT`].
fn initial_guess(problem: &FitProblem, probes: &ProbeSet, record: &ClickRecord) -> Vec<f64> {
    let order = problem.order;
    let mut h: Vec<f64> = problem
        .scales
        .iter()
        .map(|s| INITIAL_SCALED_EXPONENT / s)
        .collect();
    if probes.intensities()[0] == 0.0 {
        let vacuum = record.clicks()[0].max(1) as f64 / record.trials() as f64;
        let vacuum = if record.clicks()[0] == 0 {
            0.5 * vacuum
        } else {
            vacuum
        };
        if vacuum < 1.0 {
            h[0] = (-vacuum).ln_1p();
        }
    }
    if order > 1 {
        if let Ok(mu) = q_function_crossing(probes, record, LINEAR_ESTIMATE_CLICK) {
            // 1 - exp(-P_1 mu) = 0.1
            let p1 = -(-LINEAR_ESTIMATE_CLICK).ln_1p() / mu;
            if p1 < 1.0 {
                h[1] = (-p1).ln_1p();
            }
        }
    }
    h
}

/// Minimises from `start` (in `h`) with the `fixed` orders held at zero. The returned
/// solution is in `h`; its projected gradient norm is measured in the scaled variables.
fn solve(problem: &FitProblem, start: &[f64], fixed: &[bool]) -> Solution {
    let order = problem.order();
    let lower = (0..order)
        .map(|n| if fixed[n] { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let bounds = Bounds {
        lower,
        upper: vec![0.0; order],
    };
    let start: Vec<f64> = start
        .iter()
        .zip(fixed)
        .zip(&problem.scales)
        .map(|((v, f), s)| if *f { 0.0 } else { v * s })
        .collect();
    let scaled = Scaled(problem);
    let mut solution = minimize(
        &scaled,
        &bounds,
        &start,
        SolverOptions {
            tolerance: FIT_TOLERANCE,
            max_iterations: FIT_MAX_ITERATIONS,
        },
    );
    solution.x = scaled.unscaled(&solution.x);
    solution
}

fn report_from(problem: &FitProblem, solution: &Solution, kept: Vec<usize>) -> Result<FitReport> {
    let params = NonlinearSpdParams::from_log_complements(&solution.x)?;
    Ok(FitReport {
        p: params.p().to_vec(),
        kept_orders: kept,
        objective: solution.value,
        per_probe_residuals: problem.residuals(&solution.x),
        degenerate: false,
    })
}

fn checked(problem: &FitProblem, solution: Solution, kept: Vec<usize>) -> Result<FitReport> {
    let report = report_from(problem, &solution, kept)?;
    if !solution.converged {
        return Err(Error::FitConvergence {
            iterations: solution.iterations,
            residual: solution.projected_gradient_norm,
            best: Box::new(report),
        });
    }
    Ok(report)
}

/// Fits `P_0 .. P_{max_order - 1}` with every order free.
pub fn fit_params(probes: &ProbeSet, record: &ClickRecord, max_order: usize) -> Result<FitReport> {
    let problem = FitProblem::new(probes, record, max_order)?;
    let start = initial_guess(&problem, probes, record);
    let solution = solve(&problem, &start, &vec![false; max_order]);
    checked(&problem, solution, (0..max_order).collect())
}

/// Fits with the listed orders free and all others held at `P_n = 0`.
pub fn fit_params_restricted(
    probes: &ProbeSet,
    record: &ClickRecord,
    max_order: usize,
    free_orders: &[usize],
) -> Result<FitReport> {
    let problem = FitProblem::new(probes, record, max_order)?;
    let start = initial_guess(&problem, probes, record);
    let fixed: Vec<bool> = (0..max_order).map(|n| !free_orders.contains(&n)).collect();
    checked(&problem, solve(&problem, &start, &fixed), free_orders.to_vec())
}

/// Drops every order whose removal raises the minimum by at most a relative `threshold`.
///
/// Each order is tested against the full-model minimum by refitting with that order held
/// at zero; after all decisions one refit over the kept orders produces the report. If
/// nothing survives, the best single-mechanism fit is returned flagged `degenerate`.
pub fn prune_mechanisms(
    report: &FitReport,
    probes: &ProbeSet,
    record: &ClickRecord,
    threshold: f64,
) -> Result<FitReport> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Domain(format!("prune threshold {threshold} must be >= 0")));
    }
    let order = report.p.len();
    let problem = FitProblem::new(probes, record, order)?;
    let full_h = report.params()?.log_complements();
    let baseline = problem.objective(&full_h);
    let candidates: Vec<usize> = report.kept_orders.clone();

    let dropped: Vec<bool> = candidates
        .par_iter()
        .map(|&n| {
            let fixed: Vec<bool> = (0..order).map(|k| k == n || !candidates.contains(&k)).collect();
            let without = solve(&problem, &full_h, &fixed).value;
            without - baseline <= threshold * baseline + PRUNE_ABSOLUTE_FLOOR
        })
        .collect();
    let kept: Vec<usize> = candidates
        .iter()
        .zip(&dropped)
        .filter(|(_, d)| !**d)
        .map(|(n, _)| *n)
        .collect();

    if kept.is_empty() {
        let single = candidates
            .par_iter()
            .map(|&n| {
                let fixed: Vec<bool> = (0..order).map(|k| k != n).collect();
                (n, solve(&problem, &full_h, &fixed))
            })
            .collect::<Vec<_>>();
        let (n, best) = single
            .into_iter()
            .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
            .ok_or_else(|| Error::DegenerateData("no orders to prune".into()))?;
        let mut out = checked(&problem, best, vec![n])?;
        out.degenerate = true;
        return Ok(out);
    }

    let fixed: Vec<bool> = (0..order).map(|k| !kept.contains(&k)).collect();
    checked(&problem, solve(&problem, &full_h, &fixed), kept)
}

/// Full fit followed by pruning.
pub fn fit_and_prune(
    probes: &ProbeSet,
    record: &ClickRecord,
    max_order: usize,
    threshold: f64,
) -> Result<FitReport> {
    let full = fit_params(probes, record, max_order)?;
    prune_mechanisms(&full, probes, record, threshold)
}

/// Least-squares slope of `ln P_n` against `ln eta` for one order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSlope {
    pub order: usize,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square deviation of the points from the fitted line.
    pub residual: f64,
    pub points: Vec<(f64, f64)>,
}

/// An order left out of the slope analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedOrder {
    pub order: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossScaling {
    pub slopes: Vec<OrderSlope>,
    pub excluded: Vec<ExcludedOrder>,
}

impl LossScaling {
    pub fn slope(&self, order: usize) -> Option<f64> {
        self.slopes.iter().find(|s| s.order == order).map(|s| s.slope)
    }
}

/// Per-order log-log slopes of the efficiencies across transmissivities.
pub fn loss_scaling_analysis(params_by_eta: &[(f64, NonlinearSpdParams)]) -> Result<LossScaling> {
    let mut etas: Vec<f64> = params_by_eta.iter().map(|(eta, _)| *eta).collect();
    if let Some(eta) = etas.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(Error::Domain(format!("transmissivity {eta} outside (0, 1]")));
    }
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    if etas.len() < 3 {
        return Err(Error::Domain(format!(
            "at least 3 distinct transmissivities are needed, got {}",
            etas.len()
        )));
    }
    let max_order = params_by_eta.iter().map(|(_, p)| p.order()).max().unwrap_or(0);
    let mut slopes = Vec::new();
    let mut excluded = Vec::new();
    for n in 0..max_order {
        let vanishing = params_by_eta
            .iter()
            .find(|(_, p)| p.p().get(n).copied().unwrap_or(0.0) <= 0.0);
        if let Some((eta, _)) = vanishing {
            excluded.push(ExcludedOrder {
                order: n,
                note: format!("P_{n} = 0 at eta = {eta}"),
            });
            continue;
        }
        let points: Vec<(f64, f64)> = params_by_eta
            .iter()
            .map(|(eta, p)| (eta.ln(), p.p()[n].ln()))
            .collect();
        let (slope, intercept, residual) = least_squares_line(&points);
        slopes.push(OrderSlope {
            order: n,
            slope,
            intercept,
            residual,
            points,
        });
    }
    Ok(LossScaling { slopes, excluded })
}

fn least_squares_line(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}
