//! Bound-constrained minimisation of smooth convex objectives.
//!
//! Projected Newton iteration: variables sitting at a bound with the gradient pushing
//! outward are held by a scaled gradient step, the rest take a Newton step on the reduced
//! Hessian, and the combined direction is searched along the projection arc with an
//! Armijo rule. If the Newton step fails, a damped Newton step and then a projected gradient
//! step are tried. Once the objective is too flat for its values to show a decrease, steps
//! are judged by the slope at the trial point instead.

use nalgebra::{DMatrix, DVector};

/// A twice-differentiable objective.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Positive semidefinite curvature model; the exact Hessian where it is PSD.
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// Per-coordinate bounds; infinite entries leave a side open.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Bounds {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
        }
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project(&mut out);
        out
    }

    /// `|| x - P(x - g) ||_2`, zero exactly at a stationary point.
    pub fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((xi, gi), (l, u))| {
                let step = xi - (xi - gi).clamp(*l, *u);
                step * step
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target projected gradient norm.
    pub tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    /// Projected gradient within tolerance, or a Newton step whose predicted decrease is
    /// below the rounding of the objective.
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const ACTIVE_EPSILON: f64 = 1e-8;
const MIN_STEP: f64 = 1e-20;
/// A Newton step predicting a decrease this far below `|f|` is lost in rounding.
const ROUNDING_DECREMENT: f64 = 64.0 * f64::EPSILON;
const SLOPE_OVERSHOOT: f64 = 0.8;

pub fn minimize<O: SmoothObjective + ?Sized>(
    objective: &O,
    bounds: &Bounds,
    start: &[f64],
    options: SolverOptions,
) -> Solution {
    let n = objective.dim();
    let mut x = bounds.projected(start);
    let mut f = objective.value(&x);
    let mut g = objective.gradient(&x);
    let mut pg = bounds.projected_gradient_norm(&x, &g);
    let mut iterations = 0;
    let mut at_rounding_floor = false;

    while pg > options.tolerance && iterations < options.max_iterations {
        iterations += 1;
        let eps = pg.min(ACTIVE_EPSILON);
        let active: Vec<bool> = (0..n)
            .map(|i| {
                (x[i] - bounds.lower[i] <= eps && g[i] > 0.0) || (bounds.upper[i] - x[i] <= eps && g[i] < 0.0)
            })
            .collect();
        let hessian = objective.hessian(&x);
        let direction = newton_direction(&hessian, &g, &active, 0.0);

        let damped = || newton_direction(&hessian, &g, &active, pg);
        let steepest = || {
            let scale = 1.0 / hessian.diagonal().amax().max(f64::MIN_POSITIVE);
            g.iter().map(|v| -v * scale).collect::<Vec<f64>>()
        };

        let step = search(objective, bounds, &x, f, &g, &direction)
            .or_else(|| search(objective, bounds, &x, f, &g, &damped()))
            .or_else(|| search(objective, bounds, &x, f, &g, &steepest()));
        let (next, next_f) = match step {
            Some(found) => found,
            None => {
                let decrement: f64 = -g.iter().zip(&direction).map(|(gi, di)| gi * di).sum::<f64>();
                if decrement.abs() <= ROUNDING_DECREMENT * f.abs().max(f64::MIN_POSITIVE) {
                    at_rounding_floor = true;
                    break;
                }
                let flat = slope_search(objective, bounds, &x, f, &g, &direction)
                    .or_else(|| slope_search(objective, bounds, &x, f, &g, &damped()))
                    .or_else(|| slope_search(objective, bounds, &x, f, &g, &steepest()));
                match flat {
                    Some(found) => found,
                    None => break,
                }
            }
        };
        x = next;
        f = next_f;
        g = objective.gradient(&x);
        pg = bounds.projected_gradient_norm(&x, &g);
    }

    Solution {
        converged: pg <= options.tolerance || at_rounding_floor,
        x,
        value: f,
        projected_gradient_norm: pg,
        iterations,
    }
}

/// Newton direction on the free variables with the reduced Hessian shifted by at least
/// `min(damping, 1e-3 * max diagonal)`. A zero shift gives the plain Newton step; a shift
/// tied to the projected gradient keeps the step bounded when the Hessian is singular.
fn newton_direction(hessian: &DMatrix<f64>, g: &[f64], active: &[bool], damping: f64) -> Vec<f64> {
    let free: Vec<usize> = (0..g.len()).filter(|&i| !active[i]).collect();
    let mut direction = vec![0.0; g.len()];
    for i in (0..g.len()).filter(|&i| active[i]) {
        let curvature = hessian[(i, i)];
        direction[i] = if curvature > 0.0 { -g[i] / curvature } else { -g[i] };
    }
    if free.is_empty() {
        return direction;
    }
    let reduced = DMatrix::from_fn(free.len(), free.len(), |a, b| hessian[(free[a], free[b])]);
    let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
    let scale = reduced.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut damping = damping.min(scale * 1e-3);
    for attempt in 0..24 {
        let mut trial = reduced.clone();
        for k in 0..free.len() {
            trial[(k, k)] += damping;
        }
        if let Some(chol) = trial.cholesky() {
            let step = chol.solve(&rhs);
            if step.iter().all(|v| v.is_finite()) {
                for (k, &i) in free.iter().enumerate() {
                    direction[i] = step[k];
                }
                return direction;
            }
        }
        damping = damping.max(scale * 1e-15 * 10f64.powi(attempt));
    }
    for &i in &free {
        direction[i] = -g[i] / scale;
    }
    direction
}

fn arc_point(bounds: &Bounds, x: &[f64], direction: &[f64], t: f64) -> Vec<f64> {
    let mut out: Vec<f64> = x.iter().zip(direction).map(|(xi, di)| xi + t * di).collect();
    bounds.project(&mut out);
    out
}

fn search<O: SmoothObjective + ?Sized>(
    objective: &O,
    bounds: &Bounds,
    x: &[f64],
    f: f64,
    g: &[f64],
    direction: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let mut t = 1.0;
    while t >= MIN_STEP {
        let trial = arc_point(bounds, x, direction, t);
        let predicted: f64 = trial.iter().zip(x).zip(g).map(|((a, b), gi)| gi * (a - b)).sum();
        if predicted < 0.0 {
            let target = f + ARMIJO * predicted;
            if target >= f {
                // shorter steps only shrink a decrease that f can no longer resolve
                return None;
            }
            let value = objective.value(&trial);
            if value.is_finite() && value <= target {
                return Some((trial, value));
            }
        } else if trial == x {
            return None;
        }
        t *= 0.5;
    }
    None
}

/// Backtracking on the projection arc for when `f` can no longer resolve an Armijo
/// decrease: a step is taken if the slope at the trial point along the step has not
/// overshot (at most `-SLOPE_OVERSHOOT` times the initial slope) and `f` did not rise beyond
/// its rounding.
fn slope_search<O: SmoothObjective + ?Sized>(
    objective: &O,
    bounds: &Bounds,
    x: &[f64],
    f: f64,
    g: &[f64],
    direction: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let slack = ROUNDING_DECREMENT * f.abs();
    let mut t = 1.0;
    while t >= MIN_STEP {
        let trial = arc_point(bounds, x, direction, t);
        let step: Vec<f64> = trial.iter().zip(x).map(|(a, b)| a - b).collect();
        let initial: f64 = step.iter().zip(g).map(|(s, gi)| s * gi).sum();
        if initial < 0.0 {
            let end: f64 = step
                .iter()
                .zip(objective.gradient(&trial))
                .map(|(s, gi)| s * gi)
                .sum();
            if end <= -SLOPE_OVERSHOOT * initial {
                let value = objective.value(&trial);
                if value.is_finite() && value <= f + slack {
                    return Some((trial, value));
                }
            }
        } else if trial == x {
            return None;
        }
        t *= 0.5;
    }
    None
}
