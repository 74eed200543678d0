//! Linear optical loss in front of a detector.
//!
//! A beamsplitter of transmissivity `eta` thins an `n`-photon input binomially, so the
//! lossy detector's Click diagonal is `L(eta) * click` with the lower-triangular matrix
//! `L[n][m] = C(n, m) eta^m (1 - eta)^(n - m)`.

use crate::error::{Error, Result};
use crate::numerics::{log_add_terms, log_binomial, scaled_log};
use crate::povm::DiagonalPovm;

/// Default bound on the pre-clamp violation accepted by [`unscale_povm`].
pub const DEFAULT_INVERSION_BOUND: f64 = 1e-6;

/// Transmissivity `eta` in `(0, 1]` together with the truncation of the induced matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossChannel {
    eta: f64,
    truncation: usize,
}

impl LossChannel {
    pub fn new(eta: f64, truncation: usize) -> Result<Self> {
        check_eta(eta)?;
        Ok(LossChannel { eta, truncation })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// `L[n][m]`, zero above the diagonal.
    pub fn entry(&self, n: usize, m: usize) -> f64 {
        if m > n {
            return 0.0;
        }
        let log_eta = self.eta.ln();
        let log_loss = (-self.eta).ln_1p();
        let value = log_add_terms(
            log_binomial(n as u64, m as u64) + scaled_log(m as f64, log_eta),
            scaled_log((n - m) as f64, log_loss),
        );
        value.exp()
    }

    /// Row `n` of the matrix for columns `0..=n`.
    pub fn row(&self, n: usize) -> Vec<f64> {
        (0..=n).map(|m| self.entry(n, m)).collect()
    }

    /// Dense lower-triangular matrix, row-major.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.truncation)
            .map(|n| {
                let mut row = self.row(n);
                row.resize(self.truncation, 0.0);
                row
            })
            .collect()
    }

    pub fn apply(&self, click: &[f64]) -> Vec<f64> {
        (0..self.truncation)
            .map(|n| {
                self.row(n)
                    .iter()
                    .enumerate()
                    .map(|(m, l)| l * click.get(m).copied().unwrap_or(0.0))
                    .sum()
            })
            .collect()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!("transmissivity {eta} outside (0, 1]")));
    }
    Ok(())
}

/// The detector preceded by a beamsplitter of transmissivity `eta`.
pub fn scale_povm(povm: &DiagonalPovm, eta: f64) -> Result<DiagonalPovm> {
    check_eta(eta)?;
    if eta == 1.0 {
        return Ok(povm.clone());
    }
    let channel = LossChannel::new(eta, povm.truncation())?;
    let scaled = channel.apply(povm.click());
    DiagonalPovm::new(scaled.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Result of an explicit loss inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Unscaled {
    pub povm: DiagonalPovm,
    /// Largest distance of any solved entry from `[0, 1]` before clamping.
    pub violation: f64,
}

/// Removes loss `eta` by solving `L(eta) * unscaled = scaled` with forward substitution.
///
/// The input is padded with its last entry up to `target_truncation`. Solved entries are
/// clamped to `[0, 1]`; the inversion amplifies rounding roughly as `(2 / eta - 1)^n`, so a
/// pre-clamp violation above `bound` is reported as [`Error::IllConditioned`].
pub fn unscale_povm_with_bound(
    povm: &DiagonalPovm,
    eta: f64,
    target_truncation: usize,
    bound: f64,
) -> Result<Unscaled> {
    check_eta(eta)?;
    if target_truncation < povm.truncation() {
        return Err(Error::Dimension(format!(
            "target truncation {target_truncation} is below the input truncation {}",
            povm.truncation()
        )));
    }
    let channel = LossChannel::new(eta, target_truncation)?;
    let mut solved = Vec::with_capacity(target_truncation);
    for n in 0..target_truncation {
        let row = channel.row(n);
        let partial: f64 = row[..n].iter().zip(&solved).map(|(l, x)| l * x).sum();
        solved.push((povm.click_padded(n) - partial) / row[n]);
    }
    let violation = solved
        .iter()
        .map(|&v: &f64| {
            if v.is_nan() {
                f64::INFINITY
            } else {
                (-v).max(v - 1.0).max(0.0)
            }
        })
        .fold(0.0, f64::max);
    if violation > bound {
        return Err(Error::IllConditioned {
            diagnostic: violation,
            bound,
        });
    }
    let povm = DiagonalPovm::new(solved.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    Ok(Unscaled { povm, violation })
}

/// [`unscale_povm_with_bound`] at [`DEFAULT_INVERSION_BOUND`].
pub fn unscale_povm(povm: &DiagonalPovm, eta: f64, target_truncation: usize) -> Result<Unscaled> {
    unscale_povm_with_bound(povm, eta, target_truncation, DEFAULT_INVERSION_BOUND)
}

/// Click probability at coherent mean `mu` of `povm` preceded by loss `eta`.
///
/// Loss on the probe side and loss on the detector side give the same statistics, so this
/// equals `scale_povm(povm, eta).coherent_response(mu)` without materialising the channel.
/// It is how a POVM reconstructed against rescaled probes predicts the raw probes.
pub fn predict_through_loss(scaled: &DiagonalPovm, eta: f64, mu: f64) -> Result<f64> {
    check_eta(eta)?;
    scaled.coherent_response(eta * mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::{nonlinear_povm, spd_povm, NonlinearSpdParams};
    use approx::assert_relative_eq;

    #[test]
    fn identity_channel() {
        let p = spd_povm(0.2, 30).unwrap();
        assert_eq!(scale_povm(&p, 1.0).unwrap(), p);
        assert!(scale_povm(&p, 0.0).is_err());
        assert!(scale_povm(&p, 1.2).is_err());
    }

    #[test]
    fn spd_loss_law() {
        let (p1, eta) = (0.3, 0.37);
        let scaled = scale_povm(&spd_povm(p1, 80).unwrap(), eta).unwrap();
        let expected = spd_povm(eta * p1, 80).unwrap();
        for (a, b) in scaled.click().iter().zip(expected.click()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn binomial_average_by_enumeration() {
        let params = NonlinearSpdParams::new(vec![0.1, 0.2, 0.3]).unwrap();
        let p = nonlinear_povm(&params, 6).unwrap();
        let scaled = scale_povm(&p, 0.5).unwrap();
        // two photons, each kept with probability 1/2: 0, 1, 2 survive w.p. 1/4, 1/2, 1/4
        let c = p.click();
        let expected = 0.25 * c[0] + 0.5 * c[1] + 0.25 * c[2];
        assert_relative_eq!(scaled.click()[2], expected, max_relative = 1e-15);
    }

    #[test]
    fn ones_are_preserved() {
        let channel = LossChannel::new(0.3, 40).unwrap();
        for v in channel.apply(&vec![1.0; 40]) {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(channel.entry(2, 5), 0.0);
    }

    #[test]
    fn unscale_inverts_spd_law() {
        let (p1, eta) = (0.05, 0.8);
        let measured = spd_povm(eta * p1, 25).unwrap();
        let out = unscale_povm(&measured, eta, 25).unwrap();
        let expected = spd_povm(p1, 25).unwrap();
        for (a, b) in out.povm.click().iter().zip(expected.click()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn unscale_flags_amplified_rounding() {
        let measured = spd_povm(0.01, 200).unwrap();
        match unscale_povm(&measured, 0.05, 200) {
            Err(Error::IllConditioned { diagnostic, .. }) => assert!(diagnostic > 1e-6),
            other => panic!("expected ill-conditioning, got {other:?}"),
        }
        assert!(unscale_povm(&measured, 0.5, 10).is_err());
    }

    #[test]
    fn forward_prediction_matches_detector_side_loss() {
        let params = NonlinearSpdParams::new(vec![1e-3, 0.05, 2e-3]).unwrap();
        let p = nonlinear_povm(&params, 200).unwrap();
        let eta = 0.4;
        let lossy = scale_povm(&p, eta).unwrap();
        for &mu in &[0.5, 10.0, 40.0] {
            let a = lossy.coherent_response(mu).unwrap();
            let b = predict_through_loss(&p, eta, mu).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }
}
