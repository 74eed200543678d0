//! Fitted efficiencies of a NbN nanowire detector at three bias currents.
//!
//! `raw` sets were fitted against the unattenuated probes; `scaled` sets against probes
//! rescaled so that the detector clicks with probability 0.95 at mean photon number 30.

use crate::povm::NonlinearSpdParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasPoint {
    /// Bias current in microamperes.
    pub current_ua: u32,
    pub raw: &'static [f64],
    pub scaled: &'static [f64],
    /// Orders reported as significant after pruning.
    pub reported_kept_orders: &'static [usize],
}

impl BiasPoint {
    pub fn raw_params(&self) -> NonlinearSpdParams {
        NonlinearSpdParams::new(self.raw.to_vec()).expect("tabulated efficiencies lie in [0, 1]")
    }

    pub fn scaled_params(&self) -> NonlinearSpdParams {
        NonlinearSpdParams::new(self.scaled.to_vec()).expect("tabulated efficiencies lie in [0, 1]")
    }
}

pub const BIAS_25UA: BiasPoint = BiasPoint {
    current_ua: 25,
    raw: &[7.30e-4, 2.49e-3],
    scaled: &[7.29e-4, 9.95e-2],
    reported_kept_orders: &[0, 1],
};

pub const BIAS_20UA: BiasPoint = BiasPoint {
    current_ua: 20,
    raw: &[9.72e-6, 7.15e-5, 8.14e-9],
    scaled: &[1.08e-5, 4.76e-2, 3.74e-3, 1.13e-4],
    reported_kept_orders: &[0, 1, 2, 3, 4],
};

pub const BIAS_16UA: BiasPoint = BiasPoint {
    current_ua: 16,
    raw: &[0.0, 7.33e-8, 2.87e-10, 2.81e-14],
    scaled: &[0.0, 1.97e-4, 2.01e-3, 4.87e-4, 5.07e-5],
    reported_kept_orders: &[1, 2, 3, 4],
};

pub const BIAS_POINTS: [BiasPoint; 3] = [BIAS_25UA, BIAS_20UA, BIAS_16UA];

pub fn bias_point(current_ua: u32) -> Option<BiasPoint> {
    BIAS_POINTS.iter().copied().find(|b| b.current_ua == current_ua)
}
