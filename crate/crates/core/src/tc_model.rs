//! Power-law time model: predicted luma time = r_cpu · alpha · (PlanarCost/1000)^beta.
//!
//! `alpha` and `beta` are fitted offline by least squares on log-log data.
//! `r_cpu` is an online calibration factor, the ratio of measured to
//! predicted time over CTUs that were encoded without acceleration.

use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// PlanarCost is divided by this before entering the power law.
pub const COST_SCALE: f64 = 1000.0;

/// Default sanity bounds for a fitted exponent.
pub const DEFAULT_BETA_BOUNDS: RangeInclusive<f64> = 0.0..=3.0;

pub fn scale_cost(planar_cost: f64) -> Result<f64> {
    if !(planar_cost > 0.0) || !planar_cost.is_finite() {
        return Err(Error::Argument(format!(
            "PlanarCost must be positive and finite, got {planar_cost}"
        )));
    }
    Ok(planar_cost / COST_SCALE)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcModel {
    alpha: f64,
    beta: f64,
    r_cpu: f64,
}

impl TcModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Self::with_calibration(alpha, beta, 1.0)
    }

    pub fn with_calibration(alpha: f64, beta: f64, r_cpu: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Argument(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !beta.is_finite() {
            return Err(Error::Argument(format!("beta must be finite, got {beta}")));
        }
        if !(r_cpu > 0.0) || !r_cpu.is_finite() {
            return Err(Error::Calibration(format!(
                "r_cpu must be positive, got {r_cpu}"
            )));
        }
        Ok(Self { alpha, beta, r_cpu })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn r_cpu(&self) -> f64 {
        self.r_cpu
    }

    /// `r_cpu · alpha`, the calibrated coefficient.
    pub fn calibrated_alpha(&self) -> f64 {
        self.r_cpu * self.alpha
    }

    pub fn uncalibrated(&self) -> Self {
        Self {
            r_cpu: 1.0,
            ..*self
        }
    }

    pub fn with_r_cpu(&self, r_cpu: f64) -> Result<Self> {
        Self::with_calibration(self.alpha, self.beta, r_cpu)
    }

    pub fn beta_within(&self, bounds: &RangeInclusive<f64>) -> bool {
        bounds.contains(&self.beta)
    }

    /// Calibrated prediction in milliseconds.
    pub fn predict(&self, planar_cost: f64) -> Result<f64> {
        Ok(self.r_cpu * self.predict_base(planar_cost)?)
    }

    /// Prediction with `r_cpu` left out.
    pub fn predict_base(&self, planar_cost: f64) -> Result<f64> {
        Ok(self.alpha * scale_cost(planar_cost)?.powf(self.beta))
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        doc.set("", "alpha", self.alpha);
        doc.set("", "beta", self.beta);
        doc.set("", "r_cpu", self.r_cpu);
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let root = doc.section("");
        let r_cpu = root.get::<f64>("r_cpu")?.unwrap_or(1.0);
        Self::with_calibration(root.require("alpha")?, root.require("beta")?, r_cpu)
            .map_err(|e| Error::Config(format!("invalid model: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvDoc::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv().render()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for TcModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "alpha={} beta={} r_cpu={}",
            self.alpha, self.beta, self.r_cpu
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSample {
    planar_cost: f64,
    luma_time_ms: f64,
}

impl FitSample {
    pub fn new(planar_cost: f64, luma_time_ms: f64) -> Result<Self> {
        if !(planar_cost > 0.0 && planar_cost.is_finite()) {
            return Err(Error::Argument(format!(
                "fit sample PlanarCost must be positive, got {planar_cost}"
            )));
        }
        if !(luma_time_ms > 0.0 && luma_time_ms.is_finite()) {
            return Err(Error::Argument(format!(
                "fit sample time must be positive, got {luma_time_ms}"
            )));
        }
        Ok(Self {
            planar_cost,
            luma_time_ms,
        })
    }

    pub fn planar_cost(&self) -> f64 {
        self.planar_cost
    }

    pub fn luma_time_ms(&self) -> f64 {
        self.luma_time_ms
    }
}

/// Ordinary least squares of ln(time) on ln(cost/1000). `r_cpu` starts at 1.
pub fn fit(samples: &[FitSample]) -> Result<TcModel> {
    if samples.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let first = samples[0].planar_cost;
    if samples.iter().all(|s| s.planar_cost == first) {
        return Err(Error::DegenerateFit(
            "need at least 2 distinct PlanarCost values".into(),
        ));
    }
    let n = samples.len() as f64;
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| ((s.planar_cost / COST_SCALE).ln(), s.luma_time_ms.ln()))
        .collect();
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &pts {
        let dx = x - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit(
            "PlanarCost has no spread in log space".into(),
        ));
    }
    let beta = sxy / sxx;
    let ln_alpha = mean_y - beta * mean_x;
    TcModel::new(ln_alpha.exp(), beta).map_err(|e| Error::DegenerateFit(e.to_string()))
}

/// Root-mean-square residual of the model (r_cpu excluded) in log space.
pub fn log_rmse(model: &TcModel, samples: &[FitSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sse: f64 = samples.iter().map(|s| log_residual(model, s).powi(2)).sum();
    (sse / samples.len() as f64).sqrt()
}

fn log_residual(model: &TcModel, s: &FitSample) -> f64 {
    s.luma_time_ms.ln() - (model.alpha.ln() + model.beta * (s.planar_cost / COST_SCALE).ln())
}

/// Running sums over CTUs encoded without acceleration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Calibration {
    pub predicted_sum_ms: f64,
    pub real_sum_ms: f64,
    pub count: usize,
}

impl Calibration {
    /// Record one CTU: its uncalibrated prediction and its measured time.
    pub fn record(&mut self, predicted_base_ms: f64, real_ms: f64) {
        self.predicted_sum_ms += predicted_base_ms;
        self.real_sum_ms += real_ms;
        self.count += 1;
    }

    /// `None` until the first record.
    pub fn factor(&self) -> Result<Option<f64>> {
        if self.count == 0 {
            return Ok(None);
        }
        if !(self.predicted_sum_ms > 0.0) || !(self.real_sum_ms > 0.0) {
            return Err(Error::Calibration(format!(
                "non-positive calibration sums (predicted {}, real {})",
                self.predicted_sum_ms, self.real_sum_ms
            )));
        }
        Ok(Some(self.real_sum_ms / self.predicted_sum_ms))
    }

    pub fn apply(&self, model: &TcModel) -> Result<TcModel> {
        match self.factor()? {
            Some(r) => model.with_r_cpu(r),
            None => Ok(*model),
        }
    }
}

/// Set `r_cpu` from every non-accelerated `(predicted_base_ms, real_ms)` pair seen so far.
pub fn update_calibration(model: &TcModel, noacc_records: &[(f64, f64)]) -> Result<TcModel> {
    let mut cal = Calibration::default();
    for &(pred, real) in noacc_records {
        cal.record(pred, real);
    }
    cal.apply(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn exact_samples(alpha: f64, beta: f64, n: usize) -> Vec<FitSample> {
        (0..n)
            .map(|i| {
                let cost = 500.0 + 1337.0 * i as f64;
                FitSample::new(cost, alpha * (cost / 1000.0).powf(beta)).unwrap()
            })
            .collect()
    }

    fn sse(alpha: f64, beta: f64, samples: &[FitSample]) -> f64 {
        let m = TcModel::new(alpha, beta).unwrap();
        samples.iter().map(|s| log_residual(&m, s).powi(2)).sum()
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale_cost(1000.0).unwrap(), 1.0);
        assert_eq!(scale_cost(4_000_000.0).unwrap(), 4000.0);
        assert_eq!(scale_cost(1.0).unwrap(), 0.001);
        assert!(matches!(scale_cost(0.0), Err(Error::Argument(_))));
        assert!(matches!(scale_cost(-3.0), Err(Error::Argument(_))));
    }

    #[test]
    fn noiseless_recovery() {
        let m = fit(&exact_samples(0.5, 0.8, 50)).unwrap();
        assert!(rel(m.alpha(), 0.5) < 1e-9, "{m}");
        assert!(rel(m.beta(), 0.8) < 1e-9, "{m}");
        assert_eq!(m.r_cpu(), 1.0);
    }

    #[test]
    fn flat_data_gives_zero_exponent() {
        let s = [
            FitSample::new(1000.0, 2.0).unwrap(),
            FitSample::new(2000.0, 2.0).unwrap(),
        ];
        let m = fit(&s).unwrap();
        assert!(m.beta().abs() < 1e-12);
        assert!((m.alpha() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let one = [FitSample::new(1000.0, 2.0).unwrap()];
        assert!(matches!(fit(&one), Err(Error::DegenerateFit(_))));
        let same = [
            FitSample::new(1000.0, 2.0).unwrap(),
            FitSample::new(1000.0, 3.0).unwrap(),
        ];
        assert!(matches!(fit(&same), Err(Error::DegenerateFit(_))));
        assert!(FitSample::new(0.0, 1.0).is_err());
        assert!(FitSample::new(1.0, -1.0).is_err());
    }

    /// Grid search over (ln alpha, beta) as an independent refit.
    fn grid_refit(samples: &[FitSample], center: (f64, f64), half: f64, n: usize) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let la = center.0.ln() + half * (2.0 * i as f64 / (n - 1) as f64 - 1.0);
                let b = center.1 + half * (2.0 * j as f64 / (n - 1) as f64 - 1.0);
                let e = sse(la.exp(), b, samples);
                if e < best.0 {
                    best = (e, la.exp(), b);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn noisy_recovery_within_five_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = Normal::new(0.0f64, 0.1).unwrap();
        let samples: Vec<_> = (0..500)
            .map(|_| {
                let cost = (rng.random_range(9.0f64..14.0)).exp();
                let t = 0.004 * (cost / 1000.0).powf(1.2) * noise.sample(&mut rng).exp();
                FitSample::new(cost, t).unwrap()
            })
            .collect();
        let m = fit(&samples).unwrap();
        assert!(rel(m.alpha(), 0.004) < 0.05, "{m}");
        assert!(rel(m.beta(), 1.2) < 0.05, "{m}");
        let (ga, gb) = grid_refit(&samples, (0.004, 1.2), 0.1, 201);
        assert!(rel(ga, 0.004) < 0.05 && rel(gb, 1.2) < 0.05);
        // OLS and the grid agree to within the grid spacing
        assert!((ga.ln() - m.alpha().ln()).abs() < 2e-3);
        assert!((gb - m.beta()).abs() < 2e-3);
    }

    #[test]
    fn prediction_examples() {
        let m = TcModel::new(1.0, 1.0).unwrap();
        assert_eq!(m.predict(1000.0).unwrap(), 1.0);
        let flat = TcModel::new(2.0, 0.0).unwrap();
        assert_eq!(flat.predict(12345.0).unwrap(), 2.0);
        let cal = TcModel::with_calibration(1.0, 1.0, 1.5).unwrap();
        assert_eq!(cal.predict(2000.0).unwrap(), 3.0);
        assert!(m.predict(0.0).is_err());
    }

    #[test]
    fn calibration_examples() {
        let m = TcModel::new(1.0, 1.0).unwrap();
        assert_eq!(update_calibration(&m, &[]).unwrap().r_cpu(), 1.0);
        let r = update_calibration(&m, &[(60.0, 66.0), (40.0, 44.0)]).unwrap();
        assert!((r.r_cpu() - 1.1).abs() < 1e-12);
        let fix = update_calibration(&m, &[(3.0, 3.0), (5.5, 5.5)]).unwrap();
        assert_eq!(fix.r_cpu(), 1.0);
        assert!(matches!(
            update_calibration(&m, &[(0.0, 1.0)]),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let m = TcModel::with_calibration(0.1 + 0.2, 0.8123456789, 1.25).unwrap();
        m.write(&path).unwrap();
        assert_eq!(TcModel::read(&path).unwrap(), m);
        std::fs::write(&path, "alpha = 2\n").unwrap();
        assert!(matches!(TcModel::read(&path), Err(Error::Config(_))));
        std::fs::write(&path, "alpha = -2\nbeta = 1\n").unwrap();
        assert!(matches!(TcModel::read(&path), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn refit_is_idempotent(alpha in 0.01f64..50.0, beta in 0.1f64..2.5) {
            let m = fit(&exact_samples(alpha, beta, 30)).unwrap();
            let again = fit(&exact_samples(m.alpha(), m.beta(), 30)).unwrap();
            prop_assert!(rel(again.alpha(), m.alpha()) < 1e-9);
            prop_assert!(rel(again.beta(), m.beta()) < 1e-9);
        }

        #[test]
        fn fitted_point_beats_grid(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<_> = (0..12)
                .map(|_| {
                    let c = rng.random_range(200.0f64..90_000.0);
                    let t = 0.3 * (c / 1000.0).powf(0.9) * rng.random_range(0.7f64..1.3);
                    FitSample::new(c, t).unwrap()
                })
                .collect();
            let m = fit(&samples).unwrap();
            let best = sse(m.alpha(), m.beta(), &samples);
            for i in 0..100 {
                for j in 0..100 {
                    let la = m.alpha().ln() + 0.02 * (i as f64 - 49.5);
                    let b = m.beta() + 0.02 * (j as f64 - 49.5);
                    prop_assert!(best <= sse(la.exp(), b, &samples) * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn monotone_in_cost(beta in 0.01f64..3.0, c in 1.0f64..1e7, d in 1.0f64..1e6) {
            let m = TcModel::new(0.7, beta).unwrap();
            prop_assert!(m.predict(c + d).unwrap() > m.predict(c).unwrap());
        }

        #[test]
        fn calibration_factorizes(r in 0.1f64..10.0, c in 1.0f64..1e7) {
            let base = TcModel::new(0.3, 1.1).unwrap();
            let cal = base.with_r_cpu(r).unwrap();
            let lhs = cal.predict(c).unwrap();
            let rhs = r * base.predict(c).unwrap();
            prop_assert!(rel(lhs, rhs) < 1e-15);
        }
    }
}
