//! BBM92 key-rate arithmetic and session estimation from Franson scans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::franson::{FransonScan, VisibilityFit};

pub const DEFAULT_F_EC: f64 = 1.2;

/// One row of the published performance table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub data_rate_gbps: f64,
    /// Visibility at each of Bob's two phase settings.
    pub visibilities: [f64; 2],
    pub raw_key_rate_bps: f64,
    pub qber: f64,
    pub secret_key_rate_bps: f64,
}

impl ReferenceRow {
    pub fn mean_visibility(&self) -> f64 {
        0.5 * (self.visibilities[0] + self.visibilities[1])
    }
}

pub const REFERENCE_TABLE: [ReferenceRow; 4] = [
    ReferenceRow {
        data_rate_gbps: 0.0,
        visibilities: [0.8851, 0.8931],
        raw_key_rate_bps: 4668.0,
        qber: 0.0555,
        secret_key_rate_bps: 1493.0,
    },
    ReferenceRow {
        data_rate_gbps: 5.0,
        visibilities: [0.8728, 0.8760],
        raw_key_rate_bps: 4712.0,
        qber: 0.0628,
        secret_key_rate_bps: 1203.0,
    },
    ReferenceRow {
        data_rate_gbps: 10.0,
        visibilities: [0.8533, 0.8485],
        raw_key_rate_bps: 4831.0,
        qber: 0.0746,
        secret_key_rate_bps: 763.0,
    },
    ReferenceRow {
        data_rate_gbps: 20.0,
        visibilities: [0.8201, 0.8249],
        raw_key_rate_bps: 5004.0,
        qber: 0.0888,
        secret_key_rate_bps: 245.0,
    },
];

pub fn reference_row(data_rate_gbps: f64) -> Option<&'static ReferenceRow> {
    REFERENCE_TABLE
        .iter()
        .find(|r| r.data_rate_gbps == data_rate_gbps)
}

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "binary entropy needs x in [0, 1], got {x}"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Phase-basis error rate implied by the two Franson visibilities.
pub fn qber_from_visibility(v1: f64, v2: f64) -> Result<f64> {
    for v in [v1, v2] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!(
                "visibility must lie in [0, 1], got {v}"
            )));
        }
    }
    Ok((1.0 - 0.5 * (v1 + v2)) / 2.0)
}

/// `raw (1 - f_ec H2(Q) - H2(Q))`, clamped at zero.
pub fn secret_key_rate(raw_bps: f64, qber: f64, f_ec: f64) -> Result<f64> {
    if !(raw_bps >= 0.0 && raw_bps.is_finite()) {
        return Err(Error::Domain(format!(
            "raw key rate must be >= 0, got {raw_bps}"
        )));
    }
    if !(0.0..=0.5).contains(&qber) {
        return Err(Error::Domain(format!(
            "QBER must lie in [0, 0.5], got {qber}"
        )));
    }
    if !(f_ec >= 1.0 && f_ec.is_finite()) {
        return Err(Error::Domain(format!(
            "error-correction inefficiency must be >= 1, got {f_ec}"
        )));
    }
    let h = binary_entropy(qber)?;
    Ok(raw_bps * (1.0 - f_ec * h - h).max(0.0))
}

/// Time-basis error estimate: an accidental coincidence lands in the wrong
/// time bin half the time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBasisDiagnostics {
    pub accidental_fraction: f64,
    pub qber_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QkdReport {
    pub classical_data_rate_gbps: f64,
    pub raw_key_rate_bps: f64,
    pub qber: f64,
    pub secret_key_rate_bps: f64,
    /// Visibility at each of Bob's phase settings, in scan order.
    pub visibility_pair: [f64; 2],
    pub visibility_sigmas: [f64; 2],
    pub f_ec: f64,
    pub time_basis: TimeBasisDiagnostics,
}

impl QkdReport {
    pub const CSV_HEADER: &'static str =
        "classical_data_rate_gbps,visibility_beta1,visibility_beta2,raw_key_rate_bps,qber,secret_key_rate_bps";

    /// One CSV line in the column order of the published table.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.3},{:.6},{:.3}",
            self.classical_data_rate_gbps,
            self.visibility_pair[0],
            self.visibility_pair[1],
            self.raw_key_rate_bps,
            self.qber,
            self.secret_key_rate_bps
        )
    }
}

/// One basis measurement of a session: the scan and, once done, its fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMeasurement {
    pub scan: FransonScan,
    pub fit: Option<VisibilityFit>,
}

/// Key-rate report from the two phase settings of one session.
///
/// The raw key rate is the central-peak coincidence rate pooled over both
/// scans, accidentals included.
pub fn bbm92_session(
    data_rate_gbps: f64,
    measurements: &[BasisMeasurement],
    f_ec: f64,
) -> Result<QkdReport> {
    if measurements.len() != 2 {
        return Err(Error::IncompleteSession(format!(
            "need measurements at two phase settings, got {}",
            measurements.len()
        )));
    }
    let mut fits = Vec::with_capacity(2);
    for m in measurements {
        let fit = m.fit.as_ref().ok_or_else(|| {
            Error::IncompleteSession(format!(
                "no visibility fit for beta = {} rad",
                m.scan.beta_rad
            ))
        })?;
        fits.push(fit);
    }
    let counts: u64 = measurements.iter().map(|m| m.scan.total_counts()).sum();
    let time: f64 = measurements.iter().map(|m| m.scan.total_time_s()).sum();
    if !(time > 0.0) {
        return Err(Error::IncompleteSession(
            "scans have no integration time".into(),
        ));
    }
    let accidentals: u64 = measurements
        .iter()
        .flat_map(|m| &m.scan.points)
        .map(|p| p.accidental_coincidences)
        .sum();
    let raw = counts as f64 / time;
    let visibility_pair = [fits[0].visibility, fits[1].visibility];
    let qber = qber_from_visibility(visibility_pair[0], visibility_pair[1])?;
    let accidental_fraction = if counts > 0 {
        accidentals as f64 / counts as f64
    } else {
        0.0
    };
    Ok(QkdReport {
        classical_data_rate_gbps: data_rate_gbps,
        raw_key_rate_bps: raw,
        qber,
        secret_key_rate_bps: secret_key_rate(raw, qber, f_ec)?,
        visibility_pair,
        visibility_sigmas: [fits[0].visibility_sigma, fits[1].visibility_sigma],
        f_ec,
        time_basis: TimeBasisDiagnostics {
            accidental_fraction,
            qber_estimate: accidental_fraction / 2.0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.0888).unwrap() - 0.4325).abs() < 5e-4);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
        for i in 1..100 {
            let x = i as f64 / 100.0;
            assert!((binary_entropy(x).unwrap() - binary_entropy(1.0 - x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn qber_examples() {
        assert!((qber_from_visibility(0.8851, 0.8931).unwrap() - 0.05545).abs() < 1e-9);
        assert!((qber_from_visibility(0.8201, 0.8249).unwrap() - 0.08875).abs() < 1e-9);
        assert_eq!(qber_from_visibility(1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn skr_examples() {
        let r = secret_key_rate(5004.0, 0.0888, 1.2).unwrap();
        assert!((r - 243.0).abs() < 1.5, "{r}");
        let r = secret_key_rate(4831.0, 0.0746, 1.2).unwrap();
        assert!((r - 761.0).abs() < 1.5, "{r}");
        assert_eq!(secret_key_rate(1234.0, 0.0, 1.7).unwrap(), 1234.0);
        assert!(secret_key_rate(1.0, 0.1, 0.9).is_err());
    }

    #[test]
    fn skr_threshold_and_monotonicity() {
        let f = |q| secret_key_rate(1000.0, q, 1.2).unwrap();
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // H2(Q) = 1/2.2 at Q = 9.55%.
        assert!((0.0950..=0.0960).contains(&hi), "threshold {hi}");
        for i in 0..200 {
            let q = hi + (0.5 - hi) * i as f64 / 199.0;
            assert_eq!(f(q), 0.0);
        }
        let mut prev = f64::INFINITY;
        for i in 0..=500 {
            let q = 0.5 * i as f64 / 500.0;
            let r = f(q);
            assert!(r <= prev);
            prev = r;
        }
        let a = secret_key_rate(1000.0, 0.05, 1.2).unwrap();
        let b = secret_key_rate(3000.0, 0.05, 1.2).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-9);
    }

    #[test]
    fn session_needs_both_fits() {
        let scan = FransonScan {
            beta_rad: -1.571,
            points: Vec::new(),
        };
        let m = BasisMeasurement { scan, fit: None };
        assert!(matches!(
            bbm92_session(0.0, &[m.clone(), m.clone()], 1.2),
            Err(Error::IncompleteSession(_))
        ));
        assert!(matches!(
            bbm92_session(0.0, &[m], 1.2),
            Err(Error::IncompleteSession(_))
        ));
    }
}
