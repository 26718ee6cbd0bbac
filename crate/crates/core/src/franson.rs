//! Franson interferometry: one unbalanced Mach-Zehnder per party, sampled at
//! the level of post-selected outcome classes, plus the phase scan and the
//! visibility fit.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::coincidence_tally;
use crate::channel_plan::db_to_fraction;
use crate::error::{Error, Result};
use crate::link_sim::{simulate, Arm, Topology};
use crate::photonics::{derive_seed, rng_from_seed, PairEvent, PeakClass};

pub const DEFAULT_AMZI_DELAY_PS: f64 = 2000.0;
/// Monitored-port loss of each interferometer: 3 dB splitting plus 1 dB excess.
pub const DEFAULT_AMZI_LOSS_DB: f64 = 4.0;
/// Bob's two phase settings.
pub const BETA_SETTINGS: [f64; 2] = [-1.571, -2.704];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Amzi {
    pub delay_ps: f64,
    pub phase_rad: f64,
    #[serde(default = "default_loss")]
    pub insertion_loss_db: f64,
}

fn default_loss() -> f64 {
    DEFAULT_AMZI_LOSS_DB
}

impl Amzi {
    pub fn new(delay_ps: f64, phase_rad: f64) -> Self {
        Self {
            delay_ps,
            phase_rad,
            insertion_loss_db: DEFAULT_AMZI_LOSS_DB,
        }
    }

    pub fn throughput(&self) -> f64 {
        db_to_fraction(self.insertion_loss_db)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay_ps > 0.0 && self.delay_ps.is_finite()) {
            return Err(Error::Domain(format!(
                "AMZI delay must be > 0 ps, got {}",
                self.delay_ps
            )));
        }
        if !self.phase_rad.is_finite() {
            return Err(Error::Domain(format!(
                "AMZI phase must be finite, got {}",
                self.phase_rad
            )));
        }
        if !(self.insertion_loss_db >= 0.0 && self.insertion_loss_db.is_finite()) {
            return Err(Error::Domain(format!(
                "AMZI loss must be >= 0 dB, got {}",
                self.insertion_loss_db
            )));
        }
        Ok(())
    }
}

/// Alice's and Bob's interferometers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analyzers {
    pub alice: Amzi,
    pub bob: Amzi,
}

impl Analyzers {
    pub fn get(&self, arm: Arm) -> &Amzi {
        match arm {
            Arm::Alice => &self.alice,
            Arm::Bob => &self.bob,
        }
    }

    /// Probability that a central-class pair reaches both monitored ports.
    pub fn central_detection_probability(&self, v0: f64) -> f64 {
        central_detection_probability(self.alice.phase_rad, self.bob.phase_rad, v0)
    }
}

pub fn central_detection_probability(alpha: f64, beta: f64, v0: f64) -> f64 {
    0.5 * (1.0 + v0 * (alpha + beta).cos())
}

/// Interferometer hardware shared by every phase setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FransonSetup {
    #[serde(default = "default_delay")]
    pub delay_ps: f64,
    #[serde(default = "default_loss")]
    pub insertion_loss_db: f64,
}

fn default_delay() -> f64 {
    DEFAULT_AMZI_DELAY_PS
}

impl Default for FransonSetup {
    fn default() -> Self {
        Self {
            delay_ps: DEFAULT_AMZI_DELAY_PS,
            insertion_loss_db: DEFAULT_AMZI_LOSS_DB,
        }
    }
}

impl FransonSetup {
    pub fn analyzers(&self, alpha: f64, beta: f64) -> Analyzers {
        let amzi = |phase_rad| Amzi {
            delay_ps: self.delay_ps,
            phase_rad,
            insertion_loss_db: self.insertion_loss_db,
        };
        Analyzers {
            alice: amzi(alpha),
            bob: amzi(beta),
        }
    }

    /// The side peaks must clear the coincidence window by a wide margin.
    pub fn check_window(&self, window_ps: u64) -> Result<()> {
        if self.delay_ps < 4.0 * window_ps as f64 {
            return Err(Error::Precondition(format!(
                "AMZI delay {} ps must be at least 4x the {} ps coincidence window",
                self.delay_ps, window_ps
            )));
        }
        Ok(())
    }
}

/// Post-selection class of one pair whose photons both reached a detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FransonOutcome {
    /// Alice's photon took the long arm, Bob's the short one.
    SideEarly,
    /// Alice short, Bob long.
    SideLate,
    /// Both photons in the central peak; `long` when both took the long arm.
    CentralDetected { long: bool },
    /// One photon left through the unmonitored port.
    CentralLost { survivor: Arm, long: bool },
}

impl FransonOutcome {
    pub fn peak_class(&self) -> PeakClass {
        match self {
            FransonOutcome::SideEarly => PeakClass::SideEarly,
            FransonOutcome::SideLate => PeakClass::SideLate,
            _ => PeakClass::Central,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeTally {
    pub side_early: u64,
    pub side_late: u64,
    pub central_detected: u64,
    pub central_lost: u64,
}

impl OutcomeTally {
    pub fn record(&mut self, o: &FransonOutcome) {
        match o {
            FransonOutcome::SideEarly => self.side_early += 1,
            FransonOutcome::SideLate => self.side_late += 1,
            FransonOutcome::CentralDetected { .. } => self.central_detected += 1,
            FransonOutcome::CentralLost { .. } => self.central_lost += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.side_early + self.side_late + self.central_detected + self.central_lost
    }
}

pub fn sample_outcome<R: Rng + ?Sized>(
    rng: &mut R,
    alice: &Amzi,
    bob: &Amzi,
    v0: f64,
) -> FransonOutcome {
    let u: f64 = rng.random();
    if u < 0.25 {
        return FransonOutcome::SideEarly;
    }
    if u < 0.5 {
        return FransonOutcome::SideLate;
    }
    let p = central_detection_probability(alice.phase_rad, bob.phase_rad, v0);
    let long = rng.random::<bool>();
    if rng.random::<f64>() < p {
        FransonOutcome::CentralDetected { long }
    } else {
        let survivor = if rng.random::<bool>() {
            Arm::Alice
        } else {
            Arm::Bob
        };
        FransonOutcome::CentralLost { survivor, long }
    }
}

/// Assigns `pair` to an outcome class and returns the class with the extra
/// delay of Alice's and Bob's photon (`None` for a lost photon).
pub fn franson_outcome(
    pair: &mut PairEvent,
    alice: &Amzi,
    bob: &Amzi,
    v0: f64,
    seed: u64,
) -> Result<(FransonOutcome, (Option<f64>, Option<f64>))> {
    if !(0.0..=1.0).contains(&v0) {
        return Err(Error::Precondition(format!(
            "intrinsic visibility must lie in [0, 1], got {v0}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let outcome = sample_outcome(&mut rng, alice, bob, v0);
    pair.peak_class = Some(outcome.peak_class());
    Ok((outcome, outcome.extra_delays(alice.delay_ps)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub alpha_rad: f64,
    /// Central-peak coincidences in the window.
    pub counts: u64,
    pub integration_s: f64,
    /// Of `counts`, the pairs matched with their own twin.
    pub true_coincidences: u64,
    pub accidental_coincidences: u64,
    pub singles_alice_hz: f64,
    pub singles_bob_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FransonScan {
    pub beta_rad: f64,
    pub points: Vec<ScanPoint>,
}

impl FransonScan {
    /// Builds a scan from plain counts.
    pub fn from_counts(
        beta_rad: f64,
        alphas: &[f64],
        counts: &[u64],
        integration_s: f64,
    ) -> Result<Self> {
        if alphas.len() != counts.len() {
            return Err(Error::Precondition(
                "alpha and count lists differ in length".into(),
            ));
        }
        let points = alphas
            .iter()
            .zip(counts)
            .map(|(&alpha_rad, &counts)| ScanPoint {
                alpha_rad,
                counts,
                integration_s,
                true_coincidences: 0,
                accidental_coincidences: 0,
                singles_alice_hz: 0.0,
                singles_bob_hz: 0.0,
            })
            .collect();
        let scan = Self { beta_rad, points };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .points
            .windows(2)
            .any(|w| w[1].alpha_rad <= w[0].alpha_rad)
        {
            return Err(Error::Contract(
                "scan alphas must be strictly increasing".into(),
            ));
        }
        if self.points.iter().any(|p| !(p.integration_s > 0.0)) {
            return Err(Error::Contract("scan integration times must be > 0".into()));
        }
        Ok(())
    }

    pub fn total_counts(&self) -> u64 {
        self.points.iter().map(|p| p.counts).sum()
    }

    pub fn total_time_s(&self) -> f64 {
        self.points.iter().map(|p| p.integration_s).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha_rad,counts,integration_s\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.alpha_rad, p.counts, p.integration_s);
        }
        s
    }
}

/// Simulates one Franson scan: for every `alpha` the link runs for
/// `integration_s` with the interferometers set to `(alpha, beta)`, and the
/// central-peak coincidences are counted in a `window_ps` window.
///
/// Point `i` uses sub-seed `derive_seed(seed, 1000 + i)`; the result does not
/// depend on how points are scheduled across threads.
pub fn franson_scan(
    topology: &Topology,
    setup: &FransonSetup,
    beta: f64,
    alphas: &[f64],
    integration_s: f64,
    window_ps: u64,
    seed: u64,
) -> Result<FransonScan> {
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "alphas must be strictly increasing".into(),
        ));
    }
    setup.check_window(window_ps)?;
    let points = alphas
        .par_iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let mut topo = topology.clone();
            topo.analyzers = Some(setup.analyzers(alpha, beta));
            let out = simulate(&topo, integration_s, derive_seed(seed, 1000 + i as u64))?;
            let tally = coincidence_tally(
                &out.alice,
                &out.bob,
                window_ps,
                out.bookkeeping.nominal_delay_ps,
            )?;
            Ok(ScanPoint {
                alpha_rad: alpha,
                counts: tally.total,
                integration_s,
                true_coincidences: tally.twins,
                accidental_coincidences: tally.accidental(),
                singles_alice_hz: out.alice.singles_rate(),
                singles_bob_hz: out.bob.singles_rate(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FransonScan {
        beta_rad: beta,
        points,
    })
}

/// Evenly spaced phases over one period starting at `start`.
pub fn uniform_alphas(start: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| start + 2.0 * PI * i as f64 / n as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityFit {
    pub visibility: f64,
    pub visibility_sigma: f64,
    /// Rate offset `A` of `A (1 + V cos(alpha + phi0))`, in counts/s.
    pub offset: f64,
    /// Rate amplitude `A V`.
    pub amplitude: f64,
    pub phase_offset_rad: f64,
    /// `(max - min) / (max + min)` of the fitted curve.
    pub extrema_visibility: f64,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

pub fn visibility_from_extrema(c_max: f64, c_min: f64) -> Result<f64> {
    if !(c_max >= c_min && c_min >= 0.0 && c_max > 0.0) {
        return Err(Error::Domain(format!(
            "need c_max >= c_min >= 0 and c_max > 0, got {c_max}, {c_min}"
        )));
    }
    Ok((c_max - c_min) / (c_max + c_min))
}

const MAX_ITERATIONS: usize = 100;

/// Poisson-weighted least squares of `C(alpha) = A (1 + V cos(alpha + phi0))`,
/// solved as the linear model `a + b cos(alpha) + c sin(alpha)` with weights
/// refreshed from the fitted curve until they settle.
pub fn fit_visibility(scan: &FransonScan) -> Result<VisibilityFit> {
    scan.validate()?;
    let pts = &scan.points;
    if pts.len() < 5 {
        return Err(Error::Precondition(format!(
            "need at least 5 distinct phases, got {}",
            pts.len()
        )));
    }
    let span = pts[pts.len() - 1].alpha_rad - pts[0].alpha_rad;
    if span < PI - 1e-9 {
        return Err(Error::Precondition(format!(
            "phases must span at least pi, got {span:.4} rad"
        )));
    }
    if scan.total_counts() == 0 {
        return Err(Error::Fit("scan has no counts".into()));
    }

    let rows: Vec<[f64; 3]> = pts
        .iter()
        .map(|p| [1.0, p.alpha_rad.cos(), p.alpha_rad.sin()])
        .collect();
    let rates: Vec<f64> = pts
        .iter()
        .map(|p| p.counts as f64 / p.integration_s)
        .collect();
    let times: Vec<f64> = pts.iter().map(|p| p.integration_s).collect();
    let model = |beta: &[f64; 3], i: usize| {
        rows[i][0] * beta[0] + rows[i][1] * beta[1] + rows[i][2] * beta[2]
    };
    // Variance of a rate, floored at half a count so empty points keep weight.
    let variance = |rate: f64, i: usize| rate.max(0.5 / times[i]) / times[i];

    let mut var: Vec<f64> = (0..pts.len()).map(|i| variance(rates[i], i)).collect();
    let mut beta = [0.0; 3];
    let mut cov = [[0.0; 3]; 3];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ITERATIONS {
        iterations = it;
        let mut xtwx = [[0.0; 3]; 3];
        let mut xtwy = [0.0; 3];
        for (i, r) in rows.iter().enumerate() {
            let w = 1.0 / var[i];
            for j in 0..3 {
                xtwy[j] += w * r[j] * rates[i];
                for k in 0..3 {
                    xtwx[j][k] += w * r[j] * r[k];
                }
            }
        }
        cov = invert3(&xtwx).ok_or_else(|| Error::Fit("normal matrix is singular".into()))?;
        let next = mat_vec(&cov, &xtwy);
        let change = (0..3)
            .map(|j| (next[j] - beta[j]).abs())
            .fold(0.0, f64::max);
        beta = next;
        var = (0..pts.len())
            .map(|i| variance(model(&beta, i), i))
            .collect();
        if change <= 1e-12 * beta[0].abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    let residuals: Vec<f64> = (0..pts.len())
        .map(|i| (rates[i] - model(&beta, i)) / var[i].sqrt())
        .collect();
    let chi2: f64 = residuals.iter().map(|r| r * r).sum();
    if !converged || !beta.iter().all(|b| b.is_finite()) {
        return Err(Error::Fit(format!(
            "no convergence after {iterations} iterations; normalized residuals {residuals:.3?}"
        )));
    }
    let [a, b, c] = beta;
    if a <= 0.0 {
        return Err(Error::Fit(format!(
            "fitted offset {a} is not positive; residuals {residuals:.3?}"
        )));
    }
    let r = b.hypot(c);
    let v_raw = r / a;
    let grad = if r > 0.0 {
        [-v_raw / a, b / (a * r), c / (a * r)]
    } else {
        [0.0, 1.0 / a, 0.0]
    };
    let mut var_v = 0.0;
    for j in 0..3 {
        for k in 0..3 {
            var_v += grad[j] * cov[j][k] * grad[k];
        }
    }
    let v = v_raw.clamp(0.0, 1.0);
    let c_max = a + r;
    let c_min = (a - r).max(0.0);
    Ok(VisibilityFit {
        visibility: v,
        visibility_sigma: var_v.max(0.0).sqrt(),
        offset: a,
        amplitude: a * v,
        phase_offset_rad: (-c).atan2(b),
        extrema_visibility: visibility_from_extrema(c_max, c_min)?,
        chi2,
        dof: pts.len() - 3,
        iterations,
    })
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r: usize, s: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (s1, s2) = ((s + 1) % 3, (s + 2) % 3);
        m[r1][s1] * m[r2][s2] - m[r1][s2] * m[r2][s1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    let scale = m.iter().flatten().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if !det.is_finite() || det.abs() <= 1e-13 * scale.powi(3) {
        return None;
    }
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = c(j, i) / det;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_recovery_is_exact() {
        // 100 (1 + 0.5 cos a) is integral on this grid.
        let alphas = [
            0.0,
            PI / 3.0,
            2.0 * PI / 3.0,
            PI,
            4.0 * PI / 3.0,
            5.0 * PI / 3.0,
        ];
        let counts = [150, 125, 75, 50, 75, 125];
        let scan = FransonScan::from_counts(0.0, &alphas, &counts, 1.0).unwrap();
        let fit = fit_visibility(&scan).unwrap();
        assert!((fit.visibility - 0.5).abs() < 1e-12, "{}", fit.visibility);
        assert!((fit.offset - 100.0).abs() < 1e-9);
        assert!(fit.phase_offset_rad.abs() < 1e-9);
        assert!((fit.extrema_visibility - 0.5).abs() < 1e-12);
    }

    #[test]
    fn extrema_formula() {
        assert!((visibility_from_extrema(100.0, 10.0).unwrap() - 90.0 / 110.0).abs() < 1e-15);
        assert!(visibility_from_extrema(1.0, 2.0).is_err());
    }

    #[test]
    fn preconditions() {
        let scan =
            FransonScan::from_counts(0.0, &[0.0, 1.0, 2.0, 3.0], &[1, 2, 3, 4], 1.0).unwrap();
        assert!(matches!(fit_visibility(&scan), Err(Error::Precondition(_))));
        let scan = FransonScan::from_counts(0.0, &[0.0, 0.5, 1.0, 1.5, 2.0], &[1, 2, 3, 4, 5], 1.0)
            .unwrap();
        assert!(matches!(fit_visibility(&scan), Err(Error::Precondition(_))));
        let one = FransonScan::from_counts(0.0, &[0.0], &[10], 1.0).unwrap();
        assert!(matches!(fit_visibility(&one), Err(Error::Precondition(_))));
        assert!(FransonScan::from_counts(0.0, &[1.0, 0.0], &[1, 1], 1.0).is_err());
    }

    #[test]
    fn phase_offset_recovered() {
        let alphas = uniform_alphas(0.0, 8);
        let counts: Vec<u64> = alphas
            .iter()
            .map(|a| (1e6 * (1.0 + 0.8 * (a + 0.7).cos())).round() as u64)
            .collect();
        let fit =
            fit_visibility(&FransonScan::from_counts(0.0, &alphas, &counts, 1.0).unwrap()).unwrap();
        assert!((fit.phase_offset_rad - 0.7).abs() < 1e-5);
        assert!((fit.visibility - 0.8).abs() < 1e-6);
    }

    #[test]
    fn outcome_delays() {
        let dt = 2000.0;
        assert_eq!(
            FransonOutcome::SideEarly.extra_delays(dt),
            (Some(dt), Some(0.0))
        );
        assert_eq!(
            FransonOutcome::SideLate.extra_delays(dt),
            (Some(0.0), Some(dt))
        );
        assert_eq!(
            FransonOutcome::CentralDetected { long: true }.extra_delays(dt),
            (Some(dt), Some(dt))
        );
        assert_eq!(
            FransonOutcome::CentralLost {
                survivor: Arm::Bob,
                long: false
            }
            .extra_delays(dt),
            (None, Some(0.0))
        );
    }

    #[test]
    fn extreme_phase_cases() {
        let a = Amzi::new(2000.0, PI);
        let b = Amzi::new(2000.0, 0.0);
        let mut rng = rng_from_seed(3);
        for _ in 0..10_000 {
            let o = sample_outcome(&mut rng, &a, &b, 1.0);
            assert!(!matches!(o, FransonOutcome::CentralDetected { .. }));
        }
        assert!((central_detection_probability(0.3, 1.2, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn outcome_sets_peak_class() {
        let mut pair = PairEvent {
            emission_ps: 0.0,
            idler_offset_ps: 0.0,
            signal_channel: crate::channel_plan::ItuChannel::new(35).unwrap(),
            idler_channel: crate::channel_plan::ItuChannel::new(57).unwrap(),
            peak_class: None,
        };
        let a = Amzi::new(2000.0, 0.0);
        let (o, _) = franson_outcome(&mut pair, &a, &a, 0.9, 5).unwrap();
        assert_eq!(pair.peak_class, Some(o.peak_class()));
        assert!(franson_outcome(&mut pair, &a, &a, 1.5, 5).is_err());
    }
}
