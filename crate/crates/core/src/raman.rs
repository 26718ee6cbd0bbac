//! Noise photons scattered out of classical WDM channels into the quantum
//! channels.
//!
//! Rayleigh, Brillouin and Raman contributions are lumped into one
//! coefficient per (classical wavelength, quantum channel): the photon flux
//! arriving at the quantum receiver input per milliwatt of classical launch
//! power. Noise is therefore strictly linear in launch power.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel_plan::{
    wavelength_to_channel, wavelength_to_frequency_thz, DwdmPort, ItuChannel,
};
use crate::error::{Error, Result};
use crate::franson::FransonSetup;
use crate::link_sim::{expected_rates, Arm, ClassicalPlan, PathElement, Topology};

/// Receiver sensitivity of the 20 Gbps transceiver.
pub const REFERENCE_RECEIVE_POWER_DBM: f64 = -24.0;
pub const REFERENCE_DATA_RATE_GBPS: f64 = 20.0;

/// Classical wavelength with the strongest noise coincidences (grid C48).
pub const WORST_CASE_WAVELENGTH_NM: f64 = 1538.98;
/// Half width at half maximum of the default profile shape.
pub const DEFAULT_SHAPE_HWHM_THZ: f64 = 0.6;
/// Relative strength of noise in a quantum channel on the blue (anti-Stokes)
/// side of the classical line.
pub const ANTI_STOKES_WEIGHT: f64 = 0.05;
/// Grid span tabulated by the default profile.
pub const DEFAULT_TABLE_CHANNELS: std::ops::RangeInclusive<u8> = 17..=61;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

/// One classical transmitter sharing the fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalLink {
    pub wavelength_nm: f64,
    pub launch_power_mw: f64,
    pub data_rate_gbps: f64,
    pub direction: Direction,
}

impl ClassicalLink {
    pub fn validate(&self) -> Result<()> {
        wavelength_to_channel(self.wavelength_nm)?;
        if !(self.launch_power_mw > 0.0 && self.launch_power_mw.is_finite()) {
            return Err(Error::Domain(format!(
                "launch power must be > 0 mW, got {}",
                self.launch_power_mw
            )));
        }
        if !(self.data_rate_gbps >= 0.0 && self.data_rate_gbps.is_finite()) {
            return Err(Error::Domain(format!(
                "data rate must be >= 0, got {}",
                self.data_rate_gbps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamanEntry {
    pub classical_wavelength_nm: f64,
    pub channel: ItuChannel,
    pub kappa_cts_per_s_per_mw: f64,
}

/// Noise coefficient table, piecewise linear in classical wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RamanEntry>", into = "Vec<RamanEntry>")]
pub struct RamanProfile {
    /// Per channel, (wavelength, kappa) sorted by wavelength.
    curves: BTreeMap<ItuChannel, Vec<(f64, f64)>>,
}

impl TryFrom<Vec<RamanEntry>> for RamanProfile {
    type Error = Error;

    fn try_from(entries: Vec<RamanEntry>) -> Result<Self> {
        Self::from_entries(entries)
    }
}

impl From<RamanProfile> for Vec<RamanEntry> {
    fn from(p: RamanProfile) -> Self {
        p.entries()
    }
}

impl RamanProfile {
    pub fn from_entries(entries: Vec<RamanEntry>) -> Result<Self> {
        let mut curves: BTreeMap<ItuChannel, Vec<(f64, f64)>> = BTreeMap::new();
        for e in entries {
            if !(e.kappa_cts_per_s_per_mw >= 0.0 && e.kappa_cts_per_s_per_mw.is_finite()) {
                return Err(Error::Domain(format!(
                    "kappa must be >= 0, got {} at {} nm / {}",
                    e.kappa_cts_per_s_per_mw, e.classical_wavelength_nm, e.channel
                )));
            }
            if !(e.classical_wavelength_nm > 0.0 && e.classical_wavelength_nm.is_finite()) {
                return Err(Error::Domain(format!(
                    "bad wavelength {}",
                    e.classical_wavelength_nm
                )));
            }
            curves
                .entry(e.channel)
                .or_default()
                .push((e.classical_wavelength_nm, e.kappa_cts_per_s_per_mw));
        }
        if curves.is_empty() {
            return Err(Error::Domain("Raman profile has no entries".into()));
        }
        for (ch, curve) in curves.iter_mut() {
            curve.sort_by(|a, b| a.0.total_cmp(&b.0));
            if curve.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Domain(format!(
                    "duplicate wavelength in Raman profile for {ch}"
                )));
            }
        }
        Ok(Self { curves })
    }

    /// Unit-height profile for the pair `(alice_channel, bob_channel)`.
    ///
    /// The shape is a Lorentzian in classical frequency centred on the
    /// worst-case wavelength. A quantum channel on the red side of that line
    /// gets weight 1, one on the blue side [`ANTI_STOKES_WEIGHT`]. Noise
    /// coincidences scale with the product of the two curves and therefore
    /// peak at [`WORST_CASE_WAVELENGTH_NM`].
    pub fn default_shape(channels: &[ItuChannel]) -> Result<Self> {
        let peak = wavelength_to_frequency_thz(WORST_CASE_WAVELENGTH_NM);
        let mut entries = Vec::new();
        for &ch in channels {
            let weight = if ch.frequency_thz() < peak {
                1.0
            } else {
                ANTI_STOKES_WEIGHT
            };
            for n in DEFAULT_TABLE_CHANNELS {
                let classical = ItuChannel::new(n)?;
                let x = (classical.frequency_thz() - peak) / DEFAULT_SHAPE_HWHM_THZ;
                entries.push(RamanEntry {
                    classical_wavelength_nm: classical.wavelength_nm(),
                    channel: ch,
                    kappa_cts_per_s_per_mw: weight / (1.0 + x * x),
                });
            }
        }
        Self::from_entries(entries)
    }

    pub fn entries(&self) -> Vec<RamanEntry> {
        self.curves
            .iter()
            .flat_map(|(&ch, curve)| {
                curve.iter().map(move |&(wl, k)| RamanEntry {
                    classical_wavelength_nm: wl,
                    channel: ch,
                    kappa_cts_per_s_per_mw: k,
                })
            })
            .collect()
    }

    pub fn channels(&self) -> impl Iterator<Item = ItuChannel> + '_ {
        self.curves.keys().copied()
    }

    /// Wavelength span covered for `channel`.
    pub fn coverage(&self, channel: ItuChannel) -> Option<(f64, f64)> {
        let c = self.curves.get(&channel)?;
        Some((c.first()?.0, c.last()?.0))
    }

    /// Tabulated classical wavelengths for `channel`.
    pub fn wavelengths(&self, channel: ItuChannel) -> Vec<f64> {
        self.curves
            .get(&channel)
            .map(|c| c.iter().map(|p| p.0).collect())
            .unwrap_or_default()
    }

    pub fn kappa(&self, wavelength_nm: f64, channel: ItuChannel) -> Result<f64> {
        let uncovered = || Error::Coverage {
            wavelength_nm,
            channel: channel.index(),
        };
        let curve = self.curves.get(&channel).ok_or_else(uncovered)?;
        let (lo, hi) = (curve[0].0, curve[curve.len() - 1].0);
        if !(lo..=hi).contains(&wavelength_nm) {
            return Err(uncovered());
        }
        let i = curve.partition_point(|p| p.0 <= wavelength_nm);
        if i == 0 {
            return Ok(curve[0].1);
        }
        if i == curve.len() {
            return Ok(curve[i - 1].1);
        }
        let (x0, y0) = curve[i - 1];
        let (x1, y1) = curve[i];
        Ok(y0 + (y1 - y0) * (wavelength_nm - x0) / (x1 - x0))
    }

    /// Copy with every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let curves = self
            .curves
            .iter()
            .map(|(&ch, c)| (ch, c.iter().map(|&(wl, k)| (wl, k * factor)).collect()))
            .collect();
        Self { curves }
    }

    /// Largest coefficient over the table.
    pub fn peak_kappa(&self) -> f64 {
        self.curves
            .values()
            .flatten()
            .map(|p| p.1)
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "classical_wavelength_nm",
            "channel",
            "kappa_cts_per_s_per_mW",
        ])?;
        for e in self.entries() {
            wtr.write_record([
                e.classical_wavelength_nm.to_string(),
                e.channel.index().to_string(),
                e.kappa_cts_per_s_per_mw.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i)
                    .ok_or_else(|| Error::Domain(format!("Raman CSV row missing column {i}")))
            };
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Domain(format!("bad number {s:?} in Raman CSV")))
            };
            let channel: u8 = field(1)?.trim().parse().map_err(|_| {
                Error::Domain(format!(
                    "bad channel {:?} in Raman CSV",
                    field(1).unwrap_or("")
                ))
            })?;
            entries.push(RamanEntry {
                classical_wavelength_nm: parse(field(0)?)?,
                channel: ItuChannel::new(channel)?,
                kappa_cts_per_s_per_mw: parse(field(2)?)?,
            });
        }
        Self::from_entries(entries)
    }
}

/// Noise photon flux into `channel` caused by `link`.
pub fn noise_singles_rate(
    profile: &RamanProfile,
    link: &ClassicalLink,
    channel: ItuChannel,
) -> Result<f64> {
    Ok(profile.kappa(link.wavelength_nm, channel)? * link.launch_power_mw)
}

/// Accidental coincidence rate of two uncorrelated streams, `r1 r2 τ`.
pub fn accidental_coincidence_rate(r1_hz: f64, r2_hz: f64, window_ps: f64) -> f64 {
    r1_hz * r2_hz * window_ps * 1e-12
}

/// Minimum received power for `data_rate_gbps`: -24 dBm at 20 Gbps and
/// 3 dB per factor of two in rate.
pub fn required_receive_power(data_rate_gbps: f64) -> Result<f64> {
    if !(data_rate_gbps > 0.0 && data_rate_gbps.is_finite()) {
        return Err(Error::Domain(format!(
            "data rate must be > 0 Gbps, got {data_rate_gbps}"
        )));
    }
    Ok(REFERENCE_RECEIVE_POWER_DBM + 10.0 * (data_rate_gbps / REFERENCE_DATA_RATE_GBPS).log10())
}

/// One (classical data rate, measured visibility) calibration anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityTarget {
    pub data_rate_gbps: f64,
    pub visibility: f64,
}

/// Output of [`calibrate_profile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profile: RamanProfile,
    pub intrinsic_visibility: f64,
    /// Peak coefficient of the fitted profile.
    pub kappa_worst: f64,
    /// Model visibility for every target, anchors included.
    pub predictions: Vec<CalibrationPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub data_rate_gbps: f64,
    pub target: f64,
    pub model: f64,
    pub anchor: bool,
}

/// Largest allowed peak coefficient, in counts/s/mW.
const KAPPA_CEILING: f64 = 1e12;
/// Agreement required at the anchors.
const ANCHOR_TOLERANCE: f64 = 0.005;

/// Fits the intrinsic visibility and the noise scale so that the dilution
/// law `V(P) = V0 C / (C + A(P))` reproduces the 0 Gbps anchor and the
/// highest-rate anchor. Remaining targets are reported as predictions.
///
/// The law is evaluated as the fringe contrast of the expected central-peak
/// rate between interference maximum and minimum. Pairs lost at the
/// analyzers slightly modulate the singles with phase, so this sits a few
/// 1e-4 above `V0 C / (C + A)` computed at mean rates.
///
/// `shape` fixes the relative profile; only its overall scale is fitted.
/// Rates come from the expected-rate model of `topology` with the
/// analyzers of `setup` inserted.
pub fn calibrate_profile(
    targets: &[VisibilityTarget],
    topology: &Topology,
    plan: &ClassicalPlan,
    setup: &FransonSetup,
    window_ps: u64,
    shape: &RamanProfile,
) -> Result<Calibration> {
    if targets.len() < 2 {
        return Err(Error::Calibration(format!(
            "need at least 2 targets, got {}",
            targets.len()
        )));
    }
    let zero = targets
        .iter()
        .find(|t| t.data_rate_gbps == 0.0)
        .ok_or_else(|| Error::Calibration("targets must include the 0 Gbps row".into()))?;
    let top = targets
        .iter()
        .filter(|t| t.data_rate_gbps > 0.0)
        .max_by(|a, b| a.data_rate_gbps.total_cmp(&b.data_rate_gbps))
        .ok_or_else(|| Error::Calibration("targets need a row with classical traffic".into()))?;
    for t in targets {
        if !(0.0 < t.visibility && t.visibility <= 1.0) {
            return Err(Error::Calibration(format!(
                "target visibility {} outside (0, 1]",
                t.visibility
            )));
        }
    }
    let peak = shape.peak_kappa();
    if peak <= 0.0 {
        return Err(Error::Calibration(
            "profile shape is identically zero".into(),
        ));
    }
    let unit_shape = shape.scaled(1.0 / peak);

    // Fringe visibility of the expected central-peak rate, from its values at
    // the maximum and minimum of the interference.
    let fringe = |rate: f64, kappa: f64, v0: f64| -> Result<(f64, f64)> {
        let mut topo = plan.apply(topology, rate)?;
        topo.raman = Some(unit_shape.scaled(kappa));
        topo.source.intrinsic_visibility = v0;
        let mut at = |alpha: f64| -> Result<(f64, f64)> {
            topo.analyzers = Some(setup.analyzers(alpha, 0.0));
            let e = expected_rates(&topo, window_ps)?;
            Ok((e.true_coincidences, e.accidental_coincidences))
        };
        let (c_hi, a_hi) = at(0.0)?;
        let (c_lo, a_lo) = at(std::f64::consts::PI)?;
        let (hi, lo) = (c_hi + a_hi, c_lo + a_lo);
        if hi <= 0.0 {
            return Err(Error::Calibration(
                "scenario produces no central-peak coincidences".into(),
            ));
        }
        Ok(((hi - lo) / (hi + lo), 0.5 * (c_hi + c_lo)))
    };

    let (v_max, c0) = fringe(0.0, 0.0, 1.0)?;
    if c0 <= 0.0 {
        return Err(Error::Calibration(
            "scenario produces no true coincidences".into(),
        ));
    }
    if v_max < zero.visibility {
        return Err(Error::Calibration(format!(
            "0 Gbps anchor {:.4} needs intrinsic visibility > 1 (reaches only {v_max:.4} at V0 = 1)",
            zero.visibility
        )));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if fringe(0.0, 0.0, mid)?.0 < zero.visibility {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 {
            break;
        }
    }
    let v0 = 0.5 * (lo + hi);
    let model_v = |rate: f64, kappa: f64| -> Result<f64> { Ok(fringe(rate, kappa, v0)?.0) };

    let kappa = if top.visibility >= zero.visibility {
        if top.visibility > zero.visibility + ANCHOR_TOLERANCE {
            return Err(Error::Calibration(format!(
                "visibility rises from {:.4} to {:.4} with traffic; noise cannot explain it",
                zero.visibility, top.visibility
            )));
        }
        0.0
    } else {
        // Coarse logarithmic grid to bracket the root, then bisection.
        let f = |k: f64| model_v(top.data_rate_gbps, k).map(|v| v - top.visibility);
        let mut lo = 0.0;
        let mut hi = None;
        let mut k = 1.0;
        while k <= KAPPA_CEILING {
            if f(k)? < 0.0 {
                hi = Some(k);
                break;
            }
            lo = k;
            k *= 10.0;
        }
        let mut hi = hi.ok_or_else(|| {
            Error::Calibration(format!(
                "no noise scale up to {KAPPA_CEILING:e} cts/s/mW reaches visibility {:.4} at {} Gbps",
                top.visibility, top.data_rate_gbps
            ))
        })?;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    };

    let mut predictions = Vec::with_capacity(targets.len());
    for t in targets {
        let model = model_v(t.data_rate_gbps, kappa)?;
        let anchor = t.data_rate_gbps == 0.0 || t.data_rate_gbps == top.data_rate_gbps;
        if anchor && (model - t.visibility).abs() > ANCHOR_TOLERANCE {
            return Err(Error::Calibration(format!(
                "anchor at {} Gbps reproduced as {model:.4}, target {:.4}",
                t.data_rate_gbps, t.visibility
            )));
        }
        predictions.push(CalibrationPoint {
            data_rate_gbps: t.data_rate_gbps,
            target: t.visibility,
            model,
            anchor,
        });
    }
    Ok(Calibration {
        profile: unit_shape.scaled(kappa),
        intrinsic_visibility: v0,
        kappa_worst: kappa,
        predictions,
    })
}

/// Noise coincidence rate between the two arms with the source dark, for
/// classical light at `wavelength_nm` with the launch powers of `plan` at
/// `data_rate_gbps`. Transmit-port filters on the classical path are retuned
/// to the swept channel. Used to locate the worst-case wavelength.
pub fn noise_coincidence_rate(
    topology: &Topology,
    plan: &ClassicalPlan,
    data_rate_gbps: f64,
    wavelength_nm: f64,
    window_ps: f64,
) -> Result<f64> {
    let plan = ClassicalPlan {
        wavelength_nm,
        ..plan.clone()
    };
    // The classical muxes move with the transmitter.
    let channel = wavelength_to_channel(wavelength_nm)?;
    let mut topo = topology.clone();
    for el in &mut topo.classical_path {
        if let PathElement::Dwdm(f) = el {
            if f.port == DwdmPort::Transmit {
                f.center = channel;
            }
        }
    }
    let topo = plan.apply(&topo, data_rate_gbps)?;
    let a = topo.noise_flux(Arm::Alice)?;
    let b = topo.noise_flux(Arm::Bob)?;
    Ok(accidental_coincidence_rate(a, b, window_ps))
}
