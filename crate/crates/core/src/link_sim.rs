//! The coexistence link: entangled-pair source at the quantum centre, one
//! fiber path to each of Alice and Bob, classical transmitters sharing the
//! fiber, and one detector per party.
//!
//! Simulation uses the marking theorem: a Poisson pair stream in which each
//! photon independently survives with probability `x_a` and `x_b` splits into
//! three independent Poisson streams (both survive, only Alice's, only Bob's).
//! Only the first carries timing correlations, so the other two are drawn
//! directly at their thinned rates together with noise and dark counts.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel_plan::{db_to_fraction, wavelength_to_channel, DwdmFilter, ItuChannel};
use crate::error::{Error, Result};
use crate::franson::{sample_outcome, Analyzers, FransonOutcome, OutcomeTally};
use crate::photonics::{
    apply_dead_time, derive_seed, flags, poisson_process, rng_from_seed, DetectorModel,
    SourceModel, TagStream, TimeTag, NO_PAIR, PS_PER_S,
};
use crate::raman::{
    dbm_to_mw, mw_to_dbm, noise_singles_rate, required_receive_power, ClassicalLink, Direction,
    RamanProfile, WORST_CASE_WAVELENGTH_NM,
};

pub const DEFAULT_ATTENUATION_DB_PER_KM: f64 = 0.2;
pub const DEFAULT_GROUP_DELAY_NS_PER_KM: f64 = 4900.0;

const SEED_PAIRS: u64 = 1;
const SEED_BACKGROUND_ALICE: u64 = 2;
const SEED_BACKGROUND_BOB: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Alice,
    Bob,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Alice, Arm::Bob];

    /// Detector channel number used in tag streams.
    pub fn detector_id(self) -> u16 {
        match self {
            Arm::Alice => 0,
            Arm::Bob => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Alice => "alice",
            Arm::Bob => "bob",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSegment {
    pub length_km: f64,
    #[serde(default = "default_attenuation")]
    pub attenuation_db_per_km: f64,
    #[serde(default = "default_group_delay")]
    pub group_delay_ns_per_km: f64,
}

fn default_attenuation() -> f64 {
    DEFAULT_ATTENUATION_DB_PER_KM
}
fn default_group_delay() -> f64 {
    DEFAULT_GROUP_DELAY_NS_PER_KM
}

impl FiberSegment {
    pub fn new(length_km: f64) -> Self {
        Self {
            length_km,
            attenuation_db_per_km: DEFAULT_ATTENUATION_DB_PER_KM,
            group_delay_ns_per_km: DEFAULT_GROUP_DELAY_NS_PER_KM,
        }
    }

    pub fn loss_db(&self) -> f64 {
        self.length_km * self.attenuation_db_per_km
    }
}

/// Wavelength-flat loss: couplers, connectors, source collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attenuator {
    #[serde(default)]
    pub label: String,
    pub loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathElement {
    Fiber(FiberSegment),
    Dwdm(DwdmFilter),
    Attenuator(Attenuator),
}

impl PathElement {
    fn kind(&self) -> &'static str {
        match self {
            PathElement::Fiber(_) => "fiber",
            PathElement::Dwdm(_) => "dwdm",
            PathElement::Attenuator(_) => "attenuator",
        }
    }

    pub fn transmittance(&self, wavelength_nm: f64) -> f64 {
        match self {
            PathElement::Fiber(f) => db_to_fraction(f.loss_db()),
            PathElement::Dwdm(d) => d.transmittance(wavelength_nm),
            PathElement::Attenuator(a) => db_to_fraction(a.loss_db),
        }
    }

    pub fn delay_ps(&self) -> f64 {
        match self {
            PathElement::Fiber(f) => f.length_km * f.group_delay_ns_per_km * 1e3,
            _ => 0.0,
        }
    }

    fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            PathElement::Fiber(f) => {
                if !(f.length_km >= 0.0 && f.length_km.is_finite()) {
                    out.push(format!("length_km must be >= 0, got {}", f.length_km));
                }
                if !(f.attenuation_db_per_km >= 0.0 && f.attenuation_db_per_km.is_finite()) {
                    out.push(format!(
                        "attenuation_db_per_km must be >= 0, got {}",
                        f.attenuation_db_per_km
                    ));
                }
                if !(f.group_delay_ns_per_km >= 0.0 && f.group_delay_ns_per_km.is_finite()) {
                    out.push(format!(
                        "group_delay_ns_per_km must be >= 0, got {}",
                        f.group_delay_ns_per_km
                    ));
                }
            }
            PathElement::Dwdm(d) => {
                if let Err(e) = d.validate() {
                    out.push(e.to_string());
                }
            }
            PathElement::Attenuator(a) => {
                if !(a.loss_db >= 0.0 && a.loss_db.is_finite()) {
                    out.push(format!("loss_db must be >= 0, got {}", a.loss_db));
                }
            }
        }
        out
    }
}

/// Product of element transmittances at `wavelength_nm`.
pub fn path_transmittance(path: &[PathElement], wavelength_nm: f64) -> f64 {
    path.iter()
        .map(|e| e.transmittance(wavelength_nm))
        .product()
}

/// Total group delay of `path`.
pub fn path_delay_ps(path: &[PathElement]) -> f64 {
    path.iter().map(PathElement::delay_ps).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detectors {
    pub alice: DetectorModel,
    pub bob: DetectorModel,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub source: SourceModel,
    /// False when the source is unplugged at the quantum centre; the arms
    /// then see only noise and dark counts.
    #[serde(default = "yes")]
    pub source_connected: bool,
    pub alice_path: Vec<PathElement>,
    pub bob_path: Vec<PathElement>,
    /// End-to-end path of the classical signal, for received-power
    /// bookkeeping.
    #[serde(default)]
    pub classical_path: Vec<PathElement>,
    #[serde(default)]
    pub classical_links: Vec<ClassicalLink>,
    pub detectors: Detectors,
    #[serde(default)]
    pub raman: Option<RamanProfile>,
    /// Franson interferometers in front of the detectors, if installed.
    #[serde(default)]
    pub analyzers: Option<Analyzers>,
}

impl Topology {
    pub fn path(&self, arm: Arm) -> &[PathElement] {
        match arm {
            Arm::Alice => &self.alice_path,
            Arm::Bob => &self.bob_path,
        }
    }

    pub fn detector(&self, arm: Arm) -> &DetectorModel {
        match arm {
            Arm::Alice => &self.detectors.alice,
            Arm::Bob => &self.detectors.bob,
        }
    }

    /// Quantum channel routed to `arm`: signal to Alice, idler to Bob.
    pub fn channel(&self, arm: Arm) -> Result<ItuChannel> {
        match arm {
            Arm::Alice => Ok(self.source.signal_channel),
            Arm::Bob => self.source.idler_channel(),
        }
    }

    pub fn arm_transmittance(&self, arm: Arm) -> Result<f64> {
        Ok(path_transmittance(
            self.path(arm),
            self.channel(arm)?.wavelength_nm(),
        ))
    }

    /// Monitored-port throughput of the arm's interferometer, 1 without one.
    pub fn analyzer_throughput(&self, arm: Arm) -> f64 {
        self.analyzers
            .as_ref()
            .map_or(1.0, |a| a.get(arm).throughput())
    }

    /// Probability that a source photon bound for `arm` produces a click,
    /// ignoring dead time.
    pub fn detection_probability(&self, arm: Arm) -> Result<f64> {
        Ok(self.arm_transmittance(arm)?
            * self.analyzer_throughput(arm)
            * self.detector(arm).efficiency)
    }

    /// Noise photon flux at the arm's receiver input, summed over all
    /// classical links.
    pub fn noise_flux(&self, arm: Arm) -> Result<f64> {
        if self.classical_links.is_empty() {
            return Ok(0.0);
        }
        let profile = self.raman.as_ref().ok_or_else(|| {
            Error::Precondition(
                "classical links present but no Raman profile; calibrate first".into(),
            )
        })?;
        let ch = self.channel(arm)?;
        self.classical_links
            .iter()
            .map(|l| noise_singles_rate(profile, l, ch))
            .sum()
    }

    pub fn classical_received_dbm(&self, link: &ClassicalLink) -> f64 {
        mw_to_dbm(link.launch_power_mw)
            + 10.0 * path_transmittance(&self.classical_path, link.wavelength_nm).log10()
    }

    /// Expected `t_b - t_a` for twin photons.
    pub fn nominal_delay_ps(&self) -> i64 {
        (path_delay_ps(&self.bob_path) - path_delay_ps(&self.alice_path)).round() as i64
    }

    /// Every problem with the topology as (JSON pointer, message).
    pub fn issues(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Err(e) = self.source.validate() {
            out.push(("/source".to_string(), e.to_string()));
        }
        for arm in Arm::BOTH {
            let key = format!("{}_path", arm.name());
            for (i, el) in self.path(arm).iter().enumerate() {
                for msg in el.issues() {
                    out.push((format!("/{key}/{i}/{}", el.kind()), msg));
                }
            }
            if let Ok(ch) = self.channel(arm) {
                let t = path_transmittance(self.path(arm), ch.wavelength_nm());
                if !(t > 0.0 && t.is_finite()) {
                    out.push((
                        format!("/{key}"),
                        format!("total transmittance at {ch} must be > 0, got {t}"),
                    ));
                }
            }
            if let Err(e) = self.detector(arm).validate() {
                out.push((format!("/detectors/{}", arm.name()), e.to_string()));
            }
        }
        for (i, el) in self.classical_path.iter().enumerate() {
            for msg in el.issues() {
                out.push((format!("/classical_path/{i}/{}", el.kind()), msg));
            }
        }
        for (i, link) in self.classical_links.iter().enumerate() {
            let ptr = format!("/classical_links/{i}");
            if let Err(e) = link.validate() {
                out.push((ptr.clone(), e.to_string()));
                continue;
            }
            match &self.raman {
                None => out.push((
                    ptr,
                    "classical link present but topology has no Raman profile".into(),
                )),
                Some(profile) => {
                    for arm in Arm::BOTH {
                        if let Ok(ch) = self.channel(arm) {
                            if let Err(e) = profile.kappa(link.wavelength_nm, ch) {
                                out.push((ptr.clone(), e.to_string()));
                            }
                        }
                    }
                }
            }
        }
        if let Some(an) = &self.analyzers {
            for arm in Arm::BOTH {
                if let Err(e) = an.get(arm).validate() {
                    out.push((format!("/analyzers/{}", arm.name()), e.to_string()));
                }
            }
            if an.alice.delay_ps != an.bob.delay_ps {
                out.push((
                    "/analyzers".into(),
                    "Alice and Bob interferometers must share one delay".into(),
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Topology(
                issues
                    .into_iter()
                    .map(|(p, m)| format!("{p}: {m}"))
                    .collect(),
            ))
        }
    }
}

/// How classical traffic is laid onto a topology for a given data rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalPlan {
    #[serde(default = "default_classical_wavelength")]
    pub wavelength_nm: f64,
    /// One transmitter in each direction when true, Alice to Bob only otherwise.
    #[serde(default = "yes")]
    pub bidirectional: bool,
    /// Fixed received power, overriding the receiver-sensitivity rule.
    #[serde(default)]
    pub received_power_dbm: Option<f64>,
}

fn default_classical_wavelength() -> f64 {
    WORST_CASE_WAVELENGTH_NM
}

impl Default for ClassicalPlan {
    fn default() -> Self {
        Self {
            wavelength_nm: WORST_CASE_WAVELENGTH_NM,
            bidirectional: true,
            received_power_dbm: None,
        }
    }
}

impl ClassicalPlan {
    pub fn validate(&self) -> Result<()> {
        wavelength_to_channel(self.wavelength_nm)?;
        if let Some(p) = self.received_power_dbm {
            if !p.is_finite() {
                return Err(Error::Domain(format!(
                    "received power must be finite, got {p}"
                )));
            }
        }
        Ok(())
    }

    /// Transmitters needed to carry `data_rate_gbps`, each launched so the
    /// far end receives exactly the required power.
    pub fn links(&self, topology: &Topology, data_rate_gbps: f64) -> Result<Vec<ClassicalLink>> {
        self.validate()?;
        let received = match self.received_power_dbm {
            Some(p) => p,
            None if data_rate_gbps == 0.0 => return Ok(Vec::new()),
            None => required_receive_power(data_rate_gbps)?,
        };
        let loss_db =
            -10.0 * path_transmittance(&topology.classical_path, self.wavelength_nm).log10();
        let launch_power_mw = dbm_to_mw(received + loss_db);
        let mut dirs = vec![Direction::AliceToBob];
        if self.bidirectional {
            dirs.push(Direction::BobToAlice);
        }
        Ok(dirs
            .into_iter()
            .map(|direction| ClassicalLink {
                wavelength_nm: self.wavelength_nm,
                launch_power_mw,
                data_rate_gbps,
                direction,
            })
            .collect())
    }

    /// Copy of `topology` carrying this plan's traffic at `data_rate_gbps`.
    pub fn apply(&self, topology: &Topology, data_rate_gbps: f64) -> Result<Topology> {
        let mut t = topology.clone();
        t.classical_links = self.links(topology, data_rate_gbps)?;
        Ok(t)
    }
}

/// Analytic rates for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmRates {
    pub detection_probability: f64,
    /// Noise photon flux at the receiver input.
    pub noise_flux_hz: f64,
    /// Click rate before dead time.
    pub incident_rate_hz: f64,
    /// Fraction of time the detector is live.
    pub live_fraction: f64,
    /// Recorded singles after dead time.
    pub singles_hz: f64,
}

/// Closed-form rate model of a topology, used for calibration and as a
/// reference for the Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    pub alice: ArmRates,
    pub bob: ArmRates,
    pub window_ps: u64,
    /// Fraction of twin pairs whose timing difference falls in the window.
    pub capture: f64,
    /// Pairs with both photons clicking, before interference and dead time.
    pub pair_clicks_hz: f64,
    /// Twin coincidences in the window at the configured phases.
    pub true_coincidences: f64,
    /// Same, averaged over the interferometer phase.
    pub mean_true_coincidences: f64,
    pub accidental_coincidences: f64,
    /// Phase-averaged dilution-law visibility; `None` without analyzers.
    pub visibility: Option<f64>,
}

impl ExpectedRates {
    pub fn arm(&self, arm: Arm) -> &ArmRates {
        match arm {
            Arm::Alice => &self.alice,
            Arm::Bob => &self.bob,
        }
    }
}

/// Gaussian timing spread of twin tags in ps (correlation jitter, both
/// detector jitters, and integer rounding of each timestamp).
pub fn twin_sigma_ps(topology: &Topology) -> f64 {
    let j = topology.source.correlation_jitter_ps;
    let a = topology.detectors.alice.jitter_sigma_ps;
    let b = topology.detectors.bob.jitter_sigma_ps;
    (j * j + a * a + b * b + 2.0 / 12.0).sqrt()
}

pub fn expected_rates(topology: &Topology, window_ps: u64) -> Result<ExpectedRates> {
    topology.validate()?;
    let mu = if topology.source_connected {
        topology.source.pair_rate_hz
    } else {
        0.0
    };
    let xa = topology.detection_probability(Arm::Alice)?;
    let xb = topology.detection_probability(Arm::Bob)?;
    let pair_clicks = mu * xa * xb;

    // Fraction of pair clicks that leave a photon in one given arm, and the
    // fraction that land in the central coincidence peak.
    let (per_arm, central, central_mean, v0) = match &topology.analyzers {
        None => (1.0, 1.0, 1.0, None),
        Some(an) => {
            let v0 = topology.source.intrinsic_visibility;
            let q = an.central_detection_probability(v0);
            (0.5 + 0.5 * q + 0.25 * (1.0 - q), 0.5 * q, 0.25, Some(v0))
        }
    };

    let arm_rates = |arm: Arm, x_self: f64, x_other: f64| -> Result<ArmRates> {
        let det = topology.detector(arm);
        let noise = topology.noise_flux(arm)?;
        let incident = mu * x_self * (1.0 - x_other)
            + pair_clicks * per_arm
            + noise * topology.analyzer_throughput(arm) * det.efficiency
            + det.dark_rate_hz;
        let d = det.dead_time_ns * 1e-9;
        let live = 1.0 / (1.0 + incident * d);
        Ok(ArmRates {
            detection_probability: x_self,
            noise_flux_hz: noise,
            incident_rate_hz: incident,
            live_fraction: live,
            singles_hz: incident * live,
        })
    };
    let alice = arm_rates(Arm::Alice, xa, xb)?;
    let bob = arm_rates(Arm::Bob, xb, xa)?;

    let sigma = twin_sigma_ps(topology);
    let capture = if sigma > 0.0 {
        libm::erf(window_ps as f64 / 2.0 / (SQRT_2 * sigma))
    } else {
        1.0
    };
    let live = alice.live_fraction * bob.live_fraction;
    let true_c = pair_clicks * central * capture * live;
    let mean_c = pair_clicks * central_mean * capture * live;
    let acc = alice.singles_hz * bob.singles_hz * window_ps as f64 * 1e-12;
    let visibility = v0.map(|v0| {
        if mean_c + acc > 0.0 {
            v0 * mean_c / (mean_c + acc)
        } else {
            0.0
        }
    });
    Ok(ExpectedRates {
        alice,
        bob,
        window_ps,
        capture,
        pair_clicks_hz: pair_clicks,
        true_coincidences: true_c,
        mean_true_coincidences: mean_c,
        accidental_coincidences: acc,
        visibility,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmBookkeeping {
    pub channel: ItuChannel,
    pub detector: u16,
    pub transmittance: f64,
    pub noise_flux_hz: f64,
    pub tags: usize,
    pub singles_hz: f64,
    pub paired_tags: usize,
    pub orphan_tags: usize,
    pub noise_tags: usize,
    pub dark_tags: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalBookkeeping {
    pub wavelength_nm: f64,
    pub direction: Direction,
    pub data_rate_gbps: f64,
    pub launch_power_dbm: f64,
    pub received_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bookkeeping {
    pub duration_s: f64,
    pub seed: u64,
    pub nominal_delay_ps: i64,
    pub alice: ArmBookkeeping,
    pub bob: ArmBookkeeping,
    pub classical: Vec<ClassicalBookkeeping>,
    /// Pair events with both photons clicking, emitted in the run window.
    pub pair_clicks: u64,
    pub outcomes: Option<OutcomeTally>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub alice: TagStream,
    pub bob: TagStream,
    pub bookkeeping: Bookkeeping,
}

impl SimOutput {
    pub fn stream(&self, arm: Arm) -> &TagStream {
        match arm {
            Arm::Alice => &self.alice,
            Arm::Bob => &self.bob,
        }
    }
}

fn jitter<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        z * sigma
    } else {
        0.0
    }
}

/// Runs the link for `duration_s` and returns one tag stream per arm.
///
/// Photons in the pair stream carry the `PAIRED` flag and a shared pair id.
/// Single-arm survivors of a pair, noise photons and dark counts are drawn as
/// one Poisson stream per arm; Gaussian jitter and random interferometer
/// delays leave such a stream Poisson and are not applied to it.
pub fn simulate(topology: &Topology, duration_s: f64, seed: u64) -> Result<SimOutput> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Precondition(format!(
            "duration must be > 0 s, got {duration_s}"
        )));
    }
    topology.validate()?;
    let duration_ps = (duration_s * PS_PER_S).round() as u64;
    let end = duration_ps as f64;

    let mu = if topology.source_connected {
        topology.source.pair_rate_hz
    } else {
        0.0
    };
    let xa = topology.detection_probability(Arm::Alice)?;
    let xb = topology.detection_probability(Arm::Bob)?;
    let delay_a = path_delay_ps(&topology.alice_path);
    let delay_b = path_delay_ps(&topology.bob_path);
    let v0 = topology.source.intrinsic_visibility;
    let sigma_c = topology.source.correlation_jitter_ps;
    let (ja, jb) = (
        topology.detectors.alice.jitter_sigma_ps,
        topology.detectors.bob.jitter_sigma_ps,
    );

    // Pairs emitted before t = 0 can still arrive inside the run; start early
    // enough that the arrival stream is stationary from the first picosecond.
    let dt = topology
        .analyzers
        .as_ref()
        .map_or(0.0, |a| a.alice.delay_ps);
    let spread = 10.0 * (sigma_c + ja + jb) + 1000.0;
    let start = -(delay_a.max(delay_b) + dt + spread);

    let expected_pairs = mu * xa * xb * (end - start) / PS_PER_S;
    let mut pa: Vec<TimeTag> = Vec::with_capacity((expected_pairs * 1.05) as usize + 16);
    let mut pb: Vec<TimeTag> = Vec::with_capacity((expected_pairs * 1.05) as usize + 16);
    let mut tally = topology.analyzers.as_ref().map(|_| OutcomeTally::default());
    let mut pair_clicks = 0u64;
    let mut pair_id: u32 = 0;
    let mut rng = rng_from_seed(derive_seed(seed, SEED_PAIRS));
    let push = |v: &mut Vec<TimeTag>, t: f64, channel: u16, flags: u16, pair: u32| {
        let t = t.round();
        if t >= 0.0 && t < end {
            v.push(TimeTag {
                time_ps: t as u64,
                channel,
                flags,
                pair,
            });
        }
    };
    poisson_process(mu * xa * xb, start, end, &mut rng, |rng, t| {
        if t >= 0.0 {
            pair_clicks += 1;
        }
        let id = pair_id;
        pair_id = pair_id.wrapping_add(1);
        if pair_id == NO_PAIR {
            pair_id = 0;
        }
        let ta = t + delay_a;
        let tb = t + delay_b + jitter(rng, sigma_c);
        let (extra_a, extra_b) = match &topology.analyzers {
            None => (Some(0.0), Some(0.0)),
            Some(an) => {
                let outcome = sample_outcome(rng, &an.alice, &an.bob, v0);
                if t >= 0.0 {
                    if let Some(tally) = tally.as_mut() {
                        tally.record(&outcome);
                    }
                }
                outcome.extra_delays(dt)
            }
        };
        let paired = extra_a.is_some() && extra_b.is_some();
        let (fl, pid) = if paired {
            (flags::PAIRED, id)
        } else {
            (flags::ORPHAN, NO_PAIR)
        };
        let long = |e: f64| if e > 0.0 { flags::LONG_ARM } else { 0 };
        if let Some(e) = extra_a {
            let time = ta + e + jitter(rng, ja);
            push(&mut pa, time, Arm::Alice.detector_id(), fl | long(e), pid);
        }
        if let Some(e) = extra_b {
            let time = tb + e + jitter(rng, jb);
            push(&mut pb, time, Arm::Bob.detector_id(), fl | long(e), pid);
        }
    });
    pa.sort_by_key(|t| t.time_ps);
    pb.sort_by_key(|t| t.time_ps);

    let build = |arm: Arm, paired: Vec<TimeTag>, x_self: f64, x_other: f64, label: u64| {
        let det = topology.detector(arm);
        let noise = topology.noise_flux(arm)?;
        let r_orphan = mu * x_self * (1.0 - x_other);
        let r_noise = noise * topology.analyzer_throughput(arm) * det.efficiency;
        let r_dark = det.dark_rate_hz;
        let total = r_orphan + r_noise + r_dark;
        // Category thresholds on a uniform u32.
        let scale = u32::MAX as f64 / total.max(f64::MIN_POSITIVE);
        let cut_orphan = (r_orphan * scale) as u32;
        let cut_noise = ((r_orphan + r_noise) * scale) as u32;
        let id = arm.detector_id();
        let mut rng = rng_from_seed(derive_seed(seed, label));
        let mut tags = Vec::with_capacity((total * duration_s * 1.01) as usize + paired.len() + 64);
        // The paired tags are already sorted; interleave them while the
        // background is generated.
        let mut next = paired.into_iter().peekable();
        poisson_process(total, 0.0, end, &mut rng, |rng, t| {
            let t = t as u64;
            while let Some(p) = next.next_if(|p| p.time_ps <= t) {
                tags.push(p);
            }
            let u: u32 = rng.random();
            let fl = if u < cut_orphan {
                flags::ORPHAN
            } else if u < cut_noise {
                flags::NOISE
            } else {
                flags::DARK
            };
            tags.push(TimeTag {
                time_ps: t,
                channel: id,
                flags: fl,
                pair: NO_PAIR,
            });
        });
        tags.extend(next);
        let counts = apply_dead_time(&mut tags, det.dead_time_ps());
        let book = ArmBookkeeping {
            channel: topology.channel(arm)?,
            detector: id,
            transmittance: topology.arm_transmittance(arm)?,
            noise_flux_hz: noise,
            tags: tags.len(),
            singles_hz: tags.len() as f64 / duration_s,
            paired_tags: counts.paired,
            orphan_tags: counts.orphan,
            noise_tags: counts.noise,
            dark_tags: counts.dark,
        };
        Ok::<_, Error>((TagStream::from_sorted(id, duration_ps, tags), book))
    };
    let (alice, book_a) = build(Arm::Alice, pa, xa, xb, SEED_BACKGROUND_ALICE)?;
    let (bob, book_b) = build(Arm::Bob, pb, xb, xa, SEED_BACKGROUND_BOB)?;

    let classical = topology
        .classical_links
        .iter()
        .map(|l| ClassicalBookkeeping {
            wavelength_nm: l.wavelength_nm,
            direction: l.direction,
            data_rate_gbps: l.data_rate_gbps,
            launch_power_dbm: mw_to_dbm(l.launch_power_mw),
            received_power_dbm: topology.classical_received_dbm(l),
        })
        .collect();

    Ok(SimOutput {
        alice,
        bob,
        bookkeeping: Bookkeeping {
            duration_s,
            seed,
            nominal_delay_ps: topology.nominal_delay_ps(),
            alice: book_a,
            bob: book_b,
            classical,
            pair_clicks,
            outcomes: tally,
        },
    })
}

impl FransonOutcome {
    /// Extra delay of each photon, `None` for a photon lost to the
    /// unmonitored port.
    pub fn extra_delays(&self, delay_ps: f64) -> (Option<f64>, Option<f64>) {
        let d = |long: bool| if long { delay_ps } else { 0.0 };
        match *self {
            FransonOutcome::SideEarly => (Some(delay_ps), Some(0.0)),
            FransonOutcome::SideLate => (Some(0.0), Some(delay_ps)),
            FransonOutcome::CentralDetected { long } => (Some(d(long)), Some(d(long))),
            FransonOutcome::CentralLost {
                survivor: Arm::Alice,
                long,
            } => (Some(d(long)), None),
            FransonOutcome::CentralLost {
                survivor: Arm::Bob,
                long,
            } => (None, Some(d(long))),
        }
    }
}
