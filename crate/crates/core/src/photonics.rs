//! Photon events, the pair source and the single-photon detector model.
//!
//! Everything random here is driven by an explicit `u64` seed; the same
//! inputs and seed always give the same output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel_plan::{conjugate_channel, ItuChannel};
use crate::error::{Error, Result};

pub const PS_PER_S: f64 = 1e12;

/// Provenance bits carried by every tag. Serialized into the QTT1 flags field.
pub mod flags {
    /// Photon from a pair whose twin also reached the other receiver.
    pub const PAIRED: u16 = 0x0001;
    /// Photon from a pair whose twin was lost in transit.
    pub const ORPHAN: u16 = 0x0002;
    /// Scattered noise photon from a classical channel.
    pub const NOISE: u16 = 0x0004;
    pub const DARK: u16 = 0x0008;
    /// Photon took the long arm of an interferometer.
    pub const LONG_ARM: u16 = 0x0010;
}

/// Pair identifier used for tags with no twin.
pub const NO_PAIR: u32 = u32::MAX;

/// One detector click. `pair` is an in-memory tally aid (pair index modulo
/// 2^32) and is not part of the on-disk format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeTag {
    pub time_ps: u64,
    pub channel: u16,
    pub flags: u16,
    pub pair: u32,
}

impl TimeTag {
    pub fn new(time_ps: u64, channel: u16) -> Self {
        Self {
            time_ps,
            channel,
            flags: 0,
            pair: NO_PAIR,
        }
    }

    /// True when both tags are the two halves of one detected pair.
    pub fn is_twin_of(&self, other: &TimeTag) -> bool {
        self.flags & flags::PAIRED != 0
            && other.flags & flags::PAIRED != 0
            && self.pair == other.pair
            && self.pair != NO_PAIR
    }
}

/// Time-ordered clicks of one detector over `[0, duration)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TagStream {
    detector: u16,
    duration_ps: u64,
    tags: Vec<TimeTag>,
}

impl TagStream {
    /// Validates ordering and the time bound.
    pub fn new(detector: u16, duration_ps: u64, tags: Vec<TimeTag>) -> Result<Self> {
        if let Some(i) = tags.windows(2).position(|w| w[1].time_ps < w[0].time_ps) {
            return Err(Error::Contract(format!(
                "tags of detector {detector} not sorted at index {}",
                i + 1
            )));
        }
        if let Some(last) = tags.last() {
            if last.time_ps >= duration_ps {
                return Err(Error::Contract(format!(
                    "tag at {} ps outside stream duration {duration_ps} ps",
                    last.time_ps
                )));
            }
        }
        Ok(Self {
            detector,
            duration_ps,
            tags,
        })
    }

    /// Convenience for tests and tools: bare times on `detector`.
    /// Stream from tags the caller guarantees sorted and inside the run.
    pub(crate) fn from_sorted(detector: u16, duration_ps: u64, tags: Vec<TimeTag>) -> Self {
        debug_assert!(tags.windows(2).all(|w| w[0].time_ps <= w[1].time_ps));
        Self {
            detector,
            duration_ps,
            tags,
        }
    }

    pub fn from_times(detector: u16, duration_ps: u64, times: &[u64]) -> Result<Self> {
        Self::new(
            detector,
            duration_ps,
            times.iter().map(|&t| TimeTag::new(t, detector)).collect(),
        )
    }

    pub fn detector(&self) -> u16 {
        self.detector
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_S
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn singles_rate(&self) -> f64 {
        if self.duration_ps == 0 {
            return 0.0;
        }
        self.tags.len() as f64 / self.duration_s()
    }

    pub fn count_flag(&self, flag: u16) -> usize {
        self.tags.iter().filter(|t| t.flags & flag != 0).count()
    }
}

/// Interferometer timing class of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakClass {
    /// Both photons short or both long; indistinguishable, so they interfere.
    Central,
    /// Coincidence lands at `-ΔT`.
    SideEarly,
    /// Coincidence lands at `+ΔT`.
    SideLate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEvent {
    pub emission_ps: f64,
    /// Idler arrival minus signal arrival at the crystal.
    pub idler_offset_ps: f64,
    pub signal_channel: ItuChannel,
    pub idler_channel: ItuChannel,
    pub peak_class: Option<PeakClass>,
}

/// A photon reaching a detector, before detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time_ps: f64,
    pub flags: u16,
    pub pair: u32,
}

impl Arrival {
    pub fn photon(time_ps: f64) -> Self {
        Self {
            time_ps,
            flags: 0,
            pair: NO_PAIR,
        }
    }
}

pub const DEFAULT_CORRELATION_JITTER_PS: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceModel {
    /// Pair generation rate at the crystal.
    pub pair_rate_hz: f64,
    pub pump_channel: ItuChannel,
    pub signal_channel: ItuChannel,
    #[serde(default = "default_correlation_jitter")]
    pub correlation_jitter_ps: f64,
    /// Source-limited two-photon interference visibility.
    pub intrinsic_visibility: f64,
}

fn default_correlation_jitter() -> f64 {
    DEFAULT_CORRELATION_JITTER_PS
}

impl SourceModel {
    pub fn idler_channel(&self) -> Result<ItuChannel> {
        conjugate_channel(self.pump_channel, self.signal_channel)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate_hz > 0.0 && self.pair_rate_hz.is_finite()) {
            return Err(Error::Domain(format!(
                "pair rate must be > 0, got {}",
                self.pair_rate_hz
            )));
        }
        if !(0.0..=1.0).contains(&self.intrinsic_visibility) {
            return Err(Error::Domain(format!(
                "intrinsic visibility must lie in [0, 1], got {}",
                self.intrinsic_visibility
            )));
        }
        if !(self.correlation_jitter_ps >= 0.0 && self.correlation_jitter_ps.is_finite()) {
            return Err(Error::Domain(format!(
                "correlation jitter must be >= 0, got {}",
                self.correlation_jitter_ps
            )));
        }
        self.idler_channel().map(|_| ())
    }
}

/// Single-photon detector: efficiency, dark counts, Gaussian timing jitter
/// and non-paralyzable dead time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub jitter_sigma_ps: f64,
    pub dead_time_ns: f64,
}

impl DetectorModel {
    /// Unit efficiency, no noise, no jitter, no dead time.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            jitter_sigma_ps: 0.0,
            dead_time_ns: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::Domain(format!(
                "efficiency must lie in [0, 1], got {}",
                self.efficiency
            )));
        }
        for (name, v) in [
            ("dark rate", self.dark_rate_hz),
            ("jitter", self.jitter_sigma_ps),
            ("dead time", self.dead_time_ns),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn dead_time_ps(&self) -> u64 {
        (self.dead_time_ns * 1e3).round() as u64
    }
}

/// Mixes a run seed with a stream label into an independent sub-seed
/// (SplitMix64 finalizer over `seed ^ (label * golden)`).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Calls `emit` with the event times of a homogeneous Poisson process of
/// `rate_hz` on `[start_ps, end_ps)`, in increasing order.
pub fn poisson_process<R: Rng + ?Sized>(
    rate_hz: f64,
    start_ps: f64,
    end_ps: f64,
    rng: &mut R,
    mut emit: impl FnMut(&mut R, f64),
) {
    if rate_hz <= 0.0 || end_ps <= start_ps {
        return;
    }
    let mean_gap_ps = PS_PER_S / rate_hz;
    let mut t = start_ps;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap * mean_gap_ps;
        if t >= end_ps {
            break;
        }
        emit(rng, t);
    }
}

fn check_duration(duration_s: f64) -> Result<()> {
    if duration_s > 0.0 && duration_s.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "duration must be > 0 s, got {duration_s}"
        )))
    }
}

/// Poissonian pair emission over `[0, duration)`, each idler offset from its
/// signal by a Gaussian of width `correlation_jitter_ps`.
pub fn generate_pairs(source: &SourceModel, duration_s: f64, seed: u64) -> Result<Vec<PairEvent>> {
    check_duration(duration_s)?;
    source.validate()?;
    let idler = source.idler_channel()?;
    let mut rng = rng_from_seed(seed);
    let sigma = source.correlation_jitter_ps;
    let mut out = Vec::with_capacity((source.pair_rate_hz * duration_s * 1.01) as usize + 16);
    poisson_process(
        source.pair_rate_hz,
        0.0,
        duration_s * PS_PER_S,
        &mut rng,
        |rng, t| {
            let z: f64 = StandardNormal.sample(rng);
            out.push(PairEvent {
                emission_ps: t,
                idler_offset_ps: z * sigma,
                signal_channel: source.signal_channel,
                idler_channel: idler,
                peak_class: None,
            });
        },
    );
    Ok(out)
}

/// Keeps each event independently with probability `survival_probability`.
pub fn thin_by_loss<T>(mut events: Vec<T>, survival_probability: f64, seed: u64) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&survival_probability) {
        return Err(Error::Precondition(format!(
            "survival probability must lie in [0, 1], got {survival_probability}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    events.retain(|_| rng.random::<f64>() < survival_probability);
    Ok(events)
}

/// Runs photon arrivals through a detector: efficiency thinning, Gaussian
/// jitter, Poissonian dark counts, then non-paralyzable dead time (a click
/// closer than `dead_time` to the previous accepted click is discarded).
pub fn detect(
    arrivals: &[Arrival],
    det: &DetectorModel,
    duration_s: f64,
    channel: u16,
    seed: u64,
) -> Result<TagStream> {
    check_duration(duration_s)?;
    det.validate()?;
    if let Some(i) = arrivals
        .windows(2)
        .position(|w| w[1].time_ps < w[0].time_ps)
    {
        return Err(Error::Contract(format!(
            "arrivals not sorted at index {}",
            i + 1
        )));
    }
    let duration_ps = (duration_s * PS_PER_S).round() as u64;
    let end = duration_ps as f64;
    let mut rng = rng_from_seed(seed);
    let expected = arrivals.len() as f64 * det.efficiency + det.dark_rate_hz * duration_s;
    let mut raw: Vec<TimeTag> = Vec::with_capacity((expected * 1.02) as usize + 16);

    let sigma = det.jitter_sigma_ps;
    for a in arrivals {
        if det.efficiency < 1.0 && rng.random::<f64>() >= det.efficiency {
            continue;
        }
        let t = if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            a.time_ps + z * sigma
        } else {
            a.time_ps
        };
        let t = t.round();
        if t >= 0.0 && t < end {
            raw.push(TimeTag {
                time_ps: t as u64,
                channel,
                flags: a.flags,
                pair: a.pair,
            });
        }
    }
    poisson_process(det.dark_rate_hz, 0.0, end, &mut rng, |_, t| {
        raw.push(TimeTag {
            time_ps: t as u64,
            channel,
            flags: flags::DARK,
            pair: NO_PAIR,
        });
    });
    // Stable sort: the input is two nearly sorted runs, which this handles in
    // close to linear time.
    raw.sort_by_key(|t| t.time_ps);

    apply_dead_time(&mut raw, det.dead_time_ps());
    Ok(TagStream {
        detector: channel,
        duration_ps,
        tags: raw,
    })
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct FlagCounts {
    pub paired: usize,
    pub orphan: usize,
    pub noise: usize,
    pub dark: usize,
}

/// Non-paralyzable dead time over a sorted tag list, compacting in place and
/// counting the surviving tags by origin.
pub(crate) fn apply_dead_time(tags: &mut Vec<TimeTag>, dead_ps: u64) -> FlagCounts {
    let mut counts = FlagCounts::default();
    let mut kept = 0;
    let mut last: Option<u64> = None;
    for r in 0..tags.len() {
        let t = tags[r];
        if let Some(prev) = last {
            if t.time_ps - prev < dead_ps {
                continue;
            }
        }
        last = Some(t.time_ps);
        counts.paired += (t.flags & flags::PAIRED != 0) as usize;
        counts.orphan += (t.flags & flags::ORPHAN != 0) as usize;
        counts.noise += (t.flags & flags::NOISE != 0) as usize;
        counts.dark += (t.flags & flags::DARK != 0) as usize;
        tags[kept] = t;
        kept += 1;
    }
    tags.truncate(kept);
    counts
}
