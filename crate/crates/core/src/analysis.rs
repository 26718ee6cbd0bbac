//! Coincidence analysis over time-tag streams: cross-correlation
//! histograms, windowed coincidence counting and CAR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photonics::{TagStream, TimeTag};

pub const DEFAULT_WINDOW_PS: u64 = 500;
pub const DEFAULT_BIN_PS: u64 = 50;

/// Histogram of `t_b - t_a - nominal_delay` over `[-half_range, +half_range)`.
/// Bin `i` covers `[-half_range + i*bin, -half_range + (i+1)*bin)`; when the
/// half range is a multiple of the bin width the bin holding zero is `[0, bin)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: u64,
    pub half_range_ps: u64,
    pub nominal_delay_ps: i64,
    pub bins: Vec<u64>,
}

impl CoincidenceHistogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn bin_center_ps(&self, i: usize) -> f64 {
        -(self.half_range_ps as f64) + (i as f64 + 0.5) * self.bin_width_ps as f64
    }

    /// Index of the bin holding offset `offset_ps`, if in range.
    pub fn bin_of(&self, offset_ps: i64) -> Option<usize> {
        let shifted = offset_ps + self.half_range_ps as i64;
        if shifted < 0 || shifted >= 2 * self.half_range_ps as i64 {
            return None;
        }
        Some((shifted as u64 / self.bin_width_ps) as usize)
    }

    /// Sum of counts over offsets `[lo_ps, hi_ps)`; both must be bin edges.
    fn sum_between(&self, lo_ps: i64, hi_ps: i64) -> u64 {
        let first = ((lo_ps + self.half_range_ps as i64) / self.bin_width_ps as i64) as usize;
        let last = ((hi_ps + self.half_range_ps as i64) / self.bin_width_ps as i64) as usize;
        self.bins[first..last].iter().sum()
    }

    /// Adds another histogram with identical binning (partial results of a
    /// time-partitioned job).
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.bin_width_ps != other.bin_width_ps
            || self.half_range_ps != other.half_range_ps
            || self.nominal_delay_ps != other.nominal_delay_ps
        {
            return Err(Error::Contract(
                "cannot merge histograms with different binning".into(),
            ));
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center_ps,counts\n");
        for (i, c) in self.bins.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.bin_center_ps(i), c));
        }
        out
    }
}

fn ensure_sorted(tags: &[TimeTag], name: &str) -> Result<()> {
    match tags.windows(2).position(|w| w[1].time_ps < w[0].time_ps) {
        Some(i) => Err(Error::Contract(format!(
            "stream {name} not sorted at index {}",
            i + 1
        ))),
        None => Ok(()),
    }
}

/// Cross-correlation histogram built with a two-pointer sweep in
/// `O(N + M + pairs)`.
pub fn cross_correlate(
    a: &TagStream,
    b: &TagStream,
    bin_width_ps: u64,
    half_range_ps: u64,
    nominal_delay_ps: i64,
) -> Result<CoincidenceHistogram> {
    cross_correlate_tags(
        a.tags(),
        b.tags(),
        bin_width_ps,
        half_range_ps,
        nominal_delay_ps,
    )
}

/// Slice form of [`cross_correlate`]; rejects unsorted input.
pub fn cross_correlate_tags(
    a: &[TimeTag],
    bt: &[TimeTag],
    bin_width_ps: u64,
    half_range_ps: u64,
    nominal_delay_ps: i64,
) -> Result<CoincidenceHistogram> {
    if bin_width_ps == 0 || half_range_ps == 0 {
        return Err(Error::Precondition(
            "bin width and range must be positive".into(),
        ));
    }
    if (2 * half_range_ps) % bin_width_ps != 0 {
        return Err(Error::Precondition(format!(
            "full range {} ps is not a multiple of the bin width {bin_width_ps} ps",
            2 * half_range_ps
        )));
    }
    ensure_sorted(a, "a")?;
    ensure_sorted(bt, "b")?;
    let mut hist = CoincidenceHistogram {
        bin_width_ps,
        half_range_ps,
        nominal_delay_ps,
        bins: vec![0; (2 * half_range_ps / bin_width_ps) as usize],
    };
    let range = half_range_ps as i64;
    let mut lo = 0usize;
    for ta in a {
        let center = ta.time_ps as i64 + nominal_delay_ps;
        while lo < bt.len() && (bt[lo].time_ps as i64) < center - range {
            lo += 1;
        }
        let mut j = lo;
        while j < bt.len() {
            let offset = bt[j].time_ps as i64 - center;
            if offset >= range {
                break;
            }
            hist.bins[((offset + range) as u64 / bin_width_ps) as usize] += 1;
            j += 1;
        }
    }
    Ok(hist)
}

/// Result of windowed coincidence counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoincidenceTally {
    pub total: u64,
    /// Matches where both tags are the two photons of one pair.
    pub twins: u64,
}

impl CoincidenceTally {
    pub fn accidental(&self) -> u64 {
        self.total - self.twins
    }
}

/// Counts a-tags that find a partner b-tag with
/// `|t_b - t_a - delay| <= window / 2`. Each b-tag is consumed by at most
/// one a-tag; every a-tag takes the earliest free partner.
pub fn coincidences(a: &TagStream, b: &TagStream, window_ps: u64, delay_ps: i64) -> Result<u64> {
    Ok(coincidence_tally(a, b, window_ps, delay_ps)?.total)
}

/// As [`coincidences`], additionally separating true pair matches.
pub fn coincidence_tally(
    a: &TagStream,
    b: &TagStream,
    window_ps: u64,
    delay_ps: i64,
) -> Result<CoincidenceTally> {
    coincidence_tally_tags(a.tags(), b.tags(), window_ps, delay_ps)
}

/// Slice form of [`coincidence_tally`]; rejects unsorted input.
pub fn coincidence_tally_tags(
    a: &[TimeTag],
    bt: &[TimeTag],
    window_ps: u64,
    delay_ps: i64,
) -> Result<CoincidenceTally> {
    ensure_sorted(a, "a")?;
    ensure_sorted(bt, "b")?;
    let w = window_ps as i64;
    let mut next = 0usize;
    let mut tally = CoincidenceTally::default();
    for ta in a {
        let center = ta.time_ps as i64 + delay_ps;
        // first free b with 2(t_b - center) >= -w
        while next < bt.len() && 2 * (bt[next].time_ps as i64 - center) < -w {
            next += 1;
        }
        if next < bt.len() && 2 * (bt[next].time_ps as i64 - center) <= w {
            tally.total += 1;
            if ta.is_twin_of(&bt[next]) {
                tally.twins += 1;
            }
            next += 1;
        }
    }
    Ok(tally)
}

/// Coincidence-to-accidental ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarEstimate {
    /// `None` when the off-peak mean is zero (reported as infinite).
    pub car: Option<f64>,
    pub car_sigma: Option<f64>,
    pub peak_counts: u64,
    pub accidental_mean: f64,
    pub accidental_windows: usize,
}

impl CarEstimate {
    pub fn is_infinite(&self) -> bool {
        self.car.is_none()
    }

    /// CAR with the infinite sentinel mapped to `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        self.car.unwrap_or(f64::INFINITY)
    }
}

/// Counts in `[-h, +h)` divided by the mean over every disjoint window of
/// width `2h` that fits in the histogram outside the peak.
pub fn car(hist: &CoincidenceHistogram, peak_halfwidth_ps: u64) -> Result<CarEstimate> {
    let h = peak_halfwidth_ps;
    let bin = hist.bin_width_ps;
    if h == 0 || (h + hist.half_range_ps) % bin != 0 || h > hist.half_range_ps {
        return Err(Error::Precondition(format!(
            "peak half-width {h} ps must fall on a {bin} ps bin edge within ±{} ps",
            hist.half_range_ps
        )));
    }
    if hist.total() == 0 {
        return Err(Error::UndefinedCar("histogram is empty".into()));
    }
    let (h, r) = (h as i64, hist.half_range_ps as i64);
    let peak = hist.sum_between(-h, h);
    let mut windows = Vec::new();
    // tile outward from the peak on both sides
    let mut lo = h;
    while lo + 2 * h <= r {
        windows.push(hist.sum_between(lo, lo + 2 * h));
        windows.push(hist.sum_between(-lo - 2 * h, -lo));
        lo += 2 * h;
    }
    if windows.is_empty() {
        return Err(Error::UndefinedCar(format!(
            "no off-peak window of width {} ps fits in ±{r} ps",
            2 * h
        )));
    }
    let acc_total: u64 = windows.iter().sum();
    let k = windows.len() as f64;
    let acc_mean = acc_total as f64 / k;
    let (car, car_sigma) = if acc_total == 0 {
        (None, None)
    } else {
        let value = peak as f64 / acc_mean;
        let rel = (1.0 / (peak.max(1)) as f64 + 1.0 / acc_total as f64).sqrt();
        (Some(value), Some(value * rel))
    };
    Ok(CarEstimate {
        car,
        car_sigma,
        peak_counts: peak,
        accidental_mean: acc_mean,
        accidental_windows: windows.len(),
    })
}

pub fn singles_rate(stream: &TagStream) -> f64 {
    stream.singles_rate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photonics::{poisson_process, rng_from_seed, PS_PER_S};

    fn stream(times: &[u64]) -> TagStream {
        TagStream::from_times(0, 1 << 50, times).unwrap()
    }

    fn poisson(rate: f64, dur_s: f64, seed: u64) -> TagStream {
        let mut rng = rng_from_seed(seed);
        let mut t = Vec::new();
        poisson_process(rate, 0.0, dur_s * PS_PER_S, &mut rng, |_, x| {
            t.push(x as u64)
        });
        TagStream::from_times(0, (dur_s * PS_PER_S) as u64, &t).unwrap()
    }

    #[test]
    fn identical_streams_peak_at_zero() {
        let s = stream(&[100, 5_000, 9_000, 20_000]);
        let h = cross_correlate(&s, &s, 100, 1_000, 0).unwrap();
        let zero = h.bin_of(0).unwrap();
        assert_eq!(h.bins[zero], 4);
        assert_eq!(h.total(), 4);
        assert_eq!(h.bin_center_ps(zero), 50.0);
    }

    #[test]
    fn shifted_stream_peaks_at_shift() {
        let a = stream(&[10_000, 50_000, 90_000]);
        let b = stream(&[10_500, 50_500, 90_500]);
        let h = cross_correlate(&a, &b, 100, 2_000, 0).unwrap();
        assert_eq!(h.bins[h.bin_of(500).unwrap()], 3);
        assert_eq!(h.total(), 3);
        // compensating the delay moves it back to zero
        let h = cross_correlate(&a, &b, 100, 2_000, 500).unwrap();
        assert_eq!(h.bins[h.bin_of(0).unwrap()], 3);
    }

    #[test]
    fn bad_binning_rejected() {
        let s = stream(&[1]);
        assert!(cross_correlate(&s, &s, 300, 1_000, 0).is_err());
        assert!(cross_correlate(&s, &s, 0, 1_000, 0).is_err());
    }

    #[test]
    fn coincidences_basic() {
        let a = stream(&[1_000, 2_000, 3_000]);
        let far = stream(&[1_000_000, 2_000_000]);
        assert_eq!(coincidences(&a, &far, 500, 0).unwrap(), 0);
        let b = stream(&[1_010, 1_990, 3_200]);
        assert_eq!(coincidences(&a, &b, 500, 0).unwrap(), 3);
        assert_eq!(coincidences(&a, &b, 100, 0).unwrap(), 2);
    }

    #[test]
    fn one_b_tag_serves_one_a_tag() {
        let a = stream(&[1_000, 1_100]);
        let b = stream(&[1_050]);
        assert_eq!(coincidences(&a, &b, 500, 0).unwrap(), 1);
        let b = stream(&[1_050, 1_060]);
        assert_eq!(coincidences(&a, &b, 500, 0).unwrap(), 2);
    }

    #[test]
    fn window_edges_inclusive() {
        let a = stream(&[10_000]);
        assert_eq!(coincidences(&a, &stream(&[10_250]), 500, 0).unwrap(), 1);
        assert_eq!(coincidences(&a, &stream(&[9_750]), 500, 0).unwrap(), 1);
        assert_eq!(coincidences(&a, &stream(&[10_251]), 500, 0).unwrap(), 0);
    }

    #[test]
    fn unsorted_input_is_contract_violation() {
        let sorted = [TimeTag::new(1, 0), TimeTag::new(2, 0)];
        let unsorted = [TimeTag::new(5, 1), TimeTag::new(1, 1)];
        assert!(matches!(
            cross_correlate_tags(&sorted, &unsorted, 1, 1, 0),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            coincidence_tally_tags(&unsorted, &sorted, 1, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn independent_streams_accidentals() {
        let a = poisson(1e5, 10.0, 1);
        let b = poisson(1e5, 10.0, 2);
        let n = coincidences(&a, &b, 1_000, 0).unwrap() as f64;
        let expected = 1e5 * 1e5 * 1e-9 * 10.0;
        assert!((n - expected).abs() < 5.0 * expected.sqrt(), "{n}");
    }

    #[test]
    fn car_flat_and_delta() {
        let flat = CoincidenceHistogram {
            bin_width_ps: 100,
            half_range_ps: 1_000,
            nominal_delay_ps: 0,
            bins: vec![10; 20],
        };
        let est = car(&flat, 100).unwrap();
        assert!((est.value() - 1.0).abs() < 1e-12);
        assert_eq!(est.accidental_windows, 8);

        let mut delta = CoincidenceHistogram {
            bins: vec![0; 20],
            ..flat.clone()
        };
        delta.bins[10] = 50;
        assert!(car(&delta, 100).unwrap().is_infinite());

        let empty = CoincidenceHistogram {
            bins: vec![0; 20],
            ..flat
        };
        assert!(matches!(car(&empty, 100), Err(Error::UndefinedCar(_))));
    }

    #[test]
    fn car_needs_room_for_off_peak_windows() {
        let h = CoincidenceHistogram {
            bin_width_ps: 100,
            half_range_ps: 200,
            nominal_delay_ps: 0,
            bins: vec![1; 4],
        };
        assert!(matches!(car(&h, 200), Err(Error::UndefinedCar(_))));
        assert!(car(&h, 150).is_err());
    }

    #[test]
    fn histograms_merge() {
        let a = stream(&[0, 10_000]);
        let mut h1 = cross_correlate(&a, &a, 100, 500, 0).unwrap();
        let h2 = h1.clone();
        h1.merge(&h2).unwrap();
        assert_eq!(h1.total(), 4);
        let other = cross_correlate(&a, &a, 50, 500, 0).unwrap();
        assert!(h1.merge(&other).is_err());
    }
}
