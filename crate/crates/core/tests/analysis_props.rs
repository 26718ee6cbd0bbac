use coexsim::analysis::{coincidence_tally, coincidences, cross_correlate, CoincidenceHistogram};
use coexsim::photonics::{
    detect, poisson_process, rng_from_seed, Arrival, DetectorModel, TagStream, PS_PER_S,
};
use coexsim::raman::accidental_coincidence_rate;
use proptest::prelude::*;

fn brute_force(
    a: &[u64],
    b: &[u64],
    bin: u64,
    half_range: u64,
    delay: i64,
) -> CoincidenceHistogram {
    let mut bins = vec![0u64; (2 * half_range / bin) as usize];
    for &ta in a {
        for &tb in b {
            let d = tb as i64 - ta as i64 - delay + half_range as i64;
            if d >= 0 && d < 2 * half_range as i64 {
                bins[(d as u64 / bin) as usize] += 1;
            }
        }
    }
    CoincidenceHistogram {
        bin_width_ps: bin,
        half_range_ps: half_range,
        nominal_delay_ps: delay,
        bins,
    }
}

fn sorted_times(max_len: usize, span: u64) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0..span, 0..=max_len).prop_map(|mut v| {
        v.sort_unstable();
        v
    })
}

fn stream(times: &[u64]) -> TagStream {
    TagStream::from_times(0, 1 << 40, times).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn histogram_equals_brute_force(
        a in sorted_times(1000, 200_000),
        b in sorted_times(1000, 200_000),
        bin in prop::sample::select(vec![1u64, 7, 50, 100, 250]),
        bins_per_side in 1u64..40,
        delay in -3_000i64..3_000,
    ) {
        let half = bin * bins_per_side;
        let h = cross_correlate(&stream(&a), &stream(&b), bin, half, delay).unwrap();
        prop_assert_eq!(h, brute_force(&a, &b, bin, half, delay));
    }

    #[test]
    fn swapping_streams_mirrors_the_histogram(
        a in sorted_times(300, 50_000),
        b in sorted_times(300, 50_000),
        delay in -2_000i64..2_000,
    ) {
        // With bin 1 every offset has its own bin, so the mirror image is exact.
        let half = 1_000;
        let ab = cross_correlate(&stream(&a), &stream(&b), 1, half, delay).unwrap();
        let ba = cross_correlate(&stream(&b), &stream(&a), 1, half, -delay).unwrap();
        let n = ab.bins.len();
        // offset x in ab is -x in ba; bin i covers [-half + i, -half + i + 1).
        for i in 1..n {
            prop_assert_eq!(ab.bins[i], ba.bins[n - i]);
        }
    }

    #[test]
    fn total_is_invariant_under_bin_refinement(
        a in sorted_times(500, 100_000),
        b in sorted_times(500, 100_000),
        k in 1u64..6,
    ) {
        let half = 6_000;
        let coarse = cross_correlate(&stream(&a), &stream(&b), 6_000 / k, half, 0).unwrap();
        let fine = cross_correlate(&stream(&a), &stream(&b), 10, half, 0).unwrap();
        prop_assert_eq!(coarse.total(), fine.total());
    }

    #[test]
    fn dead_time_leaves_minimum_gap(
        times in sorted_times(2000, 5_000_000),
        dead_ns in 0.0f64..200.0,
    ) {
        let arrivals: Vec<Arrival> = times.iter().map(|&t| Arrival::photon(t as f64)).collect();
        let det = DetectorModel { dead_time_ns: dead_ns, ..DetectorModel::ideal() };
        let out = detect(&arrivals, &det, 5e-6, 0, 1).unwrap();
        let dead_ps = det.dead_time_ps();
        for w in out.tags().windows(2) {
            prop_assert!(w[1].time_ps - w[0].time_ps >= dead_ps);
        }
        if !times.is_empty() {
            prop_assert_eq!(out.tags()[0].time_ps, times[0]);
        }
    }

    #[test]
    fn coincidences_never_exceed_either_stream(
        a in sorted_times(400, 100_000),
        b in sorted_times(400, 100_000),
        w in 1u64..5_000,
    ) {
        let n = coincidences(&stream(&a), &stream(&b), w, 0).unwrap();
        prop_assert!(n as usize <= a.len().min(b.len()));
    }
}

fn poisson_stream(rate_hz: f64, duration_s: f64, seed: u64) -> TagStream {
    let mut rng = rng_from_seed(seed);
    let mut t = Vec::new();
    poisson_process(rate_hz, 0.0, duration_s * PS_PER_S, &mut rng, |_, x| {
        t.push(x as u64)
    });
    TagStream::from_times(0, (duration_s * PS_PER_S) as u64, &t).unwrap()
}

#[test]
fn accidental_rate_matches_independent_streams() {
    // (r1, r2, window ps, duration s)
    let cases = [
        (1e4, 1e6, 1000.0, 20.0),
        (1e5, 1e5, 1000.0, 10.0),
        (1e6, 1e6, 100.0, 2.0),
        (3e5, 1e6, 1000.0, 2.0),
        (1e6, 1e5, 100.0, 10.0),
    ];
    for (i, &(r1, r2, w, dur)) in cases.iter().enumerate() {
        let a = poisson_stream(r1, dur, 10 + i as u64);
        let b = poisson_stream(r2, dur, 100 + i as u64);
        // Brute force: every (a, b) pair with |dt| <= w/2.
        let hist = cross_correlate(&a, &b, (w / 2.0) as u64, (w / 2.0) as u64, 0).unwrap();
        let counted = hist.total() as f64;
        let expected = accidental_coincidence_rate(r1, r2, w) * dur;
        let z = (counted - expected) / expected.sqrt();
        assert!(
            z.abs() < 5.0,
            "case {i}: counted {counted}, expected {expected:.1}, z = {z:.2}"
        );
    }
}

#[test]
fn greedy_tally_close_to_accidental_formula_at_low_occupancy() {
    let a = poisson_stream(1e5, 10.0, 5);
    let b = poisson_stream(1e5, 10.0, 6);
    let t = coincidence_tally(&a, &b, 1000, 0).unwrap();
    let expected = accidental_coincidence_rate(1e5, 1e5, 1000.0) * 10.0;
    assert_eq!(t.twins, 0);
    assert!(((t.total as f64 - expected) / expected.sqrt()).abs() < 5.0);
}
