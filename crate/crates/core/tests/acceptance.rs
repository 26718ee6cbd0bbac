//! Acceptance checks. Each criterion prints one PASS/FAIL line; the test
//! fails at the end if any criterion failed.

use std::time::Instant;

use coexsim::analysis::{car, cross_correlate, CoincidenceHistogram};
use coexsim::franson::{
    central_detection_probability, fit_visibility, franson_scan, FransonScan, BETA_SETTINGS,
};
use coexsim::link_sim::{simulate, Arm, ClassicalPlan};
use coexsim::photonics::{poisson_process, rng_from_seed, TagStream, PS_PER_S};
use coexsim::qkd::{qber_from_visibility, secret_key_rate, REFERENCE_TABLE};
use coexsim::qtt1::Qtt1File;
use coexsim::raman::{
    accidental_coincidence_rate, noise_coincidence_rate, WORST_CASE_WAVELENGTH_NM,
};
use coexsim::scenario::{
    calibrate_topology, default_alpha_offsets, preset, reference_targets, Scenario,
};
use coexsim::session::{run_table1, Table1, TABLE1_RATES};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn record(&mut self, n: u32, name: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {name:<32} {verdict}  {detail}");
        if !pass {
            self.failed.push(n);
        }
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn skr_arithmetic(r: &mut Report) {
    let mut worst: f64 = 0.0;
    for row in &REFERENCE_TABLE {
        let skr = secret_key_rate(row.raw_key_rate_bps, row.qber, 1.2).unwrap();
        worst = worst.max((skr / row.secret_key_rate_bps - 1.0).abs());
    }
    r.record(
        1,
        "SKR arithmetic",
        worst <= 0.03,
        format!("worst row error {:.2}%", 100.0 * worst),
    );
}

fn qber_identity(r: &mut Report) {
    let mut worst: f64 = 0.0;
    for row in &REFERENCE_TABLE {
        let q = qber_from_visibility(row.visibilities[0], row.visibilities[1]).unwrap();
        worst = worst.max((q - row.qber).abs());
    }
    r.record(
        2,
        "QBER-visibility identity",
        worst <= 0.0005,
        format!("worst deviation {:.3} pp", 100.0 * worst),
    );
}

/// Calibrates on the 0 and 20 Gbps rows only, then runs full sessions.
fn table1_reproduction(r: &mut Report) -> Table1 {
    let start = Instant::now();
    let mut s = preset("paper_0gbps").unwrap();
    let anchors: Vec<_> = reference_targets()
        .into_iter()
        .filter(|t| t.data_rate_gbps == 0.0 || t.data_rate_gbps == 20.0)
        .collect();
    let mut template = s.topology.clone();
    template.classical_links.clear();
    template.raman = None;
    let (calibrated, _) = calibrate_topology(
        &template,
        &s.traffic,
        &s.franson,
        s.analysis.window_ps,
        &anchors,
    )
    .unwrap();
    s.topology = calibrated;
    assert!(s.franson.repeats >= 3);
    let table = run_table1(&s, &TABLE1_RATES, 1.2, s.seed).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut ok = elapsed <= 60.0;
    let mut detail = Vec::new();
    for row in &table.rows {
        let p = row.reference.unwrap();
        let m = &row.mean;
        let rate = row.data_rate_gbps;
        if rate == 5.0 || rate == 10.0 {
            for k in 0..2 {
                ok &= within(m.visibility_pair[k], p.visibilities[k], 0.02);
            }
        }
        ok &= within(m.qber, p.qber, 0.005);
        let skr_err = m.secret_key_rate_bps / p.secret_key_rate_bps - 1.0;
        ok &= skr_err.abs() <= 0.15;
        println!(
            "    {rate:>4} Gbps  V {:.4}/{:.4} (ref {:.4}/{:.4})  QBER {:.2}% ({:.2}%)  raw {:.0} ({:.0})  SKR {:.0} ({:.0}, {:+.1}%)",
            m.visibility_pair[0],
            m.visibility_pair[1],
            p.visibilities[0],
            p.visibilities[1],
            100.0 * m.qber,
            100.0 * p.qber,
            m.raw_key_rate_bps,
            p.raw_key_rate_bps,
            m.secret_key_rate_bps,
            p.secret_key_rate_bps,
            100.0 * skr_err
        );
        detail.push(format!("{rate}:{:+.1}%", 100.0 * skr_err));
    }
    r.record(
        3,
        "key-rate table reproduction",
        ok,
        format!("SKR {} in {elapsed:.1} s", detail.join(" ")),
    );
    table
}

fn singles_anchor(r: &mut Report) {
    let s = preset("paper_0gbps").unwrap();
    let out = simulate(&s.topology, 0.2, s.seed).unwrap();
    let (a, b) = (out.alice.singles_rate(), out.bob.singles_rate());
    let ok = within(a / 2.2e6, 1.0, 0.05) && within(b / 2.2e6, 1.0, 0.05);
    r.record(
        4,
        "singles anchor",
        ok,
        format!("{:.3} / {:.3} MHz", a / 1e6, b / 1e6),
    );
}

fn poisson_stream(rate: f64, dur_s: f64, seed: u64) -> TagStream {
    let mut rng = rng_from_seed(seed);
    let mut t = Vec::new();
    poisson_process(rate, 0.0, dur_s * PS_PER_S, &mut rng, |_, x| {
        t.push(x as u64)
    });
    TagStream::from_times(0, (dur_s * PS_PER_S) as u64, &t).unwrap()
}

fn accidental_oracle(r: &mut Report) {
    let cases = [
        (1e4, 1e6, 1000.0, 20.0),
        (1e5, 1e5, 1000.0, 10.0),
        (1e6, 1e6, 100.0, 2.0),
        (1e6, 1e6, 1000.0, 1.0),
        (1e5, 1e6, 100.0, 10.0),
    ];
    let mut worst: f64 = 0.0;
    for (i, &(r1, r2, w, dur)) in cases.iter().enumerate() {
        let a = poisson_stream(r1, dur, 500 + i as u64);
        let b = poisson_stream(r2, dur, 600 + i as u64);
        let half = (w / 2.0) as u64;
        let n = cross_correlate(&a, &b, half, half, 0).unwrap().total() as f64;
        let expected = accidental_coincidence_rate(r1, r2, w) * dur;
        worst = worst.max(((n - expected) / expected.sqrt()).abs());
    }
    r.record(
        5,
        "accidental-rate oracle",
        worst < 5.0,
        format!("worst |z| = {worst:.2} over {} sets", cases.len()),
    );
}

fn brute_force(a: &[u64], b: &[u64], bin: u64, half: u64, delay: i64) -> Vec<u64> {
    let mut bins = vec![0; (2 * half / bin) as usize];
    for &ta in a {
        for &tb in b {
            let d = tb as i64 - ta as i64 - delay + half as i64;
            if d >= 0 && d < 2 * half as i64 {
                bins[(d as u64 / bin) as usize] += 1;
            }
        }
    }
    bins
}

fn draw<R: Rng>(rng: &mut R) -> Vec<u64> {
    let n = rng.random_range(0..=1000);
    let span = rng.random_range(1_000..1_000_000u64);
    let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
    v.sort_unstable();
    v
}

fn histogram_oracle(r: &mut Report) {
    let mut rng = rng_from_seed(66);
    let cases = 200;
    let mut mismatches = 0;
    for _ in 0..cases {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let bin = [1u64, 10, 64, 100, 500][rng.random_range(0..5)];
        let half = bin * rng.random_range(1..50u64);
        let delay = rng.random_range(-5_000i64..5_000);
        let ta = TagStream::from_times(0, 1 << 40, &a).unwrap();
        let tb = TagStream::from_times(1, 1 << 40, &b).unwrap();
        let h: CoincidenceHistogram = cross_correlate(&ta, &tb, bin, half, delay).unwrap();
        if h.bins != brute_force(&a, &b, bin, half, delay) {
            mismatches += 1;
        }
    }
    r.record(
        6,
        "histogram oracle",
        mismatches == 0,
        format!("{mismatches} mismatches in {cases} random cases"),
    );
}

fn franson_suite(r: &mut Report) {
    let s = preset("paper_20gbps").unwrap();
    let setup = s.franson.setup();

    // (a) Same phase sum, different split: equal central-peak twins.
    let twins = |alpha: f64, beta: f64, seed: u64| {
        let scan = franson_scan(&s.topology, &setup, beta, &[alpha], 0.5, 500, seed).unwrap();
        scan.points[0].true_coincidences as f64
    };
    let x = twins(1.0 - BETA_SETTINGS[0], BETA_SETTINGS[0], 1);
    let y = twins(1.0 - BETA_SETTINGS[1], BETA_SETTINGS[1], 2);
    let za = (x - y) / (x + y).sqrt();
    let analytic = (0..100).all(|i| {
        let a = 0.1 * i as f64;
        (central_detection_probability(a, 0.3, 0.9)
            - central_detection_probability(a + 0.7, -0.4, 0.9))
        .abs()
            < 1e-12
    });
    let ok_a = za.abs() < 5.0 && analytic;

    // (b) Scaling counts and time together leaves V unchanged.
    let alphas: Vec<f64> = default_alpha_offsets();
    let counts: Vec<u64> = alphas
        .iter()
        .map(|a| (2000.0 * (1.0 + 0.83 * a.cos())) as u64 + 40)
        .collect();
    let v1 = fit_visibility(&FransonScan::from_counts(0.0, &alphas, &counts, 1.0).unwrap())
        .unwrap()
        .visibility;
    let scaled: Vec<u64> = counts.iter().map(|c| c * 7).collect();
    let v7 = fit_visibility(&FransonScan::from_counts(0.0, &alphas, &scaled, 7.0).unwrap())
        .unwrap()
        .visibility;
    let ok_b = (v1 - v7).abs() < 1e-9;

    // (c) Fitted V against V0 C / (C + A) from the simulator's own tally.
    let beta = BETA_SETTINGS[0];
    let scan = franson_scan(
        &s.topology,
        &setup,
        beta,
        &s.franson.alphas(beta),
        1.0,
        500,
        3,
    )
    .unwrap();
    let fit = fit_visibility(&scan).unwrap();
    let c: u64 = scan.points.iter().map(|p| p.true_coincidences).sum();
    let a: u64 = scan.points.iter().map(|p| p.accidental_coincidences).sum();
    let law = s.topology.source.intrinsic_visibility * c as f64 / (c + a) as f64;
    let zc = (fit.visibility - law) / fit.visibility_sigma;
    let ok_c = zc.abs() < 5.0;

    // (d) Pulls of 100 synthetic scans with known V.
    let v_true = 0.84;
    let mut pulls = Vec::new();
    for seed in 0..100 {
        let mut rng = rng_from_seed(9000 + seed);
        let counts: Vec<u64> = alphas
            .iter()
            .map(|a| {
                let mean = 3000.0 * (1.0 + v_true * (a + 0.1).cos());
                Poisson::new(mean).unwrap().sample(&mut rng) as u64
            })
            .collect();
        let f =
            fit_visibility(&FransonScan::from_counts(0.0, &alphas, &counts, 1.0).unwrap()).unwrap();
        pulls.push((f.visibility - v_true) / f.visibility_sigma);
    }
    let n = pulls.len() as f64;
    let mean = pulls.iter().sum::<f64>() / n;
    let sd = (pulls.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let ok_d = mean.abs() < 0.5 && (0.65..1.35).contains(&sd);

    r.record(
        7,
        "Franson physics suite",
        ok_a && ok_b && ok_c && ok_d,
        format!(
            "(a) z={za:.2} (b) dV={:.1e} (c) z={zc:.2} (d) pull mean {mean:.2} sd {sd:.2}",
            (v1 - v7).abs()
        ),
    );
}

fn strictly(values: &[f64], decreasing: bool) -> bool {
    values
        .windows(2)
        .all(|w| if decreasing { w[1] < w[0] } else { w[1] > w[0] })
}

fn monotonicity(r: &mut Report, table: &Table1) {
    let s = preset("paper_0gbps").unwrap();
    let plan = ClassicalPlan::default();
    let mut cars = Vec::new();
    let mut singles = Vec::new();
    for &rate in &TABLE1_RATES {
        let topo = plan.apply(&s.topology, rate).unwrap();
        let out = simulate(&topo, 0.5, 40 + rate as u64).unwrap();
        let h = cross_correlate(
            &out.alice,
            &out.bob,
            50,
            10_000,
            out.bookkeeping.nominal_delay_ps,
        )
        .unwrap();
        cars.push(car(&h, 250).unwrap().value());
        singles.push(out.alice.singles_rate() + out.bob.singles_rate());
    }
    let col = |f: &dyn Fn(&coexsim::qkd::QkdReport) -> f64| -> Vec<f64> {
        table.rows.iter().map(|row| f(&row.mean)).collect()
    };
    let vis = col(&|m| 0.5 * (m.visibility_pair[0] + m.visibility_pair[1]));
    let skr = col(&|m| m.secret_key_rate_bps);
    let raw = col(&|m| m.raw_key_rate_bps);
    let checks = [
        ("CAR", strictly(&cars, true)),
        ("V", strictly(&vis, true)),
        ("SKR", strictly(&skr, true)),
        ("singles", strictly(&singles, false)),
        ("raw", strictly(&raw, false)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    r.record(
        8,
        "monotonicity",
        failed.is_empty(),
        format!(
            "CAR {:.1}..{:.1}, singles {:.2}..{:.2} MHz{}",
            cars[0],
            cars[3],
            singles[0] / 2e6,
            singles[3] / 2e6,
            if failed.is_empty() {
                String::new()
            } else {
                format!("; not monotone: {}", failed.join(", "))
            }
        ),
    );
}

fn determinism(r: &mut Report) {
    let s = preset("paper_10gbps").unwrap();
    let bytes = || {
        let out = simulate(&s.topology, 0.05, 7).unwrap();
        let mut b = Qtt1File::from_streams(&[&out.alice, &out.bob])
            .unwrap()
            .to_bytes();
        b.extend(serde_json::to_vec(&out.bookkeeping).unwrap());
        b
    };
    let same_sim = bytes() == bytes();

    let mut quick: Scenario = preset("paper_0gbps").unwrap();
    quick.franson.integration_s = 0.1;
    let sweep = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_table1(&quick, &TABLE1_RATES, 1.2, 11).unwrap().to_csv())
    };
    let same_sweep = sweep(1) == sweep(3);
    r.record(
        9,
        "determinism",
        same_sim && same_sweep,
        format!("simulation identical: {same_sim}, parallel sweep identical: {same_sweep}"),
    );
}

fn worst_case_wavelength(r: &mut Report) {
    let s = preset("paper_0gbps").unwrap();
    let plan = ClassicalPlan {
        bidirectional: false,
        ..ClassicalPlan::default()
    };
    let profile = s.topology.raman.clone().unwrap();
    let ch = s.topology.channel(Arm::Alice).unwrap();
    let (mut best_wl, mut best) = (0.0, f64::NEG_INFINITY);
    for wl in profile.wavelengths(ch) {
        let n = noise_coincidence_rate(&s.topology, &plan, 20.0, wl, 500.0).unwrap();
        if n > best {
            (best_wl, best) = (wl, n);
        }
    }
    r.record(
        10,
        "worst-case wavelength",
        (best_wl - WORST_CASE_WAVELENGTH_NM).abs() < 0.005,
        format!("argmax at {best_wl:.2} nm"),
    );
}

fn main() {
    let mut r = Report { failed: Vec::new() };
    skr_arithmetic(&mut r);
    qber_identity(&mut r);
    let table = table1_reproduction(&mut r);
    singles_anchor(&mut r);
    accidental_oracle(&mut r);
    histogram_oracle(&mut r);
    franson_suite(&mut r);
    monotonicity(&mut r, &table);
    determinism(&mut r);
    worst_case_wavelength(&mut r);
    if !r.failed.is_empty() {
        eprintln!("failed criteria: {:?}", r.failed);
        std::process::exit(1);
    }
}
