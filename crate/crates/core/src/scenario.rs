//! Scenario files: a topology plus run, analysis, interferometer and key-rate
//! parameters, loaded from JSON with line-anchored diagnostics.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{DEFAULT_BIN_PS, DEFAULT_WINDOW_PS};
use crate::channel_plan::{DwdmFilter, ItuChannel};
use crate::error::{Error, Result};
use crate::franson::{FransonSetup, BETA_SETTINGS, DEFAULT_AMZI_DELAY_PS, DEFAULT_AMZI_LOSS_DB};
use crate::link_sim::{
    expected_rates, Attenuator, ClassicalPlan, Detectors, FiberSegment, PathElement, Topology,
};
use crate::photonics::{DetectorModel, SourceModel, DEFAULT_CORRELATION_JITTER_PS};
use crate::qkd::{DEFAULT_F_EC, REFERENCE_TABLE};
use crate::raman::{calibrate_profile, Calibration, RamanProfile, VisibilityTarget};

/// JSON schema describing scenario files.
pub const SCHEMA: &str = include_str!("../schema/scenario.schema.json");

/// Per-arm singles with the classical light off and no interferometers.
pub const SINGLES_ANCHOR_HZ: f64 = 2.2e6;
/// Central-peak coincidence rate with the classical light off.
pub const RAW_RATE_ANCHOR_HZ: f64 = 4668.0;
/// Placeholder pair rate before the budget solver runs.
const NOMINAL_PAIR_RATE_HZ: f64 = 5e7;

pub const PRESET_NAMES: [&str; 7] = [
    "paper_0gbps",
    "paper_5gbps",
    "paper_10gbps",
    "paper_20gbps",
    "worst_case_1538.98nm",
    "inset_-20dBm",
    "inset_-31dBm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisParams {
    #[serde(default = "default_window")]
    pub window_ps: u64,
    #[serde(default = "default_bin")]
    pub bin_ps: u64,
    /// Histogram half range about the nominal delay.
    #[serde(default = "default_range")]
    pub histogram_range_ps: u64,
}

fn default_window() -> u64 {
    DEFAULT_WINDOW_PS
}
fn default_bin() -> u64 {
    DEFAULT_BIN_PS
}
fn default_range() -> u64 {
    10_000
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            window_ps: DEFAULT_WINDOW_PS,
            bin_ps: DEFAULT_BIN_PS,
            histogram_range_ps: default_range(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FransonParams {
    #[serde(default = "default_amzi_delay")]
    pub delay_ps: f64,
    #[serde(default = "default_amzi_loss")]
    pub insertion_loss_db: f64,
    /// Bob's phase settings, one scan each.
    #[serde(default = "default_betas")]
    pub betas_rad: Vec<f64>,
    /// Alice's phases, relative to the interference maximum `alpha = -beta`.
    #[serde(default = "default_alpha_offsets")]
    pub alpha_offsets_rad: Vec<f64>,
    #[serde(default = "default_integration")]
    pub integration_s: f64,
    /// Independent sessions averaged per data rate.
    #[serde(default = "default_repeats")]
    pub repeats: u32,
}

fn default_amzi_delay() -> f64 {
    DEFAULT_AMZI_DELAY_PS
}
fn default_amzi_loss() -> f64 {
    DEFAULT_AMZI_LOSS_DB
}
fn default_betas() -> Vec<f64> {
    BETA_SETTINGS.to_vec()
}
fn default_integration() -> f64 {
    2.5
}
fn default_repeats() -> u32 {
    3
}

/// Three phases around the maximum and three around the minimum of the
/// fringe. Each point near the maximum has a partner exactly pi away, so the
/// pooled coincidence rate equals the phase average.
pub fn default_alpha_offsets() -> Vec<f64> {
    let d = 0.25;
    vec![-d, 0.0, d, PI - d, PI, PI + d]
}

impl Default for FransonParams {
    fn default() -> Self {
        Self {
            delay_ps: DEFAULT_AMZI_DELAY_PS,
            insertion_loss_db: DEFAULT_AMZI_LOSS_DB,
            betas_rad: default_betas(),
            alpha_offsets_rad: default_alpha_offsets(),
            integration_s: default_integration(),
            repeats: default_repeats(),
        }
    }
}

impl FransonParams {
    pub fn setup(&self) -> FransonSetup {
        FransonSetup {
            delay_ps: self.delay_ps,
            insertion_loss_db: self.insertion_loss_db,
        }
    }

    /// Absolute, strictly increasing alphas for Bob's phase `beta`.
    pub fn alphas(&self, beta: f64) -> Vec<f64> {
        self.alpha_offsets_rad.iter().map(|o| o - beta).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QkdParams {
    #[serde(default = "default_f_ec")]
    pub f_ec: f64,
}

fn default_f_ec() -> f64 {
    DEFAULT_F_EC
}

impl Default for QkdParams {
    fn default() -> Self {
        Self { f_ec: DEFAULT_F_EC }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub duration_s: f64,
    pub seed: u64,
    pub topology: Topology,
    /// How `table1` and calibration lay classical traffic onto the topology.
    #[serde(default)]
    pub traffic: ClassicalPlan,
    #[serde(default)]
    pub analysis: AnalysisParams,
    #[serde(default)]
    pub franson: FransonParams,
    #[serde(default)]
    pub qkd: QkdParams,
}

impl Scenario {
    /// Every semantic problem as (JSON pointer, message).
    pub fn issues(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .topology
            .issues()
            .into_iter()
            .map(|(p, m)| (format!("/topology{p}"), m))
            .collect();
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            out.push((
                "/duration_s".into(),
                format!("must be > 0, got {}", self.duration_s),
            ));
        }
        if let Err(e) = self.traffic.validate() {
            out.push(("/traffic".into(), e.to_string()));
        }
        let a = &self.analysis;
        if a.window_ps == 0 {
            out.push(("/analysis/window_ps".into(), "must be > 0".into()));
        }
        if a.bin_ps == 0 {
            out.push(("/analysis/bin_ps".into(), "must be > 0".into()));
        } else if (2 * a.histogram_range_ps) % a.bin_ps != 0 || a.histogram_range_ps == 0 {
            out.push((
                "/analysis/histogram_range_ps".into(),
                format!(
                    "twice the range must be a positive multiple of bin_ps ({})",
                    a.bin_ps
                ),
            ));
        }
        if a.bin_ps > 0
            && (a.window_ps % 2 != 0 || (a.window_ps / 2 + a.histogram_range_ps) % a.bin_ps != 0)
        {
            out.push((
                "/analysis/window_ps".into(),
                format!(
                    "half the window must fall on a bin edge (bin_ps = {})",
                    a.bin_ps
                ),
            ));
        }
        let f = &self.franson;
        let setup = f.setup();
        let amzi = setup.analyzers(0.0, 0.0).alice;
        if let Err(e) = amzi.validate() {
            out.push(("/franson".into(), e.to_string()));
        } else if let Err(e) = setup.check_window(a.window_ps) {
            out.push(("/franson/delay_ps".into(), e.to_string()));
        }
        if f.betas_rad.is_empty() || f.betas_rad.iter().any(|b| !b.is_finite()) {
            out.push((
                "/franson/betas_rad".into(),
                "need at least one finite phase".into(),
            ));
        }
        if f.alpha_offsets_rad.windows(2).any(|w| w[1] <= w[0])
            || f.alpha_offsets_rad.iter().any(|x| !x.is_finite())
        {
            out.push((
                "/franson/alpha_offsets_rad".into(),
                "must be finite and strictly increasing".into(),
            ));
        }
        if !(f.integration_s > 0.0 && f.integration_s.is_finite()) {
            out.push((
                "/franson/integration_s".into(),
                format!("must be > 0, got {}", f.integration_s),
            ));
        }
        if f.repeats == 0 {
            out.push(("/franson/repeats".into(), "must be >= 1".into()));
        }
        if !(self.qkd.f_ec >= 1.0 && self.qkd.f_ec.is_finite()) {
            out.push((
                "/qkd/f_ec".into(),
                format!("must be >= 1, got {}", self.qkd.f_ec),
            ));
        }
        out
    }

    /// Parses and validates scenario JSON. Every failure message starts with
    /// `line L, column C:`.
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
            Error::Validation(vec![format!(
                "line {}, column {}: {msg}",
                e.line(),
                e.column()
            )])
        })?;
        let issues = scenario.issues();
        if issues.is_empty() {
            return Ok(scenario);
        }
        let index = locate_pointers(text);
        Err(Error::Validation(
            issues
                .into_iter()
                .map(|(ptr, msg)| {
                    let (line, col) = nearest_location(&index, &ptr);
                    format!("line {line}, column {col}: {ptr}: {msg}")
                })
                .collect(),
        ))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

fn nearest_location(index: &HashMap<String, (usize, usize)>, ptr: &str) -> (usize, usize) {
    let mut p = ptr.to_string();
    loop {
        if let Some(&loc) = index.get(&p) {
            return loc;
        }
        match p.rfind('/') {
            Some(i) => p.truncate(i),
            None => return (1, 1),
        }
    }
}

/// Maps every JSON pointer in `text` to the line and column where its value
/// starts. The text must already be valid JSON.
pub fn locate_pointers(text: &str) -> HashMap<String, (usize, usize)> {
    struct Scanner<'a> {
        b: &'a [u8],
        i: usize,
        line: usize,
        line_start: usize,
        out: HashMap<String, (usize, usize)>,
    }
    impl Scanner<'_> {
        fn ws(&mut self) {
            while self.i < self.b.len() && self.b[self.i].is_ascii_whitespace() {
                if self.b[self.i] == b'\n' {
                    self.line += 1;
                    self.line_start = self.i + 1;
                }
                self.i += 1;
            }
        }
        fn string(&mut self) -> String {
            let start = self.i + 1;
            self.i += 1;
            while self.i < self.b.len() && self.b[self.i] != b'"' {
                if self.b[self.i] == b'\\' {
                    self.i += 1;
                }
                self.i += 1;
            }
            let s = String::from_utf8_lossy(&self.b[start..self.i.min(self.b.len())]).into_owned();
            self.i += 1;
            s
        }
        fn value(&mut self, ptr: String) {
            self.ws();
            self.out
                .insert(ptr.clone(), (self.line, self.i - self.line_start + 1));
            match self.b.get(self.i) {
                Some(b'{') => {
                    self.i += 1;
                    loop {
                        self.ws();
                        match self.b.get(self.i) {
                            Some(b'}') | None => {
                                self.i += 1;
                                break;
                            }
                            Some(b',') => self.i += 1,
                            Some(b'"') => {
                                let key = self.string().replace('~', "~0").replace('/', "~1");
                                self.ws();
                                self.i += 1; // colon
                                self.value(format!("{ptr}/{key}"));
                            }
                            Some(_) => self.i += 1,
                        }
                    }
                }
                Some(b'[') => {
                    self.i += 1;
                    let mut n = 0;
                    loop {
                        self.ws();
                        match self.b.get(self.i) {
                            Some(b']') | None => {
                                self.i += 1;
                                break;
                            }
                            Some(b',') => self.i += 1,
                            Some(_) => {
                                self.value(format!("{ptr}/{n}"));
                                n += 1;
                            }
                        }
                    }
                }
                Some(b'"') => {
                    self.string();
                }
                Some(_) => {
                    while self.i < self.b.len() && !matches!(self.b[self.i], b',' | b'}' | b']') {
                        if self.b[self.i] == b'\n' {
                            break;
                        }
                        self.i += 1;
                    }
                }
                None => {}
            }
        }
    }
    let mut s = Scanner {
        b: text.as_bytes(),
        i: 0,
        line: 1,
        line_start: 0,
        out: HashMap::new(),
    };
    s.value(String::new());
    s.out
}

fn channel(n: u8) -> ItuChannel {
    ItuChannel::new(n).expect("grid channel")
}

fn default_detector() -> DetectorModel {
    DetectorModel {
        efficiency: 0.8,
        dark_rate_hz: 100.0,
        jitter_sigma_ps: 30.0,
        dead_time_ns: 20.0,
    }
}

fn arm_path(quantum: u8, coupling_db: f64) -> Vec<PathElement> {
    vec![
        PathElement::Attenuator(Attenuator {
            label: "source collection".into(),
            loss_db: coupling_db,
        }),
        // Pair demultiplexer at the quantum centre.
        PathElement::Dwdm(DwdmFilter::new(channel(quantum))),
        // Classical channel added onto the fiber; the quantum light takes
        // the reflect port.
        PathElement::Dwdm(DwdmFilter::reflecting(channel(48))),
        PathElement::Fiber(FiberSegment::new(20.0)),
        // Receiver-side filter in front of the detector.
        PathElement::Dwdm(DwdmFilter::new(channel(quantum))),
    ]
}

/// Both 20 km spans with the classical channel routed end to end, before
/// the source budget is solved. No classical traffic, no Raman profile.
pub fn default_topology() -> Topology {
    Topology {
        source: SourceModel {
            pair_rate_hz: NOMINAL_PAIR_RATE_HZ,
            pump_channel: channel(46),
            signal_channel: channel(35),
            correlation_jitter_ps: DEFAULT_CORRELATION_JITTER_PS,
            intrinsic_visibility: 1.0,
        },
        source_connected: true,
        alice_path: arm_path(35, 6.0),
        bob_path: arm_path(57, 6.0),
        classical_path: vec![
            PathElement::Dwdm(DwdmFilter::new(channel(48))),
            PathElement::Fiber(FiberSegment::new(20.0)),
            PathElement::Dwdm(DwdmFilter::new(channel(48))),
            PathElement::Dwdm(DwdmFilter::new(channel(48))),
            PathElement::Fiber(FiberSegment::new(20.0)),
            PathElement::Dwdm(DwdmFilter::new(channel(48))),
        ],
        classical_links: Vec::new(),
        detectors: Detectors {
            alice: default_detector(),
            bob: default_detector(),
        },
        raman: None,
        analyzers: None,
    }
}

fn set_coupling(topology: &mut Topology, loss_db: f64) {
    for path in [&mut topology.alice_path, &mut topology.bob_path] {
        if let Some(PathElement::Attenuator(a)) = path.first_mut() {
            a.loss_db = loss_db;
        }
    }
}

/// Fixes the pair rate and the source collection loss (first element of each
/// arm path, assumed an attenuator) so that the bare link shows
/// `singles_hz` per arm and the Franson configuration shows `raw_hz`
/// central-peak coincidences, both with the classical light off.
pub fn solve_source_budget(
    topology: &Topology,
    setup: &FransonSetup,
    window_ps: u64,
    singles_hz: f64,
    raw_hz: f64,
) -> Result<Topology> {
    let mut topo = topology.clone();
    topo.classical_links.clear();
    topo.analyzers = None;
    topo.source_connected = true;
    for path in [&topo.alice_path, &topo.bob_path] {
        if !matches!(path.first(), Some(PathElement::Attenuator(_))) {
            return Err(Error::Calibration(
                "arm paths must start with a source-collection attenuator".into(),
            ));
        }
    }
    let d = topo.detectors.alice.dead_time_ns * 1e-9;
    let incident = singles_hz / (1.0 - singles_hz * d);
    if !(incident > 0.0) {
        return Err(Error::Calibration(format!(
            "{singles_hz} Hz singles exceed the dead-time limit"
        )));
    }
    // Evaluate at zero coupling loss, then scale: the collection loss is the
    // same in both arms.
    set_coupling(&mut topo, 0.0);
    let x_max = topo.detection_probability(crate::link_sim::Arm::Alice)?;
    let dark = topo.detectors.alice.dark_rate_hz;
    let photon_rate = incident - dark; // mu * x for the bare link
    let raw_at = |x: f64| -> Result<f64> {
        let mut t = topo.clone();
        set_coupling(&mut t, -10.0 * (x / x_max).log10());
        t.source.pair_rate_hz = photon_rate / x;
        t.source.intrinsic_visibility = 1.0;
        t.analyzers = Some(setup.analyzers(FRAC_PI_2, 0.0));
        let e = expected_rates(&t, window_ps)?;
        Ok(e.true_coincidences + e.accidental_coincidences)
    };
    let (mut lo, mut hi) = (x_max * 1e-6, x_max);
    if raw_at(hi)? < raw_hz {
        return Err(Error::Calibration(format!(
            "coincidence rate {raw_hz} Hz out of reach without extra loss"
        )));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if raw_at(mid)? < raw_hz {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = (lo * hi).sqrt();
    let mut out = topology.clone();
    set_coupling(&mut out, -10.0 * (x / x_max).log10());
    out.source.pair_rate_hz = photon_rate / x;
    Ok(out)
}

/// Calibration anchors: the mean of the two published visibilities per row.
pub fn reference_targets() -> Vec<VisibilityTarget> {
    REFERENCE_TABLE
        .iter()
        .map(|r| VisibilityTarget {
            data_rate_gbps: r.data_rate_gbps,
            visibility: r.mean_visibility(),
        })
        .collect()
}

/// Fits noise scale and intrinsic visibility to `targets` and returns the
/// calibrated topology together with the calibration record.
pub fn calibrate_topology(
    topology: &Topology,
    plan: &ClassicalPlan,
    franson: &FransonParams,
    window_ps: u64,
    targets: &[VisibilityTarget],
) -> Result<(Topology, Calibration)> {
    let channels = [
        topology.channel(crate::link_sim::Arm::Alice)?,
        topology.channel(crate::link_sim::Arm::Bob)?,
    ];
    let shape = match &topology.raman {
        Some(p) => p.clone(),
        None => RamanProfile::default_shape(&channels)?,
    };
    let cal = calibrate_profile(targets, topology, plan, &franson.setup(), window_ps, &shape)?;
    let mut t = topology.clone();
    t.raman = Some(cal.profile.clone());
    t.source.intrinsic_visibility = cal.intrinsic_visibility;
    Ok((t, cal))
}

/// The source-budgeted, calibrated default link with no classical traffic.
pub fn calibrated_default_topology() -> Result<Topology> {
    let franson = FransonParams::default();
    let budget = solve_source_budget(
        &default_topology(),
        &franson.setup(),
        DEFAULT_WINDOW_PS,
        SINGLES_ANCHOR_HZ,
        RAW_RATE_ANCHOR_HZ,
    )?;
    let (t, _) = calibrate_topology(
        &budget,
        &ClassicalPlan::default(),
        &franson,
        DEFAULT_WINDOW_PS,
        &reference_targets(),
    )?;
    Ok(t)
}

fn base_scenario(name: &str, topology: Topology, traffic: ClassicalPlan) -> Scenario {
    Scenario {
        name: name.to_string(),
        duration_s: 0.1,
        seed: 1,
        topology,
        traffic,
        analysis: AnalysisParams::default(),
        franson: FransonParams::default(),
        qkd: QkdParams::default(),
    }
}

/// Builds one of the bundled scenarios by name.
pub fn preset(name: &str) -> Result<Scenario> {
    let topo = calibrated_default_topology()?;
    let plan = ClassicalPlan::default();
    let at_rate = |rate: f64| -> Result<Scenario> {
        Ok(base_scenario(name, plan.apply(&topo, rate)?, plan.clone()))
    };
    match name {
        "paper_0gbps" => at_rate(0.0),
        "paper_5gbps" => at_rate(5.0),
        "paper_10gbps" => at_rate(10.0),
        "paper_20gbps" => at_rate(20.0),
        "worst_case_1538.98nm" => {
            // Noise characterization: source unplugged, one direction only,
            // receiver at the 20 Gbps sensitivity.
            let traffic = ClassicalPlan {
                bidirectional: false,
                ..plan.clone()
            };
            let mut t = traffic.apply(&topo, 20.0)?;
            t.source_connected = false;
            Ok(base_scenario(name, t, traffic))
        }
        "inset_-20dBm" | "inset_-31dBm" => {
            let dbm = if name == "inset_-20dBm" { -20.0 } else { -31.0 };
            let traffic = ClassicalPlan {
                received_power_dbm: Some(dbm),
                ..plan.clone()
            };
            Ok(base_scenario(name, traffic.apply(&topo, 0.0)?, traffic))
        }
        _ => Err(Error::Domain(format!(
            "unknown preset {name:?}; known: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Loads `arg` as a file path, or as a preset name when no such file exists.
pub fn load_or_preset(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::load(path);
    }
    let name = arg.strip_suffix(".json").unwrap_or(arg);
    let name = Path::new(name)
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or(name);
    if PRESET_NAMES.contains(&name) {
        preset(name)
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no scenario file or preset {arg:?}"),
        )))
    }
}
