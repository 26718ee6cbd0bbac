//! `coexsim` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coexsim::analysis::{car, cross_correlate, CarEstimate, CoincidenceHistogram};
use coexsim::franson::{fit_visibility, franson_scan};
use coexsim::link_sim::simulate;
use coexsim::photonics::TagStream;
use coexsim::qtt1::Qtt1File;
use coexsim::scenario::{
    calibrate_topology, load_or_preset, preset, reference_targets, Scenario, PRESET_NAMES, SCHEMA,
};
use coexsim::session::{run_table1, TABLE1_RATES};
use coexsim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "coexsim",
    version,
    about = "Entanglement-based QKD link simulator with co-propagating classical traffic"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file or bundled preset name.
    #[arg(long)]
    scenario: String,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let mut s = load_or_preset(&self.scenario)?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the link and write tags.qtt1 plus bookkeeping.json.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario duration.
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Coincidence histogram and CAR from QTT1 files: one file holding
    /// channels 0 and 1, or two files with one channel each.
    Analyze {
        #[arg(required = true, num_args = 1..=2)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        window_ps: u64,
        #[arg(long, default_value_t = 50)]
        bin_ps: u64,
        /// Histogram half range.
        #[arg(long, default_value_t = 10_000)]
        range_ps: u64,
        /// Expected arrival offset of the second channel.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        delay_ps: i64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Full sessions at each classical data rate, averaged over repeats.
    Table1 {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_delimiter = ',', default_values_t = TABLE1_RATES.to_vec())]
        rates: Vec<f64>,
        #[arg(long)]
        f_ec: Option<f64>,
        #[arg(long)]
        window_ps: Option<u64>,
        /// Overrides the integration time per phase setting.
        #[arg(long)]
        integration_s: Option<f64>,
        #[arg(long)]
        repeats: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Fit the intrinsic visibility and Raman scale to the published
    /// visibilities.
    Calibrate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        window_ps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One Franson phase scan and its visibility fit.
    Scan {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Bob's phase.
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long)]
        integration_s: Option<f64>,
        #[arg(long)]
        window_ps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled scenarios, or write them as JSON files.
    Presets {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the scenario JSON schema.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, &target)?;
    Ok(target)
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn emit(out: Option<&Path>, name: &str, contents: &str) -> Result<()> {
    match out {
        Some(dir) => {
            let p = write_atomic(dir, name, contents.as_bytes())?;
            println!("wrote {}", p.display());
        }
        None => print!("{contents}"),
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            scenario,
            out,
            duration_s,
        } => {
            let s = scenario.load()?;
            let duration = duration_s.unwrap_or(s.duration_s);
            let sim = simulate(&s.topology, duration, s.seed)?;
            let file = Qtt1File::from_streams(&[&sim.alice, &sim.bob])?;
            write_atomic(&out, "tags.qtt1", &file.to_bytes())?;
            write_atomic(&out, "bookkeeping.json", json(&sim.bookkeeping)?.as_bytes())?;
            println!(
                "{} tags over {duration} s; singles {:.0} Hz (alice), {:.0} Hz (bob)",
                file.tags.len(),
                sim.bookkeeping.alice.singles_hz,
                sim.bookkeeping.bob.singles_hz
            );
            Ok(())
        }
        Command::Analyze {
            files,
            out,
            window_ps,
            bin_ps,
            range_ps,
            delay_ps,
            format,
        } => {
            let (a, b) = load_pair(&files)?;
            let hist = cross_correlate(&a, &b, bin_ps, range_ps, delay_ps)?;
            if window_ps % 2 != 0 {
                return Err(Error::Precondition(format!(
                    "window {window_ps} ps must be even"
                )));
            }
            let estimate = car(&hist, window_ps / 2)?;
            let (name, body) = match format {
                Format::Csv => ("histogram.csv", hist.to_csv()),
                Format::Json => ("histogram.json", json(&hist)?),
            };
            write_atomic(&out, name, body.as_bytes())?;
            write_atomic(
                &out,
                "car.json",
                json(&CarReport::new(&a, &b, &hist, estimate))?.as_bytes(),
            )?;
            match estimate.car {
                Some(v) => println!("CAR {v:.3} ± {:.3}", estimate.car_sigma.unwrap_or(0.0)),
                None => println!("CAR infinite (no off-peak counts)"),
            }
            Ok(())
        }
        Command::Table1 {
            scenario,
            rates,
            f_ec,
            window_ps,
            integration_s,
            repeats,
            out,
            format,
        } => {
            let mut s = scenario.load()?;
            if let Some(w) = window_ps {
                s.analysis.window_ps = w;
            }
            if let Some(t) = integration_s {
                s.franson.integration_s = t;
            }
            if let Some(r) = repeats {
                s.franson.repeats = r;
            }
            let f_ec = f_ec.unwrap_or(s.qkd.f_ec);
            let table = run_table1(&s, &rates, f_ec, s.seed)?;
            match format {
                Format::Csv => emit(out.as_deref(), "table1.csv", &table.to_csv()),
                Format::Json => emit(out.as_deref(), "table1.json", &json(&table)?),
            }
        }
        Command::Calibrate {
            scenario,
            window_ps,
            out,
        } => {
            let s = scenario.load()?;
            let mut template = s.topology.clone();
            template.classical_links.clear();
            template.analyzers = None;
            template.raman = None;
            let window = window_ps.unwrap_or(s.analysis.window_ps);
            let (_, cal) = calibrate_topology(
                &template,
                &s.traffic,
                &s.franson,
                window,
                &reference_targets(),
            )?;
            if let Some(dir) = out.as_deref() {
                let mut csv = Vec::new();
                cal.profile.write_csv(&mut csv)?;
                write_atomic(dir, "raman_profile.csv", &csv)?;
            }
            emit(out.as_deref(), "calibration.json", &json(&cal)?)
        }
        Command::Scan {
            scenario,
            beta,
            integration_s,
            window_ps,
            out,
        } => {
            let s = scenario.load()?;
            let window = window_ps.unwrap_or(s.analysis.window_ps);
            let scan = franson_scan(
                &s.topology,
                &s.franson.setup(),
                beta,
                &s.franson.alphas(beta),
                integration_s.unwrap_or(s.franson.integration_s),
                window,
                s.seed,
            )?;
            let fit = fit_visibility(&scan)?;
            if let Some(dir) = out.as_deref() {
                write_atomic(dir, "scan.csv", scan.to_csv().as_bytes())?;
            }
            emit(out.as_deref(), "fit.json", &json(&fit)?)
        }
        Command::Presets { out } => {
            for name in PRESET_NAMES {
                match out.as_deref() {
                    Some(dir) => {
                        let p = write_atomic(
                            dir,
                            &format!("{name}.json"),
                            preset(name)?.to_json().as_bytes(),
                        )?;
                        println!("wrote {}", p.display());
                    }
                    None => println!("{name}"),
                }
            }
            Ok(())
        }
        Command::Schema => {
            print!("{SCHEMA}");
            Ok(())
        }
    }
}

fn load_pair(files: &[PathBuf]) -> Result<(TagStream, TagStream)> {
    match files {
        [one] => {
            let f = Qtt1File::read(one)?;
            if f.channel_count < 2 {
                return Err(Error::Precondition(format!(
                    "{} declares {} channel(s); pass two files or one with two channels",
                    one.display(),
                    f.channel_count
                )));
            }
            Ok((f.stream(0)?, f.stream(1)?))
        }
        [first, second] => {
            let one = |p: &PathBuf| -> Result<TagStream> {
                let f = Qtt1File::read(p)?;
                let ch = f.channels().first().copied().unwrap_or(0);
                f.stream(ch)
            };
            Ok((one(first)?, one(second)?))
        }
        _ => Err(Error::Precondition("expected one or two tag files".into())),
    }
}

#[derive(serde::Serialize)]
struct CarReport {
    car: Option<f64>,
    car_sigma: Option<f64>,
    peak_counts: u64,
    accidental_mean: f64,
    accidental_windows: usize,
    singles_a_hz: f64,
    singles_b_hz: f64,
    histogram_total: u64,
}

impl CarReport {
    fn new(a: &TagStream, b: &TagStream, hist: &CoincidenceHistogram, e: CarEstimate) -> Self {
        Self {
            car: e.car,
            car_sigma: e.car_sigma,
            peak_counts: e.peak_counts,
            accidental_mean: e.accidental_mean,
            accidental_windows: e.accidental_windows,
            singles_a_hz: a.singles_rate(),
            singles_b_hz: b.singles_rate(),
            histogram_total: hist.total(),
        }
    }
}
