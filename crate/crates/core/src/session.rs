//! Full key-distribution sessions and the data-rate sweep behind the
//! performance table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::franson::{fit_visibility, franson_scan};
use crate::link_sim::Topology;
use crate::photonics::derive_seed;
use crate::qkd::{
    bbm92_session, qber_from_visibility, reference_row, secret_key_rate, BasisMeasurement,
    QkdReport, ReferenceRow, TimeBasisDiagnostics,
};
use crate::raman::Calibration;
use crate::scenario::{calibrate_topology, reference_targets, FransonParams, Scenario};

pub const TABLE1_RATES: [f64; 4] = [0.0, 5.0, 10.0, 20.0];

/// Scans every phase setting of `franson` on `topology` (classical traffic
/// already applied), fits each scan and evaluates the key rate.
pub fn run_session(
    topology: &Topology,
    franson: &FransonParams,
    data_rate_gbps: f64,
    window_ps: u64,
    f_ec: f64,
    seed: u64,
) -> Result<(QkdReport, Vec<BasisMeasurement>)> {
    let setup = franson.setup();
    let measurements = franson
        .betas_rad
        .iter()
        .enumerate()
        .map(|(j, &beta)| {
            let scan = franson_scan(
                topology,
                &setup,
                beta,
                &franson.alphas(beta),
                franson.integration_s,
                window_ps,
                derive_seed(seed, j as u64),
            )?;
            let fit = Some(fit_visibility(&scan)?);
            Ok(BasisMeasurement { scan, fit })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = bbm92_session(data_rate_gbps, &measurements, f_ec)?;
    Ok((report, measurements))
}

/// Seed of repeat `repeat` at `data_rate_gbps`; independent of which other
/// rates are evaluated.
pub fn session_seed(seed: u64, data_rate_gbps: f64, repeat: u32) -> u64 {
    derive_seed(derive_seed(seed, data_rate_gbps.to_bits()), repeat as u64)
}

/// Averages independent sessions: visibilities and raw rate are averaged,
/// then QBER and key rate are recomputed from the averages.
pub fn average_reports(reports: &[QkdReport]) -> Result<QkdReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::IncompleteSession("no sessions to average".into()))?;
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&QkdReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let v = [
        mean(&|r| r.visibility_pair[0]),
        mean(&|r| r.visibility_pair[1]),
    ];
    let sig = [
        mean(&|r| r.visibility_sigmas[0] * r.visibility_sigmas[0]).sqrt() / n.sqrt(),
        mean(&|r| r.visibility_sigmas[1] * r.visibility_sigmas[1]).sqrt() / n.sqrt(),
    ];
    let raw = mean(&|r| r.raw_key_rate_bps);
    let qber = qber_from_visibility(v[0], v[1])?;
    let acc = mean(&|r| r.time_basis.accidental_fraction);
    Ok(QkdReport {
        classical_data_rate_gbps: first.classical_data_rate_gbps,
        raw_key_rate_bps: raw,
        qber,
        secret_key_rate_bps: secret_key_rate(raw, qber, first.f_ec)?,
        visibility_pair: v,
        visibility_sigmas: sig,
        f_ec: first.f_ec,
        time_basis: TimeBasisDiagnostics {
            accidental_fraction: acc,
            qber_estimate: acc / 2.0,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub data_rate_gbps: f64,
    pub mean: QkdReport,
    pub sessions: Vec<QkdReport>,
    pub reference: Option<ReferenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub seed: u64,
    pub f_ec: f64,
    pub window_ps: u64,
    /// Present when the scenario had no Raman profile and one was fitted.
    pub calibration: Option<Calibration>,
    pub rows: Vec<Table1Row>,
}

impl Table1 {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "classical_data_rate_gbps,visibility_beta1,visibility_beta2,raw_key_rate_bps,qber,secret_key_rate_bps,\
             ref_visibility_beta1,ref_visibility_beta2,ref_raw_key_rate_bps,ref_qber,ref_secret_key_rate_bps,\
             delta_visibility_beta1,delta_visibility_beta2,delta_raw_key_rate_bps,delta_qber,delta_secret_key_rate_bps\n",
        );
        for row in &self.rows {
            s.push_str(&row.mean.csv_row());
            match &row.reference {
                Some(p) => {
                    let m = &row.mean;
                    s.push_str(&format!(
                        ",{:.4},{:.4},{},{:.4},{},{:.6},{:.6},{:.3},{:.6},{:.3}\n",
                        p.visibilities[0],
                        p.visibilities[1],
                        p.raw_key_rate_bps,
                        p.qber,
                        p.secret_key_rate_bps,
                        m.visibility_pair[0] - p.visibilities[0],
                        m.visibility_pair[1] - p.visibilities[1],
                        m.raw_key_rate_bps - p.raw_key_rate_bps,
                        m.qber - p.qber,
                        m.secret_key_rate_bps - p.secret_key_rate_bps,
                    ));
                }
                None => s.push_str(",,,,,,,,,,\n"),
            }
        }
        s
    }
}

/// Runs `repeats` sessions at each rate of `rates` and averages them. The
/// scenario's topology is used as a template: its classical links are
/// replaced according to `scenario.traffic`. Without a Raman profile the
/// link is first calibrated against the published visibilities.
pub fn run_table1(scenario: &Scenario, rates: &[f64], f_ec: f64, seed: u64) -> Result<Table1> {
    if rates.is_empty() {
        return Err(Error::Precondition("no data rates requested".into()));
    }
    let window = scenario.analysis.window_ps;
    let mut template = scenario.topology.clone();
    template.classical_links.clear();
    template.analyzers = None;
    let calibration = if template.raman.is_none() {
        let (t, cal) = calibrate_topology(
            &template,
            &scenario.traffic,
            &scenario.franson,
            window,
            &reference_targets(),
        )?;
        template = t;
        Some(cal)
    } else {
        None
    };
    let repeats = scenario.franson.repeats;
    let jobs: Vec<(usize, u32)> = (0..rates.len())
        .flat_map(|i| (0..repeats).map(move |r| (i, r)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(i, r)| {
            let topo = scenario.traffic.apply(&template, rates[i])?;
            let s = session_seed(seed, rates[i], r);
            run_session(&topo, &scenario.franson, rates[i], window, f_ec, s).map(|(rep, _)| rep)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = rates
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            let sessions: Vec<QkdReport> =
                reports[i * repeats as usize..(i + 1) * repeats as usize].to_vec();
            Ok(Table1Row {
                data_rate_gbps: rate,
                mean: average_reports(&sessions)?,
                sessions,
                reference: reference_row(rate).copied(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table1 {
        seed,
        f_ec,
        window_ps: window,
        calibration,
        rows,
    })
}
