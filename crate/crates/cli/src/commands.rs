//! Subcommands that read an experiment configuration.
//!
//! Seeds: child stream 0 of the master seed draws the CβE exterior, 1 the
//! sampler (samples and starts), 2 the SDE noise.

use std::path::{Path, PathBuf};

use serde::Serialize;

use loggas_core::dynamics::evolve_many;
use loggas_core::flow::{
    calibrate_clock, fokker_planck_snapshots, jko_flow, verify_dissipation, verify_displacement_convexity,
    verify_evi, Domain, GridDensity, Landscape,
};
use loggas_core::gibbs::{sample_conditional, ChainDiagnostics, SamplerConfig, Scheme};
use loggas_core::io::{write_ensemble_csv, write_table_csv, write_trajectory_csv};
use loggas_core::rng::child_seed;
use loggas_core::semigroup::CellEnsemble;
use loggas_core::suite::{cell_reports, draw_starts, function_by_name, Inequality};
use loggas_core::{Configuration, Error, Result};

use crate::config::{configuration, ExperimentConfig};
use crate::report::{self, Metadata, ReportDocument};
use crate::{emit, json_line, Check, FlowKind, Outcome};

fn missing(section: &str) -> Error {
    Error::InvalidParameter(format!("config has no [{section}] section"))
}

fn csv_text<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

#[derive(Serialize)]
struct SampleDocument {
    metadata: Metadata,
    n_samples: usize,
    diagnostics: ChainDiagnostics,
}

pub fn sample(cfg: &ExperimentConfig, out: Option<&Path>, diagnostics: Option<&Path>) -> Result<Outcome> {
    let s = cfg.sampler.as_ref().ok_or_else(|| missing("sampler"))?;
    let pot = cfg.potential()?;
    let (samples, diag) = sample_conditional(&pot, &cfg.sampler_config(s, 1))?;
    let hash = cfg.hash();
    let text = csv_text(|w| write_ensemble_csv(w, &samples, &[("config_hash", hash.clone())]))?;
    emit(out, &text)?;
    let doc = SampleDocument { metadata: Metadata::new("sample", &hash, cfg.seed), n_samples: samples.len(), diagnostics: diag };
    emit(diagnostics, &json_line(&doc))?;
    Ok(Outcome::Pass)
}

pub fn evolve(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Outcome> {
    let s = cfg.sde.as_ref().ok_or_else(|| missing("sde"))?;
    let pot = cfg.potential()?;
    let starts: Vec<Configuration> = match &s.start {
        Some(x) => vec![configuration(x); s.paths],
        None => {
            let mut sc = match &cfg.sampler {
                Some(section) => cfg.sampler_config(section, 1),
                None => {
                    let mut c = SamplerConfig::new(s.k, s.paths, Scheme::Metropolis, child_seed(cfg.seed, 1));
                    c.thinning = 20;
                    c
                }
            };
            sc.k = s.k;
            sc.n_samples = s.paths;
            sample_conditional(&pot, &sc)?.0
        }
    };
    let ens = evolve_many(&starts, &pot, &cfg.sde_config(s))?;
    let paths: Vec<(Vec<f64>, Vec<Configuration>)> =
        ens.paths.into_iter().map(|p| (p.times, p.states)).collect();
    let text = csv_text(|w| {
        write_trajectory_csv(
            w,
            &paths,
            &[("config_hash", cfg.hash()), ("projections", format!("{} of {} steps", ens.projections, ens.steps))],
        )
    })?;
    emit(out, &text)?;
    Ok(Outcome::Pass)
}

fn inequality(c: Check) -> Inequality {
    match c {
        Check::Be => Inequality::Be,
        Check::Poincare => Inequality::Poincare,
        Check::Harnack => Inequality::Harnack,
        Check::LogHarnack => Inequality::LogHarnack,
        Check::Lipschitz => Inequality::Lipschitz,
        Check::Expmoment => Inequality::Expmoment,
    }
}

/// Runs the `[verify]` ensemble and reports every selected time and function.
pub fn verify_document(cfg: &ExperimentConfig, which: Check) -> Result<ReportDocument> {
    let v = cfg.verify.as_ref().ok_or_else(|| missing("verify"))?;
    let pot = cfg.potential()?;
    let r = pot.r();
    let mut starts = draw_starts(&pot, v.k, v.lipschitz_pairs, v.lattice, child_seed(cfg.seed, 1))?;
    if let (Some(g), Some(e)) = (&v.start, &v.eta) {
        starts.gamma = configuration(g);
        starts.eta = configuration(e);
    }
    let functions = v.functions.iter().map(|f| function_by_name(f, r)).collect::<Result<Vec<_>>>()?;
    let cell = CellEnsemble::run(
        &pot,
        &starts.gamma,
        Some(&starts.eta),
        &starts.pairs,
        &functions,
        &v.times,
        v.n,
        child_seed(cfg.seed, 2),
        &ExperimentConfig::lab_options(v),
    )?;
    let reports = cell_reports(&cell, &[inequality(which)], &ExperimentConfig::check_params(v))?;
    Ok(ReportDocument::new(
        Metadata::new("verify", &cfg.hash(), cfg.seed),
        format!("{}_k{}", cfg.label(), v.k),
        reports,
    ))
}

pub fn verify(cfg: &ExperimentConfig, which: Check, out: Option<&Path>) -> Result<Outcome> {
    let doc = verify_document(cfg, which)?;
    emit(out, &json_line(&doc))?;
    Ok(Outcome::from_pass(doc.all_pass))
}

/// Rows `(t, node, coordinates…, values…)` for densities on one grid.
fn density_rows(times: &[f64], series: &[&[GridDensity]]) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        let domain = series[0][ti].domain;
        for node in 0..domain.len() {
            let mut row = vec![t, node as f64];
            row.extend(domain.center(node));
            row.extend(series.iter().map(|s| s[ti].values[node]));
            rows.push(row);
        }
    }
    rows
}

fn coordinate_header(domain: Domain) -> Vec<&'static str> {
    match domain {
        Domain::Interval { .. } => vec!["t", "node", "x"],
        Domain::Triangle { .. } => vec!["t", "node", "x1", "x2"],
    }
}

fn need_interval(k: usize, what: &str) -> Result<()> {
    if k != 1 {
        return Err(Error::InvalidParameter(format!("flow {what} is implemented for k = 1 only")));
    }
    Ok(())
}

/// Flow table, its extra comment lines, and whether the tolerances hold.
pub struct FlowTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
    pub notes: Vec<(&'static str, String)>,
    pub pass: bool,
}

pub fn flow_table(cfg: &ExperimentConfig, which: FlowKind) -> Result<FlowTable> {
    let f = cfg.flow.as_ref().ok_or_else(|| missing("flow"))?;
    let pot = cfg.potential()?;
    let domain = f.domain(pot.r())?;
    let land = match domain {
        Domain::Interval { .. } => Landscape::interval(domain, &pot)?,
        Domain::Triangle { .. } => Landscape::pair(domain, &pot)?,
    };
    let p0 = f.initial.build(&land)?;
    let tol = &f.tolerances;
    let mut notes = Vec::new();
    let (header, rows, pass) = match which {
        FlowKind::Fp => {
            let snaps = fokker_planck_snapshots(&p0, &land, &f.times, f.dt)?;
            let mut header = coordinate_header(domain);
            header.push("value");
            (header, density_rows(&f.times, &[&snaps]), true)
        }
        FlowKind::Jko => {
            need_interval(f.k, "jko")?;
            let t_last = *f.times.last().expect("validated");
            let cal = calibrate_clock(f.n, f.tau, t_last)?;
            let fp = fokker_planck_snapshots(&p0, &land, &f.times, f.dt)?;
            let jko = jko_flow(&p0, &pot, f.tau, cal.chosen, &f.times)?;
            let l1: Vec<f64> = fp.iter().zip(&jko).map(|(a, b)| a.l1_distance(b)).collect();
            notes.push(("clock", cal.chosen.to_string()));
            notes.push(("calibration_residual", cal.residual.to_string()));
            notes.push(("l1_fp_jko", format!("{l1:?}")));
            let pass = cal.residual <= tol.calibration && l1.iter().all(|d| *d <= tol.jko_l1);
            let mut header = coordinate_header(domain);
            header.extend(["fp", "jko"]);
            (header, density_rows(&f.times, &[&fp, &jko]), pass)
        }
        FlowKind::Evi => {
            need_interval(f.k, "evi")?;
            let nu = f.target.build(&land)?;
            let mut grid = f.times.clone();
            if grid[0] > 0.0 {
                grid.insert(0, 0.0);
            }
            let rows = verify_evi(&pot, &p0, &nu, &grid, f.curvature, f.dt)?;
            let pass = rows.iter().all(|r| r.residual >= tol.evi);
            (
                vec!["t0", "t1", "lhs", "rhs", "residual"],
                rows.iter().map(|r| vec![r.t0, r.t1, r.lhs, r.rhs, r.residual]).collect(),
                pass,
            )
        }
        FlowKind::Dissipation => {
            let rows = verify_dissipation(&land, &p0, &f.times, f.dt)?;
            let pass = rows.iter().all(|r| r.relative_residual < tol.dissipation);
            (
                vec!["t", "entropy", "d_entropy", "dissipation", "relative_residual"],
                rows.iter().map(|r| vec![r.t, r.entropy, r.d_entropy, r.dissipation, r.relative_residual]).collect(),
                pass,
            )
        }
        FlowKind::Dispconv => {
            need_interval(f.k, "dispconv")?;
            let p1 = f.target.build(&land)?;
            let rep = verify_displacement_convexity(&pot, &p0, &p1, f.samples, f.curvature)?;
            notes.push(("min_slack", rep.min_slack.to_string()));
            (
                vec!["t", "slack"],
                rep.ts.iter().zip(&rep.slack).map(|(t, s)| vec![*t, *s]).collect(),
                rep.min_slack >= tol.dispconv,
            )
        }
    };
    Ok(FlowTable { header, rows, notes, pass })
}

pub fn flow(cfg: &ExperimentConfig, which: FlowKind, out: Option<&Path>) -> Result<Outcome> {
    let table = flow_table(cfg, which)?;
    let mut comments = vec![("config_hash", cfg.hash())];
    comments.extend(table.notes.iter().cloned());
    comments.push(("pass", table.pass.to_string()));
    let text = csv_text(|w| write_table_csv(w, &table.header, &table.rows, &comments))?;
    emit(out, &text)?;
    Ok(Outcome::from_pass(table.pass))
}

pub fn report(inputs: &[PathBuf], out: Option<&Path>, json: Option<&Path>) -> Result<Outcome> {
    let docs = inputs
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", p.display())))?;
            report::parse_report(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = report::summarize(&docs);
    emit(out, &summary.to_csv())?;
    if let Some(j) = json {
        emit(Some(j), &json_line(&summary))?;
    }
    Ok(Outcome::from_pass(summary.all_pass))
}
