//! Text formats: configurations as JSON arrays, ensembles and trajectories as
//! CSV. Every CSV writer can prepend `# key: value` comment lines, which the
//! readers skip.

use std::collections::BTreeMap;
use std::io::Write;

use crate::config_space::Configuration;
use crate::error::{Error, Result};

pub fn parse_configuration_json(text: &str) -> Result<Configuration> {
    let points: Vec<f64> = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    Configuration::try_new(points).map_err(|e| Error::Parse(e.to_string()))
}

pub fn configuration_to_json(config: &Configuration) -> String {
    serde_json::to_string(config.points()).expect("finite floats always serialise")
}

fn write_comments<W: Write>(w: &mut W, comments: &[(&str, String)]) -> Result<()> {
    for (k, v) in comments {
        writeln!(w, "# {k}: {v}")?;
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// One row per point: `config_id,x`.
pub fn write_ensemble_csv<W: Write>(mut w: W, configs: &[Configuration], comments: &[(&str, String)]) -> Result<()> {
    write_comments(&mut w, comments)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["config_id", "x"]).map_err(csv_err)?;
    for (id, c) in configs.iter().enumerate() {
        for x in c.points() {
            out.write_record([id.to_string(), x.to_string()]).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_ensemble_csv`]. Configurations are returned in
/// increasing id order; ids without rows (empty configurations) cannot be
/// represented and are simply absent.
pub fn parse_ensemble_csv(text: &str) -> Result<Vec<Configuration>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.len() != 2 || &headers[0] != "config_id" || &headers[1] != "x" {
        return Err(Error::Parse(format!("expected header `config_id,x`, got {headers:?}")));
    }
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let id: u64 = row[0].parse().map_err(|_| Error::Parse(format!("bad config_id {:?}", &row[0])))?;
        let x: f64 = row[1].parse().map_err(|_| Error::Parse(format!("bad coordinate {:?}", &row[1])))?;
        if !x.is_finite() {
            return Err(Error::Parse(format!("non-finite coordinate {x}")));
        }
        groups.entry(id).or_default().push(x);
    }
    Ok(groups.into_values().map(Configuration::new).collect())
}

/// Rows `(path_id, t, particle_index, x)`.
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    paths: &[(Vec<f64>, Vec<Configuration>)],
    comments: &[(&str, String)],
) -> Result<()> {
    write_comments(&mut w, comments)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["path_id", "t", "particle_index", "x"]).map_err(csv_err)?;
    for (pid, (times, states)) in paths.iter().enumerate() {
        for (t, c) in times.iter().zip(states) {
            for (i, x) in c.points().iter().enumerate() {
                out.write_record([pid.to_string(), t.to_string(), i.to_string(), x.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Generic numeric table with a header row.
pub fn write_table_csv<W: Write>(
    mut w: W,
    header: &[&str],
    rows: &[Vec<f64>],
    comments: &[(&str, String)],
) -> Result<()> {
    write_comments(&mut w, comments)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        out.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
