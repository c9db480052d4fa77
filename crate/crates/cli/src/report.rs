//! Report documents written by `verify` and read back by `report`.
//!
//! The timestamp lives only in `metadata.timestamp_unix`; everything else is
//! a pure function of the configuration.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use loggas_core::semigroup::{VerificationReport, REPORT_SCHEMA_VERSION};
use loggas_core::{Error, Result};

pub const TOOL: &str = "loggas";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub timestamp_unix: u64,
}

impl Metadata {
    pub fn new(subcommand: &str, config_hash: &str, seed: u64) -> Self {
        let timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema_version: REPORT_SCHEMA_VERSION,
            subcommand: subcommand.into(),
            config_hash: config_hash.into(),
            seed,
            timestamp_unix,
        }
    }
}

/// Output of `loggas verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub metadata: Metadata,
    /// Label of the potential/cell the reports belong to.
    pub experiment: String,
    pub reports: Vec<VerificationReport>,
    pub all_pass: bool,
}

impl ReportDocument {
    pub fn new(metadata: Metadata, experiment: String, reports: Vec<VerificationReport>) -> Self {
        let all_pass = reports.iter().all(|r| r.pass);
        Self { metadata, experiment, reports, all_pass }
    }
}

pub fn parse_report(text: &str) -> Result<ReportDocument> {
    let doc: ReportDocument = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.metadata.tool != TOOL {
        return Err(Error::Parse(format!("not a {TOOL} report (tool = {:?})", doc.metadata.tool)));
    }
    if doc.metadata.schema_version != REPORT_SCHEMA_VERSION
        || doc.reports.iter().any(|r| r.schema_version != REPORT_SCHEMA_VERSION)
    {
        return Err(Error::Parse(format!("unsupported schema version (expected {REPORT_SCHEMA_VERSION})")));
    }
    if doc.all_pass != doc.reports.iter().all(|r| r.pass) {
        return Err(Error::Parse("all_pass disagrees with the reports".into()));
    }
    Ok(doc)
}

/// One row of the consolidated summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub inequality: String,
    pub function: String,
    #[serde(rename = "K")]
    pub curvature: f64,
    pub t: f64,
    pub margin: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hashes: Vec<String>,
    pub rows: Vec<SummaryRow>,
    pub all_pass: bool,
}

pub fn summarize(docs: &[ReportDocument]) -> Summary {
    let rows: Vec<SummaryRow> = docs
        .iter()
        .flat_map(|d| {
            d.reports.iter().map(|r| SummaryRow {
                experiment: d.experiment.clone(),
                inequality: r.inequality.clone(),
                function: r.function.clone(),
                curvature: r.curvature,
                t: r.t,
                margin: r.margin,
                z: r.z,
                pass: r.pass,
            })
        })
        .collect();
    Summary {
        config_hashes: docs.iter().map(|d| d.metadata.config_hash.clone()).collect(),
        all_pass: rows.iter().all(|r| r.pass),
        rows,
    }
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for h in &self.config_hashes {
            out.push_str(&format!("# config_hash: {h}\n"));
        }
        out.push_str("experiment,inequality,function,K,t,margin,z,pass\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.experiment, r.inequality, r.function, r.curvature, r.t, r.margin, r.z, r.pass
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    pub(crate) fn report(pass: bool) -> VerificationReport {
        VerificationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            inequality: "be".into(),
            function: "bump_linear".into(),
            t: 0.1,
            curvature: 0.0,
            left: 1.0,
            left_stderr: 0.01,
            right: if pass { 1.1 } else { 0.5 },
            right_stderr: 0.01,
            margin: if pass { 0.1 } else { -0.5 },
            pooled_stderr: 0.01,
            z: if pass { 10.0 } else { -50.0 },
            z_crit: 3.0,
            pass,
            inconclusive: false,
            n_samples: 100,
            seed: 1,
            extra: BTreeMap::new(),
        }
    }

    fn doc(reports: Vec<VerificationReport>) -> ReportDocument {
        ReportDocument::new(Metadata::new("verify", "abc", 1), "cell".into(), reports)
    }

    #[test]
    fn documents_round_trip() {
        let d = doc(vec![report(true), report(false)]);
        assert!(!d.all_pass);
        let text = serde_json::to_string_pretty(&d).unwrap();
        assert_eq!(parse_report(&text).unwrap(), d);
    }

    #[test]
    fn schema_mismatches_are_rejected() {
        let mut d = doc(vec![report(true)]);
        d.metadata.schema_version += 1;
        assert!(parse_report(&serde_json::to_string(&d).unwrap()).is_err());
        let mut d = doc(vec![report(true)]);
        d.all_pass = false;
        assert!(parse_report(&serde_json::to_string(&d).unwrap()).is_err());
        assert!(parse_report("{\"reports\": []}").is_err());
        assert!(parse_report("[]").is_err());
    }

    #[test]
    fn summary_examples() {
        let empty = summarize(&[]);
        assert!(empty.rows.is_empty() && empty.all_pass);
        assert_eq!(empty.to_csv(), "experiment,inequality,function,K,t,margin,z,pass\n");

        let two = summarize(&[doc(vec![report(true)]), doc(vec![report(true)])]);
        assert_eq!(two.rows.len(), 2);
        assert!(two.all_pass);

        let mixed = summarize(&[doc(vec![report(true)]), doc(vec![report(false)])]);
        assert!(!mixed.all_pass);
        assert_eq!(mixed.to_csv().lines().count(), 2 + 1 + 2);
    }
}
