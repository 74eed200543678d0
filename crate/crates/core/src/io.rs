//! Probe/click data files: CSV with the header `mean_photons,trials,clicks`, one row per probe.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomography::{ClickRecord, ProbeSet};

pub const PROBE_CSV_HEADER: [&str; 3] = ["mean_photons", "trials", "clicks"];

#[derive(Debug, Serialize, Deserialize)]
struct ProbeRow {
    mean_photons: f64,
    trials: u64,
    clicks: u64,
}

pub fn read_probe_csv<R: Read>(reader: R) -> Result<(ProbeSet, ClickRecord)> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers().map_err(|e| Error::Parse(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != PROBE_CSV_HEADER {
        return Err(Error::Parse(format!(
            "expected header \"{}\", found \"{}\"",
            PROBE_CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let rows = csv
        .deserialize::<ProbeRow>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse(e.to_string()))?;
    let first = rows.first().ok_or_else(|| Error::Parse("no probe rows".into()))?;
    let trials = first.trials;
    if let Some(row) = rows.iter().find(|r| r.trials != trials) {
        return Err(Error::Parse(format!(
            "all probes must use the same number of trials ({trials} vs {})",
            row.trials
        )));
    }
    let probes = ProbeSet::new(rows.iter().map(|r| r.mean_photons).collect(), trials)?;
    let record = ClickRecord::new(rows.iter().map(|r| r.clicks).collect(), trials)?;
    Ok((probes, record))
}

pub fn write_probe_csv<W: Write>(writer: W, probes: &ProbeSet, record: &ClickRecord) -> Result<()> {
    if probes.len() != record.len() {
        return Err(Error::Dimension("probe and click counts differ".into()));
    }
    let mut csv = csv::Writer::from_writer(writer);
    for (mu, clicks) in probes.intensities().iter().zip(record.clicks()) {
        csv.serialize(ProbeRow {
            mean_photons: *mu,
            trials: record.trials(),
            clicks: *clicks,
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    csv.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}
