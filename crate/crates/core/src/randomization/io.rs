//! Assignment CSV, trigger-log JSON lines and plain unit-id lists.

use std::io::{BufRead, Read, Write};

use super::{AssignmentRecord, TriggerEvent};
use crate::clustering::ClusterId;
use crate::error::{Error, Result};
use crate::graph::UnitId;

pub const ASSIGNMENT_HEADER: [&str; 6] = ["unit_id", "experiment", "cluster_id", "segment", "r", "w"];

pub fn write_assignments<'a, W: Write>(records: impl IntoIterator<Item = &'a AssignmentRecord>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ASSIGNMENT_HEADER)?;
    for rec in records {
        let segment = rec.segment.to_string();
        w.write_record([
            rec.unit.as_str(),
            &rec.experiment,
            rec.cluster.as_str(),
            &segment,
            if rec.cluster_randomized { "1" } else { "0" },
            &rec.condition,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignments<R: Read>(reader: R) -> Result<Vec<AssignmentRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ASSIGNMENT_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("assignment CSV header must be `{}`", ASSIGNMENT_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let parse_err = |message: String| Error::Parse { line, message };
        let unit = UnitId::new(&record[0]).map_err(|e| parse_err(e.to_string()))?;
        let cluster = ClusterId::new(&record[2]).map_err(|e| parse_err(e.to_string()))?;
        let segment = record[3]
            .parse()
            .map_err(|_| parse_err(format!("bad segment `{}`", &record[3])))?;
        let cluster_randomized = match &record[4] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("r must be 0 or 1, got `{other}`"))),
        };
        out.push(AssignmentRecord {
            unit,
            experiment: record[1].to_string(),
            cluster,
            segment,
            cluster_randomized,
            condition: record[5].to_string(),
        });
    }
    Ok(out)
}

pub fn write_trigger_log<'a, W: Write>(events: impl IntoIterator<Item = &'a TriggerEvent>, mut writer: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_trigger_log<R: BufRead>(reader: R) -> Result<Vec<TriggerEvent>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// One unit id per line; blank lines and `#` comments are skipped.
pub fn read_unit_list<R: BufRead>(reader: R) -> Result<Vec<UnitId>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let id = line.trim();
        if id.is_empty() || id.starts_with('#') {
            continue;
        }
        out.push(UnitId::new(id).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
