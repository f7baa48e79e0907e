//! Outcome tables (`unit_id,metric:<name>..,pre:<name>..`) and the join of
//! outcomes, assignments and trigger events into an analysable table.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::sync::Arc;

use super::{OutcomeTable, Schema, UnitOutcomeRow};
use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::graph::UnitId;
use crate::randomization::{AssignmentRecord, TriggerEvent};

/// Raw outcome values before they are joined with assignments.
#[derive(Clone, Debug)]
pub struct OutcomeValues {
    pub schema: Arc<Schema>,
    pub rows: Vec<(UnitId, Vec<f64>, Vec<f64>)>,
}

pub fn read_outcomes<R: Read>(reader: R) -> Result<OutcomeValues> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.is_empty() || &headers[0] != "unit_id" {
        return Err(Error::Parse {
            line: 1,
            message: "outcome CSV must start with a `unit_id` column".into(),
        });
    }
    let (mut metrics, mut features) = (Vec::new(), Vec::new());
    let mut columns = Vec::new();
    for h in headers.iter().skip(1) {
        if let Some(name) = h.strip_prefix("metric:") {
            columns.push((true, metrics.len()));
            metrics.push(name.to_string());
        } else if let Some(name) = h.strip_prefix("pre:") {
            columns.push((false, features.len()));
            features.push(name.to_string());
        } else {
            return Err(Error::Parse {
                line: 1,
                message: format!("column `{h}` is neither `metric:<name>` nor `pre:<name>`"),
            });
        }
    }
    let schema = Arc::new(Schema::new(metrics, features)?);
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let unit = UnitId::new(&record[0]).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let mut y = vec![0.0; schema.metrics.len()];
        let mut x = vec![0.0; schema.features.len()];
        for (field, &(is_metric, idx)) in record.iter().skip(1).zip(&columns) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value `{field}`"),
                });
            }
            if is_metric {
                y[idx] = v;
            } else {
                x[idx] = v;
            }
        }
        rows.push((unit, y, x));
    }
    Ok(OutcomeValues { schema, rows })
}

pub fn write_outcomes<W: Write>(table: &OutcomeTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let schema = table.schema();
    let header: Vec<String> = std::iter::once("unit_id".to_string())
        .chain(schema.metrics.iter().map(|m| format!("metric:{m}")))
        .chain(schema.features.iter().map(|f| format!("pre:{f}")))
        .collect();
    w.write_record(&header)?;
    for row in table.rows() {
        let fields: Vec<String> = std::iter::once(row.unit.to_string())
            .chain(row.y.iter().chain(&row.x).map(|v| v.to_string()))
            .collect();
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

fn mismatch(what: &str, ids: &[&UnitId]) -> Error {
    let sample: Vec<String> = ids.iter().take(10).map(|u| u.to_string()).collect();
    Error::Integrity(format!("{} {what} (first: {})", ids.len(), sample.join(", ")))
}

/// Joins the three inputs into an outcome table plus the clustering implied
/// by the assignment records. Every assigned unit must have outcomes and
/// vice versa; trigger events must name assigned units with matching
/// `(w, r)`.
pub fn join(
    outcomes: OutcomeValues,
    assignments: &[AssignmentRecord],
    triggers: &[TriggerEvent],
) -> Result<(OutcomeTable, Clustering)> {
    let by_unit: HashMap<&UnitId, &AssignmentRecord> = assignments.iter().map(|a| (&a.unit, a)).collect();
    if by_unit.len() != assignments.len() {
        return Err(Error::Integrity("assignment file lists a unit more than once".into()));
    }
    let outcome_units: HashSet<&UnitId> = outcomes.rows.iter().map(|r| &r.0).collect();
    let unassigned: Vec<&UnitId> = outcomes.rows.iter().map(|r| &r.0).filter(|u| !by_unit.contains_key(u)).collect();
    if !unassigned.is_empty() {
        return Err(mismatch("outcome units have no assignment", &unassigned));
    }
    let missing: Vec<&UnitId> = assignments
        .iter()
        .map(|a| &a.unit)
        .filter(|u| !outcome_units.contains(u))
        .collect();
    if !missing.is_empty() {
        return Err(mismatch("assigned units have no outcomes", &missing));
    }
    let mut triggered = HashSet::new();
    let mut strangers = Vec::new();
    for e in triggers {
        match by_unit.get(&e.unit) {
            None => strangers.push(&e.unit),
            Some(a) if a.condition != e.w || a.cluster_randomized != e.r => {
                return Err(Error::Integrity(format!(
                    "trigger event {} for `{}` disagrees with its assignment",
                    e.event_index, e.unit
                )));
            }
            Some(_) => {
                triggered.insert(&e.unit);
            }
        }
    }
    if !strangers.is_empty() {
        return Err(mismatch("triggered units have no assignment", &strangers));
    }
    let clustering = Clustering::from_pairs(
        "assignments",
        "1970-01-01",
        assignments.iter().map(|a| (a.unit.clone(), a.cluster.clone())),
    )?;
    let rows = outcomes
        .rows
        .iter()
        .map(|(unit, y, x)| {
            let a = by_unit[unit];
            UnitOutcomeRow {
                unit: unit.clone(),
                y: y.clone(),
                x: x.clone(),
                triggered: triggered.contains(unit),
                w: a.condition.clone(),
                r: a.cluster_randomized,
            }
        })
        .collect();
    Ok((OutcomeTable::new(outcomes.schema, rows)?, clustering))
}
