//! Stateful wrapper over the pure assignment pipeline: registries of
//! universes, experiments and clusterings, plus the trigger log.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{assign, check_disjoint, ClusteringRef, ExperimentConfig, Universe};
use crate::clustering::{validate_date, Clustering};
use crate::error::{Error, Result};
use crate::graph::UnitId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub unit: UnitId,
    pub w: String,
    #[serde(with = "crate::serde_bit")]
    pub r: bool,
    pub event_index: u64,
}

/// Append-only, totally ordered log of assignment fetches. Safe to append
/// from many threads; `snapshot` returns a consistent prefix.
#[derive(Debug, Default)]
pub struct TriggerLog {
    events: Mutex<Vec<TriggerEvent>>,
}

impl TriggerLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a log from stored events, which must have indices `0, 1, ...`.
    pub fn from_events(events: Vec<TriggerEvent>) -> Result<Self> {
        if let Some((i, e)) = events.iter().enumerate().find(|(i, e)| e.event_index != *i as u64) {
            return Err(Error::Integrity(format!(
                "trigger event {i} carries event_index {}",
                e.event_index
            )));
        }
        Ok(Self {
            events: Mutex::new(events),
        })
    }

    /// Appends an event and returns its index.
    pub fn append(&self, unit: UnitId, w: String, r: bool) -> u64 {
        let mut events = self.events.lock().expect("trigger log poisoned");
        let event_index = events.len() as u64;
        events.push(TriggerEvent {
            unit,
            w,
            r,
            event_index,
        });
        event_index
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("trigger log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<TriggerEvent> {
        self.events.lock().expect("trigger log poisoned").clone()
    }
}

#[derive(Debug, Default)]
pub struct AssignmentService {
    universes: IndexMap<String, Universe>,
    experiments: IndexMap<String, ExperimentConfig>,
    clusterings: HashMap<ClusteringRef, Arc<Clustering>>,
    log: TriggerLog,
}

impl AssignmentService {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a clustering under its `(name, date)`.
    pub fn add_clustering(&mut self, clustering: Clustering) {
        let key = ClusteringRef {
            name: clustering.name().to_string(),
            date: clustering.date().to_string(),
        };
        self.clusterings.insert(key, Arc::new(clustering));
    }

    pub fn add_universe(&mut self, universe: Universe) -> Result<()> {
        universe.validate()?;
        if self.universes.contains_key(&universe.name) {
            return Err(Error::Conflict(format!("universe `{}` already exists", universe.name)));
        }
        self.universes.insert(universe.name.clone(), universe);
        Ok(())
    }

    pub fn add_experiment(&mut self, experiment: ExperimentConfig) -> Result<()> {
        let universe = self.universe(&experiment.universe)?;
        experiment.validate(universe)?;
        if self.experiments.contains_key(&experiment.name) {
            return Err(Error::Conflict(format!("experiment `{}` already exists", experiment.name)));
        }
        check_disjoint(self.experiments.values().chain([&experiment]))?;
        self.experiments.insert(experiment.name.clone(), experiment);
        Ok(())
    }

    pub fn stop_experiment(&mut self, name: &str) -> Result<()> {
        let e = self.experiments.get_mut(name).ok_or_else(|| Error::Unknown {
            kind: "experiment",
            name: name.into(),
        })?;
        e.status = super::ExperimentStatus::Stopped;
        Ok(())
    }

    pub fn universe(&self, name: &str) -> Result<&Universe> {
        self.universes.get(name).ok_or_else(|| Error::Unknown {
            kind: "universe",
            name: name.into(),
        })
    }

    pub fn experiment(&self, name: &str) -> Result<&ExperimentConfig> {
        self.experiments.get(name).ok_or_else(|| Error::Unknown {
            kind: "experiment",
            name: name.into(),
        })
    }

    pub fn trigger_log(&self) -> &TriggerLog {
        &self.log
    }

    /// Returns `(W, R)` for the unit and logs a trigger event, or `None`
    /// (logging nothing) when the unit is outside the experiment's population.
    pub fn get_assignment(&self, universe: &str, experiment: &str, unit: &UnitId) -> Result<Option<(String, bool)>> {
        let u = self.universe(universe)?;
        let e = self.experiment(experiment)?;
        if e.universe != u.name || !e.is_running() {
            return Err(Error::InvalidParameter(format!(
                "experiment `{experiment}` is not running in universe `{universe}`"
            )));
        }
        let clustering = self.clusterings.get(&u.clustering_ref).ok_or_else(|| Error::Unknown {
            kind: "clustering",
            name: format!("{}@{}", u.clustering_ref.name, u.clustering_ref.date),
        })?;
        Ok(assign(u, e, clustering, unit).map(|rec| {
            self.log.append(rec.unit, rec.condition.clone(), rec.cluster_randomized);
            (rec.condition, rec.cluster_randomized)
        }))
    }

    /// Points the universe at a newer version of the same clustering. Refused
    /// while any experiment in the universe is running.
    pub fn refresh_universe(&mut self, universe: &str, new_date: &str) -> Result<&Universe> {
        validate_date(new_date)?;
        self.universe(universe)?;
        if let Some(running) = self.experiments.values().find(|e| e.universe == universe && e.is_running()) {
            return Err(Error::RunningExperiment {
                universe: universe.into(),
                experiment: running.name.clone(),
            });
        }
        let u = self.universes.get_mut(universe).expect("checked above");
        u.clustering_ref.date = new_date.to_string();
        Ok(u)
    }
}
