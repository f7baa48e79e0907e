//! Replicated mixed designs drawn through the assignment pipeline.

use std::sync::Arc;

use crate::clustering::{ClusterId, Clustering};
use crate::error::{Error, Result};
use crate::estimation::{
    aggregate_view, cells_from_observations, CellKey, ConditionCell, Schema, Selection, TriggerPolicy, UnitView,
};
use crate::randomization::{
    pick_condition_index, ClusteringRef, Condition, ExperimentConfig, ExperimentHashers, ExperimentStatus,
    SegmentSet, Universe,
};

use super::Population;

pub const TREATMENT: &str = "treatment";
pub const CONTROL: &str = "control";

/// A two-arm mixed experiment over a fixed population, re-randomized once
/// per replicate by renaming the experiment.
#[derive(Clone, Debug)]
pub struct RandomizedDesign {
    universe: Universe,
    name: String,
    p: f64,
    cluster_fraction: f64,
    cluster_ids: Vec<ClusterId>,
    /// Dense cluster of every population unit.
    labels: Vec<u32>,
    /// Mix-stage key of every cluster.
    segment_keys: Vec<Vec<u8>>,
    unit_keys: Vec<Vec<u8>>,
}

/// One replicate's `W` and `R` per unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignDraw {
    pub treated: Vec<bool>,
    pub cluster_randomized: Vec<bool>,
}

impl RandomizedDesign {
    /// `p` is the treatment share, `cluster_fraction` the share of segments
    /// randomized by cluster. Every segment of the universe is allocated.
    pub fn new(
        population: &Population,
        clustering: &Clustering,
        p: f64,
        cluster_fraction: f64,
        name: impl Into<String>,
    ) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("treatment share must lie in (0, 1), got {p}")));
        }
        if !(0.0..=1.0).contains(&cluster_fraction) {
            return Err(Error::InvalidParameter(format!(
                "cluster_fraction must lie in [0, 1], got {cluster_fraction}"
            )));
        }
        let name = name.into();
        let universe = Universe::new(
            format!("{name}-universe"),
            ClusteringRef {
                name: clustering.name().to_string(),
                date: clustering.date().to_string(),
            },
        )?;
        let (labels, _) = population.dense_labels(clustering)?;
        let mut cluster_ids = vec![None; labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)];
        for (i, &l) in labels.iter().enumerate() {
            if cluster_ids[l as usize].is_none() {
                cluster_ids[l as usize] = clustering.cluster_of(&population.ids()[i]).cloned();
            }
        }
        let cluster_ids: Vec<ClusterId> = cluster_ids.into_iter().map(|c| c.expect("every label used")).collect();
        let probe = Self::config(&universe, &name, p, cluster_fraction, 0);
        let hashers = ExperimentHashers::new(&universe, &probe);
        let segment_keys = cluster_ids
            .iter()
            .map(|c| hashers.segment_of(&universe, c).to_string().into_bytes())
            .collect();
        let unit_keys = population.ids().iter().map(|u| u.as_bytes().to_vec()).collect();
        Ok(Self {
            universe,
            name,
            p,
            cluster_fraction,
            cluster_ids,
            labels,
            segment_keys,
            unit_keys,
        })
    }

    fn config(universe: &Universe, name: &str, p: f64, cluster_fraction: f64, replicate: u64) -> ExperimentConfig {
        ExperimentConfig {
            name: format!("{name}/{replicate}"),
            universe: universe.name.clone(),
            segments: (0..universe.num_segments).collect::<SegmentSet>(),
            cluster_fraction,
            conditions: vec![
                Condition {
                    label: TREATMENT.into(),
                    weight: p,
                },
                Condition {
                    label: CONTROL.into(),
                    weight: 1.0 - p,
                },
            ],
            status: ExperimentStatus::Running,
        }
    }

    /// The experiment configuration behind replicate `replicate`.
    pub fn experiment(&self, replicate: u64) -> ExperimentConfig {
        Self::config(&self.universe, &self.name, self.p, self.cluster_fraction, replicate)
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_ids.len()
    }

    pub(crate) fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Same draws as [`crate::randomization::assign`] on every unit.
    pub fn draw(&self, replicate: u64) -> DesignDraw {
        let exp = self.experiment(replicate);
        let h = ExperimentHashers::new(&self.universe, &exp);
        let clusters: Vec<(bool, bool)> = self
            .cluster_ids
            .iter()
            .zip(&self.segment_keys)
            .map(|(c, seg)| {
                let r = h.mix.unit_interval(seg) < self.cluster_fraction;
                let w = r && pick_condition_index(&exp.conditions, h.condition.unit_interval(c.as_bytes())) == 0;
                (r, w)
            })
            .collect();
        let mut draw = DesignDraw {
            treated: Vec::with_capacity(self.labels.len()),
            cluster_randomized: Vec::with_capacity(self.labels.len()),
        };
        for (i, &l) in self.labels.iter().enumerate() {
            let (r, w) = clusters[l as usize];
            let w = if r {
                w
            } else {
                pick_condition_index(&exp.conditions, h.condition.unit_interval(&self.unit_keys[i])) == 0
            };
            draw.treated.push(w);
            draw.cluster_randomized.push(r);
        }
        draw
    }
}

/// Condition cells from simulated columns, with the largest single
/// observation's share of each cell's unit count.
pub(crate) struct ColumnCells {
    pub cells: Vec<ConditionCell>,
    pub max_share: Vec<(CellKey, f64)>,
}

impl ColumnCells {
    pub fn max_share(&self, key: &CellKey) -> f64 {
        self.max_share.iter().find(|(k, _)| k == key).map_or(0.0, |(_, s)| *s)
    }
}

/// Condition 0 is treatment, 1 control; `values` is `n × width` row-major
/// `[Y.., X..]`.
pub(crate) fn cells_from_columns(
    labels: &[u32],
    clusters: usize,
    draw: &DesignDraw,
    triggered: &[bool],
    values: &[f64],
    schema: &Arc<Schema>,
    policy: TriggerPolicy,
) -> Result<ColumnCells> {
    let condition: Vec<u32> = draw.treated.iter().map(|&t| u32::from(!t)).collect();
    let view = UnitView {
        cluster: labels,
        condition: &condition,
        r: &draw.cluster_randomized,
        triggered,
        values,
        width: schema.values(),
        clusters,
    };
    let obs = aggregate_view(&view, Selection::Policy(policy))?;
    let mut totals = [[(0usize, 0usize); 2]; 2];
    for i in 0..obs.len() {
        let slot = &mut totals[obs.condition[i] as usize][usize::from(obs.r[i])];
        slot.0 += obs.s[i];
        slot.1 = slot.1.max(obs.s[i]);
    }
    let names = [TREATMENT.to_string(), CONTROL.to_string()];
    let mut max_share = Vec::new();
    for (c, row) in totals.iter().enumerate() {
        for (r, &(total, max)) in row.iter().enumerate() {
            if total > 0 {
                max_share.push((CellKey::new(names[c].clone(), r == 1), max as f64 / total as f64));
            }
        }
    }
    Ok(ColumnCells {
        cells: cells_from_observations(&obs, &names, schema),
        max_share,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::UnitId;
    use crate::randomization::assign;

    fn clustering(n: usize, size: usize) -> Clustering {
        Clustering::from_pairs(
            "c",
            "2024-01-01",
            (0..n).map(|i| {
                (
                    UnitId::new(format!("u{i}")).unwrap(),
                    ClusterId::new(format!("c{}", i / size)).unwrap(),
                )
            }),
        )
        .unwrap()
    }

    #[test]
    fn matches_the_assignment_pipeline() {
        let c = clustering(600, 3);
        let pop = Population::from_clustering(&c);
        let design = RandomizedDesign::new(&pop, &c, 0.3, 0.5, "d").unwrap();
        for rep in [0, 7] {
            let draw = design.draw(rep);
            let exp = design.experiment(rep);
            for (i, u) in pop.ids().iter().enumerate() {
                let rec = assign(design.universe(), &exp, &c, u).unwrap();
                assert_eq!(rec.cluster_randomized, draw.cluster_randomized[i]);
                assert_eq!(rec.condition == TREATMENT, draw.treated[i]);
            }
        }
    }

    #[test]
    fn replicates_differ_and_repeat() {
        let c = clustering(300, 2);
        let pop = Population::from_clustering(&c);
        let design = RandomizedDesign::new(&pop, &c, 0.5, 1.0, "d").unwrap();
        assert_eq!(design.draw(3), design.draw(3));
        assert_ne!(design.draw(3), design.draw(4));
        assert!(design.draw(3).cluster_randomized.iter().all(|&r| r));
    }

    #[test]
    fn rejects_degenerate_shares() {
        let c = clustering(4, 2);
        let pop = Population::from_clustering(&c);
        assert!(RandomizedDesign::new(&pop, &c, 0.0, 1.0, "d").is_err());
        assert!(RandomizedDesign::new(&pop, &c, 0.5, 1.5, "d").is_err());
    }
}
