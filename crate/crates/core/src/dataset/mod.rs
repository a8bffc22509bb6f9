//! Clustered cross-sectional data: observations nested in sub-locations
//! nested in locations.

mod csv_io;
mod graph;

use std::collections::{HashMap, HashSet};

pub use csv_io::{load_csv, load_edge_list, write_csv, CsvSchema};
pub use graph::{build_neighborhoods, NeighborhoodGraph, NeighborhoodRule};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub obs_id: String,
    pub location_id: String,
    pub sublocation_id: String,
    pub selected: bool,
    /// Present exactly when `selected` is true.
    pub outcome: Option<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub coords: Option<(f64, f64)>,
}

/// A location or sub-location with the indices of its members, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub id: String,
    pub members: Vec<usize>,
}

/// Validated, immutable collection of observations with its location index.
///
/// Locations are numbered in order of first appearance; a sub-location is
/// identified by the pair (location, sub-location id), so two locations may
/// reuse the same sub-location label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    observations: Vec<Observation>,
    p: usize,
    q: usize,
    locations: Vec<Group>,
    sublocations: Vec<Group>,
    /// (location index) for each sub-location
    sublocation_parent: Vec<usize>,
    location_of: Vec<usize>,
    sublocation_of: Vec<usize>,
    x_names: Vec<String>,
    z_names: Vec<String>,
}

impl ClusteredDataset {
    /// Validates `observations` and builds the location index.
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| Error::InvalidDataset("no observations".into()))?;
        let (p, q) = (first.x.len(), first.z.len());

        let mut ids = HashSet::with_capacity(observations.len());
        let mut loc_index: HashMap<&str, usize> = HashMap::new();
        let mut sub_index: HashMap<(usize, &str), usize> = HashMap::new();
        let mut locations: Vec<Group> = Vec::new();
        let mut sublocations: Vec<Group> = Vec::new();
        let mut sublocation_parent = Vec::new();
        let mut location_of = Vec::with_capacity(observations.len());
        let mut sublocation_of = Vec::with_capacity(observations.len());

        for (i, obs) in observations.iter().enumerate() {
            let bad = |message: String| Error::InvalidDataset(format!("observation `{}`: {message}", obs.obs_id));
            if !ids.insert(obs.obs_id.as_str()) {
                return Err(bad("duplicate obs_id".into()));
            }
            if obs.x.len() != p || obs.z.len() != q {
                return Err(bad(format!(
                    "covariate lengths ({}, {}) differ from ({p}, {q})",
                    obs.x.len(),
                    obs.z.len()
                )));
            }
            match (obs.selected, obs.outcome) {
                (true, None) => return Err(bad("selected but outcome missing".into())),
                (false, Some(_)) => return Err(bad("outcome present on a non-selected row".into())),
                (true, Some(y)) if !y.is_finite() => return Err(bad("non-finite outcome".into())),
                _ => {}
            }
            if obs.x.iter().chain(&obs.z).any(|v| !v.is_finite()) {
                return Err(bad("non-finite covariate".into()));
            }
            if let Some((a, b)) = obs.coords {
                if !a.is_finite() || !b.is_finite() {
                    return Err(bad("non-finite coordinate".into()));
                }
            }

            let next = locations.len();
            let loc = *loc_index.entry(obs.location_id.as_str()).or_insert(next);
            if loc == locations.len() {
                locations.push(Group {
                    id: obs.location_id.clone(),
                    members: Vec::new(),
                });
            }
            locations[loc].members.push(i);

            let next = sublocations.len();
            let sub = *sub_index.entry((loc, obs.sublocation_id.as_str())).or_insert(next);
            if sub == sublocations.len() {
                sublocations.push(Group {
                    id: obs.sublocation_id.clone(),
                    members: Vec::new(),
                });
                sublocation_parent.push(loc);
            }
            sublocations[sub].members.push(i);

            location_of.push(loc);
            sublocation_of.push(sub);
        }

        if locations.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "at least 2 locations required, found {}",
                locations.len()
            )));
        }

        Ok(Self {
            observations,
            p,
            q,
            locations,
            sublocations,
            sublocation_parent,
            location_of,
            sublocation_of,
            x_names: (1..=p).map(|k| format!("x{k}")).collect(),
            z_names: (1..=q).map(|k| format!("z{k}")).collect(),
        })
    }

    /// Renames the covariate columns used in reports.
    pub fn with_names(mut self, x_names: Vec<String>, z_names: Vec<String>) -> Result<Self> {
        if x_names.len() != self.p {
            return Err(Error::Dimension { expected: self.p, got: x_names.len() });
        }
        if z_names.len() != self.q {
            return Err(Error::Dimension { expected: self.q, got: z_names.len() });
        }
        self.x_names = x_names;
        self.z_names = z_names;
        Ok(self)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    pub fn locations(&self) -> &[Group] {
        &self.locations
    }

    pub fn sublocations(&self) -> &[Group] {
        &self.sublocations
    }

    /// Location index of sub-location `sub`.
    pub fn sublocation_parent(&self, sub: usize) -> usize {
        self.sublocation_parent[sub]
    }

    pub fn location_of(&self, i: usize) -> usize {
        self.location_of[i]
    }

    pub fn sublocation_of(&self, i: usize) -> usize {
        self.sublocation_of[i]
    }

    /// Indices of selected observations, in dataset order.
    pub fn selected_indices(&self) -> Vec<usize> {
        self.observations
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.selected.then_some(i))
            .collect()
    }

    pub fn n_selected(&self) -> usize {
        self.observations.iter().filter(|o| o.selected).count()
    }

    /// Human-readable notes about structure that is valid but unusable for
    /// differencing (locations with a single observation).
    pub fn warnings(&self) -> Vec<String> {
        self.locations
            .iter()
            .filter(|g| g.members.len() < 2)
            .map(|g| format!("location `{}` has a single observation; no within-location pair exists", g.id))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn obs(id: &str, loc: &str, sub: &str, y: Option<f64>, x: f64, z: f64) -> Observation {
        Observation {
            obs_id: id.into(),
            location_id: loc.into(),
            sublocation_id: sub.into(),
            selected: y.is_some(),
            outcome: y,
            x: vec![x],
            z: vec![z],
            coords: None,
        }
    }

    #[test]
    fn builds_location_index() {
        let ds = ClusteredDataset::new(vec![
            obs("a", "1", "1", Some(1.0), 0.1, 0.2),
            obs("b", "2", "1", None, 0.3, 0.4),
            obs("c", "1", "2", Some(2.0), 0.5, 0.6),
            obs("d", "2", "1", Some(0.0), 0.7, 0.8),
        ])
        .unwrap();
        assert_eq!(ds.locations().len(), 2);
        assert_eq!(ds.locations()[0].members, vec![0, 2]);
        // sub-location "1" in location "1" and in location "2" are distinct
        assert_eq!(ds.sublocations().len(), 3);
        assert_eq!(ds.sublocation_of(1), ds.sublocation_of(3));
        assert_ne!(ds.sublocation_of(0), ds.sublocation_of(1));
        assert_eq!(ds.selected_indices(), vec![0, 2, 3]);
        assert!(ds.warnings().is_empty());
    }

    #[test]
    fn rejects_invariant_violations() {
        let mut bad = obs("b", "2", "1", None, 0.0, 0.0);
        bad.outcome = Some(1.0);
        let err = ClusteredDataset::new(vec![obs("a", "1", "1", Some(1.0), 0.0, 0.0), bad]).unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");

        let dup = ClusteredDataset::new(vec![
            obs("a", "1", "1", Some(1.0), 0.0, 0.0),
            obs("a", "2", "1", Some(1.0), 0.0, 0.0),
        ]);
        assert!(dup.unwrap_err().to_string().contains("duplicate"));

        let one_loc = ClusteredDataset::new(vec![
            obs("a", "1", "1", Some(1.0), 0.0, 0.0),
            obs("b", "1", "1", Some(1.0), 0.0, 0.0),
        ]);
        assert!(one_loc.is_err());
    }

    #[test]
    fn singleton_location_warns() {
        let ds = ClusteredDataset::new(vec![
            obs("a", "1", "1", Some(1.0), 0.0, 0.0),
            obs("b", "1", "1", Some(1.0), 0.0, 0.0),
            obs("c", "2", "1", Some(1.0), 0.0, 0.0),
        ])
        .unwrap();
        let w = ds.warnings();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("`2`"));
    }
}
