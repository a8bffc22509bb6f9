use std::collections::{BTreeSet, HashMap};

use super::ClusteredDataset;
use crate::error::{Error, Result};

/// How neighbourhoods are formed.
#[derive(Debug, Clone, PartialEq)]
pub enum NeighborhoodRule {
    /// All other members of the observation's sub-location.
    SublocationMembership,
    /// All other members of the observation's location.
    LocationMembership,
    /// Explicit pairs of obs_ids; treated as undirected.
    EdgeList(Vec<(String, String)>),
    /// Same-location observations within Euclidean distance `d` (inclusive).
    DistanceThreshold(f64),
}

/// Symmetric, irreflexive neighbour sets over all observations of a dataset.
/// Neighbours never cross location boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodGraph {
    neighbors: Vec<Vec<usize>>,
    source: NeighborhoodRule,
    warnings: Vec<String>,
}

impl NeighborhoodGraph {
    /// Sorted neighbour indices of observation `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn source(&self) -> &NeighborhoodRule {
        &self.source
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

fn complete_within(groups: impl Iterator<Item = Vec<usize>>, n: usize) -> Vec<Vec<usize>> {
    let mut neighbors = vec![Vec::new(); n];
    for members in groups {
        for &i in &members {
            neighbors[i] = members.iter().copied().filter(|&k| k != i).collect();
        }
    }
    neighbors
}

pub fn build_neighborhoods(ds: &ClusteredDataset, rule: NeighborhoodRule) -> Result<NeighborhoodGraph> {
    let n = ds.len();
    let mut warnings = Vec::new();
    let neighbors = match &rule {
        NeighborhoodRule::SublocationMembership => {
            complete_within(ds.sublocations().iter().map(|g| g.members.clone()), n)
        }
        NeighborhoodRule::LocationMembership => complete_within(ds.locations().iter().map(|g| g.members.clone()), n),
        NeighborhoodRule::DistanceThreshold(d) => {
            if !(d.is_finite() && *d > 0.0) {
                return Err(Error::InvalidRule(format!("distance threshold must be positive, got {d}")));
            }
            let coords = ds
                .observations()
                .iter()
                .map(|o| {
                    o.coords
                        .ok_or_else(|| Error::InvalidRule(format!("observation `{}` has no coordinates", o.obs_id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut neighbors = vec![Vec::new(); n];
            for g in ds.locations() {
                for (a, &i) in g.members.iter().enumerate() {
                    for &k in &g.members[a + 1..] {
                        let (dx, dy) = (coords[i].0 - coords[k].0, coords[i].1 - coords[k].1);
                        if dx.hypot(dy) <= *d {
                            neighbors[i].push(k);
                            neighbors[k].push(i);
                        }
                    }
                }
            }
            for list in &mut neighbors {
                list.sort_unstable();
            }
            neighbors
        }
        NeighborhoodRule::EdgeList(edges) => {
            let index: HashMap<&str, usize> = ds
                .observations()
                .iter()
                .enumerate()
                .map(|(i, o)| (o.obs_id.as_str(), i))
                .collect();
            let mut directed = BTreeSet::new();
            for (a, b) in edges {
                let lookup = |id: &String| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidRule(format!("edge list references unknown obs_id `{id}`")))
                };
                let (i, k) = (lookup(a)?, lookup(b)?);
                if i == k {
                    warnings.push(format!("self-loop on `{a}` ignored"));
                    continue;
                }
                if ds.location_of(i) != ds.location_of(k) {
                    warnings.push(format!("edge ({a}, {b}) crosses locations; dropped"));
                    continue;
                }
                directed.insert((i, k));
            }
            let asymmetric = directed.iter().filter(|&&(i, k)| !directed.contains(&(k, i))).count();
            if asymmetric > 0 {
                warnings.push(format!("{asymmetric} edges listed in one direction only; symmetrized"));
            }
            let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
            for &(i, k) in &directed {
                neighbors[i].insert(k);
                neighbors[k].insert(i);
            }
            neighbors.into_iter().map(|s| s.into_iter().collect()).collect()
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(NeighborhoodGraph {
        neighbors,
        source: rule,
        warnings,
    })
}
