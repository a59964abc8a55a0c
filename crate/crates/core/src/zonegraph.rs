//! Spatial zones and the pairwise geometry the migration models consume:
//! great-circle distances `d_ij` and intervening-opportunity populations `s_ij`.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// IUGG mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A county-equivalent population unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone<S> {
    pub id: String,
    pub name: String,
    pub lat: S,
    pub lon: S,
    pub population: S,
    pub coastal: bool,
}

impl<S: Scalar> Zone<S> {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        lat: S,
        lon: S,
        population: S,
        coastal: bool,
    ) -> Result<Self> {
        let zone = Zone {
            id: id.into(),
            name: name.into(),
            lat,
            lon,
            population,
            coastal,
        };
        zone.validate()?;
        Ok(zone)
    }

    pub fn validate(&self) -> Result<()> {
        let ninety = S::lit(90.0);
        let one_eighty = S::lit(180.0);
        if !(self.lat >= -ninety && self.lat <= ninety) {
            return Err(Error::invalid(format!("zone {}: latitude {} out of range", self.id, self.lat)));
        }
        if !(self.lon >= -one_eighty && self.lon <= one_eighty) {
            return Err(Error::invalid(format!("zone {}: longitude {} out of range", self.id, self.lon)));
        }
        if !(self.population >= S::zero()) || !self.population.is_finite() {
            return Err(Error::invalid(format!(
                "zone {}: population {} must be finite and >= 0",
                self.id, self.population
            )));
        }
        Ok(())
    }
}

/// Haversine distance in kilometres between two points given in degrees.
pub fn haversine_km<S: Scalar>(lat1: S, lon1: S, lat2: S, lon2: S) -> S {
    let two = S::lit(2.0);
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / two).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / two).sin().powi(2);
    let a = a.min(S::one()).max(S::zero());
    two * S::lit(EARTH_RADIUS_KM) * a.sqrt().asin()
}

/// Features of one destination as seen from a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DestFeature<S> {
    pub dest: usize,
    pub population: S,
    pub distance: S,
    pub opportunities: S,
}

/// Destinations of one origin sorted by `(distance, index)` with prefix population sums.
#[derive(Debug, Clone)]
struct NeighborRow<S> {
    order: Vec<u32>,
    distance: Vec<S>,
    /// `cum_pop[k]` is the population of `order[..k]`; one longer than `order`.
    cum_pop: Vec<S>,
}

/// Immutable zone collection with a lazily built distance-sorted neighbor index.
#[derive(Debug, Clone)]
pub struct ZoneGraph<S> {
    zones: Vec<Zone<S>>,
    by_id: HashMap<String, usize>,
    neighbors: Vec<OnceLock<NeighborRow<S>>>,
}

impl<S: Scalar> ZoneGraph<S> {
    pub fn new(zones: Vec<Zone<S>>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(zones.len());
        for (i, z) in zones.iter().enumerate() {
            z.validate()?;
            if by_id.insert(z.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate zone id {}", z.id)));
            }
        }
        let neighbors = (0..zones.len()).map(|_| OnceLock::new()).collect();
        Ok(ZoneGraph {
            zones,
            by_id,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn zones(&self) -> &[Zone<S>] {
        &self.zones
    }

    pub fn zone(&self, i: usize) -> Option<&Zone<S>> {
        self.zones.get(i)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn populations(&self) -> Vec<S> {
        self.zones.iter().map(|z| z.population).collect()
    }

    fn check(&self, i: usize) -> Result<&Zone<S>> {
        self.zones
            .get(i)
            .ok_or_else(|| Error::invalid(format!("zone index {i} out of range (n = {})", self.len())))
    }

    pub fn distance(&self, i: usize, j: usize) -> Result<S> {
        let a = self.check(i)?;
        let b = self.check(j)?;
        if i == j {
            return Ok(S::zero());
        }
        Ok(haversine_km(a.lat, a.lon, b.lat, b.lon))
    }

    /// Population strictly inside the open disc centred on `i` with radius `d_ij`,
    /// excluding `i` and `j` themselves.
    pub fn intervening_opportunities(&self, i: usize, j: usize) -> Result<S> {
        let d = self.distance(i, j)?;
        if i == j {
            return Err(Error::invalid(format!("intervening opportunities need i != j (got {i})")));
        }
        let row = self.neighbor_row(i);
        let k = row.distance.partition_point(|&x| x < d);
        Ok(row.cum_pop[k])
    }

    /// Other zones ordered by nondecreasing distance from `i`.
    pub fn neighbors_sorted(&self, i: usize) -> Result<Vec<(usize, S)>> {
        self.check(i)?;
        let row = self.neighbor_row(i);
        Ok(row
            .order
            .iter()
            .zip(&row.distance)
            .map(|(&k, &d)| (k as usize, d))
            .collect())
    }

    fn neighbor_row(&self, i: usize) -> &NeighborRow<S> {
        self.neighbors[i].get_or_init(|| {
            let z = &self.zones[i];
            let mut entries = self.distances_from(z.lat, z.lon, Some(i));
            sort_by_distance(&mut entries);
            let mut cum_pop = Vec::with_capacity(entries.len() + 1);
            let mut acc = S::zero();
            cum_pop.push(acc);
            for &(k, _) in &entries {
                acc += self.zones[k as usize].population;
                cum_pop.push(acc);
            }
            NeighborRow {
                order: entries.iter().map(|e| e.0).collect(),
                distance: entries.iter().map(|e| e.1).collect(),
                cum_pop,
            }
        })
    }

    fn distances_from(&self, lat: S, lon: S, exclude: Option<usize>) -> Vec<(u32, S)> {
        self.zones
            .iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != exclude)
            .map(|(k, z)| (k as u32, haversine_km(lat, lon, z.lat, z.lon)))
            .collect()
    }

    /// Features of every zone (except `exclude`) seen from a point, in zone-index order.
    ///
    /// One sort plus one cumulative pass: `s` for a destination is the population of
    /// all strictly closer zones, so ties at equal distance never count each other.
    /// The returned distances for graph members equal [`ZoneGraph::distance`] bitwise.
    pub fn sweep_from(&self, lat: S, lon: S, exclude: Option<usize>) -> Vec<DestFeature<S>> {
        let mut entries = self.distances_from(lat, lon, exclude);
        sort_by_distance(&mut entries);
        let mut out = Vec::with_capacity(entries.len());
        let mut acc = S::zero();
        let mut start = 0;
        while start < entries.len() {
            let d = entries[start].1;
            let mut end = start;
            while end < entries.len() && entries[end].1 == d {
                end += 1;
            }
            for &(k, dist) in &entries[start..end] {
                out.push(DestFeature {
                    dest: k as usize,
                    population: self.zones[k as usize].population,
                    distance: dist,
                    opportunities: acc,
                });
            }
            for &(k, _) in &entries[start..end] {
                acc += self.zones[k as usize].population;
            }
            start = end;
        }
        out.sort_unstable_by_key(|f| f.dest);
        out
    }

    /// Features of every other zone seen from member zone `i`.
    pub fn sweep_origin(&self, i: usize) -> Result<Vec<DestFeature<S>>> {
        let z = self.check(i)?;
        Ok(self.sweep_from(z.lat, z.lon, Some(i)))
    }
}

fn sort_by_distance<S: Scalar>(entries: &mut [(u32, S)]) {
    entries.sort_unstable_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
}

/// Pairwise features for all ordered pairs `i != j`, grouped by origin.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable<S> {
    origin_offsets: Vec<usize>,
    origin_pop: Vec<S>,
    dest: Vec<u32>,
    dest_pop: Vec<S>,
    distance: Vec<S>,
    opportunities: Vec<S>,
}

/// One row of a [`FeatureTable`]: `(m_i, m_j, d_ij, s_ij)` for origin `i`, destination `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow<S> {
    pub origin: usize,
    pub dest: usize,
    pub origin_pop: S,
    pub dest_pop: S,
    pub distance: S,
    pub opportunities: S,
}

impl<S: Scalar> FeatureTable<S> {
    pub fn len(&self) -> usize {
        self.dest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dest.is_empty()
    }

    pub fn n_origins(&self) -> usize {
        self.origin_pop.len()
    }

    pub fn row(&self, r: usize) -> FeatureRow<S> {
        let origin = self.origin_offsets.partition_point(|&o| o <= r) - 1;
        FeatureRow {
            origin,
            dest: self.dest[r] as usize,
            origin_pop: self.origin_pop[origin],
            dest_pop: self.dest_pop[r],
            distance: self.distance[r],
            opportunities: self.opportunities[r],
        }
    }

    /// Rows of one origin.
    pub fn origin_rows(&self, i: usize) -> impl Iterator<Item = FeatureRow<S>> + '_ {
        let (lo, hi) = (self.origin_offsets[i], self.origin_offsets[i + 1]);
        (lo..hi).map(move |r| FeatureRow {
            origin: i,
            dest: self.dest[r] as usize,
            origin_pop: self.origin_pop[i],
            dest_pop: self.dest_pop[r],
            distance: self.distance[r],
            opportunities: self.opportunities[r],
        })
    }

    pub fn rows(&self) -> impl Iterator<Item = FeatureRow<S>> + '_ {
        (0..self.n_origins()).flat_map(move |i| self.origin_rows(i))
    }
}

/// Builds the full `n(n-1)` feature table, data-parallel over origins.
pub fn build_feature_table<S: Scalar>(graph: &ZoneGraph<S>) -> FeatureTable<S> {
    let per_origin: Vec<Vec<DestFeature<S>>> = (0..graph.len())
        .into_par_iter()
        .map(|i| {
            let z = &graph.zones[i];
            graph.sweep_from(z.lat, z.lon, Some(i))
        })
        .collect();

    let total: usize = per_origin.iter().map(Vec::len).sum();
    let mut table = FeatureTable {
        origin_offsets: Vec::with_capacity(graph.len() + 1),
        origin_pop: graph.populations(),
        dest: Vec::with_capacity(total),
        dest_pop: Vec::with_capacity(total),
        distance: Vec::with_capacity(total),
        opportunities: Vec::with_capacity(total),
    };
    table.origin_offsets.push(0);
    for row in per_origin {
        for f in row {
            table.dest.push(f.dest as u32);
            table.dest_pop.push(f.population);
            table.distance.push(f.distance);
            table.opportunities.push(f.opportunities);
        }
        table.origin_offsets.push(table.dest.len());
    }
    table
}
