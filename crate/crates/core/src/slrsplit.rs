//! Sea-level-rise module: block-group population projection, scenario depth
//! timelines and the split of each county into flooded and dry parts.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::zonegraph::{Zone, ZoneGraph};

/// Deepest flood level tabulated per block group, in feet.
pub const MAX_DEPTH_FT: u8 = 6;

/// Census block group with its housing history and per-depth flooded fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGroup<S> {
    pub id: String,
    pub county_id: String,
    /// Housing units by census year.
    pub housing_units: BTreeMap<i32, S>,
    pub persons_per_unit: S,
    pub group_quarters: S,
    /// Fraction of the population flooded at 1..=6 ft; index 0 is 1 ft.
    pub affected_fraction: [S; MAX_DEPTH_FT as usize],
    /// Optional flooded land area at 1..=6 ft.
    pub flooded_area_km2: Option<[S; MAX_DEPTH_FT as usize]>,
}

impl<S: Scalar> BlockGroup<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.persons_per_unit >= S::zero()) {
            return Err(Error::invalid(format!("block group {}: persons per unit < 0", self.id)));
        }
        if !(self.group_quarters >= S::zero()) {
            return Err(Error::invalid(format!("block group {}: group quarters < 0", self.id)));
        }
        let mut prev = S::zero();
        for (k, &f) in self.affected_fraction.iter().enumerate() {
            if !(f >= S::zero() && f <= S::one()) {
                return Err(Error::invalid(format!(
                    "block group {}: affected fraction at {} ft = {} outside [0, 1]",
                    self.id,
                    k + 1,
                    f
                )));
            }
            if f < prev {
                return Err(Error::invalid(format!(
                    "block group {}: affected fraction decreases at {} ft",
                    self.id,
                    k + 1
                )));
            }
            prev = f;
        }
        Ok(())
    }

    pub fn affected_fraction_at(&self, depth_ft: u8) -> S {
        match depth_ft {
            0 => S::zero(),
            d => self.affected_fraction[(d.min(MAX_DEPTH_FT) - 1) as usize],
        }
    }

    pub fn flooded_area_at(&self, depth_ft: u8) -> Option<S> {
        let areas = self.flooded_area_km2.as_ref()?;
        Some(match depth_ft {
            0 => S::zero(),
            d => areas[(d.min(MAX_DEPTH_FT) - 1) as usize],
        })
    }
}

/// Projects a block group's population to `year` as `h(year) * d + g`, where
/// `h` is the least-squares line through the housing-unit history, clamped at 0.
pub fn project_block_group_population<S: Scalar>(bg: &BlockGroup<S>, year: i32) -> Result<S> {
    let hist = &bg.housing_units;
    if hist.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "block group {}: need at least 2 housing-unit history points, got {}",
            bg.id,
            hist.len()
        )));
    }
    let last = *hist.keys().next_back().expect("nonempty");
    if year < last {
        return Err(Error::invalid(format!(
            "block group {}: target year {year} precedes last history year {last}",
            bg.id
        )));
    }
    let n = S::from_usize_lossy(hist.len());
    let mean_x = hist.keys().map(|&y| S::lit(y as f64)).sum::<S>() / n;
    let mean_y = hist.values().copied().sum::<S>() / n;
    let (mut sxy, mut sxx) = (S::zero(), S::zero());
    for (&y, &h) in hist {
        let dx = S::lit(y as f64) - mean_x;
        sxy += dx * (h - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let units = (mean_y + slope * (S::lit(year as f64) - mean_x)).max(S::zero());
    Ok((units * bg.persons_per_unit + bg.group_quarters).max(bg.group_quarters))
}

/// Named SLR trajectory: flood depth (whole feet) reached from each scheduled year on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloodScenario {
    pub name: String,
    pub schedule: BTreeMap<i32, u8>,
}

impl FloodScenario {
    pub fn new(name: impl Into<String>, schedule: BTreeMap<i32, u8>) -> Result<Self> {
        let s = FloodScenario {
            name: name.into(),
            schedule,
        };
        s.validate()?;
        Ok(s)
    }

    /// No flooding at any year.
    pub fn none() -> Self {
        FloodScenario {
            name: "none".into(),
            schedule: BTreeMap::new(),
        }
    }

    /// 1, 2, 3 ft reached in 2055, 2080, 2100.
    pub fn medium() -> Self {
        FloodScenario {
            name: "medium".into(),
            schedule: [(2055, 1), (2080, 2), (2100, 3)].into_iter().collect(),
        }
    }

    /// 1..=6 ft reached in 2042, 2059, 2071, 2082, 2091, 2100.
    pub fn high() -> Self {
        FloodScenario {
            name: "high".into(),
            schedule: [(2042, 1), (2059, 2), (2071, 3), (2082, 4), (2091, 5), (2100, 6)]
                .into_iter()
                .collect(),
        }
    }

    /// Constant depth for every year; used by depth sweeps.
    pub fn fixed(depth_ft: u8) -> Self {
        FloodScenario {
            name: format!("fixed-{depth_ft}ft"),
            schedule: [(i32::MIN, depth_ft)].into_iter().collect(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Self::none()),
            "medium" => Some(Self::medium()),
            "high" => Some(Self::high()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0u8;
        for (&year, &depth) in &self.schedule {
            if depth > MAX_DEPTH_FT {
                return Err(Error::invalid(format!(
                    "scenario {}: depth {depth} ft at {year} exceeds {MAX_DEPTH_FT} ft",
                    self.name
                )));
            }
            if depth < prev {
                return Err(Error::invalid(format!(
                    "scenario {}: depth decreases at {year}",
                    self.name
                )));
            }
            prev = depth;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: FloodScenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Depth of the latest schedule entry at or before `year`; 0 before the first entry.
pub fn scenario_depth(s: &FloodScenario, year: i32) -> u8 {
    s.schedule.range(..=year).next_back().map_or(0, |(_, &d)| d)
}

/// Suffix marking the flooded part of a county in joint-run registries.
pub const AFFECTED_SUFFIX: &str = ":A";
/// Suffix marking the dry part of a county in joint-run registries.
pub const UNAFFECTED_SUFFIX: &str = ":U";

pub fn affected_id(county: &str) -> String {
    format!("{county}{AFFECTED_SUFFIX}")
}

pub fn unaffected_id(county: &str) -> String {
    format!("{county}{UNAFFECTED_SUFFIX}")
}

/// Maps a part id back to its county id.
pub fn county_of(part_id: &str) -> &str {
    part_id
        .strip_suffix(AFFECTED_SUFFIX)
        .or_else(|| part_id.strip_suffix(UNAFFECTED_SUFFIX))
        .unwrap_or(part_id)
}

/// Counties split into flooded (`affected`) and dry (`unaffected`) parts, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitZones<S> {
    pub county_ids: Vec<String>,
    pub projected: Vec<S>,
    pub affected: Vec<Zone<S>>,
    pub unaffected: Vec<Zone<S>>,
    pub flooded_area_km2: Option<Vec<S>>,
    pub depth_ft: u8,
}

impl<S: Scalar> SplitZones<S> {
    pub fn len(&self) -> usize {
        self.county_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.county_ids.is_empty()
    }

    /// Flooded part carries no population.
    pub fn is_placeholder(&self, county: usize) -> bool {
        self.affected[county].population == S::zero()
    }

    pub fn affected_population(&self) -> Vec<S> {
        self.affected.iter().map(|z| z.population).collect()
    }
}

/// Partitions every county into flooded and dry parts at the scenario's depth for `year`.
///
/// Counties with no block groups keep their input population, entirely dry.
pub fn split_zones<S: Scalar>(
    counties: &ZoneGraph<S>,
    bgs: &[BlockGroup<S>],
    scenario: &FloodScenario,
    year: i32,
) -> Result<SplitZones<S>> {
    let depth = scenario_depth(scenario, year);
    split_at_depth(counties, bgs, depth, year)
}

pub(crate) fn split_at_depth<S: Scalar>(
    counties: &ZoneGraph<S>,
    bgs: &[BlockGroup<S>],
    depth: u8,
    year: i32,
) -> Result<SplitZones<S>> {
    let mut offenders: Vec<String> = bgs
        .iter()
        .filter(|bg| counties.index_of(&bg.county_id).is_none())
        .map(|bg| format!("{} -> {}", bg.id, bg.county_id))
        .collect();
    if !offenders.is_empty() {
        offenders.dedup();
        return Err(Error::ReferentialIntegrity { offenders });
    }

    let projected_bg: Vec<S> = bgs
        .par_iter()
        .map(|bg| project_block_group_population(bg, year))
        .collect::<Result<_>>()?;

    let n = counties.len();
    let mut projected = vec![S::zero(); n];
    let mut affected = vec![S::zero(); n];
    let mut has_bg = vec![false; n];
    let with_area = !bgs.is_empty() && bgs.iter().all(|bg| bg.flooded_area_km2.is_some());
    let mut area = vec![S::zero(); n];
    let lookup: HashMap<&str, usize> = counties
        .zones()
        .iter()
        .enumerate()
        .map(|(i, z)| (z.id.as_str(), i))
        .collect();
    for (bg, &p) in bgs.iter().zip(&projected_bg) {
        let c = lookup[bg.county_id.as_str()];
        has_bg[c] = true;
        projected[c] += p;
        affected[c] += p * bg.affected_fraction_at(depth);
        if with_area {
            area[c] += bg.flooded_area_at(depth).unwrap_or_else(S::zero);
        }
    }

    let mut out = SplitZones {
        county_ids: Vec::with_capacity(n),
        projected: Vec::with_capacity(n),
        affected: Vec::with_capacity(n),
        unaffected: Vec::with_capacity(n),
        flooded_area_km2: with_area.then_some(area),
        depth_ft: depth,
    };
    for (i, county) in counties.zones().iter().enumerate() {
        let total = if has_bg[i] { projected[i] } else { county.population };
        let flooded = if has_bg[i] { affected[i].min(total) } else { S::zero() };
        out.county_ids.push(county.id.clone());
        out.projected.push(total);
        out.affected.push(Zone {
            id: affected_id(&county.id),
            name: county.name.clone(),
            lat: county.lat,
            lon: county.lon,
            population: flooded,
            coastal: county.coastal,
        });
        out.unaffected.push(Zone {
            id: unaffected_id(&county.id),
            name: county.name.clone(),
            lat: county.lat,
            lon: county.lon,
            population: total - flooded,
            coastal: county.coastal,
        });
    }
    Ok(out)
}

/// Directly affected people (and flooded area when tabulated).
#[derive(Debug, Clone, PartialEq)]
pub struct DirectExposure<S> {
    pub total: S,
    pub per_county: Vec<S>,
    pub flooded_area_km2: Option<S>,
}

pub fn direct_exposure<S: Scalar>(split: &SplitZones<S>) -> DirectExposure<S> {
    let per_county = split.affected_population();
    DirectExposure {
        total: per_county.iter().copied().sum(),
        per_county,
        flooded_area_km2: split.flooded_area_km2.as_ref().map(|a| a.iter().copied().sum()),
    }
}
