//! Flags coastal origins whose yearly outflow suddenly more than doubles,
//! the signature of disaster-driven displacement in historical flow records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::MigrationMatrix;
use crate::scalar::Scalar;
use crate::zonegraph::ZoneGraph;

use super::calibrate::check_aligned;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    /// Later-year outflow must exceed `growth_factor` times the earlier one.
    pub growth_factor: f64,
    /// Later-year outflow must exceed this many migrants.
    pub min_outflow: f64,
    /// Year pairs across which outflows are not comparable.
    pub methodology_breaks: Vec<(i32, i32)>,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            growth_factor: 2.0,
            min_outflow: 1000.0,
            methodology_breaks: vec![(2010, 2011)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFlag {
    pub origin_id: String,
    pub from_year: i32,
    pub to_year: i32,
    pub outflow_before: f64,
    pub outflow_after: f64,
}

/// Total outflow per zone, self flows excluded.
pub fn outflow_totals<S: Scalar>(t: &MigrationMatrix<S>) -> Vec<S> {
    (0..t.n_origins())
        .map(|i| {
            let skip = t.dests().index_of(t.origins().id(i));
            t.row(i).filter(|&(j, _)| Some(j) != skip).map(|(_, v)| v).sum()
        })
        .collect()
}

pub fn detect_anomalous_origins<S: Scalar>(
    yearly: &BTreeMap<i32, MigrationMatrix<S>>,
    zones: &ZoneGraph<S>,
    cfg: &AnomalyConfig,
) -> Result<Vec<AnomalyFlag>> {
    for t in yearly.values() {
        check_aligned(t, zones)?;
    }
    let totals: BTreeMap<i32, Vec<S>> = yearly.iter().map(|(&y, t)| (y, outflow_totals(t))).collect();
    let mut flags = Vec::new();
    let years: Vec<i32> = totals.keys().copied().collect();
    for w in years.windows(2) {
        let (y0, y1) = (w[0], w[1]);
        if y1 != y0 + 1 || cfg.methodology_breaks.contains(&(y0, y1)) {
            continue;
        }
        let (before, after) = (&totals[&y0], &totals[&y1]);
        for (i, z) in zones.zones().iter().enumerate() {
            if !z.coastal {
                continue;
            }
            let (b, a) = (before[i].as_f64(), after[i].as_f64());
            if a > cfg.growth_factor * b && a > cfg.min_outflow {
                flags.push(AnomalyFlag {
                    origin_id: z.id.clone(),
                    from_year: y0,
                    to_year: y1,
                    outflow_before: b,
                    outflow_after: a,
                });
            }
        }
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitval::calibrate::graph_registry;
    use crate::zonegraph::Zone;

    fn zones() -> ZoneGraph<f64> {
        ZoneGraph::new(vec![
            Zone::new("coast", "", 30.0, -90.0, 1e5, true).unwrap(),
            Zone::new("inland", "", 35.0, -95.0, 1e5, false).unwrap(),
        ])
        .unwrap()
    }

    fn year(out_coast: f64, out_inland: f64, g: &ZoneGraph<f64>) -> MigrationMatrix<f64> {
        let reg = graph_registry(g).unwrap();
        MigrationMatrix::from_triplets(reg.clone(), reg, vec![(0, 1, out_coast), (1, 0, out_inland), (0, 0, 1e6)])
            .unwrap()
    }

    #[test]
    fn rule_application() {
        let g = zones();
        let cfg = AnomalyConfig::default();
        let flat: BTreeMap<_, _> = [(2004, year(2000.0, 2000.0, &g)), (2005, year(2000.0, 2000.0, &g))].into();
        assert!(detect_anomalous_origins(&flat, &g, &cfg).unwrap().is_empty());

        let jump: BTreeMap<_, _> = [(2004, year(2000.0, 2000.0, &g)), (2005, year(4100.0, 4100.0, &g))].into();
        let flags = detect_anomalous_origins(&jump, &g, &cfg).unwrap();
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].origin_id, "coast");
        assert_eq!((flags[0].from_year, flags[0].to_year), (2004, 2005));

        let small: BTreeMap<_, _> = [(2004, year(400.0, 1.0, &g)), (2005, year(900.0, 1.0, &g))].into();
        assert!(detect_anomalous_origins(&small, &g, &cfg).unwrap().is_empty());

        let exact: BTreeMap<_, _> = [(2004, year(2000.0, 1.0, &g)), (2005, year(4000.0, 1.0, &g))].into();
        assert!(detect_anomalous_origins(&exact, &g, &cfg).unwrap().is_empty());
    }

    #[test]
    fn breaks_and_gaps_skipped() {
        let g = zones();
        let cfg = AnomalyConfig::default();
        let broken: BTreeMap<_, _> = [(2010, year(2000.0, 1.0, &g)), (2011, year(9000.0, 1.0, &g))].into();
        assert!(detect_anomalous_origins(&broken, &g, &cfg).unwrap().is_empty());
        let gap: BTreeMap<_, _> = [(2004, year(2000.0, 1.0, &g)), (2006, year(9000.0, 1.0, &g))].into();
        assert!(detect_anomalous_origins(&gap, &g, &cfg).unwrap().is_empty());
    }
}
