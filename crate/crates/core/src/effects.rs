//! Direct and indirect impact tallies from a scenario run and its baseline.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::jointmodel::{run_at_depth, run_baseline, JointRun, JointRunConfig};
use crate::matrix::MigrationMatrix;
use crate::scalar::Scalar;
use crate::slrsplit::{county_of, direct_exposure, BlockGroup, MAX_DEPTH_FT};
use crate::zonegraph::ZoneGraph;

/// Extra-incoming thresholds as fractions of county population.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.005, 0.01, 0.03, 0.06, 0.09];

/// Column sums of `t` merged onto `county_ids` (parts map to their county).
pub fn incoming_vector<S: Scalar>(t: &MigrationMatrix<S>, county_ids: &[String]) -> Result<Vec<S>> {
    let lookup: HashMap<&str, usize> = county_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let target: Vec<usize> = t
        .dests()
        .ids()
        .iter()
        .map(|id| {
            lookup
                .get(county_of(id))
                .or_else(|| lookup.get(id.as_str()))
                .copied()
                .ok_or_else(|| Error::ReferentialIntegrity {
                    offenders: vec![id.clone()],
                })
        })
        .collect::<Result<_>>()?;
    let mut out = vec![S::zero(); county_ids.len()];
    for (j, s) in t.col_sums().into_iter().enumerate() {
        out[target[j]] += s;
    }
    Ok(out)
}

/// Per-county extra incoming split by origin type: flows out of flooded parts
/// (`climate`) are new in full, dry-part flows count net of the baseline.
pub fn origin_decomposition<S: Scalar>(
    climate: &MigrationMatrix<S>,
    standard: &MigrationMatrix<S>,
    baseline: &MigrationMatrix<S>,
    county_ids: &[String],
) -> Result<(Vec<S>, Vec<S>)> {
    if !standard.same_shape(baseline) || !climate.same_shape(standard) {
        return Err(Error::RegistryMismatch("scenario and baseline registries differ".into()));
    }
    let flooded = incoming_vector(climate, county_ids)?;
    let scen = incoming_vector(standard, county_ids)?;
    let base = incoming_vector(baseline, county_ids)?;
    let unflooded = scen.iter().zip(&base).map(|(&a, &b)| a - b).collect();
    Ok((flooded, unflooded))
}

/// `flags[c][k]`: county `c` gains more than `thresholds[k] * pop[c]` migrants.
/// Counties listed in `excluded` and empty counties are never flagged.
/// Returns the flags and the flagged population per threshold.
pub fn indirect_classification(
    extra: &[f64],
    pop: &[f64],
    excluded: &[bool],
    thresholds: &[f64],
) -> Result<(Vec<Vec<bool>>, Vec<f64>)> {
    if extra.len() != pop.len() || excluded.len() != pop.len() {
        return Err(Error::invalid("extra, pop and exclusion lengths differ"));
    }
    if thresholds.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::invalid("thresholds must be finite and nonnegative"));
    }
    let mut totals = vec![0.0; thresholds.len()];
    let flags = (0..pop.len())
        .map(|c| {
            if pop[c] <= 0.0 {
                if extra[c] > 0.0 {
                    log::info!("county #{c} has no population; never flagged");
                }
                return vec![false; thresholds.len()];
            }
            thresholds
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    let f = !excluded[c] && extra[c] > d * pop[c];
                    if f {
                        totals[k] += pop[c];
                    }
                    f
                })
                .collect()
        })
        .collect();
    Ok((flags, totals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyEffects {
    pub county_id: String,
    pub pop: f64,
    pub affected_pop: f64,
    pub in_scenario: f64,
    pub in_baseline: f64,
    pub extra: f64,
    pub extra_flooded: f64,
    pub extra_unflooded: f64,
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsReport {
    pub thresholds: Vec<f64>,
    pub include_direct: bool,
    pub counties: Vec<CountyEffects>,
    pub direct_total: f64,
    /// Flagged population per threshold.
    pub indirect_totals: Vec<f64>,
}

impl EffectsReport {
    pub fn flag_column_names(&self) -> Vec<String> {
        // Rounded so that 0.03 prints as 3, not 3.0000000000000004.
        self.thresholds
            .iter()
            .map(|d| format!("flag_d{}", (d * 1e8).round() / 1e6))
            .collect()
    }
}

/// Compares a scenario run against a baseline run on the same registry.
pub fn build_effects<S: Scalar>(
    scenario: &JointRun<S>,
    baseline: &JointRun<S>,
    thresholds: &[f64],
    include_direct: bool,
) -> Result<EffectsReport> {
    let ids = &scenario.split.county_ids;
    if *ids != baseline.split.county_ids {
        return Err(Error::RegistryMismatch("scenario and baseline counties differ".into()));
    }
    let (flooded, unflooded) = origin_decomposition(&scenario.climate, &scenario.standard, &baseline.total, ids)?;
    let in_climate = incoming_vector(&scenario.climate, ids)?;
    let in_standard = incoming_vector(&scenario.standard, ids)?;
    let in_baseline = incoming_vector(&baseline.total, ids)?;

    let affected = scenario.split.affected_population();
    let pop: Vec<f64> = scenario.split.projected.iter().map(|p| p.as_f64()).collect();
    let extra: Vec<f64> = flooded.iter().zip(&unflooded).map(|(a, b)| (*a + *b).as_f64()).collect();
    let excluded: Vec<bool> = affected.iter().map(|a| !include_direct && *a > S::zero()).collect();
    let (flags, indirect_totals) = indirect_classification(&extra, &pop, &excluded, thresholds)?;

    let counties = (0..ids.len())
        .zip(flags)
        .map(|(c, flags)| CountyEffects {
            county_id: ids[c].clone(),
            pop: pop[c],
            affected_pop: affected[c].as_f64(),
            in_scenario: (in_climate[c] + in_standard[c]).as_f64(),
            in_baseline: in_baseline[c].as_f64(),
            extra: extra[c],
            extra_flooded: flooded[c].as_f64(),
            extra_unflooded: unflooded[c].as_f64(),
            flags,
        })
        .collect();
    Ok(EffectsReport {
        thresholds: thresholds.to_vec(),
        include_direct,
        counties,
        direct_total: direct_exposure(&scenario.split).total.as_f64(),
        indirect_totals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub depth_ft: u8,
    pub direct_total: f64,
    pub indirect_totals: Vec<f64>,
}

/// Direct and indirect totals with every county flooded to each depth in turn.
pub fn depth_sweep<S: Scalar>(
    counties: &ZoneGraph<S>,
    bgs: &[BlockGroup<S>],
    cfg: &JointRunConfig<S>,
    depths: &[u8],
    thresholds: &[f64],
    include_direct: bool,
) -> Result<Vec<SweepRow>> {
    if let Some(d) = depths.iter().find(|&&d| d > MAX_DEPTH_FT) {
        return Err(Error::invalid(format!("depth {d} ft exceeds {MAX_DEPTH_FT} ft")));
    }
    let baseline = run_baseline(counties, bgs, cfg)?;
    depths
        .iter()
        .map(|&depth| {
            let run = run_at_depth(counties, bgs, cfg, depth)?;
            let report = build_effects(&run, &baseline, thresholds, include_direct)?;
            Ok(SweepRow {
                depth_ft: depth,
                direct_total: report.direct_total,
                indirect_totals: report.indirect_totals,
            })
        })
        .collect()
}

/// Copies report quantities into the properties of features whose
/// `id_property` matches a county id. Returns how many features matched.
pub fn annotate_geojson(geojson: &mut Value, report: &EffectsReport, id_property: &str) -> Result<usize> {
    let by_id: HashMap<&str, &CountyEffects> = report.counties.iter().map(|c| (c.county_id.as_str(), c)).collect();
    let features = geojson
        .get_mut("features")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| Error::invalid("GeoJSON has no feature array"))?;
    let names = report.flag_column_names();
    let mut matched = 0;
    for f in features {
        let Some(props) = f.get_mut("properties").and_then(Value::as_object_mut) else {
            continue;
        };
        let id = match props.get(id_property) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => continue,
        };
        let Some(c) = by_id.get(id.as_str()) else {
            log::warn!("GeoJSON feature {id} has no county in the report");
            continue;
        };
        matched += 1;
        for (k, v) in [
            ("pop", c.pop),
            ("affected_pop", c.affected_pop),
            ("in_scenario", c.in_scenario),
            ("in_baseline", c.in_baseline),
            ("extra", c.extra),
            ("extra_flooded", c.extra_flooded),
            ("extra_unflooded", c.extra_unflooded),
        ] {
            props.insert(k.into(), Value::from(v));
        }
        for (name, &flag) in names.iter().zip(&c.flags) {
            props.insert(name.clone(), Value::from(flag));
        }
    }
    Ok(matched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::migmodels::ModelSpec;
    use crate::slrsplit::FloodScenario;
    use crate::zonegraph::Zone;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn strip() -> (ZoneGraph<f64>, Vec<BlockGroup<f64>>) {
        let counties = ZoneGraph::new(
            (0..5)
                .map(|k| Zone::new(format!("c{k}"), "", 0.0, k as f64, 0.0, k == 0).unwrap())
                .collect(),
        )
        .unwrap();
        let hist = |h: f64| -> BTreeMap<i32, f64> { [(2000, h), (2010, h)].into_iter().collect() };
        let bgs = (0..5)
            .map(|k| BlockGroup {
                id: format!("b{k}"),
                county_id: format!("c{k}"),
                housing_units: hist(if k == 0 { 400.0 } else { 800.0 }),
                persons_per_unit: 2.5,
                group_quarters: 0.0,
                affected_fraction: if k == 0 { [0.0, 0.0, 0.05, 0.1, 0.2, 0.25] } else { [0.0; 6] },
                flooded_area_km2: None,
            })
            .collect();
        (counties, bgs)
    }

    fn cfg() -> JointRunConfig<f64> {
        JointRunConfig {
            scenario: FloodScenario::high(),
            year: 2100,
            climate_model: ModelSpec::ext_radiation(0.13).unwrap(),
            standard_model: ModelSpec::ext_radiation(0.33).unwrap(),
            alpha_standard: 0.03,
        }
    }

    #[test]
    fn incoming_hand_values() {
        let reg = Arc::new(crate::matrix::Registry::new(vec!["a:U".into(), "b:U".into(), "a:A".into()]).unwrap());
        let t = MigrationMatrix::from_triplets(reg.clone(), reg, vec![(0, 1, 2.0), (1, 0, 3.0), (2, 0, 4.0), (2, 1, 1.0)])
            .unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let v = incoming_vector(&t, &ids).unwrap();
        assert_eq!(v, vec![7.0, 3.0]);
        assert_eq!(v.iter().sum::<f64>(), t.total());
        let z = MigrationMatrix::<f64>::zeros(t.origins().clone(), t.dests().clone());
        assert_eq!(incoming_vector(&z, &ids).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn threshold_rule() {
        let (flags, totals) =
            indirect_classification(&[35.0, 5.0, 100.0], &[1000.0, 0.0, 1000.0], &[false, false, true], &DEFAULT_THRESHOLDS)
                .unwrap();
        assert_eq!(flags[0], vec![true, true, true, false, false]);
        assert!(flags[1].iter().all(|f| !f));
        assert!(flags[2].iter().all(|f| !f));
        assert_eq!(totals, vec![1000.0, 1000.0, 1000.0, 0.0, 0.0]);
    }

    #[test]
    fn strip_report() {
        let (counties, bgs) = strip();
        let c = cfg();
        let run = crate::jointmodel::run_joint(&counties, &bgs, &c).unwrap();
        let base = run_baseline(&counties, &bgs, &c).unwrap();
        let r = build_effects(&run, &base, &DEFAULT_THRESHOLDS, false).unwrap();
        assert_eq!(r.direct_total, 250.0);
        let extra_sum: f64 = r.counties.iter().map(|c| c.extra).sum();
        // 250 displaced arrive somewhere; dry-part outflow of c0 drops by 0.03 * 250.
        assert!((extra_sum - (250.0 - 0.03 * 250.0)).abs() < 1e-9);
        for c in &r.counties {
            assert!((c.extra - c.extra_flooded - c.extra_unflooded).abs() <= 1e-9 * c.in_scenario.max(1.0));
        }
        assert!(r.counties[0].flags.iter().all(|f| !f));
        let self_r = build_effects(&base, &base, &DEFAULT_THRESHOLDS, true).unwrap();
        assert!(self_r.counties.iter().all(|c| c.extra == 0.0 && c.flags.iter().all(|f| !f)));
    }

    #[test]
    fn sweep_monotone() {
        let (counties, bgs) = strip();
        let rows = depth_sweep(&counties, &bgs, &cfg(), &[0, 1, 2, 3, 4, 5, 6], &DEFAULT_THRESHOLDS, false).unwrap();
        assert_eq!(rows[0].direct_total, 0.0);
        assert!(rows[0].indirect_totals.iter().all(|&t| t == 0.0));
        assert!(rows.windows(2).all(|w| w[0].direct_total <= w[1].direct_total));
    }

    #[test]
    fn geojson_join() {
        let (counties, bgs) = strip();
        let run = crate::jointmodel::run_joint(&counties, &bgs, &cfg()).unwrap();
        let base = run_baseline(&counties, &bgs, &cfg()).unwrap();
        let r = build_effects(&run, &base, &DEFAULT_THRESHOLDS, false).unwrap();
        let mut g: Value = serde_json::json!({
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "properties": {"GEOID": "c1"}, "geometry": null},
                {"type": "Feature", "properties": {"GEOID": "zz"}, "geometry": null}
            ]
        });
        assert_eq!(annotate_geojson(&mut g, &r, "GEOID").unwrap(), 1);
        assert!(g["features"][0]["properties"]["flag_d0.5"].is_boolean());
        assert!(g["features"][1]["properties"].get("extra").is_none());
    }
}
