//! Coupled run: split counties by flood depth, send every flooded-part resident
//! to dry parts with the climate model, move standard migrants between dry parts
//! with the standard model, and sum the two matrices.
//!
//! Matrices produced here share one registry of `2n` parts: the dry parts
//! `<county>:U` first, then the flooded parts `<county>:A`. Flooded parts are
//! origins only, so their columns are always empty.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matrix::{MigrationMatrix, Registry};
use crate::migmodels::{flow_rows, ModelSpec, ProductionFunction};
use crate::scalar::Scalar;
use crate::slrsplit::{split_at_depth, split_zones, BlockGroup, FloodScenario, SplitZones};
use crate::zonegraph::ZoneGraph;

/// Modelling choices echoed into run metadata.
pub const RUN_NOTES: &[&str] = &[
    "s_ij is computed from the populations of the zone set handed to each model at run time (post-split projected populations)",
    "flooded parts use their county centroid; s_ij for flooded origins sums dry-part populations strictly closer than d_ij, the sibling dry part included",
    "power-law gravity uses a 1 km distance floor between distinct zones sharing a centroid",
];

#[derive(Debug, Clone)]
pub struct JointRunConfig<S> {
    pub scenario: FloodScenario,
    pub year: i32,
    pub climate_model: ModelSpec<S>,
    pub standard_model: ModelSpec<S>,
    pub alpha_standard: S,
}

impl<S: Scalar> JointRunConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_standard > S::zero() && self.alpha_standard <= S::one()) {
            return Err(Error::invalid(format!(
                "alpha_standard must lie in (0, 1], got {}",
                self.alpha_standard
            )));
        }
        self.scenario.validate()?;
        self.climate_model.validate()?;
        self.standard_model.validate()
    }
}

/// Matrices of one (scenario, year) snapshot.
#[derive(Debug, Clone)]
pub struct JointRun<S> {
    /// `T = T' + T''`.
    pub total: MigrationMatrix<S>,
    /// `T'`: flooded parts to dry parts.
    pub climate: MigrationMatrix<S>,
    /// `T''`: dry parts to dry parts.
    pub standard: MigrationMatrix<S>,
    pub split: SplitZones<S>,
}

impl<S: Scalar> JointRun<S> {
    pub fn n_counties(&self) -> usize {
        self.split.len()
    }

    /// Registry index of county `c`'s dry part.
    pub fn unaffected_index(&self, c: usize) -> usize {
        c
    }

    /// Registry index of county `c`'s flooded part.
    pub fn affected_index(&self, c: usize) -> usize {
        self.n_counties() + c
    }
}

/// Registry `[c:U for c in counties] ++ [c:A for c in counties]`.
pub fn joint_registry<S: Scalar>(split: &SplitZones<S>) -> Result<Arc<Registry>> {
    let ids = split
        .unaffected
        .iter()
        .chain(&split.affected)
        .map(|z| z.id.clone())
        .collect();
    Ok(Arc::new(Registry::new(ids)?))
}

/// Runs both migration models over an existing split.
pub fn run_on_split<S: Scalar>(split: SplitZones<S>, cfg: &JointRunConfig<S>) -> Result<JointRun<S>> {
    cfg.validate()?;
    let n = split.len();
    let registry = joint_registry(&split)?;
    let dry = ZoneGraph::new(split.unaffected.clone())?;

    let standard_out: Vec<S> = split
        .unaffected
        .iter()
        .map(|z| cfg.alpha_standard * z.population)
        .collect();
    let forced = ProductionFunction::<S>::forced();
    let climate_out: Vec<S> = split.affected.iter().map(|z| forced.apply(z.population)).collect();

    let standard_rows = flow_rows(&split.unaffected, &standard_out, &dry, &cfg.standard_model)?;
    let climate_rows = flow_rows(&split.affected, &climate_out, &dry, &cfg.climate_model)?;

    let mut rows = standard_rows;
    rows.resize_with(2 * n, Vec::new);
    let standard = MigrationMatrix::from_rows(registry.clone(), registry.clone(), rows)?;

    let mut rows: Vec<Vec<(usize, S)>> = Vec::with_capacity(2 * n);
    rows.resize_with(n, Vec::new);
    rows.extend(climate_rows);
    let climate = MigrationMatrix::from_rows(registry.clone(), registry, rows)?;

    let total = climate
        .add(&standard)
        .map_err(|e| Error::Internal(format!("T' and T'' registries disagree: {e}")))?;
    Ok(JointRun {
        total,
        climate,
        standard,
        split,
    })
}

pub fn run_joint<S: Scalar>(
    counties: &ZoneGraph<S>,
    bgs: &[BlockGroup<S>],
    cfg: &JointRunConfig<S>,
) -> Result<JointRun<S>> {
    cfg.validate()?;
    let split = split_zones(counties, bgs, &cfg.scenario, cfg.year)?;
    run_on_split(split, cfg)
}

/// Joint run with no flooding: standard migration among whole projected counties.
pub fn run_baseline<S: Scalar>(
    counties: &ZoneGraph<S>,
    bgs: &[BlockGroup<S>],
    cfg: &JointRunConfig<S>,
) -> Result<JointRun<S>> {
    let cfg = JointRunConfig {
        scenario: FloodScenario::none(),
        ..cfg.clone()
    };
    run_joint(counties, bgs, &cfg)
}

/// Same pipeline with the standard model also driving the climate flows.
pub fn ablation_single_model<S: Scalar>(
    counties: &ZoneGraph<S>,
    bgs: &[BlockGroup<S>],
    cfg: &JointRunConfig<S>,
) -> Result<JointRun<S>> {
    let cfg = JointRunConfig {
        climate_model: cfg.standard_model.clone(),
        ..cfg.clone()
    };
    run_joint(counties, bgs, &cfg)
}

/// Joint run at a fixed depth, independent of any scenario timeline.
pub fn run_at_depth<S: Scalar>(
    counties: &ZoneGraph<S>,
    bgs: &[BlockGroup<S>],
    cfg: &JointRunConfig<S>,
    depth_ft: u8,
) -> Result<JointRun<S>> {
    cfg.validate()?;
    let split = split_at_depth(counties, bgs, depth_ft, cfg.year)?;
    let cfg = JointRunConfig {
        scenario: FloodScenario::fixed(depth_ft),
        ..cfg.clone()
    };
    run_on_split(split, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::migmodels::ModelKind;
    use crate::zonegraph::Zone;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    /// Five counties along the equator; c0 has one block group of 1000 people,
    /// 25% flooded at 6 ft; every other county has 2000 people and stays dry.
    pub(crate) fn strip() -> (ZoneGraph<f64>, Vec<BlockGroup<f64>>) {
        let counties = ZoneGraph::new(
            (0..5)
                .map(|k| Zone::new(format!("c{k}"), format!("County {k}"), 0.0, k as f64, 0.0, k == 0).unwrap())
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

    fn cfg(scenario: FloodScenario) -> JointRunConfig<f64> {
        JointRunConfig {
            scenario,
            year: 2100,
            climate_model: ModelSpec::ext_radiation(0.13).unwrap(),
            standard_model: ModelSpec::ext_radiation(0.33).unwrap(),
            alpha_standard: 0.03,
        }
    }

    #[test]
    fn flooded_strip_conserves() {
        let (counties, bgs) = strip();
        let run = run_joint(&counties, &bgs, &cfg(FloodScenario::high())).unwrap();
        let a0 = run.affected_index(0);
        assert_relative_eq!(run.total.row_sum(a0), 250.0, max_relative = 1e-12);
        assert_relative_eq!(run.climate.total(), 250.0, max_relative = 1e-12);
        let cols = run.total.col_sums();
        for c in 0..5 {
            assert_eq!(cols[run.affected_index(c)], 0.0);
        }
        // Dry part of the flooded county receives its own displaced residents.
        assert!(run.climate.get(a0, run.unaffected_index(0)) > 0.0);
        assert_relative_eq!(run.standard.row_sum(0), 0.03 * 750.0, max_relative = 1e-12);
        assert_eq!(run.standard.get(0, 0), 0.0);
    }

    #[test]
    fn no_flood_means_no_climate_flows() {
        let (counties, bgs) = strip();
        let run = run_joint(&counties, &bgs, &cfg(FloodScenario::none())).unwrap();
        assert_eq!(run.climate.nnz(), 0);
        assert_eq!(run.total, run.standard);
        let base = run_baseline(&counties, &bgs, &cfg(FloodScenario::high())).unwrap();
        assert_eq!(base.total, run.total);
        for c in 0..5 {
            assert_relative_eq!(base.total.row_sum(c), 0.03 * base.split.projected[c], max_relative = 1e-12);
        }
        let incoming = base.total.col_sums();
        assert!((0..5).all(|c| incoming[c] > 0.0));
    }

    #[test]
    fn ablation_matches_when_models_agree() {
        let (counties, bgs) = strip();
        let mut c = cfg(FloodScenario::high());
        let joint = run_joint(&counties, &bgs, &c).unwrap();
        let single = ablation_single_model(&counties, &bgs, &c).unwrap();
        for i in 0..10 {
            assert_relative_eq!(joint.total.row_sum(i), single.total.row_sum(i), max_relative = 1e-12);
        }
        let diff: f64 = joint
            .total
            .col_sums()
            .iter()
            .zip(single.total.col_sums())
            .map(|(a, b)| a - b)
            .sum();
        assert!(diff.abs() < 1e-9);

        c.climate_model = c.standard_model.clone();
        let joint = run_joint(&counties, &bgs, &c).unwrap();
        let single = ablation_single_model(&counties, &bgs, &c).unwrap();
        assert_eq!(joint.total, single.total);
    }

    #[test]
    fn rejects_bad_alpha() {
        let (counties, bgs) = strip();
        let mut c = cfg(FloodScenario::high());
        c.alpha_standard = 0.0;
        assert!(run_joint(&counties, &bgs, &c).is_err());
        c.alpha_standard = 0.03;
        c.standard_model = ModelSpec {
            kind: ModelKind::GravityPow,
            beta: None,
            neural: None,
        };
        assert!(run_joint(&counties, &bgs, &c).is_err());
    }
}
