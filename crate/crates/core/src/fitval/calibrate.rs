//! Parameter calibration: `beta` by CPC maximization, `alpha` by a zero-intercept slope.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{MigrationMatrix, Registry};
use crate::migmodels::{destination_probabilities, ModelKind, ModelSpec};
use crate::scalar::Scalar;
use crate::zonegraph::{DestFeature, ZoneGraph};

use super::metrics::cpc_rows;

/// Grid points scanned before golden-section refinement.
const BETA_GRID: usize = 61;
/// Refinement stops once the bracket spans less than this in `ln(beta)`.
pub const BETA_LOG_TOL: f64 = 1e-3;

/// Search interval for `beta`.
pub fn beta_bounds(kind: ModelKind) -> (f64, f64) {
    match kind {
        ModelKind::GravityExp => (1e-5, 10.0),
        _ => (1e-3, 10.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFit {
    pub beta: f64,
    pub cpc: f64,
    /// Objective was flat over the whole range; `beta` is the range midpoint.
    pub flat: bool,
}

/// Observed flows aligned with a zone graph, plus cached pair features of selected origins.
pub struct CalibrationData<'a, S> {
    graph: &'a ZoneGraph<S>,
    observed: &'a MigrationMatrix<S>,
    origins: Vec<usize>,
    features: Vec<Vec<DestFeature<S>>>,
}

/// Fails unless `t` is indexed by the graph's zones, in graph order, on both axes.
pub fn check_aligned<S: Scalar>(t: &MigrationMatrix<S>, graph: &ZoneGraph<S>) -> Result<()> {
    let same = |r: &Registry| r.len() == graph.len() && r.ids().iter().zip(graph.zones()).all(|(a, z)| *a == z.id);
    if same(t.origins()) && same(t.dests()) {
        Ok(())
    } else {
        Err(Error::RegistryMismatch("flow matrix is not indexed by the zone graph".into()))
    }
}

/// Registry of the graph's zone ids.
pub fn graph_registry<S: Scalar>(graph: &ZoneGraph<S>) -> Result<Arc<Registry>> {
    Ok(Arc::new(Registry::new(graph.zones().iter().map(|z| z.id.clone()).collect())?))
}

impl<'a, S: Scalar> CalibrationData<'a, S> {
    pub fn new(observed: &'a MigrationMatrix<S>, origins: &[usize], graph: &'a ZoneGraph<S>) -> Result<Self> {
        check_aligned(observed, graph)?;
        if let Some(&bad) = origins.iter().find(|&&i| i >= graph.len()) {
            return Err(Error::invalid(format!("origin index {bad} out of range")));
        }
        let features = origins
            .par_iter()
            .map(|&i| graph.sweep_origin(i))
            .collect::<Result<_>>()?;
        Ok(CalibrationData {
            graph,
            observed,
            origins: origins.to_vec(),
            features,
        })
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    /// Observed outflow of each selected origin, self flows excluded.
    pub fn observed_outflow(&self) -> Vec<S> {
        self.origins
            .iter()
            .map(|&i| self.observed.row(i).filter(|&(j, _)| j != i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Model flows for the selected origins with the given per-origin outflow.
    pub fn predict(&self, spec: &ModelSpec<S>, outflow: &[S]) -> Result<MigrationMatrix<S>> {
        spec.validate()?;
        let reg = self.observed.origins().clone();
        let per_origin: Vec<Vec<(usize, S)>> = self
            .origins
            .par_iter()
            .zip(&self.features)
            .zip(outflow)
            .map(|((&i, feats), &out)| {
                if out == S::zero() || feats.is_empty() {
                    return Ok(Vec::new());
                }
                let m_i = self.graph.zones()[i].population;
                let probs = destination_probabilities(spec, m_i, feats)?;
                Ok(probs.into_iter().map(|(j, p)| (j, out * p)).collect())
            })
            .collect::<Result<_>>()?;
        let mut rows = vec![Vec::new(); self.graph.len()];
        for (&i, row) in self.origins.iter().zip(per_origin) {
            rows[i].extend(row);
        }
        MigrationMatrix::from_rows(reg.clone(), self.observed.dests().clone(), rows)
    }

    fn cpc_at(&self, kind: ModelKind, beta: f64, outflow: &[S]) -> Result<f64> {
        let spec = ModelSpec::with_beta(kind, S::lit(beta))?;
        let model = self.predict(&spec, outflow)?;
        Ok(cpc_rows(self.observed, &model, &self.origins)?.as_f64())
    }
}

/// Maximizes CPC between observed rows and model rows over `beta`.
///
/// Model rows use each origin's observed outflow, so only the destination
/// distribution is being fitted. A log-spaced grid locates the best bracket and
/// golden-section search refines it.
pub fn fit_beta<S: Scalar>(
    observed: &MigrationMatrix<S>,
    origins: &[usize],
    graph: &ZoneGraph<S>,
    kind: ModelKind,
) -> Result<BetaFit> {
    if !kind.uses_beta() {
        return Err(Error::invalid(format!("{kind} has no beta parameter")));
    }
    let data = CalibrationData::new(observed, origins, graph)?;
    fit_beta_with(&data, kind)
}

pub fn fit_beta_with<S: Scalar>(data: &CalibrationData<'_, S>, kind: ModelKind) -> Result<BetaFit> {
    let outflow = data.observed_outflow();
    if outflow.iter().all(|&o| o == S::zero()) {
        return Err(Error::InsufficientData("training origins have no outflow".into()));
    }
    let (lo, hi) = beta_bounds(kind);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / (BETA_GRID - 1) as f64;
    let grid: Vec<f64> = (0..BETA_GRID).map(|k| llo + step * k as f64).collect();
    let scores: Vec<f64> = grid
        .iter()
        .map(|&x| data.cpc_at(kind, x.exp(), &outflow))
        .collect::<Result<_>>()?;

    let (best, &best_score) = scores
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (k, s)| if *s > *acc.1 { (k, s) } else { acc });
    let worst = scores.iter().copied().fold(f64::INFINITY, f64::min);
    if best_score - worst <= 1e-12 {
        log::warn!("{kind}: CPC is flat over beta in [{lo}, {hi}]; returning midpoint");
        return Ok(BetaFit {
            beta: 0.5 * (lo + hi),
            cpc: best_score,
            flat: true,
        });
    }

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(BETA_GRID - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = data.cpc_at(kind, c.exp(), &outflow)?;
    let mut fd = data.cpc_at(kind, d.exp(), &outflow)?;
    while b - a > BETA_LOG_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = data.cpc_at(kind, c.exp(), &outflow)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = data.cpc_at(kind, d.exp(), &outflow)?;
        }
    }
    let (x, fx) = if fc >= fd { (c, fc) } else { (d, fd) };
    // The grid point can beat the refined interior on a plateau edge.
    let (x, fx) = if best_score > fx { (grid[best], best_score) } else { (x, fx) };
    Ok(BetaFit {
        beta: x.exp(),
        cpc: fx,
        flat: false,
    })
}

/// Least-squares slope of outflow against population through the origin.
pub fn fit_alpha<S: Scalar>(observed: &MigrationMatrix<S>, origins: &[usize], populations: &[S]) -> Result<S> {
    if populations.len() != observed.n_origins() {
        return Err(Error::invalid("one population per matrix origin required"));
    }
    let self_col = |i: usize| observed.dests().index_of(observed.origins().id(i));
    let mut distinct: Vec<S> = origins.iter().map(|&i| populations[i]).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InsufficientVariation(
            "alpha needs at least two origins with distinct populations".into(),
        ));
    }
    let (mut sxy, mut sxx) = (S::zero(), S::zero());
    for &i in origins {
        let m = populations[i];
        let skip = self_col(i);
        let out: S = observed.row(i).filter(|&(j, _)| Some(j) != skip).map(|(_, v)| v).sum();
        sxy += m * out;
        sxx += m * m;
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zonegraph::Zone;

    fn graph() -> ZoneGraph<f64> {
        ZoneGraph::new(
            (0..4)
                .map(|k| Zone::new(format!("z{k}"), "", k as f64, 0.0, 100.0 * (k + 1) as f64, false).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn alpha_exact_and_degenerate() {
        let g = graph();
        let reg = graph_registry(&g).unwrap();
        let pops = g.populations();
        let trip = (0..4).map(|i| (i, (i + 1) % 4, 0.03 * pops[i]));
        let t = MigrationMatrix::from_triplets(reg.clone(), reg.clone(), trip).unwrap();
        assert!((fit_alpha(&t, &[0, 1, 2, 3], &pops).unwrap() - 0.03).abs() < 1e-15);
        assert!(matches!(fit_alpha(&t, &[2], &pops), Err(Error::InsufficientVariation(_))));
    }

    #[test]
    fn flat_objective_returns_midpoint() {
        // One destination per origin: every beta yields the same flows.
        let g = ZoneGraph::new(vec![
            Zone::new("a", "", 0.0, 0.0, 10.0, false).unwrap(),
            Zone::new("b", "", 0.0, 1.0, 10.0, false).unwrap(),
        ])
        .unwrap();
        let reg = graph_registry(&g).unwrap();
        let t = MigrationMatrix::from_triplets(reg.clone(), reg, vec![(0, 1, 3.0), (1, 0, 2.0)]).unwrap();
        let fit = fit_beta(&t, &[0, 1], &g, ModelKind::ExtRadiation).unwrap();
        assert!(fit.flat);
        assert_eq!(fit.beta, 0.5 * (1e-3 + 10.0));
        assert!(fit_beta(&t, &[0, 1], &g, ModelKind::Radiation).is_err());
    }

    #[test]
    fn misaligned_registry_rejected() {
        let g = graph();
        let reg = Arc::new(Registry::new(vec!["x".into(), "y".into(), "z".into(), "w".into()]).unwrap());
        let t = MigrationMatrix::<f64>::zeros(reg.clone(), reg);
        assert!(matches!(fit_beta(&t, &[0], &g, ModelKind::GravityPow), Err(Error::RegistryMismatch(_))));
    }
}
