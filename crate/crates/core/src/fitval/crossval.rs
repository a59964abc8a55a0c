//! Origin-split cross-validation: every flow leaving a test origin is held out
//! together, parameters are fitted on the remaining origins only.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::MigrationMatrix;
use crate::migmodels::{train_neural, ModelKind, ModelSpec, NeuralConfig, TrainingRow};
use crate::scalar::Scalar;
use crate::zonegraph::{FeatureRow, ZoneGraph};

use super::calibrate::{check_aligned, fit_alpha, fit_beta, CalibrationData};
use super::metrics::{evaluate, MetricsReport};

pub const CV_SCHEMA: &str = "slrmig.cv/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    KFold(usize),
    LeaveOneOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub mode: CvMode,
    /// Origin indices taking part; flows from other origins are never used.
    pub origins: Vec<usize>,
    /// Shuffles origins before k-fold assignment.
    pub seed: u64,
}

impl CvPlan {
    /// Test-origin sets, one per fold. Together they partition `origins`.
    pub fn folds(&self) -> Result<Vec<Vec<usize>>> {
        let n = self.origins.len();
        let mut sorted = self.origins.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != n {
            return Err(Error::invalid("cross-validation origins contain duplicates"));
        }
        match self.mode {
            CvMode::LeaveOneOut => {
                if n < 2 {
                    return Err(Error::InsufficientData(format!("leave-one-out needs >= 2 origins, got {n}")));
                }
                Ok(self.origins.iter().map(|&o| vec![o]).collect())
            }
            CvMode::KFold(k) => {
                if k < 2 || n < k {
                    return Err(Error::InsufficientData(format!("{k}-fold needs k >= 2 and >= k origins, got {n}")));
                }
                let mut shuffled = self.origins.clone();
                shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
                let mut folds = vec![Vec::new(); k];
                for (p, o) in shuffled.into_iter().enumerate() {
                    folds[p % k].push(o);
                }
                folds.iter_mut().for_each(|f| f.sort_unstable());
                Ok(folds)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CvOptions {
    pub neural: NeuralConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldYear {
    pub year: i32,
    pub alpha: f64,
    pub beta: Option<f64>,
    /// `None` when the fold's test origins have no observed flows that year.
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_origins: Vec<String>,
    pub years: Vec<FoldYear>,
    pub alpha_mean: f64,
    pub beta_mean: Option<f64>,
    /// Metrics per year, then averaged over years.
    pub metric_then_average: Option<MetricsReport>,
    /// Parameters averaged over years, then evaluated per year and averaged.
    /// Not defined for the neural kind.
    pub average_then_metric: Option<MetricsReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// Mean and sample standard deviation.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub schema: String,
    pub kind: ModelKind,
    pub mode: CvMode,
    pub seed: u64,
    pub n_folds: usize,
    pub folds: Vec<FoldReport>,
    pub alpha: Option<Summary>,
    /// `None` for kinds without a beta, reported as "n/a".
    pub beta: Option<Summary>,
    pub metrics: BTreeMap<String, Summary>,
}

fn mean_metrics(reports: &[MetricsReport]) -> Option<MetricsReport> {
    if reports.is_empty() {
        return None;
    }
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    let mean_opt = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some(MetricsReport {
        cpc: mean(&|r| r.cpc),
        cpc_d: mean(&|r| r.cpc_d),
        mae: mean(&|r| r.mae),
        r2: mean_opt(&|r| r.r2),
        incoming_mae: mean(&|r| r.incoming_mae),
        incoming_r2: mean_opt(&|r| r.incoming_r2),
    })
}

/// Observed rows of `origins` as neural training rows.
pub fn training_rows<S: Scalar>(
    observed: &MigrationMatrix<S>,
    origins: &[usize],
    graph: &ZoneGraph<S>,
) -> Result<Vec<TrainingRow<S>>> {
    let mut rows = Vec::new();
    for &i in origins {
        let m_i = graph.zones()[i].population;
        let dense = observed.dense_row(i);
        for f in graph.sweep_origin(i)? {
            rows.push(TrainingRow {
                features: FeatureRow {
                    origin: i,
                    dest: f.dest,
                    origin_pop: m_i,
                    dest_pop: f.population,
                    distance: f.distance,
                    opportunities: f.opportunities,
                },
                flow: dense[f.dest],
            });
        }
    }
    Ok(rows)
}

/// Parameters fitted on one year of training rows.
#[derive(Debug, Clone)]
pub struct FittedModel<S> {
    pub alpha: S,
    pub beta: Option<f64>,
    pub spec: ModelSpec<S>,
}

/// Fits `alpha` and the kind's own parameter(s) on `train` origins only.
pub fn fit_model<S: Scalar>(
    observed: &MigrationMatrix<S>,
    train: &[usize],
    graph: &ZoneGraph<S>,
    kind: ModelKind,
    opts: &CvOptions,
) -> Result<FittedModel<S>> {
    let alpha = fit_alpha(observed, train, &graph.populations())?;
    let (beta, spec) = match kind {
        ModelKind::Radiation => (None, ModelSpec::radiation()),
        ModelKind::Neural => {
            let rows = training_rows(observed, train, graph)?;
            (None, ModelSpec::neural(train_neural(&rows, &opts.neural)?))
        }
        k => {
            let fit = fit_beta(observed, train, graph, k)?;
            (Some(fit.beta), ModelSpec::with_beta(k, S::lit(fit.beta))?)
        }
    };
    Ok(FittedModel { alpha, beta, spec })
}

/// Scores a model on `test` origins with outflow `alpha * m_i`.
pub fn score<S: Scalar>(
    observed: &MigrationMatrix<S>,
    test: &[usize],
    graph: &ZoneGraph<S>,
    spec: &ModelSpec<S>,
    alpha: S,
) -> Result<Option<MetricsReport>> {
    let data = CalibrationData::new(observed, test, graph)?;
    if data.observed_outflow().iter().all(|&o| o == S::zero()) {
        log::warn!("test origins {test:?} have no observed flows; fold-year skipped");
        return Ok(None);
    }
    let outflow: Vec<S> = test.iter().map(|&i| alpha * graph.zones()[i].population).collect();
    let model = data.predict(spec, &outflow)?;
    evaluate(observed, &model, test, graph).map(Some)
}

fn run_fold<S: Scalar>(
    fold: usize,
    test: &[usize],
    plan: &CvPlan,
    flows: &BTreeMap<i32, MigrationMatrix<S>>,
    graph: &ZoneGraph<S>,
    kind: ModelKind,
    opts: &CvOptions,
) -> Result<FoldReport> {
    let train: Vec<usize> = plan.origins.iter().copied().filter(|o| !test.contains(o)).collect();
    let mut years = Vec::with_capacity(flows.len());
    let mut fitted = Vec::with_capacity(flows.len());
    for (&year, observed) in flows {
        let fit = fit_model(observed, &train, graph, kind, opts)?;
        let metrics = score(observed, test, graph, &fit.spec, fit.alpha)?;
        years.push(FoldYear {
            year,
            alpha: fit.alpha.as_f64(),
            beta: fit.beta,
            metrics,
        });
        fitted.push(fit);
    }

    let alpha_mean = years.iter().map(|y| y.alpha).sum::<f64>() / years.len().max(1) as f64;
    let betas: Vec<f64> = years.iter().filter_map(|y| y.beta).collect();
    let beta_mean = (!betas.is_empty()).then(|| betas.iter().sum::<f64>() / betas.len() as f64);
    let per_year: Vec<MetricsReport> = years.iter().filter_map(|y| y.metrics).collect();

    let average_then_metric = if kind == ModelKind::Neural || years.is_empty() {
        None
    } else {
        let spec = match beta_mean {
            Some(b) => ModelSpec::with_beta(kind, S::lit(b))?,
            None => ModelSpec::radiation(),
        };
        let mut reports = Vec::new();
        for observed in flows.values() {
            if let Some(r) = score(observed, test, graph, &spec, S::lit(alpha_mean))? {
                reports.push(r);
            }
        }
        mean_metrics(&reports)
    };

    Ok(FoldReport {
        fold,
        test_origins: test.iter().map(|&i| graph.zones()[i].id.clone()).collect(),
        years,
        alpha_mean,
        beta_mean,
        metric_then_average: mean_metrics(&per_year),
        average_then_metric,
    })
}

/// Runs the plan over every year of `flows`. Folds run concurrently and are
/// reported in fold order.
pub fn cross_validate<S: Scalar>(
    flows: &BTreeMap<i32, MigrationMatrix<S>>,
    graph: &ZoneGraph<S>,
    kind: ModelKind,
    plan: &CvPlan,
    opts: &CvOptions,
) -> Result<CvReport> {
    if flows.is_empty() {
        return Err(Error::InsufficientData("no flow years supplied".into()));
    }
    for t in flows.values() {
        check_aligned(t, graph)?;
    }
    let folds = plan.folds()?;
    let reports: Vec<FoldReport> = folds
        .par_iter()
        .enumerate()
        .map(|(k, test)| run_fold(k, test, plan, flows, graph, kind, opts))
        .collect::<Result<_>>()?;

    let scored: Vec<&MetricsReport> = reports.iter().filter_map(|f| f.metric_then_average.as_ref()).collect();
    let mut metrics = BTreeMap::new();
    let columns: [(&str, Arc<dyn Fn(&MetricsReport) -> Option<f64>>); 6] = [
        ("cpc", Arc::new(|r| Some(r.cpc))),
        ("cpc_d", Arc::new(|r| Some(r.cpc_d))),
        ("mae", Arc::new(|r| Some(r.mae))),
        ("r2", Arc::new(|r| r.r2)),
        ("incoming_mae", Arc::new(|r| Some(r.incoming_mae))),
        ("incoming_r2", Arc::new(|r| r.incoming_r2)),
    ];
    for (name, f) in columns {
        let v: Vec<f64> = scored.iter().filter_map(|r| f(r)).collect();
        if let Some(s) = Summary::of(&v) {
            metrics.insert(name.to_string(), s);
        }
    }
    let alphas: Vec<f64> = reports.iter().map(|f| f.alpha_mean).collect();
    let betas: Vec<f64> = reports.iter().filter_map(|f| f.beta_mean).collect();
    Ok(CvReport {
        schema: CV_SCHEMA.into(),
        kind,
        mode: plan.mode,
        seed: plan.seed,
        n_folds: reports.len(),
        folds: reports,
        alpha: Summary::of(&alphas),
        beta: Summary::of(&betas),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_origins() {
        let origins: Vec<usize> = (0..23).collect();
        let plan = CvPlan {
            mode: CvMode::KFold(5),
            origins: origins.clone(),
            seed: 42,
        };
        let folds = plan.folds().unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, origins);
        assert_eq!(folds, plan.folds().unwrap());

        let loo = CvPlan {
            mode: CvMode::LeaveOneOut,
            origins: vec![3, 9, 11, 12, 20, 21, 22],
            seed: 0,
        };
        assert_eq!(loo.folds().unwrap().len(), 7);
    }

    #[test]
    fn insufficient_origins() {
        let plan = CvPlan {
            mode: CvMode::KFold(5),
            origins: vec![0, 1, 2],
            seed: 1,
        };
        assert!(matches!(plan.folds(), Err(Error::InsufficientData(_))));
        let dup = CvPlan {
            mode: CvMode::LeaveOneOut,
            origins: vec![0, 0],
            seed: 1,
        };
        assert!(dup.folds().is_err());
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert!(Summary::of(&[]).is_none());
    }
}
