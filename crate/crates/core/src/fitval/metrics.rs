//! Agreement metrics between an observed and a modelled flow matrix.
//!
//! Pairs are all (origin, destination) cells whose ids differ; cells an origin
//! sends to itself are ignored. Every metric can be restricted to a subset of
//! origin rows, which is how cross-validation scores held-out origins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::MigrationMatrix;
use crate::scalar::Scalar;
use crate::slrsplit::county_of;
use crate::zonegraph::ZoneGraph;

/// Width of a trip-length histogram bin.
pub const CPC_D_BIN_KM: f64 = 2.0;

fn check_shape<S: Scalar>(t: &MigrationMatrix<S>, that: &MigrationMatrix<S>) -> Result<()> {
    if t.same_shape(that) {
        Ok(())
    } else {
        Err(Error::RegistryMismatch("metric inputs have different registries".into()))
    }
}

fn all_origins<S: Scalar>(t: &MigrationMatrix<S>) -> Vec<usize> {
    (0..t.n_origins()).collect()
}

fn self_column<S: Scalar>(t: &MigrationMatrix<S>, i: usize) -> Option<usize> {
    t.dests().index_of(t.origins().id(i))
}

/// Union of nonzero cells of row `i` in both matrices, self cell excluded.
fn merged_row<S: Scalar>(a: &MigrationMatrix<S>, b: &MigrationMatrix<S>, i: usize) -> Vec<(usize, S, S)> {
    let skip = self_column(a, i);
    let mut out = Vec::new();
    let mut ia = a.row(i).peekable();
    let mut ib = b.row(i).peekable();
    loop {
        let next = match (ia.peek(), ib.peek()) {
            (None, None) => break,
            (Some(&(j, v)), None) => {
                ia.next();
                (j, v, S::zero())
            }
            (None, Some(&(j, v))) => {
                ib.next();
                (j, S::zero(), v)
            }
            (Some(&(ja, va)), Some(&(jb, vb))) => {
                if ja == jb {
                    ia.next();
                    ib.next();
                    (ja, va, vb)
                } else if ja < jb {
                    ia.next();
                    (ja, va, S::zero())
                } else {
                    ib.next();
                    (jb, S::zero(), vb)
                }
            }
        };
        if Some(next.0) != skip {
            out.push(next);
        }
    }
    out
}

fn pair_count<S: Scalar>(t: &MigrationMatrix<S>, origins: &[usize]) -> usize {
    origins
        .iter()
        .map(|&i| t.n_dests() - usize::from(self_column(t, i).is_some()))
        .sum()
}

fn overlap(sum_min: f64, total_a: f64, total_b: f64) -> Result<f64> {
    let denom = total_a + total_b;
    if denom > 0.0 {
        Ok(2.0 * sum_min / denom)
    } else {
        Err(Error::UndefinedMetric("both flow sets are empty".into()))
    }
}

/// Common part of commuters `2 sum min(T, T^) / (sum T + sum T^)`.
pub fn cpc<S: Scalar>(t: &MigrationMatrix<S>, that: &MigrationMatrix<S>) -> Result<S> {
    cpc_rows(t, that, &all_origins(t))
}

pub fn cpc_rows<S: Scalar>(t: &MigrationMatrix<S>, that: &MigrationMatrix<S>, origins: &[usize]) -> Result<S> {
    check_shape(t, that)?;
    let (mut sum_min, mut ta, mut tb) = (S::zero(), S::zero(), S::zero());
    for &i in origins {
        for (_, a, b) in merged_row(t, that, i) {
            sum_min += a.min(b);
            ta += a;
            tb += b;
        }
    }
    overlap(sum_min.as_f64(), ta.as_f64(), tb.as_f64()).map(S::lit)
}

/// Trip-length histogram with 2 km bins; bin `k` covers `[2k, 2k + 2)` km.
pub fn distance_histogram<S: Scalar>(
    t: &MigrationMatrix<S>,
    origins: &[usize],
    distance_km: impl Fn(usize, usize) -> Result<S>,
) -> Result<BTreeMap<u64, S>> {
    let skip_self = |i: usize, j: usize| self_column(t, i) == Some(j);
    let mut hist = BTreeMap::new();
    for &i in origins {
        for (j, v) in t.row(i) {
            if skip_self(i, j) {
                continue;
            }
            let d = distance_km(i, j)?.as_f64();
            let bin = (d / CPC_D_BIN_KM).floor().max(0.0) as u64;
            *hist.entry(bin).or_insert_with(S::zero) += v;
        }
    }
    Ok(hist)
}

/// CPC of the two trip-length histograms.
pub fn cpc_distance_with<S: Scalar>(
    t: &MigrationMatrix<S>,
    that: &MigrationMatrix<S>,
    origins: &[usize],
    distance_km: impl Fn(usize, usize) -> Result<S>,
) -> Result<S> {
    check_shape(t, that)?;
    let ha = distance_histogram(t, origins, &distance_km)?;
    let hb = distance_histogram(that, origins, &distance_km)?;
    let (mut sum_min, mut ta, mut tb) = (S::zero(), S::zero(), S::zero());
    for (k, &a) in &ha {
        ta += a;
        if let Some(&b) = hb.get(k) {
            sum_min += a.min(b);
        }
    }
    for &b in hb.values() {
        tb += b;
    }
    overlap(sum_min.as_f64(), ta.as_f64(), tb.as_f64()).map(S::lit)
}

/// Resolves matrix ids to zones of `graph`, directly or via their county id.
pub fn graph_distance<'a, S: Scalar>(
    t: &'a MigrationMatrix<S>,
    graph: &'a ZoneGraph<S>,
) -> impl Fn(usize, usize) -> Result<S> + 'a {
    let lookup = move |id: &str| {
        graph
            .index_of(id)
            .or_else(|| graph.index_of(county_of(id)))
            .ok_or_else(|| Error::ReferentialIntegrity {
                offenders: vec![id.to_string()],
            })
    };
    move |i, j| {
        let a = lookup(t.origins().id(i))?;
        let b = lookup(t.dests().id(j))?;
        graph.distance(a, b)
    }
}

pub fn cpc_distance<S: Scalar>(
    t: &MigrationMatrix<S>,
    that: &MigrationMatrix<S>,
    graph: &ZoneGraph<S>,
) -> Result<S> {
    cpc_distance_with(t, that, &all_origins(t), graph_distance(t, graph))
}

/// Mean absolute error over all ordered pairs of distinct zones.
pub fn mae<S: Scalar>(t: &MigrationMatrix<S>, that: &MigrationMatrix<S>) -> Result<S> {
    mae_rows(t, that, &all_origins(t))
}

pub fn mae_rows<S: Scalar>(t: &MigrationMatrix<S>, that: &MigrationMatrix<S>, origins: &[usize]) -> Result<S> {
    check_shape(t, that)?;
    let pairs = pair_count(t, origins);
    if pairs == 0 {
        return Err(Error::UndefinedMetric("no pairs to compare".into()));
    }
    let mut acc = S::zero();
    for &i in origins {
        for (_, a, b) in merged_row(t, that, i) {
            acc += (a - b).abs();
        }
    }
    Ok(acc / S::from_usize_lossy(pairs))
}

/// Coefficient of determination `1 - SS_res / SS_tot` over all ordered pairs.
pub fn r_squared<S: Scalar>(t: &MigrationMatrix<S>, that: &MigrationMatrix<S>) -> Result<S> {
    r_squared_rows(t, that, &all_origins(t))
}

pub fn r_squared_rows<S: Scalar>(
    t: &MigrationMatrix<S>,
    that: &MigrationMatrix<S>,
    origins: &[usize],
) -> Result<S> {
    check_shape(t, that)?;
    let pairs = pair_count(t, origins);
    if pairs == 0 {
        return Err(Error::UndefinedMetric("no pairs to compare".into()));
    }
    let mut total = S::zero();
    let mut ss_res = S::zero();
    let mut nonzero = Vec::new();
    for &i in origins {
        for (_, a, b) in merged_row(t, that, i) {
            total += a;
            ss_res += (a - b) * (a - b);
            nonzero.push(a);
        }
    }
    let mean = total / S::from_usize_lossy(pairs);
    // Cells absent from both matrices are zero in truth.
    let absent = S::from_usize_lossy(pairs - nonzero.len());
    let ss_tot = nonzero.iter().map(|&a| (a - mean) * (a - mean)).sum::<S>() + absent * mean * mean;
    if !(ss_tot > S::zero()) {
        return Err(Error::UndefinedMetric("ground truth has zero variance".into()));
    }
    Ok(S::one() - ss_res / ss_tot)
}

pub fn vector_mae<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::UndefinedMetric("vectors must be nonempty and equal length".into()));
    }
    let acc: S = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(acc / S::from_usize_lossy(a.len()))
}

pub fn vector_r_squared<S: Scalar>(truth: &[S], pred: &[S]) -> Result<S> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::UndefinedMetric("vectors must be nonempty and equal length".into()));
    }
    let mean = truth.iter().copied().sum::<S>() / S::from_usize_lossy(truth.len());
    let ss_tot: S = truth.iter().map(|&x| (x - mean) * (x - mean)).sum();
    if !(ss_tot > S::zero()) {
        return Err(Error::UndefinedMetric("ground truth has zero variance".into()));
    }
    let ss_res: S = truth.iter().zip(pred).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(S::one() - ss_res / ss_tot)
}

/// Incoming totals per destination from the given origin rows, self cells excluded.
pub fn incoming_from<S: Scalar>(t: &MigrationMatrix<S>, origins: &[usize]) -> Vec<S> {
    let mut out = vec![S::zero(); t.n_dests()];
    for &i in origins {
        let skip = self_column(t, i);
        for (j, v) in t.row(i) {
            if Some(j) != skip {
                out[j] += v;
            }
        }
    }
    out
}

/// The six agreement figures; `None` where a metric is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cpc: f64,
    pub cpc_d: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    pub incoming_mae: f64,
    pub incoming_r2: Option<f64>,
}

/// Scores modelled rows against observed rows for `origins`.
pub fn evaluate<S: Scalar>(
    truth: &MigrationMatrix<S>,
    model: &MigrationMatrix<S>,
    origins: &[usize],
    graph: &ZoneGraph<S>,
) -> Result<MetricsReport> {
    let inc_t = incoming_from(truth, origins);
    let inc_m = incoming_from(model, origins);
    Ok(MetricsReport {
        cpc: cpc_rows(truth, model, origins)?.as_f64(),
        cpc_d: cpc_distance_with(truth, model, origins, graph_distance(truth, graph))?.as_f64(),
        mae: mae_rows(truth, model, origins)?.as_f64(),
        r2: r_squared_rows(truth, model, origins).ok().map(S::as_f64),
        incoming_mae: vector_mae(&inc_t, &inc_m)?.as_f64(),
        incoming_r2: vector_r_squared(&inc_t, &inc_m).ok().map(S::as_f64),
    })
}
