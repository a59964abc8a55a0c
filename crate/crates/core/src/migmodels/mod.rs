//! Migration models behind one interface: destination weights from
//! `(m_i, m_j, d_ij, s_ij)`, row normalization, and flows `T_ij = g(m_i) P_ij`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{MigrationMatrix, Registry};
use crate::scalar::Scalar;
use crate::zonegraph::{DestFeature, Zone, ZoneGraph};

pub mod neural;

pub use neural::{train_neural, NeuralConfig, NeuralModel, TrainingRow};

/// Default extended-radiation exponent for climate (forced) migrants.
pub const BETA_CLIMATE_DEFAULT: f64 = 0.13;
/// Default extended-radiation exponent for standard migrants.
pub const BETA_STANDARD_DEFAULT: f64 = 0.33;
/// Standard yearly migration fraction.
pub const ALPHA_STANDARD_DEFAULT: f64 = 0.03;
/// Distance used by power-law gravity between distinct zones sharing a centroid.
pub const SIBLING_DISTANCE_FLOOR_KM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Radiation,
    ExtRadiation,
    GravityExp,
    GravityPow,
    Neural,
}

impl ModelKind {
    pub fn uses_beta(self) -> bool {
        matches!(self, ModelKind::ExtRadiation | ModelKind::GravityExp | ModelKind::GravityPow)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Radiation => "radiation",
            ModelKind::ExtRadiation => "ext_radiation",
            ModelKind::GravityExp => "gravity_exp",
            ModelKind::GravityPow => "gravity_pow",
            ModelKind::Neural => "neural",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "radiation" => ModelKind::Radiation,
            "ext_radiation" => ModelKind::ExtRadiation,
            "gravity_exp" => ModelKind::GravityExp,
            "gravity_pow" => ModelKind::GravityPow,
            "neural" => ModelKind::Neural,
            other => return Err(Error::invalid(format!("unknown model kind {other:?}"))),
        })
    }
}

/// A fully parameterized migration model.
#[derive(Debug, Clone)]
pub struct ModelSpec<S> {
    pub kind: ModelKind,
    pub beta: Option<S>,
    pub neural: Option<Arc<NeuralModel<S>>>,
}

impl<S: Scalar> ModelSpec<S> {
    pub fn radiation() -> Self {
        ModelSpec {
            kind: ModelKind::Radiation,
            beta: None,
            neural: None,
        }
    }

    pub fn with_beta(kind: ModelKind, beta: S) -> Result<Self> {
        let spec = ModelSpec {
            kind,
            beta: Some(beta),
            neural: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn ext_radiation(beta: S) -> Result<Self> {
        Self::with_beta(ModelKind::ExtRadiation, beta)
    }

    pub fn neural(model: NeuralModel<S>) -> Self {
        ModelSpec {
            kind: ModelKind::Neural,
            beta: None,
            neural: Some(Arc::new(model)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            k if k.uses_beta() => match self.beta {
                Some(b) if b > S::zero() && b.is_finite() => Ok(()),
                Some(b) => Err(Error::invalid(format!("{k}: beta must be > 0, got {b}"))),
                None => Err(Error::invalid(format!("{k}: beta required"))),
            },
            ModelKind::Neural if self.neural.is_none() => {
                Err(Error::ModelNotFitted("neural model has no weights".into()))
            }
            _ => Ok(()),
        }
    }

    fn beta_or_err(&self) -> Result<S> {
        self.beta
            .ok_or_else(|| Error::invalid(format!("{}: beta required", self.kind)))
    }
}

/// On-disk model description: `{"kind": "...", "beta": ..., "weights_path": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpecFile {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<String>,
}

impl ModelSpecFile {
    /// Resolves into a runnable spec; `weights_path` is relative to `base_dir`.
    pub fn resolve<S: Scalar>(&self, base_dir: &Path) -> Result<ModelSpec<S>> {
        let neural = match (&self.weights_path, self.kind) {
            (Some(p), ModelKind::Neural) => {
                let text = std::fs::read_to_string(base_dir.join(p))?;
                Some(Arc::new(NeuralModel::from_json(&text)?))
            }
            _ => None,
        };
        let spec = ModelSpec {
            kind: self.kind,
            beta: self.beta.map(S::lit),
            neural,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductionKind {
    /// `g(m) = alpha * m`.
    Standard,
    /// `g(m) = m`: everyone in the zone leaves.
    Forced,
}

/// Maps a zone's population to its total outgoing migrants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductionFunction<S> {
    pub alpha: S,
    pub kind: ProductionKind,
}

impl<S: Scalar> ProductionFunction<S> {
    pub fn standard(alpha: S) -> Result<Self> {
        if !(alpha >= S::zero() && alpha <= S::one()) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(ProductionFunction {
            alpha,
            kind: ProductionKind::Standard,
        })
    }

    pub fn forced() -> Self {
        ProductionFunction {
            alpha: S::one(),
            kind: ProductionKind::Forced,
        }
    }

    pub fn apply(&self, population: S) -> S {
        match self.kind {
            ProductionKind::Forced => population,
            ProductionKind::Standard => self.alpha * population,
        }
    }
}

fn check_nonneg<S: Scalar>(name: &str, v: S) -> Result<()> {
    if v >= S::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")))
    }
}

/// Extended radiation weight
/// `[(m_i+m_j+s)^b - (m_i+s)^b] (m_i^b + 1) / ([(m_i+s)^b + 1] [(m_i+m_j+s)^b + 1])`.
pub fn prob_ext_radiation<S: Scalar>(m_i: S, m_j: S, s_ij: S, beta: S) -> Result<S> {
    check_nonneg("m_i", m_i)?;
    check_nonneg("m_j", m_j)?;
    check_nonneg("s_ij", s_ij)?;
    if !(beta > S::zero()) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
    }
    Ok(ext_radiation_unchecked(m_i, m_j, s_ij, beta))
}

#[inline]
fn ext_radiation_unchecked<S: Scalar>(m_i: S, m_j: S, s: S, beta: S) -> S {
    let one = S::one();
    let inner = (m_i + s).powf(beta);
    let outer = (m_i + m_j + s).powf(beta);
    (outer - inner) * (m_i.powf(beta) + one) / ((inner + one) * (outer + one))
}

/// Classic radiation weight `m_i m_j / ((m_i + s)(m_i + m_j + s))`; 0 when undefined.
pub fn prob_radiation<S: Scalar>(m_i: S, m_j: S, s_ij: S) -> Result<S> {
    check_nonneg("m_i", m_i)?;
    check_nonneg("m_j", m_j)?;
    check_nonneg("s_ij", s_ij)?;
    Ok(radiation_unchecked(m_i, m_j, s_ij))
}

#[inline]
fn radiation_unchecked<S: Scalar>(m_i: S, m_j: S, s: S) -> S {
    let den = (m_i + s) * (m_i + m_j + s);
    if m_j == S::zero() || den == S::zero() {
        S::zero()
    } else {
        m_i * m_j / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decay {
    Exponential,
    Power,
}

/// Singly-constrained gravity attraction: `m_j e^{-b d}` or `m_j d^{-b}`.
pub fn prob_gravity<S: Scalar>(m_j: S, d_ij: S, beta: S, decay: Decay) -> Result<S> {
    check_nonneg("m_j", m_j)?;
    check_nonneg("d_ij", d_ij)?;
    check_nonneg("beta", beta)?;
    if decay == Decay::Power && d_ij == S::zero() {
        return Err(Error::invalid("power-law gravity undefined at zero distance"));
    }
    Ok(gravity_unchecked(m_j, d_ij, beta, decay))
}

#[inline]
fn gravity_unchecked<S: Scalar>(m_j: S, d: S, beta: S, decay: Decay) -> S {
    match decay {
        Decay::Exponential => m_j * (-beta * d).exp(),
        Decay::Power => m_j * d.powf(-beta),
    }
}

/// Neural destination weight `exp(mlp(features))`.
pub fn prob_neural<S: Scalar>(
    m_i: S,
    m_j: S,
    d_ij: S,
    s_ij: S,
    model: Option<&NeuralModel<S>>,
) -> Result<S> {
    let model = model.ok_or_else(|| Error::ModelNotFitted("neural model has no weights".into()))?;
    for (name, v) in [("m_i", m_i), ("m_j", m_j), ("d_ij", d_ij), ("s_ij", s_ij)] {
        check_nonneg(name, v)?;
    }
    Ok(model.logit([m_i, m_j, d_ij, s_ij]).exp())
}

/// Normalizes in place to a probability distribution. An all-zero (or
/// non-finite) row becomes uniform; returns `true` when that fallback fired.
pub fn normalize_row<S: Scalar>(weights: &mut [S]) -> bool {
    if weights.is_empty() {
        return false;
    }
    let total: S = weights.iter().copied().sum();
    if total > S::zero() && total.is_finite() {
        for w in weights.iter_mut() {
            *w /= total;
        }
        false
    } else {
        log::warn!("degenerate probability row of {} destinations; using uniform", weights.len());
        let u = S::one() / S::from_usize_lossy(weights.len());
        weights.iter_mut().for_each(|w| *w = u);
        true
    }
}

/// Unnormalized destination weights of one origin.
pub(crate) fn destination_weights<S: Scalar>(
    spec: &ModelSpec<S>,
    m_i: S,
    feats: &[DestFeature<S>],
) -> Result<Vec<S>> {
    let floor = S::lit(SIBLING_DISTANCE_FLOOR_KM);
    Ok(match spec.kind {
        ModelKind::Radiation => feats
            .iter()
            .map(|f| radiation_unchecked(m_i, f.population, f.opportunities))
            .collect(),
        ModelKind::ExtRadiation => {
            let beta = spec.beta_or_err()?;
            feats
                .iter()
                .map(|f| ext_radiation_unchecked(m_i, f.population, f.opportunities, beta))
                .collect()
        }
        ModelKind::GravityExp => {
            let beta = spec.beta_or_err()?;
            feats
                .iter()
                .map(|f| gravity_unchecked(f.population, f.distance, beta, Decay::Exponential))
                .collect()
        }
        ModelKind::GravityPow => {
            let beta = spec.beta_or_err()?;
            feats
                .iter()
                .map(|f| {
                    let d = if f.distance > S::zero() { f.distance } else { floor };
                    gravity_unchecked(f.population, d, beta, Decay::Power)
                })
                .collect()
        }
        ModelKind::Neural => {
            let model = spec
                .neural
                .as_deref()
                .ok_or_else(|| Error::ModelNotFitted("neural model has no weights".into()))?;
            let logits: Vec<S> = feats
                .iter()
                .map(|f| model.logit([m_i, f.population, f.distance, f.opportunities]))
                .collect();
            let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
            logits.into_iter().map(|z| (z - max).exp()).collect()
        }
    })
}

/// Row-normalized destination probabilities of one origin, as `(dest, P)`.
pub(crate) fn destination_probabilities<S: Scalar>(
    spec: &ModelSpec<S>,
    m_i: S,
    feats: &[DestFeature<S>],
) -> Result<Vec<(usize, S)>> {
    let mut w = destination_weights(spec, m_i, feats)?;
    normalize_row(&mut w);
    Ok(feats.iter().map(|f| f.dest).zip(w).collect())
}

/// Flow rows for arbitrary origins into `dests`, with explicit per-origin outflow.
///
/// An origin whose id also names a destination never flows to that destination.
pub(crate) fn flow_rows<S: Scalar>(
    origins: &[Zone<S>],
    outflow: &[S],
    dests: &ZoneGraph<S>,
    spec: &ModelSpec<S>,
) -> Result<Vec<Vec<(usize, S)>>> {
    spec.validate()?;
    origins
        .par_iter()
        .zip(outflow.par_iter())
        .map(|(o, &out)| {
            if out == S::zero() {
                return Ok(Vec::new());
            }
            let feats = dests.sweep_from(o.lat, o.lon, dests.index_of(&o.id));
            if feats.is_empty() {
                return Ok(Vec::new());
            }
            let probs = destination_probabilities(spec, o.population, &feats)?;
            Ok(probs.into_iter().map(|(j, p)| (j, out * p)).collect())
        })
        .collect()
}

/// `T_ij = g(m_i) P_ij` for every origin into every destination except itself.
pub fn produce_flows<S: Scalar>(
    origins: &[Zone<S>],
    dests: &ZoneGraph<S>,
    spec: &ModelSpec<S>,
    g: &ProductionFunction<S>,
) -> Result<MigrationMatrix<S>> {
    let outflow: Vec<S> = origins.iter().map(|z| g.apply(z.population)).collect();
    let rows = flow_rows(origins, &outflow, dests, spec)?;
    let o_reg = Arc::new(Registry::new(origins.iter().map(|z| z.id.clone()).collect())?);
    let d_reg = Arc::new(Registry::new(dests.zones().iter().map(|z| z.id.clone()).collect())?);
    MigrationMatrix::from_rows(o_reg, d_reg, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ext_radiation_examples() {
        let v = prob_ext_radiation(100.0, 100.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(v, 10100.0 / 20301.0, max_relative = 1e-12);
        assert_relative_eq!(v, 0.497512, epsilon = 1e-6);
        assert_eq!(prob_ext_radiation(100.0, 0.0, 10.0, 0.5).unwrap(), 0.0);
        let lo = prob_ext_radiation(50.0, 100.0, 10.0, 0.33).unwrap();
        let hi = prob_ext_radiation(50.0, 200.0, 10.0, 0.33).unwrap();
        assert!(hi > lo);
        assert!(prob_ext_radiation(-1.0, 1.0, 0.0, 1.0).is_err());
        assert!(prob_ext_radiation(1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn radiation_examples() {
        assert_eq!(prob_radiation(100.0, 100.0, 0.0).unwrap(), 0.5);
        assert_eq!(prob_radiation(100.0, 0.0, 5.0).unwrap(), 0.0);
        assert_eq!(prob_radiation(0.0, 0.0, 0.0).unwrap(), 0.0);
        // 1e4 / (100100 * 100200)
        assert_relative_eq!(prob_radiation(100.0, 100.0, 100_000.0).unwrap(), 9.970070e-7, max_relative = 1e-6);
    }

    #[test]
    fn gravity_examples() {
        assert_eq!(prob_gravity(1000.0, 10.0, 2.0, Decay::Power).unwrap(), 10.0);
        assert_eq!(prob_gravity(1234.0, 57.0, 0.0, Decay::Exponential).unwrap(), 1234.0);
        assert!(prob_gravity(1.0, 0.0, 2.0, Decay::Power).is_err());
    }

    #[test]
    fn normalize_examples() {
        let mut w = vec![1.0, 1.0, 2.0];
        assert!(!normalize_row(&mut w));
        assert_eq!(w, vec![0.25, 0.25, 0.5]);
        let mut z = vec![0.0, 0.0];
        assert!(normalize_row(&mut z));
        assert_eq!(z, vec![0.5, 0.5]);
    }

    #[test]
    fn neural_requires_weights() {
        assert!(matches!(
            prob_neural(1.0, 1.0, 1.0, 1.0, None::<&NeuralModel<f64>>),
            Err(Error::ModelNotFitted(_))
        ));
        let spec = ModelSpec::<f64> {
            kind: ModelKind::Neural,
            beta: None,
            neural: None,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::ext_radiation(0.0).is_err());
        assert!(ModelSpec::with_beta(ModelKind::GravityPow, -1.0).is_err());
        assert!(ModelSpec::<f64>::radiation().validate().is_ok());
        assert!(ProductionFunction::standard(1.5).is_err());
        assert_eq!(ProductionFunction::<f64>::forced().apply(250.0), 250.0);
        assert_relative_eq!(ProductionFunction::standard(0.03).unwrap().apply(1000.0), 30.0, epsilon = 1e-12);
    }

    #[test]
    fn spec_file_roundtrip() {
        let f: ModelSpecFile = serde_json::from_str(r#"{"kind": "gravity_pow", "beta": 2.7}"#).unwrap();
        let spec: ModelSpec<f64> = f.resolve(Path::new(".")).unwrap();
        assert_eq!(spec.kind, ModelKind::GravityPow);
        assert_eq!(spec.beta, Some(2.7));
        let bad: ModelSpecFile = serde_json::from_str(r#"{"kind": "ext_radiation"}"#).unwrap();
        assert!(bad.resolve::<f64>(Path::new(".")).is_err());
        assert_eq!("gravity_exp".parse::<ModelKind>().unwrap(), ModelKind::GravityExp);
    }

    fn strip3() -> ZoneGraph<f64> {
        ZoneGraph::new(vec![
            Zone::new("a", "a", 0.0, 0.0, 100.0, false).unwrap(),
            Zone::new("b", "b", 0.0, 1.0, 200.0, false).unwrap(),
            Zone::new("c", "c", 0.0, 2.0, 300.0, false).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn produce_flows_hand_matrix() {
        // beta = 1: P = (m_j)(m_i+1) / ((m_i+s+1)(m_i+m_j+s+1)) before normalization.
        let g = strip3();
        let w = |mi: f64, mj: f64, s: f64| mj * (mi + 1.0) / ((mi + s + 1.0) * (mi + mj + s + 1.0));
        let expected = [
            [0.0, w(100.0, 200.0, 0.0), w(100.0, 300.0, 200.0)],
            [w(200.0, 100.0, 0.0), 0.0, w(200.0, 300.0, 0.0)],
            [w(300.0, 100.0, 200.0), w(300.0, 200.0, 0.0), 0.0],
        ];
        let spec = ModelSpec::ext_radiation(1.0).unwrap();
        let t = produce_flows(g.zones(), &g, &spec, &ProductionFunction::forced()).unwrap();
        for i in 0..3 {
            let row_total: f64 = expected[i].iter().sum();
            for j in 0..3 {
                let want = g.zones()[i].population * expected[i][j] / row_total;
                assert_relative_eq!(t.get(i, j), want, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn produce_flows_row_sums() {
        let g = strip3();
        let spec = ModelSpec::ext_radiation(0.33).unwrap();
        let forced = produce_flows(g.zones(), &g, &spec, &ProductionFunction::forced()).unwrap();
        assert_relative_eq!(forced.row_sum(0), 100.0, max_relative = 1e-12);
        let mut big = g.zones().to_vec();
        big[0].population = 1000.0;
        let std = produce_flows(&big, &g, &spec, &ProductionFunction::standard(0.03).unwrap()).unwrap();
        assert_relative_eq!(std.row_sum(0), 30.0, max_relative = 1e-12);
        assert_eq!(std.get(0, 0), 0.0);

        let mut empty = g.zones().to_vec();
        empty[1].population = 0.0;
        let t = produce_flows(&empty, &g, &spec, &ProductionFunction::forced()).unwrap();
        assert_eq!(t.row_sum(1), 0.0);
    }

    #[test]
    fn power_gravity_floors_sibling_distance() {
        let dests = ZoneGraph::new(vec![
            Zone::new("x:U", "x", 10.0, 10.0, 100.0, false).unwrap(),
            Zone::new("y:U", "y", 10.0, 11.0, 100.0, false).unwrap(),
        ])
        .unwrap();
        let origin = [Zone::new("x:A", "x", 10.0, 10.0, 50.0, false).unwrap()];
        let spec = ModelSpec::with_beta(ModelKind::GravityPow, 2.0).unwrap();
        let t = produce_flows(&origin, &dests, &spec, &ProductionFunction::forced()).unwrap();
        let d = dests.distance(0, 1).unwrap();
        let w_sib = 100.0 / 1.0;
        let w_far = 100.0 / (d * d);
        assert_relative_eq!(t.get(0, 0), 50.0 * w_sib / (w_sib + w_far), max_relative = 1e-12);
    }
}
