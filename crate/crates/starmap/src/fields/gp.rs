//! Gaussian-process regression over relation parameters.
//!
//! A [`GpModel`] is a squared-exponential GP fit to (location, parameter)
//! pairs. Unlike the raster backend it predicts anywhere, carries a
//! per-point confidence (the predictive standard deviation), and supports
//! confidence-guided refinement: repeatedly sample the relation where the
//! model is least certain and refit.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize};

use crate::fields::FieldError;
use crate::geometry::{Point, Tag};
use crate::relations::{moment_match, sample_relation, RelationKind};
use crate::uam::MapCollection;

/// Squared-exponential kernel hyperparameters:
/// `k(a, b) = signal_variance · exp(-|a-b|² / (2 · length_scale²))`,
/// with `noise_variance` added on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGpHyperparams")]
pub struct GpHyperparams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

#[derive(Deserialize)]
struct RawGpHyperparams {
    signal_variance: f64,
    length_scale: f64,
    noise_variance: f64,
}

impl TryFrom<RawGpHyperparams> for GpHyperparams {
    type Error = FieldError;

    fn try_from(raw: RawGpHyperparams) -> Result<Self, FieldError> {
        GpHyperparams::new(raw.signal_variance, raw.length_scale, raw.noise_variance)
    }
}

impl GpHyperparams {
    pub fn new(
        signal_variance: f64,
        length_scale: f64,
        noise_variance: f64,
    ) -> Result<Self, FieldError> {
        for (what, value, strictly) in [
            ("signal_variance", signal_variance, true),
            ("length_scale", length_scale, true),
            ("noise_variance", noise_variance, false),
        ] {
            if !value.is_finite() || value < 0.0 || (strictly && value == 0.0) {
                return Err(FieldError::InvalidHyperparam { what, value });
            }
        }
        Ok(GpHyperparams {
            signal_variance,
            length_scale,
            noise_variance,
        })
    }

    /// Data-driven defaults: the length scale is twice the mean sample
    /// spacing, the signal variance is the sample variance of the targets
    /// (floored to keep the kernel matrix well conditioned), and the noise
    /// variance is a 1e-4 fraction of the signal.
    pub fn defaults(targets: &[f64], mean_spacing: f64) -> Result<Self, FieldError> {
        let n = targets.len().max(1) as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        let signal = var.max(1e-10);
        let spacing = if mean_spacing > 0.0 { mean_spacing } else { 1.0 };
        GpHyperparams::new(signal, 2.0 * spacing, 1e-4 * signal)
    }

    fn kernel(&self, a: Point, b: Point) -> f64 {
        let d2 = (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
        self.signal_variance * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// A fitted Gaussian process.
///
/// Training pairs with bit-identical locations are merged by averaging
/// their targets before fitting, so refits after refinement stay
/// numerically stable even when a location is sampled twice.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Point>,
    targets: Vec<f64>,
    hyper: GpHyperparams,
    target_mean: f64,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        // The factorization is a pure function of the training data.
        self.inputs == other.inputs && self.targets == other.targets && self.hyper == other.hyper
    }
}

impl GpModel {
    /// Fits a GP to training pairs with the given hyperparameters.
    pub fn fit(pairs: &[(Point, f64)], hyper: GpHyperparams) -> Result<GpModel, FieldError> {
        let (inputs, targets) = dedup_average(pairs);
        if inputs.is_empty() {
            return Err(FieldError::NoTrainingData);
        }
        let n = inputs.len();
        let target_mean = targets.iter().sum::<f64>() / n as f64;
        let residuals = DVector::from_iterator(n, targets.iter().map(|t| t - target_mean));

        let base = DMatrix::from_fn(n, n, |i, j| hyper.kernel(inputs[i], inputs[j]));
        // Escalate diagonal jitter until the factorization succeeds; the
        // kernel is PSD in exact arithmetic, so failures are rounding.
        let mut jitter = 0.0;
        let mut attempt = 0u32;
        let chol = loop {
            let mut k = base.clone();
            for i in 0..n {
                k[(i, i)] += hyper.noise_variance + jitter;
            }
            if let Some(c) = Cholesky::new(k) {
                break c;
            }
            if attempt >= 10 {
                return Err(FieldError::KernelNotPositiveDefinite);
            }
            jitter = hyper.signal_variance * 1e-12 * 10f64.powi(attempt as i32);
            attempt += 1;
        };
        let alpha = chol.solve(&residuals);
        Ok(GpModel {
            inputs,
            targets,
            hyper,
            target_mean,
            alpha,
            chol,
            jitter,
        })
    }

    /// Refits with additional training pairs, keeping the hyperparameters.
    pub fn with_added(&self, pairs: &[(Point, f64)]) -> Result<GpModel, FieldError> {
        let mut all: Vec<(Point, f64)> = self
            .inputs
            .iter()
            .zip(&self.targets)
            .map(|(p, t)| (*p, *t))
            .collect();
        all.extend_from_slice(pairs);
        GpModel::fit(&all, self.hyper)
    }

    pub fn inputs(&self) -> &[Point] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn hyper(&self) -> GpHyperparams {
        self.hyper
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Posterior mean at `x`. O(n).
    pub fn predict_mean(&self, x: Point) -> f64 {
        let mut acc = 0.0;
        for (i, p) in self.inputs.iter().enumerate() {
            acc += self.hyper.kernel(x, *p) * self.alpha[i];
        }
        self.target_mean + acc
    }

    /// Posterior mean and standard deviation at `x`. O(n²).
    ///
    /// The predictive variance includes the noise term, so far from all
    /// training points the stddev approaches
    /// `sqrt(signal_variance + noise_variance)`.
    pub fn predict(&self, x: Point) -> (f64, f64) {
        let n = self.inputs.len();
        let k_star = DVector::from_fn(n, |i, _| self.hyper.kernel(x, self.inputs[i]));
        let mean = self.target_mean + k_star.dot(&self.alpha);
        let v = self.chol.solve(&k_star);
        let var = self.hyper.signal_variance + self.hyper.noise_variance - k_star.dot(&v);
        (mean, var.max(0.0).sqrt())
    }

    /// Log marginal likelihood of the training targets under the model.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len() as f64;
        let residuals = DVector::from_iterator(
            self.targets.len(),
            self.targets.iter().map(|t| t - self.target_mean),
        );
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * residuals.dot(&self.alpha)
            - log_det
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Diagonal jitter the factorization needed beyond the noise term.
    /// Zero unless the kernel matrix was near-singular.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }
}

impl Serialize for GpModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("GpModel", 3)?;
        s.serialize_field("inputs", &self.inputs)?;
        s.serialize_field("targets", &self.targets)?;
        s.serialize_field("hyper", &self.hyper)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for GpModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            inputs: Vec<Point>,
            targets: Vec<f64>,
            hyper: GpHyperparams,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.inputs.len() != raw.targets.len() {
            return Err(serde::de::Error::custom(
                "gaussian process inputs and targets differ in length",
            ));
        }
        let pairs: Vec<(Point, f64)> = raw
            .inputs
            .into_iter()
            .zip(raw.targets)
            .collect();
        GpModel::fit(&pairs, raw.hyper).map_err(serde::de::Error::custom)
    }
}

/// Merges bit-identical locations, averaging their targets; first
/// occurrence order is kept.
fn dedup_average(pairs: &[(Point, f64)]) -> (Vec<Point>, Vec<f64>) {
    let mut order: Vec<Point> = Vec::new();
    let mut sums: std::collections::HashMap<(u64, u64), (usize, f64, f64)> =
        std::collections::HashMap::new();
    for (p, t) in pairs {
        let key = (p.x.to_bits(), p.y.to_bits());
        match sums.get_mut(&key) {
            Some((_, sum, count)) => {
                *sum += t;
                *count += 1.0;
            }
            None => {
                sums.insert(key, (order.len(), *t, 1.0));
                order.push(*p);
            }
        }
    }
    let mut targets = vec![0.0; order.len()];
    for (_, (index, sum, count)) in sums {
        targets[index] = sum / count;
    }
    (order, targets)
}

/// 5×5 logarithmic grid search over (length scale, signal variance)
/// maximizing the marginal likelihood.
///
/// Factors span 1/4 .. 4 around the base values; the noise keeps its ratio
/// to the signal. Ties resolve to the first candidate in row-major factor
/// order, so tuning is deterministic.
pub fn tune_hyperparams(
    pairs: &[(Point, f64)],
    base: GpHyperparams,
) -> Result<GpHyperparams, FieldError> {
    const FACTORS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
    let noise_ratio = base.noise_variance / base.signal_variance;
    let mut best: Option<(f64, GpHyperparams)> = None;
    for lf in FACTORS {
        for sf in FACTORS {
            let hyper = GpHyperparams::new(
                base.signal_variance * sf,
                base.length_scale * lf,
                base.signal_variance * sf * noise_ratio,
            )?;
            let model = GpModel::fit(pairs, hyper)?;
            let lml = model.log_marginal_likelihood();
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, hyper));
            }
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

/// Confidence-guided refinement of one model.
///
/// Each round predicts the stddev at every candidate, picks the `batch`
/// highest (ties broken toward lower candidate index), samples the relation
/// there against the shared collection, and refits with the new pairs.
/// Refinement is deterministic: the collection is fixed and selection has a
/// total order.
#[allow(clippy::too_many_arguments)]
pub fn gp_refine(
    model: &GpModel,
    collection: &MapCollection,
    relation: RelationKind,
    tag: &Tag,
    param_index: usize,
    candidates: &[Point],
    batch: usize,
    rounds: usize,
    line_width: f64,
) -> Result<GpModel, FieldError> {
    let mut refined = model.clone();
    refine_guided(
        &mut refined,
        &mut [],
        candidates,
        batch,
        rounds,
        |point| {
            let samples = sample_relation(relation, point, tag, collection, line_width)?;
            let params = moment_match(&samples)?;
            let value = params
                .param(param_index)
                .ok_or(FieldError::BadParamIndex {
                    relation,
                    param_index,
                })?;
            Ok(vec![value])
        },
    )?;
    Ok(refined)
}

/// Shared refinement loop: `guide` drives the selection; `followers` are
/// refit with the same locations so sibling parameter fields stay trained
/// on identical sample provenance. `sample_at` returns one target per
/// model, guide first.
pub(crate) fn refine_guided<F>(
    guide: &mut GpModel,
    followers: &mut [&mut GpModel],
    candidates: &[Point],
    batch: usize,
    rounds: usize,
    mut sample_at: F,
) -> Result<(), FieldError>
where
    F: FnMut(Point) -> Result<Vec<f64>, FieldError>,
{
    if rounds == 0 || batch == 0 {
        return Ok(());
    }
    if candidates.is_empty() {
        return Err(FieldError::NoCandidates);
    }
    for _ in 0..rounds {
        // Predictions are pure, so parallel evaluation stays deterministic.
        let guide_ref = &*guide;
        let mut ranked: Vec<(usize, f64)> = candidates
            .par_iter()
            .enumerate()
            .map(|(i, p)| (i, guide_ref.predict(*p).1))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let chosen: Vec<Point> = ranked
            .iter()
            .take(batch)
            .map(|(i, _)| candidates[*i])
            .collect();

        let mut per_model: Vec<Vec<(Point, f64)>> = vec![Vec::new(); followers.len() + 1];
        for point in chosen {
            let values = sample_at(point)?;
            debug_assert_eq!(values.len(), per_model.len());
            for (slot, value) in per_model.iter_mut().zip(values) {
                slot.push((point, value));
            }
        }
        *guide = guide.with_added(&per_model[0])?;
        for (follower, pairs) in followers.iter_mut().zip(&per_model[1..]) {
            **follower = follower.with_added(pairs)?;
        }
    }
    Ok(())
}
