//! Single-neuron correctors that veto errors of a legacy binary classifier.
//!
//! A corrector whitens the legacy system's feature vector with statistics of
//! its correct behaviour, projects onto a Fisher direction and fires when the
//! projection reaches the threshold. A firing corrector turns a positive
//! decision negative; negative decisions are never touched.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{invalid_parameter, Error, Result};
use crate::preprocess::{apply_whitening, fit_whitening_components, WhiteningFile, WhiteningModel};
use crate::sampling::Seed;
use crate::scalar::Scalar;

pub const CORRECTOR_SCHEMA: &str = "sepkit.corrector/1";
pub const CASCADE_SCHEMA: &str = "sepkit.cascade/1";

/// One output of the legacy classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LegacyDecision<T: Scalar> {
    pub feature: DVector<T>,
    pub score: f64,
    pub decided_positive: bool,
}

impl<T: Scalar> LegacyDecision<T> {
    /// Decision implied by the legacy threshold: positive iff `score > threshold`.
    pub fn new(feature: DVector<T>, score: f64, legacy_threshold: f64) -> Self {
        Self {
            feature,
            score,
            decided_positive: score > legacy_threshold,
        }
    }
}

/// Anything that can veto positive decisions.
pub trait ErrorFilter<T: Scalar> {
    fn input_dim(&self) -> usize;

    /// Whether the filter classifies `feature` as a legacy error.
    fn fires(&self, feature: &DVector<T>) -> Result<bool>;

    /// Suppresses a positive decision when the filter fires. The score is
    /// pushed to `min(-|score|, legacy_threshold)` so it stays consistent
    /// with the legacy threshold.
    fn apply(&self, decision: &LegacyDecision<T>, legacy_threshold: f64) -> Result<LegacyDecision<T>> {
        if decision.feature.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: decision.feature.len(),
            });
        }
        if !decision.decided_positive || !self.fires(&decision.feature)? {
            return Ok(decision.clone());
        }
        Ok(LegacyDecision {
            feature: decision.feature.clone(),
            score: (-decision.score.abs()).min(legacy_threshold),
            decided_positive: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrector<T: Scalar> {
    pub preprocessing: WhiteningModel<T>,
    /// Fisher direction in whitened coordinates.
    pub weights: DVector<T>,
    pub threshold: T,
    /// Indices of the errors the corrector was fitted on, relative to the error set.
    pub trained_on: Vec<usize>,
    pub n_correct: usize,
}

impl<T: Scalar> Corrector<T> {
    /// `(z, w)` for the whitened feature `z`.
    pub fn score(&self, feature: &DVector<T>) -> Result<T> {
        Ok(self.preprocessing.transform(feature)?.dot(&self.weights))
    }

    pub fn to_file(&self) -> CorrectorFile {
        CorrectorFile {
            schema: CORRECTOR_SCHEMA.to_owned(),
            preprocessing: self.preprocessing.to_file(),
            weights: self.weights.iter().map(|v| v.f64()).collect(),
            threshold: self.threshold.f64(),
            trained_on: self.trained_on.clone(),
            metadata: CorrectorMetadata {
                n_correct: self.n_correct,
                n_errors: self.trained_on.len(),
                pca_components: self.preprocessing.retained(),
            },
        }
    }

    pub fn from_file(file: &CorrectorFile) -> Result<Self> {
        if file.schema != CORRECTOR_SCHEMA {
            return Err(Error::InvalidInput(format!(
                "unsupported corrector schema {:?}",
                file.schema
            )));
        }
        let preprocessing = WhiteningModel::from_file(&file.preprocessing)?;
        if file.weights.len() != preprocessing.retained() {
            return Err(Error::InvalidInput(format!(
                "corrector has {} weights for {} whitened components",
                file.weights.len(),
                preprocessing.retained()
            )));
        }
        Ok(Self {
            weights: DVector::from_iterator(file.weights.len(), file.weights.iter().map(|v| T::of(*v))),
            threshold: T::of(file.threshold),
            trained_on: file.trained_on.clone(),
            n_correct: file.metadata.n_correct,
            preprocessing,
        })
    }
}

impl<T: Scalar> ErrorFilter<T> for Corrector<T> {
    fn input_dim(&self) -> usize {
        self.preprocessing.input_dim()
    }

    /// Closed firing region: `(z, w) >= c`.
    fn fires(&self, feature: &DVector<T>) -> Result<bool> {
        Ok(self.score(feature)? >= self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorMetadata {
    pub n_correct: usize,
    pub n_errors: usize,
    pub pca_components: usize,
}

/// On-disk corrector: whitening model, Fisher direction `weights` in
/// whitened coordinates, `threshold`, and the training error indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorFile {
    pub schema: String,
    pub preprocessing: WhiteningFile,
    pub weights: Vec<f64>,
    pub threshold: f64,
    pub trained_on: Vec<usize>,
    pub metadata: CorrectorMetadata,
}

/// Correctors applied in order; the first firing stage suppresses the decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade<T: Scalar> {
    pub stages: Vec<Corrector<T>>,
}

impl<T: Scalar> Cascade<T> {
    pub fn new(stages: Vec<Corrector<T>>) -> Result<Self> {
        let Some(first) = stages.first() else {
            return Err(invalid_parameter("a cascade needs at least one stage"));
        };
        let dim = first.input_dim();
        if let Some(s) = stages.iter().find(|s| s.input_dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.input_dim(),
            });
        }
        Ok(Self { stages })
    }

    /// Index of the first stage that fires.
    pub fn firing_stage(&self, feature: &DVector<T>) -> Result<Option<usize>> {
        for (i, s) in self.stages.iter().enumerate() {
            if s.fires(feature)? {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }

    pub fn to_file(&self) -> CascadeFile {
        CascadeFile {
            schema: CASCADE_SCHEMA.to_owned(),
            stages: self.stages.iter().map(Corrector::to_file).collect(),
        }
    }

    pub fn from_file(file: &CascadeFile) -> Result<Self> {
        if file.schema != CASCADE_SCHEMA {
            return Err(Error::InvalidInput(format!(
                "unsupported cascade schema {:?}",
                file.schema
            )));
        }
        Self::new(file.stages.iter().map(Corrector::from_file).collect::<Result<_>>()?)
    }
}

impl<T: Scalar> ErrorFilter<T> for Cascade<T> {
    fn input_dim(&self) -> usize {
        self.stages[0].input_dim()
    }

    fn fires(&self, feature: &DVector<T>) -> Result<bool> {
        Ok(self.firing_stage(feature)?.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeFile {
    pub schema: String,
    pub stages: Vec<CorrectorFile>,
}

/// A corrector or a cascade, as loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Filter<T: Scalar> {
    Single(Corrector<T>),
    Cascade(Cascade<T>),
}

impl<T: Scalar> Filter<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(match self {
            Filter::Single(c) => serde_json::to_string_pretty(&c.to_file())?,
            Filter::Cascade(c) => serde_json::to_string_pretty(&c.to_file())?,
        })
    }

    /// Reads either schema, dispatching on the `schema` field.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            schema: String,
        }
        let probe: Probe = serde_json::from_str(text)?;
        match probe.schema.as_str() {
            CORRECTOR_SCHEMA => Ok(Filter::Single(Corrector::from_file(&serde_json::from_str(text)?)?)),
            CASCADE_SCHEMA => Ok(Filter::Cascade(Cascade::from_file(&serde_json::from_str(text)?)?)),
            other => Err(Error::InvalidInput(format!("unsupported filter schema {other:?}"))),
        }
    }
}

impl<T: Scalar> ErrorFilter<T> for Filter<T> {
    fn input_dim(&self) -> usize {
        match self {
            Filter::Single(c) => c.input_dim(),
            Filter::Cascade(c) => c.input_dim(),
        }
    }

    fn fires(&self, feature: &DVector<T>) -> Result<bool> {
        match self {
            Filter::Single(c) => c.fires(feature),
            Filter::Cascade(c) => c.fires(feature),
        }
    }
}

/// Fits a corrector separating the error set `errors` from the correct set `correct`.
///
/// Whitening statistics and principal directions come from `correct` only.
/// The weight is the difference of whitened class means and the threshold
/// is the smallest whitened error score, so every training error fires.
pub fn fit_corrector<T: Scalar>(
    correct: &PointCloud<T>,
    errors: &PointCloud<T>,
    pca_components: usize,
) -> Result<Corrector<T>> {
    if errors.dim() != correct.dim() {
        return Err(Error::DimensionMismatch {
            expected: correct.dim(),
            found: errors.dim(),
        });
    }
    let preprocessing = fit_whitening_components(correct, pca_components)?;
    let m_white = apply_whitening(&preprocessing, correct)?;
    let y_white = apply_whitening(&preprocessing, errors)?;
    let weights = y_white.mean() - m_white.mean();
    // whitened coordinates have unit scale, so this is a relative test
    let tiny = T::default_epsilon() * T::of(1e3 * (weights.len() as f64).sqrt());
    if weights.norm() <= tiny {
        return Err(Error::DegenerateDirection(
            "error and correct sets have the same whitened mean".into(),
        ));
    }
    let mut corrector = Corrector {
        preprocessing,
        weights,
        threshold: T::zero(),
        trained_on: (0..errors.len()).collect(),
        n_correct: correct.len(),
    };
    // same code path as `fires`, so the training guarantee holds bit for bit
    let mut threshold: Option<T> = None;
    for i in 0..errors.len() {
        let s = corrector.score(&errors.row_vector(i))?;
        threshold = Some(threshold.map_or(s, |t| if s < t { s } else { t }));
    }
    corrector.threshold = threshold.expect("error set is non-empty");
    Ok(corrector)
}

/// Partitions `errors` into `k` groups by Lloyd iterations from farthest-point
/// seeds. The first centre is a seeded random point; every later centre is
/// the point farthest from those already chosen (lowest index on ties).
/// Returns the cluster index of every point.
pub fn cluster_errors<T: Scalar>(errors: &PointCloud<T>, k: usize, seed: Seed) -> Result<Vec<usize>> {
    let n = errors.len();
    if k == 0 {
        return Err(invalid_parameter("cluster count must be at least 1"));
    }
    if k > n {
        return Err(invalid_parameter(format!(
            "cannot form {k} clusters from {n} errors"
        )));
    }
    let rows: Vec<DVector<T>> = (0..n).map(|i| errors.row_vector(i)).collect();
    let dist2 = |a: &DVector<T>, b: &DVector<T>| (a - b).norm_squared();

    let mut rng = seed.stream(0);
    let mut centres = vec![rows[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<T> = rows.iter().map(|r| dist2(r, &centres[0])).collect();
    while centres.len() < k {
        let far = argmax(&nearest);
        centres.push(rows[far].clone());
        for (d, r) in nearest.iter_mut().zip(&rows) {
            let e = dist2(r, &centres[centres.len() - 1]);
            if e < *d {
                *d = e;
            }
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..200 {
        let next: Vec<usize> = rows
            .iter()
            .map(|r| {
                let d: Vec<T> = centres.iter().map(|c| dist2(r, c)).collect();
                argmin(&d)
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|i| assign[*i] == c).collect();
            if members.is_empty() {
                // move the empty centre onto the point worst served by its own centre
                let served: Vec<T> = (0..n).map(|i| dist2(&rows[i], &centres[assign[i]])).collect();
                let worst = argmax(&served);
                centres[c] = rows[worst].clone();
                assign[worst] = c;
                continue;
            }
            let mut sum = DVector::zeros(errors.dim());
            for i in &members {
                sum += &rows[*i];
            }
            centres[c] = sum / T::of(members.len() as f64);
        }
    }
    Ok(assign)
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Clusters the errors and fits one corrector per cluster.
pub fn fit_cascade<T: Scalar>(
    correct: &PointCloud<T>,
    errors: &PointCloud<T>,
    clusters: usize,
    pca_components: usize,
    seed: Seed,
) -> Result<Cascade<T>> {
    let assign = cluster_errors(errors, clusters, seed)?;
    let mut stages = Vec::with_capacity(clusters);
    for c in 0..clusters {
        let members: Vec<usize> = (0..errors.len()).filter(|i| assign[*i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut stage = fit_corrector(correct, &errors.select(&members)?, pca_components)?;
        stage.trained_on = members;
        stages.push(stage);
    }
    Cascade::new(stages)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fp_removed: usize,
    pub tp_removed: usize,
}

/// Counts legacy false positives and true positives on which the filter fires.
pub fn evaluate<T: Scalar, F: ErrorFilter<T> + ?Sized>(
    filter: &F,
    flagged_errors: &PointCloud<T>,
    true_positives: &PointCloud<T>,
) -> Result<Evaluation> {
    let count = |set: &PointCloud<T>| -> Result<usize> {
        let mut n = 0;
        for i in 0..set.len() {
            n += filter.fires(&set.row_vector(i))? as usize;
        }
        Ok(n)
    };
    Ok(Evaluation {
        fp_removed: count(flagged_errors)?,
        tp_removed: count(true_positives)?,
    })
}
