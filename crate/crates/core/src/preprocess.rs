//! PCA whitening, projection onto the unit sphere and effective dimension.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bounds::sphere_ln_p_formula;
use crate::cloud::PointCloud;
use crate::error::{invalid_parameter, Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_KAPPA_MAX: f64 = 10.0;

/// Schema tag written into every model file.
pub const WHITENING_SCHEMA: &str = "sepkit.whitening/1";

/// Fitted centring vector, retained principal directions and their variances.
///
/// `components` is k x n with orthonormal rows sorted by descending
/// eigenvalue. Each row is signed so that its entry of largest magnitude is
/// positive (first such entry on ties), which makes refits reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel<T: Scalar> {
    pub mean: DVector<T>,
    pub components: DMatrix<T>,
    pub eigenvalues: Vec<T>,
    /// `λ_max / λ_min` over the retained components.
    pub condition_number: T,
    /// Threshold used for selection; `None` when a fixed count was requested.
    pub kappa_max: Option<f64>,
}

impl<T: Scalar> WhiteningModel<T> {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn retained(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `1/sqrt(λ_i)` for every retained component.
    pub fn scaling(&self) -> Vec<T> {
        self.eigenvalues.iter().map(|l| T::one() / l.sqrt()).collect()
    }

    /// Whitens a single point.
    pub fn transform(&self, x: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut z = &self.components * (x - &self.mean);
        for (zi, s) in z.iter_mut().zip(self.scaling()) {
            *zi *= s;
        }
        Ok(z)
    }

    pub fn to_file(&self) -> WhiteningFile {
        WhiteningFile {
            schema: WHITENING_SCHEMA.to_owned(),
            input_dim: self.input_dim(),
            retained: self.retained(),
            kappa_max: self.kappa_max,
            condition_number: self.condition_number.f64(),
            mean: self.mean.iter().map(|v| v.f64()).collect(),
            eigenvalues: self.eigenvalues.iter().map(|v| v.f64()).collect(),
            components: self
                .components
                .row_iter()
                .flat_map(|r| r.iter().map(|v| v.f64()).collect::<Vec<_>>())
                .collect(),
        }
    }

    pub fn from_file(file: &WhiteningFile) -> Result<Self> {
        if file.schema != WHITENING_SCHEMA {
            return Err(Error::InvalidInput(format!(
                "unsupported whitening schema {:?}",
                file.schema
            )));
        }
        let (n, k) = (file.input_dim, file.retained);
        if file.mean.len() != n || file.eigenvalues.len() != k || file.components.len() != n * k {
            return Err(Error::InvalidInput(format!(
                "whitening model arrays do not match input_dim = {n}, retained = {k}"
            )));
        }
        if k == 0 || file.eigenvalues.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput(
                "whitening model needs at least one positive eigenvalue".into(),
            ));
        }
        Ok(Self {
            mean: DVector::from_iterator(n, file.mean.iter().map(|v| T::of(*v))),
            components: DMatrix::from_row_iterator(k, n, file.components.iter().map(|v| T::of(*v))),
            eigenvalues: file.eigenvalues.iter().map(|v| T::of(*v)).collect(),
            condition_number: T::of(file.condition_number),
            kappa_max: file.kappa_max,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }
}

/// On-disk form of a [`WhiteningModel`].
///
/// ```json
/// {
///   "schema": "sepkit.whitening/1",
///   "input_dim": 3,
///   "retained": 2,
///   "kappa_max": 10.0,
///   "condition_number": 4.0,
///   "mean": [0.0, 0.0, 0.0],
///   "eigenvalues": [4.0, 1.0],
///   "components": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
/// }
/// ```
///
/// `components` holds the k x n direction matrix in row-major order: the
/// first `input_dim` numbers are the leading principal direction. A point is
/// whitened as `z_i = (components_i, x - mean) / sqrt(eigenvalues_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningFile {
    pub schema: String,
    pub input_dim: usize,
    pub retained: usize,
    pub kappa_max: Option<f64>,
    pub condition_number: f64,
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub components: Vec<f64>,
}

/// Eigenpairs of the sample covariance, descending, in `f64`.
struct Spectrum {
    mean: DVector<f64>,
    values: Vec<f64>,
    /// Columns are eigenvectors.
    vectors: DMatrix<f64>,
}

fn spectrum<T: Scalar>(data: &PointCloud<T>) -> Result<Spectrum> {
    let n_points = data.len();
    if n_points < 2 {
        return Err(Error::DegenerateData(format!(
            "whitening needs at least 2 points, got {n_points}"
        )));
    }
    let x = data.points().map(|v| v.f64());
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n_points as f64 - 1.0);
    let total: f64 = cov.diagonal().iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateData("data has zero total variance".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(eig.eigenvectors.nrows(), order.len());
    for (j, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |best, e| {
            if e.abs() > best.abs() {
                e
            } else {
                best
            }
        });
        if pivot < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(j, &v);
    }
    Ok(Spectrum {
        mean,
        values,
        vectors,
    })
}

fn build<T: Scalar>(spec: Spectrum, k: usize, kappa_max: Option<f64>) -> WhiteningModel<T> {
    let n = spec.mean.len();
    let components = DMatrix::from_fn(k, n, |i, j| T::of(spec.vectors[(j, i)]));
    let eigenvalues: Vec<T> = spec.values[..k].iter().map(|v| T::of(*v)).collect();
    WhiteningModel {
        mean: spec.mean.map(T::of),
        condition_number: T::of(spec.values[0] / spec.values[k - 1]),
        components,
        eigenvalues,
        kappa_max,
    }
}

/// Fits the whitening transform, keeping every component with `λ >= λ_max / kappa_max`.
pub fn fit_whitening<T: Scalar>(data: &PointCloud<T>, kappa_max: f64) -> Result<WhiteningModel<T>> {
    if !(kappa_max >= 1.0 && kappa_max.is_finite()) {
        return Err(invalid_parameter(format!(
            "kappa_max must be a finite number >= 1, got {kappa_max}"
        )));
    }
    let spec = spectrum(data)?;
    let cutoff = spec.values[0] / kappa_max;
    let k = spec.values.iter().take_while(|l| **l >= cutoff && **l > 0.0).count();
    Ok(build(spec, k, Some(kappa_max)))
}

/// Fits the whitening transform with the `count` leading components, or
/// fewer when the covariance has fewer numerically positive eigenvalues.
pub fn fit_whitening_components<T: Scalar>(
    data: &PointCloud<T>,
    count: usize,
) -> Result<WhiteningModel<T>> {
    if count == 0 {
        return Err(invalid_parameter("need at least one principal component"));
    }
    let spec = spectrum(data)?;
    let floor = spec.values[0] * spec.values.len() as f64 * f64::EPSILON * 16.0;
    let positive = spec.values.iter().take_while(|l| **l > floor).count();
    Ok(build(spec, count.min(positive), None))
}

/// Maps every point to `diag(1/sqrt(λ)) · components · (x - mean)`. Labels are kept.
pub fn apply_whitening<T: Scalar>(
    model: &WhiteningModel<T>,
    data: &PointCloud<T>,
) -> Result<PointCloud<T>> {
    if data.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: data.dim(),
        });
    }
    let mut centered = data.points().clone();
    for mut row in centered.row_iter_mut() {
        row -= model.mean.transpose();
    }
    let mut out = centered * model.components.transpose();
    for (mut col, s) in out.column_iter_mut().zip(model.scaling()) {
        col *= s;
    }
    let cloud = PointCloud::new(out)?;
    match data.labels() {
        Some(l) => cloud.with_labels(l.to_vec()),
        None => Ok(cloud),
    }
}

/// Normalizes every point to unit length.
pub fn project_sphere<T: Scalar>(data: &PointCloud<T>) -> Result<PointCloud<T>> {
    let mut points = data.points().clone();
    for (row, mut r) in points.row_iter_mut().enumerate() {
        let norm = r.norm();
        if norm == T::zero() {
            return Err(Error::DegeneratePoint { row });
        }
        r /= norm;
    }
    let cloud = PointCloud::new(points)?;
    match data.labels() {
        Some(l) => cloud.with_labels(l.to_vec()),
        None => Ok(cloud),
    }
}

const DIM_LOW: f64 = 1.0;
const DIM_HIGH: f64 = 1.0e4;

/// Dimension of the sphere whose asymptotic inseparability probability at
/// `alpha` equals `p_bar`, searched over `n` in (1, 10^4).
pub fn effective_dimension(p_bar: f64, alpha: f64) -> Result<f64> {
    if !(p_bar > 0.0 && p_bar < 1.0) {
        return Err(invalid_parameter(format!("p_bar must lie in (0, 1), got {p_bar}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid_parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    // decreasing in n, unbounded as n -> 1
    let target = p_bar.ln();
    let floor = sphere_ln_p_formula(alpha, DIM_HIGH);
    if target <= floor {
        return Err(Error::OutOfRange(format!(
            "p_bar = {p_bar} is below the sphere estimate at n = {DIM_HIGH} (ln = {floor})"
        )));
    }
    let (mut lo, mut hi) = (DIM_LOW, DIM_HIGH);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if sphere_ln_p_formula(alpha, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::sphere_p_formula;
    use crate::sampling::{sample_gaussian, Seed};
    use proptest::prelude::*;

    fn covariance(c: &PointCloud<f64>) -> DMatrix<f64> {
        let mut x = c.points().clone();
        let m = c.mean();
        for mut r in x.row_iter_mut() {
            r -= m.transpose();
        }
        x.tr_mul(&x) / (c.len() as f64 - 1.0)
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    fn scaled_gaussian(scales: &[f64], count: usize, seed: u64) -> PointCloud<f64> {
        let g = sample_gaussian::<f64>(scales.len(), count, Seed(seed)).unwrap();
        let mut p = g.points().clone();
        for (mut col, s) in p.column_iter_mut().zip(scales) {
            col *= *s;
        }
        PointCloud::new(p).unwrap()
    }

    #[test]
    fn white_data_is_a_fixed_point() {
        let data = sample_gaussian::<f64>(10, 10_000, Seed(3)).unwrap();
        let model = fit_whitening(&data, 10.0).unwrap();
        assert_eq!(model.retained(), 10);
        assert!(model.scaling().iter().all(|s| (s - 1.0).abs() < 0.05));
    }

    #[test]
    fn diagonal_covariance_scales_axes() {
        let data = scaled_gaussian(&[2.0, 1.0], 50_000, 11);
        let model = fit_whitening(&data, 10.0).unwrap();
        assert_eq!(model.retained(), 2);
        assert!((model.condition_number - 4.0).abs() < 0.15);
        let s = model.scaling();
        assert!((s[0] - 0.5).abs() < 0.01 && (s[1] - 1.0).abs() < 0.02);
        assert!(model.components[(0, 0)] > 0.999);
        assert!(model.components[(1, 1)] > 0.999);
    }

    #[test]
    fn retention_follows_the_kappa_cutoff() {
        // exact spectrum {10, 5, 1.2, 0.9, 0.05}: rows ±sqrt(λ(N-1)/2) e_i on two points each
        let lambdas = [10.0, 5.0, 1.2, 0.9, 0.05];
        let n_points = 10;
        let mut rows = vec![vec![0.0; 5]; n_points];
        for (i, l) in lambdas.iter().enumerate() {
            let a = (l * (n_points as f64 - 1.0) / 2.0).sqrt();
            rows[2 * i][i] = a;
            rows[2 * i + 1][i] = -a;
        }
        let data = PointCloud::from_rows(&rows).unwrap();
        let model = fit_whitening(&data, 10.0).unwrap();
        assert_eq!(model.retained(), 3);
        for (got, want) in model.eigenvalues.iter().zip(lambdas) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(model.condition_number <= 10.0);
    }

    #[test]
    fn whitened_fitting_data_has_identity_covariance() {
        let data = scaled_gaussian(&[3.0, 1.0, 0.5, 2.0, 1.5], 5000, 5);
        let model = fit_whitening(&data, 100.0).unwrap();
        let white = apply_whitening(&model, &data).unwrap();
        let eye = DMatrix::<f64>::identity(5, 5);
        assert!(max_abs(&(covariance(&white) - eye)) < 0.05);
        assert!(white.mean().iter().all(|m| m.abs() < 1e-8));

        let at_mean = PointCloud::new(DMatrix::from_row_slice(1, 5, data.mean().as_slice())).unwrap();
        let z = apply_whitening(&model, &at_mean).unwrap();
        assert!(z.points().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn components_are_orthonormal() {
        let data = scaled_gaussian(&[1.0, 2.0, 3.0, 4.0], 2000, 9);
        let model = fit_whitening(&data, 20.0).unwrap();
        let gram = &model.components * model.components.transpose();
        let eye = DMatrix::<f64>::identity(model.retained(), model.retained());
        assert!(max_abs(&(gram - eye)) < 1e-8);
        assert!(model.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let same = PointCloud::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(matches!(fit_whitening(&same, 10.0), Err(Error::DegenerateData(_))));
        let one = PointCloud::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(fit_whitening(&one, 10.0), Err(Error::DegenerateData(_))));
        let data = scaled_gaussian(&[1.0, 1.0], 10, 1);
        let model = fit_whitening(&data, 10.0).unwrap();
        let wrong = PointCloud::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(
            apply_whitening(&model, &wrong),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn fixed_count_stops_at_rank() {
        // rank 2 data embedded in 4 dimensions
        let base = scaled_gaussian(&[1.0, 2.0], 500, 4);
        let rows: Vec<Vec<f64>> = base
            .rows()
            .map(|r| vec![r[0], r[1], r[0] + r[1], 0.0])
            .collect();
        let data = PointCloud::from_rows(&rows).unwrap();
        assert_eq!(fit_whitening_components(&data, 3).unwrap().retained(), 2);
        assert_eq!(fit_whitening_components(&data, 1).unwrap().retained(), 1);
    }

    #[test]
    fn json_round_trip() {
        let data = scaled_gaussian(&[1.0, 2.0, 0.7], 300, 2);
        let model = fit_whitening(&data, 10.0).unwrap();
        let back = WhiteningModel::<f64>::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let text = model.to_json().unwrap().replace("sepkit.whitening/1", "other");
        assert!(WhiteningModel::<f64>::from_json(&text).is_err());
    }

    #[test]
    fn f32_matches_f64() {
        let data = scaled_gaussian(&[1.0, 2.0, 0.7], 2000, 2);
        let m64 = fit_whitening(&data, 10.0).unwrap();
        let m32 = fit_whitening(&data.cast::<f32>(), 10.0).unwrap();
        for (a, b) in m64.eigenvalues.iter().zip(&m32.eigenvalues) {
            assert!((a - *b as f64).abs() < 1e-4 * a);
        }
        let w = apply_whitening(&m32, &data.cast::<f32>()).unwrap();
        assert!(w.mean().iter().all(|m| m.abs() < 1e-4));
    }

    #[test]
    fn sphere_projection() {
        let c = PointCloud::<f64>::from_rows(&[vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap();
        let p = project_sphere(&c).unwrap();
        assert!((p[(0, 0)] - 0.6).abs() < 1e-15 && (p[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(p.row(1), vec![0.0, 1.0]);
        let twice = project_sphere(&p).unwrap();
        assert!(max_abs(&(twice.points() - p.points())) < 1e-12);
        let bad = PointCloud::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(project_sphere(&bad), Err(Error::DegeneratePoint { row: 1 })));
    }

    #[test]
    fn effective_dimension_examples() {
        let n = effective_dimension(7.58e-5, 0.8).unwrap();
        assert!((n - 15.587).abs() < 1e-3, "{n}");
        let p20 = sphere_p_formula(0.9, 20.0);
        assert!((effective_dimension(p20, 0.9).unwrap() - 20.0).abs() < 1e-6);
        assert!(matches!(effective_dimension(1e-30, 0.1), Err(Error::OutOfRange(_))));
        assert!(effective_dimension(0.0, 0.9).is_err());
        assert!(effective_dimension(0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn effective_dimension_inverts_the_formula(n in 1.5f64..5000.0, alpha in 0.05f64..0.95) {
            let p = sphere_p_formula(alpha, n);
            prop_assume!(p > 1e-300 && p < 1.0 && p.ln() > sphere_ln_p_formula(alpha, DIM_HIGH));
            let back = effective_dimension(p, alpha).unwrap();
            prop_assert!((back - n).abs() < 1e-6, "n = {}, back = {}", n, back);
        }

        #[test]
        fn effective_dimension_is_decreasing_in_p(
            p1 in 1e-12f64..0.5, p2 in 1e-12f64..0.5, alpha in 0.3f64..0.95,
        ) {
            prop_assume!(p1 < p2);
            let (n1, n2) = (effective_dimension(p1, alpha), effective_dimension(p2, alpha));
            if let (Ok(n1), Ok(n2)) = (n1, n2) {
                prop_assert!(n1 >= n2);
            }
        }

        #[test]
        fn retained_condition_number_respects_kappa(
            scales in proptest::collection::vec(0.05f64..5.0, 2..6),
            kappa in 1.0f64..50.0,
            seed in 0u64..1000,
        ) {
            let data = scaled_gaussian(&scales, 200, seed);
            let model = fit_whitening(&data, kappa).unwrap();
            prop_assert!(model.retained() >= 1);
            prop_assert!(model.condition_number <= kappa * (1.0 + 1e-12));
        }
    }
}
