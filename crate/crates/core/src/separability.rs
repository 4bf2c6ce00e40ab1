//! Fisher separability of points and whole clouds.
//!
//! A point `x` is separated from `y` at threshold `α` when `(x, y) <= α (x, x)`.
//! Equivalently `x` lies outside the open ball centred at `y / 2α` with
//! radius `|y| / 2α`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{invalid_parameter, Error, Result};
use crate::scalar::{dot, Scalar};

/// `(x, y) <= α (x, x)`; equality counts as separable.
pub fn is_pair_separable<T: Scalar>(x: &[T], y: &[T], alpha: T) -> bool {
    dot(x, y) <= alpha * dot(x, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedBall<T: Scalar> {
    pub center: DVector<T>,
    pub radius: T,
}

impl<T: Scalar> ExcludedBall<T> {
    /// Membership in the open ball, i.e. `x` is not separated from `y`.
    pub fn contains(&self, x: &[T]) -> bool {
        let d2 = x
            .iter()
            .zip(self.center.iter())
            .fold(T::zero(), |acc, (a, c)| acc + (*a - *c) * (*a - *c));
        d2 < self.radius * self.radius
    }
}

/// Region of points not separated from `y`: centre `y / 2α`, radius `|y| / 2α`.
pub fn excluded_ball<T: Scalar>(y: &[T], alpha: T) -> Result<ExcludedBall<T>> {
    if !(alpha > T::zero()) {
        return Err(invalid_parameter(format!("alpha must be positive, got {alpha}")));
    }
    let two_alpha = alpha + alpha;
    let center = DVector::from_iterator(y.len(), y.iter().map(|v| *v / two_alpha));
    Ok(ExcludedBall {
        radius: center.norm(),
        center,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    /// Also count violations restricted to pairs with different labels.
    pub class_aware: bool,
    /// Record every violating `(x, y)` index pair.
    pub collect_pairs: bool,
}

/// Statistics restricted to pairs from different classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub n_alpha: usize,
    pub nu_alpha: f64,
    pub p_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub alpha: f64,
    pub n_points: usize,
    /// Points `x` with some `y != x` such that `(x, y) > α (x, x)`.
    pub n_alpha: usize,
    pub nu_alpha: f64,
    /// Mean over `y` of the fraction of other points not separated from `y`.
    pub p_bar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starred: Option<ClassStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violating_pairs: Option<Vec<(usize, usize)>>,
}

/// Per-worker tallies, merged by summation.
#[derive(Clone)]
struct Tally {
    /// `[alpha][x]`: x has a violation.
    x_any: Vec<Vec<bool>>,
    x_any_star: Vec<Vec<bool>>,
    /// `[alpha][y]`: number of x violating against y.
    y_count: Vec<Vec<u32>>,
    y_count_star: Vec<Vec<u32>>,
    pairs: Vec<Vec<(usize, usize)>>,
}

impl Tally {
    fn new(n_alpha: usize, n: usize, star: bool) -> Self {
        let star_n = if star { n } else { 0 };
        Self {
            x_any: vec![vec![false; n]; n_alpha],
            x_any_star: vec![vec![false; star_n]; n_alpha],
            y_count: vec![vec![0; n]; n_alpha],
            y_count_star: vec![vec![0; star_n]; n_alpha],
            pairs: vec![Vec::new(); n_alpha],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for a in 0..self.x_any.len() {
            merge_or(&mut self.x_any[a], &other.x_any[a]);
            merge_or(&mut self.x_any_star[a], &other.x_any_star[a]);
            merge_add(&mut self.y_count[a], &other.y_count[a]);
            merge_add(&mut self.y_count_star[a], &other.y_count_star[a]);
            self.pairs[a].extend_from_slice(&other.pairs[a]);
        }
        self
    }
}

fn merge_or(a: &mut [bool], b: &[bool]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x |= *y);
}

fn merge_add(a: &mut [u32], b: &[u32]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
}

const BLOCK: usize = 128;

/// Exact pairwise scan for every threshold in `alphas`.
///
/// The Gram matrix is formed one block of x-rows at a time, so memory stays
/// at `BLOCK x N` regardless of the cloud size. Blocks are processed in
/// parallel and merged by summation; results do not depend on the number of
/// worker threads. Violating pairs, when requested, are sorted.
pub fn analyze<T: Scalar>(
    data: &PointCloud<T>,
    alphas: &[f64],
    options: AnalyzeOptions,
) -> Result<Vec<SeparabilityReport>> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "separability analysis needs at least 2 points, got {n}"
        )));
    }
    if alphas.is_empty() {
        return Err(invalid_parameter("need at least one threshold"));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(invalid_parameter(format!("thresholds must lie in (0, 1), got {a}")));
    }
    let labels = if options.class_aware {
        Some(data.labels().ok_or_else(|| {
            Error::InvalidInput("class-aware statistics need per-point labels".into())
        })?)
    } else {
        None
    };
    let alphas_t: Vec<T> = alphas.iter().map(|a| T::of(*a)).collect();
    let x = data.points();
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();

    let tally = starts
        .par_iter()
        .fold(
            || Tally::new(alphas.len(), n, labels.is_some()),
            |mut t, &start| {
                let rows = BLOCK.min(n - start);
                let block = x.rows(start, rows);
                let gram: DMatrix<T> = block * x.transpose();
                for bi in 0..rows {
                    let i = start + bi;
                    let own = gram[(bi, i)];
                    for (a, alpha) in alphas_t.iter().enumerate() {
                        let limit = *alpha * own;
                        for j in (0..n).filter(|j| *j != i) {
                            if gram[(bi, j)] > limit {
                                t.x_any[a][i] = true;
                                t.y_count[a][j] += 1;
                                if options.collect_pairs {
                                    t.pairs[a].push((i, j));
                                }
                                if let Some(l) = labels {
                                    if l[i] != l[j] {
                                        t.x_any_star[a][i] = true;
                                        t.y_count_star[a][j] += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                t
            },
        )
        .reduce(|| Tally::new(alphas.len(), n, labels.is_some()), Tally::merge);

    let denom = (n - 1) as f64;
    let p_bar = |counts: &[u32]| counts.iter().map(|c| *c as f64 / denom).sum::<f64>() / n as f64;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| {
            let n_alpha = tally.x_any[a].iter().filter(|v| **v).count();
            let starred = labels.map(|_| {
                let n_star = tally.x_any_star[a].iter().filter(|v| **v).count();
                ClassStats {
                    n_alpha: n_star,
                    nu_alpha: n_star as f64 / n as f64,
                    p_bar: p_bar(&tally.y_count_star[a]),
                }
            });
            let violating_pairs = options.collect_pairs.then(|| {
                let mut p = tally.pairs[a].clone();
                p.sort_unstable();
                p
            });
            SeparabilityReport {
                alpha,
                n_points: n,
                n_alpha,
                nu_alpha: n_alpha as f64 / n as f64,
                p_bar: p_bar(&tally.y_count[a]),
                starred,
                violating_pairs,
            }
        })
        .collect())
}

/// One horizontal block of the report table: a statistic per threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableBlock {
    pub title: String,
    pub n_alpha: Vec<usize>,
    pub nu_alpha: Vec<f64>,
    pub p_bar: Vec<f64>,
}

/// Thresholds as columns, statistics grouped in blocks as rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityTable {
    pub n_points: usize,
    pub dim: usize,
    pub alphas: Vec<f64>,
    pub blocks: Vec<TableBlock>,
}

impl SeparabilityTable {
    pub fn new(n_points: usize, dim: usize, alphas: &[f64]) -> Self {
        Self {
            n_points,
            dim,
            alphas: alphas.to_vec(),
            blocks: Vec::new(),
        }
    }

    /// Appends the plain block and, when present, the different-class block.
    pub fn push_reports(&mut self, title: &str, reports: &[SeparabilityReport]) {
        self.blocks.push(TableBlock {
            title: format!("{title}: separability from all data"),
            n_alpha: reports.iter().map(|r| r.n_alpha).collect(),
            nu_alpha: reports.iter().map(|r| r.nu_alpha).collect(),
            p_bar: reports.iter().map(|r| r.p_bar).collect(),
        });
        let starred: Vec<&ClassStats> = reports.iter().filter_map(|r| r.starred.as_ref()).collect();
        if starred.len() == reports.len() && !starred.is_empty() {
            self.blocks.push(TableBlock {
                title: format!("{title}: separability from points of different classes"),
                n_alpha: starred.iter().map(|s| s.n_alpha).collect(),
                nu_alpha: starred.iter().map(|s| s.nu_alpha).collect(),
                p_bar: starred.iter().map(|s| s.p_bar).collect(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::project_sphere;
    use crate::sampling::{sample_ball, sample_gaussian, Seed};
    use proptest::prelude::*;
    use rand::Rng;

    /// Independent recount straight from the definition.
    fn brute_force(
        rows: &[Vec<f64>],
        labels: Option<&[String]>,
        alpha: f64,
    ) -> (usize, f64, Option<(usize, f64)>) {
        let n = rows.len();
        let mut n_alpha = 0;
        let mut n_star = 0;
        let mut per_y = vec![0usize; n];
        let mut per_y_star = vec![0usize; n];
        for i in 0..n {
            let xx: f64 = rows[i].iter().map(|v| v * v).sum();
            let mut any = false;
            let mut any_star = false;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let xy: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                if xy > alpha * xx {
                    any = true;
                    per_y[j] += 1;
                    if let Some(l) = labels {
                        if l[i] != l[j] {
                            any_star = true;
                            per_y_star[j] += 1;
                        }
                    }
                }
            }
            n_alpha += any as usize;
            n_star += any_star as usize;
        }
        let mean = |v: &[usize]| v.iter().map(|c| *c as f64 / (n - 1) as f64).sum::<f64>() / n as f64;
        let star = labels.map(|_| (n_star, mean(&per_y_star)));
        (n_alpha, mean(&per_y), star)
    }

    #[test]
    fn pair_examples() {
        assert!(!is_pair_separable(&[1.0, 2.0], &[1.0, 2.0], 0.9));
        assert!(is_pair_separable(&[1.0, 0.0], &[0.0, 1.0], 0.1));
        assert!(!is_pair_separable(&[1.0, 0.0], &[0.95, 0.1], 0.9));
        // boundary: (x, y) = α (x, x)
        assert!(is_pair_separable(&[1.0, 0.0], &[0.5, 3.0], 0.5));
        assert!(is_pair_separable(&[0.0, 0.0], &[1.0, 1.0], 0.5));
    }

    #[test]
    fn ball_examples() {
        let b = excluded_ball(&[1.0, 0.0], 0.5).unwrap();
        assert_eq!(b.center.as_slice(), &[1.0, 0.0]);
        assert_eq!(b.radius, 1.0);
        for alpha in [0.1, 0.5, 0.9, 0.999] {
            let y = [0.3, -0.7, 0.2];
            assert!(excluded_ball(&y, alpha).unwrap().contains(&y));
        }
        assert!(excluded_ball(&[1.0], 0.0).is_err());
    }

    #[test]
    fn ball_membership_matches_separability() {
        let mut rng = Seed(17).stream(0);
        for _ in 0..10_000 {
            let dim = rng.random_range(1..8);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let alpha = rng.random_range(0.01..0.99);
            let ball = excluded_ball(&y, alpha).unwrap();
            assert_eq!(ball.contains(&x), !is_pair_separable(&x, &y, alpha));
        }
    }

    #[test]
    fn three_point_example() {
        let c = PointCloud::from_rows(&[vec![1.0, 0.0], vec![0.9, 0.3], vec![0.0, 1.0]]).unwrap();
        let r = &analyze(&c, &[0.8], AnalyzeOptions { collect_pairs: true, ..Default::default() })
            .unwrap()[0];
        assert_eq!(r.n_alpha, 2);
        assert_eq!(r.nu_alpha, 2.0 / 3.0);
        assert!((r.p_bar - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.violating_pairs.as_deref(), Some(&[(0, 1), (1, 0)][..]));
    }

    #[test]
    fn orthonormal_points_are_separable() {
        let c = PointCloud::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = &analyze(&c, &[0.01, 0.5], AnalyzeOptions::default()).unwrap();
        assert!(r.iter().all(|r| r.n_alpha == 0 && r.p_bar == 0.0));
    }

    #[test]
    fn duplicates_with_different_labels_are_mutual_violations() {
        let c = PointCloud::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8], vec![-1.0, 0.0]])
            .unwrap()
            .with_labels(vec!["a".into(), "b".into(), "c".into()])
            .unwrap();
        let opts = AnalyzeOptions { class_aware: true, collect_pairs: true };
        let r = &analyze(&c, &[0.99], opts).unwrap()[0];
        assert_eq!(r.violating_pairs.as_deref(), Some(&[(0, 1), (1, 0)][..]));
        assert_eq!(r.starred.as_ref().unwrap().n_alpha, 2);
    }

    #[test]
    fn errors() {
        let c = PointCloud::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            analyze(&c, &[1.0], AnalyzeOptions::default()),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            analyze(&c, &[0.5], AnalyzeOptions { class_aware: true, ..Default::default() }),
            Err(Error::InvalidInput(_))
        ));
        let one = PointCloud::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(analyze(&one, &[0.5], AnalyzeOptions::default()).is_err());
    }

    #[test]
    fn matches_brute_force_with_labels() {
        let cloud = sample_gaussian::<f64>(5, 300, Seed(8)).unwrap();
        let labels: Vec<String> = (0..300).map(|i| format!("c{}", i % 7)).collect();
        let cloud = cloud.with_labels(labels.clone()).unwrap();
        let alphas = [0.3, 0.5, 0.8, 0.95];
        let opts = AnalyzeOptions { class_aware: true, collect_pairs: false };
        let reports = analyze(&cloud, &alphas, opts).unwrap();
        let rows: Vec<Vec<f64>> = cloud.rows().collect();
        for (r, &alpha) in reports.iter().zip(&alphas) {
            let (n_alpha, p_bar, star) = brute_force(&rows, Some(&labels), alpha);
            assert_eq!(r.n_alpha, n_alpha);
            assert!((r.p_bar - p_bar).abs() < 1e-12);
            let (n_star, p_star) = star.unwrap();
            let s = r.starred.as_ref().unwrap();
            assert_eq!(s.n_alpha, n_star);
            assert!((s.p_bar - p_star).abs() < 1e-12);
            assert!(s.n_alpha <= r.n_alpha && s.p_bar <= r.p_bar);
        }
    }

    #[test]
    fn sphere_separability_improves_towards_one() {
        let cloud = project_sphere(&sample_gaussian::<f64>(8, 500, Seed(2)).unwrap()).unwrap();
        let reports = analyze(&cloud, &[0.5, 0.8, 0.95, 0.999999], AnalyzeOptions::default()).unwrap();
        assert!(reports.windows(2).all(|w| w[1].n_alpha <= w[0].n_alpha));
        assert_eq!(reports.last().unwrap().n_alpha, 0);
    }

    #[test]
    fn f32_clouds_are_supported() {
        let cloud = sample_ball::<f32>(20, 400, Seed(1)).unwrap();
        let r64 = analyze(&cloud.cast::<f64>(), &[0.8], AnalyzeOptions::default()).unwrap();
        let r32 = analyze(&cloud, &[0.8], AnalyzeOptions::default()).unwrap();
        assert!((r64[0].n_alpha as i64 - r32[0].n_alpha as i64).abs() <= 1);
    }

    #[test]
    fn result_does_not_depend_on_threads() {
        let cloud = sample_ball::<f64>(10, 700, Seed(4)).unwrap();
        let opts = AnalyzeOptions { collect_pairs: true, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| analyze(&cloud, &[0.6, 0.9], opts).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn table_blocks() {
        let cloud = sample_gaussian::<f64>(3, 50, Seed(6))
            .unwrap()
            .with_labels((0..50).map(|i| (i % 2).to_string()).collect())
            .unwrap();
        let alphas = [0.8, 0.9];
        let opts = AnalyzeOptions { class_aware: true, ..Default::default() };
        let mut table = SeparabilityTable::new(50, 3, &alphas);
        table.push_reports("whitened", &analyze(&cloud, &alphas, opts).unwrap());
        table.push_reports("sphere", &analyze(&project_sphere(&cloud).unwrap(), &alphas, opts).unwrap());
        assert_eq!(table.blocks.len(), 4);
        assert!(table.blocks.iter().all(|b| b.n_alpha.len() == 2));
    }

    proptest! {
        #[test]
        fn analyze_agrees_with_recount(
            seed in 0u64..10_000,
            n in 2usize..60,
            dim in 1usize..6,
            alpha in 0.05f64..0.99,
        ) {
            let cloud = sample_ball::<f64>(dim, n, Seed(seed)).unwrap();
            let rows: Vec<Vec<f64>> = cloud.rows().collect();
            let r = &analyze(&cloud, &[alpha], AnalyzeOptions::default()).unwrap()[0];
            let (n_alpha, p_bar, _) = brute_force(&rows, None, alpha);
            prop_assert_eq!(r.n_alpha, n_alpha);
            prop_assert!((r.p_bar - p_bar).abs() < 1e-12);
            prop_assert_eq!(r.nu_alpha, r.n_alpha as f64 / n as f64);
        }

        #[test]
        fn counts_decrease_with_alpha(seed in 0u64..10_000, a1 in 0.05f64..0.95, gap in 0.001f64..0.5) {
            let a2 = (a1 + gap).min(0.999);
            let cloud = sample_ball::<f64>(4, 80, Seed(seed)).unwrap();
            let r = analyze(&cloud, &[a1, a2], AnalyzeOptions::default()).unwrap();
            prop_assert!(r[0].n_alpha >= r[1].n_alpha);
            prop_assert!(r[0].p_bar >= r[1].p_bar);
        }
    }
}
