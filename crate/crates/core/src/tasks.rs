//! Synthetic regression targets with known exchangeability structure.
//!
//! Nine-dimensional inputs are read as three points (or vectors)
//! `u = x[0..3]`, `v = x[3..6]`, `w = x[6..9]`; the 25-dimensional simplex
//! task reads five points of `R^5`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::rng;

/// Consecutive singular draws tolerated before generation fails.
pub const RESAMPLE_LIMIT: usize = 1000;
/// `|1 + u.v + v.w + w.u|` below this is treated as singular.
pub const SOLID_ANGLE_SINGULARITY: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("input of length {got}, task expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("solid angle denominator {denominator:e} is singular")]
    Singular { denominator: f64 },
    #[error("Q transform needs f > -1, got {0}")]
    Domain(f64),
    #[error("{0} consecutive singular draws while sampling")]
    ResampleLimit(usize),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed dataset file: {0}")]
    Format(String),
}

fn check_len(x: &[f64], expected: usize) -> Result<(), TaskError> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(TaskError::InputLength {
            expected,
            got: x.len(),
        })
    }
}

/// Area of the triangle with vertices `u, v, w`, as `0.5 * sqrt(A^2 + B^2 + C^2)`.
pub fn triangle_area(x: &[f64]) -> Result<f64, TaskError> {
    check_len(x, 9)?;
    let a = (x[3] - x[0]) * (x[7] - x[1]) - (x[6] - x[0]) * (x[4] - x[1]);
    let b = (x[3] - x[0]) * (x[8] - x[2]) - (x[6] - x[0]) * (x[5] - x[2]);
    let c = (x[4] - x[1]) * (x[8] - x[2]) - (x[7] - x[1]) * (x[5] - x[2]);
    Ok(0.5 * (a * a + b * b + c * c).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTransform {
    Identity,
    Log1p,
    ExpOver100,
    Sin,
    Q,
}

impl LabelTransform {
    pub fn apply(self, f: f64) -> Result<f64, TaskError> {
        Ok(match self {
            Self::Identity => f,
            Self::Log1p => f.ln_1p(),
            Self::ExpOver100 => f.exp() / 100.0,
            Self::Sin => f.sin(),
            Self::Q => {
                if f <= -1.0 {
                    return Err(TaskError::Domain(f));
                }
                ((f * f + 3.0) / (f + 1.0)).sqrt()
            }
        })
    }
}

pub fn transform_labels(kind: LabelTransform, f: &[f64]) -> Result<Vec<f64>, TaskError> {
    f.iter().map(|&v| kind.apply(v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wave {
    Cosine,
    Sine,
}

/// Determinant of a row-major `n x n` matrix by cofactor expansion along the
/// first row. Only used for `n <= 5`.
pub(crate) fn det_cofactor(m: &[f64], n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => {
            let mut minor = Vec::with_capacity((n - 1) * (n - 1));
            let mut det = 0.0;
            for col in 0..n {
                minor.clear();
                for i in 1..n {
                    for j in 0..n {
                        if j != col {
                            minor.push(m[i * n + j]);
                        }
                    }
                }
                let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
                det += sign * m[col] * det_cofactor(&minor, n - 1);
            }
            det
        }
    }
}

/// `cos(det M)` or `sin(det M)` with `M` the 3x3 matrix whose rows are `u, v, w`.
pub fn det3_target(x: &[f64], wave: Wave) -> Result<f64, TaskError> {
    check_len(x, 9)?;
    let d = det_cofactor(x, 3);
    Ok(match wave {
        Wave::Cosine => d.cos(),
        Wave::Sine => d.sin(),
    })
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Solid angle of the spherical triangle spanned by unit vectors `u, v, w`:
/// `z = |(u x v).w| / (1 + u.v + v.w + w.u)`, then `2 atan z` for `z >= 0`
/// and `pi + 2 atan z` for `z < 0`.
pub fn solid_angle(x: &[f64]) -> Result<f64, TaskError> {
    check_len(x, 9)?;
    let (u, v, w) = (&x[0..3], &x[3..6], &x[6..9]);
    let denominator = 1.0 + dot3(u, v) + dot3(v, w) + dot3(w, u);
    if denominator.abs() < SOLID_ANGLE_SINGULARITY {
        return Err(TaskError::Singular { denominator });
    }
    let z = dot3(&cross(u, v), w).abs() / denominator;
    Ok(if z >= 0.0 {
        2.0 * z.atan()
    } else {
        PI + 2.0 * z.atan()
    })
}

/// [`solid_angle`] with the ninth coordinate negated.
pub fn psi_target(x: &[f64]) -> Result<f64, TaskError> {
    check_len(x, 9)?;
    let mut y = [0.0; 9];
    y.copy_from_slice(x);
    y[8] = -y[8];
    solid_angle(&y)
}

/// Volume of the simplex spanned by the origin and five points of `R^5`:
/// `|det M| / 5!`.
pub fn simplex_volume_25(x: &[f64]) -> Result<f64, TaskError> {
    check_len(x, 25)?;
    Ok(det_cofactor(x, 5).abs() / 120.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    UniformCube { lo: f64, hi: f64 },
    StandardGaussian,
    UnitSphereTriples,
}

impl Sampler {
    pub fn draw<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Sampler::UniformCube { lo, hi } => (0..dim).map(|_| rng.random_range(lo..hi)).collect(),
            Sampler::StandardGaussian => (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
            Sampler::UnitSphereTriples => {
                let mut out = Vec::with_capacity(dim);
                while out.len() < dim {
                    let g: [f64; 3] = [
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    ];
                    let norm = dot3(&g, &g).sqrt();
                    if norm < 1e-12 {
                        continue;
                    }
                    out.extend(g.iter().map(|c| c / norm));
                }
                out.truncate(dim);
                out
            }
        }
    }
}

/// The synthetic targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TaskName {
    Triangle(LabelTransform),
    Det3(Wave),
    SolidAngle,
    Psi,
    Simplex25,
}

impl TaskName {
    pub const ALL: [TaskName; 10] = [
        TaskName::Triangle(LabelTransform::Identity),
        TaskName::Triangle(LabelTransform::Log1p),
        TaskName::Triangle(LabelTransform::ExpOver100),
        TaskName::Triangle(LabelTransform::Sin),
        TaskName::Triangle(LabelTransform::Q),
        TaskName::Det3(Wave::Cosine),
        TaskName::Det3(Wave::Sine),
        TaskName::SolidAngle,
        TaskName::Psi,
        TaskName::Simplex25,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskName::Triangle(LabelTransform::Identity) => "triangle",
            TaskName::Triangle(LabelTransform::Log1p) => "triangle_log1p",
            TaskName::Triangle(LabelTransform::ExpOver100) => "triangle_exp",
            TaskName::Triangle(LabelTransform::Sin) => "triangle_sin",
            TaskName::Triangle(LabelTransform::Q) => "triangle_q",
            TaskName::Det3(Wave::Cosine) => "det3_cos",
            TaskName::Det3(Wave::Sine) => "det3_sin",
            TaskName::SolidAngle => "solid_angle",
            TaskName::Psi => "psi",
            TaskName::Simplex25 => "simplex25",
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = TaskError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskName::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| TaskError::UnknownTask(s.to_string()))
    }
}

impl From<TaskName> for String {
    fn from(t: TaskName) -> String {
        t.as_str().to_string()
    }
}

impl TryFrom<String> for TaskName {
    type Error = TaskError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// A pair of equal-length, disjoint coordinate blocks that the target treats
/// as interchangeable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeBlock {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl ExchangeBlock {
    pub fn ranges(left: std::ops::Range<usize>, right: std::ops::Range<usize>) -> Self {
        Self {
            left: left.collect(),
            right: right.collect(),
        }
    }

    /// The input with the two blocks swapped.
    pub fn swap(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (&a, &b) in self.left.iter().zip(&self.right) {
            y.swap(a, b);
        }
        y
    }

    fn is_valid(&self, dim: usize) -> bool {
        self.left.len() == self.right.len()
            && !self.left.is_empty()
            && self.left.iter().chain(&self.right).all(|&i| i < dim)
            && self.left.iter().all(|i| !self.right.contains(i))
    }
}

/// A target together with its input domain and symmetry metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: TaskName,
    pub dim: usize,
    pub sampler: Sampler,
    pub exchange_blocks: Vec<ExchangeBlock>,
    /// Invariant-permutation count reported for this target, where one was
    /// published.
    pub invariant_permutation_count: Option<usize>,
}

fn three_point_blocks() -> Vec<ExchangeBlock> {
    vec![
        ExchangeBlock::ranges(0..3, 3..6),
        ExchangeBlock::ranges(0..3, 6..9),
        ExchangeBlock::ranges(3..6, 6..9),
    ]
}

impl TaskSpec {
    pub fn new(name: TaskName) -> Self {
        let (dim, sampler, exchange_blocks, count) = match name {
            TaskName::Triangle(_) => (
                9,
                Sampler::UniformCube { lo: -2.0, hi: 2.0 },
                three_point_blocks(),
                Some(12),
            ),
            TaskName::Det3(Wave::Cosine) => {
                (9, Sampler::StandardGaussian, three_point_blocks(), None)
            }
            TaskName::Det3(Wave::Sine) => (9, Sampler::StandardGaussian, vec![], None),
            TaskName::SolidAngle => (9, Sampler::UnitSphereTriples, three_point_blocks(), Some(6)),
            TaskName::Psi => (
                9,
                Sampler::UnitSphereTriples,
                vec![ExchangeBlock::ranges(0..3, 3..6)],
                Some(2),
            ),
            TaskName::Simplex25 => {
                let mut blocks = Vec::new();
                for a in 0..5 {
                    for b in a + 1..5 {
                        blocks.push(ExchangeBlock::ranges(5 * a..5 * a + 5, 5 * b..5 * b + 5));
                    }
                }
                (25, Sampler::StandardGaussian, blocks, Some(10))
            }
        };
        Self {
            name,
            dim,
            sampler,
            exchange_blocks,
            invariant_permutation_count: count,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, TaskError> {
        Ok(Self::new(name.parse()?))
    }

    pub fn label(&self, x: &[f64]) -> Result<f64, TaskError> {
        match self.name {
            TaskName::Triangle(t) => t.apply(triangle_area(x)?),
            TaskName::Det3(wave) => det3_target(x, wave),
            TaskName::SolidAngle => solid_angle(x),
            TaskName::Psi => psi_target(x),
            TaskName::Simplex25 => simplex_volume_25(x),
        }
    }

    /// Draw one input on which the label is defined, resampling singular
    /// draws. Returns the input, its label and the number of rejected draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Vec<f64>, f64, usize), TaskError> {
        for rejected in 0..RESAMPLE_LIMIT {
            let x = self.sampler.draw(self.dim, rng);
            match self.label(&x) {
                Ok(y) if y.is_finite() => return Ok((x, y, rejected)),
                Ok(_) | Err(TaskError::Singular { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(TaskError::ResampleLimit(RESAMPLE_LIMIT))
    }
}

/// Features, labels and provenance of a generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(skip, default = "empty_matrix")]
    pub x: Matrix,
    #[serde(skip)]
    pub y: Vec<f64>,
    pub task_name: String,
    pub exchange_blocks: Vec<ExchangeBlock>,
    pub seed: u64,
    pub noise_fraction: f64,
    /// Singular draws that were rejected during generation.
    pub resampled: usize,
}

fn empty_matrix() -> Matrix {
    Matrix::zeros(0, 0)
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    task_name: String,
    n: usize,
    dim: usize,
    seed: u64,
    noise_fraction: f64,
    exchange_blocks: Vec<ExchangeBlock>,
    resampled: usize,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        y: Vec<f64>,
        task_name: impl Into<String>,
        exchange_blocks: Vec<ExchangeBlock>,
        seed: u64,
    ) -> Result<Self, TaskError> {
        if x.rows() != y.len() {
            return Err(TaskError::Invalid(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if let Some(b) = exchange_blocks.iter().find(|b| !b.is_valid(x.cols())) {
            return Err(TaskError::Invalid(format!("bad exchange block {b:?}")));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(TaskError::Invalid("non-finite label".into()));
        }
        Ok(Self {
            x,
            y,
            task_name: task_name.into(),
            exchange_blocks,
            seed,
            noise_fraction: 0.0,
            resampled: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Returns the noisy dataset and whether the noise was degenerate
    /// (constant labels, so zero noise scale).
    pub fn with_label_noise(mut self, fraction: f64, seed: u64) -> Result<(Self, bool), TaskError> {
        let noisy = add_label_noise(&self.y, fraction, seed)?;
        self.y = noisy.labels;
        self.noise_fraction = fraction;
        Ok((self, noisy.degenerate))
    }

    /// Write `stem.csv` (header `x1..xd,y`) and `stem.json` (metadata).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), TaskError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| TaskError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut csv = String::new();
        let header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        csv.push_str(&header.join(","));
        csv.push_str(",y\n");
        for i in 0..self.len() {
            for v in self.x.row(i) {
                csv.push_str(&format!("{v:?},"));
            }
            csv.push_str(&format!("{:?}\n", self.y[i]));
        }
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, csv).map_err(io(&csv_path))?;
        let meta = DatasetMeta {
            task_name: self.task_name.clone(),
            n: self.len(),
            dim: self.dim(),
            seed: self.seed,
            noise_fraction: self.noise_fraction,
            exchange_blocks: self.exchange_blocks.clone(),
            resampled: self.resampled,
        };
        let json_path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        std::fs::write(&json_path, json + "\n").map_err(io(&json_path))?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self, TaskError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| TaskError::Io { path, source }
        };
        let json_path = dir.join(format!("{stem}.json"));
        let meta: DatasetMeta =
            serde_json::from_str(&std::fs::read_to_string(&json_path).map_err(io(&json_path))?)
                .map_err(|e| TaskError::Format(e.to_string()))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let text = std::fs::read_to_string(&csv_path).map_err(io(&csv_path))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| TaskError::Format("empty csv".into()))?;
        if header.split(',').count() != meta.dim + 1 {
            return Err(TaskError::Format(format!("header {header:?}")));
        }
        let mut x = Vec::with_capacity(meta.n * meta.dim);
        let mut y = Vec::with_capacity(meta.n);
        for (lineno, line) in lines.enumerate() {
            let vals = line
                .split(',')
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TaskError::Format(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != meta.dim + 1 {
                return Err(TaskError::Format(format!("line {} width", lineno + 2)));
            }
            x.extend_from_slice(&vals[..meta.dim]);
            y.push(vals[meta.dim]);
        }
        let x = Matrix::new(y.len(), meta.dim, x)?;
        let mut ds = Dataset::new(x, y, meta.task_name, meta.exchange_blocks, meta.seed)?;
        ds.noise_fraction = meta.noise_fraction;
        ds.resampled = meta.resampled;
        Ok(ds)
    }
}

/// Draw `n` labelled samples. Deterministic in `(task, n, seed)`.
pub fn generate_dataset(task: &TaskSpec, n: usize, seed: u64) -> Result<Dataset, TaskError> {
    if n == 0 {
        return Err(TaskError::Invalid("n must be >= 1".into()));
    }
    let mut stream = rng::stream(seed, "dataset", 0);
    let mut x = Vec::with_capacity(n * task.dim);
    let mut y = Vec::with_capacity(n);
    let mut resampled = 0;
    for _ in 0..n {
        let (xi, yi, rejected) = task.sample(&mut stream)?;
        x.extend(xi);
        y.push(yi);
        resampled += rejected;
    }
    let mut ds = Dataset::new(
        Matrix::new(n, task.dim, x)?,
        y,
        task.name.as_str(),
        task.exchange_blocks.clone(),
        seed,
    )?;
    ds.resampled = resampled;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelNoise {
    pub labels: Vec<f64>,
    /// Standard deviation of the added noise.
    pub noise_std: f64,
    /// Set when the labels are constant and no noise could be scaled.
    pub degenerate: bool,
}

/// Add i.i.d. Gaussian noise with standard deviation
/// `fraction * sample_std(y)`.
pub fn add_label_noise(y: &[f64], fraction: f64, seed: u64) -> Result<LabelNoise, TaskError> {
    if !(fraction >= 0.0) {
        return Err(TaskError::Invalid(format!("noise fraction {fraction} < 0")));
    }
    let n = y.len();
    let std = if n > 1 {
        let mean = y.iter().sum::<f64>() / n as f64;
        (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let noise_std = fraction * std;
    if fraction == 0.0 || noise_std == 0.0 {
        return Ok(LabelNoise {
            labels: y.to_vec(),
            noise_std: 0.0,
            degenerate: fraction > 0.0,
        });
    }
    let mut stream = rng::stream(seed, "label-noise", 0);
    let labels = y
        .iter()
        .map(|v| v + noise_std * stream.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(LabelNoise {
        labels,
        noise_std,
        degenerate: false,
    })
}

/// A coordinate permutation: `(p x)[i] = x[p[i]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub label: String,
    pub map: Vec<usize>,
}

impl Permutation {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.map.iter().map(|&i| x[i]).collect()
    }
}

const S3: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Candidate universe for 9-dimensional targets viewed as a 3x3 array
/// (rows = points `u, v, w`, columns = coordinates): the six permutations of
/// the points followed by the six permutations of the coordinate groups
/// `(x1,x4,x7), (x2,x5,x8), (x3,x6,x9)`. Both families contain the identity,
/// so the list has twelve entries.
pub fn nine_dim_candidates() -> Vec<Permutation> {
    let mut out = Vec::with_capacity(12);
    for p in S3 {
        out.push(Permutation {
            label: format!("points{p:?}"),
            map: (0..9).map(|k| 3 * p[k / 3] + k % 3).collect(),
        });
    }
    for p in S3 {
        out.push(Permutation {
            label: format!("coords{p:?}"),
            map: (0..9).map(|k| 3 * (k / 3) + p[k % 3]).collect(),
        });
    }
    out
}

/// The ten transpositions of the five points of the simplex task.
pub fn simplex_candidates() -> Vec<Permutation> {
    let mut out = Vec::with_capacity(10);
    for a in 0..5 {
        for b in a + 1..5 {
            let mut map: Vec<usize> = (0..25).collect();
            for k in 0..5 {
                map.swap(5 * a + k, 5 * b + k);
            }
            out.push(Permutation {
                label: format!("swap({a},{b})"),
                map,
            });
        }
    }
    out
}
