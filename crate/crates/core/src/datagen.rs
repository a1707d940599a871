//! Synthetic regression problems `Y = f(X) + eps` with known `f`: sparse
//! teacher networks and a small catalog of hierarchical compositions.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ActiveSet, Forward, NetworkArch, ParamVector};
use crate::risk::Dataset;

/// Hierarchical test functions on `[0,1]^p`, all bounded by 1.
///
/// * `a`: `g1(g0(x))` with `g0(x) = (x1 + x3) / 2`, `g1(u) = u^2`
///   (one composition level, `t = (2, 1)`).
/// * `b`: `sum_{j<=3} sin(pi x_j) / 3` (additive, one level).
/// * `c`: `max(x1, x2) * x5`, i.e. `g1(g0(x))` with
///   `g0(x) = (max(x1, x2), x5)` and `g1(u, v) = u v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    A,
    B,
    C,
}

impl Builtin {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "a" => Ok(Builtin::A),
            "b" => Ok(Builtin::B),
            "c" => Ok(Builtin::C),
            other => Err(Error::config(format!(
                "unknown hierarchical function '{other}' (expected a, b or c)"
            ))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Builtin::A => "a",
            Builtin::B => "b",
            Builtin::C => "c",
        }
    }

    /// Smallest input dimension the function reads.
    pub fn min_input_dim(self) -> usize {
        match self {
            Builtin::A | Builtin::B => 3,
            Builtin::C => 5,
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Builtin::A => {
                let u = (x[0] + x[2]) / 2.0;
                u * u
            }
            Builtin::B => x[..3].iter().map(|v| (std::f64::consts::PI * v).sin()).sum::<f64>() / 3.0,
            Builtin::C => x[0].max(x[1]) * x[4],
        }
    }
}

/// Returns the catalog function with the given id.
pub fn builtin_hierarchical(id: &str) -> Result<impl Fn(&[f64]) -> f64> {
    let b = Builtin::from_id(id)?;
    Ok(move |x: &[f64]| b.eval(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputLaw {
    /// Uniform on `[0,1]^p`.
    Uniform,
    /// `N(0, k I_p)`, so `E|X|^2 = p k`.
    Gaussian { k: f64 },
}

impl InputLaw {
    pub fn sample<R: Rng>(&self, rng: &mut R, x: &mut [f64]) {
        match *self {
            InputLaw::Uniform => x.iter_mut().for_each(|v| *v = rng.gen::<f64>()),
            InputLaw::Gaussian { k } => {
                let sd = k.sqrt();
                x.iter_mut()
                    .for_each(|v| *v = sd * rng.sample::<f64, _>(StandardNormal));
            }
        }
    }

    /// A constant `K` with `E|X|^2 <= p K`.
    pub fn second_moment_constant(&self) -> f64 {
        match *self {
            InputLaw::Uniform => 1.0 / 3.0,
            InputLaw::Gaussian { k } => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseLaw {
    Gaussian {
        sigma: f64,
    },
    /// Uniform on `[-half_width, half_width]`.
    Uniform {
        half_width: f64,
    },
}

impl NoiseLaw {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseLaw::Gaussian { sigma } => {
                if sigma == 0.0 {
                    0.0
                } else {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                }
            }
            NoiseLaw::Uniform { half_width } => {
                if half_width == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-half_width..=half_width)
                }
            }
        }
    }

    /// Bernstein moment constants `(sigma, Gamma)` with
    /// `E|eps|^k <= k!/2 sigma^2 Gamma^(k-2)`.
    pub fn moment_constants(&self) -> (f64, f64) {
        match *self {
            NoiseLaw::Gaussian { sigma } => (sigma, sigma),
            NoiseLaw::Uniform { half_width } => (half_width, half_width),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseLaw::Gaussian { sigma } => sigma * sigma,
            NoiseLaw::Uniform { half_width } => half_width * half_width / 3.0,
        }
    }
}

/// Ground-truth regression function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Teacher {
    /// Clipped sparse network `f_theta` with `theta` supported on `active`.
    Network {
        arch: NetworkArch,
        theta: ParamVector,
        active: ActiveSet,
    },
    Hierarchical {
        id: Builtin,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub teacher: Teacher,
    pub input_dim: usize,
    pub input: InputLaw,
    pub noise: NoiseLaw,
    /// Bound `C` on `|f|`; the truth is clipped to `[-C, C]`.
    pub clip: f64,
}

impl TeacherSpec {
    pub fn hierarchical(id: &str, input_dim: usize, noise: NoiseLaw) -> Result<Self> {
        let b = Builtin::from_id(id)?;
        if input_dim < b.min_input_dim() {
            return Err(Error::config(format!(
                "function '{}' needs at least {} inputs, got {input_dim}",
                b.id(),
                b.min_input_dim()
            )));
        }
        Ok(TeacherSpec {
            teacher: Teacher::Hierarchical { id: b },
            input_dim,
            input: InputLaw::Uniform,
            noise,
            clip: 1.0,
        })
    }

    pub fn with_noise(mut self, noise: NoiseLaw) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_input(mut self, input: InputLaw) -> Self {
        self.input = input;
        self
    }

    /// Evaluator for `f`, clipped to `[-C, C]`.
    pub fn truth(&self) -> impl FnMut(&[f64]) -> f64 + '_ {
        let mut fw = match &self.teacher {
            Teacher::Network { arch, .. } => Some(Forward::new(arch)),
            Teacher::Hierarchical { .. } => None,
        };
        move |x: &[f64]| {
            let v = match &self.teacher {
                Teacher::Network { arch, theta, .. } => fw.as_mut().expect("network forward").raw(arch, theta, x),
                Teacher::Hierarchical { id } => id.eval(x),
            };
            v.clamp(-self.clip, self.clip)
        }
    }

    /// Single evaluation of the clipped truth.
    pub fn truth_at(&self, x: &[f64]) -> f64 {
        (self.truth())(x)
    }

    pub fn sparsity(&self) -> Option<usize> {
        match &self.teacher {
            Teacher::Network { active, .. } => Some(active.len()),
            Teacher::Hierarchical { .. } => None,
        }
    }
}

/// `n` i.i.d. pairs from `spec`, reproducible from `seed`.
pub fn sample_dataset(spec: &TeacherSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("dataset size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.input_dim;
    let mut xs = vec![0.0; n * p];
    let mut ys = Vec::with_capacity(n);
    let mut truth = spec.truth();
    for row in xs.chunks_exact_mut(p) {
        spec.input.sample(&mut rng, row);
        ys.push(truth(row) + spec.noise.sample(&mut rng));
    }
    Dataset::new(p, xs, ys)
}

/// True if some input reaches the output through active weights. Shift
/// parameters do not create paths.
pub fn has_connected_path(arch: &NetworkArch, active: &ActiveSet) -> bool {
    let mut reach = vec![true; arch.input_dim];
    for l in 1..=arch.hidden_layers + 1 {
        let ll = arch.layer(l);
        reach = (0..ll.rows)
            .map(|j| (0..ll.cols).any(|k| reach[k] && active.contains(arch.weight_index(l, j, k))))
            .collect();
    }
    reach[0]
}

const TEACHER_RETRIES: usize = 100;
/// Minimum variance of `f(X)` for a teacher to count as non-degenerate.
const MIN_TEACHER_VARIANCE: f64 = 1e-3;

/// Random sparse teacher with `sparsity` active parameters containing at
/// least one input-to-output path, active values uniform on `[-B, B]`, and
/// a non-constant response on `[0,1]^p`. Noise-free until configured.
pub fn teacher_network(arch: &NetworkArch, sparsity: usize, seed: u64) -> Result<TeacherSpec> {
    arch.validate()?;
    let dim = arch.param_count();
    if sparsity == 0 || sparsity > dim {
        return Err(Error::config(format!(
            "teacher sparsity must be in 1..={dim}, got {sparsity}"
        )));
    }
    let path_len = arch.hidden_layers + 1;
    if sparsity < path_len {
        return Err(Error::config(format!(
            "a connected path needs {path_len} active weights, sparsity is {sparsity}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..TEACHER_RETRIES {
        let mut chosen = Vec::with_capacity(sparsity);
        let mut prev = rng.gen_range(0..arch.input_dim);
        for l in 1..=arch.hidden_layers {
            let unit = rng.gen_range(0..arch.width);
            chosen.push(arch.weight_index(l, unit, prev));
            prev = unit;
        }
        chosen.push(arch.weight_index(arch.hidden_layers + 1, 0, prev));
        let rest: Vec<usize> = (0..dim).filter(|i| !chosen.contains(i)).collect();
        for k in index::sample(&mut rng, rest.len(), sparsity - path_len).into_iter() {
            chosen.push(rest[k]);
        }
        let active = ActiveSet::new(chosen, dim)?;
        let mut theta = ParamVector::zeros(dim);
        for i in active.iter() {
            theta[i] = rng.gen_range(-arch.box_bound..=arch.box_bound);
        }
        let spec = TeacherSpec {
            teacher: Teacher::Network {
                arch: *arch,
                theta,
                active,
            },
            input_dim: arch.input_dim,
            input: InputLaw::Uniform,
            noise: NoiseLaw::Gaussian { sigma: 0.0 },
            clip: arch.clip,
        };
        if response_variance(&spec, &mut rng) >= MIN_TEACHER_VARIANCE {
            return Ok(spec);
        }
    }
    Err(Error::config(format!(
        "no non-degenerate teacher with sparsity {sparsity} after {TEACHER_RETRIES} attempts"
    )))
}

fn response_variance<R: Rng>(spec: &TeacherSpec, rng: &mut R) -> f64 {
    let m = 2000;
    let mut x = vec![0.0; spec.input_dim];
    let mut truth = spec.truth();
    let vals: Vec<f64> = (0..m)
        .map(|_| {
            spec.input.sample(rng, &mut x);
            truth(&x)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / m as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64
}

/// Writes a dataset as CSV with header `x1,...,xp,y`.
pub fn write_dataset_csv<W: Write>(data: &Dataset, out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=data.input_dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(data.input_dim() + 1);
    for (x, y) in data.rows() {
        rec.clear();
        rec.extend(x.iter().map(|v| v.to_string()));
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R) -> std::result::Result<Dataset, csv::Error> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let p = headers.len().saturating_sub(1);
    let valid =
        p >= 1 && headers.get(p) == Some("y") && (0..p).all(|j| headers.get(j) == Some(format!("x{}", j + 1).as_str()));
    if !valid {
        return Err(csv_error("header must be x1,...,xp,y"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| csv_error(&format!("not a number: '{field}'")))?;
            if j < p {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    Dataset::new(p, xs, ys).map_err(|e| csv_error(&e.to_string()))
}

fn csv_error(msg: &str) -> csv::Error {
    csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()))
}

pub fn write_dataset_file(data: &Dataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_csv(data, std::io::BufWriter::new(f)).map_err(|e| Error::csv(path, e))
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_csv(std::io::BufReader::new(f)).map_err(|e| Error::csv(path, e))
}
