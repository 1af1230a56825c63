//! Charged N-body trajectories under softened electrostatics, optionally with
//! uniform gravity or a uniform magnetic field, and their JSON Lines storage.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, norm, sub, Vec3};
use crate::model::Graph;

/// Plummer softening length of the Coulomb interaction.
pub const SOFTENING: f64 = 0.1;
/// Gravitational acceleration along `−z` for [`Field::GravityEs`].
pub const GRAVITY: f64 = 0.5;
/// Magnetic field for [`Field::LorentzEs`].
pub const MAGNETIC_FIELD: Vec3<f64> = [0.0, 0.0, 1.0];
/// Minimum pair distance of a sampled initial state.
pub const MIN_PAIR_DISTANCE: f64 = 0.2;
pub const VELOCITY_STD: f64 = 0.5;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_STEPS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "G_ES")]
    GravityEs,
    #[serde(rename = "L_ES")]
    LorentzEs,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Es => "ES",
            Field::GravityEs => "G_ES",
            Field::LorentzEs => "L_ES",
        })
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['+', '-'], "_").as_str() {
            "ES" => Ok(Field::Es),
            "G_ES" => Ok(Field::GravityEs),
            "L_ES" => Ok(Field::LorentzEs),
            _ => Err(Error::Argument(format!("unknown force field {s:?} (expected ES, G_ES or L_ES)"))),
        }
    }
}

/// Unit-mass point charges.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem {
    pub positions: Vec<Vec3<f64>>,
    pub velocities: Vec<Vec3<f64>>,
    pub charges: Vec<f64>,
}

impl ParticleSystem {
    pub fn new(positions: Vec<Vec3<f64>>, velocities: Vec<Vec3<f64>>, charges: Vec<f64>) -> Result<Self> {
        let n = positions.len();
        if n < 2 {
            return Err(Error::Argument(format!("a particle system needs at least 2 particles, got {n}")));
        }
        if velocities.len() != n || charges.len() != n {
            return Err(Error::Dimension(format!(
                "{n} positions, {} velocities, {} charges",
                velocities.len(),
                charges.len()
            )));
        }
        let finite = positions.iter().chain(&velocities).flatten().chain(&charges).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Argument("particle system has non-finite entries".into()));
        }
        Ok(ParticleSystem { positions, velocities, charges })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Random initial state: positions uniform in `[−1, 1]³` resampled until
    /// every pair is at least [`MIN_PAIR_DISTANCE`] apart, Gaussian velocities
    /// and charges `±1`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, VELOCITY_STD).expect("valid std");
        let mut positions: Vec<Vec3<f64>> = Vec::with_capacity(n);
        while positions.len() < n {
            let p = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
            if positions.iter().all(|q| norm(&sub(&p, q)) >= MIN_PAIR_DISTANCE) {
                positions.push(p);
            }
        }
        let velocities = (0..n).map(|_| [0; 3].map(|_| normal.sample(rng))).collect();
        let charges = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        Self::new(positions, velocities, charges)
    }

    pub fn min_pair_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.min(norm(&sub(&self.positions[i], &self.positions[j])));
            }
        }
        best
    }

    pub fn momentum(&self) -> Vec3<f64> {
        let mut p = [0.0; 3];
        for v in &self.velocities {
            for k in 0..3 {
                p[k] += v[k];
            }
        }
        p
    }

    /// Kinetic plus potential energy; the magnetic force does no work.
    pub fn energy(&self, field: Field) -> f64 {
        let n = self.len();
        let kinetic: f64 = self.velocities.iter().map(|v| 0.5 * dot(v, v)).sum();
        let mut potential = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r2 = dot(&sub(&self.positions[i], &self.positions[j]), &sub(&self.positions[i], &self.positions[j]));
                potential += self.charges[i] * self.charges[j] / (r2 + SOFTENING * SOFTENING).sqrt();
            }
        }
        if field == Field::GravityEs {
            potential += self.positions.iter().map(|x| GRAVITY * x[2]).sum::<f64>();
        }
        kinetic + potential
    }

    pub fn to_graph(&self) -> Result<Graph> {
        Graph::fully_connected(self.positions.clone(), self.velocities.clone(), self.charges.clone())
    }
}

/// Pairwise softened Coulomb forces plus the field's external term.
pub fn compute_forces(sys: &ParticleSystem, field: Field) -> Vec<Vec3<f64>> {
    let n = sys.len();
    let mut f = vec![[0.0; 3]; n];
    let eps2 = SOFTENING * SOFTENING;
    for i in 0..n {
        for j in i + 1..n {
            let d = sub(&sys.positions[i], &sys.positions[j]);
            let r2 = dot(&d, &d) + eps2;
            let c = sys.charges[i] * sys.charges[j] / (r2 * r2.sqrt());
            for k in 0..3 {
                f[i][k] += c * d[k];
                f[j][k] -= c * d[k];
            }
        }
    }
    match field {
        Field::Es => {}
        Field::GravityEs => f.iter_mut().for_each(|fi| fi[2] -= GRAVITY),
        Field::LorentzEs => {
            for (i, fi) in f.iter_mut().enumerate() {
                let l = cross(&sys.velocities[i], &MAGNETIC_FIELD);
                for k in 0..3 {
                    fi[k] += sys.charges[i] * l[k];
                }
            }
        }
    }
    f
}

/// Semi-implicit Euler: velocities first, then positions with the new velocities.
pub fn integrate_step(sys: &ParticleSystem, field: Field, dt: f64) -> Result<ParticleSystem> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("time step must be positive, got {dt}")));
    }
    let f = compute_forces(sys, field);
    let mut next = sys.clone();
    for i in 0..sys.len() {
        for k in 0..3 {
            next.velocities[i][k] += dt * f[i][k];
            next.positions[i][k] += dt * next.velocities[i][k];
        }
    }
    Ok(next)
}

pub fn integrate(sys: &ParticleSystem, field: Field, dt: f64, steps: usize) -> Result<ParticleSystem> {
    let mut s = sys.clone();
    for _ in 0..steps {
        s = integrate_step(&s, field, dt)?;
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub field: Field,
    pub dt: f64,
    pub steps: usize,
    /// Seed of this trajectory's generator, `base seed + index`.
    pub seed: u64,
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySample {
    pub positions: Vec<Vec3<f64>>,
    pub velocities: Vec<Vec3<f64>>,
    pub charges: Vec<f64>,
    pub target_positions: Vec<Vec3<f64>>,
    pub meta: SampleMeta,
}

impl TrajectorySample {
    pub fn initial(&self) -> Result<ParticleSystem> {
        ParticleSystem::new(self.positions.clone(), self.velocities.clone(), self.charges.clone())
    }

    pub fn graph(&self) -> Result<Graph> {
        Graph::fully_connected(self.positions.clone(), self.velocities.clone(), self.charges.clone())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let n = self.positions.len();
        if n < 2 {
            return Err(format!("need at least 2 particles, got {n}"));
        }
        if self.velocities.len() != n || self.charges.len() != n || self.target_positions.len() != n {
            return Err(format!(
                "array lengths disagree: {n} positions, {} velocities, {} charges, {} targets",
                self.velocities.len(),
                self.charges.len(),
                self.target_positions.len()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_traj: usize,
    pub n_particles: usize,
    pub field: Field,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { n_traj: 1000, n_particles: 5, field: Field::LorentzEs, dt: DEFAULT_DT, steps: DEFAULT_STEPS, seed: 42 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::Config("n_traj must be at least 1".into()));
        }
        if self.n_particles < 2 {
            return Err(Error::Config("n_particles must be at least 2".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Trajectory `index` of a dataset; depends only on `(cfg, index)`.
pub fn generate_sample(cfg: &GenConfig, index: usize) -> Result<TrajectorySample> {
    let seed = cfg.seed.wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = ParticleSystem::random(cfg.n_particles, &mut rng)?;
    let end = integrate(&sys, cfg.field, cfg.dt, cfg.steps)?;
    Ok(TrajectorySample {
        positions: sys.positions,
        velocities: sys.velocities,
        charges: sys.charges,
        target_positions: end.positions,
        meta: SampleMeta { field: cfg.field, dt: cfg.dt, steps: cfg.steps, seed },
    })
}

pub fn generate(cfg: &GenConfig) -> Result<Vec<TrajectorySample>> {
    cfg.validate()?;
    (0..cfg.n_traj).into_par_iter().map(|i| generate_sample(cfg, i)).collect()
}

/// Generate and write a dataset; paths ending in `.gz` are gzip-compressed.
pub fn generate_dataset(cfg: &GenConfig, out: &Path) -> Result<usize> {
    let samples = generate(cfg)?;
    write_dataset(&samples, out)?;
    Ok(samples.len())
}

pub fn write_dataset(samples: &[TrajectorySample], out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = BufWriter::new(File::create(out).map_err(|e| Error::io(out, e))?);
    let write_all = |w: &mut dyn Write| -> std::io::Result<()> {
        for s in samples {
            serde_json::to_writer(&mut *w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    let res = if out.extension().is_some_and(|e| e == "gz") {
        let mut gz = GzEncoder::new(file, Compression::default());
        write_all(&mut gz).and_then(|_| gz.finish()).and_then(|mut f| f.flush())
    } else {
        let mut f = file;
        write_all(&mut f)
    };
    res.map_err(|e| Error::io(out, e))
}

/// Read a JSON Lines dataset, gzip-compressed or not (detected from the
/// magic bytes). Blank lines are skipped.
pub fn read_dataset(path: &Path) -> Result<Vec<TrajectorySample>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let got = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn BufRead> = if got == 2 && magic == [0x1f, 0x8b] {
        Box::new(BufReader::new(GzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: TrajectorySample =
            serde_json::from_str(&line).map_err(|e| Error::Dataset { line: k + 1, msg: e.to_string() })?;
        s.validate().map_err(|msg| Error::Dataset { line: k + 1, msg })?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::Dataset { line: 0, msg: format!("{} contains no samples", path.display()) });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 5/1/1 train/validation/test split: indices ranked by a hash of
/// `(seed, index)`, the first five sevenths train, the next seventh
/// validation, the rest test. Each part is returned in ascending order.
pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_key(|&i| (mix64(mix64(seed) ^ i as u64), i));
    let n_train = n * 5 / 7;
    let n_val = n / 7;
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Split { train, val, test }
}
