use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{KernelMode, ModelConfig, Variant, NODE_INPUTS};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::RTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Zeros,
    Ones,
    Eye,
    /// Glorot-uniform, multiplied by the given gain.
    Glorot(f64),
    Uniform(f64),
    /// `δ` on selected axis pairs plus uniform noise of the given size.
    Delta(f64),
}

/// Named real parameter tensors. Weights are stored `[in, out]`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Params {
    map: BTreeMap<String, RTensor>,
}

/// Parameters recorded on a tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound { vars: vars.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

fn mlp_specs(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, sizes: &[usize]) {
    for (k, w) in sizes.windows(2).enumerate() {
        out.push((format!("{prefix}.{k}.w"), vec![w[0], w[1]], Init::Glorot(1.0)));
        out.push((format!("{prefix}.{k}.b"), vec![w[1]], Init::Zeros));
    }
}

fn specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, chi, sig, w, h, m, ct) = (cfg.d, cfg.chi, cfg.sigma, cfg.width(), cfg.hidden, cfg.msg_width, cfg.chi_t);
    let mut s = vec![("embed.w".to_string(), vec![2 * NODE_INPUTS, w], Init::Glorot(1.0))];
    for l in 0..cfg.layers {
        let p = format!("layer{l}");
        mlp_specs(&mut s, &format!("{p}.msg"), &[cfg.msg_inputs(), h, h, m]);
        match cfg.variant {
            Variant::Spatea => {
                mlp_specs(&mut s, &format!("{p}.hyper"), &[cfg.hyper_inputs(), h, h, cfg.hyper_outputs()]);
                s.push((format!("{p}.G.re"), vec![sig, d, d], Init::Delta(0.1)));
                s.push((format!("{p}.G.im"), vec![sig, d, d], Init::Uniform(0.1)));
                if cfg.kernel_mode == KernelMode::Commuting {
                    s.push((format!("{p}.U.raw"), vec![2, chi, chi], Init::Uniform(0.5)));
                }
                s.push((format!("{p}.S.re"), vec![chi, chi, d, d], Init::Delta(0.1)));
                s.push((format!("{p}.S.im"), vec![chi, chi, d, d], Init::Uniform(0.1)));
            }
            Variant::Baseline => {
                let hb = baseline_hidden(cfg);
                mlp_specs(&mut s, &format!("{p}.gate"), &[cfg.hyper_inputs(), hb, hb, w]);
                s.push((format!("{p}.mix.w"), vec![2 * w, w], Init::Glorot(1.0)));
                s.push((format!("{p}.mix.b"), vec![w], Init::Zeros));
            }
        }
        s.push((format!("{p}.ln.gamma"), vec![w], Init::Ones));
        s.push((format!("{p}.ln.beta"), vec![w], Init::Zeros));
        s.push((format!("{p}.res.w"), vec![w, w], Init::Eye));
        s.push((format!("{p}.pos.w"), vec![m, 3], Init::Glorot(0.1)));
        s.push((format!("temporal.layer{l}.phi"), vec![ct, w, ct], Init::Uniform(1.0 / (ct as f64).sqrt())));
        s.push((format!("temporal.layer{l}.b"), vec![ct], Init::Zeros));
    }
    s.push(("temporal.v0.w".to_string(), vec![w, ct], Init::Glorot(1.0)));
    mlp_specs(&mut s, "out.msg", &[cfg.out_inputs(), h, h, m]);
    s.push(("out.pos.w".to_string(), vec![m, 3], Init::Glorot(0.1)));
    s
}

fn count(specs: &[(String, Vec<usize>, Init)]) -> usize {
    specs.iter().map(|s| s.1.iter().product::<usize>()).sum()
}

/// Gating width for the baseline so that both variants have about the same
/// number of parameters.
pub fn baseline_hidden(cfg: &ModelConfig) -> usize {
    if let Some(h) = cfg.baseline_hidden {
        return h;
    }
    let target = count(&specs(&ModelConfig { variant: Variant::Spatea, ..cfg.clone() }));
    let mut best = (usize::MAX, 1);
    for hb in 1..=8 * cfg.hidden {
        let trial = ModelConfig { variant: Variant::Baseline, baseline_hidden: Some(hb), ..cfg.clone() };
        let diff = count(&specs(&trial)).abs_diff(target);
        if diff < best.0 {
            best = (diff, hb);
        }
    }
    best.1
}

impl Params {
    /// Random initialization, deterministic in `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = BTreeMap::new();
        for (name, shape, init) in specs(cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Eye => {
                    let k = shape[0];
                    (0..n).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect()
                }
                Init::Glorot(gain) => {
                    let (fi, fo) = (shape[0], shape[shape.len() - 1]);
                    let a = gain * (6.0 / (fi + fo) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..=a)).collect()
                }
                Init::Uniform(a) => (0..n).map(|_| rng.gen_range(-a..=a)).collect(),
                Init::Delta(noise) => {
                    // [σ, d, d]: identity per slice. [χ, χ, d, d]: δ_mn δ_ab.
                    let r = shape.len();
                    let inner = shape[r - 1];
                    let outer = if r == 4 { shape[1] } else { 0 };
                    (0..n)
                        .map(|i| {
                            let (a, b) = ((i / inner) % inner, i % inner);
                            let diag_outer = r != 4 || (i / (inner * inner)) / outer == (i / (inner * inner)) % outer;
                            let base = if a == b && diag_outer { 1.0 } else { 0.0 };
                            base + rng.gen_range(-noise..=noise)
                        })
                        .collect()
                }
            };
            map.insert(name, RTensor::new(shape, data).expect("spec shapes are non-empty"));
        }
        Params { map }
    }

    /// Every entry zero: the model then returns its input positions.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let map = specs(cfg).into_iter().map(|(name, shape, _)| (name, RTensor::zeros(&shape))).collect();
        Params { map }
    }

    pub fn from_map(map: BTreeMap<String, RTensor>) -> Self {
        Params { map }
    }

    /// Confirm names and shapes match what `cfg` needs.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let want = specs(cfg);
        for (name, shape, _) in &want {
            match self.map.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, config needs {:?}",
                        t.shape(),
                        shape
                    )))
                }
                _ => {}
            }
        }
        if self.map.len() != want.len() {
            let extra = self.map.keys().find(|k| !want.iter().any(|w| &w.0 == *k)).cloned().unwrap_or_default();
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&RTensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut RTensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RTensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut RTensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> Bound {
        let vars = self
            .map
            .iter()
            .map(|(k, v)| (k.clone(), if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) }))
            .collect();
        Bound { vars }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_valid() {
        let cfg = ModelConfig { d: 3, chi: 2, sigma: 2, chi_t: 2, layers: 2, hidden: 8, msg_width: 4, ..Default::default() };
        let a = Params::init(&cfg, 5);
        assert_eq!(a, Params::init(&cfg, 5));
        assert_ne!(a, Params::init(&cfg, 6));
        a.check(&cfg).unwrap();
        let gen = ModelConfig { kernel_mode: KernelMode::General, ..cfg.clone() };
        assert!(matches!(a.check(&gen), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn delta_init_is_near_identity() {
        let cfg = ModelConfig { d: 3, chi: 2, sigma: 1, layers: 1, ..Default::default() };
        let p = Params::init(&cfg, 1);
        let s = p.get("layer0.S.re").unwrap();
        assert!((s.get(&[1, 1, 2, 2]) - 1.0).abs() <= 0.1);
        assert!(s.get(&[0, 1, 2, 2]).abs() <= 0.1);
        assert!(s.get(&[1, 1, 0, 2]).abs() <= 0.1);
        let g = p.get("layer0.G.re").unwrap();
        assert!((g.get(&[0, 1, 1]) - 1.0).abs() <= 0.1);
    }

    #[test]
    fn baseline_parameter_count_is_matched() {
        let cfg = ModelConfig::default();
        let sp = Params::init(&cfg, 0).count();
        let bl = Params::init(&ModelConfig { variant: Variant::Baseline, ..cfg }, 0).count();
        let rel = (sp as f64 - bl as f64).abs() / sp as f64;
        assert!(rel < 0.01, "spatea {sp} vs baseline {bl}");
    }
}
