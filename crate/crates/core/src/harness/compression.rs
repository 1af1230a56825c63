use num_complex::Complex64;
use serde::Serialize;

use crate::compress::{export_node, truncate, MpsChain, Truncation};
use crate::error::{Error, Result};
use crate::model::{Graph, Model, Variant};

/// Round-off allowance when comparing a measured error with its bound.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationLevel {
    pub max_bond: usize,
    pub bonds: Vec<usize>,
    /// Square root of the discarded squared singular values.
    pub bound: f64,
    /// Frobenius distance between the original and truncated kernels.
    pub measured: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeCompression {
    pub graph: usize,
    pub node: usize,
    pub neighbors: usize,
    pub bonds: Vec<usize>,
    pub kernel_norm: f64,
    pub levels: Vec<TruncationLevel>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompressReport {
    pub layer: usize,
    pub chi: usize,
    pub nodes: Vec<NodeCompression>,
    pub all_within: bool,
    /// Chains truncated to the first requested bond, one per node.
    #[serde(skip)]
    pub chains: Vec<MpsChain<Complex64>>,
}

/// Export every node's kernel chain at `layer` and truncate it to each bond
/// in `max_bonds` (every bond below χ when empty).
pub fn compress_report(model: &Model, graphs: &[&Graph], layer: usize, max_bonds: &[usize]) -> Result<CompressReport> {
    let cfg = &model.config;
    if cfg.variant != Variant::Spatea {
        return Err(Error::Argument("the baseline model has no kernel chains".into()));
    }
    if layer >= cfg.layers {
        return Err(Error::Argument(format!("layer {layer} out of range for {} layers", cfg.layers)));
    }
    let bonds: Vec<usize> = if max_bonds.is_empty() { (1..cfg.chi.max(2)).collect() } else { max_bonds.to_vec() };
    if let Some(&b) = bonds.iter().find(|&&b| b == 0) {
        return Err(Error::Argument(format!("max bond must be positive, got {b}")));
    }
    let mut nodes = vec![];
    let mut chains = vec![];
    for (gi, g) in graphs.iter().enumerate() {
        let (_, tr) = model.trace(g)?;
        let lt = &tr.layers[layer];
        for node in 0..g.len() {
            let (r, chain) = export_node(lt, node, cfg.chi)?;
            let dense = chain.contract()?;
            let mut levels = vec![];
            for (k, &b) in bonds.iter().enumerate() {
                let (cut, bound) = truncate(&chain, Truncation::MaxBond(b))?;
                let measured = cut.contract()?.sub(&dense)?.norm_fro();
                levels.push(TruncationLevel {
                    max_bond: b,
                    bonds: cut.bond_dims(),
                    bound,
                    measured,
                    within: measured <= bound * (1.0 + BOUND_SLACK) + 1e-12,
                });
                if k == 0 {
                    chains.push(cut);
                }
            }
            nodes.push(NodeCompression {
                graph: gi,
                node,
                neighbors: lt.order[node].len(),
                bonds: chain.bond_dims(),
                kernel_norm: r.norm_fro(),
                levels,
            });
        }
    }
    let all_within = nodes.iter().all(|n| n.levels.iter().all(|l| l.within));
    Ok(CompressReport { layer, chi: cfg.chi, nodes, all_within, chains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KernelMode, ModelConfig, ScalarMode};
    use crate::nbody::ParticleSystem;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_level_respects_its_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ParticleSystem::random(5, &mut rng).unwrap().to_graph().unwrap();
        for km in [KernelMode::Commuting, KernelMode::General] {
            let cfg = ModelConfig { d: 3, chi: 4, sigma: 2, chi_t: 2, layers: 2, hidden: 8, msg_width: 4, kernel_mode: km, scalar_mode: ScalarMode::Complex, ..Default::default() };
            let m = Model::init(cfg, 5).unwrap();
            let rep = compress_report(&m, &[&g], 1, &[]).unwrap();
            assert_eq!(rep.nodes.len(), 5);
            assert_eq!(rep.chains.len(), 5);
            assert!(rep.all_within, "{rep:?}");
            for n in &rep.nodes {
                assert_eq!(n.levels.len(), 3);
                assert!(n.levels[0].bound >= n.levels[2].bound - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ParticleSystem::random(3, &mut rng).unwrap().to_graph().unwrap();
        let m = Model::init(ModelConfig { d: 2, chi: 2, hidden: 4, msg_width: 3, layers: 1, ..Default::default() }, 1).unwrap();
        assert!(compress_report(&m, &[&g], 1, &[]).is_err());
        assert!(compress_report(&m, &[&g], 0, &[0]).is_err());
    }
}
