use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::config::{KernelMode, ModelConfig, ScalarMode, Variant};
use super::graph::{Batch, Graph};
use super::params::{Bound, Params};
use crate::autodiff::{CVar, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{order_neighbors, Vec3, DEGENERACY_EPS};
use crate::{CTensor, RTensor};

/// Edges whose frame was degenerate and got dropped from a position mean.
pub static DEGENERATE_EDGES: AtomicUsize = AtomicUsize::new(0);

const NORM_FLOOR: f64 = 1e-12;
const CHAIN_FLOOR: f64 = 1e-8;
const LN_EPS: f64 = 1e-5;

/// Snapshot of one node after the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub h: Vec<f64>,
    pub x: Vec3<f64>,
    /// Node states `h⁰ … h^L` fed to the temporal aggregation.
    pub history: Vec<Vec<f64>>,
}

/// Chain factors of one layer, as evaluated during a forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Commuting mode: eigenvalues `t`, shape `[E, χ]`.
    /// General mode: factors `T`, shape `[E, χ, χ]`.
    pub chain: CTensor,
    pub unitary: Option<CTensor>,
    /// `order[i]` lists the edge ids of node `i` in aggregation order.
    pub order: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub layers: Vec<LayerTrace>,
    pub nodes: Vec<NodeState>,
    pub degenerate_edges: usize,
}

/// Per-layer geometric quantities on the tape.
struct Geo {
    /// Rows `e1, e2, e3` of every edge frame, `[E, 3, 3]`.
    edge_frame: Var,
    node_frame: Var,
    /// `(distance, node-to-edge orientation)`, `[E, 10]`.
    feat: Var,
    /// `(q_i q_j, v_i, v_j in the edge frame)`, `[E, 7]`.
    scalars: Var,
    /// Mean weights for the position update; zero on degenerate edges.
    pos_weight: Var,
    degenerate: usize,
}

pub(crate) struct Net<'a> {
    pub t: &'a Tape,
    pub p: &'a Bound,
    pub cfg: &'a ModelConfig,
}

struct Consts {
    recv: Vec<Option<usize>>,
    send: Vec<Option<usize>>,
    ones_e: Var,
    /// Adds one to the neighbour-weight sum of isolated nodes.
    isolated: Var,
    qq: Var,
    v: Var,
}

impl<'a> Net<'a> {
    fn linear(&self, x: Var, w: &str, b: Option<&str>) -> Var {
        let y = self.t.matmul(x, self.p.get(w));
        match b {
            Some(b) => self.t.add(y, self.p.get(b)),
            None => y,
        }
    }

    fn mlp(&self, prefix: &str, x: Var) -> Var {
        let mut h = x;
        for k in 0..3 {
            h = self.linear(h, &format!("{prefix}.{k}.w"), Some(&format!("{prefix}.{k}.b")));
            if k < 2 {
                h = self.t.tanh(h);
            }
        }
        h
    }

    fn cparam(&self, name: &str) -> CVar {
        CVar { re: self.p.get(&format!("{name}.re")), im: self.p.get(&format!("{name}.im")) }
    }

    /// Lift each invariant scalar onto the unit circle and mix linearly to
    /// `2d` reals (real parts first, then imaginary parts).
    pub fn feature_map(&self, inputs: Var) -> Var {
        let t = self.t;
        let ang = t.scale(t.tanh(inputs), FRAC_PI_2);
        let lifted = t.concat_last(&[t.cos(ang), t.sin(ang)]);
        self.linear(lifted, "embed.w", None)
    }

    fn geometry(&self, x: Var, b: &Batch, c: &Consts) -> Geo {
        let t = self.t;
        let (n, e) = (b.n_nodes, b.n_edges());
        let xi = t.gather_rows(x, &c.recv);
        let xj = t.gather_rows(x, &c.send);
        let diff = t.sub(xi, xj);
        let dist = t.reshape(t.norm_last(diff, NORM_FLOOR), &[e, 1]);
        let e1 = t.div(diff, dist);
        let normal = t.cross(xi, xj);
        let nn = t.reshape(t.norm_last(normal, NORM_FLOOR), &[e, 1]);
        let e2 = t.div(normal, nn);
        let e3 = t.cross(e1, e2);
        let edge_frame = t.reshape(t.concat_last(&[e1, e2, e3]), &[e, 3, 3]);

        // Node frame around the inverse-distance-weighted neighbourhood centre.
        let w = t.div(c.ones_e, dist);
        let num = t.scatter_add_rows(t.mul(xj, w), &b.recv, n);
        let den = t.add(t.scatter_add_rows(w, &b.recv, n), c.isolated);
        let center = t.div(num, den);
        let a = t.sub(x, center);
        let a = t.div(a, t.reshape(t.norm_last(a, NORM_FLOOR), &[n, 1]));
        let bn = t.cross(x, center);
        let bn = t.div(bn, t.reshape(t.norm_last(bn, NORM_FLOOR), &[n, 1]));
        let cn = t.cross(a, bn);
        let node_flat = t.concat_last(&[a, bn, cn]);
        let node_frame = t.reshape(node_flat, &[n, 3, 3]);

        let fi = t.reshape(t.gather_rows(node_flat, &c.recv), &[e, 3, 3]);
        let orient = t.reshape(t.bmm(fi, t.permute(edge_frame, &[0, 2, 1])), &[e, 9]);
        let feat = t.concat_last(&[dist, orient]);

        let vi = t.reshape(t.gather_rows(c.v, &c.recv), &[e, 3, 1]);
        let vj = t.reshape(t.gather_rows(c.v, &c.send), &[e, 3, 1]);
        let svi = t.reshape(t.bmm(edge_frame, vi), &[e, 3]);
        let svj = t.reshape(t.bmm(edge_frame, vj), &[e, 3]);
        let scalars = t.concat_last(&[c.qq, svi, svj]);

        // Drop edges whose frame is numerically meaningless from the mean.
        let (valid, degenerate) = {
            let (dv, nv) = (t.value(dist), t.value(nn));
            let valid: Vec<bool> = dv.data().iter().zip(nv.data()).map(|(d, m)| *d > DEGENERACY_EPS && *m > DEGENERACY_EPS).collect();
            let bad = valid.iter().filter(|v| !**v).count();
            (valid, bad)
        };
        let mut counts = vec![0usize; n];
        for (k, &ok) in valid.iter().enumerate() {
            if ok {
                counts[b.recv[k]] += 1;
            }
        }
        let weights: Vec<f64> =
            valid.iter().enumerate().map(|(k, &ok)| if ok { 1.0 / counts[b.recv[k]] as f64 } else { 0.0 }).collect();
        let pos_weight = t.constant(RTensor::new(vec![e, 1], weights).unwrap());
        Geo { edge_frame, node_frame, feat, scalars, pos_weight, degenerate }
    }

    fn position_update(&self, x: Var, m: Var, w: &str, g: &Geo, b: &Batch) -> Var {
        let t = self.t;
        let e = b.n_edges();
        let coef = t.reshape(t.matmul(m, self.p.get(w)), &[e, 1, 3]);
        let vecs = t.reshape(t.bmm(coef, g.edge_frame), &[e, 3]);
        let shift = t.scatter_add_rows(t.mul(vecs, g.pos_weight), &b.recv, b.n_nodes);
        t.add(x, shift)
    }

    /// Matrix-product aggregation. `phi` is `[N, d]`, `hyper` the raw
    /// hypernet output per edge, `slots[k][i]` the `k`-th edge of node `i`.
    pub fn spatial(
        &self,
        l: usize,
        phi: CVar,
        hyper: Var,
        send: &[Option<usize>],
        slots: &[Vec<Option<usize>>],
        n: usize,
    ) -> (CVar, CVar, Option<CVar>) {
        let t = self.t;
        let cfg = self.cfg;
        let (d, chi, sig) = (cfg.d, cfg.chi, cfg.sigma);
        let e = send.len();
        let p = format!("layer{l}");

        let phibar = match cfg.scalar_mode {
            ScalarMode::Real => phi,
            ScalarMode::Complex => t.cconj(phi),
        };
        // c^σ = Σ_ab φ^a G^σ_ab φ̄^b, one per node.
        let g = t.creshape(t.cpermute(self.cparam(&format!("{p}.G")), &[2, 0, 1]), &[d, sig * d]);
        let y = t.creshape(t.cmatmul(phibar, g), &[n, sig, d]);
        let prod = t.cmul(y, t.creshape(phi, &[n, 1, d]));
        let c = CVar { re: t.sum_last(prod.re), im: t.sum_last(prod.im) };
        let ce = t.creshape(t.cgather(c, send), &[e, sig, 1]);

        let half = cfg.hyper_outputs() / 2;
        let coeff = CVar { re: t.slice_last(hyper, 0, half), im: t.slice_last(hyper, half, half) };
        let inner = match cfg.kernel_mode {
            KernelMode::Commuting => chi,
            KernelMode::General => chi * chi,
        };
        let coeff = t.creshape(coeff, &[e, sig, inner]);
        let mixed = t.cpermute(t.cmul(ce, coeff), &[0, 2, 1]);
        let chain = CVar { re: t.sum_last(mixed.re), im: t.sum_last(mixed.im) };
        let nrm = t.reshape(t.norm_last(t.concat_last(&[chain.re, chain.im]), CHAIN_FLOOR), &[e, 1]);
        let chain = CVar { re: t.div(chain.re, nrm), im: t.div(chain.im, nrm) };

        let s = t.creshape(self.cparam(&format!("{p}.S")), &[chi * chi, d * d]);
        let (h, unitary) = match cfg.kernel_mode {
            KernelMode::Commuting => {
                let missing = missing_mask(slots, n, &[n, 1], 1);
                let mut acc: Option<CVar> = None;
                for (k, slot) in slots.iter().enumerate() {
                    let mut f = t.cgather(chain, slot);
                    if let Some(m) = &missing[k] {
                        f.re = t.add(f.re, t.constant(m.clone()));
                    }
                    acc = Some(match acc {
                        None => f,
                        Some(a) => t.cmul(a, f),
                    });
                }
                let prod = acc.unwrap_or_else(|| t.cconst(RTensor::filled(&[n, chi], 1.0), RTensor::zeros(&[n, chi])));
                let u = t.cayley(self.p.get(&format!("{p}.U.raw"))).expect("raw unitary shape is checked at load");
                let u = CVar { re: t.index0(u, 0), im: t.index0(u, 1) };
                // Fold U into S: S'[k, ab] = Σ_mn U_mk conj(U_nk) S_mn,ab.
                let ut = t.cpermute(u, &[1, 0]);
                let w = t.cmul(t.creshape(ut, &[chi, chi, 1]), t.creshape(t.cconj(ut), &[chi, 1, chi]));
                let folded = t.cmatmul(t.creshape(w, &[chi, chi * chi]), s);
                (t.cmatmul(prod, folded), Some(u))
            }
            KernelMode::General => {
                let chain = t.creshape(chain, &[e, chi, chi]);
                let missing = missing_mask(slots, n, &[n, chi, chi], chi);
                let mut acc: Option<CVar> = None;
                for (k, slot) in slots.iter().enumerate() {
                    let mut f = t.cgather(chain, slot);
                    if let Some(m) = &missing[k] {
                        f.re = t.add(f.re, t.constant(m.clone()));
                    }
                    acc = Some(match acc {
                        None => f,
                        Some(a) => t.cbmm(a, f),
                    });
                }
                let r = acc.unwrap_or_else(|| {
                    let eye = RTensor::from_fn(&[n, chi, chi], |ix| if ix[1] == ix[2] { 1.0 } else { 0.0 });
                    t.cconst(eye, RTensor::zeros(&[n, chi, chi]))
                });
                (t.cmatmul(t.creshape(r, &[n, chi * chi]), s), None)
            }
        };
        let h = t.creshape(h, &[n, d, d]);
        let out = t.creshape(t.cbmm(h, t.creshape(phi, &[n, d, 1])), &[n, d]);
        (out, chain, unitary)
    }

    fn baseline(&self, l: usize, h: Var, hyper_in: Var, c: &Consts, b: &Batch) -> Var {
        let t = self.t;
        let gate = self.mlp(&format!("layer{l}.gate"), hyper_in);
        let pair = t.concat_last(&[t.gather_rows(h, &c.recv), t.gather_rows(h, &c.send)]);
        let mixed = self.linear(pair, &format!("layer{l}.mix.w"), Some(&format!("layer{l}.mix.b")));
        t.scatter_add_rows(t.mul(gate, mixed), &b.recv, b.n_nodes)
    }

    fn node_update(&self, l: usize, h_new: Var, h_prev: Var) -> Var {
        let t = self.t;
        let p = format!("layer{l}");
        let ln = t.layer_norm(h_new, LN_EPS);
        let ln = t.add(t.mul(ln, self.p.get(&format!("{p}.ln.gamma"))), self.p.get(&format!("{p}.ln.beta")));
        t.add(ln, t.matmul(h_prev, self.p.get(&format!("{p}.res.w"))))
    }

    /// Residual matrix-product recurrence over the layer history.
    pub fn temporal(&self, h0: Var, history: &[Var]) -> Var {
        let t = self.t;
        let (ct, w) = (self.cfg.chi_t, self.cfg.width());
        let n = t.shape(h0)[0];
        let mut v = t.matmul(h0, self.p.get("temporal.v0.w"));
        for (l, &x) in history.iter().enumerate() {
            let phi = t.reshape(t.permute(self.p.get(&format!("temporal.layer{l}.phi")), &[1, 0, 2]), &[w, ct * ct]);
            let m = t.matmul(x, phi);
            let z = t.reshape(t.norm_last(m, CHAIN_FLOOR), &[n, 1]);
            let m = t.reshape(t.div(m, z), &[n, ct, ct]);
            let pre = t.reshape(t.bmm(t.reshape(v, &[n, 1, ct]), m), &[n, ct]);
            let pre = t.add(pre, self.p.get(&format!("temporal.layer{l}.b")));
            v = t.add(v, t.tanh(pre));
        }
        v
    }

    fn consts(&self, b: &Batch) -> Consts {
        let t = self.t;
        let (n, e) = (b.n_nodes, b.n_edges());
        let isolated = (0..n).map(|i| if b.neighbors[i].is_empty() { 1.0 } else { 0.0 }).collect();
        let qq = (0..e).map(|k| b.charges[b.recv[k]] * b.charges[b.send[k]]).collect();
        let v = b.velocities.iter().flat_map(|v| v.iter().copied()).collect();
        Consts {
            recv: b.recv.iter().map(|&i| Some(i)).collect(),
            send: b.send.iter().map(|&i| Some(i)).collect(),
            ones_e: t.constant(RTensor::filled(&[e, 1], 1.0)),
            isolated: t.constant(RTensor::new(vec![n, 1], isolated).unwrap()),
            qq: t.constant(RTensor::new(vec![e, 1], qq).unwrap()),
            v: t.constant(RTensor::new(vec![n, 3], v).unwrap()),
        }
    }

    /// Full forward pass; returns predicted positions `[N, 3]` in the
    /// original (uncentred) coordinates.
    pub fn forward(&self, b: &Batch, mut trace: Option<&mut Trace>) -> Result<Var> {
        let t = self.t;
        let cfg = self.cfg;
        let (n, e) = (b.n_nodes, b.n_edges());
        if e == 0 {
            return Err(Error::Argument("graph batch has no edges".into()));
        }
        let c = self.consts(b);
        let xs: Vec<f64> = b.positions.iter().flat_map(|p| p.iter().copied()).collect();
        let mut x = t.constant(RTensor::new(vec![n, 3], xs).unwrap());

        let geo0 = self.geometry(x, b, &c);
        let speed = t.reshape(t.norm_last(c.v, 0.0), &[n, 1]);
        let q = t.constant(RTensor::new(vec![n, 1], b.charges.clone()).unwrap());
        let vn = t.reshape(t.bmm(geo0.node_frame, t.reshape(c.v, &[n, 3, 1])), &[n, 3]);
        let h0 = self.feature_map(t.concat_last(&[q, speed, vn]));

        let mut h = h0;
        let mut history = Vec::with_capacity(cfg.layers);
        let mut degenerate = 0;
        let mut geo = geo0;
        for l in 0..cfg.layers {
            if l > 0 {
                geo = self.geometry(x, b, &c);
            }
            degenerate += geo.degenerate;
            let pre = t.concat_last(&[geo.scalars, t.gather_rows(h, &c.recv), t.gather_rows(h, &c.send), geo.feat]);
            let m = self.mlp(&format!("layer{l}.msg"), pre);
            let hyper_in = t.concat_last(&[geo.feat, m]);
            let agg = match cfg.variant {
                Variant::Spatea => {
                    let hyper = self.mlp(&format!("layer{l}.hyper"), hyper_in);
                    let phi = CVar { re: t.slice_last(h, 0, cfg.d), im: t.slice_last(h, cfg.d, cfg.d) };
                    let order = aggregation_order(t, x, b);
                    let slots = slots_from_order(&order, b.max_degree);
                    let (xn, chain, u) = self.spatial(l, phi, hyper, &c.send, &slots, n);
                    if let Some(tr) = trace.as_deref_mut() {
                        let chain = CTensor::from_re_im(&t.value(chain.re), &t.value(chain.im))?;
                        let unitary = match u {
                            Some(u) => Some(CTensor::from_re_im(&t.value(u.re), &t.value(u.im))?),
                            None => None,
                        };
                        tr.layers.push(LayerTrace { chain, unitary, order });
                    }
                    t.concat_last(&[xn.re, xn.im])
                }
                Variant::Baseline => self.baseline(l, h, hyper_in, &c, b),
            };
            let h_next = self.node_update(l, agg, h);
            x = self.position_update(x, m, &format!("layer{l}.pos.w"), &geo, b);
            history.push(h_next);
            h = h_next;
        }

        let v = self.temporal(h0, &history);
        let geo = self.geometry(x, b, &c);
        degenerate += geo.degenerate;
        let pre = t.concat_last(&[geo.scalars, t.gather_rows(v, &c.recv), t.gather_rows(v, &c.send), geo.feat]);
        let m = self.mlp("out.msg", pre);
        let x_out = self.position_update(x, m, "out.pos.w", &geo, b);
        if degenerate > 0 {
            DEGENERATE_EDGES.fetch_add(degenerate, Ordering::Relaxed);
            log::debug!("{degenerate} degenerate edge frames skipped");
        }

        if let Some(tr) = trace {
            tr.degenerate_edges = degenerate;
            let (hv, xv) = (t.value(h), t.value(x_out));
            let hist: Vec<RTensor> = std::iter::once(h0).chain(history.iter().copied()).map(|v| t.value(v).clone()).collect();
            let w = cfg.width();
            tr.nodes = (0..n)
                .map(|i| NodeState {
                    h: hv.data()[i * w..(i + 1) * w].to_vec(),
                    x: [0, 1, 2].map(|k| xv.data()[i * 3 + k] + b.centers[i][k]),
                    history: hist.iter().map(|hh| hh.data()[i * w..(i + 1) * w].to_vec()).collect(),
                })
                .collect();
        }
        let centers: Vec<f64> = b.centers.iter().flat_map(|c| c.iter().copied()).collect();
        Ok(t.add(x_out, t.constant(RTensor::new(vec![n, 3], centers).unwrap())))
    }
}

/// Per node, edge ids sorted by distance with the deterministic tie-break.
fn aggregation_order(t: &Tape, x: Var, b: &Batch) -> Vec<Vec<usize>> {
    let xv = t.value(x);
    let pos: Vec<Vec3<f64>> = xv.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    (0..b.n_nodes)
        .map(|i| order_neighbors(i, &pos, &b.neighbors[i]).order.iter().map(|&j| b.edge_id(i, j)).collect())
        .collect()
}

fn slots_from_order(order: &[Vec<usize>], max_degree: usize) -> Vec<Vec<Option<usize>>> {
    (0..max_degree).map(|k| order.iter().map(|o| o.get(k).copied()).collect()).collect()
}

/// For each slot, an identity block (scaled into `shape`) on nodes with no
/// `k`-th neighbour, or `None` when every node has one.
fn missing_mask(slots: &[Vec<Option<usize>>], n: usize, shape: &[usize], chi: usize) -> Vec<Option<RTensor>> {
    slots
        .iter()
        .map(|slot| {
            if slot.iter().all(|s| s.is_some()) {
                return None;
            }
            let block = shape[1..].iter().product::<usize>();
            let mut data = vec![0.0; n * block];
            for (i, s) in slot.iter().enumerate() {
                if s.is_none() {
                    if shape.len() == 2 {
                        data[i * block..(i + 1) * block].fill(1.0);
                    } else {
                        for k in 0..chi {
                            data[i * block + k * chi + k] = 1.0;
                        }
                    }
                }
            }
            Some(RTensor::new(shape.to_vec(), data).unwrap())
        })
        .collect()
}

/// A model configuration with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

/// Summed squared error and gradients for one batch.
#[derive(Clone, Debug)]
pub struct BatchGrad {
    pub sse: f64,
    /// Number of scalar targets (3 per node).
    pub count: usize,
    pub grads: BTreeMap<String, RTensor>,
}

impl Model {
    pub fn new(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        Ok(Model { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, seed);
        Ok(Model { config, params })
    }

    pub fn forward(&self, g: &Graph) -> Result<Vec<Vec3<f64>>> {
        Ok(self.forward_batch(&[g])?.pop().unwrap())
    }

    pub fn forward_batch(&self, graphs: &[&Graph]) -> Result<Vec<Vec<Vec3<f64>>>> {
        let b = Batch::new(graphs)?;
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let net = Net { t: &tape, p: &bound, cfg: &self.config };
        let out = net.forward(&b, None)?;
        let v = tape.value(out);
        let rows: Vec<Vec3<f64>> = v.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(b.graphs.iter().map(|r| rows[r.clone()].to_vec()).collect())
    }

    /// Forward pass that also records chain factors and node states.
    pub fn trace(&self, g: &Graph) -> Result<(Vec<Vec3<f64>>, Trace)> {
        let b = Batch::new(&[g])?;
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let net = Net { t: &tape, p: &bound, cfg: &self.config };
        let mut tr = Trace { layers: vec![], nodes: vec![], degenerate_edges: 0 };
        let out = net.forward(&b, Some(&mut tr))?;
        let rows = tape.value(out).data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok((rows, tr))
    }

    /// Squared error against `targets` and its gradient for every parameter.
    pub fn loss_and_grad(&self, graphs: &[&Graph], targets: &[&[Vec3<f64>]]) -> Result<BatchGrad> {
        let b = Batch::new(graphs)?;
        let tgt: Vec<f64> = targets.iter().flat_map(|t| t.iter().flat_map(|p| p.iter().copied())).collect();
        if tgt.len() != 3 * b.n_nodes {
            return Err(Error::Dimension(format!("{} target coordinates for {} nodes", tgt.len(), b.n_nodes)));
        }
        let tape = Tape::new();
        let bound = self.params.bind(&tape, true);
        let net = Net { t: &tape, p: &bound, cfg: &self.config };
        let out = net.forward(&b, None)?;
        let diff = tape.sub(out, tape.constant(RTensor::new(vec![b.n_nodes, 3], tgt).unwrap()));
        let sse = tape.sum_all(tape.mul(diff, diff));
        let grads = tape.backward(sse)?;
        let grads = bound
            .iter()
            .map(|(name, &v)| (name.clone(), grads.get_or_zeros(v, &tape.shape(v))))
            .collect();
        let sse = tape.value(sse).item();
        Ok(BatchGrad { sse, count: 3 * b.n_nodes, grads })
    }

    /// Mean squared error of the predictions.
    pub fn mse(&self, graphs: &[&Graph], targets: &[&[Vec3<f64>]]) -> Result<f64> {
        let pred = self.forward_batch(graphs)?;
        let (mut s, mut k) = (0.0, 0usize);
        for (p, t) in pred.iter().zip(targets) {
            for (a, b) in p.iter().zip(t.iter()) {
                for c in 0..3 {
                    s += (a[c] - b[c]).powi(2);
                    k += 1;
                }
            }
        }
        Ok(s / k as f64)
    }
}

/// Scalar loss of a model on a tape, for finite-difference checks: the
/// parameters are supplied as tape variables in name order.
pub fn tape_loss(tape: &Tape, cfg: &ModelConfig, names: &[String], vars: &[Var], g: &Graph, target: &[Vec3<f64>]) -> Result<Var> {
    let bound = Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()));
    let b = Batch::new(&[g])?;
    let net = Net { t: tape, p: &bound, cfg };
    let out = net.forward(&b, None)?;
    let tgt: Vec<f64> = target.iter().flat_map(|p| p.iter().copied()).collect();
    let diff = tape.sub(out, tape.constant(RTensor::new(vec![b.n_nodes, 3], tgt)?));
    Ok(tape.sum_all(tape.mul(diff, diff)))
}
