//! Reverse-mode differentiation over batched row-major matrices.
//!
//! Nodes are `B×n` arrays. Layer-level operations (dense, GRU) carry
//! hand-derived backward rules; the tape only records the order of
//! evaluation and routes upstream gradients to parents and parameters.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};

use super::layers::{DenseLayer, GruCache, GruCell, GruMasks};
use super::params::{Grads, ParamStore};
use crate::error::{shape, Result};
use crate::gaussians::{kl_diag_row, rank1_nll_row};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Input,
    Dense {
        x: NodeId,
        layer: DenseLayer,
    },
    Gru {
        x: NodeId,
        h: NodeId,
        cell: GruCell,
        masks: Option<Rc<GruMasks>>,
        cache: GruCache,
    },
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Exp(NodeId),
    /// `mean + std ⊙ eps` with constant noise.
    Reparam {
        mean: NodeId,
        std: NodeId,
        eps: Array2<f64>,
    },
    /// Row-wise closed-form KL between diagonal Gaussians, shape `B×1`.
    KlDiag {
        q_mean: NodeId,
        q_std: NodeId,
        p_mean: NodeId,
        p_std: NodeId,
    },
    /// Row-wise negative log-density of `target` under
    /// `N(mean, diag(std²) + u uᵀ)`, shape `B×1`.
    GaussNll {
        target: Array2<f64>,
        mean: NodeId,
        std: NodeId,
        perturb: Option<NodeId>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
pub struct Gradients {
    pub params: Grads,
    nodes: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the seeded objective with respect to a node, if any
    /// path reached it.
    pub fn node(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.nodes[id.0].as_ref()
    }
}

fn same_shape(what: &str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> NodeId {
        self.input(Array2::zeros((rows, cols)))
    }

    pub fn dense(&mut self, store: &ParamStore, layer: &DenseLayer, x: NodeId) -> Result<NodeId> {
        let y = layer.forward(store, self.value(x).view())?;
        Ok(self.push(y, Op::Dense { x, layer: *layer }))
    }

    pub fn mlp(
        &mut self,
        store: &ParamStore,
        mlp: &super::layers::Mlp,
        x: NodeId,
    ) -> Result<NodeId> {
        let mut h = x;
        for layer in &mlp.layers {
            h = self.dense(store, layer, h)?;
        }
        Ok(h)
    }

    pub fn gru(
        &mut self,
        store: &ParamStore,
        cell: &GruCell,
        x: NodeId,
        h: NodeId,
        masks: Option<Rc<GruMasks>>,
    ) -> Result<NodeId> {
        let (out, cache) = cell.forward_cached(
            store,
            self.value(x).view(),
            self.value(h).view(),
            masks.as_deref(),
        )?;
        Ok(self.push(
            out,
            Op::Gru {
                x,
                h,
                cell: *cell,
                masks,
                cache,
            },
        ))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).map_err(|e| shape(e.to_string()))?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start + len > v.ncols() {
            return Err(shape(format!(
                "slice {start}..{} out of {} columns",
                start + len,
                v.ncols()
            )));
        }
        let value = v.slice(s![.., start..start + len]).to_owned();
        Ok(self.push(value, Op::Slice { x, start }))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(f64::exp);
        self.push(value, Op::Exp(x))
    }

    pub fn reparam(&mut self, mean: NodeId, std: NodeId, eps: Array2<f64>) -> Result<NodeId> {
        same_shape("reparam mean/std", self.value(mean), self.value(std))?;
        same_shape("reparam mean/eps", self.value(mean), &eps)?;
        let mut value = self.value(std) * &eps;
        value += self.value(mean);
        Ok(self.push(value, Op::Reparam { mean, std, eps }))
    }

    pub fn kl_diag(
        &mut self,
        q_mean: NodeId,
        q_std: NodeId,
        p_mean: NodeId,
        p_std: NodeId,
    ) -> Result<NodeId> {
        let (qm, qs, pm, ps) = (
            self.value(q_mean),
            self.value(q_std),
            self.value(p_mean),
            self.value(p_std),
        );
        same_shape("kl q mean/std", qm, qs)?;
        same_shape("kl q/p mean", qm, pm)?;
        same_shape("kl p mean/std", pm, ps)?;
        let mut value = Array2::zeros((qm.nrows(), 1));
        for b in 0..qm.nrows() {
            value[[b, 0]] = kl_diag_row(
                qm.row(b).as_slice().expect("contiguous"),
                qs.row(b).as_slice().expect("contiguous"),
                pm.row(b).as_slice().expect("contiguous"),
                ps.row(b).as_slice().expect("contiguous"),
            );
        }
        Ok(self.push(
            value,
            Op::KlDiag {
                q_mean,
                q_std,
                p_mean,
                p_std,
            },
        ))
    }

    pub fn gauss_nll(
        &mut self,
        target: Array2<f64>,
        mean: NodeId,
        std: NodeId,
        perturb: Option<NodeId>,
    ) -> Result<NodeId> {
        let (m, sd) = (self.value(mean), self.value(std));
        same_shape("nll target/mean", &target, m)?;
        same_shape("nll mean/std", m, sd)?;
        let zeros;
        let u = match perturb {
            Some(p) => {
                same_shape("nll mean/perturb", m, self.value(p))?;
                self.value(p)
            }
            None => {
                zeros = Array2::zeros(m.raw_dim());
                &zeros
            }
        };
        let mut value = Array2::zeros((m.nrows(), 1));
        for b in 0..m.nrows() {
            value[[b, 0]] = rank1_nll_row(
                target.row(b).as_slice().expect("contiguous"),
                m.row(b).as_slice().expect("contiguous"),
                sd.row(b).as_slice().expect("contiguous"),
                u.row(b).as_slice().expect("contiguous"),
            );
        }
        Ok(self.push(
            value,
            Op::GaussNll {
                target,
                mean,
                std,
                perturb,
            },
        ))
    }

    /// Reverse sweep. Each `(node, weight)` seed contributes
    /// `weight * Σ node` to the objective being differentiated.
    pub fn backward(&self, store: &ParamStore, seeds: &[(NodeId, f64)]) -> Gradients {
        let mut params = store.zero_grads();
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);

        fn accumulate(grads: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
            match &mut grads[id.0] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for &(id, w) in seeds {
            let g = Array2::from_elem(self.value(id).raw_dim(), w);
            accumulate(&mut grads, id, g);
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Dense { x, layer } => {
                    let dx = layer.backward(store, self.value(*x), &node.value, &g, &mut params);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gru {
                    x,
                    h,
                    cell,
                    masks,
                    cache,
                } => {
                    let (dx, dh) = cell.backward(
                        store,
                        self.value(*x),
                        self.value(*h),
                        masks.as_deref(),
                        cache,
                        &g,
                        &mut params,
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *h, dh);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., start..start + n]).to_owned());
                        start += n;
                    }
                }
                Op::Slice { x, start } => {
                    let src = self.value(*x);
                    let mut full = Array2::zeros(src.raw_dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *x, full);
                }
                Op::Exp(x) => {
                    let dx = &g * &node.value;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Reparam { mean, std, eps } => {
                    let dstd = &g * eps;
                    accumulate(&mut grads, *mean, g.clone());
                    accumulate(&mut grads, *std, dstd);
                }
                Op::KlDiag {
                    q_mean,
                    q_std,
                    p_mean,
                    p_std,
                } => {
                    let (qm, qs, pm, ps) = (
                        self.value(*q_mean),
                        self.value(*q_std),
                        self.value(*p_mean),
                        self.value(*p_std),
                    );
                    let mut dqm = Array2::zeros(qm.raw_dim());
                    let mut dqs = Array2::zeros(qm.raw_dim());
                    let mut dpm = Array2::zeros(qm.raw_dim());
                    let mut dps = Array2::zeros(qm.raw_dim());
                    for b in 0..qm.nrows() {
                        let w = g[[b, 0]];
                        for k in 0..qm.ncols() {
                            let (mq, sq, mp, sp) =
                                (qm[[b, k]], qs[[b, k]], pm[[b, k]], ps[[b, k]]);
                            let vp = sp * sp;
                            let diff = mq - mp;
                            dqm[[b, k]] = w * diff / vp;
                            dpm[[b, k]] = -w * diff / vp;
                            dqs[[b, k]] = w * (sq / vp - 1.0 / sq);
                            dps[[b, k]] = w * (1.0 / sp - (sq * sq + diff * diff) / (vp * sp));
                        }
                    }
                    accumulate(&mut grads, *q_mean, dqm);
                    accumulate(&mut grads, *q_std, dqs);
                    accumulate(&mut grads, *p_mean, dpm);
                    accumulate(&mut grads, *p_std, dps);
                }
                Op::GaussNll {
                    target,
                    mean,
                    std,
                    perturb,
                } => {
                    let (dm, ds, du) = self.gauss_nll_backward(target, *mean, *std, *perturb, &g);
                    accumulate(&mut grads, *mean, dm);
                    accumulate(&mut grads, *std, ds);
                    if let Some(p) = perturb {
                        accumulate(&mut grads, *p, du);
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Gradients {
            params,
            nodes: grads,
        }
    }

    fn gauss_nll_backward(
        &self,
        target: &Array2<f64>,
        mean: NodeId,
        std: NodeId,
        perturb: Option<NodeId>,
        g: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let m = self.value(mean);
        let sd = self.value(std);
        let zeros;
        let u = match perturb {
            Some(p) => self.value(p),
            None => {
                zeros = Array2::zeros(m.raw_dim());
                &zeros
            }
        };
        let mut dm = Array2::zeros(m.raw_dim());
        let mut ds = Array2::zeros(m.raw_dim());
        let mut du = Array2::zeros(m.raw_dim());
        let d = m.ncols();
        let mut gvec = vec![0.0; d];
        for b in 0..m.nrows() {
            let w = g[[b, 0]];
            // C = D + u uᵀ, D = diag(s²). With p = uᵀD⁻¹e and c = 1 + uᵀD⁻¹u,
            // C⁻¹e = D⁻¹(e - (p/c) u).
            let mut c = 1.0;
            let mut p = 0.0;
            for i in 0..d {
                let v = sd[[b, i]] * sd[[b, i]];
                let e = target[[b, i]] - m[[b, i]];
                c += u[[b, i]] * u[[b, i]] / v;
                p += e * u[[b, i]] / v;
            }
            let mut gu = 0.0;
            for i in 0..d {
                let v = sd[[b, i]] * sd[[b, i]];
                let e = target[[b, i]] - m[[b, i]];
                gvec[i] = (e - p / c * u[[b, i]]) / v;
                gu += gvec[i] * u[[b, i]];
            }
            for i in 0..d {
                let s_i = sd[[b, i]];
                let v = s_i * s_i;
                let ui = u[[b, i]];
                let cinv_ii = 1.0 / v - (ui / v) * (ui / v) / c;
                dm[[b, i]] = -w * gvec[i];
                ds[[b, i]] = w * s_i * (cinv_ii - gvec[i] * gvec[i]);
                du[[b, i]] = w * (ui / (v * c) - gvec[i] * gu);
            }
        }
        (dm, ds, du)
    }
}

/// Sum of all entries of the given nodes, weighted.
pub fn weighted_sum(tape: &Tape, seeds: &[(NodeId, f64)]) -> f64 {
    seeds.iter().map(|&(id, w)| w * tape.value(id).sum()).sum()
}
