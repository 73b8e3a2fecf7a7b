//! Minimal reverse-mode tape over f64 vectors.
//!
//! Forward calls build a node list; `backward` walks it in reverse and
//! accumulates parameter gradients straight into the [`ParameterStore`]
//! gradient buffers. Matrix parameters enter only as the left side of
//! `matvec`; everything else on the tape is a vector.

use super::store::{ParamId, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param { id: ParamId },
    EmbedRow { id: ParamId, row: usize },
    MatVec { w: usize, x: usize },
    Add { a: usize, b: usize },
    AddN { parts: Vec<usize> },
    Mul { a: usize, b: usize },
    /// value = k * a + c elementwise; c is constant so only k enters backward.
    Affine { a: usize, k: f64 },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Exp { a: usize },
    Concat { a: usize, b: usize },
    Slice { a: usize, start: usize },
    Dot { a: usize, b: usize },
    Stack { parts: Vec<usize> },
    Softmax { a: usize },
    WeightedCombine { weights: usize, items: Vec<usize> },
    /// Mean NLL of `targets` under softmax(logits); softmax cached for backward.
    SoftmaxXent { logits: usize, probs: Vec<f64>, targets: Vec<usize> },
    /// Closed-form KL(q || p) between diagonal Gaussians, summed over dims.
    GaussKl { mu_p: usize, lv_p: usize, mu_q: usize, lv_q: usize },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, n: NodeId) -> &[f64] {
        &self.nodes[n.0].value
    }

    pub fn scalar_value(&self, n: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[n.0].value.len(), 1);
        self.nodes[n.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, v: &[f64]) -> NodeId {
        self.push(v.to_vec(), Op::Input)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(vec![v], Op::Input)
    }

    /// Matrix parameter handle; value stays in the store, usable only as the
    /// left operand of [`Tape::matvec`].
    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Vec::new(), Op::Param { id })
    }

    /// One row of a parameter: embedding lookup, or a (1 x n) bias.
    pub fn embed(&mut self, store: &ParameterStore, id: ParamId, row: usize) -> NodeId {
        let v = store.value(id).row(row).to_vec();
        self.push(v, Op::EmbedRow { id, row })
    }

    pub fn matvec(&mut self, store: &ParameterStore, w: NodeId, x: NodeId) -> NodeId {
        let pid = match self.nodes[w.0].op {
            Op::Param { id } => id,
            _ => panic!("matvec left operand must be a param node"),
        };
        let m = store.value(pid);
        debug_assert_eq!(m.cols(), self.nodes[x.0].value.len(), "matvec dims");
        let mut out = vec![0.0; m.rows()];
        m.matvec(&self.nodes[x.0].value, &mut out);
        self.push(out, Op::MatVec { w: w.0, x: x.0 })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(v, Op::Add { a: a.0, b: b.0 })
    }

    pub fn add_n(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let len = self.nodes[parts[0].0].value.len();
        let mut v = vec![0.0; len];
        for p in parts {
            debug_assert_eq!(self.nodes[p.0].value.len(), len);
            for (o, x) in v.iter_mut().zip(&self.nodes[p.0].value) {
                *o += x;
            }
        }
        self.push(v, Op::AddN { parts: parts.iter().map(|p| p.0).collect() })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(v, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn affine(&mut self, a: NodeId, k: f64, c: f64) -> NodeId {
        let v = self.nodes[a.0].value.iter().map(|x| k * x + c).collect();
        self.push(v, Op::Affine { a: a.0, k })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(v, Op::Sigmoid { a: a.0 })
    }

    pub fn tanh_of(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh { a: a.0 })
    }

    pub fn exp_of(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        self.push(v, Op::Exp { a: a.0 })
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.nodes[a.0].value.clone();
        v.extend_from_slice(&self.nodes[b.0].value);
        self.push(v, Op::Concat { a: a.0, b: b.0 })
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[a.0].value[start..start + len].to_vec();
        self.push(v, Op::Slice { a: a.0, start })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        let v: f64 = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(vec![v], Op::Dot { a: a.0, b: b.0 })
    }

    /// Stack length-1 nodes into one vector.
    pub fn stack(&mut self, parts: &[NodeId]) -> NodeId {
        let v = parts
            .iter()
            .map(|p| {
                debug_assert_eq!(self.nodes[p.0].value.len(), 1);
                self.nodes[p.0].value[0]
            })
            .collect();
        self.push(v, Op::Stack { parts: parts.iter().map(|p| p.0).collect() })
    }

    pub fn softmax_node(&mut self, a: NodeId) -> NodeId {
        let v = softmax(&self.nodes[a.0].value);
        self.push(v, Op::Softmax { a: a.0 })
    }

    /// sum_k weights[k] * items[k]; items are equal-length vectors.
    pub fn weighted_combine(&mut self, weights: NodeId, items: &[NodeId]) -> NodeId {
        let k = self.nodes[weights.0].value.len();
        debug_assert_eq!(k, items.len());
        let dim = self.nodes[items[0].0].value.len();
        let mut v = vec![0.0; dim];
        for (i, item) in items.iter().enumerate() {
            let w = self.nodes[weights.0].value[i];
            for (o, x) in v.iter_mut().zip(&self.nodes[item.0].value) {
                *o += w * x;
            }
        }
        self.push(
            v,
            Op::WeightedCombine {
                weights: weights.0,
                items: items.iter().map(|p| p.0).collect(),
            },
        )
    }

    /// Mean cross-entropy of `targets` under softmax(logits).
    pub fn softmax_xent(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        assert!(!targets.is_empty());
        let probs = softmax(&self.nodes[logits.0].value);
        let loss = targets
            .iter()
            .map(|&t| -probs[t].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / targets.len() as f64;
        self.push(
            vec![loss],
            Op::SoftmaxXent {
                logits: logits.0,
                probs,
                targets: targets.to_vec(),
            },
        )
    }

    /// Closed-form KL(N(mu_q, e^{lv_q}) || N(mu_p, e^{lv_p})), summed over dims.
    pub fn gauss_kl(&mut self, mu_p: NodeId, lv_p: NodeId, mu_q: NodeId, lv_q: NodeId) -> NodeId {
        let v = gauss_kl_value(
            &self.nodes[mu_p.0].value,
            &self.nodes[lv_p.0].value,
            &self.nodes[mu_q.0].value,
            &self.nodes[lv_q.0].value,
        );
        self.push(
            vec![v],
            Op::GaussKl {
                mu_p: mu_p.0,
                lv_p: lv_p.0,
                mu_q: mu_q.0,
                lv_q: lv_q.0,
            },
        )
    }

    /// Backpropagate from a scalar loss node, accumulating parameter
    /// gradients into the store's gradient buffers.
    pub fn backward(&mut self, store: &mut ParameterStore, loss: NodeId) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            self.backward_node(store, i, &g, &mut grads);
        }
    }

    fn backward_node(
        &self,
        store: &mut ParameterStore,
        i: usize,
        g: &[f64],
        grads: &mut [Vec<f64>],
    ) {
        match &self.nodes[i].op {
            Op::Input | Op::Param { .. } => {}
            Op::EmbedRow { id, row } => {
                let dst = store.grad_mut(*id).row_mut(*row);
                for (d, gj) in dst.iter_mut().zip(g.iter()) {
                    *d += gj;
                }
            }
            Op::MatVec { w, x } => {
                let pid = match self.nodes[*w].op {
                    Op::Param { id } => id,
                    _ => unreachable!(),
                };
                let xv = &self.nodes[*x].value;
                store.grad_mut(pid).outer_acc(g, xv);
                let m = store.value(pid);
                m.matvec_t_acc(g, &mut grads[*x]);
            }
            Op::Add { a, b } => {
                acc(&mut grads[*a], g, 1.0);
                acc(&mut grads[*b], g, 1.0);
            }
            Op::AddN { parts } => {
                for p in parts {
                    acc(&mut grads[*p], g, 1.0);
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                for (j, gj) in g.iter().enumerate() {
                    grads[*a][j] += gj * bv[j];
                    grads[*b][j] += gj * av[j];
                }
            }
            Op::Affine { a, k } => acc(&mut grads[*a], g, *k),
            Op::Sigmoid { a } => {
                let y = &self.nodes[i].value;
                for (j, gj) in g.iter().enumerate() {
                    grads[*a][j] += gj * y[j] * (1.0 - y[j]);
                }
            }
            Op::Tanh { a } => {
                let y = &self.nodes[i].value;
                for (j, gj) in g.iter().enumerate() {
                    grads[*a][j] += gj * (1.0 - y[j] * y[j]);
                }
            }
            Op::Exp { a } => {
                let y = &self.nodes[i].value;
                for (j, gj) in g.iter().enumerate() {
                    grads[*a][j] += gj * y[j];
                }
            }
            Op::Concat { a, b } => {
                let la = self.nodes[*a].value.len();
                acc(&mut grads[*a], &g[..la], 1.0);
                acc(&mut grads[*b], &g[la..], 1.0);
            }
            Op::Slice { a, start } => {
                for (j, gj) in g.iter().enumerate() {
                    grads[*a][start + j] += gj;
                }
            }
            Op::Dot { a, b } => {
                let g0 = g[0];
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                for j in 0..av.len() {
                    grads[*a][j] += g0 * bv[j];
                    grads[*b][j] += g0 * av[j];
                }
            }
            Op::Stack { parts } => {
                for (j, p) in parts.iter().enumerate() {
                    grads[*p][0] += g[j];
                }
            }
            Op::Softmax { a } => {
                let y = &self.nodes[i].value;
                let gy: f64 = g.iter().zip(y.iter()).map(|(gj, yj)| gj * yj).sum();
                for j in 0..y.len() {
                    grads[*a][j] += y[j] * (g[j] - gy);
                }
            }
            Op::WeightedCombine { weights, items } => {
                let g0 = g;
                for (k, item) in items.iter().enumerate() {
                    let iv = &self.nodes[*item].value;
                    let wk = self.nodes[*weights].value[k];
                    let mut d = 0.0;
                    for (j, gj) in g0.iter().enumerate() {
                        d += gj * iv[j];
                        grads[*item][j] += wk * gj;
                    }
                    grads[*weights][k] += d;
                }
            }
            Op::SoftmaxXent { logits, probs, targets } => {
                let g0 = g[0];
                let inv = 1.0 / targets.len() as f64;
                let gl = &mut grads[*logits];
                for (j, p) in probs.iter().enumerate() {
                    gl[j] += g0 * p;
                }
                for t in targets {
                    gl[*t] -= g0 * inv;
                }
            }
            Op::GaussKl { mu_p, lv_p, mu_q, lv_q } => {
                let g0 = g[0];
                let (mp, lp) = (&self.nodes[*mu_p].value, &self.nodes[*lv_p].value);
                let (mq, lq) = (&self.nodes[*mu_q].value, &self.nodes[*lv_q].value);
                for j in 0..mp.len() {
                    let e_neg_lp = (-lp[j]).exp();
                    let diff = mq[j] - mp[j];
                    grads[*lv_p][j] += g0 * (0.5 - 0.5 * e_neg_lp * (lq[j].exp() + diff * diff));
                    grads[*lv_q][j] += g0 * (-0.5 + 0.5 * (lq[j] - lp[j]).exp());
                    grads[*mu_p][j] += g0 * (-diff * e_neg_lp);
                    grads[*mu_q][j] += g0 * (diff * e_neg_lp);
                }
            }
        }
    }
}

fn acc(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += k * s;
    }
}

/// Closed-form KL(N(mu_q, e^{lv_q}) || N(mu_p, e^{lv_p})) summed over dims.
pub fn gauss_kl_value(mu_p: &[f64], lv_p: &[f64], mu_q: &[f64], lv_q: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..mu_p.len() {
        let diff = mu_q[j] - mu_p[j];
        total += 0.5 * (lv_p[j] - lv_q[j]) + (lv_q[j].exp() + diff * diff) * 0.5 * (-lv_p[j]).exp()
            - 0.5;
    }
    total
}
