//! Reverse-mode autodiff over [`Mat`] values.
//!
//! Forward values are computed eagerly as nodes are pushed; `backward` walks
//! the tape in reverse and accumulates gradients. The op set is exactly what
//! the two models need. Everything is f64 and single-threaded, so a fixed
//! seed reproduces training bit for bit.

use super::mat::Mat;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Cached forward quantities for the metric-learning loss backward pass.
#[derive(Debug, Clone)]
struct ProtoCache {
    protos: Mat,      // N x D
    queries: Mat,     // N x D
    proto_norms: Vec<f64>,
    query_norms: Vec<f64>,
    cos: Mat,         // N x N, cos(query_j, proto_k)
    probs: Mat,       // N x N, row softmax of scores
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRowBroadcast(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    /// Row softmax over the first `valid` columns; masked columns output 0.
    SoftmaxRowsMasked(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    Transpose(NodeId),
    AngularProtoLoss {
        emb: NodeId,
        w: NodeId,
        bias: NodeId,
        n_speakers: usize,
        m_utts: usize,
        cache: ProtoCache,
    },
    MseLoss(NodeId, Mat),
}

struct Node {
    value: Mat,
    grad: Option<Mat>,
    op: Op,
}

/// Computation tape. One tape per training step or inference call.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    /// Gradient of the loss w.r.t. node `id`; zeros if the node was unused.
    pub fn grad(&self, id: NodeId) -> Mat {
        let n = &self.nodes[id];
        n.grad
            .clone()
            .unwrap_or_else(|| Mat::zeros(n.value.rows(), n.value.cols()))
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()), "add shape");
        let mut value = va.clone();
        value.add_assign(vb);
        self.push(value, Op::Add(a, b))
    }

    /// X (T x D) + b (1 x D), b added to every row.
    pub fn add_row_broadcast(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (vx, vb) = (&self.nodes[x].value, &self.nodes[b].value);
        assert_eq!(vb.rows(), 1, "broadcast operand must be a row vector");
        assert_eq!(vx.cols(), vb.cols(), "broadcast width");
        let mut value = vx.clone();
        for r in 0..value.rows() {
            for (o, &bv) in value.row_mut(r).iter_mut().zip(vb.row(0)) {
                *o += bv;
            }
        }
        self.push(value, Op::AddRowBroadcast(x, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.nodes[a].value.map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Row-wise softmax over the first `valid` columns. Padded columns get
    /// weight exactly 0, so right-padded frames never leak into attention.
    pub fn softmax_rows_masked(&mut self, a: NodeId, valid: usize) -> NodeId {
        let va = &self.nodes[a].value;
        assert!(valid >= 1 && valid <= va.cols(), "softmax valid range");
        let mut value = Mat::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            let row = va.row(r);
            let max = row[..valid]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..valid {
                let e = (row[c] - max).exp();
                *value.at_mut(r, c) = e;
                sum += e;
            }
            for c in 0..valid {
                *value.at_mut(r, c) /= sum;
            }
        }
        self.push(value, Op::SoftmaxRowsMasked(a, valid))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let cols = self.nodes[a].value.cols();
        self.softmax_rows_masked(a, cols)
    }

    /// Per-row layer normalization with affine parameters (1 x D each).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let eps = 1e-5;
        let (vx, vg, vb) = (
            &self.nodes[x].value,
            &self.nodes[gamma].value,
            &self.nodes[beta].value,
        );
        let d = vx.cols();
        assert_eq!(vg.cols(), d, "layer_norm gamma width");
        assert_eq!(vb.cols(), d, "layer_norm beta width");
        let mut value = Mat::zeros(vx.rows(), d);
        for r in 0..vx.rows() {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                let xhat = (row[c] - mean) * inv_std;
                *value.at_mut(r, c) = vg.at(0, c) * xhat + vb.at(0, c);
            }
        }
        self.push(value, Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.rows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
        let mut value = Mat::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let vp = &self.nodes[p].value;
            assert_eq!(vp.rows(), rows, "concat_cols row count");
            for r in 0..rows {
                value.row_mut(r)[off..off + vp.cols()].copy_from_slice(vp.row(r));
            }
            off += vp.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0]].value.cols();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.rows()).sum();
        let mut value = Mat::zeros(total, cols);
        let mut off = 0;
        for &p in parts {
            let vp = &self.nodes[p].value;
            assert_eq!(vp.cols(), cols, "concat_rows col count");
            for r in 0..vp.rows() {
                value.row_mut(off + r).copy_from_slice(vp.row(r));
            }
            off += vp.rows();
        }
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = &self.nodes[a].value;
        assert!(start + len <= va.cols(), "slice_cols out of range");
        let mut value = Mat::zeros(va.rows(), len);
        for r in 0..va.rows() {
            value.row_mut(r).copy_from_slice(&va.row(r)[start..start + len]);
        }
        self.push(value, Op::SliceCols(a, start, len))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = &self.nodes[a].value;
        assert!(start + len <= va.rows(), "slice_rows out of range");
        let mut value = Mat::zeros(len, va.cols());
        for r in 0..len {
            value.row_mut(r).copy_from_slice(va.row(start + r));
        }
        self.push(value, Op::SliceRows(a, start, len))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.transpose();
        self.push(value, Op::Transpose(a))
    }

    /// Angular prototypical loss over an episodic batch.
    ///
    /// `emb` is (n_speakers * m_utts) x D, rows grouped by speaker. For each
    /// speaker the first m-1 rows form the prototype (their mean) and the last
    /// row is the query. Scores are `w * cos(query_j, proto_k) + bias`; the
    /// loss is the mean cross-entropy of each score row against its own
    /// speaker.
    pub fn angular_proto_loss(
        &mut self,
        emb: NodeId,
        w: NodeId,
        bias: NodeId,
        n_speakers: usize,
        m_utts: usize,
    ) -> Result<NodeId> {
        if n_speakers < 2 || m_utts < 2 {
            return Err(Error::InvalidInput(format!(
                "angular prototypical loss needs N >= 2 speakers and M >= 2 utterances, got N={n_speakers} M={m_utts}"
            )));
        }
        let ve = &self.nodes[emb].value;
        assert_eq!(ve.rows(), n_speakers * m_utts, "batch row count");
        let d = ve.cols();
        let wv = self.nodes[w].value.at(0, 0);
        let bv = self.nodes[bias].value.at(0, 0);

        let mut protos = Mat::zeros(n_speakers, d);
        let mut queries = Mat::zeros(n_speakers, d);
        for k in 0..n_speakers {
            for i in 0..m_utts - 1 {
                let row = ve.row(k * m_utts + i);
                for (p, &x) in protos.row_mut(k).iter_mut().zip(row) {
                    *p += x / (m_utts - 1) as f64;
                }
            }
            queries
                .row_mut(k)
                .copy_from_slice(ve.row(k * m_utts + m_utts - 1));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let proto_norms: Vec<f64> = (0..n_speakers).map(|k| norm(protos.row(k))).collect();
        let query_norms: Vec<f64> = (0..n_speakers).map(|j| norm(queries.row(j))).collect();
        if proto_norms.iter().chain(&query_norms).any(|&n| n == 0.0) {
            return Err(Error::InvalidInput(
                "zero-norm embedding in batch: cosine similarity undefined".into(),
            ));
        }

        let mut cos = Mat::zeros(n_speakers, n_speakers);
        for j in 0..n_speakers {
            for k in 0..n_speakers {
                let dot: f64 = queries
                    .row(j)
                    .iter()
                    .zip(protos.row(k))
                    .map(|(a, b)| a * b)
                    .sum();
                *cos.at_mut(j, k) = dot / (query_norms[j] * proto_norms[k]);
            }
        }

        let mut probs = Mat::zeros(n_speakers, n_speakers);
        let mut loss = 0.0;
        for j in 0..n_speakers {
            let scores: Vec<f64> = (0..n_speakers).map(|k| wv * cos.at(j, k) + bv).collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for k in 0..n_speakers {
                *probs.at_mut(j, k) = (scores[k] - max).exp() / sum;
            }
            loss += -(scores[j] - max - sum.ln());
        }
        loss /= n_speakers as f64;

        let cache = ProtoCache {
            protos,
            queries,
            proto_norms,
            query_norms,
            cos,
            probs,
        };
        Ok(self.push(
            Mat::scalar(loss),
            Op::AngularProtoLoss {
                emb,
                w,
                bias,
                n_speakers,
                m_utts,
                cache,
            },
        ))
    }

    /// Mean squared error against a constant target, averaged over all entries.
    pub fn mse_loss(&mut self, pred: NodeId, target: Mat) -> NodeId {
        let vp = &self.nodes[pred].value;
        assert_eq!(
            (vp.rows(), vp.cols()),
            (target.rows(), target.cols()),
            "mse target shape"
        );
        let count = vp.len() as f64;
        let loss = vp
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / count;
        self.push(Mat::scalar(loss), Op::MseLoss(pred, target))
    }

    fn accumulate(&mut self, id: NodeId, delta: Mat) {
        let node = &mut self.nodes[id];
        match node.grad.as_mut() {
            Some(g) => g.add_assign(&delta),
            None => node.grad = Some(delta),
        }
    }

    /// Backpropagate from a scalar (1x1) node.
    pub fn backward(&mut self, loss: NodeId) {
        let lv = &self.nodes[loss].value;
        assert_eq!((lv.rows(), lv.cols()), (1, 1), "backward needs a scalar");
        self.nodes[loss].grad = Some(Mat::scalar(1.0));

        for id in (0..=loss).rev() {
            let grad = match self.nodes[id].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = grad.matmul(&self.nodes[b].value.transpose());
                    let db = self.nodes[a].value.transpose().matmul(&grad);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Add(a, b) => {
                    self.accumulate(a, grad.clone());
                    self.accumulate(b, grad);
                }
                Op::AddRowBroadcast(x, b) => {
                    let mut db = Mat::zeros(1, grad.cols());
                    for r in 0..grad.rows() {
                        for (o, &g) in db.row_mut(0).iter_mut().zip(grad.row(r)) {
                            *o += g;
                        }
                    }
                    self.accumulate(x, grad);
                    self.accumulate(b, db);
                }
                Op::Scale(a, s) => {
                    self.accumulate(a, grad.map(|g| g * s));
                }
                Op::Relu(a) => {
                    let va = &self.nodes[a].value;
                    let mut da = grad;
                    for (g, &x) in da.as_mut_slice().iter_mut().zip(va.as_slice()) {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[id].value.clone();
                    let mut da = grad;
                    for (g, &t) in da.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *g *= 1.0 - t * t;
                    }
                    self.accumulate(a, da);
                }
                Op::SoftmaxRowsMasked(a, valid) => {
                    let y = self.nodes[id].value.clone();
                    let mut da = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = (0..valid).map(|c| grad.at(r, c) * y.at(r, c)).sum();
                        for c in 0..valid {
                            *da.at_mut(r, c) = y.at(r, c) * (grad.at(r, c) - dot);
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let vx = self.nodes[x].value.clone();
                    let vg = self.nodes[gamma].value.clone();
                    let d = vx.cols();
                    let mut dx = Mat::zeros(vx.rows(), d);
                    let mut dgamma = Mat::zeros(1, d);
                    let mut dbeta = Mat::zeros(1, d);
                    for r in 0..vx.rows() {
                        let row = vx.row(r);
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                        let g_row = grad.row(r);
                        let gg: Vec<f64> = (0..d).map(|c| g_row[c] * vg.at(0, c)).collect();
                        let mean_gg = gg.iter().sum::<f64>() / d as f64;
                        let mean_gg_xhat =
                            gg.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for c in 0..d {
                            *dx.at_mut(r, c) =
                                (gg[c] - mean_gg - xhat[c] * mean_gg_xhat) * inv_std;
                            *dgamma.at_mut(0, c) += g_row[c] * xhat[c];
                            *dbeta.at_mut(0, c) += g_row[c];
                        }
                    }
                    self.accumulate(x, dx);
                    self.accumulate(gamma, dgamma);
                    self.accumulate(beta, dbeta);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.nodes[p].value.cols();
                        let mut dp = Mat::zeros(grad.rows(), cols);
                        for r in 0..grad.rows() {
                            dp.row_mut(r).copy_from_slice(&grad.row(r)[off..off + cols]);
                        }
                        self.accumulate(p, dp);
                        off += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let rows = self.nodes[p].value.rows();
                        let mut dp = Mat::zeros(rows, grad.cols());
                        for r in 0..rows {
                            dp.row_mut(r).copy_from_slice(grad.row(off + r));
                        }
                        self.accumulate(p, dp);
                        off += rows;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let va_cols = self.nodes[a].value.cols();
                    let mut da = Mat::zeros(grad.rows(), va_cols);
                    for r in 0..grad.rows() {
                        da.row_mut(r)[start..start + len].copy_from_slice(grad.row(r));
                    }
                    self.accumulate(a, da);
                }
                Op::SliceRows(a, start, len) => {
                    let va_rows = self.nodes[a].value.rows();
                    let mut da = Mat::zeros(va_rows, grad.cols());
                    for r in 0..len {
                        da.row_mut(start + r).copy_from_slice(grad.row(r));
                    }
                    self.accumulate(a, da);
                }
                Op::Transpose(a) => {
                    self.accumulate(a, grad.transpose());
                }
                Op::AngularProtoLoss {
                    emb,
                    w,
                    bias,
                    n_speakers,
                    m_utts,
                    cache,
                } => {
                    let g = grad.at(0, 0);
                    let wv = self.nodes[w].value.at(0, 0);
                    let n = n_speakers;
                    let d = cache.protos.cols();

                    let mut dw = 0.0;
                    let mut dbias = 0.0;
                    let mut d_queries = Mat::zeros(n, d);
                    let mut d_protos = Mat::zeros(n, d);
                    for j in 0..n {
                        for k in 0..n {
                            let ds = g * (cache.probs.at(j, k) - if j == k { 1.0 } else { 0.0 })
                                / n as f64;
                            dw += ds * cache.cos.at(j, k);
                            dbias += ds;
                            let dcos = ds * wv;
                            let qn = cache.query_norms[j];
                            let pn = cache.proto_norms[k];
                            let c = cache.cos.at(j, k);
                            for i in 0..d {
                                let q = cache.queries.at(j, i);
                                let p = cache.protos.at(k, i);
                                *d_queries.at_mut(j, i) += dcos * (p / (qn * pn) - c * q / (qn * qn));
                                *d_protos.at_mut(k, i) += dcos * (q / (qn * pn) - c * p / (pn * pn));
                            }
                        }
                    }

                    let mut d_emb =
                        Mat::zeros(self.nodes[emb].value.rows(), self.nodes[emb].value.cols());
                    for k in 0..n {
                        for i in 0..m_utts - 1 {
                            let dst = d_emb.row_mut(k * m_utts + i);
                            for (o, &dp) in dst.iter_mut().zip(d_protos.row(k)) {
                                *o += dp / (m_utts - 1) as f64;
                            }
                        }
                        d_emb
                            .row_mut(k * m_utts + m_utts - 1)
                            .copy_from_slice(d_queries.row(k));
                    }
                    self.accumulate(emb, d_emb);
                    self.accumulate(w, Mat::scalar(dw));
                    self.accumulate(bias, Mat::scalar(dbias));
                }
                Op::MseLoss(pred, target) => {
                    let g = grad.at(0, 0);
                    let vp = &self.nodes[pred].value;
                    let count = vp.len() as f64;
                    let mut dp = Mat::zeros(vp.rows(), vp.cols());
                    for ((o, &p), &t) in dp
                        .as_mut_slice()
                        .iter_mut()
                        .zip(vp.as_slice())
                        .zip(target.as_slice())
                    {
                        *o = g * 2.0 * (p - t) / count;
                    }
                    self.accumulate(pred, dp);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Builds a graph from leaf inputs, returning (leaf ids, loss id).
    type GraphBuilder = dyn Fn(&mut Tape, &[Mat]) -> (Vec<NodeId>, NodeId);

    /// Check analytic gradients of a tape-built scalar against central
    /// finite differences.
    fn check_gradients(build: &GraphBuilder, inputs: &[Mat], tol: f64) {
        let mut tape = Tape::new();
        let (ids, loss) = build(&mut tape, inputs);
        tape.backward(loss);
        let analytic: Vec<Mat> = ids.iter().map(|&id| tape.grad(id)).collect();

        let eval = |ins: &[Mat]| -> f64 {
            let mut t = Tape::new();
            let (_, l) = build(&mut t, ins);
            t.value(l).at(0, 0)
        };
        let eps = 1e-6;
        for (pi, input) in inputs.iter().enumerate() {
            for idx in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[pi].as_mut_slice()[idx] += eps;
                let mut minus = inputs.to_vec();
                minus[pi].as_mut_slice()[idx] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic[pi].as_slice()[idx];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "grad mismatch input {pi} idx {idx}: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    fn rand_mat(rng: &mut Rng, r: usize, c: usize) -> Mat {
        let data: Vec<f64> = (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Mat::from_vec(r, c, data)
    }

    #[test]
    fn matmul_chain_gradient() {
        let mut rng = Rng::new(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let t = rand_mat(&mut rng, 3, 2);
        let target = t.clone();
        check_gradients(
            &move |tape, ins| {
                let ia = tape.leaf(ins[0].clone());
                let ib = tape.leaf(ins[1].clone());
                let y = tape.matmul(ia, ib);
                let y = tape.tanh(y);
                let loss = tape.mse_loss(y, target.clone());
                (vec![ia, ib], loss)
            },
            &[a, b],
            1e-5,
        );
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = Rng::new(2);
        let x = rand_mat(&mut rng, 4, 6);
        let gamma = rand_mat(&mut rng, 1, 6);
        let beta = rand_mat(&mut rng, 1, 6);
        let target = rand_mat(&mut rng, 4, 6);
        check_gradients(
            &move |tape, ins| {
                let ix = tape.leaf(ins[0].clone());
                let ig = tape.leaf(ins[1].clone());
                let ib = tape.leaf(ins[2].clone());
                let y = tape.layer_norm(ix, ig, ib);
                let loss = tape.mse_loss(y, target.clone());
                (vec![ix, ig, ib], loss)
            },
            &[x, gamma, beta],
            1e-4,
        );
    }

    #[test]
    fn masked_softmax_gradient() {
        let mut rng = Rng::new(3);
        let x = rand_mat(&mut rng, 3, 5);
        let target = rand_mat(&mut rng, 3, 5);
        check_gradients(
            &move |tape, ins| {
                let ix = tape.leaf(ins[0].clone());
                let y = tape.softmax_rows_masked(ix, 4);
                let loss = tape.mse_loss(y, target.clone());
                (vec![ix], loss)
            },
            &[x],
            1e-5,
        );
    }

    #[test]
    fn angular_proto_loss_matches_hand_value() {
        // N=2, M=2, w=1, bias=0, queries equal to orthogonal prototypes:
        // loss = -log(e / (e + 1)).
        let emb = Mat::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]);
        let mut tape = Tape::new();
        let e = tape.leaf(emb);
        let w = tape.leaf(Mat::scalar(1.0));
        let b = tape.leaf(Mat::scalar(0.0));
        let loss = tape.angular_proto_loss(e, w, b, 2, 2).unwrap();
        let expected = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        assert!((tape.value(loss).at(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn angular_proto_loss_gradient() {
        let mut rng = Rng::new(4);
        let n = 3;
        let m = 3;
        let emb = rand_mat(&mut rng, n * m, 5);
        let w = Mat::scalar(2.0);
        let b = Mat::scalar(-0.5);
        check_gradients(
            &move |tape, ins| {
                let ie = tape.leaf(ins[0].clone());
                let iw = tape.leaf(ins[1].clone());
                let ib = tape.leaf(ins[2].clone());
                let loss = tape.angular_proto_loss(ie, iw, ib, n, m).unwrap();
                (vec![ie, iw, ib], loss)
            },
            &[emb, w, b],
            1e-5,
        );
    }

    #[test]
    fn angular_proto_loss_rejects_zero_norm() {
        let emb = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]);
        let mut tape = Tape::new();
        let e = tape.leaf(emb);
        let w = tape.leaf(Mat::scalar(1.0));
        let b = tape.leaf(Mat::scalar(0.0));
        assert!(tape.angular_proto_loss(e, w, b, 2, 2).is_err());
    }

    #[test]
    fn attention_like_composition_gradient() {
        // scores = tanh(X W + b) mu^T, pooled = softmax(scores)^T X.
        let mut rng = Rng::new(5);
        let x = rand_mat(&mut rng, 4, 3);
        let w = rand_mat(&mut rng, 3, 2);
        let b = rand_mat(&mut rng, 1, 2);
        let mu = rand_mat(&mut rng, 1, 2);
        let target = rand_mat(&mut rng, 1, 3);
        check_gradients(
            &move |tape, ins| {
                let ix = tape.leaf(ins[0].clone());
                let iw = tape.leaf(ins[1].clone());
                let ib = tape.leaf(ins[2].clone());
                let imu = tape.leaf(ins[3].clone());
                let xw = tape.matmul(ix, iw);
                let h = tape.add_row_broadcast(xw, ib);
                let h = tape.tanh(h);
                let mu_t = tape.transpose(imu);
                let scores = tape.matmul(h, mu_t);
                let scores_row = tape.transpose(scores);
                let weights = tape.softmax_rows(scores_row);
                let pooled = tape.matmul(weights, ix);
                let loss = tape.mse_loss(pooled, target.clone());
                (vec![ix, iw, ib, imu], loss)
            },
            &[x, w, b, mu],
            1e-5,
        );
    }
}
