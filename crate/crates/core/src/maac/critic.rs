//! Centralised critic with multi-head attention over the other agents.
//!
//! Agent `j`'s observation and one-hot action are embedded by its own
//! one-layer perceptron, `e_j = leaky(W_j [o_j, a_j] + b_j)`. For agent `i`
//! and each head, the other agents are weighted by
//! `softmax_j((e_j W_k) . (e_i W_q))` and their values `leaky(e_j V)` summed
//! into `x_i`. The agent's own head network maps `[e_i, x_i]` to `Q_i`.
//! Key, query and value matrices are shared by all agents.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{init_matrix, leaky_array, leaky_backward, row_dot, Linear, Mlp, MlpTrace, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionCritic {
    pub embed: Vec<Linear>,
    pub keys: Vec<Array2<f64>>,
    pub queries: Vec<Array2<f64>>,
    pub values: Vec<Array2<f64>>,
    pub heads: Vec<Mlp>,
    obs_dim: usize,
    action_count: usize,
}

/// One minibatch seen by the critic: per agent a `B x obs` matrix and `B`
/// action indices.
#[derive(Clone, Debug)]
pub struct JointBatch {
    pub obs: Vec<Array2<f64>>,
    pub actions: Vec<Vec<usize>>,
}

impl JointBatch {
    pub fn agents(&self) -> usize {
        self.obs.len()
    }

    pub fn rows(&self) -> usize {
        self.obs.first().map_or(0, |o| o.nrows())
    }
}

#[derive(Clone, Debug)]
pub struct CriticTrace {
    inputs: Vec<Array2<f64>>,
    z: Vec<Array2<f64>>,
    e: Vec<Array2<f64>>,
    /// `[head][agent]`
    k: Vec<Vec<Array2<f64>>>,
    q: Vec<Vec<Array2<f64>>>,
    vpre: Vec<Vec<Array2<f64>>>,
    v: Vec<Vec<Array2<f64>>>,
    /// `[agent][head]`, `B x agents`, zero in the agent's own column
    attention: Vec<Vec<Array2<f64>>>,
    head: Vec<MlpTrace>,
}

impl CriticTrace {
    /// Attention weights of `agent` in `head`, one row per batch item.
    pub fn attention(&self, agent: usize, head: usize) -> &Array2<f64> {
        &self.attention[agent][head]
    }
}

/// Softmax attention of one query over every agent but `own`.
fn attend(query: &Array2<f64>, keys: &[Array2<f64>], values: &[Array2<f64>], own: usize) -> (Array2<f64>, Array2<f64>) {
    let rows = query.nrows();
    let n = keys.len();
    let mut weights = Array2::zeros((rows, n));
    let mut x = Array2::zeros(query.raw_dim());
    if n < 2 {
        return (weights, x);
    }
    for j in 0..n {
        if j != own {
            weights.column_mut(j).assign(&row_dot(&keys[j], query));
        }
    }
    for (b, mut row) in weights.rows_mut().into_iter().enumerate() {
        let max = (0..n).filter(|&j| j != own).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..n {
            row[j] = if j == own { 0.0 } else { (row[j] - max).exp() };
            total += row[j];
        }
        row.mapv_inplace(|w| w / total);
        let mut xr = x.row_mut(b);
        for j in 0..n {
            if j != own {
                xr.scaled_add(row[j], &values[j].row(b));
            }
        }
    }
    (weights, x)
}

impl AttentionCritic {
    pub fn new<R: Rng>(
        agents: usize,
        obs_dim: usize,
        action_count: usize,
        embed_dim: usize,
        attention_heads: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(
            attention_heads > 0 && embed_dim.is_multiple_of(attention_heads),
            "embedding must split evenly across heads"
        );
        let d = embed_dim / attention_heads;
        let embed = (0..agents).map(|_| Linear::new(obs_dim + action_count, embed_dim, rng)).collect();
        let mat = |rng: &mut R| (0..attention_heads).map(|_| init_matrix(embed_dim, d, embed_dim, rng)).collect();
        let keys = mat(rng);
        let queries = mat(rng);
        let values = mat(rng);
        let mut sizes = vec![2 * embed_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let heads = (0..agents).map(|_| Mlp::new(&sizes, rng)).collect();
        Self { embed, keys, queries, values, heads, obs_dim, action_count }
    }

    pub fn agents(&self) -> usize {
        self.embed.len()
    }

    pub fn attention_heads(&self) -> usize {
        self.keys.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed[0].outputs()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    fn input(&self, obs: &Array2<f64>, actions: &[usize]) -> Array2<f64> {
        let mut x = Array2::zeros((obs.nrows(), self.obs_dim + self.action_count));
        x.slice_mut(s![.., ..self.obs_dim]).assign(obs);
        for (b, &a) in actions.iter().enumerate() {
            x[[b, self.obs_dim + a]] = 1.0;
        }
        x
    }

    /// `Q_i(o, a)` for every agent with the trace for backpropagation.
    pub fn forward(&self, batch: &JointBatch) -> (Vec<Array1<f64>>, CriticTrace) {
        let n = self.agents();
        let inputs: Vec<Array2<f64>> = (0..n).map(|j| self.input(&batch.obs[j], &batch.actions[j])).collect();
        let z: Vec<Array2<f64>> = (0..n).map(|j| self.embed[j].forward(&inputs[j])).collect();
        let e: Vec<Array2<f64>> = z.iter().map(leaky_array).collect();
        let h_count = self.attention_heads();
        let project = |m: &[Array2<f64>]| -> Vec<Vec<Array2<f64>>> {
            (0..h_count).map(|h| e.iter().map(|ej| ej.dot(&m[h])).collect()).collect()
        };
        let k = project(&self.keys);
        let q = project(&self.queries);
        let vpre = project(&self.values);
        let v: Vec<Vec<Array2<f64>>> = vpre.iter().map(|row| row.iter().map(leaky_array).collect()).collect();

        let mut out = Vec::with_capacity(n);
        let mut attention = Vec::with_capacity(n);
        let mut head = Vec::with_capacity(n);
        for i in 0..n {
            let mut head_in = e[i].clone();
            let mut per_head = Vec::with_capacity(h_count);
            for h in 0..h_count {
                let (w, x) = attend(&q[h][i], &k[h], &v[h], i);
                head_in = ndarray::concatenate![Axis(1), head_in, x];
                per_head.push(w);
            }
            let (qv, trace) = self.heads[i].forward_traced(&head_in);
            out.push(qv.column(0).to_owned());
            attention.push(per_head);
            head.push(trace);
        }
        (out, CriticTrace { inputs, z, e, k, q, vpre, v, attention, head })
    }

    pub fn q_values(&self, batch: &JointBatch) -> Vec<Array1<f64>> {
        self.forward(batch).0
    }

    /// Accumulates `sum_i dq[i] . dQ_i/dphi` into `grad`.
    pub fn backward(&self, trace: &CriticTrace, dq: &[Array1<f64>], grad: &mut AttentionCritic) {
        let n = self.agents();
        let h_count = self.attention_heads();
        let e_dim = self.embed_dim();
        let d = e_dim / h_count;
        let zeros_d = || Array2::<f64>::zeros((trace.e[0].nrows(), d));
        let mut de: Vec<Array2<f64>> = trace.e.iter().map(|e| Array2::zeros(e.raw_dim())).collect();
        let mut dk: Vec<Vec<Array2<f64>>> = (0..h_count).map(|_| (0..n).map(|_| zeros_d()).collect()).collect();
        let mut dqr = dk.clone();
        let mut dv = dk.clone();

        for i in 0..n {
            let dout = dq[i].clone().insert_axis(Axis(1));
            let dhead_in = self.heads[i].backward(&trace.head[i], &dout, &mut grad.heads[i]);
            de[i] += &dhead_in.slice(s![.., ..e_dim]);
            for h in 0..h_count {
                let dx = dhead_in.slice(s![.., e_dim + h * d..e_dim + (h + 1) * d]).to_owned();
                let w = &trace.attention[i][h];
                let mut drho: Vec<Array1<f64>> = Vec::with_capacity(n);
                for j in 0..n {
                    if j == i {
                        drho.push(Array1::zeros(w.nrows()));
                        continue;
                    }
                    let wj = w.column(j).insert_axis(Axis(1)).to_owned();
                    drho.push(row_dot(&dx, &trace.v[h][j]));
                    dv[h][j] += &(&dx * &wj);
                }
                let mut mean = Array1::<f64>::zeros(w.nrows());
                for j in 0..n {
                    if j != i {
                        mean += &(&w.column(j) * &drho[j]);
                    }
                }
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let dl = (&w.column(j) * &(&drho[j] - &mean)).insert_axis(Axis(1));
                    dk[h][j] += &(&trace.q[h][i] * &dl);
                    dqr[h][i] += &(&trace.k[h][j] * &dl);
                }
            }
        }
        for h in 0..h_count {
            for j in 0..n {
                let ej = &trace.e[j];
                grad.keys[h] += &ej.t().dot(&dk[h][j]);
                de[j] += &dk[h][j].dot(&self.keys[h].t());
                grad.queries[h] += &ej.t().dot(&dqr[h][j]);
                de[j] += &dqr[h][j].dot(&self.queries[h].t());
                let dvpre = leaky_backward(&trace.vpre[h][j], &dv[h][j]);
                grad.values[h] += &ej.t().dot(&dvpre);
                de[j] += &dvpre.dot(&self.values[h].t());
            }
        }
        for j in 0..n {
            let dz = leaky_backward(&trace.z[j], &de[j]);
            self.embed[j].backward(&trace.inputs[j], &dz, &mut grad.embed[j]);
        }
    }

    /// `sum_i mean_b (Q_i - y_i)^2` and its gradient.
    pub fn regression(&self, batch: &JointBatch, targets: &[Array1<f64>]) -> (f64, AttentionCritic) {
        let (q, trace) = self.forward(batch);
        let rows = batch.rows().max(1) as f64;
        let mut loss = 0.0;
        let mut dq = Vec::with_capacity(q.len());
        for (qi, yi) in q.iter().zip(targets) {
            let diff = qi - yi;
            loss += diff.mapv(|v| v * v).sum() / rows;
            dq.push(diff * (2.0 / rows));
        }
        let mut grad = self.zeros_like();
        self.backward(&trace, &dq, &mut grad);
        (loss, grad)
    }

    pub fn regression_loss(&self, batch: &JointBatch, targets: &[Array1<f64>]) -> f64 {
        let rows = batch.rows().max(1) as f64;
        self.q_values(batch).iter().zip(targets).map(|(q, y)| (q - y).mapv(|v| v * v).sum() / rows).sum()
    }

    /// `Q_i(o, (a', a_{-i}))` for every own action `a'`, as `B x actions`.
    pub fn q_all_actions(&self, batch: &JointBatch, agent: usize) -> Array2<f64> {
        let n = self.agents();
        let rows = batch.rows();
        let h_count = self.attention_heads();
        let e: Vec<Array2<f64>> = (0..n)
            .map(|j| leaky_array(&self.embed[j].forward(&self.input(&batch.obs[j], &batch.actions[j]))))
            .collect();
        let k: Vec<Vec<Array2<f64>>> =
            (0..h_count).map(|h| e.iter().map(|ej| ej.dot(&self.keys[h])).collect()).collect();
        let v: Vec<Vec<Array2<f64>>> =
            (0..h_count).map(|h| e.iter().map(|ej| leaky_array(&ej.dot(&self.values[h]))).collect()).collect();
        let layer = &self.embed[agent];
        let base = batch.obs[agent].dot(&layer.w.slice(s![..self.obs_dim, ..])) + &layer.b;
        let mut out = Array2::zeros((rows, self.action_count));
        for a in 0..self.action_count {
            let z = &base + &layer.w.row(self.obs_dim + a);
            let ei = leaky_array(&z);
            let mut head_in = ei.clone();
            for h in 0..h_count {
                let (_, x) = attend(&ei.dot(&self.queries[h]), &k[h], &v[h], agent);
                head_in = ndarray::concatenate![Axis(1), head_in, x];
            }
            out.column_mut(a).assign(&self.heads[agent].forward(&head_in).column(0));
        }
        out
    }
}

impl Parameters for AttentionCritic {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t: Vec<&Array2<f64>> = self.embed.iter().flat_map(|l| l.tensors()).collect();
        t.extend(self.keys.iter());
        t.extend(self.queries.iter());
        t.extend(self.values.iter());
        t.extend(self.heads.iter().flat_map(|m| m.tensors()));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t: Vec<&mut Array2<f64>> = self.embed.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        t.extend(self.keys.iter_mut());
        t.extend(self.queries.iter_mut());
        t.extend(self.values.iter_mut());
        t.extend(self.heads.iter_mut().flat_map(|m| m.tensors_mut()));
        t
    }
}
