//! Per-group learner: one actor per device, one shared attention critic,
//! and slowly tracking target copies of both.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::critic::{AttentionCritic, JointBatch};
use super::nn::{log_softmax, sgd_step, Mlp, Parameters};
use super::replay::Transition;
use super::MaacConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentBundle {
    pub actors: Vec<Mlp>,
    pub target_actors: Vec<Mlp>,
    pub critic: AttentionCritic,
    pub target_critic: AttentionCritic,
    pub temperature: f64,
    pub discount: f64,
    pub target_rate: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub critic_grad_norm: f64,
    /// Mean over agents of `E_pi[alpha log pi - Q]`.
    pub actor_loss: f64,
    pub actor_grad_norms: Vec<f64>,
}

/// Row-wise log-probabilities of an actor.
pub fn log_policy(actor: &Mlp, obs: &Array2<f64>) -> Array2<f64> {
    log_softmax(&actor.forward(obs))
}

/// Gradient of `sum_{b,a} coeff[b,a] * log pi(a | o_b)` with `coeff` held
/// constant.
pub fn log_policy_gradient(actor: &Mlp, obs: &Array2<f64>, coeff: &Array2<f64>) -> Mlp {
    let (logits, trace) = actor.forward_traced(obs);
    let pi = log_softmax(&logits).mapv(f64::exp);
    let total = coeff.sum_axis(Axis(1)).insert_axis(Axis(1));
    let dlogits = coeff - &(&pi * &total);
    let mut grad = actor.zeros_like();
    actor.backward(&trace, &dlogits, &mut grad);
    grad
}

/// Counterfactual baseline `sum_a pi(a) Q(a)` per row.
pub fn baseline(log_pi: &Array2<f64>, q_all: &Array2<f64>) -> Array1<f64> {
    (&log_pi.mapv(f64::exp) * q_all).sum_axis(Axis(1))
}

/// Advantage of every own action, `Q(a) - b`.
pub fn advantages(log_pi: &Array2<f64>, q_all: &Array2<f64>) -> Array2<f64> {
    q_all - &baseline(log_pi, q_all).insert_axis(Axis(1))
}

/// Coefficients whose log-policy gradient is the gradient of the soft
/// objective `mean_b sum_a pi(a) (Q(a) - alpha log pi(a))` for fixed `Q`.
pub fn expected_coefficients(log_pi: &Array2<f64>, q_all: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let rows = log_pi.nrows().max(1) as f64;
    let adv = advantages(log_pi, q_all);
    let mut c = log_pi.mapv(f64::exp) * &(adv - &(log_pi * alpha));
    c /= rows;
    c
}

/// Single-sample version of [`expected_coefficients`]: only the sampled
/// action of each row carries weight.
pub fn sampled_coefficients(log_pi: &Array2<f64>, q_all: &Array2<f64>, actions: &[usize], alpha: f64) -> Array2<f64> {
    let rows = log_pi.nrows().max(1) as f64;
    let b = baseline(log_pi, q_all);
    let mut c = Array2::zeros(log_pi.raw_dim());
    for (r, &a) in actions.iter().enumerate() {
        c[[r, a]] = (q_all[[r, a]] - b[r] - alpha * log_pi[[r, a]]) / rows;
    }
    c
}

/// `mean_b sum_a pi(a) (Q(a) - alpha log pi(a))`
pub fn soft_objective(log_pi: &Array2<f64>, q_all: &Array2<f64>, alpha: f64) -> f64 {
    let rows = log_pi.nrows().max(1) as f64;
    (log_pi.mapv(f64::exp) * &(q_all - &(log_pi * alpha))).sum() / rows
}

pub fn entropy(log_pi: &Array2<f64>) -> f64 {
    let rows = log_pi.nrows().max(1) as f64;
    -(log_pi.mapv(f64::exp) * log_pi).sum() / rows
}

pub fn sample_categorical<R: Rng>(log_pi: &Array2<f64>, rng: &mut R) -> Vec<usize> {
    log_pi
        .rows()
        .into_iter()
        .map(|row| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (a, lp) in row.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    return a;
                }
            }
            row.len() - 1
        })
        .collect()
}

pub fn argmax_rows(log_pi: &Array2<f64>) -> Vec<usize> {
    log_pi
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (a, &v)| if v > best.1 { (a, v) } else { best })
                .0
        })
        .collect()
}

/// Per-agent `B x obs` matrices from a slice of transitions.
pub fn stack_obs(batch: &[&Transition], next: bool) -> Vec<Array2<f64>> {
    let agents = batch.first().map_or(0, |t| t.agents());
    (0..agents)
        .map(|i| {
            let dim = batch[0].obs[i].len();
            Array2::from_shape_fn(
                (batch.len(), dim),
                |(b, f)| {
                    if next {
                        batch[b].next_obs[i][f]
                    } else {
                        batch[b].obs[i][f]
                    }
                },
            )
        })
        .collect()
}

impl AgentBundle {
    pub fn new<R: Rng>(agents: usize, obs_dim: usize, action_count: usize, cfg: &MaacConfig, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&cfg.actor_hidden);
        sizes.push(action_count);
        let actors: Vec<Mlp> = (0..agents).map(|_| Mlp::new(&sizes, rng)).collect();
        let critic = AttentionCritic::new(
            agents,
            obs_dim,
            action_count,
            cfg.embed_dim,
            cfg.attention_heads,
            &cfg.critic_hidden,
            rng,
        );
        Self {
            target_actors: actors.clone(),
            actors,
            target_critic: critic.clone(),
            critic,
            temperature: cfg.temperature,
            discount: cfg.discount,
            target_rate: cfg.target_rate,
            learning_rate: cfg.learning_rate,
            grad_clip: cfg.grad_clip,
        }
    }

    pub fn agents(&self) -> usize {
        self.actors.len()
    }

    /// One action per agent drawn from its current policy.
    pub fn act<R: Rng>(&self, obs: &[Vec<f64>], rng: &mut R) -> Vec<usize> {
        obs.iter().zip(&self.actors).map(|(o, actor)| sample_categorical(&log_policy(actor, &row(o)), rng)[0]).collect()
    }

    /// Most probable action of one agent given only its own observation.
    pub fn greedy_action(&self, agent: usize, obs: &[f64]) -> usize {
        argmax_rows(&log_policy(&self.actors[agent], &row(obs)))[0]
    }

    /// Regression targets `r + mu (Qbar(o', a') - alpha log pibar(a' | o'))`
    /// with `a'` drawn from the target actors.
    pub fn targets<R: Rng>(&self, batch: &[&Transition], rng: &mut R) -> Vec<Array1<f64>> {
        let next_obs = stack_obs(batch, true);
        let log_pis: Vec<Array2<f64>> =
            next_obs.iter().zip(&self.target_actors).map(|(o, a)| log_policy(a, o)).collect();
        let next_actions: Vec<Vec<usize>> = log_pis.iter().map(|lp| sample_categorical(lp, rng)).collect();
        let q_next = if self.discount > 0.0 {
            self.target_critic.q_values(&JointBatch { obs: next_obs, actions: next_actions.clone() })
        } else {
            vec![Array1::zeros(batch.len()); self.agents()]
        };
        (0..self.agents())
            .map(|i| {
                Array1::from_shape_fn(batch.len(), |b| {
                    let r = batch[b].rewards[i];
                    if self.discount == 0.0 {
                        return r;
                    }
                    let soft = q_next[i][b] - self.temperature * log_pis[i][[b, next_actions[i][b]]];
                    r + self.discount * soft
                })
            })
            .collect()
    }

    pub fn joint_batch(batch: &[&Transition]) -> JointBatch {
        JointBatch {
            obs: stack_obs(batch, false),
            actions: (0..batch.first().map_or(0, |t| t.agents()))
                .map(|i| batch.iter().map(|t| t.actions[i]).collect())
                .collect(),
        }
    }

    /// One gradient step on the summed critic regression loss.
    pub fn critic_update<R: Rng>(&mut self, batch: &[&Transition], rng: &mut R) -> (f64, f64) {
        let targets = self.targets(batch, rng);
        let (loss, grad) = self.critic.regression(&Self::joint_batch(batch), &targets);
        let norm = sgd_step(&mut self.critic, &grad, self.learning_rate, self.grad_clip);
        (loss, norm)
    }

    /// One ascent step per actor on the sampled soft policy gradient with
    /// the counterfactual baseline. Every agent's action is resampled from
    /// its current policy.
    pub fn actor_update<R: Rng>(&mut self, batch: &[&Transition], rng: &mut R) -> (f64, Vec<f64>) {
        let obs = stack_obs(batch, false);
        let log_pis: Vec<Array2<f64>> = obs.iter().zip(&self.actors).map(|(o, a)| log_policy(a, o)).collect();
        let actions: Vec<Vec<usize>> = log_pis.iter().map(|lp| sample_categorical(lp, rng)).collect();
        let joint = JointBatch { obs, actions };
        let mut norms = Vec::with_capacity(self.agents());
        let mut loss = 0.0;
        for i in 0..self.agents() {
            let q_all = self.critic.q_all_actions(&joint, i);
            loss -= soft_objective(&log_pis[i], &q_all, self.temperature);
            let coeff = sampled_coefficients(&log_pis[i], &q_all, &joint.actions[i], self.temperature);
            let mut grad = log_policy_gradient(&self.actors[i], &joint.obs[i], &coeff);
            grad.scale(-1.0);
            norms.push(sgd_step(&mut self.actors[i], &grad, self.learning_rate, self.grad_clip));
        }
        (loss / self.agents().max(1) as f64, norms)
    }

    pub fn soft_target_update(&mut self, rate: f64) {
        for (t, o) in self.target_actors.iter_mut().zip(&self.actors) {
            t.soft_update(o, rate);
        }
        self.target_critic.soft_update(&self.critic, rate);
    }

    /// Critic step, actor step and target tracking on one minibatch.
    pub fn update<R: Rng>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats> {
        let (critic_loss, critic_grad_norm) = self.critic_update(batch, rng);
        if !critic_loss.is_finite() || !critic_grad_norm.is_finite() || !self.critic.all_finite() {
            return Err(Error::Divergence(format!("critic loss {critic_loss}, gradient norm {critic_grad_norm}")));
        }
        let (actor_loss, actor_grad_norms) = self.actor_update(batch, rng);
        if !actor_loss.is_finite() || self.actors.iter().any(|a| !a.all_finite()) {
            return Err(Error::Divergence(format!("actor loss {actor_loss}, gradient norms {actor_grad_norms:?}")));
        }
        self.soft_target_update(self.target_rate);
        Ok(UpdateStats { critic_loss, critic_grad_norm, actor_loss, actor_grad_norms })
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}
