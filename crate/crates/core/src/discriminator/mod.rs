//! Binary classifier over (state, response) token pairs. `D` is the probability
//! that a pair was generated; the generator's reward is `-ln D`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{
    adamw_step, batch_grads, c, uniform_init, AdamWConfig, AdamWState, Graph, Grads, NumError,
    ParamSet, Real, Tensor, Var,
};
use crate::textdata::EncodedPair;

/// Scores are clamped to `[D_MIN, 1 - D_MIN]`.
pub const D_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscError {
    #[error("invalid discriminator config: {0}")]
    InvalidConfig(String),
    #[error("pair cannot be scored: {0}")]
    Unencodable(String),
    #[error("empty {0} batch")]
    EmptyBatch(&'static str),
    #[error("non-finite discriminator objective")]
    NonFinite,
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Length caps used to normalize the two length features.
    pub max_state: usize,
    pub max_response: usize,
}

impl DiscConfig {
    pub fn feature_dim(&self) -> usize {
        2 * self.embed_dim + 2
    }

    pub fn validate(&self) -> Result<(), DiscError> {
        if self.vocab_size < 2
            || self.embed_dim == 0
            || self.hidden == 0
            || self.max_state == 0
            || self.max_response == 0
        {
            return Err(DiscError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Embedding table, two tanh hidden layers and a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T: Real> {
    config: DiscConfig,
    params: ParamSet<T>,
}

const EMB: usize = 0;
const W1: usize = 1;
const B1: usize = 2;
const W2: usize = 3;
const B2: usize = 4;
const W3: usize = 5;
const B3: usize = 6;

impl<T: Real> Discriminator<T> {
    pub fn new(config: DiscConfig, seed: u64) -> Result<Self, DiscError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, f) = (config.embed_dim, config.hidden, config.feature_dim());
        let mut p = ParamSet::new();
        p.push("emb", uniform_init(vec![config.vocab_size, d], d, &mut rng));
        p.push("w1", uniform_init(vec![f, h], f, &mut rng));
        p.push("b1", Tensor::zeros(vec![h]));
        p.push("w2", uniform_init(vec![h, h], h, &mut rng));
        p.push("b2", Tensor::zeros(vec![h]));
        p.push("w3", uniform_init(vec![h, 1], h, &mut rng));
        p.push("b3", Tensor::zeros(vec![1]));
        Ok(Discriminator { config, params: p })
    }

    pub fn from_params(config: DiscConfig, params: ParamSet<T>) -> Result<Self, DiscError> {
        Discriminator::<T>::new(config, 0)?
            .params
            .check_compatible(&params)?;
        Ok(Discriminator { config, params })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Zeroes the output layer so every pair scores exactly 0.5.
    pub fn zero_head(&mut self) {
        for i in [W3, B3] {
            self.params
                .get_mut(i)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = T::zero());
        }
    }

    fn check(&self, pair: &EncodedPair) -> Result<(), DiscError> {
        if pair.state.is_empty() || pair.target.is_empty() {
            return Err(DiscError::Unencodable("empty state or response".into()));
        }
        let v = self.config.vocab_size;
        if let Some(t) = pair.state.iter().chain(&pair.target).find(|&&t| t >= v) {
            return Err(DiscError::Unencodable(format!("token {t} >= vocab {v}")));
        }
        Ok(())
    }

    /// Records the clamped score `D` of one pair as a `[1, 1]` node.
    pub fn score_tape(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        pair: &EncodedPair,
    ) -> Result<Var, DiscError> {
        self.check(pair)?;
        let s = g.embedding(vars[EMB], &pair.state)?;
        let s = g.mean_rows(s);
        let r = g.embedding(vars[EMB], &pair.target)?;
        let r = g.mean_rows(r);
        let lens = g.constant(Tensor::new(
            vec![1, 2],
            vec![
                c(pair.state.len() as f64 / self.config.max_state as f64),
                c(pair.target.len() as f64 / self.config.max_response as f64),
            ],
        )?);
        let x = g.concat_cols(&[s, r, lens])?;
        let h = g.matmul(x, vars[W1])?;
        let h = g.add_row(h, vars[B1])?;
        let h = g.tanh(h);
        let h = g.matmul(h, vars[W2])?;
        let h = g.add_row(h, vars[B2])?;
        let h = g.tanh(h);
        let o = g.matmul(h, vars[W3])?;
        let o = g.add_row(o, vars[B3])?;
        let d = g.sigmoid(o);
        Ok(g.clamp(d, c(D_MIN), c(1.0 - D_MIN)))
    }

    /// Probability that `pair` was generated, in `[D_MIN, 1 - D_MIN]`.
    pub fn score(&self, pair: &EncodedPair) -> Result<f64, DiscError> {
        let mut g = Graph::new();
        let vars = g.bind(&self.params);
        let d = self.score_tape(&mut g, &vars, pair)?;
        Ok(g.scalar(d).as_f64())
    }

    pub fn score_all(&self, pairs: &[EncodedPair]) -> Result<Vec<f64>, DiscError> {
        pairs.par_iter().map(|p| self.score(p)).collect()
    }

    /// `-ln D`: large when the pair looks expert-like.
    pub fn reward(&self, pair: &EncodedPair) -> Result<f64, DiscError> {
        Ok(reward_from_score(self.score(pair)?))
    }

    /// Fraction of generated pairs scored above 0.5 and expert pairs below it.
    pub fn accuracy(
        &self,
        generated: &[EncodedPair],
        expert: &[EncodedPair],
    ) -> Result<f64, DiscError> {
        let g = self.score_all(generated)?;
        let e = self.score_all(expert)?;
        let hits = g.iter().filter(|&&d| d > 0.5).count() + e.iter().filter(|&&d| d < 0.5).count();
        Ok(hits as f64 / (g.len() + e.len()).max(1) as f64)
    }
}

pub fn reward_from_score(d: f64) -> f64 {
    -d.clamp(D_MIN, 1.0 - D_MIN).ln()
}

/// Objective value and its gradient with respect to the discriminator parameters.
#[derive(Debug, Clone)]
pub struct DiscLoss<T: Real> {
    pub value: f64,
    pub grads: Grads<T>,
}

enum Side<'a> {
    Generated(&'a EncodedPair),
    Expert(&'a EncodedPair),
}

/// `mean_gen ln D + mean_exp ln(1 - D)`, always `<= 0`, with its gradient.
pub fn disc_loss<T: Real>(
    disc: &Discriminator<T>,
    generated: &[EncodedPair],
    expert: &[EncodedPair],
) -> Result<DiscLoss<T>, DiscError> {
    if generated.is_empty() {
        return Err(DiscError::EmptyBatch("generated"));
    }
    if expert.is_empty() {
        return Err(DiscError::EmptyBatch("expert"));
    }
    let wg: T = c(1.0 / generated.len() as f64);
    let we: T = c(1.0 / expert.len() as f64);
    let items: Vec<Side> = generated
        .iter()
        .map(Side::Generated)
        .chain(expert.iter().map(Side::Expert))
        .collect();
    let (outs, grads) = batch_grads(disc.params(), &items, |g, vars, item| {
        let out = match item {
            Side::Generated(p) => {
                let d = disc.score_tape(g, vars, p)?;
                let l = g.ln(d);
                g.scale(l, wg)
            }
            Side::Expert(p) => {
                let d = disc.score_tape(g, vars, p)?;
                let one_minus = g.affine(d, -T::one(), T::one());
                let l = g.ln(one_minus);
                g.scale(l, we)
            }
        };
        let out = g.sum(out);
        Ok::<_, DiscError>((out, ()))
    })?;
    let mut value = 0.0;
    for (v, _) in &outs {
        value += v.as_f64();
    }
    if !value.is_finite() || !grads.is_finite() {
        return Err(DiscError::NonFinite);
    }
    Ok(DiscLoss { value, grads })
}

pub fn disc_optimizer<T: Real>(disc: &Discriminator<T>, cfg: AdamWConfig) -> AdamWState<T> {
    AdamWState::new(disc.params(), cfg)
}

/// One AdamW ascent step on [`disc_loss`]. Returns the objective before the step.
pub fn disc_update<T: Real>(
    disc: &mut Discriminator<T>,
    opt: &mut AdamWState<T>,
    generated: &[EncodedPair],
    expert: &[EncodedPair],
) -> Result<f64, DiscError> {
    let mut loss = disc_loss(disc, generated, expert)?;
    loss.grads.scale(-T::one());
    adamw_step(disc.params_mut(), &loss.grads, opt)?;
    Ok(loss.value)
}

/// `g(x) = -x - ln(1 - e^x)` for `x < 0`, `+inf` otherwise.
pub fn g_regularizer(x: f64) -> f64 {
    if x < 0.0 {
        -x - (-x.exp_m1()).ln()
    } else {
        f64::INFINITY
    }
}

/// Objective of a tabular discriminator: `counts_gen[i]`, `counts_exp[i]` are
/// the empirical multiplicities of pair `i` and `d[i]` its score.
pub fn tabular_objective(counts_gen: &[f64], counts_exp: &[f64], d: &[f64]) -> f64 {
    let ng: f64 = counts_gen.iter().sum();
    let ne: f64 = counts_exp.iter().sum();
    let mut v = 0.0;
    for ((&cg, &ce), &di) in counts_gen.iter().zip(counts_exp).zip(d) {
        let di = di.clamp(D_MIN, 1.0 - D_MIN);
        if cg > 0.0 {
            v += cg / ng * di.ln();
        }
        if ce > 0.0 {
            v += ce / ne * (1.0 - di).ln();
        }
    }
    v
}

#[cfg(test)]
mod tests;
