use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{c, kernels, uniform_init, Graph, NumError, ParamSet, Real, Tensor, Var};

use super::PolicyError;

/// Shape of the decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_context: usize,
    pub max_response: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl PolicyConfig {
    /// Default sizing for a given vocabulary.
    pub fn for_vocab(vocab_size: usize) -> Self {
        PolicyConfig {
            vocab_size,
            embed_dim: 64,
            layers: 2,
            heads: 2,
            ff_dim: 128,
            max_context: 128,
            max_response: 24,
            dropout: 0.0,
            layer_norm_eps: default_ln_eps(),
        }
    }

    /// Longest state that still leaves room for a full response.
    pub fn max_state(&self) -> usize {
        self.max_context - self.max_response
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::InvalidConfig(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", self.vocab_size));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.layers == 0 || self.ff_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.max_response == 0 || self.max_context < self.max_response + 4 {
            return bad(format!(
                "max_context {} must hold a 4-token state plus max_response {}",
                self.max_context, self.max_response
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}

const PER_LAYER: usize = 16;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const W1: usize = 12;
const B1: usize = 13;
const W2: usize = 14;
const B2: usize = 15;

/// Decoder-only transformer language model: token and position embeddings,
/// pre-norm attention/feed-forward blocks with tanh, final norm and a linear
/// head over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T: Real> {
    config: PolicyConfig,
    params: ParamSet<T>,
}

impl<T: Real> Policy<T> {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d, f) = (config.vocab_size, config.embed_dim, config.ff_dim);
        let mut p = ParamSet::new();
        p.push("tok_emb", uniform_init(vec![v, d], d, &mut rng));
        p.push("pos_emb", uniform_init(vec![config.max_context, d], d, &mut rng));
        for l in 0..config.layers {
            let n = |s: &str| format!("layer{l}.{s}");
            p.push(n("ln1.gain"), Tensor::filled(vec![d], T::one()));
            p.push(n("ln1.bias"), Tensor::zeros(vec![d]));
            for w in ["q", "k", "v", "o"] {
                p.push(n(&format!("attn.w{w}")), uniform_init(vec![d, d], d, &mut rng));
                p.push(n(&format!("attn.b{w}")), Tensor::zeros(vec![d]));
            }
            p.push(n("ln2.gain"), Tensor::filled(vec![d], T::one()));
            p.push(n("ln2.bias"), Tensor::zeros(vec![d]));
            p.push(n("ffn.w1"), uniform_init(vec![d, f], d, &mut rng));
            p.push(n("ffn.b1"), Tensor::zeros(vec![f]));
            p.push(n("ffn.w2"), uniform_init(vec![f, d], f, &mut rng));
            p.push(n("ffn.b2"), Tensor::zeros(vec![d]));
        }
        p.push("lnf.gain", Tensor::filled(vec![d], T::one()));
        p.push("lnf.bias", Tensor::zeros(vec![d]));
        p.push("head.w", uniform_init(vec![d, v], d, &mut rng));
        p.push("head.b", Tensor::zeros(vec![v]));
        Ok(Policy { config, params: p })
    }

    /// Rebuilds a policy around loaded parameters, checking names and shapes.
    pub fn from_params(config: PolicyConfig, params: ParamSet<T>) -> Result<Self, PolicyError> {
        let reference = Policy::<T>::new(config, 0)?;
        reference.params.check_compatible(&params)?;
        Ok(Policy { config, params })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn layer(&self, l: usize, which: usize) -> usize {
        2 + l * PER_LAYER + which
    }

    fn tail(&self, which: usize) -> usize {
        2 + self.config.layers * PER_LAYER + which
    }

    /// Zeroes the output head so every next-token distribution is uniform.
    pub fn zero_head(&mut self) {
        for i in [self.tail(2), self.tail(3)] {
            self.params
                .get_mut(i)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = T::zero());
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), PolicyError> {
        if tokens.is_empty() {
            return Err(PolicyError::EmptyInput);
        }
        if tokens.len() > self.config.max_context {
            return Err(PolicyError::ContextOverflow {
                len: tokens.len(),
                max: self.config.max_context,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(PolicyError::TokenOutOfRange {
                token: t,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Records the forward pass on `g` and returns the final hidden states
    /// `[tokens.len(), embed_dim]` (before the final norm).
    pub fn hidden_tape(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        tokens: &[usize],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, PolicyError> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let n = tokens.len();
        let d = cfg.embed_dim;
        let dh = d / cfg.heads;
        let eps: T = c(cfg.layer_norm_eps);
        let inv_sqrt: T = c(1.0 / (dh as f64).sqrt());
        let positions: Vec<usize> = (0..n).collect();

        let tok = g.embedding(vars[0], tokens)?;
        let pos = g.embedding(vars[1], &positions)?;
        let mut x = g.add(tok, pos)?;
        x = self.maybe_dropout(g, x, dropout.as_deref_mut())?;

        for l in 0..cfg.layers {
            let p = |w: usize| vars[self.layer(l, w)];
            let h = g.layer_norm(x, p(LN1_G), p(LN1_B), eps)?;
            let q = g.matmul(h, p(WQ))?;
            let q = g.add_row(q, p(BQ))?;
            let k = g.matmul(h, p(WK))?;
            let k = g.add_row(k, p(BK))?;
            let v = g.matmul(h, p(WV))?;
            let v = g.add_row(v, p(BV))?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let qh = g.slice_cols(q, hd * dh, dh)?;
                let kh = g.slice_cols(k, hd * dh, dh)?;
                let vh = g.slice_cols(v, hd * dh, dh)?;
                let s = g.matmul_nt(qh, kh)?;
                let s = g.affine(s, inv_sqrt, T::zero());
                let a = g.causal_softmax(s)?;
                heads.push(g.matmul(a, vh)?);
            }
            let o = g.concat_cols(&heads)?;
            let o = g.matmul(o, p(WO))?;
            let o = g.add_row(o, p(BO))?;
            let o = self.maybe_dropout(g, o, dropout.as_deref_mut())?;
            x = g.add(x, o)?;

            let h2 = g.layer_norm(x, p(LN2_G), p(LN2_B), eps)?;
            let f = g.matmul(h2, p(W1))?;
            let f = g.add_row(f, p(B1))?;
            let f = g.tanh(f);
            let f = g.matmul(f, p(W2))?;
            let f = g.add_row(f, p(B2))?;
            let f = self.maybe_dropout(g, f, dropout.as_deref_mut())?;
            x = g.add(x, f)?;
        }
        Ok(x)
    }

    /// Final norm and output head applied to hidden rows.
    pub fn head_tape(&self, g: &mut Graph<T>, vars: &[Var], hidden: Var) -> Result<Var, PolicyError> {
        let eps: T = c(self.config.layer_norm_eps);
        let h = g.layer_norm(hidden, vars[self.tail(0)], vars[self.tail(1)], eps)?;
        let logits = g.matmul(h, vars[self.tail(2)])?;
        Ok(g.add_row(logits, vars[self.tail(3)])?)
    }

    fn maybe_dropout(
        &self,
        g: &mut Graph<T>,
        x: Var,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NumError> {
        let rate = self.config.dropout;
        let Some(rng) = rng else { return Ok(x) };
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep: T = c(1.0 / (1.0 - rate));
        let shape = g.value(x).shape().to_vec();
        let mask = (0..g.value(x).numel())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mask = g.constant(Tensor::new(shape, mask)?);
        g.mul(x, mask)
    }

    /// Next-token logits at every position of `tokens`, shape `[len, vocab]`.
    pub fn forward_logits(&self, tokens: &[usize]) -> Result<Tensor<T>, PolicyError> {
        let mut g = Graph::new();
        let vars = g.bind(&self.params);
        let h = self.hidden_tape(&mut g, &vars, tokens, None)?;
        let logits = self.head_tape(&mut g, &vars, h)?;
        Ok(g.value(logits).clone())
    }

    /// Records the per-token log-probabilities of `response` given `state`,
    /// returning `(log_probs [1, L], logits [L, vocab])`.
    pub fn response_log_probs_tape(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        state: &[usize],
        response: &[usize],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var), PolicyError> {
        if response.is_empty() || state.is_empty() {
            return Err(PolicyError::EmptyInput);
        }
        let mut tokens = Vec::with_capacity(state.len() + response.len() - 1);
        tokens.extend_from_slice(state);
        tokens.extend_from_slice(&response[..response.len() - 1]);
        if let Some(&t) = response.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(PolicyError::TokenOutOfRange {
                token: t,
                vocab: self.config.vocab_size,
            });
        }
        let hidden = self.hidden_tape(g, vars, &tokens, dropout)?;
        let rows = g.slice_rows(hidden, state.len() - 1, response.len())?;
        let logits = self.head_tape(g, vars, rows)?;
        let lp = g.log_softmax_pick(logits, response)?;
        Ok((lp, logits))
    }

    /// Total and per-token log-probability of `response` given `state`.
    pub fn sequence_log_prob(
        &self,
        state: &[usize],
        response: &[usize],
    ) -> Result<(T, Vec<T>), PolicyError> {
        let mut g = Graph::new();
        let vars = g.bind(&self.params);
        let (lp, _) = self.response_log_probs_tape(&mut g, &vars, state, response, None)?;
        let per_token = g.value(lp).data().to_vec();
        let total = sum_in_order(&per_token);
        Ok((total, per_token))
    }

    /// Fresh incremental decoder with empty key/value caches.
    pub fn decoder(&self) -> Decoder<T> {
        let heads = self.config.heads;
        Decoder {
            pos: 0,
            keys: vec![vec![Vec::new(); heads]; self.config.layers],
            values: vec![vec![Vec::new(); heads]; self.config.layers],
        }
    }

    /// Feeds one token and returns the next-token logits. Produces bitwise the
    /// same row as [`Policy::forward_logits`] at that position.
    pub fn step(&self, dec: &mut Decoder<T>, token: usize) -> Result<Vec<T>, PolicyError> {
        let cfg = &self.config;
        if dec.pos >= cfg.max_context {
            return Err(PolicyError::ContextOverflow {
                len: dec.pos + 1,
                max: cfg.max_context,
            });
        }
        if token >= cfg.vocab_size {
            return Err(PolicyError::TokenOutOfRange {
                token,
                vocab: cfg.vocab_size,
            });
        }
        let d = cfg.embed_dim;
        let dh = d / cfg.heads;
        let eps: T = c(cfg.layer_norm_eps);
        let inv_sqrt: T = c(1.0 / (dh as f64).sqrt());
        let w = |i: usize| self.params.get(i).data();

        let tok = &w(0)[token * d..(token + 1) * d];
        let pos = &w(1)[dec.pos * d..(dec.pos + 1) * d];
        let mut x: Vec<T> = tok.iter().zip(pos).map(|(&a, &b)| a + b).collect();

        for l in 0..cfg.layers {
            let p = |k: usize| w(self.layer(l, k));
            let (h, _, _) = kernels::layer_norm(&x, p(LN1_G), p(LN1_B), eps);
            let proj = |wi: usize, bi: usize| {
                let mut o = kernels::matmul(&h, p(wi), 1, d, d);
                kernels::add_row_inplace(&mut o, p(bi));
                o
            };
            let q = proj(WQ, BQ);
            let k = proj(WK, BK);
            let v = proj(WV, BV);
            let mut concat = Vec::with_capacity(d);
            for hd in 0..cfg.heads {
                let kc = &mut dec.keys[l][hd];
                kc.extend_from_slice(&k[hd * dh..(hd + 1) * dh]);
                let vc = &mut dec.values[l][hd];
                vc.extend_from_slice(&v[hd * dh..(hd + 1) * dh]);
                let t = dec.pos + 1;
                let qh = &q[hd * dh..(hd + 1) * dh];
                let mut s = kernels::matmul_nt(qh, kc, 1, dh, t);
                s.iter_mut().for_each(|e| *e = inv_sqrt * *e + T::zero());
                kernels::softmax_inplace(&mut s);
                concat.extend(kernels::matmul(&s, vc, 1, t, dh));
            }
            let mut o = kernels::matmul(&concat, p(WO), 1, d, d);
            kernels::add_row_inplace(&mut o, p(BO));
            x = x.iter().zip(&o).map(|(&a, &b)| a + b).collect();

            let (h2, _, _) = kernels::layer_norm(&x, p(LN2_G), p(LN2_B), eps);
            let mut f = kernels::matmul(&h2, p(W1), 1, d, cfg.ff_dim);
            kernels::add_row_inplace(&mut f, p(B1));
            f.iter_mut().for_each(|e| *e = e.tanh());
            let mut f2 = kernels::matmul(&f, p(W2), 1, cfg.ff_dim, d);
            kernels::add_row_inplace(&mut f2, p(B2));
            x = x.iter().zip(&f2).map(|(&a, &b)| a + b).collect();
        }
        let (h, _, _) = kernels::layer_norm(&x, w(self.tail(0)), w(self.tail(1)), eps);
        let mut logits = kernels::matmul(&h, w(self.tail(2)), 1, d, cfg.vocab_size);
        kernels::add_row_inplace(&mut logits, w(self.tail(3)));
        dec.pos += 1;
        Ok(logits)
    }

    /// Feeds a whole prefix and returns the logits after its last token.
    pub fn prefill(&self, dec: &mut Decoder<T>, tokens: &[usize]) -> Result<Vec<T>, PolicyError> {
        self.check_tokens(tokens)?;
        let mut last = Vec::new();
        for &t in tokens {
            last = self.step(dec, t)?;
        }
        Ok(last)
    }
}

/// Key/value caches for incremental decoding.
#[derive(Debug, Clone)]
pub struct Decoder<T: Real> {
    pos: usize,
    keys: Vec<Vec<Vec<T>>>,
    values: Vec<Vec<Vec<T>>>,
}

impl<T: Real> Decoder<T> {
    pub fn position(&self) -> usize {
        self.pos
    }
}

pub(crate) fn sum_in_order<T: Real>(v: &[T]) -> T {
    let mut s = T::zero();
    for &x in v {
        s += x;
    }
    s
}
