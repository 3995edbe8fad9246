//! Perplexity, corpus BLEU-4 and the per-depth evaluation report.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::Real;
use crate::policy::{sample_response, Policy, PolicyError};
use crate::textdata::{encode, EncodeLimits, Trajectory, Vocab, EOS};

/// Token probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub value: f64,
    /// Tokens whose probability was raised to [`PROB_FLOOR`].
    pub clamped: usize,
}

/// `exp(-(1/t) Σ ln p_i)` over per-token probabilities.
pub fn perplexity(probs: &[f64]) -> Result<Perplexity, EvalError> {
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(EvalError::InvalidProbability(p));
    }
    let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    perplexity_from_log_probs(&logs)
}

/// [`perplexity`] from natural-log probabilities.
pub fn perplexity_from_log_probs(log_probs: &[f64]) -> Result<Perplexity, EvalError> {
    if log_probs.is_empty() {
        return Err(EvalError::Empty("token sequence"));
    }
    let floor = PROB_FLOOR.ln();
    let mut clamped = 0;
    let mut sum = 0.0;
    for &l in log_probs {
        if l.is_nan() || l > 0.0 {
            return Err(EvalError::InvalidProbability(l.exp()));
        }
        if l < floor {
            clamped += 1;
            sum += floor;
        } else {
            sum += l;
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} token probabilities clamped to {PROB_FLOOR}");
    }
    Ok(Perplexity {
        value: (-sum / log_probs.len() as f64).exp(),
        clamped,
    })
}

fn ngrams<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and total candidate n-grams summed over the corpus.
pub fn clipped_counts<T: Eq + Hash + Clone>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    n: usize,
) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for (c, r) in candidates.iter().zip(references) {
        let rc = ngrams(r, n);
        for (g, k) in ngrams(c, n) {
            hits += k.min(rc.get(g).copied().unwrap_or(0));
            total += k;
        }
    }
    (hits, total)
}

/// Corpus BLEU-4 scaled to `[0, 100]`: clipped precisions (add-one smoothed for
/// n >= 2), geometric mean and brevity penalty `exp(min(0, 1 - ref/cand))`.
pub fn bleu<T: Eq + Hash + Clone>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(EvalError::Empty("corpus"));
    }
    let cand_len: usize = candidates.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (hits, total) = clipped_counts(candidates, references, n);
        let p = if n == 1 {
            hits as f64 / total as f64
        } else {
            (hits as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln() / 4.0;
    }
    let bp = (1.0 - ref_len as f64 / cand_len as f64).min(0.0);
    Ok((100.0 * (log_sum + bp).exp()).min(100.0))
}

/// Conversation depth: how many complete turns precede the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TurnBucket {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3+")]
    ThreePlus,
}

impl TurnBucket {
    pub const ALL: [TurnBucket; 3] = [TurnBucket::One, TurnBucket::Two, TurnBucket::ThreePlus];

    pub fn of(traj: &Trajectory) -> Self {
        match traj.prior_turns() {
            0 => TurnBucket::One,
            1 => TurnBucket::Two,
            _ => TurnBucket::ThreePlus,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TurnBucket::One => "1 turn",
            TurnBucket::Two => "2 turn",
            TurnBucket::ThreePlus => "3+ turn",
        }
    }
}

impl fmt::Display for TurnBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Partitions trajectories by [`TurnBucket`], preserving order within each.
pub fn bucket_by_turns(trajectories: &[Trajectory]) -> [Vec<Trajectory>; 3] {
    let mut out: [Vec<Trajectory>; 3] = Default::default();
    for t in trajectories {
        out[TurnBucket::of(t) as usize].push(t.clone());
    }
    out
}

/// Mean over seeds; the sample standard deviation only with two or more seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    pub per_seed: Vec<f64>,
}

impl Stat {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() >= 2).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Stat {
            mean,
            sd,
            per_seed: values,
        }
    }

    fn show(&self) -> String {
        match self.sd {
            Some(sd) => format!("{:.2} ± {:.2}", self.mean, sd),
            None => format!("{:.2}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: TurnBucket,
    pub count: usize,
    pub perplexity: Stat,
    pub bleu: Stat,
    /// `100 - bleu`; lower is better.
    pub bleu_error: Stat,
    pub clamped_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub temperature: f64,
    /// Non-empty buckets only; an empty bucket is absent, not zero.
    pub buckets: Vec<BucketReport>,
    /// Perplexity of the uniform policy, which equals the vocabulary size.
    pub uniform_perplexity: f64,
}

impl EvalReport {
    pub fn bucket(&self, b: TurnBucket) -> Option<&BucketReport> {
        self.buckets.iter().find(|r| r.bucket == b)
    }

    /// One JSON record per bucket followed by the uniform-model sanity row.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for b in &self.buckets {
            let mut v = serde_json::to_value(b).expect("report serializes");
            v["model"] = "policy".into();
            v["temperature"] = self.temperature.into();
            v["seeds"] = serde_json::to_value(&self.seeds).expect("seeds serialize");
            s.push_str(&v.to_string());
            s.push('\n');
        }
        let sanity = serde_json::json!({
            "model": "uniform",
            "perplexity": self.uniform_perplexity,
        });
        s.push_str(&sanity.to_string());
        s.push('\n');
        s
    }

    /// Aligned text table with one row per bucket and one sanity row.
    pub fn to_table(&self) -> String {
        let header = ["Model", "Turns", "Count", "Perplexity", "BLEU", "BLEU error"];
        let mut rows: Vec<[String; 6]> = Vec::new();
        for b in TurnBucket::ALL {
            match self.bucket(b) {
                Some(r) => rows.push([
                    "policy".into(),
                    b.label().into(),
                    r.count.to_string(),
                    r.perplexity.show(),
                    r.bleu.show(),
                    r.bleu_error.show(),
                ]),
                None => rows.push([
                    "policy".into(),
                    b.label().into(),
                    "0".into(),
                    "absent".into(),
                    "absent".into(),
                    "absent".into(),
                ]),
            }
        }
        rows.push([
            "uniform".into(),
            "all".into(),
            "-".into(),
            format!("{:.2}", self.uniform_perplexity),
            "-".into(),
            "-".into(),
        ]);
        let mut width = header.map(str::len);
        for r in &rows {
            for (w, cell) in width.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let line = |cells: &[&str], out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&width)
                .map(|(c, w)| format!("{c:<w$}", w = *w))
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header, &mut out);
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        let rule: Vec<&str> = rule.iter().map(String::as_str).collect();
        line(&rule, &mut out);
        for r in &rows {
            let cells: Vec<&str> = r.iter().map(String::as_str).collect();
            line(&cells, &mut out);
        }
        let _ = writeln!(out, "seeds: {:?}, temperature {}", self.seeds, self.temperature);
        out
    }
}

/// Teacher-forced perplexity of the reference responses.
pub fn reference_perplexity<T: Real>(
    policy: &Policy<T>,
    trajectories: &[Trajectory],
    vocab: &Vocab,
    limits: EncodeLimits,
) -> Result<Perplexity, EvalError> {
    let per: Vec<Result<Vec<f64>, PolicyError>> = trajectories
        .par_iter()
        .map(|t| {
            let p = encode(t, vocab, limits);
            let (_, lps) = policy.sequence_log_prob(&p.state, &p.target)?;
            Ok(lps.iter().map(|l| l.as_f64()).collect())
        })
        .collect();
    let mut all = Vec::new();
    for r in per {
        all.extend(r?);
    }
    perplexity_from_log_probs(&all)
}

fn canonical(trajectories: &[Trajectory]) -> Vec<Trajectory> {
    let mut v = trajectories.to_vec();
    v.sort_by(|a, b| {
        (&a.conversation_id, a.turn, &a.prompt, &a.response, &a.history)
            .cmp(&(&b.conversation_id, b.turn, &b.prompt, &b.response, &b.history))
    });
    v
}

fn strip_eos(mut v: Vec<usize>) -> Vec<usize> {
    if v.last() == Some(&EOS) {
        v.pop();
    }
    v
}

/// Per bucket and seed: reference perplexity and BLEU of sampled responses.
/// Results do not depend on the input order.
pub fn evaluate_model<T: Real>(
    policy: &Policy<T>,
    vocab: &Vocab,
    limits: EncodeLimits,
    test: &[Trajectory],
    seeds: &[u64],
    temperature: f64,
) -> Result<EvalReport, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::Empty("seed list"));
    }
    if test.is_empty() {
        return Err(EvalError::Empty("test set"));
    }
    let sorted = canonical(test);
    let zs: Vec<Vec<u64>> = seeds
        .iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            sorted.iter().map(|_| rng.gen()).collect()
        })
        .collect();
    let mut buckets = Vec::new();
    for b in TurnBucket::ALL {
        let members: Vec<(usize, &Trajectory)> = sorted
            .iter()
            .enumerate()
            .filter(|(_, t)| TurnBucket::of(t) == b)
            .collect();
        if members.is_empty() {
            continue;
        }
        let owned: Vec<Trajectory> = members.iter().map(|(_, t)| (*t).clone()).collect();
        let ppl = reference_perplexity(policy, &owned, vocab, limits)?;
        let encoded: Vec<_> = owned.iter().map(|t| encode(t, vocab, limits)).collect();
        let refs: Vec<Vec<usize>> = encoded.iter().map(|p| strip_eos(p.target.clone())).collect();
        let mut bleus = Vec::with_capacity(seeds.len());
        for z in &zs {
            let cands: Result<Vec<Vec<usize>>, PolicyError> = members
                .par_iter()
                .zip(&encoded)
                .map(|((i, _), p)| {
                    let g = sample_response(policy, &p.state, z[*i], temperature)?;
                    Ok(strip_eos(g.response))
                })
                .collect();
            bleus.push(bleu(&cands?, &refs)?);
        }
        let errors = bleus.iter().map(|b| 100.0 - b).collect();
        buckets.push(BucketReport {
            bucket: b,
            count: members.len(),
            perplexity: Stat::from_values(vec![ppl.value; seeds.len()]),
            bleu: Stat::from_values(bleus),
            bleu_error: Stat::from_values(errors),
            clamped_tokens: ppl.clamped,
        });
    }
    let v = policy.config().vocab_size as f64;
    Ok(EvalReport {
        seeds: seeds.to_vec(),
        temperature,
        buckets,
        uniform_perplexity: perplexity_from_log_probs(&[-v.ln()])?.value,
    })
}
