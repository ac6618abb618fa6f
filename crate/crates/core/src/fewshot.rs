//! Episodic N-way K-shot evaluation of frozen embeddings.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

/// One line of an embeddings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub class: String,
    pub z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<BTreeMap<String, f64>>,
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { offset: i, message: format!("line {}: {e}", i + 1) })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_embeddings<W: Write>(mut w: W, records: &[EmbeddingRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Episode-local labels run `0..n`; `classes[label]` is the global name.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub classes: Vec<String>,
    pub support: Vec<(Vec<f64>, usize)>,
    pub query: Vec<(Vec<f64>, usize)>,
    pub support_ids: Vec<String>,
    pub query_ids: Vec<String>,
}

/// Draws `n` classes, then `k + q` examples per class, all without
/// replacement. Classes are considered in sorted name order.
pub fn sample_episode(pool: &[EmbeddingRecord], n: usize, k: usize, q: usize, rng: &mut Rng) -> Result<Episode> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidInput("episodes need n ≥ 1 and k ≥ 1".into()));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in pool.iter().enumerate() {
        by_class.entry(&r.class).or_default().push(i);
    }
    let eligible: Vec<(&str, &Vec<usize>)> = by_class.iter().filter(|(_, v)| v.len() >= k + q).map(|(c, v)| (*c, v)).collect();
    if eligible.len() < n {
        let deficient = by_class.iter().find(|(_, v)| v.len() < k + q).map(|(c, v)| format!("class '{c}' has {} examples", v.len()));
        return Err(Error::InvalidInput(format!(
            "{n}-way {k}-shot with {q} queries needs {n} classes with ≥{} examples; only {} qualify{}",
            k + q,
            eligible.len(),
            deficient.map(|d| format!(" ({d})")).unwrap_or_default()
        )));
    }
    let mut ep = Episode { classes: Vec::new(), support: Vec::new(), query: Vec::new(), support_ids: Vec::new(), query_ids: Vec::new() };
    for (label, ci) in index::sample(rng, eligible.len(), n).into_iter().enumerate() {
        let (name, members) = eligible[ci];
        ep.classes.push(name.to_string());
        for (j, mi) in index::sample(rng, members.len(), k + q).into_iter().enumerate() {
            let r = &pool[members[mi]];
            if j < k {
                ep.support.push((r.z.clone(), label));
                ep.support_ids.push(r.id.clone());
            } else {
                ep.query.push((r.z.clone(), label));
                ep.query_ids.push(r.id.clone());
            }
        }
    }
    Ok(ep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub n: usize,
    pub d: usize,
    /// Row-major `n × d`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.d {
            return Err(Error::ShapeMismatch(format!("embedding has {} values, head expects {}", z.len(), self.d)));
        }
        Ok((0..self.n).map(|c| self.bias[c] + self.weights[c * self.d..(c + 1) * self.d].iter().zip(z).map(|(w, x)| w * x).sum::<f64>()).collect())
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        let l = self.logits(z)?;
        let mut best = 0;
        for (c, v) in l.iter().enumerate() {
            if *v > l[best] {
                best = c;
            }
        }
        Ok(best)
    }
}

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_LR: f64 = 0.5;

/// Full-batch gradient descent on mean softmax cross-entropy from zeros.
pub fn fit_linear(support: &[(Vec<f64>, usize)], n_classes: usize, epochs: usize, lr: f64) -> Result<LinearHead> {
    let d = support.first().map(|(z, _)| z.len()).ok_or_else(|| Error::InvalidInput("empty support set".into()))?;
    if support.iter().any(|(z, c)| z.len() != d || *c >= n_classes) {
        return Err(Error::ShapeMismatch("support embeddings must share one dimension and labels must be < n".into()));
    }
    let mut head = LinearHead { n: n_classes, d, weights: vec![0.0; n_classes * d], bias: vec![0.0; n_classes] };
    let m = support.len() as f64;
    for _ in 0..epochs {
        let mut gw = vec![0.0; n_classes * d];
        let mut gb = vec![0.0; n_classes];
        for (z, y) in support {
            let p = crate::mdn::softmax(&head.logits(z)?);
            for c in 0..n_classes {
                let e = (p[c] - if c == *y { 1.0 } else { 0.0 }) / m;
                gb[c] += e;
                for (g, x) in gw[c * d..(c + 1) * d].iter_mut().zip(z) {
                    *g += e * x;
                }
            }
        }
        for (w, g) in head.weights.iter_mut().zip(&gw) {
            *w -= lr * g;
        }
        for (b, g) in head.bias.iter_mut().zip(&gb) {
            *b -= lr * g;
        }
    }
    Ok(head)
}

/// Fraction of correctly classified queries.
pub fn eval_episode(ep: &Episode, head: &LinearHead) -> Result<f64> {
    if ep.query.is_empty() {
        return Err(Error::InvalidInput("episode has no queries".into()));
    }
    let mut correct = 0;
    for (z, y) in &ep.query {
        if head.predict(z)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / ep.query.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewshotConfig {
    pub n: usize,
    pub k: usize,
    pub q: usize,
    pub episodes: usize,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for FewshotConfig {
    fn default() -> Self {
        FewshotConfig { n: 5, k: 1, q: 5, episodes: 500, seed: 0, epochs: DEFAULT_EPOCHS, lr: DEFAULT_LR }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent.
    pub mean: f64,
    /// 95% normal-approximation half-width, percent.
    pub ci95: f64,
    pub episodes: usize,
    pub n: usize,
    pub k: usize,
    pub q: usize,
    pub seed: u64,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.ci95)
    }
}

pub const REPORT_CSV_HEADER: &str = "n,k,q,episodes,seed,mean,ci95";

impl EvalReport {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{:.4},{:.4}", self.n, self.k, self.q, self.episodes, self.seed, self.mean, self.ci95)
    }
}

/// Mean and `1.96 · stderr` of per-episode accuracies, in percent.
pub fn summarize(accs: &[f64]) -> (f64, f64) {
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    if accs.len() < 2 {
        return (100.0 * mean, 0.0);
    }
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (100.0 * mean, 100.0 * 1.96 * (var / n).sqrt())
}

/// Episode `i` draws from its own stream, so results do not depend on
/// evaluation order.
pub fn run_eval(pool: &[EmbeddingRecord], cfg: &FewshotConfig) -> Result<EvalReport> {
    if cfg.episodes == 0 {
        return Err(Error::InvalidInput("episode count must be positive".into()));
    }
    let mut accs = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes {
        let mut rng = stream(cfg.seed, "episode", i as u64);
        let ep = sample_episode(pool, cfg.n, cfg.k, cfg.q, &mut rng)?;
        let head = fit_linear(&ep.support, cfg.n, cfg.epochs, cfg.lr)?;
        accs.push(eval_episode(&ep, &head)?);
    }
    let (mean, ci95) = summarize(&accs);
    Ok(EvalReport { mean, ci95, episodes: cfg.episodes, n: cfg.n, k: cfg.k, q: cfg.q, seed: cfg.seed })
}
