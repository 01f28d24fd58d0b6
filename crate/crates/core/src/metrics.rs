//! Text generation metrics: ROUGE-1/2/L, BLEU and Distinct-n.
//!
//! Every metric tokenizes with [`crate::text::tokenize`] and returns a score
//! in `[0, 1]`. [`Metric::delta`] is the reward signal used by both agents.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::text::{ngrams, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Rouge1,
    Rouge2,
    #[serde(rename = "rougeL")]
    RougeL,
    Bleu,
    Distinct1,
    Distinct2,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Rouge1,
        MetricKind::Rouge2,
        MetricKind::RougeL,
        MetricKind::Bleu,
        MetricKind::Distinct1,
        MetricKind::Distinct2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Rouge1 => "rouge1",
            MetricKind::Rouge2 => "rouge2",
            MetricKind::RougeL => "rougeL",
            MetricKind::Bleu => "bleu",
            MetricKind::Distinct1 => "distinct1",
            MetricKind::Distinct2 => "distinct2",
        }
    }

    /// Distinct-n is a property of a set of hypotheses, not of a
    /// hypothesis/reference pair.
    pub fn is_corpus_level(self) -> bool {
        matches!(self, MetricKind::Distinct1 | MetricKind::Distinct2)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RougeMode {
    #[default]
    F1,
    Recall,
}

impl FromStr for RougeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(RougeMode::F1),
            "recall" => Ok(RougeMode::Recall),
            _ => Err(Error::InvalidConfig(format!("unknown rouge mode `{s}`"))),
        }
    }
}

/// Sentence-BLEU settings. `epsilon` replaces zero clipped counts so that a
/// single missing n-gram order does not zero the geometric mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub epsilon: f64,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self { max_n: 4, epsilon: 1e-9 }
    }
}

/// A fully specified Δ: which metric, plus the knobs that change its value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    #[serde(default)]
    pub rouge_mode: RougeMode,
    #[serde(default)]
    pub bleu: BleuConfig,
}

impl Metric {
    pub fn new(kind: MetricKind) -> Self {
        Self { kind, rouge_mode: RougeMode::F1, bleu: BleuConfig::default() }
    }

    /// Δ(hyp, ref). Distinct kinds score `hyp` as a one-element corpus and
    /// ignore the reference.
    pub fn delta(&self, hyp: &str, reference: &str) -> f64 {
        match self.kind {
            MetricKind::Rouge1 => rouge_n(hyp, reference, 1, self.rouge_mode),
            MetricKind::Rouge2 => rouge_n(hyp, reference, 2, self.rouge_mode),
            MetricKind::RougeL => rouge_l(hyp, reference, self.rouge_mode),
            MetricKind::Bleu => bleu_with(hyp, reference, self.bleu),
            MetricKind::Distinct1 => distinct_n(&[hyp], 1),
            MetricKind::Distinct2 => distinct_n(&[hyp], 2),
        }
    }
}

fn count_ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in ngrams(tokens, n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

fn clipped_overlap(hyp: &HashMap<&[String], usize>, reference: &HashMap<&[String], usize>) -> usize {
    hyp.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

fn combine(overlap: usize, hyp_total: usize, ref_total: usize, mode: RougeMode) -> f64 {
    if hyp_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let recall = overlap as f64 / ref_total as f64;
    match mode {
        RougeMode::Recall => recall,
        RougeMode::F1 => {
            let precision = overlap as f64 / hyp_total as f64;
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        }
    }
}

pub fn rouge_n(hyp: &str, reference: &str, n: usize, mode: RougeMode) -> f64 {
    let h = tokenize(hyp);
    let r = tokenize(reference);
    let hc = count_ngrams(&h, n);
    let rc = count_ngrams(&r, n);
    let overlap = clipped_overlap(&hc, &rc);
    combine(overlap, hc.values().sum(), rc.values().sum(), mode)
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(hyp: &str, reference: &str, mode: RougeMode) -> f64 {
    let h = tokenize(hyp);
    let r = tokenize(reference);
    combine(lcs_len(&h, &r), h.len(), r.len(), mode)
}

pub fn bleu(hyp: &str, reference: &str) -> f64 {
    bleu_with(hyp, reference, BleuConfig::default())
}

/// Sentence-level BLEU.
///
/// Uses the effective order: n-gram orders for which the hypothesis has no
/// n-grams at all are left out of the geometric mean. Zero clipped counts
/// are replaced by `cfg.epsilon`.
pub fn bleu_with(hyp: &str, reference: &str, cfg: BleuConfig) -> f64 {
    let h = tokenize(hyp);
    let r = tokenize(reference);
    let mut stats = BleuStats::new(cfg.max_n);
    stats.add(&h, &r);
    stats.score(cfg.epsilon)
}

/// Clipped n-gram counts accumulated over one or more hypothesis/reference
/// pairs. Corpus BLEU sums these before combining.
#[derive(Debug, Clone)]
pub struct BleuStats {
    matches: Vec<usize>,
    totals: Vec<usize>,
    hyp_len: usize,
    ref_len: usize,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        Self { matches: vec![0; max_n], totals: vec![0; max_n], hyp_len: 0, ref_len: 0 }
    }

    pub fn add(&mut self, hyp: &[String], reference: &[String]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=self.matches.len() {
            let hc = count_ngrams(hyp, n);
            let rc = count_ngrams(reference, n);
            self.matches[n - 1] += clipped_overlap(&hc, &rc);
            self.totals[n - 1] += hc.values().sum::<usize>();
        }
    }

    pub fn score(&self, epsilon: f64) -> f64 {
        if self.hyp_len == 0 || self.ref_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0usize;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if t == 0 {
                continue;
            }
            let m = if m == 0 { epsilon } else { m as f64 };
            log_sum += (m / t as f64).ln();
            orders += 1;
        }
        if orders == 0 {
            return 0.0;
        }
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        (bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0)
    }
}

/// Corpus BLEU over aligned hypothesis/reference lists.
pub fn corpus_bleu<S: AsRef<str>>(hyps: &[S], refs: &[S], cfg: BleuConfig) -> f64 {
    let mut stats = BleuStats::new(cfg.max_n);
    for (h, r) in hyps.iter().zip(refs) {
        stats.add(&tokenize(h.as_ref()), &tokenize(r.as_ref()));
    }
    stats.score(cfg.epsilon)
}

pub fn distinct_n<S: AsRef<str>>(hyps: &[S], n: usize) -> f64 {
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for h in hyps {
        let tokens = tokenize(h.as_ref());
        for g in ngrams(&tokens, n) {
            total += 1;
            seen.insert(g.to_vec());
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}
