//! Brute-force reference implementations used as test oracles. Written
//! independently of the library: no shared helpers, simplest possible
//! counting.
#![allow(dead_code)]

use rand::Rng;

pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if n == 0 || t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Clipped matches: for each distinct hypothesis n-gram, min of the two counts.
fn clipped(h: &[Vec<String>], r: &[Vec<String>]) -> usize {
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut total = 0;
    for g in h {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        total += occurrences(h, g).min(occurrences(r, g));
    }
    total
}

fn f1(overlap: usize, hyp_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 || hyp_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_n(hyp: &str, reference: &str, n: usize) -> f64 {
    let h = grams(&words(hyp), n);
    let r = grams(&words(reference), n);
    f1(clipped(&h, &r), h.len(), r.len())
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|o| o == *s))
}

/// LCS by enumerating every subsequence of the shorter side.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "brute-force LCS oracle only for short inputs");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<&String> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| &short[i]).collect();
        if is_subsequence(&sub, long) {
            best = len;
        }
    }
    best
}

pub fn rouge_l(hyp: &str, reference: &str) -> f64 {
    let h = words(hyp);
    let r = words(reference);
    f1(lcs(&h, &r), h.len(), r.len())
}

/// Sentence BLEU, 4 orders, uniform weights. Orders with no hypothesis
/// n-grams are dropped; zero matches count as `eps`.
pub fn bleu(hyp: &str, reference: &str, eps: f64) -> f64 {
    let h = words(hyp);
    let r = words(reference);
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 1..=4 {
        let hg = grams(&h, n);
        if hg.is_empty() {
            continue;
        }
        let m = clipped(&hg, &grams(&r, n));
        let m = if m == 0 { eps } else { m as f64 };
        logs.push((m / hg.len() as f64).ln());
    }
    let bp = if h.len() >= r.len() { 1.0 } else { (1.0 - r.len() as f64 / h.len() as f64).exp() };
    bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

pub fn distinct(hyps: &[String], n: usize) -> f64 {
    let all: Vec<Vec<String>> = hyps.iter().flat_map(|h| grams(&words(h), n)).collect();
    if all.is_empty() {
        return 0.0;
    }
    let unique = (0..all.len()).filter(|&i| !all[..i].contains(&all[i])).count();
    unique as f64 / all.len() as f64
}

/// A short sentence over a tiny vocabulary so overlaps are common; random
/// casing and punctuation exercise tokenization.
pub fn random_sentence<R: Rng>(rng: &mut R, max_len: usize) -> String {
    const VOCAB: [&str; 6] = ["the", "cat", "sat", "on", "mat", "a"];
    let len = rng.random_range(0..=max_len);
    let mut s = String::new();
    for i in 0..len {
        if i > 0 {
            s.push_str([" ", " ", ", ", " - "][rng.random_range(0..4)]);
        }
        let w = VOCAB[rng.random_range(0..VOCAB.len())];
        if rng.random_bool(0.2) {
            s.push_str(&w.to_uppercase());
        } else {
            s.push_str(w);
        }
    }
    if rng.random_bool(0.3) {
        s.push('.');
    }
    s
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}
