use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::prompt::parse_generation_prompt;
use super::{Backend, GenRequest};
use crate::error::Result;

/// Fraction of demonstration tokens the mock replaces for a given seed:
/// `0.1 · (seed mod 5)`.
pub fn noise_fraction(seed: u64) -> f64 {
    0.1 * (seed % 5) as f64
}

/// Deterministic stand-in for a frozen LLM.
///
/// It echoes the demonstration output ỹ of the prompt, replacing a
/// seed-determined fraction of its whitespace tokens: the token at a chosen
/// position `i` becomes word `i mod n` of the prompt's input text (or a
/// placeholder when the input is empty). With `seed mod 5 == 0` the output
/// is ỹ verbatim. Positions depend only on the seed and the length of ỹ.
#[derive(Debug, Clone, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn new() -> Self {
        Self
    }
}

pub fn mock_generate(req: &GenRequest) -> Result<String> {
    let parsed = parse_generation_prompt(&req.prompt)?;
    let rho = noise_fraction(req.seed);
    if rho == 0.0 {
        return Ok(parsed.example_target.to_string());
    }
    let mut words: Vec<&str> = parsed.example_target.split_whitespace().collect();
    let replace = (rho * words.len() as f64).round() as usize;
    if replace == 0 {
        return Ok(parsed.example_target.to_string());
    }
    let input: Vec<&str> = parsed.input.split_whitespace().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let positions = sample(&mut rng, words.len(), replace);
    let placeholders: Vec<String> = positions.iter().map(|p| format!("noise{p}")).collect();
    for (pos, placeholder) in positions.into_iter().zip(&placeholders) {
        words[pos] = if input.is_empty() { placeholder } else { input[pos % input.len()] };
    }
    Ok(words.join(" "))
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn complete(&self, req: &GenRequest) -> Result<String> {
        mock_generate(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaskKind;
    use crate::error::Error;
    use crate::generator::prompt::{build_generation_prompt, PromptTemplates};
    use crate::metrics::{Metric, MetricKind};

    fn req(prompt: String, seed: u64) -> GenRequest {
        GenRequest { prompt, temperature: 0.8, seed, max_tokens: 64 }
    }

    fn prompt(x: &str, target: &str) -> String {
        build_generation_prompt(&PromptTemplates::default(), TaskKind::Summarization, x, "memory source", target)
    }

    #[test]
    fn zero_noise_passes_demonstration_through() {
        let target = "the  exact stored target, with punctuation";
        for seed in [0, 5, 10, 1_000_000_000] {
            assert_eq!(mock_generate(&req(prompt("query words", target), seed)).unwrap(), target);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = prompt("alpha beta gamma", "one two three four five six seven eight nine ten");
        for seed in 0..20 {
            assert_eq!(mock_generate(&req(p.clone(), seed)).unwrap(), mock_generate(&req(p.clone(), seed)).unwrap());
        }
    }

    #[test]
    fn replaces_the_seeded_fraction() {
        let target = "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9";
        let p = prompt("q0 q1 q2", target);
        for seed in 0..5u64 {
            let out = mock_generate(&req(p.clone(), seed)).unwrap();
            let changed = out.split_whitespace().zip(target.split_whitespace()).filter(|(a, b)| a != b).count();
            assert_eq!(changed, seed as usize, "seed {seed}");
            assert!(out.split_whitespace().all(|w| w.starts_with('w') || w.starts_with('q')));
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_candidates() {
        let p = prompt("q0 q1 q2 q3", "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9");
        let outs: Vec<String> = (100..105).map(|s| mock_generate(&req(p.clone(), s)).unwrap()).collect();
        for i in 0..outs.len() {
            for j in i + 1..outs.len() {
                assert_ne!(outs[i], outs[j]);
            }
        }
    }

    #[test]
    fn more_noise_scores_lower_on_average() {
        let reference = "a b c d e f g h i j k l m n o p q r s t";
        let p = prompt("z1 z2 z3 z4 z5", reference);
        let metric = Metric::new(MetricKind::Rouge1);
        let mut by_rho = [0.0f64; 5];
        for seed in 0..100u64 {
            let out = mock_generate(&req(p.clone(), seed)).unwrap();
            by_rho[(seed % 5) as usize] += metric.delta(&out, reference) / 20.0;
        }
        for w in by_rho.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{by_rho:?}");
        }
        assert!((by_rho[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn replacements_copy_the_aligned_input_word() {
        let target = "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9";
        let p = prompt("i0 i1 i2 i3", target);
        let out = mock_generate(&req(p.clone(), 4)).unwrap();
        for (i, w) in out.split_whitespace().enumerate() {
            assert!(w == format!("w{i}") || w == format!("i{}", i % 4), "{out}");
        }
        let empty_input = build_generation_prompt(&PromptTemplates::default(), TaskKind::Summarization, "", "s", target);
        assert!(mock_generate(&req(empty_input, 3)).unwrap().contains("noise"));
    }

    #[test]
    fn unparsable_prompt() {
        assert!(matches!(mock_generate(&req("no template here".into(), 1)), Err(Error::UnparsablePrompt(_))));
    }
}
