//! Character-bigram set similarity and windowed similarity trajectories.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Bigrams = BTreeSet<(char, char)>;

pub fn bigrams(text: &str) -> Bigrams {
    let chars: Vec<char> = text.chars().collect();
    chars.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Jaccard index of two sets; two empty sets count as identical.
pub fn jaccard(a: &Bigrams, b: &Bigrams) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn text_similarity(a: &str, b: &str) -> f64 {
    jaccard(&bigrams(a), &bigrams(b))
}

/// Similarity of one window of generated texts to a reference set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSimilarity {
    pub start: usize,
    pub len: usize,
    /// Mean over every (generated, reference) pair.
    pub mean_sim: f64,
    /// Mean over generated texts of the best match in the reference set.
    pub max_sim: f64,
}

/// Splits `generated` into consecutive windows (the last may be shorter) and
/// scores each against `reference`.
pub fn similarity_report(generated: &[String], reference: &[String], window: usize) -> Result<Vec<WindowSimilarity>> {
    if window == 0 {
        return Err(Error::invalid("window", "must be at least 1"));
    }
    if reference.is_empty() {
        return Err(Error::invalid("reference", "must be non-empty"));
    }
    let refs: Vec<Bigrams> = reference.iter().map(|s| bigrams(s)).collect();
    Ok(generated
        .chunks(window)
        .enumerate()
        .map(|(w, chunk)| {
            let mut total = 0.0;
            let mut max_total = 0.0;
            for text in chunk {
                let b = bigrams(text);
                let sims: Vec<f64> = refs.iter().map(|r| jaccard(&b, r)).collect();
                total += sims.iter().sum::<f64>();
                max_total += sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
            WindowSimilarity {
                start: w * window,
                len: chunk.len(),
                mean_sim: total / (chunk.len() * refs.len()) as f64,
                max_sim: max_total / chunk.len() as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bigram_sets() {
        assert_eq!(bigrams("ABAB").len(), 2);
        assert!(bigrams("A").is_empty());
        assert_eq!(text_similarity("AB", "ABAB"), 0.5);
        assert_eq!(text_similarity("A", "B"), 1.0);
        assert_eq!(text_similarity("A", "AB"), 0.0);
    }

    #[test]
    fn self_similarity() {
        let r = similarity_report(&strings(&["CCO"]), &strings(&["CCO", "NN"]), 10).unwrap();
        assert_eq!(r[0].max_sim, 1.0);
        assert_eq!(r[0].mean_sim, 0.5);
    }

    #[test]
    fn disjoint() {
        let r = similarity_report(&strings(&["AB", "BA"]), &strings(&["CD"]), 10).unwrap();
        assert_eq!((r[0].mean_sim, r[0].max_sim), (0.0, 0.0));
    }

    #[test]
    fn hand_enumerated() {
        // generated: ABC {AB,BC}, BCD {BC,CD}, AAA {AA}
        // reference: ABCD {AB,BC,CD}, AA {AA}
        // pairwise: ABC 2/3, 0; BCD 2/3, 0; AAA 0, 1
        let r = similarity_report(&strings(&["ABC", "BCD", "AAA"]), &strings(&["ABCD", "AA"]), 10).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].mean_sim - (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 6.0).abs() < 1e-15);
        assert!((r[0].max_sim - (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn windows_and_partial_tail() {
        let gen = strings(&["AB", "AB", "CD", "CD", "CD"]);
        let r = similarity_report(&gen, &strings(&["AB"]), 2).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!((r[0].start, r[0].len, r[0].max_sim), (0, 2, 1.0));
        assert_eq!((r[2].start, r[2].len, r[2].max_sim), (4, 1, 0.0));
        assert!(similarity_report(&gen, &strings(&["AB"]), 0).is_err());
    }
}
