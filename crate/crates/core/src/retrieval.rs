//! Resource retrieval scoring.

use std::collections::BTreeSet;

/// Scores how well a resource's text matches a query. Higher is better.
pub trait RetrievalScorer: Send + Sync {
    fn score(&self, query: &str, document: &str) -> f64;
}

/// Case-folded token-set Jaccard overlap, |Q ∩ D| / |Q ∪ D|.
#[derive(Debug, Default, Clone, Copy)]
pub struct LexicalScorer;

impl RetrievalScorer for LexicalScorer {
    fn score(&self, query: &str, document: &str) -> f64 {
        let q = token_set(query);
        let d = token_set(document);
        let union = q.union(&d).count();
        if union == 0 {
            return 0.0;
        }
        q.intersection(&d).count() as f64 / union as f64
    }
}

/// Lowercased alphanumeric runs; `csv_parser` yields `csv` and `parser`.
pub fn token_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sort by descending score, then ascending name, and keep the first `k`.
pub fn rank(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_by_hand() {
        // Q = {parse, csv, file}; D = {csv, parser, reads, files} -> 1 / 6
        let s = LexicalScorer.score("parse csv file", "csv_parser reads files");
        assert!((s - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(LexicalScorer.score("", ""), 0.0);
        assert_eq!(LexicalScorer.score("Web SEARCH", "web search"), 1.0);
    }

    #[test]
    fn ranking_ties_by_name() {
        let r = rank(vec![("b".into(), 0.5), ("a".into(), 0.5), ("c".into(), 0.9)], 3);
        let names: Vec<&str> = r.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["c", "a", "b"]);
        assert_eq!(rank(r, 1).len(), 1);
    }
}
