//! Token-level text similarity and exact-match reward.

/// Case-folded whitespace tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Levenshtein distance over token sequences (insert, delete, substitute all cost 1).
pub fn token_levenshtein(a: &[String], b: &[String]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ta) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta != tb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// η(a, b) = 1 − lev(tokens a, tokens b) / max(|tokens a|, |tokens b|, 1).
pub fn similarity(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    let denom = ta.len().max(tb.len()).max(1);
    1.0 - token_levenshtein(&ta, &tb) as f64 / denom as f64
}

/// 1 when the trimmed, case-folded texts are equal, else 0.
pub fn reward(y: &str, y_star: &str) -> f64 {
    if y.trim().to_lowercase() == y_star.trim().to_lowercase() {
        1.0
    } else {
        0.0
    }
}
