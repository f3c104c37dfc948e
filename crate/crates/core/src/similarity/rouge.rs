use super::counts;

/// ROUGE-1 F1 with clipped unigram counts over whitespace tokens.
///
/// Two empty strings score 1; exactly one empty string scores 0.
pub fn rouge1_f1(candidate: &str, reference: &str) -> f64 {
    let cand = counts(candidate.split_whitespace());
    let refs = counts(reference.split_whitespace());
    let cand_len: u64 = cand.values().sum();
    let ref_len: u64 = refs.values().sum();
    match (cand_len, ref_len) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let overlap: u64 = cand
        .iter()
        .filter_map(|(tok, c)| refs.get(tok).map(|r| (*c).min(*r)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_overlap() {
        let f = rouge1_f1("the weather is nice", "the weather is good today");
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_and_clipping() {
        assert_eq!(rouge1_f1("a b c", "a b c"), 1.0);
        assert!((rouge1_f1("aa aa", "aa") - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empties() {
        assert_eq!(rouge1_f1("", ""), 1.0);
        assert_eq!(rouge1_f1("", "a"), 0.0);
        assert_eq!(rouge1_f1("a", ""), 0.0);
        assert_eq!(rouge1_f1("a", "b"), 0.0);
    }
}
