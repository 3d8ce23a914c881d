/// Levenshtein distance with unit costs.
pub fn edit_distance<A: PartialEq>(reference: &[A], hypothesis: &[A]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Character error rate: edit distance over `max(1, reference length)`.
pub fn cer(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    edit_distance(&r, &h) as f64 / r.len().max(1) as f64
}

/// Accumulated edits and reference characters over a test set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub edits: usize,
    pub reference_chars: usize,
}

impl ErrorCounts {
    pub fn add(&mut self, reference: &str, hypothesis: &str) {
        let r: Vec<char> = reference.chars().collect();
        let h: Vec<char> = hypothesis.chars().collect();
        self.edits += edit_distance(&r, &h);
        self.reference_chars += r.len();
    }

    pub fn rate(&self) -> f64 {
        self.edits as f64 / self.reference_chars.max(1) as f64
    }
}

/// Corpus-level CER: total edits over total reference characters.
pub fn corpus_cer<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> f64 {
    let mut counts = ErrorCounts::default();
    for (r, h) in pairs {
        counts.add(r, h);
    }
    counts.rate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(cer("abc", "abc"), 0.0);
        assert!((cer("abc", "abd") - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cer("", ""), 0.0);
        assert_eq!(cer("", "xy"), 2.0);
        assert_eq!(cer("ab", ""), 1.0);
        assert_eq!(cer("中文", "中"), 0.5);
    }

    #[test]
    fn corpus_rate_pools_characters() {
        let r = corpus_cer([("abcd", "abcd"), ("ab", "b")]);
        assert!((r - 1.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_but_rate_is_not(a in "[abc]{0,8}", b in "[abc]{0,8}") {
            let (x, y): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
            prop_assert_eq!(edit_distance(&x, &y), edit_distance(&y, &x));
            let d = edit_distance(&x, &y) as f64;
            prop_assert_eq!(cer(&a, &b), d / x.len().max(1) as f64);
            prop_assert_eq!(cer(&b, &a), d / y.len().max(1) as f64);
        }

        #[test]
        fn triangle_inequality(a in "[ab]{0,6}", b in "[ab]{0,6}", c in "[ab]{0,6}") {
            let v = |s: &str| s.chars().collect::<Vec<_>>();
            let (x, y, z) = (v(&a), v(&b), v(&c));
            prop_assert!(edit_distance(&x, &z) <= edit_distance(&x, &y) + edit_distance(&y, &z));
        }
    }
}
