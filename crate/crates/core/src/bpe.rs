//! Byte-pair-encoding merges learned over a word-frequency table.
//!
//! Words are segmented in isolation (no end-of-word marker) starting from
//! single characters. Learning repeatedly merges the adjacent symbol pair with
//! the highest frequency-weighted count; ties go to the lexicographically
//! smallest `(left, right)` pair, and learning stops once the best pair occurs
//! fewer than [`MIN_PAIR_COUNT`] times.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const MIN_PAIR_COUNT: u64 = 2;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordFrequency {
    counts: BTreeMap<String, u64>,
}

impl WordFrequency {
    pub fn new() -> Self {
        WordFrequency::default()
    }

    pub fn add(&mut self, word: &str, count: u64) {
        if count > 0 && !word.is_empty() {
            *self.counts.entry(word.to_string()).or_insert(0) += count;
        }
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut wf = WordFrequency::new();
        for t in tokens {
            wf.add(t, 1);
        }
        wf
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(w, &c)| (w.as_str(), c))
    }

    /// Parses `word count` lines. Blank lines are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut wf = WordFrequency::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: &str| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: message.to_string(),
            };
            let mut parts = line.split_whitespace();
            let (Some(word), Some(count), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected `word count`"));
            };
            let count: u64 = count.parse().map_err(|_| err("count is not a non-negative integer"))?;
            if count == 0 {
                return Err(err("count must be positive"));
            }
            wf.add(word, count);
        }
        Ok(wf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        WordFrequency::parse(&text, &path.display().to_string())
    }
}

/// Ordered merge operations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Self {
        MergeTable { merges }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Symbols created by merges, in creation order.
    pub fn merged_symbols(&self) -> impl Iterator<Item = String> + '_ {
        self.merges.iter().map(|(l, r)| format!("{l}{r}"))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::Parse {
                        path: origin.to_string(),
                        line: i + 1,
                        message: "expected `left right`".into(),
                    })
                }
            }
        }
        Ok(MergeTable { merges })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MergeTable::parse(&text, &path.display().to_string())
    }
}

fn chars_of(word: &str) -> Vec<String> {
    word.chars().map(String::from).collect()
}

/// Merges every non-overlapping occurrence of `(left, right)`, scanning left
/// to right.
fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    if symbols.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut symbols[i]));
            i += 1;
        }
    }
    *symbols = out;
}

type Pair = (String, String);

struct PairIndex {
    counts: HashMap<Pair, u64>,
    holders: HashMap<Pair, BTreeSet<usize>>,
}

impl PairIndex {
    fn add_word(&mut self, idx: usize, symbols: &[String], freq: u64) {
        for w in symbols.windows(2) {
            let pair = (w[0].clone(), w[1].clone());
            *self.counts.entry(pair.clone()).or_insert(0) += freq;
            self.holders.entry(pair).or_default().insert(idx);
        }
    }

    fn remove_word(&mut self, symbols: &[String], freq: u64) {
        for w in symbols.windows(2) {
            let pair = (w[0].clone(), w[1].clone());
            if let Some(c) = self.counts.get_mut(&pair) {
                *c -= freq;
                if *c == 0 {
                    self.counts.remove(&pair);
                }
            }
        }
    }

    fn best(&self) -> Option<(&Pair, u64)> {
        self.counts
            .iter()
            .map(|(p, &c)| (p, c))
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
    }
}

/// Learns up to `num_merges` merges from `corpus`.
pub fn learn_bpe(corpus: &WordFrequency, num_merges: usize) -> Result<MergeTable> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot learn BPE from an empty corpus".into()));
    }
    let mut words: Vec<(Vec<String>, u64)> =
        corpus.iter().map(|(w, c)| (chars_of(w), c)).collect();
    let mut index = PairIndex {
        counts: HashMap::new(),
        holders: HashMap::new(),
    };
    for (i, (symbols, freq)) in words.iter().enumerate() {
        index.add_word(i, symbols, *freq);
    }

    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let Some((pair, count)) = index.best() else {
            break;
        };
        if count < MIN_PAIR_COUNT {
            break;
        }
        let pair = pair.clone();
        let holders = index.holders.remove(&pair).unwrap_or_default();
        for idx in holders {
            let (symbols, freq) = &mut words[idx];
            index.remove_word(symbols, *freq);
            merge_pair(symbols, &pair.0, &pair.1);
            index.add_word(idx, symbols, *freq);
        }
        // a full left-to-right pass leaves no occurrence of the pair behind
        debug_assert!(!index.counts.contains_key(&pair));
        merges.push(pair);
    }
    Ok(MergeTable { merges })
}

/// Segments `word` by replaying the table's merges in order.
pub fn apply_bpe(word: &str, table: &MergeTable) -> Vec<String> {
    let mut symbols = chars_of(word);
    for (l, r) in &table.merges {
        if symbols.len() < 2 {
            break;
        }
        merge_pair(&mut symbols, l, r);
    }
    symbols
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(items: &[(&str, u64)]) -> WordFrequency {
        let mut wf = WordFrequency::new();
        for (w, c) in items {
            wf.add(w, *c);
        }
        wf
    }

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.to_string(), r.to_string())
    }

    #[test]
    fn abab_stops_at_single_occurrence() {
        let t = learn_bpe(&corpus(&[("abab", 1)]), 2).unwrap();
        assert_eq!(t.merges(), &[pair("a", "b")]);
    }

    #[test]
    fn weighted_frequency_wins() {
        let t = learn_bpe(&corpus(&[("aa", 3), ("ab", 1)]), 1).unwrap();
        assert_eq!(t.merges(), &[pair("a", "a")]);
    }

    #[test]
    fn zero_merges_is_character_segmentation() {
        let t = learn_bpe(&corpus(&[("hello", 4)]), 0).unwrap();
        assert!(t.is_empty());
        assert_eq!(apply_bpe("hello", &t), vec!["h", "e", "l", "l", "o"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(learn_bpe(&WordFrequency::new(), 5), Err(Error::Input(_))));
    }

    #[test]
    fn apply_examples() {
        let t = MergeTable::new(vec![pair("a", "b")]);
        assert_eq!(apply_bpe("abab", &t), vec!["ab", "ab"]);
        let t = MergeTable::new(vec![pair("a", "n"), pair("b", "an")]);
        assert_eq!(apply_bpe("banana", &t), vec!["ban", "an", "a"]);
        assert_eq!(apply_bpe("xyz", &MergeTable::default()), vec!["x", "y", "z"]);
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // (a,b) and (c,d) both occur twice
        let t = learn_bpe(&corpus(&[("cd", 2), ("ab", 2)]), 1).unwrap();
        assert_eq!(t.merges(), &[pair("a", "b")]);
    }

    #[test]
    fn table_file_round_trip_and_errors() {
        let t = MergeTable::new(vec![pair("a", "b"), pair("ab", "c")]);
        assert_eq!(MergeTable::parse(&t.to_text(), "mem").unwrap(), t);
        let err = MergeTable::parse("a b\nbad\n", "merges.txt").unwrap_err();
        assert!(err.to_string().contains("merges.txt:2"));
    }

    #[test]
    fn frequency_file_parsing() {
        let wf = WordFrequency::parse("the 10\n\ncat 2\nthe 1\n", "f").unwrap();
        assert_eq!(wf.iter().collect::<Vec<_>>(), vec![("cat", 2), ("the", 11)]);
        assert!(WordFrequency::parse("the ten", "f").is_err());
        assert!(WordFrequency::parse("the 0", "f").is_err());
    }

    proptest! {
        #[test]
        fn segmentation_is_lossless(
            words in prop::collection::vec("[a-e]{1,8}", 1..12),
            word in "[a-g]{1,10}",
            merges in 0usize..20,
        ) {
            let wf = WordFrequency::from_tokens(words.iter().map(String::as_str));
            let table = learn_bpe(&wf, merges).unwrap();
            prop_assert_eq!(apply_bpe(&word, &table).concat(), word);
        }

        #[test]
        fn tables_are_prefix_monotone(
            words in prop::collection::vec("[a-d]{1,7}", 1..15),
            m in 0usize..15,
        ) {
            let wf = WordFrequency::from_tokens(words.iter().map(String::as_str));
            let small = learn_bpe(&wf, m).unwrap();
            let big = learn_bpe(&wf, m + 1).unwrap();
            prop_assert!(big.merges().starts_with(small.merges()));
        }
    }
}
