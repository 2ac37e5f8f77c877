//! Word-level vocabulary and pre-tokenizer.
//!
//! Text is split on whitespace; ASCII and CJK punctuation and every CJK
//! ideograph become tokens of their own; the bracketed special tokens are
//! kept intact. `detokenize` joins tokens with single spaces, so
//! `detokenize(tokenize(x))` equals `x` whenever `x` is in-vocabulary words
//! separated by single spaces.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const UNK_TOKEN: &str = "[UNK]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const PLACEHOLDER_TOKEN: &str = "[P]";

pub const UNK_ID: TokenId = 0;
pub const MASK_ID: TokenId = 1;
pub const PLACEHOLDER_ID: TokenId = 2;

const SPECIALS: [&str; 3] = [UNK_TOKEN, MASK_TOKEN, PLACEHOLDER_TOKEN];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let mut vocab = Vocab {
            tokens,
            index: HashMap::new(),
        };
        vocab.reindex();
        vocab
    }
}

impl From<Vocab> for Vec<String> {
    fn from(vocab: Vocab) -> Self {
        vocab.tokens
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0xF900..=0xFAFF)
}

fn is_split_punct(c: char) -> bool {
    matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '(' | ')' | '"')
        || matches!(c, '。' | '，' | '、' | '；' | '：' | '！' | '？' | '（' | '）' | '“' | '”')
}

/// Splits raw text into word strings.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut rest = text;
    'outer: while let Some(c) = rest.chars().next() {
        if c == '[' {
            for special in SPECIALS {
                if rest.starts_with(special) {
                    if !current.is_empty() {
                        out.push(std::mem::take(&mut current));
                    }
                    out.push(special.to_string());
                    rest = &rest[special.len()..];
                    continue 'outer;
                }
            }
        }
        if c.is_whitespace() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else if is_split_punct(c) || is_cjk(c) {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.push(c.to_string());
        } else {
            current.push(c);
        }
        rest = &rest[c.len_utf8()..];
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

impl Vocab {
    /// Vocabulary holding only the special tokens; every word maps to `[UNK]`.
    pub fn specials_only() -> Self {
        Vocab::from_tokens(std::iter::empty::<String>())
    }

    /// Builds a vocabulary from word strings in the order given, after the
    /// special tokens. Repeated words keep their first id.
    pub fn from_tokens<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        for word in words {
            let word = word.into();
            if !index.contains_key(&word) {
                index.insert(word.clone(), tokens.len() as TokenId);
                tokens.push(word);
            }
        }
        Vocab { tokens, index }
    }

    /// Keeps the `max_size - 3` most frequent corpus words (ties broken
    /// lexicographically) so the result never exceeds `max_size` entries.
    pub fn from_corpus(corpus: &[Vec<String>], max_size: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for sentence in corpus {
            for word in sentence {
                if !SPECIALS.contains(&word.as_str()) {
                    *counts.entry(word.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size.saturating_sub(SPECIALS.len()));
        let mut words: Vec<&str> = ranked.into_iter().map(|(w, _)| w).collect();
        words.sort_unstable();
        Vocab::from_tokens(words)
    }

    fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK_TOKEN)
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        split_words(text).iter().map(|w| self.id(w)).collect()
    }

    pub fn encode_words(&self, words: &[String]) -> Vec<TokenId> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_empty_sequence() {
        assert!(Vocab::specials_only().tokenize("").is_empty());
    }

    #[test]
    fn whitespace_split_counts_words() {
        let v = Vocab::from_tokens(["running", "shoes"]);
        assert_eq!(v.tokenize("running shoes").len(), 2);
        assert_eq!(v.tokenize("running shoes"), v.tokenize("running   shoes"));
        assert_eq!(Vocab::specials_only().tokenize("running shoes"), vec![UNK_ID, UNK_ID]);
    }

    #[test]
    fn punctuation_and_specials_split() {
        assert_eq!(
            split_words("[MASK] requires [P][P] shoes."),
            vec!["[MASK]", "requires", "[P]", "[P]", "shoes", "."]
        );
        assert_eq!(split_words("跑步需要跑鞋。"), vec!["跑", "步", "需", "要", "跑", "鞋", "。"]);
    }

    #[test]
    fn corpus_vocab_respects_cap() {
        let corpus = vec![
            vec!["a".to_string(), "b".to_string(), "a".to_string()],
            vec!["c".to_string(), "a".to_string(), "b".to_string()],
        ];
        let v = Vocab::from_corpus(&corpus, 5);
        assert_eq!(v.len(), 5);
        assert_ne!(v.id("a"), UNK_ID);
        assert_ne!(v.id("b"), UNK_ID);
        assert_eq!(v.id("c"), UNK_ID);
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize(words in prop::collection::vec("[a-z]{1,6}", 0..8)) {
            let vocab = Vocab::from_tokens(words.iter().cloned());
            let text = words.join(" ");
            let ids = vocab.tokenize(&text);
            prop_assert_eq!(vocab.detokenize(&ids), text.clone());
            prop_assert_eq!(vocab.tokenize(&text), ids);
        }
    }
}
