//! Tokenization for the small language model.
//!
//! Byte mode maps each UTF-8 byte to its own id (0..=255) with four special
//! ids above, so `decode(encode(x)) == x` holds for every UTF-8 string.
//! Whitespace mode looks words up in a corpus-built vocabulary and falls back
//! to per-character tokens for unknown words.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const N_SPECIALS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    Byte,
    WhitespaceCharFallback,
}

#[derive(Debug, Clone)]
enum VocabData {
    Byte,
    Whitespace {
        words: BTreeMap<String, TokenId>,
        chars: BTreeMap<char, TokenId>,
        id_to_text: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    mode: TokenizerMode,
    vocab_size: usize,
    data: VocabData,
}

impl Tokenizer {
    /// Byte-level tokenizer: vocab 260 = 256 byte values + pad/bos/eos/sep.
    pub fn byte() -> Self {
        Self {
            mode: TokenizerMode::Byte,
            vocab_size: 256 + N_SPECIALS,
            data: VocabData::Byte,
        }
    }

    /// Whitespace tokenizer with per-character fallback, vocab built from the
    /// given texts. Whitespace runs encode as character tokens so decoding
    /// reconstructs spacing exactly when every character is in vocab.
    pub fn whitespace_char_fallback<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut words: BTreeMap<String, TokenId> = BTreeMap::new();
        let mut chars: BTreeMap<char, TokenId> = BTreeMap::new();
        for t in texts {
            for w in t.as_ref().split_whitespace() {
                words.entry(w.to_string()).or_insert(0);
            }
            for c in t.as_ref().chars() {
                chars.entry(c).or_insert(0);
            }
        }
        chars.entry(' ').or_insert(0);
        let mut id_to_text = Vec::with_capacity(words.len() + chars.len());
        let mut next: TokenId = 0;
        for (w, id) in words.iter_mut() {
            *id = next;
            id_to_text.push(w.clone());
            next += 1;
        }
        for (c, id) in chars.iter_mut() {
            *id = next;
            id_to_text.push(c.to_string());
            next += 1;
        }
        let vocab_size = next as usize + N_SPECIALS;
        Self {
            mode: TokenizerMode::WhitespaceCharFallback,
            vocab_size,
            data: VocabData::Whitespace {
                words,
                chars,
                id_to_text,
            },
        }
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn pad(&self) -> TokenId {
        (self.vocab_size - 4) as TokenId
    }

    pub fn bos(&self) -> TokenId {
        (self.vocab_size - 3) as TokenId
    }

    pub fn eos(&self) -> TokenId {
        (self.vocab_size - 2) as TokenId
    }

    pub fn sep(&self) -> TokenId {
        (self.vocab_size - 1) as TokenId
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        match &self.data {
            VocabData::Byte => text.bytes().map(|b| b as TokenId).collect(),
            VocabData::Whitespace { words, chars, .. } => {
                let mut out = Vec::new();
                let cs: Vec<char> = text.chars().collect();
                let mut i = 0;
                while i < cs.len() {
                    if cs[i].is_whitespace() {
                        if let Some(&id) = chars.get(&cs[i]) {
                            out.push(id);
                        }
                        i += 1;
                        continue;
                    }
                    let mut j = i;
                    while j < cs.len() && !cs[j].is_whitespace() {
                        j += 1;
                    }
                    let word: String = cs[i..j].iter().collect();
                    if let Some(&id) = words.get(&word) {
                        out.push(id);
                    } else {
                        for c in &cs[i..j] {
                            if let Some(&id) = chars.get(c) {
                                out.push(id);
                            }
                        }
                    }
                    i = j;
                }
                out
            }
        }
    }

    /// Decode, skipping special ids.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        match &self.data {
            VocabData::Byte => {
                let bytes: Vec<u8> = tokens
                    .iter()
                    .filter(|&&t| t < 256)
                    .map(|&t| t as u8)
                    .collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            VocabData::Whitespace { id_to_text, .. } => {
                let first_special = (self.vocab_size - N_SPECIALS) as TokenId;
                let mut out = String::new();
                for &t in tokens {
                    if t < first_special {
                        out.push_str(&id_to_text[t as usize]);
                    }
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_mode_specials_sit_above_bytes() {
        let t = Tokenizer::byte();
        assert_eq!(t.vocab_size(), 260);
        assert_eq!(t.pad(), 256);
        assert_eq!(t.bos(), 257);
        assert_eq!(t.eos(), 258);
        assert_eq!(t.sep(), 259);
    }

    #[test]
    fn byte_round_trip_multibyte() {
        let t = Tokenizer::byte();
        let s = "董事会 board 会议 ✓";
        assert_eq!(t.decode(&t.encode(s)), s);
    }

    #[test]
    fn whitespace_mode_round_trips_known_text() {
        let texts = ["the supervisor files a report", "the debtor pays"];
        let t = Tokenizer::whitespace_char_fallback(&texts);
        for s in texts {
            assert_eq!(t.decode(&t.encode(s)), s);
        }
        // unknown word falls back to characters present in the vocab
        assert_eq!(t.decode(&t.encode("the ropes")), "the ropes");
    }

    #[test]
    fn ids_stay_below_vocab_size() {
        let t = Tokenizer::whitespace_char_fallback(&["alpha beta gamma"]);
        for id in t.encode("alpha gamma beta") {
            assert!((id as usize) < t.vocab_size());
        }
    }

    proptest! {
        #[test]
        fn byte_round_trip_any_utf8(s in "\\PC{0,60}") {
            let t = Tokenizer::byte();
            prop_assert_eq!(t.decode(&t.encode(&s)), s);
        }
    }
}
