//! Description normalization.
//!
//! Rules, applied in order:
//!
//! 1. NFKD-fold to ASCII (combining marks dropped, other non-ASCII characters
//!    become separators) and lowercase.
//! 2. Split on whitespace into chunks; punctuation inside a chunk is a
//!    separator, but only after rules 3-5 have looked at the whole chunk.
//! 3. Drop chunks shaped like dates: two or three digit fields joined by
//!    punctuation (`03/14`, `2023-03-14`).
//! 4. Drop chunks, and later pieces, that contain no letters; digit runs
//!    left inside short mixed pieces are removed (`3m` becomes `m`).
//! 5. Drop chunks with both letters and digits and at least six
//!    alphanumeric characters (reference codes such as `X9F7Q23A`, `CARD#1234`).
//! 6. Collapse whitespace: the output is a plain token list.
//! 7. Append the merchant name normalized with rules 1-6.
//!
//! The output depends only on letters, digit-run lengths, and the positions
//! of punctuation and whitespace, so it is invariant to case, to digit
//! values, to which punctuation character appears, and to the length of
//! whitespace runs.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Ordered lowercase word tokens; no token is empty or contains whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NormalizedText {
    tokens: Vec<String>,
}

impl NormalizedText {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        Self {
            tokens: tokens
                .into_iter()
                .flat_map(|t| t.split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .collect(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Tokens joined by single spaces.
    pub fn render(&self) -> String {
        self.tokens.join(" ")
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for NormalizedText {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for NormalizedText {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(NormalizedText::from_tokens(vec![s]))
    }
}

pub fn normalize(description: &str, merchant_name: Option<&str>) -> NormalizedText {
    let mut tokens = clean(description);
    if let Some(m) = merchant_name {
        tokens.extend(clean(m));
    }
    NormalizedText { tokens }
}

/// As [`normalize`] for raw bytes; invalid UTF-8 is replaced before folding.
pub fn normalize_bytes(description: &[u8], merchant_name: Option<&[u8]>) -> NormalizedText {
    let d = String::from_utf8_lossy(description);
    let m = merchant_name.map(String::from_utf8_lossy);
    normalize(&d, m.as_deref())
}

fn fold_ascii(s: &str) -> String {
    s.nfkd()
        .filter(|&c| !is_combining_mark(c))
        .map(|c| if c.is_ascii() { c.to_ascii_lowercase() } else { ' ' })
        .collect()
}

fn is_date_shape(chunk: &str) -> bool {
    let fields: Vec<&str> = chunk
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|f| !f.is_empty())
        .collect();
    let joined_by_punct = chunk
        .trim_matches(|c: char| !c.is_ascii_alphanumeric())
        .chars()
        .any(|c| !c.is_ascii_alphanumeric());
    joined_by_punct
        && (2..=3).contains(&fields.len())
        && fields.iter().all(|f| f.bytes().all(|b| b.is_ascii_digit()))
}

fn clean(text: &str) -> Vec<String> {
    let folded = fold_ascii(text);
    let mut out = Vec::new();
    for chunk in folded.split_ascii_whitespace() {
        if is_date_shape(chunk) {
            continue;
        }
        let (mut letters, mut digits) = (0usize, 0usize);
        for c in chunk.chars() {
            if c.is_ascii_alphabetic() {
                letters += 1;
            } else if c.is_ascii_digit() {
                digits += 1;
            }
        }
        if letters == 0 {
            continue;
        }
        if digits > 0 && letters + digits >= 6 {
            continue;
        }
        for piece in chunk.split(|c: char| !c.is_ascii_alphanumeric()) {
            let letters_only: String = piece.chars().filter(|c| !c.is_ascii_digit()).collect();
            if !letters_only.is_empty() {
                out.push(letters_only);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(t: &NormalizedText) -> Vec<&str> {
        t.tokens().iter().map(String::as_str).collect()
    }

    #[test]
    fn pos_purchase_example() {
        let t = normalize("POS PURCHASE 03/14 CARD#1234 STARBUCKS #0552 SEATTLE WA", None);
        assert_eq!(toks(&t), ["pos", "purchase", "starbucks", "seattle", "wa"]);
    }

    #[test]
    fn empty_description() {
        assert!(normalize("", None).is_empty());
        assert!(normalize("   \t ", None).is_empty());
    }

    #[test]
    fn reference_code_removed_and_merchant_appended() {
        let t = normalize("ACH Pmt X9F7Q23A VERIZON", Some("Verizon Wireless"));
        assert_eq!(toks(&t), ["ach", "pmt", "verizon", "verizon", "wireless"]);
    }

    #[test]
    fn dates_and_digit_runs_dropped() {
        let t = normalize("ZELLE 2023-03-14 12.50 TO J.SMITH 555", None);
        assert_eq!(toks(&t), ["zelle", "to", "j", "smith"]);
    }

    #[test]
    fn accents_folded_and_symbols_split() {
        let t = normalize("CAFÉ Zürich—Bar AT&T", None);
        assert_eq!(toks(&t), ["cafe", "zurich", "bar", "at", "t"]);
    }

    #[test]
    fn short_mixed_tokens_keep_letters() {
        assert_eq!(toks(&normalize("7eleven 3m co", None)), ["m", "co"]);
        assert_eq!(toks(&normalize("ab1-cd", None)), ["ab", "cd"]);
    }

    #[test]
    fn invalid_utf8_is_tolerated() {
        let t = normalize_bytes(b"SHELL\xff\xfeOIL 12", None);
        assert_eq!(toks(&t), ["shell", "oil"]);
    }

    #[derive(Debug, Clone)]
    enum Seg {
        Word(String),
        Digits(usize),
        Punct(usize),
        Space,
    }

    fn seg() -> impl Strategy<Value = Seg> {
        prop_oneof![
            "[a-zA-Z]{1,8}".prop_map(Seg::Word),
            (1usize..8).prop_map(Seg::Digits),
            (1usize..3).prop_map(Seg::Punct),
            Just(Seg::Space),
        ]
    }

    const PUNCT: &[u8] = b"!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

    fn render(segs: &[Seg], salt: u64) -> String {
        let mut state = salt.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let mut out = String::new();
        for s in segs {
            match s {
                Seg::Word(w) => {
                    for c in w.chars() {
                        if next() % 2 == 0 {
                            out.push(c.to_ascii_uppercase())
                        } else {
                            out.push(c.to_ascii_lowercase())
                        }
                    }
                }
                Seg::Digits(n) => (0..*n).for_each(|_| out.push((b'0' + (next() % 10) as u8) as char)),
                Seg::Punct(n) => (0..*n).for_each(|_| out.push(PUNCT[(next() % PUNCT.len() as u64) as usize] as char)),
                Seg::Space => {
                    for _ in 0..1 + next() % 3 {
                        out.push(if next() % 2 == 0 { ' ' } else { '\t' });
                    }
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,60}", m in proptest::option::of("\\PC{0,20}")) {
            let once = normalize(&s, m.as_deref());
            let twice = normalize(&once.render(), None);
            prop_assert_eq!(twice, once.clone());
            for t in once.tokens() {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.contains(char::is_whitespace));
            }
        }

        #[test]
        fn invariant_to_noise(segs in proptest::collection::vec(seg(), 0..14), a in any::<u64>(), b in any::<u64>()) {
            prop_assert_eq!(normalize(&render(&segs, a), None), normalize(&render(&segs, b), None));
        }
    }
}
