//! Word-level vocabulary shared by the corpus generator and the reference model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MASK: &str = "[MASK]";
pub const START: &str = "[CLS]";
pub const END: &str = "[SEP]";
pub const UNK: &str = "[UNK]";

/// Reserved tokens, in the order they occupy the first vocabulary slots.
pub const RESERVED: [&str; 4] = [MASK, START, END, UNK];

/// Ordered token list with a reverse index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from `words`, prepending any reserved token that is missing.
    pub fn with_reserved<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        let mut tokens: Vec<String> = RESERVED
            .iter()
            .filter(|r| !words.iter().any(|w| w == *r))
            .map(|r| r.to_string())
            .collect();
        tokens.extend(words);
        Self::try_from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn require(&self, token: &str) -> Result<usize> {
        self.id(token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn mask_id(&self) -> usize {
        self.index[MASK]
    }

    pub fn start_id(&self) -> usize {
        self.index[START]
    }

    pub fn end_id(&self) -> usize {
        self.index[END]
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("illegal vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        for r in RESERVED {
            if !index.contains_key(r) {
                return Err(Error::Config(format!("vocabulary lacks reserved token `{r}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_tokens_are_prepended_once() {
        let v = Vocabulary::with_reserved(["the", "[MASK]", "will"]).unwrap();
        assert_eq!(v.len(), 6);
        for r in RESERVED {
            assert_eq!(v.tokens().iter().filter(|t| *t == r).count(), 1);
        }
        assert_eq!(v.token(v.require("will").unwrap()), Some("will"));
    }

    #[test]
    fn duplicates_are_rejected() {
        assert!(Vocabulary::with_reserved(["the", "the"]).is_err());
        assert!(Vocabulary::try_from(vec!["the".to_string()]).is_err());
    }
}
