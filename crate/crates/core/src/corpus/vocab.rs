use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Dense index of a symbol in a [`Vocab`].
pub type TokenId = usize;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";

/// Token alphabet over which the policy is defined.
///
/// The first four ids are always `<bos>`, `<eos>`, `<pad>` and `<unk>`,
/// in that order. Every other symbol is appended after them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub const BOS_ID: TokenId = 0;
    pub const EOS_ID: TokenId = 1;
    pub const PAD_ID: TokenId = 2;
    pub const UNK_ID: TokenId = 3;

    /// Builds a vocabulary from ordinary symbols; specials are prepended.
    pub fn new<I, S>(symbols: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = [BOS, EOS, PAD, UNK].iter().map(|s| s.to_string()).collect();
        all.extend(symbols.into_iter().map(Into::into));
        Self::from_symbols(all)
    }

    /// Rebuilds a vocabulary from its full symbol list, specials included.
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self, CorpusError> {
        for (id, special) in [BOS, EOS, PAD, UNK].iter().enumerate() {
            if symbols.get(id).map(String::as_str) != Some(*special) {
                return Err(CorpusError::Config(format!(
                    "vocab id {id} must be the special symbol {special}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (id, sym) in symbols.iter().enumerate() {
            if sym.is_empty() || sym.chars().any(char::is_whitespace) {
                return Err(CorpusError::Config(format!("invalid vocab symbol {sym:?}")));
            }
            if index.insert(sym.clone(), id).is_some() {
                return Err(CorpusError::Config(format!("duplicate vocab symbol {sym:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn lookup(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    /// Encodes strictly; unknown symbols are an error.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<TokenId>, CorpusError> {
        tokens
            .iter()
            .map(|t| {
                self.lookup(t.as_ref())
                    .ok_or_else(|| CorpusError::UnknownToken(t.as_ref().to_string()))
            })
            .collect()
    }

    /// Encodes leniently, mapping unknown symbols to `<unk>`.
    pub fn encode_lossy<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens
            .iter()
            .map(|t| self.lookup(t.as_ref()).unwrap_or(Self::UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.symbol(id).unwrap_or(UNK).to_string())
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = CorpusError;

    fn try_from(symbols: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_symbols(symbols)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

/// Token used to tag the translation direction at the head of a prompt.
pub fn direction_token(direction: &str) -> String {
    format!("<2{direction}>")
}
