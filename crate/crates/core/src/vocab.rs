//! Label vocabularies: one symbol per class, or characters plus a CTC blank.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ctc::{LabelSequence, BLANK};
use crate::error::{Error, Result};

pub const BLANK_SYMBOL: &str = "<blank>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    /// Whole labels are classes.
    Class,
    /// Labels are strings of single-character symbols; index 0 is the blank.
    Ctc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    kind: VocabKind,
    symbols: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new(kind: VocabKind, symbols: Vec<String>) -> Result<Self> {
        let index: BTreeMap<String, usize> = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        if index.len() != symbols.len() {
            return Err(Error::InvalidConfig("duplicate vocabulary symbol".into()));
        }
        if kind == VocabKind::Ctc && symbols.first().map(String::as_str) != Some(BLANK_SYMBOL) {
            return Err(Error::InvalidConfig(format!(
                "CTC vocabulary must start with {BLANK_SYMBOL}"
            )));
        }
        if symbols.len() < 2 {
            return Err(Error::InvalidConfig(
                "vocabulary needs at least 2 entries".into(),
            ));
        }
        Ok(Self {
            kind,
            symbols,
            index,
        })
    }

    /// Sorted distinct labels.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: BTreeSet<&str> = labels.into_iter().collect();
        Self::new(
            VocabKind::Class,
            set.into_iter().map(String::from).collect(),
        )
    }

    /// Blank followed by the sorted distinct characters of `labels`.
    pub fn ctc_from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: BTreeSet<char> = labels.into_iter().flat_map(str::chars).collect();
        let symbols = std::iter::once(BLANK_SYMBOL.to_string())
            .chain(set.into_iter().map(String::from))
            .collect();
        Self::new(VocabKind::Ctc, symbols)
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, i: usize) -> Option<&str> {
        self.symbols.get(i).map(String::as_str)
    }

    pub fn class_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Label as a CTC target.
    pub fn encode(&self, label: &str) -> Result<LabelSequence> {
        let symbols = label
            .chars()
            .map(|c| self.class_of(c.encode_utf8(&mut [0; 4])))
            .collect::<Result<Vec<_>>>()?;
        if symbols.contains(&BLANK) {
            return Err(Error::UnknownLabel(label.to_string()));
        }
        Ok(LabelSequence::new(symbols, self.len())?)
    }

    pub fn decode(&self, symbols: &[usize]) -> String {
        symbols
            .iter()
            .filter(|&&s| s != BLANK || self.kind == VocabKind::Class)
            .filter_map(|&s| self.symbol(s))
            .collect()
    }

    /// Restores the lookup table after deserialization.
    pub(crate) fn rebuild(self) -> Result<Self> {
        Self::new(self.kind, self.symbols)
    }
}
