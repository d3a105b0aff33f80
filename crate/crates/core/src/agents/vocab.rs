use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{phrases, DialogRound};
use crate::error::{Error, Result};

pub const INS: usize = 0;
pub const QUE: usize = 1;
pub const OOV: usize = 2;

/// Token ids for one dialog. `[INS]`/`[QUE]` markers precede each
/// instruction/question.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn instruction_markers(&self) -> Vec<usize> {
        self.positions(INS)
    }

    pub fn question_markers(&self) -> Vec<usize> {
        self.positions(QUE)
    }

    fn positions(&self, id: usize) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == id)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Closed vocabulary; ids are line numbers of the vocabulary file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut words = vec!["[INS]".to_string(), "[QUE]".to_string(), "[OOV]".to_string()];
        words.extend(phrases::WORDS.iter().map(|w| w.to_string()));
        Self::from_words(words).expect("built-in vocabulary")
    }
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 3 || words[INS] != "[INS]" || words[QUE] != "[QUE]" || words[OOV] != "[OOV]" {
            return Err(Error::Invalid(
                "vocabulary must start with [INS], [QUE], [OOV]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::Invalid(format!("bad vocabulary entry {i}: `{w}`")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(OOV)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_words(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    fn push_text(&self, out: &mut Vec<usize>, text: &str) {
        for w in text.split_whitespace() {
            out.push(self.id(&w.to_lowercase()));
        }
    }

    pub fn tokenize_dialog(&self, dialog: &[DialogRound]) -> TokenSequence {
        let mut tokens = Vec::new();
        for round in dialog {
            if let Some(q) = &round.question {
                tokens.push(QUE);
                self.push_text(&mut tokens, q);
            }
            tokens.push(INS);
            self.push_text(&mut tokens, &round.instruction);
        }
        TokenSequence { tokens }
    }
}

/// Tokenizes with the built-in vocabulary.
pub fn tokenize_dialog(dialog: &[DialogRound]) -> TokenSequence {
    Vocabulary::default().tokenize_dialog(dialog)
}
