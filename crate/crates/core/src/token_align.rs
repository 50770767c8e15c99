//! Subword tokenization that keeps track of which word each subword came from.

use crate::error::{Error, Result};
use crate::mate::Tag;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
const FIRST_PIECE_ID: usize = 3;

/// A subword vocabulary. Implementations must be deterministic.
pub trait SubwordTokenizer: Send + Sync {
    /// Subword ids for one whitespace-free word; never empty.
    fn word_pieces(&self, word: &str) -> Vec<usize>;
    fn vocab_size(&self) -> usize;
}

/// Rule-based splitter used by the toy backend.
///
/// A word is cut into chunks of `piece_chars` characters; chunks after the
/// first carry a `##` prefix. Each piece string is hashed (FNV-1a, 64-bit)
/// into `vocab_size - 3` buckets offset past the pad/cls/sep ids. Case is
/// preserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySplitter {
    pub piece_chars: usize,
    pub vocab_size: usize,
}

impl Default for ToySplitter {
    fn default() -> Self {
        Self {
            piece_chars: 7,
            vocab_size: 512,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl ToySplitter {
    pub fn pieces(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        chars
            .chunks(self.piece_chars.max(1))
            .enumerate()
            .map(|(i, chunk)| {
                let s: String = chunk.iter().collect();
                if i == 0 {
                    s
                } else {
                    format!("##{s}")
                }
            })
            .collect()
    }

    pub fn piece_id(&self, piece: &str) -> usize {
        let buckets = (self.vocab_size - FIRST_PIECE_ID) as u64;
        FIRST_PIECE_ID + (fnv1a(piece.as_bytes()) % buckets) as usize
    }
}

impl SubwordTokenizer for ToySplitter {
    fn word_pieces(&self, word: &str) -> Vec<usize> {
        self.pieces(word).iter().map(|p| self.piece_id(p)).collect()
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

/// Subword ids plus the word each position belongs to (`None` for special
/// tokens).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenAlignment {
    pub subword_ids: Vec<usize>,
    pub word_ids: Vec<Option<usize>>,
    pub attention_mask: Vec<u8>,
    /// Trailing words were dropped to respect `max_length`.
    pub truncated: bool,
}

impl TokenAlignment {
    pub fn len(&self) -> usize {
        self.subword_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subword_ids.is_empty()
    }

    /// Number of words that survived truncation.
    pub fn word_count(&self) -> usize {
        self.word_ids.iter().flatten().max().map_or(0, |m| m + 1)
    }
}

fn check_max_length(max_length: usize) -> Result<()> {
    if max_length < 2 {
        return Err(Error::Config(format!(
            "max_length {max_length} leaves no room for the two special tokens"
        )));
    }
    Ok(())
}

/// `[CLS] w_0 … w_n [SEP]`, dropping whole trailing words if needed.
pub fn tokenize_with_alignment(
    tokenizer: &dyn SubwordTokenizer,
    text: &str,
    max_length: usize,
) -> Result<TokenAlignment> {
    check_max_length(max_length)?;
    let mut align = TokenAlignment {
        subword_ids: vec![CLS_ID],
        word_ids: vec![None],
        attention_mask: vec![1],
        truncated: false,
    };
    push_words(tokenizer, text, max_length - 1, &mut align);
    align.subword_ids.push(SEP_ID);
    align.word_ids.push(None);
    align.attention_mask.push(1);
    Ok(align)
}

/// `[CLS] sentence [SEP] second [SEP]`. Only sentence words carry word ids;
/// the second segment is kept whole and sentence words are truncated first.
pub fn tokenize_pair_with_alignment(
    tokenizer: &dyn SubwordTokenizer,
    text: &str,
    second: &str,
    max_length: usize,
) -> Result<TokenAlignment> {
    check_max_length(max_length)?;
    let second_ids: Vec<usize> = second
        .split_whitespace()
        .flat_map(|w| tokenizer.word_pieces(w))
        .collect();
    let budget = max_length.saturating_sub(second_ids.len() + 3);
    let mut align = TokenAlignment {
        subword_ids: vec![CLS_ID],
        word_ids: vec![None],
        attention_mask: vec![1],
        truncated: false,
    };
    push_words(tokenizer, text, budget + 1, &mut align);
    align.subword_ids.push(SEP_ID);
    align.word_ids.push(None);
    for id in second_ids.into_iter().take(max_length.saturating_sub(align.len() + 1)) {
        align.subword_ids.push(id);
        align.word_ids.push(None);
    }
    align.subword_ids.push(SEP_ID);
    align.word_ids.push(None);
    align.attention_mask = vec![1; align.subword_ids.len()];
    Ok(align)
}

/// Appends whole words while the total length stays within `limit`.
fn push_words(tokenizer: &dyn SubwordTokenizer, text: &str, limit: usize, align: &mut TokenAlignment) {
    for (w, word) in text.split_whitespace().enumerate() {
        let pieces = tokenizer.word_pieces(word);
        if align.subword_ids.len() + pieces.len() > limit {
            align.truncated = true;
            break;
        }
        for id in pieces {
            align.subword_ids.push(id);
            align.word_ids.push(Some(w));
            align.attention_mask.push(1);
        }
    }
}

/// Projects word tags onto subwords: the first subword of each word gets the
/// word's tag, every other position gets `None` (ignored by the loss).
pub fn project_word_tags(tags: &[Tag], align: &TokenAlignment) -> Result<Vec<Option<Tag>>> {
    let mut out = Vec::with_capacity(align.len());
    let mut prev: Option<usize> = None;
    for &wid in &align.word_ids {
        let projected = match wid {
            Some(w) if prev != Some(w) => {
                let tag = tags.get(w).ok_or_else(|| {
                    Error::Alignment(format!("word id {w} but only {} tags", tags.len()))
                })?;
                Some(*tag)
            }
            _ => None,
        };
        out.push(projected);
        prev = wid;
    }
    Ok(out)
}
