//! Aspect term extraction: a per-token BIO tagging head, its masked
//! cross-entropy loss, and the decoder that turns subword tags back into
//! word spans.

use serde::{Deserialize, Serialize};

use crate::autograd::{softmax, Graph, Params, Tensor, Var};
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::nn;
use crate::token_align::TokenAlignment;

/// BIO tag. The integer codes are fixed: O=0, B=1, I=2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    O = 0,
    B = 1,
    I = 2,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::O, Tag::B, Tag::I];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Self::ALL.get(i).copied()
    }
}

/// Decoded aspect spans, inclusive word indices sorted by begin.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSet {
    pub spans: Vec<(usize, usize)>,
}

impl SpanSet {
    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Raw tag scores, one row per subword position (columns O, B, I).
#[derive(Debug, Clone, PartialEq)]
pub struct TagLogits {
    pub scores: Tensor,
    pub alignment: TokenAlignment,
}

impl TagLogits {
    pub fn probs(&self) -> Tensor {
        softmax(&self.scores)
    }

    /// Per-position argmax; ties go to the lowest tag code.
    pub fn argmax_tags(&self) -> Vec<Tag> {
        self.scores
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                Tag::from_index(best).expect("three tag columns")
            })
            .collect()
    }
}

pub const TAGGER_PREFIX: &str = "tagger";

pub fn init_tagger<R: rand::Rng>(rng: &mut R, params: &mut Params, hidden: usize) {
    nn::init_linear(rng, params, TAGGER_PREFIX, hidden, Tag::COUNT);
}

/// Tag scores `t W + b` for every row of the text features.
pub fn tagger_forward(g: &mut Graph, params: &Params, features: Var) -> Var {
    nn::linear(g, params, TAGGER_PREFIX, features)
}

/// Mean negative log-likelihood over supervised positions.
pub fn label_loss_graph(g: &mut Graph, logits: Var, gold: &[Option<Tag>]) -> Result<Var> {
    let rows = g.value(logits).nrows();
    if rows != gold.len() {
        return Err(Error::LengthMismatch {
            left: rows,
            right: gold.len(),
        });
    }
    let picks: Vec<(usize, usize)> = gold
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|t| (i, t.index())))
        .collect();
    if picks.is_empty() {
        return Err(Error::EmptySupervision);
    }
    let logp = g.log_softmax_rows(logits);
    let mean = g.pick_mean(logp, &picks);
    Ok(g.scale(mean, -1.0))
}

/// Applies the tagging head to encoded text.
pub fn tag_tokens(params: &Params, features: &Tensor, alignment: &TokenAlignment) -> Result<TagLogits> {
    if features.nrows() != alignment.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for an alignment of length {}",
            features.nrows(),
            alignment.len()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let out = tagger_forward(&mut g, params, x);
    Ok(TagLogits {
        scores: g.value(out).clone(),
        alignment: alignment.clone(),
    })
}

pub fn aspect_label_loss(logits: &TagLogits, gold: &[Option<Tag>]) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(logits.scores.clone());
    let loss = label_loss_graph(&mut g, x, gold)?;
    Ok(g.scalar(loss))
}

/// Converts subword tag predictions into word spans.
///
/// Only positions whose word id differs from the previous position decide
/// anything. `B` closes any open span and opens a new one, `I` extends an
/// open span (an `I` with nothing open is dropped), `O` closes. A special
/// position (`None` word id) flushes an open span. A span still open at the
/// end of the input is flushed as well.
pub fn decode_spans(pred_tags: &[Tag], word_ids: &[Option<usize>]) -> Result<SpanSet> {
    if pred_tags.len() != word_ids.len() {
        return Err(Error::LengthMismatch {
            left: pred_tags.len(),
            right: word_ids.len(),
        });
    }
    let mut spans = Vec::new();
    let mut open = false;
    let (mut begin, mut end) = (0usize, 0usize);
    for (j, (&tag, &wid)) in pred_tags.iter().zip(word_ids).enumerate() {
        if wid.is_none() && open {
            spans.push((begin, end));
            open = false;
        }
        let changed = j == 0 || word_ids[j - 1] != wid;
        let Some(w) = wid else { continue };
        if !changed {
            continue;
        }
        match tag {
            Tag::B => {
                if open {
                    spans.push((begin, end));
                }
                begin = w;
                end = w;
                open = true;
            }
            Tag::I => {
                if open {
                    end = w;
                }
            }
            Tag::O => {
                if open {
                    spans.push((begin, end));
                }
                open = false;
            }
        }
    }
    if open {
        spans.push((begin, end));
    }
    Ok(SpanSet { spans })
}

/// Surface strings of the spans, whitespace-joined, in span order.
pub fn spans_to_terms(spans: &SpanSet, sample: &Sample) -> Result<Vec<String>> {
    let words = sample.words();
    spans
        .spans
        .iter()
        .map(|&(b, e)| {
            if b > e || e >= words.len() {
                return Err(Error::Invariant {
                    id: sample.id.clone(),
                    message: format!("span ({b}, {e}) outside {} words", words.len()),
                });
            }
            Ok(words[b..=e].join(" "))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token_align::{CLS_ID, SEP_ID};
    use ndarray::{array, Array2};
    use Tag::*;

    fn word_level(n: usize) -> Vec<Option<usize>> {
        (0..n).map(Some).collect()
    }

    fn with_specials(tags: &[Tag]) -> (Vec<Tag>, Vec<Option<usize>>) {
        let mut t = vec![O];
        t.extend_from_slice(tags);
        t.push(O);
        let mut w = vec![None];
        w.extend(word_level(tags.len()));
        w.push(None);
        (t, w)
    }

    #[test]
    fn decode_messi() {
        let (t, w) = with_specials(&[B, O, O, O, O]);
        assert_eq!(decode_spans(&t, &w).unwrap().spans, vec![(0, 0)]);
    }

    #[test]
    fn decode_all_outside() {
        let (t, w) = with_specials(&[O, O, O]);
        assert!(decode_spans(&t, &w).unwrap().is_empty());
    }

    #[test]
    fn decode_trailing_and_orphans() {
        let (t, w) = with_specials(&[B, I, O, B]);
        assert_eq!(decode_spans(&t, &w).unwrap().spans, vec![(0, 1), (3, 3)]);
        let (t, w) = with_specials(&[I, I, O]);
        assert!(decode_spans(&t, &w).unwrap().is_empty());
        // no trailing special token: flushed at end of input
        assert_eq!(
            decode_spans(&[B, I], &word_level(2)).unwrap().spans,
            vec![(0, 1)]
        );
    }

    #[test]
    fn continuation_subwords_do_not_decide() {
        // word 0 = two subwords, the second predicted O; word 1 = I
        let tags = [B, B, O, I, O];
        let wids = [None, Some(0), Some(0), Some(1), None];
        assert_eq!(decode_spans(&tags, &wids).unwrap().spans, vec![(0, 1)]);
    }

    #[test]
    fn special_positions_never_open_spans() {
        let tags = [B, O, B];
        let wids = [None, Some(0), None];
        assert!(decode_spans(&tags, &wids).unwrap().is_empty());
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(decode_spans(&[B], &[]).is_err());
    }

    #[test]
    fn zero_head_gives_uniform_probs() {
        let mut params = Params::new();
        params.insert("tagger.w", Array2::zeros((4, 3)));
        params.insert("tagger.b", Array2::zeros((1, 3)));
        let align = TokenAlignment {
            subword_ids: vec![CLS_ID, 5, SEP_ID],
            word_ids: vec![None, Some(0), None],
            attention_mask: vec![1; 3],
            truncated: false,
        };
        let feats = array![[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 0.0, 2.0], [0.0, 0.0, 1.0, 1.0]];
        let logits = tag_tokens(&params, &feats, &align).unwrap();
        for row in logits.probs().rows() {
            for p in row {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        let loss = aspect_label_loss(&logits, &[None, Some(B), None]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rows_of_random_probs_sum_to_one() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut params = Params::new();
        init_tagger(&mut rng, &mut params, 8);
        let feats = nn::uniform(&mut rng, 6, 8, 3.0);
        let align = TokenAlignment {
            subword_ids: vec![0; 6],
            word_ids: vec![None; 6],
            attention_mask: vec![1; 6],
            truncated: false,
        };
        let probs = tag_tokens(&params, &feats, &align).unwrap().probs();
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn loss_is_zero_for_confident_correct_and_ignores_masked_rows() {
        let align = TokenAlignment {
            subword_ids: vec![0; 3],
            word_ids: vec![None, Some(0), None],
            attention_mask: vec![1; 3],
            truncated: false,
        };
        let mut logits = TagLogits {
            scores: array![[0.0, 0.0, 0.0], [0.0, 800.0, 0.0], [1.0, 2.0, 3.0]],
            alignment: align,
        };
        let gold = [None, Some(B), None];
        assert!(aspect_label_loss(&logits, &gold).unwrap().abs() < 1e-12);
        let before = aspect_label_loss(&logits, &gold).unwrap();
        logits.scores[[0, 2]] = 40.0;
        logits.scores[[2, 0]] = -7.0;
        assert_eq!(aspect_label_loss(&logits, &gold).unwrap(), before);
        assert!(matches!(
            aspect_label_loss(&logits, &[None, None, None]),
            Err(Error::EmptySupervision)
        ));
    }

    #[test]
    fn terms_from_spans() {
        let s = Sample {
            id: "x".into(),
            text: "Dr Lukwiya died".into(),
            image_ref: None,
            annotations: vec![],
        };
        let spans = SpanSet {
            spans: vec![(0, 1)],
        };
        assert_eq!(spans_to_terms(&spans, &s).unwrap(), vec!["Dr Lukwiya"]);
        assert!(spans_to_terms(&SpanSet::default(), &s).unwrap().is_empty());
        let bad = SpanSet {
            spans: vec![(2, 3)],
        };
        assert!(spans_to_terms(&bad, &s).is_err());
    }
}
