//! Aspect-oriented sentiment classification with translation-based
//! alignment.
//!
//! Forward pass for one (sentence, aspect, image) triple:
//!
//! ```text
//! t   = encode_text(sentence)            t_cls = t[0]
//! a   = encode_text(aspect)
//! v   = encode_image(image)
//! v0  = v + att(queries = v, keys/values = a)
//! A   = MHA(v0, v0)                      θ_v = A + relu(A W_A + b_A)
//! a'  = MHA(queries = Q_t, keys/values = θ_v)
//! s   = softmax(W_g (a'[0] + t_cls) + b_g)
//! L   = CE(s, gold) + β · KL(softmax(a') ‖ softmax(sg(a)))
//! ```
//!
//! The refiner and the translator share one set of `W^Q, W^K, W^V`
//! projections (`tba.wq/wk/wv`). All of the translation module's tensors live
//! under the `tba.` prefix.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax, Graph, Params, Tensor, Var};
use crate::corpus::Polarity;
use crate::encoders::{self, EncoderConfig, PatchFeatures};
use crate::error::{Error, Result};
use crate::nn::{self, AttentionWeights};
use crate::token_align::{tokenize_pair_with_alignment, tokenize_with_alignment};

pub const COND_PREFIX: &str = "cond";
pub const TBA_PREFIX: &str = "tba";
pub const CLASSIFIER_PREFIX: &str = "classifier";

/// Clamp applied to the gold-class probability before taking its log.
pub const PROB_EPSILON: f64 = 1e-12;

/// Aspect features: every row of the encoded aspect term.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectFeatures {
    pub tokens: Tensor,
}

impl AspectFeatures {
    pub fn cls(&self) -> Tensor {
        self.tokens.row(0).to_owned().insert_axis(Axis(0))
    }
}

/// Parameters of the vision-to-text translation module.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationModule {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    /// Feed-forward weight `W^A` (`d × d`) and bias `b_A` (`1 × d`).
    pub wa: Tensor,
    pub ba: Tensor,
    /// Learnable query `Q_t`, `L_q × d`, shared by every sample.
    pub query: Tensor,
    pub heads: usize,
}

impl TranslationModule {
    pub fn init<R: Rng>(rng: &mut R, d: usize, query_len: usize, heads: usize) -> Self {
        Self {
            wq: nn::glorot(rng, d, d),
            wk: nn::glorot(rng, d, d),
            wv: nn::glorot(rng, d, d),
            wa: nn::glorot(rng, d, d),
            ba: Array2::zeros((1, d)),
            query: nn::uniform(rng, query_len, d, 1.0),
            heads,
        }
    }

    pub fn from_params(params: &Params, heads: usize) -> Result<Self> {
        let get = |n: &str| {
            params
                .get(&format!("{TBA_PREFIX}.{n}"))
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {TBA_PREFIX}.{n}")))
        };
        Ok(Self {
            wq: get("wq")?,
            wk: get("wk")?,
            wv: get("wv")?,
            wa: get("ffn.w")?,
            ba: get("ffn.b")?,
            query: get("query")?,
            heads,
        })
    }

    pub fn write_params(&self, params: &mut Params) {
        params.insert("tba.wq", self.wq.clone());
        params.insert("tba.wk", self.wk.clone());
        params.insert("tba.wv", self.wv.clone());
        params.insert("tba.ffn.w", self.wa.clone());
        params.insert("tba.ffn.b", self.ba.clone());
        params.insert("tba.query", self.query.clone());
    }

    /// Names of the tensors this module owns inside a [`Params`] store.
    pub fn param_names() -> [&'static str; 6] {
        ["tba.ffn.b", "tba.ffn.w", "tba.query", "tba.wk", "tba.wq", "tba.wv"]
    }
}

/// Linear polarity classifier over the fused vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `d × 3`
    pub w: Tensor,
    /// `1 × 3`
    pub b: Tensor,
}

impl Classifier {
    pub fn from_params(params: &Params) -> Result<Self> {
        let get = |n: &str| {
            params
                .get(&format!("{CLASSIFIER_PREFIX}.{n}"))
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {CLASSIFIER_PREFIX}.{n}")))
        };
        Ok(Self {
            w: get("w")?,
            b: get("b")?,
        })
    }

    pub fn write_params(&self, params: &mut Params) {
        params.insert("classifier.w", self.w.clone());
        params.insert("classifier.b", self.b.clone());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentPrediction {
    /// Probabilities in class order negative, neutral, positive.
    pub probs: [f64; 3],
    pub label: Polarity,
}

impl SentimentPrediction {
    /// Argmax over the probabilities; a tie that includes neutral resolves
    /// to neutral, other ties to the lower class index.
    pub fn from_probs(probs: [f64; 3]) -> Self {
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let label = if probs[Polarity::Neutral.index()] == max {
            Polarity::Neutral
        } else {
            let idx = probs.iter().position(|&p| p == max).unwrap_or(1);
            Polarity::from_index(idx).expect("three classes")
        };
        Self { probs, label }
    }

    pub fn from_logits(logits: &Tensor) -> Self {
        let p = softmax(logits);
        Self::from_probs([p[[0, 0]], p[[0, 1]], p[[0, 2]]])
    }
}

/// Adds `cond.*`, `tba.*` and `classifier.*` tensors.
pub fn init_masc_heads<R: Rng>(rng: &mut R, params: &mut Params, d: usize, query_len: usize, heads: usize) {
    nn::init_attention(rng, params, &format!("{COND_PREFIX}.attn"), d);
    TranslationModule::init(rng, d, query_len, heads).write_params(params);
    nn::init_linear(rng, params, CLASSIFIER_PREFIX, d, Polarity::ALL.len());
}

/// `v + att(v, a)`: patches attend over the aspect rows.
pub fn condition_graph(g: &mut Graph, params: &Params, v: Var, a: Var, heads: usize) -> Var {
    if g.value(a).nrows() == 0 {
        return v;
    }
    let w = AttentionWeights::bind(g, params, &format!("{COND_PREFIX}.attn"));
    let attended = nn::multi_head_attention(g, v, a, w, heads).output;
    g.add(v, attended)
}

/// Refined vision features `θ_v` and the refiner's attention probabilities.
pub fn refine_graph(g: &mut Graph, params: &Params, v0: Var, heads: usize) -> (Var, Vec<Var>) {
    let w = AttentionWeights::bind(g, params, TBA_PREFIX);
    let attended = nn::multi_head_attention(g, v0, v0, w, heads);
    let a = attended.output;
    let h = nn::linear(g, params, &format!("{TBA_PREFIX}.ffn"), a);
    let h = g.relu(h);
    (g.add(a, h), attended.probs)
}

/// Translated text features `a'` (`L_q × d`) read out of `θ_v` by `Q_t`.
pub fn translate_graph(g: &mut Graph, params: &Params, theta: Var, heads: usize) -> Var {
    let w = AttentionWeights::bind(g, params, TBA_PREFIX);
    let query = g.param(params, &format!("{TBA_PREFIX}.query"));
    nn::multi_head_attention(g, query, theta, w, heads).output
}

pub fn classify_graph(g: &mut Graph, params: &Params, fused: Var) -> Var {
    nn::linear(g, params, CLASSIFIER_PREFIX, fused)
}

/// Mean over rows of `KL(softmax(a') ‖ softmax(target))`; both sides are
/// mean-pooled to one row when their row counts differ.
pub fn consistency_graph(g: &mut Graph, a_prime: Var, target: Var) -> Result<Var> {
    let (pr, pc) = g.value(a_prime).dim();
    let (tr, tc) = g.value(target).dim();
    if pc != tc {
        return Err(Error::Shape(format!("feature widths {pc} and {tc} differ")));
    }
    let (p, q) = if pr == tr {
        (a_prime, target)
    } else {
        (g.mean_rows(a_prime), g.mean_rows(target))
    };
    let rows = g.value(p).nrows();
    if rows == 0 || rows != g.value(q).nrows() {
        return Err(Error::Shape(format!("row counts {pr} and {tr} cannot be compared")));
    }
    let log_p = g.log_softmax_rows(p);
    let log_q = g.log_softmax_rows(q);
    let prob_p = g.softmax_rows(p);
    let diff = g.sub(log_p, log_q);
    let weighted = g.mul(prob_p, diff);
    let total = g.sum(weighted);
    Ok(g.scale(total, 1.0 / rows as f64))
}

fn bind_module(module: &TranslationModule) -> Params {
    let mut params = Params::new();
    module.write_params(&mut params);
    params
}

/// Conditions patch features on aspect features, keeping the patch shape.
pub fn aspect_conditioned_patches(
    params: &Params,
    aspect: &AspectFeatures,
    patches: &PatchFeatures,
    heads: usize,
) -> PatchFeatures {
    let mut g = Graph::new();
    let v = g.constant(patches.patches.clone());
    let a = g.constant(aspect.tokens.clone());
    let out = condition_graph(&mut g, params, v, a, heads);
    PatchFeatures {
        patches: g.value(out).clone(),
        ..patches.clone()
    }
}

pub fn refine_vision(v0: &Tensor, module: &TranslationModule) -> Tensor {
    let params = bind_module(module);
    let mut g = Graph::new();
    let v0 = g.constant(v0.clone());
    let (theta, _) = refine_graph(&mut g, &params, v0, module.heads);
    g.value(theta).clone()
}

/// Refines `v0` and translates it; row 0 of the result is `a'_[cls]`.
pub fn translate_v2t(v0: &Tensor, module: &TranslationModule) -> Tensor {
    let params = bind_module(module);
    let mut g = Graph::new();
    let v0 = g.constant(v0.clone());
    let (theta, _) = refine_graph(&mut g, &params, v0, module.heads);
    let out = translate_graph(&mut g, &params, theta, module.heads);
    g.value(out).clone()
}

pub fn fuse_and_classify(a_prime_cls: &Tensor, t_cls: &Tensor, classifier: &Classifier) -> SentimentPrediction {
    let fused = a_prime_cls + t_cls;
    let logits = fused.dot(&classifier.w) + &classifier.b;
    SentimentPrediction::from_logits(&logits)
}

pub fn sentiment_loss(probs: &[f64; 3], gold: Polarity) -> f64 {
    -probs[gold.index()].max(PROB_EPSILON).ln()
}

pub fn consistency_loss(a_prime: &Tensor, a_target: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(a_prime.clone());
    let q = g.constant(a_target.clone());
    let loss = consistency_graph(&mut g, p, q)?;
    Ok(g.scalar(loss))
}

pub fn total_loss(ls: f64, lc: f64, beta: f64) -> f64 {
    ls + beta * lc
}

/// Switches that change the classification graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Drop the translation module; classify from `t_cls` alone.
    pub no_tba: bool,
    /// Condition the image on the whole sentence instead of the aspect.
    pub no_pipeline: bool,
    /// One text encoder serves both extraction and classification.
    pub shared_encoder: bool,
    /// Replace every image with the learned null embedding.
    pub no_image: bool,
}

/// Everything the classifier needs besides its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MascOptions {
    pub encoder: EncoderConfig,
    pub max_text_length: usize,
    pub ablations: Ablations,
    /// Encode `[CLS] sentence [SEP] aspect [SEP]` for `t_cls`.
    pub pair_encoding: bool,
}

pub struct MascInput<'a> {
    pub sentence: &'a str,
    /// `None` classifies the whole sentence.
    pub aspect: Option<&'a str>,
    pub image: Option<&'a Array3<f64>>,
    pub sample_id: &'a str,
}

pub struct MascGraph {
    pub logits: Var,
    pub a_prime: Option<Var>,
    /// Rows the translated features are compared against.
    pub target: Var,
    /// Image features after conditioning, when the translation path ran.
    pub conditioned: Option<Var>,
}

pub fn masc_forward(g: &mut Graph, params: &Params, opts: &MascOptions, input: &MascInput<'_>) -> Result<MascGraph> {
    let enc = &opts.encoder;
    let tok = enc.tokenizer();
    let sentence_align = match (opts.pair_encoding, input.aspect) {
        (true, Some(aspect)) => tokenize_pair_with_alignment(&tok, input.sentence, aspect, opts.max_text_length)?,
        _ => tokenize_with_alignment(&tok, input.sentence, opts.max_text_length)?,
    };
    let t = encoders::text_forward(g, params, enc, &sentence_align)?;
    let t_cls = g.slice_rows(t, 0, 1);

    if opts.ablations.no_tba {
        let logits = classify_graph(g, params, t_cls);
        return Ok(MascGraph {
            logits,
            a_prime: None,
            target: t,
            conditioned: None,
        });
    }

    let a = match (opts.ablations.no_pipeline, input.aspect) {
        (false, Some(aspect)) => {
            let align = tokenize_with_alignment(&tok, aspect, opts.max_text_length)?;
            encoders::text_forward(g, params, enc, &align)?
        }
        _ if opts.pair_encoding => {
            let align = tokenize_with_alignment(&tok, input.sentence, opts.max_text_length)?;
            encoders::text_forward(g, params, enc, &align)?
        }
        _ => t,
    };

    let v = match (opts.ablations.no_image, input.image) {
        (true, _) => encoders::null_image_forward(g, params, enc),
        (false, Some(img)) => encoders::image_forward(g, params, enc, img)?,
        (false, None) => return Err(Error::MissingImage(input.sample_id.to_string())),
    };
    let v0 = condition_graph(g, params, v, a, enc.heads);
    let (theta, _) = refine_graph(g, params, v0, enc.heads);
    let a_prime = translate_graph(g, params, theta, enc.heads);
    let a_prime_cls = g.slice_rows(a_prime, 0, 1);
    let fused = g.add(a_prime_cls, t_cls);
    let logits = classify_graph(g, params, fused);
    // stop-gradient on the consistency target
    let target = g.constant(g.value(a).clone());
    Ok(MascGraph {
        logits,
        a_prime: Some(a_prime),
        target,
        conditioned: Some(v0),
    })
}

/// Loss terms of one triple.
pub struct MascLoss {
    pub total: Var,
    pub sentiment: f64,
    /// `None` when the translation module is ablated.
    pub consistency: Option<f64>,
}

pub fn masc_loss(
    g: &mut Graph,
    params: &Params,
    opts: &MascOptions,
    input: &MascInput<'_>,
    gold: Polarity,
    beta: f64,
) -> Result<MascLoss> {
    let out = masc_forward(g, params, opts, input)?;
    let logp = g.log_softmax_rows(out.logits);
    let nll = g.pick_mean(logp, &[(0, gold.index())]);
    let ls = g.scale(nll, -1.0);
    let sentiment = g.scalar(ls);
    match out.a_prime {
        None => Ok(MascLoss {
            total: ls,
            sentiment,
            consistency: None,
        }),
        Some(a_prime) => {
            let lc = consistency_graph(g, a_prime, out.target)?;
            let consistency = g.scalar(lc);
            let weighted = g.scale(lc, beta);
            let total = g.add(ls, weighted);
            Ok(MascLoss {
                total,
                sentiment,
                consistency: Some(consistency),
            })
        }
    }
}

/// Full classification of one aspect of one post.
pub fn classify_aspect(
    params: &Params,
    opts: &MascOptions,
    input: &MascInput<'_>,
) -> Result<SentimentPrediction> {
    let mut g = Graph::new();
    let out = masc_forward(&mut g, params, opts, input)?;
    Ok(SentimentPrediction::from_logits(g.value(out.logits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_value_projection_is_identity() {
        let mut r = rng(1);
        let mut params = Params::new();
        init_masc_heads(&mut r, &mut params, 8, 4, 2);
        params.insert("cond.attn.wv", Array2::zeros((8, 8)));
        let v = PatchFeatures {
            patches: nn::uniform(&mut r, 5, 8, 1.0),
            patch_count: 4,
            patch_size: 16,
        };
        let a = AspectFeatures {
            tokens: nn::uniform(&mut r, 3, 8, 1.0),
        };
        assert_eq!(aspect_conditioned_patches(&params, &a, &v, 2), v);
    }

    #[test]
    fn conditioning_ignores_aspect_row_order() {
        let mut r = rng(2);
        let mut params = Params::new();
        init_masc_heads(&mut r, &mut params, 8, 4, 2);
        let v = PatchFeatures {
            patches: nn::uniform(&mut r, 5, 8, 1.0),
            patch_count: 4,
            patch_size: 16,
        };
        let tokens = nn::uniform(&mut r, 3, 8, 1.0);
        let permuted = tokens.select(Axis(0), &[2, 0, 1]);
        let out1 = aspect_conditioned_patches(&params, &AspectFeatures { tokens }, &v, 2);
        let out2 = aspect_conditioned_patches(&params, &AspectFeatures { tokens: permuted }, &v, 2);
        for (x, y) in out1.patches.iter().zip(out2.patches.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert_eq!(out1.patches.dim(), v.patches.dim());
        let empty = AspectFeatures {
            tokens: Array2::zeros((0, 8)),
        };
        assert_eq!(aspect_conditioned_patches(&params, &empty, &v, 2), v);
    }

    fn identity_module(d: usize, query_len: usize) -> TranslationModule {
        TranslationModule {
            wq: Array2::eye(d),
            wk: Array2::eye(d),
            wv: Array2::eye(d),
            wa: Array2::zeros((d, d)),
            ba: Array2::zeros((1, d)),
            query: Array2::from_shape_fn((query_len, d), |(i, j)| (i + 2 * j) as f64 * 0.3),
            heads: 1,
        }
    }

    #[test]
    fn single_patch_attention_is_the_value_projection() {
        // d=2, heads=1: one key, so attention weight is 1.
        let mut m = identity_module(2, 3);
        m.wv = array![[2.0, 1.0], [0.0, -1.0]];
        m.wa = array![[1.0, 0.0], [0.0, 1.0]];
        m.ba = array![[0.0, 0.0]];
        let v0 = array![[0.5, 1.5]];
        let value = v0.dot(&m.wv); // [1.0, -1.0]
        let expected = &value + &value.mapv(|x: f64| x.max(0.0)); // A + relu(A I)
        assert_eq!(refine_vision(&v0, &m), expected);

        m.wa = Array2::zeros((2, 2));
        assert_eq!(refine_vision(&v0, &m), value);
    }

    #[test]
    fn one_key_translation_copies_value_row() {
        let m = identity_module(2, 3);
        let v0 = array![[0.25, -0.75]];
        let out = translate_v2t(&v0, &m);
        assert_eq!(out.dim(), (3, 2));
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.25, -0.75]);
        }
    }

    #[test]
    fn refiner_attention_rows_normalised() {
        let mut r = rng(5);
        let mut params = Params::new();
        init_masc_heads(&mut r, &mut params, 8, 4, 2);
        let mut g = Graph::new();
        let v0 = g.constant(nn::uniform(&mut r, 7, 8, 2.0));
        let (_, probs) = refine_graph(&mut g, &params, v0, 2);
        assert_eq!(probs.len(), 2);
        for p in probs {
            for row in g.value(p).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn translation_is_per_sample() {
        let mut r = rng(6);
        let m = TranslationModule::init(&mut r, 8, 4, 2);
        let img = nn::uniform(&mut r, 5, 8, 1.0);
        let other = nn::uniform(&mut r, 5, 8, 1.0);
        let first = translate_v2t(&img, &m);
        let _ = translate_v2t(&other, &m);
        assert_eq!(first, translate_v2t(&img, &m));
    }

    #[test]
    fn zero_classifier_is_uniform_and_neutral() {
        let c = Classifier {
            w: Array2::zeros((4, 3)),
            b: Array2::zeros((1, 3)),
        };
        let x = array![[1.0, -2.0, 0.5, 3.0]];
        let y = array![[0.1, 0.2, 0.3, 0.4]];
        let p = fuse_and_classify(&x, &y, &c);
        for v in p.probs {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_eq!(p.label, Polarity::Neutral);
    }

    #[test]
    fn fusion_is_commutative() {
        let c = Classifier {
            w: array![[0.5, -1.0, 0.2], [1.0, 0.0, -0.3], [0.0, 0.4, 0.9], [-0.6, 0.1, 0.0]],
            b: array![[0.1, 0.0, -0.1]],
        };
        let x = array![[1.0, -2.0, 0.5, 3.0]];
        let y = array![[0.1, 0.2, 0.3, 0.4]];
        assert_eq!(fuse_and_classify(&x, &y, &c), fuse_and_classify(&y, &x, &c));
    }

    #[test]
    fn golden_classifier_probabilities() {
        // g = [1.1, -1.8, 0.8, 3.4]; logits = g·W + b computed by hand:
        //  col0: 0.55 - 1.8 + 0 - 2.04 + 0.1 = -3.19
        //  col1: -1.1 + 0 + 0.32 + 0.34 + 0.0 = -0.44
        //  col2: 0.22 + 0.54 + 0.72 + 0 - 0.1 = 1.38
        let c = Classifier {
            w: array![[0.5, -1.0, 0.2], [1.0, 0.0, -0.3], [0.0, 0.4, 0.9], [-0.6, 0.1, 0.0]],
            b: array![[0.1, 0.0, -0.1]],
        };
        let x = array![[1.0, -2.0, 0.5, 3.0]];
        let y = array![[0.1, 0.2, 0.3, 0.4]];
        let p = fuse_and_classify(&x, &y, &c);
        let logits = [-3.19f64, -0.44, 1.38];
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (got, l) in p.probs.iter().zip(logits) {
            assert_abs_diff_eq!(*got, l.exp() / z, epsilon = 1e-12);
        }
        assert_eq!(p.label, Polarity::Positive);
    }

    #[test]
    fn argmax_invariant_under_positive_logit_scaling() {
        let logits = array![[0.3, -1.2, 0.9]];
        let base = SentimentPrediction::from_logits(&logits).label;
        for c in [0.01, 0.5, 3.0, 100.0] {
            assert_eq!(SentimentPrediction::from_logits(&(&logits * c)).label, base);
        }
    }

    #[test]
    fn sentiment_loss_closed_forms() {
        assert_eq!(sentiment_loss(&[0.0, 1.0, 0.0], Polarity::Neutral), 0.0);
        let u = 1.0 / 3.0;
        assert_abs_diff_eq!(sentiment_loss(&[u, u, u], Polarity::Positive), 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            sentiment_loss(&[0.7, 0.2, 0.1], Polarity::Negative),
            0.356_674_943_938_732_4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            sentiment_loss(&[0.0, 0.5, 0.5], Polarity::Negative),
            -(PROB_EPSILON.ln()),
            epsilon = 1e-9
        );
    }

    #[test]
    fn consistency_closed_forms() {
        let x = array![[0.3, -1.0, 2.0], [1.0, 1.0, 0.0]];
        assert!(consistency_loss(&x, &x).unwrap().abs() < 1e-12);
        // softmax(ln p) = p
        let p = array![[0.5f64.ln(), 0.5f64.ln()]];
        let q = array![[0.9f64.ln(), 0.1f64.ln()]];
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert_abs_diff_eq!(consistency_loss(&p, &q).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.5108, epsilon = 1e-4);
        // different row counts are pooled
        let many = array![[0.1, 0.2], [0.3, 0.0], [0.0, 0.0]];
        assert!(consistency_loss(&many, &q).unwrap() >= 0.0);
        assert!(consistency_loss(&many, &array![[1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(0.7, 3.0, 0.0), 0.7);
        assert_abs_diff_eq!(total_loss(0.4, 0.2, 0.5), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn tie_rules() {
        assert_eq!(SentimentPrediction::from_probs([0.4, 0.4, 0.2]).label, Polarity::Neutral);
        assert_eq!(SentimentPrediction::from_probs([0.4, 0.2, 0.4]).label, Polarity::Negative);
    }
}
