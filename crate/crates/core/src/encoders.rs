//! Text and image feature extractors.
//!
//! The toy backend is a one-layer self-attention encoder (embedding or patch
//! projection, multi-head attention with residual, ReLU feed-forward with
//! residual) whose weights are drawn from `toy_seed`. The pretrained backend
//! is declared in configuration but not bundled with this build.

use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Params, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{self, AttentionWeights};
use crate::token_align::{TokenAlignment, ToySplitter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Pretrained,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden_size: usize,
    pub heads: usize,
    pub patch_size: usize,
    /// Square input resolution in pixels.
    pub image_size: usize,
    pub backend: Backend,
    pub toy_seed: u64,
    pub vocab_size: usize,
    /// Characters per subword piece in the toy splitter.
    pub piece_chars: usize,
    pub max_positions: usize,
    pub ffn_hidden: usize,
    pub pixel_mean: [f64; 3],
    pub pixel_std: [f64; 3],
    /// Name strings identifying pretrained weights.
    pub text_weights: String,
    pub vision_weights: String,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_size: 8,
            heads: 2,
            patch_size: 16,
            image_size: 32,
            backend: Backend::Toy,
            toy_seed: 0,
            vocab_size: 512,
            piece_chars: 7,
            max_positions: 64,
            ffn_hidden: 16,
            // CLIP normalisation constants
            pixel_mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
            pixel_std: [0.268_629_54, 0.261_302_58, 0.275_777_11],
            text_weights: "microsoft/deberta-v3-base".into(),
            vision_weights: "openai/clip-vit-base-patch16".into(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.heads == 0 || !self.hidden_size.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of heads {}",
                self.hidden_size, self.heads
            )));
        }
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image size {} is not a multiple of patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.vocab_size < 4 || self.piece_chars == 0 || self.max_positions < 2 {
            return Err(Error::Config("toy vocabulary settings out of range".into()));
        }
        Ok(())
    }

    pub fn patch_count(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }

    pub fn tokenizer(&self) -> ToySplitter {
        ToySplitter {
            piece_chars: self.piece_chars,
            vocab_size: self.vocab_size,
        }
    }

    fn require_toy(&self) -> Result<()> {
        match self.backend {
            Backend::Toy => Ok(()),
            Backend::Pretrained => Err(Error::BackendUnavailable(format!(
                "pretrained ({} / {})",
                self.text_weights, self.vision_weights
            ))),
        }
    }
}

/// Encoded text, one row per alignment position; row 0 is the `[CLS]` row.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub tokens: Tensor,
}

impl TextFeatures {
    pub fn cls(&self) -> Tensor {
        self.tokens.row(0).to_owned().insert_axis(ndarray::Axis(0))
    }

    pub fn hidden_size(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Encoded image: row 0 is the `[CLS]` row followed by `M` patch rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    pub patches: Tensor,
    pub patch_count: usize,
    pub patch_size: usize,
}

pub const TEXT_PREFIX: &str = "text";
pub const IMAGE_PREFIX: &str = "image";

fn init_block<R: Rng>(rng: &mut R, params: &mut Params, prefix: &str, cfg: &EncoderConfig) {
    let d = cfg.hidden_size;
    nn::init_attention(rng, params, &format!("{prefix}.attn"), d);
    nn::init_linear(rng, params, &format!("{prefix}.ffn1"), d, cfg.ffn_hidden);
    nn::init_linear(rng, params, &format!("{prefix}.ffn2"), cfg.ffn_hidden, d);
}

/// Adds the text encoder's tensors (`text.*`), drawn from `toy_seed`.
pub fn init_text_encoder(cfg: &EncoderConfig, params: &mut Params) -> Result<()> {
    cfg.validate()?;
    cfg.require_toy()?;
    let mut rng = crate::seeded_rng(cfg.toy_seed, 0x7e47);
    let d = cfg.hidden_size;
    params.insert("text.emb", nn::uniform(&mut rng, cfg.vocab_size, d, 1.0));
    params.insert("text.pos", nn::uniform(&mut rng, cfg.max_positions, d, 0.1));
    init_block(&mut rng, params, TEXT_PREFIX, cfg);
    Ok(())
}

/// Adds the image encoder's tensors (`image.*`), drawn from `toy_seed`.
pub fn init_image_encoder(cfg: &EncoderConfig, params: &mut Params) -> Result<()> {
    cfg.validate()?;
    cfg.require_toy()?;
    let mut rng = crate::seeded_rng(cfg.toy_seed, 0x1a6e);
    let d = cfg.hidden_size;
    let patch_dim = 3 * cfg.patch_size * cfg.patch_size;
    nn::init_linear(&mut rng, params, "image.patch", patch_dim, d);
    params.insert("image.cls", nn::uniform(&mut rng, 1, d, 0.5));
    params.insert("image.pos", nn::uniform(&mut rng, cfg.patch_count() + 1, d, 0.1));
    params.insert("image.null", nn::uniform(&mut rng, 1, d, 0.5));
    init_block(&mut rng, params, IMAGE_PREFIX, cfg);
    Ok(())
}

/// `H = X + MHA(X)`, `out = H + W2 relu(W1 H)`.
fn encoder_block(g: &mut Graph, params: &Params, prefix: &str, x: Var, heads: usize) -> Var {
    let w = AttentionWeights::bind(g, params, &format!("{prefix}.attn"));
    let attended = nn::multi_head_attention(g, x, x, w, heads).output;
    let h = g.add(x, attended);
    let f = nn::linear(g, params, &format!("{prefix}.ffn1"), h);
    let f = g.relu(f);
    let f = nn::linear(g, params, &format!("{prefix}.ffn2"), f);
    g.add(h, f)
}

pub fn text_forward(
    g: &mut Graph,
    params: &Params,
    cfg: &EncoderConfig,
    align: &TokenAlignment,
) -> Result<Var> {
    if align.len() > cfg.max_positions {
        return Err(Error::Shape(format!(
            "sequence of {} tokens exceeds encoder maximum {}",
            align.len(),
            cfg.max_positions
        )));
    }
    if let Some(&bad) = align.subword_ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::Shape(format!("token id {bad} outside vocabulary")));
    }
    let emb = g.param(params, "text.emb");
    let pos = g.param(params, "text.pos");
    let tokens = g.gather(emb, &align.subword_ids);
    let positions: Vec<usize> = (0..align.len()).collect();
    let positions = g.gather(pos, &positions);
    let x = g.add(tokens, positions);
    Ok(encoder_block(g, params, TEXT_PREFIX, x, cfg.heads))
}

/// Flattens an `H × W × 3` image into `M` rows of `3·p²` pixel values.
pub fn patchify(image: &Array3<f64>, patch: usize) -> Result<Tensor> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::Image(format!("expected 3 channels, got {c}")));
    }
    if h != w || h % patch != 0 {
        return Err(Error::Image(format!(
            "{h}×{w} image cannot be cut into {patch}×{patch} patches"
        )));
    }
    let per_side = h / patch;
    let mut out = Array2::zeros((per_side * per_side, 3 * patch * patch));
    for py in 0..per_side {
        for px in 0..per_side {
            let row = py * per_side + px;
            let mut col = 0;
            for y in 0..patch {
                for x in 0..patch {
                    for ch in 0..3 {
                        out[[row, col]] = image[[py * patch + y, px * patch + x, ch]];
                        col += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn image_forward(
    g: &mut Graph,
    params: &Params,
    cfg: &EncoderConfig,
    image: &Array3<f64>,
) -> Result<Var> {
    let (h, w, _) = image.dim();
    if h != cfg.image_size || w != cfg.image_size {
        return Err(Error::Image(format!(
            "expected {0}×{0} input, got {h}×{w}",
            cfg.image_size
        )));
    }
    let patches = patchify(image, cfg.patch_size)?;
    let patches = g.constant(patches);
    let projected = nn::linear(g, params, "image.patch", patches);
    let cls = g.param(params, "image.cls");
    let x = g.concat_rows(&[cls, projected]);
    let pos = g.param(params, "image.pos");
    let x = g.add(x, pos);
    Ok(encoder_block(g, params, IMAGE_PREFIX, x, cfg.heads))
}

/// Stand-in features for a post without an image: the learned null row
/// repeated over all `M + 1` positions.
pub fn null_image_forward(g: &mut Graph, params: &Params, cfg: &EncoderConfig) -> Var {
    let null = g.param(params, "image.null");
    g.broadcast_rows(null, cfg.patch_count() + 1)
}

pub fn encode_text(params: &Params, cfg: &EncoderConfig, align: &TokenAlignment) -> Result<TextFeatures> {
    let mut g = Graph::new();
    let out = text_forward(&mut g, params, cfg, align)?;
    Ok(TextFeatures {
        tokens: g.value(out).clone(),
    })
}

pub fn encode_image(params: &Params, cfg: &EncoderConfig, image: &Array3<f64>) -> Result<PatchFeatures> {
    let mut g = Graph::new();
    let out = image_forward(&mut g, params, cfg, image)?;
    Ok(PatchFeatures {
        patches: g.value(out).clone(),
        patch_count: cfg.patch_count(),
        patch_size: cfg.patch_size,
    })
}

/// Resize (shorter side to `image_size`), center-crop, scale to [0, 1] and
/// standardise per channel.
pub fn preprocess(img: &DynamicImage, cfg: &EncoderConfig) -> Array3<f64> {
    let side = cfg.image_size as u32;
    let (w, h) = (img.width().max(1), img.height().max(1));
    let scale = side as f64 / w.min(h) as f64;
    let (nw, nh) = (
        ((w as f64 * scale).round() as u32).max(side),
        ((h as f64 * scale).round() as u32).max(side),
    );
    let resized = img.resize_exact(nw, nh, FilterType::Triangle);
    let (x0, y0) = ((nw - side) / 2, (nh - side) / 2);
    let cropped = resized.crop_imm(x0, y0, side, side).to_rgb8();
    let n = cfg.image_size;
    Array3::from_shape_fn((n, n, 3), |(y, x, c)| {
        let v = f64::from(cropped.get_pixel(x as u32, y as u32)[c]) / 255.0;
        (v - cfg.pixel_mean[c]) / cfg.pixel_std[c]
    })
}

pub fn load_image(path: &Path, cfg: &EncoderConfig) -> Result<Array3<f64>> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(preprocess(&img, cfg))
}
