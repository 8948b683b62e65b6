//! Unified pair-slot decoder forward pass.
//!
//! `P` persistent pair slots carry one subject-object hypothesis each across
//! `L` observed frames. Subject and object query streams are decoded against
//! injected visual memory, summed into a shared pair representation, refined
//! by a detection decoder, and summarized per horizon by anchors that attend
//! over the whole `P·L` pair trajectory. Anticipation states are read out as
//! residuals from the final-frame detection state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    mean_heads, multihead_cross_attention, sigmoid, AttentionParams, Cube, LayerNorm, Linear, Mat,
};
use crate::rng::SeededRng;

/// Grid that boundary and anticipation states are snapped to. Differences and
/// sums of grid values below 2^12 in magnitude are exact in `f64`, which makes
/// `residual + boundary == anticipation` hold bit-for-bit.
const STATE_GRID: f64 = (1u64 << 40) as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// P
    pub pair_slots: usize,
    /// L
    pub frames: usize,
    /// D
    pub hidden: usize,
    /// P_v
    pub visual_tokens: usize,
    /// C_o
    pub object_classes: usize,
    /// C_v
    pub verb_classes: usize,
    pub horizons: Vec<u32>,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub init_std: f64,
    pub seed: u64,
    /// When false, decoders skip self-attention and each horizon anchor row
    /// only attends over its own slot's trajectory.
    #[serde(default = "default_true")]
    pub cross_slot_attention: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pair_slots: 8,
            frames: 6,
            hidden: 32,
            visual_tokens: 16,
            object_classes: 6,
            verb_classes: 8,
            horizons: vec![1, 3, 5, 7],
            decoder_layers: 2,
            heads: 4,
            ffn_hidden: 64,
            init_std: 0.02,
            seed: 0,
            cross_slot_attention: true,
        }
    }
}

impl ModelConfig {
    /// Full-size slots and width (P=180, D=384); the rest as defaults.
    pub fn full_scale() -> Self {
        Self {
            pair_slots: 180,
            hidden: 384,
            ffn_hidden: 768,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("pair_slots", self.pair_slots),
            ("frames", self.frames),
            ("hidden", self.hidden),
            ("visual_tokens", self.visual_tokens),
            ("object_classes", self.object_classes),
            ("verb_classes", self.verb_classes),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if self.horizons.is_empty() {
            return Err(Error::InvalidArgument("no horizons".into()));
        }
        if self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "horizons must be positive and strictly increasing: {:?}",
                self.horizons
            )));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairQueryBank {
    pub subject: Cube,
    pub object: Cube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualMemory {
    pub tokens: Mat,
}

impl VisualMemory {
    pub fn synthesize(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        Self {
            tokens: Mat::gaussian(config.visual_tokens, config.hidden, 1.0, &mut rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningBank {
    pub task_detection: Vec<f64>,
    pub task_anticipation: Vec<f64>,
    /// One `P × D` anchor matrix per horizon.
    pub horizon_anchors: Vec<Mat>,
    /// One `D` vector per horizon.
    pub horizon_embeds: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm_self: LayerNorm,
    pub norm_cross: LayerNorm,
    pub norm_ffn: LayerNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderStack {
    pub layers: Vec<DecoderLayer>,
    pub self_attention: bool,
}

impl DecoderStack {
    pub fn init(config: &ModelConfig, rng: &mut SeededRng) -> Self {
        let d = config.hidden;
        let std = config.init_std;
        let layers = (0..config.decoder_layers)
            .map(|_| DecoderLayer {
                self_attn: AttentionParams::init(d, config.heads, std, rng),
                cross_attn: AttentionParams::init(d, config.heads, std, rng),
                ffn_in: Linear::init(d, config.ffn_hidden, std, rng),
                ffn_out: Linear::init(config.ffn_hidden, d, std, rng),
                norm_self: LayerNorm::new(d),
                norm_cross: LayerNorm::new(d),
                norm_ffn: LayerNorm::new(d),
            })
            .collect();
        Self {
            layers,
            self_attention: config.cross_slot_attention,
        }
    }

    pub fn empty() -> Self {
        Self {
            layers: Vec::new(),
            self_attention: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    /// `C_o × D`
    pub objects: Mat,
    /// `C_v × D`
    pub verbs: Mat,
    /// Extra row scored against features for the no-object class.
    pub no_object: Vec<f64>,
}

/// Two-layer MLP producing sigmoid-squashed `(cx, cy, w, h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl BoxHead {
    fn init(d: usize, std: f64, rng: &mut SeededRng) -> Self {
        Self {
            hidden: Linear::init(d, d, std, rng),
            out: Linear::init(d, 4, std, rng),
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<Vec<[f64; 4]>> {
        let h = self.hidden.forward(x)?.map(|v| v.max(0.0));
        let o = self.out.forward(&h)?;
        Ok(o
            .iter_rows()
            .map(|r| [sigmoid(r[0]), sigmoid(r[1]), sigmoid(r[2]), sigmoid(r[3])])
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub queries: PairQueryBank,
    pub conditioning: ConditioningBank,
    pub subject_decoder: DecoderStack,
    pub object_decoder: DecoderStack,
    pub detection_decoder: DecoderStack,
    pub anticipation_decoder: DecoderStack,
    pub temporal_summary: AttentionParams,
    pub prototypes: PrototypeBank,
    pub subject_box: BoxHead,
    pub object_box: BoxHead,
}

impl ModelParams {
    /// Seeded Gaussian initialization (std `config.init_std`).
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed);
        let (p, l, d) = (config.pair_slots, config.frames, config.hidden);
        let std = config.init_std;
        let queries = PairQueryBank {
            subject: Cube::gaussian([p, l, d], std, &mut rng),
            object: Cube::gaussian([p, l, d], std, &mut rng),
        };
        let conditioning = ConditioningBank {
            task_detection: rng.gaussian_vec(d, std),
            task_anticipation: rng.gaussian_vec(d, std),
            horizon_anchors: config
                .horizons
                .iter()
                .map(|_| Mat::gaussian(p, d, std, &mut rng))
                .collect(),
            horizon_embeds: config.horizons.iter().map(|_| rng.gaussian_vec(d, std)).collect(),
        };
        let subject_decoder = DecoderStack::init(config, &mut rng);
        let object_decoder = DecoderStack::init(config, &mut rng);
        let detection_decoder = DecoderStack::init(config, &mut rng);
        let anticipation_decoder = DecoderStack::init(config, &mut rng);
        let temporal_summary = AttentionParams::init(d, config.heads, std, &mut rng);
        let prototypes = PrototypeBank {
            objects: Mat::gaussian(config.object_classes, d, std, &mut rng),
            verbs: Mat::gaussian(config.verb_classes, d, std, &mut rng),
            no_object: rng.gaussian_vec(d, std),
        };
        let subject_box = BoxHead::init(d, std, &mut rng);
        let object_box = BoxHead::init(d, std, &mut rng);
        Ok(Self {
            queries,
            conditioning,
            subject_decoder,
            object_decoder,
            detection_decoder,
            anticipation_decoder,
            temporal_summary,
            prototypes,
            subject_box,
            object_box,
        })
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let (p, l, d) = (config.pair_slots, config.frames, config.hidden);
        let bad = |what: &str| Err(Error::shape("ModelParams::check", what.to_string()));
        if self.queries.subject.dims() != [p, l, d] || self.queries.object.dims() != [p, l, d] {
            return bad("pair query shape");
        }
        let c = &self.conditioning;
        if c.task_detection.len() != d || c.task_anticipation.len() != d {
            return bad("task embedding width");
        }
        let nh = config.horizons.len();
        if c.horizon_anchors.len() != nh || c.horizon_embeds.len() != nh {
            return bad("one anchor and one embed per horizon");
        }
        if c.horizon_anchors.iter().any(|a| a.shape() != (p, d))
            || c.horizon_embeds.iter().any(|e| e.len() != d)
        {
            return bad("horizon conditioning shape");
        }
        if self.prototypes.objects.shape() != (config.object_classes, d)
            || self.prototypes.verbs.shape() != (config.verb_classes, d)
            || self.prototypes.no_object.len() != d
        {
            return bad("prototype shape");
        }
        for stack in [
            &self.subject_decoder,
            &self.object_decoder,
            &self.detection_decoder,
            &self.anticipation_decoder,
        ] {
            if stack.layers.len() != config.decoder_layers {
                return bad("decoder layer count");
            }
        }
        Ok(())
    }
}

/// Per-stage attention weights, averaged over heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMaps {
    /// Per layer, `(P·L) × P_v`.
    pub subject_decoder: Vec<Mat>,
    pub object_decoder: Vec<Mat>,
    pub detection_decoder: Vec<Mat>,
    /// Per horizon, `P × (P·L)` (or `P × L` when slots are isolated).
    pub temporal_summary: Vec<Mat>,
    /// Per horizon, per layer, `P × P_v`.
    pub anticipation_decoder: Vec<Vec<Mat>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub horizons: Vec<u32>,
    /// Normalized `(cx, cy, w, h)` per slot.
    pub subject_boxes: Vec<[f64; 4]>,
    pub object_boxes: Vec<[f64; 4]>,
    /// `P × (C_o + 1)`, last column is no-object.
    pub object_logits: Mat,
    /// `P × C_v`
    pub verb_logits_current: Mat,
    /// Per horizon, `P × C_v`.
    pub verb_logits_future: Vec<Mat>,
    /// Final-frame detection state, `P × D`.
    pub boundary_state: Mat,
    /// Per horizon anticipation state, `P × D`.
    pub anticipation_states: Vec<Mat>,
    /// Per horizon, anticipation state minus boundary state.
    pub residuals: Vec<Mat>,
    pub attention: AttentionMaps,
}

impl ForwardOutput {
    pub fn verb_probs_current(&self) -> Mat {
        self.verb_logits_current.map(sigmoid)
    }

    pub fn verb_probs_future(&self, h_index: usize) -> Mat {
        self.verb_logits_future[h_index].map(sigmoid)
    }

    pub fn object_probs(&self) -> Mat {
        crate::numerics::softmax_rows(&self.object_logits)
    }
}

/// Shared pair representation: elementwise `Zs + Zo`.
pub fn fuse_pair(subject: &Cube, object: &Cube) -> Result<Cube> {
    subject.add(object)
}

/// Adds each embedding to every row. Order of embeddings does not matter.
pub fn add_conditioning(q: &Mat, embeds: &[&[f64]]) -> Result<Mat> {
    let mut out = q.clone();
    for e in embeds {
        if e.len() != q.cols() {
            return Err(Error::shape(
                "add_conditioning",
                format!("embedding length {} vs width {}", e.len(), q.cols()),
            ));
        }
    }
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for e in embeds {
            for (v, x) in row.iter_mut().zip(e.iter()) {
                *v += x;
            }
        }
    }
    Ok(out)
}

pub fn add_conditioning_cube(q: &Cube, embeds: &[&[f64]]) -> Result<Cube> {
    let [p, l, _] = q.dims();
    Cube::from_flat(add_conditioning(&q.flatten(), embeds)?, p, l)
}

/// Post-norm decoder: per layer `x = LN(x + SelfAttn(x))`,
/// `x = LN(x + CrossAttn(x, memory))`, `x = LN(x + FFN(x))`.
/// Returns the refined queries and per-layer head-averaged cross-attention.
pub fn decoder_forward(
    stack: &DecoderStack,
    queries: &Mat,
    memory: &VisualMemory,
) -> Result<(Mat, Vec<Mat>)> {
    if queries.cols() != memory.tokens.cols() {
        return Err(Error::shape(
            "decoder_forward",
            format!(
                "query width {} vs memory width {}",
                queries.cols(),
                memory.tokens.cols()
            ),
        ));
    }
    let mut x = queries.clone();
    let mut maps = Vec::with_capacity(stack.layers.len());
    for layer in &stack.layers {
        if stack.self_attention {
            let (sa, _) = multihead_cross_attention(&layer.self_attn, &x, &x, &x)?;
            x = layer.norm_self.forward(&x.add(&sa)?)?;
        }
        let (ca, w) =
            multihead_cross_attention(&layer.cross_attn, &x, &memory.tokens, &memory.tokens)?;
        x = layer.norm_cross.forward(&x.add(&ca)?)?;
        let hidden = layer.ffn_in.forward(&x)?.map(|v| v.max(0.0));
        let ff = layer.ffn_out.forward(&hidden)?;
        x = layer.norm_ffn.forward(&x.add(&ff)?)?;
        maps.push(mean_heads(&w));
    }
    Ok((x, maps))
}

fn decode_cube(stack: &DecoderStack, q: &Cube, memory: &VisualMemory) -> Result<(Cube, Vec<Mat>)> {
    let [p, l, _] = q.dims();
    let (z, maps) = decoder_forward(stack, &q.flatten(), memory)?;
    Ok((Cube::from_flat(z, p, l)?, maps))
}

/// Final-frame slice `Z[:, L-1, :]`.
pub fn boundary_state(z_det: &Cube) -> Mat {
    let l = z_det.dims()[1];
    z_det.slice_mid(l - 1)
}

/// Horizon anchors attend over the pair trajectory flattened to `P·L` keys.
/// With `slot_local`, anchor row `i` only sees slot `i`'s `L` frames.
/// Returns the summary and head-averaged weights.
pub fn temporal_summary(
    anchor: &Mat,
    pair: &Cube,
    params: &AttentionParams,
    slot_local: bool,
) -> Result<(Mat, Mat)> {
    let [p, l, d] = pair.dims();
    if anchor.cols() != d {
        return Err(Error::shape(
            "temporal_summary",
            format!("anchor width {} vs pair width {d}", anchor.cols()),
        ));
    }
    if !slot_local {
        let kv = pair.flatten();
        let (out, w) = multihead_cross_attention(params, anchor, &kv, &kv)?;
        return Ok((out, mean_heads(&w)));
    }
    if anchor.rows() != p {
        return Err(Error::shape(
            "temporal_summary",
            format!("{} anchor rows for {p} slots", anchor.rows()),
        ));
    }
    let mut out = Mat::zeros(p, d);
    let mut weights = Mat::zeros(p, l);
    for i in 0..p {
        let kv = pair.slab(i);
        let q = anchor.select_rows(&[i]);
        let (o, w) = multihead_cross_attention(params, &q, &kv, &kv)?;
        out.row_mut(i).copy_from_slice(o.row(0));
        weights.row_mut(i).copy_from_slice(mean_heads(&w).row(0));
    }
    Ok((out, weights))
}

/// Anticipation state minus boundary state, elementwise.
pub fn compute_residual(anticipation: &Mat, boundary: &Mat) -> Result<Mat> {
    anticipation.sub(boundary)
}

/// Dot-product similarity of each feature row with each prototype row.
pub fn prototype_logits(features: &Mat, prototypes: &Mat) -> Result<Mat> {
    if features.cols() != prototypes.cols() {
        return Err(Error::shape(
            "prototype_logits",
            format!(
                "feature width {} vs prototype width {}",
                features.cols(),
                prototypes.cols()
            ),
        ));
    }
    features.matmul_t(prototypes)
}

fn snap_to_grid(m: &Mat) -> Mat {
    m.map(|v| (v * STATE_GRID).round() / STATE_GRID)
}

pub fn model_forward(
    config: &ModelConfig,
    params: &ModelParams,
    memory: &VisualMemory,
) -> Result<ForwardOutput> {
    config.validate()?;
    params.check(config)?;
    if memory.tokens.cols() != config.hidden {
        return Err(Error::shape(
            "model_forward",
            format!("memory width {} vs hidden {}", memory.tokens.cols(), config.hidden),
        ));
    }
    let l = config.frames;

    let (z_subject, subject_maps) = decode_cube(&params.subject_decoder, &params.queries.subject, memory)?;
    let (z_object, object_maps) = decode_cube(&params.object_decoder, &params.queries.object, memory)?;
    let pair = fuse_pair(&z_subject, &z_object)?;

    let q_det = add_conditioning_cube(&pair, &[&params.conditioning.task_detection])?;
    let (z_det, detection_maps) = decode_cube(&params.detection_decoder, &q_det, memory)?;
    let boundary = snap_to_grid(&boundary_state(&z_det));

    let subject_boxes = params.subject_box.forward(&z_subject.slice_mid(l - 1))?;
    let object_boxes = params.object_box.forward(&z_object.slice_mid(l - 1))?;

    let mut with_no_object = params.prototypes.objects.clone().into_values();
    with_no_object.extend_from_slice(&params.prototypes.no_object);
    let object_protos = Mat::new(config.object_classes + 1, config.hidden, with_no_object)?;
    let object_logits = prototype_logits(&boundary, &object_protos)?;
    let verb_logits_current = prototype_logits(&boundary, &params.prototypes.verbs)?;

    let n_h = config.horizons.len();
    let mut verb_logits_future = Vec::with_capacity(n_h);
    let mut anticipation_states = Vec::with_capacity(n_h);
    let mut residuals = Vec::with_capacity(n_h);
    let mut summary_maps = Vec::with_capacity(n_h);
    let mut anticipation_maps = Vec::with_capacity(n_h);
    for j in 0..n_h {
        let (summary, tsm_w) = temporal_summary(
            &params.conditioning.horizon_anchors[j],
            &pair,
            &params.temporal_summary,
            !config.cross_slot_attention,
        )?;
        let q_ant = add_conditioning(
            &summary,
            &[
                &params.conditioning.task_anticipation,
                &params.conditioning.horizon_embeds[j],
            ],
        )?;
        let (z_ant, maps) = decoder_forward(&params.anticipation_decoder, &q_ant, memory)?;
        let z_ant = snap_to_grid(&z_ant);
        residuals.push(compute_residual(&z_ant, &boundary)?);
        verb_logits_future.push(prototype_logits(&z_ant, &params.prototypes.verbs)?);
        anticipation_states.push(z_ant);
        summary_maps.push(tsm_w);
        anticipation_maps.push(maps);
    }

    Ok(ForwardOutput {
        horizons: config.horizons.clone(),
        subject_boxes,
        object_boxes,
        object_logits,
        verb_logits_current,
        verb_logits_future,
        boundary_state: boundary,
        anticipation_states,
        residuals,
        attention: AttentionMaps {
            subject_decoder: subject_maps,
            object_decoder: object_maps,
            detection_decoder: detection_maps,
            temporal_summary: summary_maps,
            anticipation_decoder: anticipation_maps,
        },
    })
}

/// On-disk bundle for golden tests and the FFI: config plus every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl ModelBundle {
    pub fn from_json(s: &str) -> Result<Self> {
        let b: ModelBundle = serde_json::from_str(s)?;
        b.config.validate()?;
        b.params.check(&b.config)?;
        Ok(b)
    }
}
