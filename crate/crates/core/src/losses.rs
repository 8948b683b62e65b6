//! Training objective: focal verb loss, present-time detection loss,
//! horizon-weighted anticipation loss, dual orthogonality regularization,
//! warm-up ramp and the final weighted sum.
//!
//! Everything is a pure function of its inputs. Gradients are provided in
//! closed form for the focal verb loss and both orthogonality terms; the unit
//! tests check them against central finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{cost_matrix, giou, hungarian, Assignment, BBox, CostWeights, HoiTarget, SlotPrediction};
use crate::model::ForwardOutput;
use crate::numerics::{dot, norm, Mat, DEFAULT_EPS};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_binary(y: &Mat, op: &'static str) -> Result<()> {
    if y.values().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("{op}: targets must be 0/1")));
    }
    Ok(())
}

fn check_same(a: &Mat, b: &Mat, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Builds a multi-hot `rows × classes` target matrix.
pub fn multi_hot(rows: &[Vec<usize>], classes: usize) -> Result<Mat> {
    let mut y = Mat::zeros(rows.len(), classes);
    for (i, labels) in rows.iter().enumerate() {
        for &c in labels {
            if c >= classes {
                return Err(Error::InvalidArgument(format!("label {c} >= {classes}")));
            }
            y.set(i, c, 1.0);
        }
    }
    Ok(y)
}

/// Focal-style multi-label verb loss with focusing exponent 2:
///
/// `−1/max(N₊,1) · Σ [Y (1−P)² ln P + (1−Y) P² ln(1−P)]`
pub fn focal_verb_loss(probs: &Mat, targets: &Mat) -> Result<f64> {
    check_same(probs, targets, "focal_verb_loss")?;
    check_binary(targets, "focal_verb_loss")?;
    let positives = targets.values().iter().sum::<f64>();
    let mut sum = 0.0;
    for (&p, &y) in probs.values().iter().zip(targets.values()) {
        let p = clamp_prob(p);
        sum += if y == 1.0 {
            (1.0 - p) * (1.0 - p) * p.ln()
        } else {
            p * p * (1.0 - p).ln()
        };
    }
    Ok(-sum / positives.max(1.0))
}

/// Derivative of [`focal_verb_loss`] with respect to each (clamped) probability.
pub fn focal_verb_grad(probs: &Mat, targets: &Mat) -> Result<Mat> {
    check_same(probs, targets, "focal_verb_grad")?;
    check_binary(targets, "focal_verb_grad")?;
    let scale = -1.0 / targets.values().iter().sum::<f64>().max(1.0);
    let values = probs
        .values()
        .iter()
        .zip(targets.values())
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            let d = if y == 1.0 {
                -2.0 * (1.0 - p) * p.ln() + (1.0 - p) * (1.0 - p) / p
            } else {
                2.0 * p * (1.0 - p).ln() - p * p / (1.0 - p)
            };
            scale * d
        })
        .collect();
    Mat::new(probs.rows(), probs.cols(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionWeights {
    pub lambda_box: f64,
    pub lambda_giou: f64,
    pub lambda_obj: f64,
    pub lambda_verb: f64,
    /// Relative weight of the no-object class in the object cross-entropy.
    pub no_object_weight: f64,
}

impl Default for DetectionWeights {
    fn default() -> Self {
        Self {
            lambda_box: 2.5,
            lambda_giou: 1.0,
            lambda_obj: 1.0,
            lambda_verb: 1.0,
            no_object_weight: 0.1,
        }
    }
}

/// Current-frame outputs of all `P` slots.
#[derive(Debug, Clone)]
pub struct DetectionOutputs<'a> {
    pub subject_boxes: &'a [BBox],
    pub object_boxes: &'a [BBox],
    /// `P × (C_o + 1)`, last column no-object.
    pub object_logits: &'a Mat,
    /// `P × C_v` sigmoid probabilities.
    pub verb_probs: &'a Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionTerms {
    /// Σ over subject/object streams of mean matched L1.
    pub box_l1: f64,
    /// Σ over subject/object streams of mean matched `1 − GIoU`.
    pub giou: f64,
    pub object_ce: f64,
    pub verb_current: f64,
    pub total: f64,
}

fn log_softmax_at(row: &[f64], class: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row[class] - max - lse
}

/// Present-time detection loss over matched slots; unmatched slots are only
/// supervised as no-object. Current verbs use matched slots only.
pub fn detection_loss(
    outputs: &DetectionOutputs<'_>,
    targets: &[HoiTarget],
    assignment: &Assignment,
    weights: &DetectionWeights,
) -> Result<DetectionTerms> {
    let p = outputs.subject_boxes.len();
    if p == 0 {
        return Err(Error::InvalidArgument("detection_loss: no prediction slots".into()));
    }
    if outputs.object_boxes.len() != p
        || outputs.object_logits.rows() != p
        || outputs.verb_probs.rows() != p
    {
        return Err(Error::shape("detection_loss", "slot counts differ across outputs"));
    }
    let no_object = outputs.object_logits.cols() - 1;
    let m = assignment.pairs.len();

    let mut box_l1 = 0.0;
    let mut giou_term = 0.0;
    for &(slot, gt) in &assignment.pairs {
        let t = targets
            .get(gt)
            .ok_or_else(|| Error::InvalidArgument(format!("assignment refers to target {gt}")))?;
        box_l1 += outputs.subject_boxes[slot].l1(&t.subject) + outputs.object_boxes[slot].l1(&t.object);
        giou_term += (1.0 - giou(&outputs.subject_boxes[slot], &t.subject))
            + (1.0 - giou(&outputs.object_boxes[slot], &t.object));
    }
    if m > 0 {
        box_l1 /= m as f64;
        giou_term /= m as f64;
    }

    let mut class_of_slot = vec![no_object; p];
    for &(slot, gt) in &assignment.pairs {
        if targets[gt].object_class >= no_object {
            return Err(Error::InvalidArgument(format!(
                "object class {} out of range",
                targets[gt].object_class
            )));
        }
        class_of_slot[slot] = targets[gt].object_class;
    }
    let mut ce_sum = 0.0;
    let mut weight_sum = 0.0;
    for (slot, &class) in class_of_slot.iter().enumerate() {
        let w = if class == no_object { weights.no_object_weight } else { 1.0 };
        ce_sum += -w * log_softmax_at(outputs.object_logits.row(slot), class);
        weight_sum += w;
    }
    let object_ce = if weight_sum > 0.0 { ce_sum / weight_sum } else { 0.0 };

    let verb_current = if m > 0 {
        let slots: Vec<usize> = assignment.pairs.iter().map(|p| p.0).collect();
        let rows: Vec<Vec<usize>> = assignment.pairs.iter().map(|p| targets[p.1].verbs.clone()).collect();
        let probs = outputs.verb_probs.select_rows(&slots);
        focal_verb_loss(&probs, &multi_hot(&rows, probs.cols())?)?
    } else {
        0.0
    };

    let total = weights.lambda_box * box_l1
        + weights.lambda_giou * giou_term
        + weights.lambda_obj * object_ce
        + weights.lambda_verb * verb_current;
    Ok(DetectionTerms {
        box_l1,
        giou: giou_term,
        object_ce,
        verb_current,
        total,
    })
}

/// Normalized geometric horizon weights `eta · gamma^(j−1) / Σ_m gamma^(m−1)`.
pub fn horizon_weights(eta: f64, gamma: f64, horizons: &[u32]) -> Result<Vec<f64>> {
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("horizon_weights: empty horizon set".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must be in (0, 1], got {gamma}")));
    }
    if eta.is_nan() || eta < 0.0 {
        return Err(Error::InvalidArgument(format!("eta must be >= 0, got {eta}")));
    }
    let powers: Vec<f64> = (0..horizons.len()).map(|j| gamma.powi(j as i32)).collect();
    let denom: f64 = powers.iter().sum();
    Ok(powers.iter().map(|g| eta * g / denom).collect())
}

/// Per-sample, per-horizon validity bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonMask {
    pub bits: Vec<Vec<bool>>,
}

impl HorizonMask {
    pub fn all_valid(samples: usize, horizons: usize) -> Self {
        Self {
            bits: vec![vec![true; horizons]; samples],
        }
    }

    pub fn samples(&self) -> usize {
        self.bits.len()
    }

    pub fn horizons(&self) -> usize {
        self.bits.first().map_or(0, Vec::len)
    }

    pub fn get(&self, sample: usize, h: usize) -> bool {
        self.bits[sample][h]
    }

    fn check(&self, n_h: usize, op: &'static str) -> Result<()> {
        if self.bits.iter().any(|r| r.len() != n_h) {
            return Err(Error::shape(op, format!("mask rows must have {n_h} horizons")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnticipationTerms {
    /// Unweighted focal loss per horizon over valid rows.
    pub per_horizon: Vec<f64>,
    pub total: f64,
}

/// Horizon-weighted focal loss. Row `r` belongs to sample `r / rows_per_sample`;
/// rows whose sample is masked at a horizon are dropped for that horizon.
pub fn anticipation_loss(
    probs: &[Mat],
    targets: &[Mat],
    mask: &HorizonMask,
    rows_per_sample: usize,
    weights: &[f64],
) -> Result<AnticipationTerms> {
    let n_h = weights.len();
    if probs.len() != n_h || targets.len() != n_h {
        return Err(Error::shape("anticipation_loss", "one prob/target matrix per horizon"));
    }
    mask.check(n_h, "anticipation_loss")?;
    let mut per_horizon = Vec::with_capacity(n_h);
    let mut total = 0.0;
    for j in 0..n_h {
        check_same(&probs[j], &targets[j], "anticipation_loss")?;
        if rows_per_sample == 0 || probs[j].rows() != mask.samples() * rows_per_sample {
            return Err(Error::shape(
                "anticipation_loss",
                format!(
                    "{} rows for {} samples x {rows_per_sample}",
                    probs[j].rows(),
                    mask.samples()
                ),
            ));
        }
        let valid: Vec<usize> = (0..probs[j].rows())
            .filter(|r| mask.get(r / rows_per_sample, j))
            .collect();
        let l = if valid.is_empty() {
            0.0
        } else {
            focal_verb_loss(&probs[j].select_rows(&valid), &targets[j].select_rows(&valid))?
        };
        total += weights[j] * l;
        per_horizon.push(l);
    }
    Ok(AnticipationTerms { per_horizon, total })
}

/// Inputs shared by both orthogonality terms. `boundary` and every residual
/// matrix hold `B·P` rows; row `r` belongs to sample `r / slots_per_sample`.
#[derive(Debug, Clone, Copy)]
pub struct OrthInputs<'a> {
    pub boundary: &'a Mat,
    pub residuals: &'a [Mat],
    pub mask: &'a HorizonMask,
    pub slots_per_sample: usize,
    pub eps: f64,
}

impl OrthInputs<'_> {
    fn validate(&self) -> Result<()> {
        self.mask.check(self.residuals.len(), "orthogonality")?;
        let rows = self.mask.samples() * self.slots_per_sample;
        if self.slots_per_sample == 0 || self.boundary.rows() != rows {
            return Err(Error::shape(
                "orthogonality",
                format!("boundary has {} rows, expected {rows}", self.boundary.rows()),
            ));
        }
        for r in self.residuals {
            check_same(r, self.boundary, "orthogonality")?;
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::InvalidArgument("orthogonality eps must be > 0".into()));
        }
        Ok(())
    }

    fn valid(&self, row: usize, h: usize) -> bool {
        self.mask.get(row / self.slots_per_sample, h)
    }
}

fn unit(v: &[f64], eps: f64) -> Vec<f64> {
    let d = norm(v) + eps;
    v.iter().map(|x| x / d).collect()
}

/// `(∂ x̂/∂x)ᵀ g` for `x̂ = x / (‖x‖ + ε)`. At `x = 0` the norm term is dropped.
fn unit_vjp(x: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let n = norm(x);
    let d = n + eps;
    if n == 0.0 {
        return g.iter().map(|gi| gi / d).collect();
    }
    let xg = dot(x, g);
    let k = xg / (n * d * d);
    x.iter().zip(g).map(|(xi, gi)| gi / d - k * xi).collect()
}

/// Masked mean of squared cosines between boundary rows and residual rows.
pub fn task_orthogonality(inputs: &OrthInputs<'_>) -> Result<f64> {
    inputs.validate()?;
    let mut sum = 0.0;
    let mut count = 0.0;
    for r in 0..inputs.boundary.rows() {
        let z = unit(inputs.boundary.row(r), inputs.eps);
        for (h, res) in inputs.residuals.iter().enumerate() {
            if inputs.valid(r, h) {
                let c = dot(&z, &unit(res.row(r), inputs.eps));
                sum += c * c;
                count += 1.0;
            }
        }
    }
    Ok(sum / (count + inputs.eps))
}

fn horizon_pair_counts(inputs: &OrthInputs<'_>) -> Vec<(usize, usize, f64)> {
    let n_h = inputs.residuals.len();
    let rows = inputs.boundary.rows();
    let mut out = Vec::new();
    for a in 0..n_h {
        for b in a + 1..n_h {
            let n = (0..rows).filter(|&r| inputs.valid(r, a) && inputs.valid(r, b)).count();
            if n > 0 {
                out.push((a, b, n as f64));
            }
        }
    }
    out
}

/// Mean over jointly valid horizon pairs `(a < b)` of the masked mean squared
/// cosine between their residuals; 0 when no pair is jointly valid.
pub fn horizon_orthogonality(inputs: &OrthInputs<'_>) -> Result<f64> {
    inputs.validate()?;
    let pairs = horizon_pair_counts(inputs);
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(a, b, n) in &pairs {
        let mut s = 0.0;
        for r in 0..inputs.boundary.rows() {
            if inputs.valid(r, a) && inputs.valid(r, b) {
                let c = dot(
                    &unit(inputs.residuals[a].row(r), inputs.eps),
                    &unit(inputs.residuals[b].row(r), inputs.eps),
                );
                s += c * c;
            }
        }
        total += s / (n + inputs.eps);
    }
    Ok(total / (pairs.len() as f64 + inputs.eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthGrads {
    pub boundary: Mat,
    pub residuals: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthGradients {
    pub task: OrthGrads,
    pub horizon: OrthGrads,
}

/// Whether orthogonality gradients flow into the boundary state as well as
/// the residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GradientRoute {
    #[default]
    Both,
    ResidualsOnly,
}

/// Closed-form gradients of both orthogonality terms.
pub fn orth_grads(inputs: &OrthInputs<'_>, route: GradientRoute) -> Result<OrthGradients> {
    inputs.validate()?;
    let (rows, d) = inputs.boundary.shape();
    let n_h = inputs.residuals.len();
    let eps = inputs.eps;

    let mut task = OrthGrads {
        boundary: Mat::zeros(rows, d),
        residuals: vec![Mat::zeros(rows, d); n_h],
    };
    let count = (0..rows)
        .flat_map(|r| (0..n_h).map(move |h| (r, h)))
        .filter(|&(r, h)| inputs.valid(r, h))
        .count() as f64;
    let scale = 1.0 / (count + eps);
    for r in 0..rows {
        let z = inputs.boundary.row(r);
        let zu = unit(z, eps);
        for h in 0..n_h {
            if !inputs.valid(r, h) {
                continue;
            }
            let x = inputs.residuals[h].row(r);
            let xu = unit(x, eps);
            let coef = 2.0 * dot(&zu, &xu) * scale;
            for (g, v) in task.residuals[h].row_mut(r).iter_mut().zip(unit_vjp(x, &zu, eps)) {
                *g += coef * v;
            }
            if route == GradientRoute::Both {
                for (g, v) in task.boundary.row_mut(r).iter_mut().zip(unit_vjp(z, &xu, eps)) {
                    *g += coef * v;
                }
            }
        }
    }

    let mut horizon = OrthGrads {
        boundary: Mat::zeros(rows, d),
        residuals: vec![Mat::zeros(rows, d); n_h],
    };
    let pairs = horizon_pair_counts(inputs);
    let outer = 1.0 / (pairs.len() as f64 + eps);
    for &(a, b, n) in &pairs {
        let inner = 1.0 / (n + eps);
        for r in 0..rows {
            if !(inputs.valid(r, a) && inputs.valid(r, b)) {
                continue;
            }
            let xa = inputs.residuals[a].row(r);
            let xb = inputs.residuals[b].row(r);
            let (ua, ub) = (unit(xa, eps), unit(xb, eps));
            let coef = 2.0 * dot(&ua, &ub) * inner * outer;
            let ga = unit_vjp(xa, &ub, eps);
            let gb = unit_vjp(xb, &ua, eps);
            for (g, v) in horizon.residuals[a].row_mut(r).iter_mut().zip(ga) {
                *g += coef * v;
            }
            for (g, v) in horizon.residuals[b].row_mut(r).iter_mut().zip(gb) {
                *g += coef * v;
            }
        }
    }
    Ok(OrthGradients { task, horizon })
}

/// Warm-up ramp `α₀ + (1 − α₀) · min(e / (E_warm − 1), 1)` with zero-based epochs.
pub fn rampup(epoch: u32, alpha0: f64, warmup_epochs: u32) -> Result<f64> {
    if warmup_epochs < 2 {
        return Err(Error::InvalidArgument(format!(
            "warm-up epochs must be >= 2, got {warmup_epochs}"
        )));
    }
    let frac = (epoch as f64 / (warmup_epochs - 1) as f64).min(1.0);
    Ok(alpha0 + (1.0 - alpha0) * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub eta: f64,
    pub gamma: f64,
    pub alpha0: f64,
    pub warmup_epochs: u32,
    pub lambda_torth: f64,
    pub lambda_horth: f64,
    pub eps: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            eta: 0.8,
            gamma: 0.7,
            alpha0: 0.25,
            warmup_epochs: 8,
            lambda_torth: 0.05,
            lambda_horth: 0.05,
            eps: DEFAULT_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub det: f64,
    pub box_l1: f64,
    pub giou: f64,
    pub obj: f64,
    pub verb_current: f64,
    pub verb_future: Vec<f64>,
    pub ant: f64,
    pub torth: f64,
    pub horth: f64,
    pub alpha: f64,
    pub lambda_torth: f64,
    pub lambda_horth: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recomputes the total from the stored terms.
    pub fn recompose(&self) -> f64 {
        self.det + self.alpha * (self.ant + self.lambda_torth * self.torth + self.lambda_horth * self.horth)
    }
}

/// `det + alpha(epoch) · (ant + lambda_torth · torth + lambda_horth · horth)`.
pub fn total_loss(
    det: &DetectionTerms,
    ant: &AnticipationTerms,
    torth: f64,
    horth: f64,
    epoch: u32,
    weights: &ObjectiveWeights,
) -> Result<LossBreakdown> {
    let alpha = rampup(epoch, weights.alpha0, weights.warmup_epochs)?;
    let mut b = LossBreakdown {
        det: det.total,
        box_l1: det.box_l1,
        giou: det.giou,
        obj: det.object_ce,
        verb_current: det.verb_current,
        verb_future: ant.per_horizon.clone(),
        ant: ant.total,
        torth,
        horth,
        alpha,
        lambda_torth: weights.lambda_torth,
        lambda_horth: weights.lambda_horth,
        total: 0.0,
    };
    b.total = b.recompose();
    Ok(b)
}

/// Main loss plus the same loss evaluated on intermediate decoder outputs.
pub fn with_auxiliary(main: &LossBreakdown, auxiliary: &[LossBreakdown]) -> f64 {
    auxiliary.iter().fold(main.total, |acc, b| acc + b.total)
}

/// Supervision for one clip: detection-frame instances plus per-horizon
/// future verbs for each instance (`None` when the horizon is masked).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipTargets {
    pub current: Vec<HoiTarget>,
    pub future: Vec<Option<Vec<Vec<usize>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct ObjectiveConfig {
    pub cost: CostWeights,
    pub detection: DetectionWeights,
    pub objective: ObjectiveWeights,
}


pub fn slot_predictions(out: &ForwardOutput) -> Vec<SlotPrediction> {
    let obj = out.object_probs();
    let verbs = out.verb_probs_current();
    (0..out.subject_boxes.len())
        .map(|i| SlotPrediction {
            subject: BBox::from_array(out.subject_boxes[i]),
            object: BBox::from_array(out.object_boxes[i]),
            object_probs: obj.row(i).to_vec(),
            verb_probs: verbs.row(i).to_vec(),
        })
        .collect()
}

/// Matches one forward pass against its clip targets and evaluates every loss
/// term. The same assignment supervises all horizons.
pub fn objective_from_forward(
    out: &ForwardOutput,
    targets: &ClipTargets,
    epoch: u32,
    config: &ObjectiveConfig,
) -> Result<(Assignment, LossBreakdown)> {
    let n_h = out.horizons.len();
    if targets.future.len() != n_h {
        return Err(Error::shape("objective_from_forward", "one future entry per horizon"));
    }
    let preds = slot_predictions(out);
    let assignment = hungarian(&cost_matrix(&preds, &targets.current, &config.cost))?;

    let subject: Vec<BBox> = preds.iter().map(|p| p.subject).collect();
    let object: Vec<BBox> = preds.iter().map(|p| p.object).collect();
    let verb_probs = out.verb_probs_current();
    let det = detection_loss(
        &DetectionOutputs {
            subject_boxes: &subject,
            object_boxes: &object,
            object_logits: &out.object_logits,
            verb_probs: &verb_probs,
        },
        &targets.current,
        &assignment,
        &config.detection,
    )?;

    let w = &config.objective;
    let slots: Vec<usize> = assignment.pairs.iter().map(|p| p.0).collect();
    let c_v = out.verb_logits_current.cols();
    let mut probs = Vec::with_capacity(n_h);
    let mut ys = Vec::with_capacity(n_h);
    let mut bits = Vec::with_capacity(n_h);
    for (j, future) in targets.future.iter().enumerate() {
        probs.push(out.verb_probs_future(j).select_rows(&slots));
        let rows: Vec<Vec<usize>> = match future {
            Some(per_gt) => assignment
                .pairs
                .iter()
                .map(|p| per_gt.get(p.1).cloned().unwrap_or_default())
                .collect(),
            None => vec![Vec::new(); slots.len()],
        };
        ys.push(multi_hot(&rows, c_v)?);
        bits.push(future.is_some());
    }
    let mask = HorizonMask { bits: vec![bits] };
    let lambdas = horizon_weights(w.eta, w.gamma, &out.horizons)?;
    let ant = if slots.is_empty() {
        AnticipationTerms {
            per_horizon: vec![0.0; n_h],
            total: 0.0,
        }
    } else {
        anticipation_loss(&probs, &ys, &mask, slots.len(), &lambdas)?
    };

    let orth = OrthInputs {
        boundary: &out.boundary_state,
        residuals: &out.residuals,
        mask: &mask,
        slots_per_sample: out.boundary_state.rows(),
        eps: w.eps,
    };
    let torth = task_orthogonality(&orth)?;
    let horth = horizon_orthogonality(&orth)?;
    Ok((assignment, total_loss(&det, &ant, torth, horth, epoch, w)?))
}
