//! Seeded generators for annotation streams and evaluation cases.
//!
//! Streams carry planted keyframe gaps and come with the instance-only frames
//! that fill the short ones. Evaluation cases carry the metrics they should
//! produce; those are derived from which ground truth each prediction was
//! planted against, never from box overlap, so they serve as an independent
//! oracle for [`crate::eval`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::benchmark::{AnnotationStream, GapReport, HoiLabel, Instance, Keyframe, SupplementSet};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, FrequencyEntry, GtRecord, GtTriplet, Prediction};
use crate::losses::ClipTargets;
use crate::matching::{BBox, HoiTarget};
use crate::model::ModelConfig;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedGap {
    /// Released keyframe after which the gap opens.
    pub position: usize,
    /// Spacing to the next released keyframe, in nominal steps (≥ 2).
    pub length_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStreamSpec {
    pub seed: u64,
    pub video_id: String,
    #[serde(default = "default_split")]
    pub split: String,
    pub n_keyframes: usize,
    pub nominal_step: f64,
    #[serde(default)]
    pub gaps: Vec<PlantedGap>,
    pub n_pairs: usize,
    pub n_verbs: usize,
    pub n_object_classes: usize,
    /// Released keyframe ranges `[start, end)` without active verbs.
    #[serde(default)]
    pub idle: Vec<[usize; 2]>,
    /// Gaps shorter than this many steps get instance-only supplement frames.
    #[serde(default)]
    pub supplement_below: Option<u32>,
    pub image_w: u32,
    pub image_h: u32,
    pub frame_stride: u64,
}

fn default_split() -> String {
    "train".into()
}

impl SynthStreamSpec {
    /// A small stream with default sizes and no gaps.
    pub fn basic(seed: u64, video_id: &str, n_keyframes: usize) -> Self {
        Self {
            seed,
            video_id: video_id.into(),
            split: default_split(),
            n_keyframes,
            nominal_step: 1.0,
            gaps: Vec::new(),
            n_pairs: 2,
            n_verbs: 6,
            n_object_classes: 5,
            idle: Vec::new(),
            supplement_below: None,
            image_w: 640,
            image_h: 480,
            frame_stride: 30,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("stream spec {}: {m}", self.video_id)));
        if !(self.nominal_step > 0.0 && self.nominal_step.is_finite()) {
            return bad("nominal step must be positive".into());
        }
        if self.n_pairs == 0 || self.n_verbs == 0 || self.n_object_classes == 0 {
            return bad("pairs, verbs and object classes must be positive".into());
        }
        if self.image_w < 64 || self.image_h < 64 {
            return bad("image must be at least 64x64".into());
        }
        let mut seen = BTreeSet::new();
        for g in &self.gaps {
            if g.position + 1 >= self.n_keyframes {
                return bad(format!("gap at {} out of range", g.position));
            }
            if g.length_steps < 2 {
                return bad(format!("gap at {} must span at least 2 steps", g.position));
            }
            if !seen.insert(g.position) {
                return bad(format!("overlapping gaps at {}", g.position));
            }
        }
        if self.idle.iter().any(|r| r[0] > r[1] || r[1] > self.n_keyframes) {
            return bad("idle range out of bounds".into());
        }
        Ok(())
    }

    /// Timeline step of each released keyframe.
    fn steps(&self) -> Vec<u64> {
        let extra: BTreeMap<usize, u64> = self
            .gaps
            .iter()
            .map(|g| (g.position, g.length_steps as u64 - 1))
            .collect();
        let mut s = 0u64;
        (0..self.n_keyframes)
            .map(|i| {
                let cur = s;
                s += 1 + extra.get(&i).copied().unwrap_or(0);
                cur
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStream {
    pub stream: AnnotationStream,
    pub supplements: SupplementSet,
    /// The gap report `detect_gaps` must reproduce.
    pub planted: GapReport,
}

struct Track {
    id: u64,
    category: usize,
    size: [f64; 2],
    base: [f64; 2],
    amp: [f64; 2],
    freq: f64,
    phase: f64,
}

impl Track {
    fn new(id: u64, category: usize, spec: &SynthStreamSpec, rng: &mut SeededRng) -> Self {
        let (iw, ih) = (spec.image_w as f64, spec.image_h as f64);
        let size = [rng.uniform_range(0.1, 0.3) * iw, rng.uniform_range(0.15, 0.4) * ih];
        let amp = [rng.uniform_range(0.0, 0.05) * iw, rng.uniform_range(0.0, 0.05) * ih];
        let base = [
            rng.uniform_range(size[0] / 2.0 + amp[0], iw - size[0] / 2.0 - amp[0]),
            rng.uniform_range(size[1] / 2.0 + amp[1], ih - size[1] / 2.0 - amp[1]),
        ];
        Self {
            id,
            category,
            size,
            base,
            amp,
            freq: rng.uniform_range(0.05, 0.3),
            phase: rng.uniform_range(0.0, std::f64::consts::TAU),
        }
    }

    /// Box at a timeline step, rounded to 1/100 pixel.
    fn bbox(&self, step: u64) -> [f64; 4] {
        let a = self.freq * step as f64 + self.phase;
        let cx = self.base[0] + self.amp[0] * a.sin();
        let cy = self.base[1] + self.amp[1] * a.cos();
        let r = |v: f64| (v * 100.0).round() / 100.0;
        [
            r(cx - self.size[0] / 2.0),
            r(cy - self.size[1] / 2.0),
            r(cx + self.size[0] / 2.0),
            r(cy + self.size[1] / 2.0),
        ]
    }

    fn instance(&self, step: u64) -> Instance {
        Instance {
            track_id: Some(self.id),
            category: self.category,
            bbox: self.bbox(step),
        }
    }
}

/// Active verbs of pair `k` at a timeline step.
fn pair_verbs(k: usize, step: u64, n_verbs: usize) -> BTreeSet<usize> {
    let s = step as usize;
    let mut v = BTreeSet::new();
    v.insert((k + s / 4) % n_verbs);
    if (s / 7 + k).is_multiple_of(2) {
        v.insert((2 * k + s / 7 + 1) % n_verbs);
    }
    v
}

/// Generates a stream whose gap report equals the planted gaps. Category 0
/// is the person class; objects use categories `1..=n_object_classes`.
pub fn gen_stream(spec: &SynthStreamSpec) -> Result<SynthStream> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let mut tracks = Vec::with_capacity(2 * spec.n_pairs);
    for k in 0..spec.n_pairs {
        tracks.push(Track::new(2 * k as u64 + 1, 0, spec, &mut rng));
        let cat = 1 + rng.below(spec.n_object_classes);
        tracks.push(Track::new(2 * k as u64 + 2, cat, spec, &mut rng));
    }
    let frame = |step: u64, hois: Vec<HoiLabel>| Keyframe {
        t_sec: step as f64 * spec.nominal_step,
        frame_idx: step * spec.frame_stride,
        image_w: spec.image_w,
        image_h: spec.image_h,
        instances: tracks.iter().map(|t| t.instance(step)).collect(),
        hois,
    };

    let steps = spec.steps();
    let keyframes: Vec<Keyframe> = steps
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let idle = spec.idle.iter().any(|r| (r[0]..r[1]).contains(&i));
            let hois = (0..spec.n_pairs)
                .map(|k| HoiLabel {
                    subj_track: 2 * k as u64 + 1,
                    obj_track: 2 * k as u64 + 2,
                    verbs: if idle { BTreeSet::new() } else { pair_verbs(k, s, spec.n_verbs) },
                })
                .collect();
            frame(s, hois)
        })
        .collect();

    let mut supplements = Vec::new();
    let mut planted = GapReport::default();
    let mut gaps = spec.gaps.clone();
    gaps.sort_by_key(|g| g.position);
    for PlantedGap { position: pos, length_steps: len } in gaps {
        planted.n_step += 1;
        planted.l_steps.push(len as f64 * spec.nominal_step);
        if spec.supplement_below.is_some_and(|b| len < b) {
            for s in steps[pos] + 1..steps[pos + 1] {
                supplements.push(frame(s, Vec::new()));
            }
        }
    }
    let stream = AnnotationStream {
        video_id: spec.video_id.clone(),
        nominal_step_sec: spec.nominal_step,
        split: spec.split.clone(),
        keyframes,
    };
    stream.validate()?;
    Ok(SynthStream {
        supplements: SupplementSet {
            video_id: spec.video_id.clone(),
            keyframes: supplements,
        },
        stream,
        planted,
    })
}

/// Seeded supervision for one forward pass: up to `min(3, pair_slots)`
/// instances with normalized boxes. When there are several horizons the last
/// one is masked.
pub fn gen_clip_targets(config: &ModelConfig, seed: u64) -> ClipTargets {
    let mut rng = SeededRng::new(seed ^ 0x7a9_6e75);
    let n = 1 + rng.below(config.pair_slots.min(3));
    let bx = |rng: &mut SeededRng| {
        let (w, h) = (rng.uniform_range(0.1, 0.4), rng.uniform_range(0.1, 0.4));
        BBox::new(rng.uniform_range(w / 2.0, 1.0 - w / 2.0), rng.uniform_range(h / 2.0, 1.0 - h / 2.0), w, h)
    };
    let verbs = |rng: &mut SeededRng| -> Vec<usize> {
        let mut v: BTreeSet<usize> = BTreeSet::new();
        for _ in 0..rng.below(3) {
            v.insert(rng.below(config.verb_classes));
        }
        v.into_iter().collect()
    };
    let current = (0..n)
        .map(|_| HoiTarget {
            subject: bx(&mut rng),
            object: bx(&mut rng),
            object_class: rng.below(config.object_classes),
            verbs: {
                let mut v = verbs(&mut rng);
                if v.is_empty() {
                    v.push(rng.below(config.verb_classes));
                }
                v
            },
        })
        .collect();
    let last = config.horizons.len().saturating_sub(1);
    let future = (0..config.horizons.len())
        .map(|j| (j != last || last == 0).then(|| (0..n).map(|_| verbs(&mut rng)).collect()))
        .collect();
    ClipTargets { current, future }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEvalSpec {
    pub seed: u64,
    pub n_clips: usize,
    /// Horizons to generate; `0` is the observation boundary.
    pub horizons: Vec<u32>,
    pub max_persons: usize,
    pub max_objects: usize,
    pub max_verbs_per_object: usize,
    pub n_verbs: usize,
    pub n_object_classes: usize,
    /// Probability that a ground truth gets a correct prediction.
    pub tp_rate: f64,
    /// Probability of each extra copy of a correct prediction.
    pub duplicate_rate: f64,
    /// Wrong-verb/wrong-box/wrong-category predictions per clip and horizon.
    pub max_false_positives: usize,
    /// Probability that a clip/horizon is masked.
    pub masked_rate: f64,
    /// Horizons masked in every clip.
    #[serde(default)]
    pub fully_masked: Vec<u32>,
    pub config: EvalConfig,
}

impl SynthEvalSpec {
    /// Spec family used by the fixtures: sizes and rates vary with the seed.
    pub fn variant(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed ^ 0x5eed_e7a1);
        let horizons = vec![0, 1, 3, 5, 7];
        let fully_masked = if seed % 5 == 4 { vec![7] } else { Vec::new() };
        Self {
            seed,
            n_clips: 1 + rng.below(6),
            horizons,
            max_persons: 1 + rng.below(4),
            max_objects: 1 + rng.below(3),
            max_verbs_per_object: 1 + rng.below(3),
            n_verbs: 3 + rng.below(5),
            n_object_classes: 2 + rng.below(4),
            tp_rate: rng.uniform_range(0.2, 1.0),
            duplicate_rate: rng.uniform_range(0.0, 0.4),
            max_false_positives: rng.below(6),
            masked_rate: rng.uniform_range(0.0, 0.3),
            fully_masked,
            config: EvalConfig {
                ks: vec![1, 2, 5, 10, 20, 50],
                ..EvalConfig::default()
            },
        }
    }
}

/// A prediction together with the ground truth it was planted against:
/// `(record index, triplet index)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPrediction {
    pub prediction: Prediction,
    pub target: Option<(usize, usize)>,
    /// Index of the person (within the record) whose human box it uses.
    pub person: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedHorizon {
    pub horizon: u32,
    pub map_full: f64,
    pub map_rare: Option<f64>,
    pub map_nonrare: Option<f64>,
    pub recall: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub ground_truth: Vec<GtRecord>,
    pub predictions: Vec<Prediction>,
    pub frequencies: Vec<FrequencyEntry>,
    pub config: EvalConfig,
    pub expected: Vec<ExpectedHorizon>,
}

const CELL: f64 = 100.0;

/// (person, object column, object box, category, ground-truth verbs)
type PlantedObject = (usize, usize, [f64; 4], usize, BTreeSet<usize>);

fn cell_box(row: usize, col: usize, rng: &mut SeededRng) -> [f64; 4] {
    let (x, y) = (col as f64 * CELL, row as f64 * CELL);
    let inset = |rng: &mut SeededRng| (rng.uniform_range(5.0, 20.0) * 4.0).round() / 4.0;
    [x + inset(rng), y + inset(rng), x + CELL - inset(rng), y + CELL - inset(rng)]
}

/// Builds an evaluation case: ground truth laid out on a grid so that
/// distinct boxes never overlap, predictions planted as exact copies or
/// deliberate misses, and distinct scores from a seeded permutation.
pub fn gen_eval_case(spec: &SynthEvalSpec) -> Result<EvalCase> {
    if spec.n_verbs < 2 || spec.n_object_classes < 2 || spec.max_persons == 0 || spec.max_objects == 0 {
        return Err(Error::InvalidArgument("eval spec needs ≥2 verbs/classes and ≥1 person/object".into()));
    }
    let mut rng = SeededRng::new(spec.seed);
    let mut records = Vec::new();
    let mut planted: Vec<PlantedPrediction> = Vec::new();
    for c in 0..spec.n_clips {
        let clip_id = format!("clip{c:03}");
        for &h in &spec.horizons {
            let masked = spec.fully_masked.contains(&h) || rng.uniform() < spec.masked_rate;
            let rec_idx = records.len();
            let n_persons = rng.below(spec.max_persons + 1);
            let mut triplets = Vec::new();
            let mut person_boxes = Vec::new();
            let mut objects: Vec<PlantedObject> = Vec::new();
            for p in 0..n_persons {
                let hb = cell_box(p, 0, &mut rng);
                person_boxes.push(hb);
                for q in 0..1 + rng.below(spec.max_objects) {
                    let ob = cell_box(p, q + 1, &mut rng);
                    let cat = rng.below(spec.n_object_classes);
                    let mut verbs = BTreeSet::new();
                    for _ in 0..1 + rng.below(spec.max_verbs_per_object) {
                        verbs.insert(rng.below(spec.n_verbs));
                    }
                    for &v in &verbs {
                        triplets.push(GtTriplet {
                            person_id: Some(p as u64),
                            human_box: hb,
                            object_box: ob,
                            object_category: cat,
                            verb: v,
                        });
                    }
                    objects.push((p, q, ob, cat, verbs));
                }
            }
            let pred = |hb: [f64; 4], ob: [f64; 4], cat: usize, verb: usize| Prediction {
                clip_id: clip_id.clone(),
                horizon: h,
                human_box: hb,
                object_box: ob,
                object_category: cat,
                verb,
                score: 0.0,
            };
            for (ti, t) in triplets.iter().enumerate() {
                let person = t.person_id.map(|p| p as usize);
                if rng.uniform() < spec.tp_rate {
                    let mut copies = 1;
                    while rng.uniform() < spec.duplicate_rate && copies < 4 {
                        copies += 1;
                    }
                    for _ in 0..copies {
                        planted.push(PlantedPrediction {
                            prediction: pred(t.human_box, t.object_box, t.object_category, t.verb),
                            target: Some((rec_idx, ti)),
                            person,
                        });
                    }
                }
            }
            if n_persons > 0 {
                for _ in 0..rng.below(spec.max_false_positives + 1) {
                    let (p, q, ob, cat, verbs) = objects[rng.below(objects.len())].clone();
                    let hb = person_boxes[p];
                    let fp = match rng.below(3) {
                        0 if verbs.len() < spec.n_verbs => {
                            let free: Vec<usize> = (0..spec.n_verbs).filter(|v| !verbs.contains(v)).collect();
                            pred(hb, ob, cat, free[rng.below(free.len())])
                        }
                        1 => pred(hb, ob, (cat + 1 + rng.below(spec.n_object_classes - 1)) % spec.n_object_classes, *verbs.iter().next().unwrap_or(&0)),
                        _ => {
                            let empty = cell_box(p, spec.max_objects + 1 + q, &mut rng);
                            pred(hb, empty, cat, rng.below(spec.n_verbs))
                        }
                    };
                    planted.push(PlantedPrediction {
                        prediction: fp,
                        target: None,
                        person: Some(p),
                    });
                }
            }
            records.push(GtRecord {
                clip_id: clip_id.clone(),
                horizon: h,
                masked,
                triplets: if masked { Vec::new() } else { triplets },
            });
        }
    }

    let mut order: Vec<usize> = (0..planted.len()).collect();
    rng.shuffle(&mut order);
    let n = planted.len() as f64;
    for (rank, &i) in order.iter().enumerate() {
        planted[i].prediction.score = (rank + 1) as f64 / (n + 1.0);
    }
    rng.shuffle(&mut planted);

    let mut cats: BTreeSet<(usize, usize)> = BTreeSet::new();
    for r in &records {
        cats.extend(r.triplets.iter().map(|t| (t.verb, t.object_category)));
    }
    // about one category in ten is left out of the table
    let mut frequencies = Vec::new();
    for (verb, object_category) in cats {
        if rng.uniform() < 0.9 {
            frequencies.push(FrequencyEntry {
                verb,
                object_category,
                count: rng.below(60) as u64,
            });
        }
    }

    let expected = oracle_metrics(&records, &planted, &frequencies, &spec.config);
    Ok(EvalCase {
        ground_truth: records,
        predictions: planted.into_iter().map(|p| p.prediction).collect(),
        frequencies,
        config: spec.config.clone(),
        expected,
    })
}

/// Mean over recall levels `j / n_gt` of the best precision reached at or
/// beyond that level.
fn oracle_ap(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut best_at = vec![0.0f64; n_gt + 1];
    let mut tp = 0;
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        let precision = tp as f64 / (i + 1) as f64;
        for slot in best_at.iter_mut().take(tp + 1).skip(1) {
            *slot = slot.max(precision);
        }
    }
    best_at[1..].iter().sum::<f64>() / n_gt as f64
}

/// Expected metrics from planted identities: a prediction is a hit iff its
/// planted target has not been claimed by a higher-scored prediction.
pub fn oracle_metrics(
    records: &[GtRecord],
    planted: &[PlantedPrediction],
    frequencies: &[FrequencyEntry],
    config: &EvalConfig,
) -> Vec<ExpectedHorizon> {
    let freq: BTreeMap<(usize, usize), u64> = frequencies
        .iter()
        .map(|f| ((f.verb, f.object_category), f.count))
        .collect();
    let masked: BTreeSet<(&str, u32)> = records
        .iter()
        .filter(|r| r.masked)
        .map(|r| (r.clip_id.as_str(), r.horizon))
        .collect();
    let horizons: BTreeSet<u32> = records
        .iter()
        .map(|r| r.horizon)
        .chain(planted.iter().map(|p| p.prediction.horizon))
        .collect();

    let mut out = Vec::new();
    for h in horizons {
        let live: Vec<&PlantedPrediction> = planted
            .iter()
            .filter(|p| p.prediction.horizon == h && !masked.contains(&(p.prediction.clip_id.as_str(), h)))
            .collect();

        let mut n_gt: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for r in records.iter().filter(|r| r.horizon == h && !r.masked) {
            for t in &r.triplets {
                *n_gt.entry((t.verb, t.object_category)).or_default() += 1;
            }
        }
        let mut aps_all = Vec::new();
        let mut aps_rare = Vec::new();
        let mut aps_non = Vec::new();
        for (&cat, &n) in &n_gt {
            let mut ranked: Vec<&&PlantedPrediction> = live
                .iter()
                .filter(|p| (p.prediction.verb, p.prediction.object_category) == cat)
                .collect();
            ranked.sort_by(|a, b| b.prediction.score.total_cmp(&a.prediction.score));
            let mut claimed = BTreeSet::new();
            let flags: Vec<bool> = ranked.iter().map(|p| p.target.is_some_and(|t| claimed.insert(t))).collect();
            let ap = oracle_ap(&flags, n);
            aps_all.push(ap);
            if freq.get(&cat).is_none_or(|&c| c < config.rare_threshold) {
                aps_rare.push(ap);
            } else {
                aps_non.push(ap);
            }
        }

        let mut per_person: Vec<Vec<f64>> = Vec::new();
        for (ri, r) in records.iter().enumerate().filter(|(_, r)| r.horizon == h && !r.masked) {
            let persons: BTreeSet<u64> = r.triplets.iter().filter_map(|t| t.person_id).collect();
            for p in persons {
                let gt_count = r.triplets.iter().filter(|t| t.person_id == Some(p)).count();
                let mut mine: Vec<&&PlantedPrediction> = live
                    .iter()
                    .filter(|x| x.prediction.clip_id == r.clip_id && x.person == Some(p as usize))
                    .collect();
                mine.sort_by(|a, b| b.prediction.score.total_cmp(&a.prediction.score));
                per_person.push(
                    config
                        .ks
                        .iter()
                        .map(|&k| {
                            let hits: BTreeSet<(usize, usize)> = mine
                                .iter()
                                .take(k)
                                .filter_map(|x| x.target)
                                .filter(|t| t.0 == ri)
                                .collect();
                            hits.len() as f64 / gt_count as f64
                        })
                        .collect(),
                );
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let recall = config
            .ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let vals: Vec<f64> = per_person.iter().map(|r| r[i]).collect();
                (k, mean(&vals).unwrap_or(0.0))
            })
            .collect();
        out.push(ExpectedHorizon {
            horizon: h,
            map_full: mean(&aps_all).unwrap_or(0.0),
            map_rare: mean(&aps_rare),
            map_nonrare: mean(&aps_non),
            recall,
        });
    }
    out
}
