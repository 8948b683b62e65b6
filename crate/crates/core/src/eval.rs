//! Triplet mAP with Full/Rare/Non-rare splits and person-wise Recall@k.
//!
//! Both metrics are computed per horizon (`0` is the observation boundary).
//! Ground-truth records for masked clip/horizon combinations are skipped
//! together with any predictions made for them.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::iou_corners;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub clip_id: String,
    pub horizon: u32,
    pub human_box: [f64; 4],
    pub object_box: [f64; 4],
    pub object_category: usize,
    pub verb: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTriplet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_id: Option<u64>,
    pub human_box: [f64; 4],
    pub object_box: [f64; 4],
    pub object_category: usize,
    pub verb: usize,
}

/// Ground truth of one clip at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub clip_id: String,
    pub horizon: u32,
    #[serde(default)]
    pub masked: bool,
    #[serde(default)]
    pub triplets: Vec<GtTriplet>,
}

fn valid_box(b: &[f64; 4]) -> bool {
    b.iter().all(|v| v.is_finite()) && b[0] <= b[2] && b[1] <= b[3]
}

pub fn validate_predictions(preds: &[Prediction]) -> Result<()> {
    for (i, p) in preds.iter().enumerate() {
        if !p.score.is_finite() {
            return Err(Error::InvalidArgument(format!("prediction {i}: non-finite score")));
        }
        if !valid_box(&p.human_box) || !valid_box(&p.object_box) {
            return Err(Error::InvalidArgument(format!("prediction {i}: invalid box")));
        }
    }
    Ok(())
}

pub fn validate_ground_truth(gts: &[GtRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for g in gts {
        if !seen.insert((g.clip_id.as_str(), g.horizon)) {
            return Err(Error::InvalidArgument(format!(
                "duplicate ground truth for clip {} horizon {}",
                g.clip_id, g.horizon
            )));
        }
        if g.triplets.iter().any(|t| !valid_box(&t.human_box) || !valid_box(&t.object_box)) {
            return Err(Error::InvalidArgument(format!("clip {}: invalid ground-truth box", g.clip_id)));
        }
    }
    Ok(())
}

/// `(verb, object category)`.
pub type Category = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Area under the interpolated precision envelope at every recall step.
    #[default]
    AllPoint,
    /// Mean interpolated precision at recall 0, 0.1, …, 1.
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub rare_threshold: u64,
    pub ap_mode: ApMode,
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            rare_threshold: 25,
            ap_mode: ApMode::AllPoint,
            ks: vec![10, 20, 50],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyEntry {
    pub verb: usize,
    pub object_category: usize,
    pub count: u64,
}

/// Training-set instance counts per triplet category.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequencyTable {
    pub counts: BTreeMap<Category, u64>,
}

impl FrequencyTable {
    pub fn from_entries(entries: &[FrequencyEntry]) -> Self {
        Self {
            counts: entries.iter().map(|e| ((e.verb, e.object_category), e.count)).collect(),
        }
    }

    pub fn entries(&self) -> Vec<FrequencyEntry> {
        self.counts
            .iter()
            .map(|(&(verb, object_category), &count)| FrequencyEntry {
                verb,
                object_category,
                count,
            })
            .collect()
    }
}

fn boxes_match(p: &Prediction, g: &GtTriplet, thr: f64) -> bool {
    p.verb == g.verb
        && p.object_category == g.object_category
        && iou_corners(&p.human_box, &g.human_box) > thr
        && iou_corners(&p.object_box, &g.object_box) > thr
}

/// Greedy matching in the given (score-descending) order: each prediction
/// takes the unconsumed ground truth it overlaps best, if any qualifies.
pub fn match_triplets(preds: &[&Prediction], gts: &[&GtTriplet], iou_threshold: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    preds.iter().map(|p| consume_best(p, gts, &mut used, iou_threshold)).collect()
}

/// Marks the best qualifying unconsumed ground truth as used; ties keep the
/// lowest index.
fn consume_best(p: &Prediction, gts: &[&GtTriplet], used: &mut [bool], thr: f64) -> bool {
    let mut best: Option<(usize, f64)> = None;
    for (j, g) in gts.iter().enumerate() {
        if used[j] || !boxes_match(p, g, thr) {
            continue;
        }
        let q = iou_corners(&p.human_box, &g.human_box).min(iou_corners(&p.object_box, &g.object_box));
        if best.is_none_or(|(_, b)| q > b) {
            best = Some((j, q));
        }
    }
    best.map(|(j, _)| used[j] = true).is_some()
}

/// Average precision of a ranked TP/FP list against `n_gt` ground truths.
pub fn average_precision(flags: &[bool], n_gt: usize, mode: ApMode) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    match mode {
        ApMode::AllPoint => {
            let mut mrec = vec![0.0];
            mrec.extend_from_slice(&recall);
            mrec.push(1.0);
            let mut mpre = vec![0.0];
            mpre.extend_from_slice(&precision);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len())
                .filter(|&i| mrec[i] != mrec[i - 1])
                .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
                .sum()
        }
        ApMode::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let r = k as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(&rc, _)| rc >= r)
                        .map(|(_, &p)| p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub verb: usize,
    pub object_category: usize,
    pub ap: f64,
    pub n_gt: usize,
    pub rare: bool,
    /// Set when the category had no frequency entry and was treated as rare.
    pub missing_frequency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: u32,
    pub map_full: f64,
    /// `None` when no rare category has ground truth.
    pub map_rare: Option<f64>,
    pub map_nonrare: Option<f64>,
    /// Recall@k keyed by k.
    pub recall: BTreeMap<usize, f64>,
    pub persons: usize,
    pub masked_clips: usize,
    pub categories: Vec<CategoryAp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizons: Vec<HorizonMetrics>,
}

impl MetricReport {
    pub fn horizon(&self, h: u32) -> Option<&HorizonMetrics> {
        self.horizons.iter().find(|m| m.horizon == h)
    }

    /// Fixed-width table, one row per horizon.
    pub fn table(&self, ks: &[usize]) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| format!("{:>9}", "-"), |x| format!("{:>9.4}", x));
        let mut s = format!("{:>3} {:>9} {:>9} {:>9}", "h", "full", "rare", "nonrare");
        for k in ks {
            s.push_str(&format!(" {:>9}", format!("R@{k}")));
        }
        s.push('\n');
        for m in &self.horizons {
            s.push_str(&format!(
                "{:>3} {} {} {}",
                m.horizon,
                fmt(Some(m.map_full)),
                fmt(m.map_rare),
                fmt(m.map_nonrare)
            ));
            for k in ks {
                s.push_str(&format!(" {}", fmt(m.recall.get(k).copied())));
            }
            s.push('\n');
        }
        s
    }
}

/// Ground truth and predictions of one horizon, masked entries removed.
struct HorizonView<'a> {
    gts: Vec<&'a GtRecord>,
    preds: Vec<&'a Prediction>,
    masked: usize,
}

fn horizon_views<'a>(preds: &'a [Prediction], gts: &'a [GtRecord]) -> BTreeMap<u32, HorizonView<'a>> {
    let masked: BTreeSet<(&str, u32)> = gts
        .iter()
        .filter(|g| g.masked)
        .map(|g| (g.clip_id.as_str(), g.horizon))
        .collect();
    let mut views: BTreeMap<u32, HorizonView<'a>> = BTreeMap::new();
    let blank = || HorizonView {
        gts: Vec::new(),
        preds: Vec::new(),
        masked: 0,
    };
    for g in gts {
        let v = views.entry(g.horizon).or_insert_with(blank);
        if g.masked {
            v.masked += 1;
        } else {
            v.gts.push(g);
        }
    }
    for p in preds {
        if !masked.contains(&(p.clip_id.as_str(), p.horizon)) {
            views.entry(p.horizon).or_insert_with(blank).preds.push(p);
        }
    }
    views
}

/// Stable descending sort by score.
fn by_score(mut v: Vec<&Prediction>) -> Vec<&Prediction> {
    v.sort_by(|a, b| b.score.total_cmp(&a.score));
    v
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn category_aps(view: &HorizonView<'_>, config: &EvalConfig, freq: &FrequencyTable) -> Vec<CategoryAp> {
    let mut gt_by_cat: BTreeMap<Category, BTreeMap<&str, Vec<&GtTriplet>>> = BTreeMap::new();
    for rec in &view.gts {
        for t in &rec.triplets {
            gt_by_cat
                .entry((t.verb, t.object_category))
                .or_default()
                .entry(rec.clip_id.as_str())
                .or_default()
                .push(t);
        }
    }
    let mut pred_by_cat: BTreeMap<Category, Vec<&Prediction>> = BTreeMap::new();
    for &p in &view.preds {
        pred_by_cat.entry((p.verb, p.object_category)).or_default().push(p);
    }
    let cats: Vec<(&Category, &BTreeMap<&str, Vec<&GtTriplet>>)> = gt_by_cat.iter().collect();
    cats.par_iter()
        .map(|&(&cat, per_clip)| {
            let n_gt = per_clip.values().map(Vec::len).sum();
            let ranked = by_score(pred_by_cat.get(&cat).cloned().unwrap_or_default());
            let mut used: BTreeMap<&str, Vec<bool>> =
                per_clip.iter().map(|(&c, v)| (c, vec![false; v.len()])).collect();
            let flags: Vec<bool> = ranked
                .iter()
                .map(|p| {
                    match (per_clip.get(p.clip_id.as_str()), used.get_mut(p.clip_id.as_str())) {
                        (Some(gts), Some(u)) => consume_best(p, gts, u, config.iou_threshold),
                        _ => false,
                    }
                })
                .collect();
            let count = freq.counts.get(&cat);
            CategoryAp {
                verb: cat.0,
                object_category: cat.1,
                ap: average_precision(&flags, n_gt, config.ap_mode),
                n_gt,
                rare: count.is_none_or(|&c| c < config.rare_threshold),
                missing_frequency: count.is_none(),
            }
        })
        .collect()
}

/// Persons of one clip: grouped by `person_id`, or by identical human box
/// when ids are absent.
fn persons_of(rec: &GtRecord) -> Vec<([f64; 4], Vec<&GtTriplet>)> {
    let mut out: Vec<(Option<u64>, [f64; 4], Vec<&GtTriplet>)> = Vec::new();
    for t in &rec.triplets {
        let slot = out.iter_mut().find(|(id, b, _)| match (id, t.person_id) {
            (Some(a), Some(b)) => *a == b,
            (None, None) => *b == t.human_box,
            _ => false,
        });
        match slot {
            Some(s) => s.2.push(t),
            None => out.push((t.person_id, t.human_box, vec![t])),
        }
    }
    out.into_iter().map(|(_, b, v)| (b, v)).collect()
}

fn recall_for_horizon(view: &HorizonView<'_>, config: &EvalConfig) -> (BTreeMap<usize, f64>, usize) {
    let mut preds_by_clip: BTreeMap<&str, Vec<&Prediction>> = BTreeMap::new();
    for &p in &view.preds {
        preds_by_clip.entry(p.clip_id.as_str()).or_default().push(p);
    }
    let per_clip: Vec<Vec<Vec<f64>>> = view
        .gts
        .par_iter()
        .map(|rec| {
            let persons = persons_of(rec);
            let mut assigned: Vec<Vec<&Prediction>> = vec![Vec::new(); persons.len()];
            for &p in preds_by_clip.get(rec.clip_id.as_str()).map_or(&[][..], Vec::as_slice) {
                let mut best: Option<(usize, f64)> = None;
                for (i, (b, _)) in persons.iter().enumerate() {
                    let v = iou_corners(&p.human_box, b);
                    if v > config.iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((i, v));
                    }
                }
                if let Some((i, _)) = best {
                    assigned[i].push(p);
                }
            }
            persons
                .iter()
                .zip(assigned)
                .map(|((_, gts), preds)| {
                    let ranked = by_score(preds);
                    config
                        .ks
                        .iter()
                        .map(|&k| {
                            let top = &ranked[..k.min(ranked.len())];
                            let tp = match_triplets(top, gts, config.iou_threshold).iter().filter(|&&f| f).count();
                            tp as f64 / gts.len() as f64
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let persons: Vec<&Vec<f64>> = per_clip.iter().flatten().collect();
    let recall = config
        .ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let vals: Vec<f64> = persons.iter().map(|r| r[ki]).collect();
            (k, mean(&vals).unwrap_or(0.0))
        })
        .collect();
    (recall, persons.len())
}

fn check_config(config: &EvalConfig) -> Result<()> {
    if config.ks.is_empty() || config.ks.contains(&0) {
        return Err(Error::InvalidArgument(format!("ks must be positive, got {:?}", config.ks)));
    }
    Ok(())
}

/// Full evaluation: per-horizon mAP splits, per-category AP and Recall@k.
pub fn evaluate(
    preds: &[Prediction],
    gts: &[GtRecord],
    config: &EvalConfig,
    freq: &FrequencyTable,
) -> Result<MetricReport> {
    check_config(config)?;
    validate_predictions(preds)?;
    validate_ground_truth(gts)?;
    let horizons = horizon_views(preds, gts)
        .into_iter()
        .map(|(horizon, view)| {
            let categories = category_aps(&view, config, freq);
            let aps = |f: &dyn Fn(&CategoryAp) -> bool| {
                mean(&categories.iter().filter(|c| f(c)).map(|c| c.ap).collect::<Vec<_>>())
            };
            let (recall, persons) = recall_for_horizon(&view, config);
            HorizonMetrics {
                horizon,
                map_full: aps(&|_| true).unwrap_or(0.0),
                map_rare: aps(&|c| c.rare),
                map_nonrare: aps(&|c| !c.rare),
                recall,
                persons,
                masked_clips: view.masked,
                categories,
            }
        })
        .collect();
    Ok(MetricReport { horizons })
}

/// mAP part of [`evaluate`] only.
pub fn map_report(
    preds: &[Prediction],
    gts: &[GtRecord],
    config: &EvalConfig,
    freq: &FrequencyTable,
) -> Result<MetricReport> {
    let mut r = evaluate(preds, gts, config, freq)?;
    for h in &mut r.horizons {
        h.recall.clear();
        h.persons = 0;
    }
    Ok(r)
}

/// Recall@k part of [`evaluate`] only.
pub fn recall_at_k(preds: &[Prediction], gts: &[GtRecord], config: &EvalConfig) -> Result<BTreeMap<u32, BTreeMap<usize, f64>>> {
    check_config(config)?;
    validate_predictions(preds)?;
    validate_ground_truth(gts)?;
    Ok(horizon_views(preds, gts)
        .into_iter()
        .map(|(h, view)| (h, recall_for_horizon(&view, config).0))
        .collect())
}
