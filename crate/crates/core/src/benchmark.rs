//! Benchmark construction from sparse keyframe annotation streams.
//!
//! Pipeline per video: [`merge_supplementary`] fills short unlabeled gaps with
//! instance-only keyframes, [`continuity_correct`] splits the stream at long
//! inactive spans, [`build_clips`] slides the observation window and resolves
//! horizon targets, and [`align_future_pairs`] links each boundary pair to its
//! future instances. [`build_benchmark`] runs the whole pipeline over many
//! videos in parallel and merges results in `video_id` order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{GtRecord, GtTriplet};
use crate::matching::iou_corners;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Absent on supplementary frames that were not linked to a track.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    pub category: usize,
    /// Pixel corners `[x1, y1, x2, y2]`.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoiLabel {
    pub subj_track: u64,
    pub obj_track: u64,
    pub verbs: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t_sec: f64,
    pub frame_idx: u64,
    pub image_w: u32,
    pub image_h: u32,
    #[serde(default)]
    pub instances: Vec<Instance>,
    #[serde(default)]
    pub hois: Vec<HoiLabel>,
}

impl Keyframe {
    /// A keyframe carries HOI supervision iff some pair has an active verb.
    pub fn is_interactive(&self) -> bool {
        self.hois.iter().any(|h| !h.verbs.is_empty())
    }

    pub fn instance_by_track(&self, track: u64) -> Option<(usize, &Instance)> {
        self.instances
            .iter()
            .enumerate()
            .find(|(_, i)| i.track_id == Some(track))
    }

    fn validate(&self, video: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Annotation(format!("{video} frame {}: {msg}", self.frame_idx)));
        if !self.t_sec.is_finite() {
            return bad("non-finite timestamp".into());
        }
        let (w, h) = (self.image_w as f64, self.image_h as f64);
        let mut tracks = BTreeSet::new();
        for inst in &self.instances {
            let [x1, y1, x2, y2] = inst.bbox;
            let inside = inst.bbox.iter().all(|v| v.is_finite())
                && 0.0 <= x1
                && x1 <= x2
                && x2 <= w
                && 0.0 <= y1
                && y1 <= y2
                && y2 <= h;
            if !inside {
                return bad(format!("box {:?} outside {}x{}", inst.bbox, self.image_w, self.image_h));
            }
            if let Some(t) = inst.track_id {
                if !tracks.insert(t) {
                    return bad(format!("duplicate track id {t}"));
                }
            }
        }
        for hoi in &self.hois {
            if !tracks.contains(&hoi.subj_track) || !tracks.contains(&hoi.obj_track) {
                return bad(format!(
                    "hoi ({}, {}) references a missing track",
                    hoi.subj_track, hoi.obj_track
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStream {
    pub video_id: String,
    pub nominal_step_sec: f64,
    #[serde(default = "default_split")]
    pub split: String,
    pub keyframes: Vec<Keyframe>,
}

fn default_split() -> String {
    "train".to_string()
}

impl AnnotationStream {
    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_step_sec > 0.0 && self.nominal_step_sec.is_finite()) {
            return Err(Error::Annotation(format!(
                "{}: nominal step must be positive",
                self.video_id
            )));
        }
        for kf in &self.keyframes {
            kf.validate(&self.video_id)?;
        }
        for pair in self.keyframes.windows(2) {
            if pair[1].t_sec <= pair[0].t_sec {
                return Err(Error::Annotation(format!(
                    "{}: timestamps not strictly increasing at frame {}",
                    self.video_id, pair[1].frame_idx
                )));
            }
        }
        Ok(())
    }
}

/// Instance-only keyframes to be merged into one video's stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplementSet {
    pub video_id: String,
    pub keyframes: Vec<Keyframe>,
}

/// How horizon offsets map to future keyframes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    /// `h` is `h · nominal_step` seconds past the boundary.
    #[default]
    Vidhoi,
    /// `h` is `h` keyframes past the boundary.
    Ag,
}

impl std::str::FromStr for StreamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vidhoi" => Ok(Self::Vidhoi),
            "ag" => Ok(Self::Ag),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?} (vidhoi|ag)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GapReport {
    pub n_step: usize,
    /// Spacing in seconds of each discontinuity.
    pub l_steps: Vec<f64>,
}

/// Reports every keyframe spacing above `nominal_step · (1 + tolerance)`.
pub fn detect_gaps(stream: &AnnotationStream, tolerance: f64) -> GapReport {
    let limit = stream.nominal_step_sec * (1.0 + tolerance);
    let l_steps: Vec<f64> = stream
        .keyframes
        .windows(2)
        .map(|p| p[1].t_sec - p[0].t_sec)
        .filter(|&d| d > limit)
        .collect();
    GapReport {
        n_step: l_steps.len(),
        l_steps,
    }
}

fn same_time(a: f64, b: f64, step: f64) -> bool {
    (a - b).abs() <= 1e-9 * step.max(1.0)
}

/// Inserts instance-only keyframes. The original keyframe wins on a timestamp
/// collision.
pub fn merge_supplementary(stream: &AnnotationStream, supplements: &[Keyframe]) -> Result<AnnotationStream> {
    let (first, last) = match (stream.keyframes.first(), stream.keyframes.last()) {
        (Some(f), Some(l)) => (f.t_sec, l.t_sec),
        _ if supplements.is_empty() => return Ok(stream.clone()),
        _ => {
            return Err(Error::Annotation(format!(
                "{}: supplements for an empty stream",
                stream.video_id
            )))
        }
    };
    let step = stream.nominal_step_sec;
    for s in supplements {
        if !s.hois.is_empty() {
            return Err(Error::Annotation(format!(
                "{}: supplementary frame {} carries HOI labels",
                stream.video_id, s.frame_idx
            )));
        }
        if s.t_sec < first || s.t_sec > last {
            return Err(Error::Annotation(format!(
                "{}: supplementary frame at {}s outside [{first}, {last}]",
                stream.video_id, s.t_sec
            )));
        }
        s.validate(&stream.video_id)?;
    }
    let mut sorted: Vec<&Keyframe> = supplements.iter().collect();
    sorted.sort_by(|a, b| a.t_sec.total_cmp(&b.t_sec));

    let mut out = Vec::with_capacity(stream.keyframes.len() + supplements.len());
    let mut it = sorted.into_iter().peekable();
    for kf in &stream.keyframes {
        while let Some(s) = it.next_if(|s| s.t_sec < kf.t_sec && !same_time(s.t_sec, kf.t_sec, step)) {
            if out.last().is_none_or(|p: &Keyframe| !same_time(p.t_sec, s.t_sec, step)) {
                out.push(s.clone());
            }
        }
        while it.next_if(|s| same_time(s.t_sec, kf.t_sec, step)).is_some() {}
        out.push(kf.clone());
    }
    let merged = AnnotationStream {
        keyframes: out,
        ..stream.clone()
    };
    merged.validate()?;
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionParams {
    pub window: usize,
    /// Inactive spans of at least this many nominal steps split the stream.
    pub long_gap_steps: f64,
    /// Relative timestamp jitter absorbed when measuring spacings.
    pub tolerance: f64,
}

impl CorrectionParams {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            long_gap_steps: window as f64,
            tolerance: 0.1,
        }
    }
}

impl Default for CorrectionParams {
    fn default() -> Self {
        Self::new(6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortGap {
    pub after_frame_idx: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub video_id: String,
    pub split: String,
    pub segment_index: usize,
    pub nominal_step_sec: f64,
    /// Inclusive keyframe index range in the corrected input stream.
    pub origin: [usize; 2],
    pub keyframes: Vec<Keyframe>,
    /// Unfilled spacings that were kept inside the segment.
    pub short_gaps: Vec<ShortGap>,
}

/// Splits a stream at inactive spans of at least `long_gap_steps` steps and
/// drops the frames inside them.
///
/// The inactive span between two consecutive interactive keyframes is their
/// time difference. Idle runs at either end of the stream are measured as if
/// an interactive keyframe sat one step beyond them. Shorter spans are kept
/// whole; any remaining spacing above the jitter tolerance is flagged.
pub fn continuity_correct(stream: &AnnotationStream, params: &CorrectionParams) -> Result<Vec<Segment>> {
    if params.window < 2 {
        return Err(Error::InvalidArgument(format!("window must be >= 2, got {}", params.window)));
    }
    stream.validate()?;
    let step = stream.nominal_step_sec;
    let kfs = &stream.keyframes;
    let interactive: Vec<usize> = (0..kfs.len()).filter(|&i| kfs[i].is_interactive()).collect();
    let is_long = |span: f64| (span / step).round() >= params.long_gap_steps;

    let (Some(&first_act), Some(&last_act)) = (interactive.first(), interactive.last()) else {
        return Ok(Vec::new());
    };
    let start = if is_long(kfs[first_act].t_sec - kfs[0].t_sec + step) { first_act } else { 0 };
    let end = if is_long(kfs[kfs.len() - 1].t_sec - kfs[last_act].t_sec + step) {
        last_act
    } else {
        kfs.len() - 1
    };

    let mut ranges = Vec::new();
    let mut seg_start = start;
    for pair in interactive.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if is_long(kfs[b].t_sec - kfs[a].t_sec) {
            ranges.push([seg_start, a]);
            seg_start = b;
        }
    }
    ranges.push([seg_start, end]);

    let jitter = step * (1.0 + params.tolerance);
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(segment_index, [a, b])| {
            let keyframes = kfs[a..=b].to_vec();
            let short_gaps = keyframes
                .windows(2)
                .filter(|p| p[1].t_sec - p[0].t_sec > jitter)
                .map(|p| ShortGap {
                    after_frame_idx: p[0].frame_idx,
                    seconds: p[1].t_sec - p[0].t_sec,
                })
                .collect();
            Segment {
                video_id: stream.video_id.clone(),
                split: stream.split.clone(),
                segment_index,
                nominal_step_sec: step,
                origin: [a, b],
                keyframes,
                short_gaps,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignStatus {
    Aligned,
    /// The future frame exists but the pair was not found; supervised with
    /// an all-zero verb target.
    Unaligned,
    Masked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuturePair {
    pub horizon: u32,
    pub status: AlignStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_instance: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_instance: Option<usize>,
    pub verbs: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAlignment {
    pub subj_track: u64,
    pub obj_track: u64,
    pub subject_box: [f64; 4],
    pub object_box: [f64; 4],
    pub object_category: usize,
    pub verbs: BTreeSet<usize>,
    pub future: Vec<FuturePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonTarget {
    pub horizon: u32,
    pub valid: bool,
    /// Position of the target keyframe in the segment; absent when masked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_position: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_frame_idx: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub video_id: String,
    pub split: String,
    pub segment_index: usize,
    /// Positions of the observed keyframes in the segment.
    pub observed_positions: Vec<usize>,
    pub observed_frame_idx: Vec<u64>,
    pub detection_frame_idx: u64,
    pub horizons: Vec<HorizonTarget>,
    #[serde(default)]
    pub pairs: Vec<PairAlignment>,
}

impl ClipManifest {
    pub fn detection_position(&self) -> usize {
        *self.observed_positions.last().expect("clip has observed frames")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipParams {
    pub window: usize,
    pub horizons: Vec<u32>,
    pub mode: StreamMode,
    /// Allowed timestamp mismatch of a future target, in nominal steps.
    pub tolerance: f64,
}

impl Default for ClipParams {
    fn default() -> Self {
        Self {
            window: 6,
            horizons: vec![1, 3, 5, 7],
            mode: StreamMode::Vidhoi,
            tolerance: 0.1,
        }
    }
}

/// Validates a horizon list: non-empty, positive, strictly increasing.
pub fn check_horizons(horizons: &[u32]) -> Result<()> {
    if horizons.is_empty() || horizons[0] == 0 || horizons.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument(format!(
            "horizons must be strictly increasing positive integers, got {horizons:?}"
        )));
    }
    Ok(())
}

fn find_target(segment: &Segment, det: usize, h: u32, params: &ClipParams) -> Option<usize> {
    let kfs = &segment.keyframes;
    match params.mode {
        StreamMode::Ag => {
            let p = det + h as usize;
            (p < kfs.len()).then_some(p)
        }
        StreamMode::Vidhoi => {
            let step = segment.nominal_step_sec;
            let target = kfs[det].t_sec + h as f64 * step;
            let tol = params.tolerance * step;
            kfs[det + 1..]
                .iter()
                .position(|k| (k.t_sec - target).abs() <= tol)
                .map(|p| p + det + 1)
        }
    }
}

/// Emits one clip per window whose last keyframe is interactive, resolving
/// horizon targets (masked when absent). Pair tables are left empty; see
/// [`align_future_pairs`].
pub fn build_clips(segment: &Segment, params: &ClipParams) -> Result<Vec<ClipManifest>> {
    check_horizons(&params.horizons)?;
    if params.window < 2 {
        return Err(Error::InvalidArgument(format!("window must be >= 2, got {}", params.window)));
    }
    let kfs = &segment.keyframes;
    if kfs.len() < params.window {
        return Ok(Vec::new());
    }
    let mut clips = Vec::new();
    for det in params.window - 1..kfs.len() {
        if !kfs[det].is_interactive() {
            continue;
        }
        let observed_positions: Vec<usize> = (det + 1 - params.window..=det).collect();
        let horizons = params
            .horizons
            .iter()
            .map(|&h| {
                let pos = find_target(segment, det, h, params);
                HorizonTarget {
                    horizon: h,
                    valid: pos.is_some(),
                    target_position: pos,
                    target_frame_idx: pos.map(|p| kfs[p].frame_idx),
                }
            })
            .collect();
        clips.push(ClipManifest {
            clip_id: format!("{}/{}/{:06}", segment.video_id, segment.segment_index, kfs[det].frame_idx),
            video_id: segment.video_id.clone(),
            split: segment.split.clone(),
            segment_index: segment.segment_index,
            observed_frame_idx: observed_positions.iter().map(|&p| kfs[p].frame_idx).collect(),
            observed_positions,
            detection_frame_idx: kfs[det].frame_idx,
            horizons,
            pairs: Vec::new(),
        });
    }
    Ok(clips)
}

/// Finds `inst` in `future`: by track id when it has one, otherwise by the
/// highest IoU above the threshold among same-category untracked instances.
fn locate(inst: &Instance, future: &Keyframe, iou_threshold: f64) -> Option<usize> {
    if let Some(t) = inst.track_id {
        if let Some((i, _)) = future.instance_by_track(t) {
            return Some(i);
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in future.instances.iter().enumerate() {
        if cand.track_id.is_some() || cand.category != inst.category {
            continue;
        }
        let v = iou_corners(&inst.bbox, &cand.bbox);
        if v > iou_threshold && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0)
}

/// Fills the pair alignment table of a clip for every detection-frame HOI.
pub fn align_future_pairs(clip: &ClipManifest, segment: &Segment, iou_threshold: f64) -> Result<ClipManifest> {
    let det_pos = clip.detection_position();
    let det = segment
        .keyframes
        .get(det_pos)
        .ok_or_else(|| Error::InvalidArgument(format!("clip {} outside its segment", clip.clip_id)))?;
    let mut pairs = Vec::with_capacity(det.hois.len());
    for hoi in &det.hois {
        let (_, subj) = det
            .instance_by_track(hoi.subj_track)
            .ok_or_else(|| Error::Annotation(format!("missing subject track {}", hoi.subj_track)))?;
        let (_, obj) = det
            .instance_by_track(hoi.obj_track)
            .ok_or_else(|| Error::Annotation(format!("missing object track {}", hoi.obj_track)))?;
        let future = clip
            .horizons
            .iter()
            .map(|ht| {
                let Some(pos) = ht.target_position else {
                    return FuturePair {
                        horizon: ht.horizon,
                        status: AlignStatus::Masked,
                        subject_instance: None,
                        object_instance: None,
                        verbs: BTreeSet::new(),
                    };
                };
                let fk = &segment.keyframes[pos];
                match (locate(subj, fk, iou_threshold), locate(obj, fk, iou_threshold)) {
                    (Some(si), Some(oi)) => {
                        let (st, ot) = (fk.instances[si].track_id, fk.instances[oi].track_id);
                        let verbs = fk
                            .hois
                            .iter()
                            .filter(|h| Some(h.subj_track) == st && Some(h.obj_track) == ot)
                            .flat_map(|h| h.verbs.iter().copied())
                            .collect();
                        FuturePair {
                            horizon: ht.horizon,
                            status: AlignStatus::Aligned,
                            subject_instance: Some(si),
                            object_instance: Some(oi),
                            verbs,
                        }
                    }
                    _ => FuturePair {
                        horizon: ht.horizon,
                        status: AlignStatus::Unaligned,
                        subject_instance: None,
                        object_instance: None,
                        verbs: BTreeSet::new(),
                    },
                }
            })
            .collect();
        pairs.push(PairAlignment {
            subj_track: hoi.subj_track,
            obj_track: hoi.obj_track,
            subject_box: subj.bbox,
            object_box: obj.bbox,
            object_category: obj.category,
            verbs: hoi.verbs.clone(),
            future,
        });
    }
    Ok(ClipManifest {
        pairs,
        ..clip.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonCount {
    pub horizon: u32,
    /// Pairs with a supervised (non-masked) target.
    pub valid: usize,
    /// Valid pairs whose future instances were found.
    pub aligned: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub clips: usize,
    pub pairs: usize,
    pub valid_pairs: Vec<HorizonCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BenchmarkStats {
    pub clips: usize,
    pub per_split: BTreeMap<String, SplitStats>,
    pub valid_pairs: Vec<HorizonCount>,
    pub supplementary_frames_added: usize,
}

fn count_horizons<'a>(horizons: &[u32], clips: impl Iterator<Item = &'a ClipManifest>) -> Vec<HorizonCount> {
    let mut counts: Vec<HorizonCount> = horizons
        .iter()
        .map(|&h| HorizonCount {
            horizon: h,
            valid: 0,
            aligned: 0,
        })
        .collect();
    for clip in clips {
        for pair in &clip.pairs {
            for f in &pair.future {
                if let Some(c) = counts.iter_mut().find(|c| c.horizon == f.horizon) {
                    c.valid += (f.status != AlignStatus::Masked) as usize;
                    c.aligned += (f.status == AlignStatus::Aligned) as usize;
                }
            }
        }
    }
    counts
}

pub fn benchmark_stats(clips: &[ClipManifest], horizons: &[u32], supplements_used: usize) -> BenchmarkStats {
    let mut per_split = BTreeMap::new();
    let splits: BTreeSet<&str> = clips.iter().map(|c| c.split.as_str()).collect();
    for split in splits {
        let members = || clips.iter().filter(move |c| c.split == split);
        per_split.insert(
            split.to_string(),
            SplitStats {
                clips: members().count(),
                pairs: members().map(|c| c.pairs.len()).sum(),
                valid_pairs: count_horizons(horizons, members()),
            },
        );
    }
    BenchmarkStats {
        clips: clips.len(),
        per_split,
        valid_pairs: count_horizons(horizons, clips.iter()),
        supplementary_frames_added: supplements_used,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    pub clip: ClipParams,
    pub correction: CorrectionParams,
    /// Relative jitter tolerance for gap detection.
    pub gap_tolerance: f64,
    pub iou_threshold: f64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            clip: ClipParams::default(),
            correction: CorrectionParams::default(),
            gap_tolerance: 0.1,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video_id: String,
    pub gaps: GapReport,
    pub supplementary_frames_added: usize,
    pub segments: Vec<Segment>,
    pub clips: Vec<ClipManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutput {
    pub videos: Vec<VideoResult>,
    pub stats: BenchmarkStats,
}

impl BenchmarkOutput {
    pub fn clips(&self) -> impl Iterator<Item = &ClipManifest> {
        self.videos.iter().flat_map(|v| v.clips.iter())
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.videos.iter().flat_map(|v| v.segments.iter())
    }
}

/// Runs merge → correct → build → align for one video.
pub fn process_video(stream: &AnnotationStream, supplements: &[Keyframe], params: &BuildParams) -> Result<VideoResult> {
    stream.validate()?;
    let gaps = detect_gaps(stream, params.gap_tolerance);
    let merged = merge_supplementary(stream, supplements)?;
    let added = merged.keyframes.len() - stream.keyframes.len();
    let segments = continuity_correct(&merged, &params.correction)?;
    let mut clips = Vec::new();
    for seg in &segments {
        for clip in build_clips(seg, &params.clip)? {
            clips.push(align_future_pairs(&clip, seg, params.iou_threshold)?);
        }
    }
    Ok(VideoResult {
        video_id: stream.video_id.clone(),
        gaps,
        supplementary_frames_added: added,
        segments,
        clips,
    })
}

/// Processes all videos in parallel; results are ordered by `video_id`.
pub fn build_benchmark(
    streams: &[AnnotationStream],
    supplements: &[SupplementSet],
    params: &BuildParams,
) -> Result<BenchmarkOutput> {
    let mut by_video: BTreeMap<&str, Vec<Keyframe>> = BTreeMap::new();
    for s in supplements {
        by_video.entry(&s.video_id).or_default().extend(s.keyframes.iter().cloned());
    }
    let mut seen = BTreeSet::new();
    for s in streams {
        if !seen.insert(s.video_id.as_str()) {
            return Err(Error::Annotation(format!("duplicate video id {}", s.video_id)));
        }
    }
    if let Some(orphan) = by_video.keys().find(|v| !seen.contains(*v)) {
        return Err(Error::Annotation(format!("supplements for unknown video {orphan}")));
    }
    let mut order: Vec<&AnnotationStream> = streams.iter().collect();
    order.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let videos = order
        .par_iter()
        .map(|s| {
            let sup = by_video.get(s.video_id.as_str()).map_or(&[][..], Vec::as_slice);
            process_video(s, sup, params)
        })
        .collect::<Result<Vec<_>>>()?;
    let clips: Vec<ClipManifest> = videos.iter().flat_map(|v| v.clips.iter().cloned()).collect();
    let added = videos.iter().map(|v| v.supplementary_frames_added).sum();
    let stats = benchmark_stats(&clips, &params.clip.horizons, added);
    Ok(BenchmarkOutput { videos, stats })
}

/// Evaluation ground truth for every clip: horizon 0 holds the boundary
/// triplets, each future horizon the future verbs of aligned pairs localized
/// at the boundary. Masked horizons produce masked records.
pub fn eval_ground_truth(clips: &[ClipManifest]) -> Vec<GtRecord> {
    let mut out = Vec::new();
    for clip in clips {
        let triplets = |verbs_of: &dyn Fn(&PairAlignment) -> Option<&BTreeSet<usize>>| -> Vec<GtTriplet> {
            clip.pairs
                .iter()
                .flat_map(|p| {
                    verbs_of(p).into_iter().flatten().map(move |&verb| GtTriplet {
                        person_id: Some(p.subj_track),
                        human_box: p.subject_box,
                        object_box: p.object_box,
                        object_category: p.object_category,
                        verb,
                    })
                })
                .collect()
        };
        out.push(GtRecord {
            clip_id: clip.clip_id.clone(),
            horizon: 0,
            masked: false,
            triplets: triplets(&|p| Some(&p.verbs)),
        });
        for (j, ht) in clip.horizons.iter().enumerate() {
            out.push(GtRecord {
                clip_id: clip.clip_id.clone(),
                horizon: ht.horizon,
                masked: !ht.valid,
                triplets: if ht.valid {
                    triplets(&|p| {
                        let f = &p.future[j];
                        (f.status == AlignStatus::Aligned).then_some(&f.verbs)
                    })
                } else {
                    Vec::new()
                },
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiaAnnotation {
    pub bbox: [f64; 4],
    pub category_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoiaInteraction {
    pub subject_id: usize,
    pub object_id: usize,
    pub category_id: usize,
}

/// One frame in HOI-A layout: HOI records index into `annotations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiaFrame {
    pub file_name: String,
    pub annotations: Vec<HoiaAnnotation>,
    pub hoi_annotation: Vec<HoiaInteraction>,
}

/// Per-frame temporal fields that HOI-A has no slot for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub file_name: String,
    pub video_id: String,
    pub frame_idx: u64,
    pub t_sec: f64,
    pub image_w: u32,
    pub image_h: u32,
    pub track_ids: Vec<Option<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportMetadata {
    pub frames: Vec<FrameMeta>,
    pub clips: Vec<ClipManifest>,
}

pub const HOIA_FILE: &str = "hoia.json";
pub const METADATA_FILE: &str = "metadata.json";

pub fn frame_file_name(video_id: &str, frame_idx: u64) -> String {
    format!("{video_id}/{frame_idx:06}.jpg")
}

/// Converts one keyframe into an HOI-A record and its metadata; each active
/// verb of a pair becomes one interaction record.
pub fn keyframe_to_hoia(video_id: &str, kf: &Keyframe) -> (HoiaFrame, FrameMeta) {
    let file_name = frame_file_name(video_id, kf.frame_idx);
    let annotations = kf
        .instances
        .iter()
        .map(|i| HoiaAnnotation {
            bbox: i.bbox,
            category_id: i.category,
        })
        .collect();
    let mut hoi_annotation = Vec::new();
    for hoi in &kf.hois {
        let s = kf.instance_by_track(hoi.subj_track).map(|x| x.0);
        let o = kf.instance_by_track(hoi.obj_track).map(|x| x.0);
        if let (Some(subject_id), Some(object_id)) = (s, o) {
            hoi_annotation.extend(hoi.verbs.iter().map(|&v| HoiaInteraction {
                subject_id,
                object_id,
                category_id: v,
            }));
        }
    }
    let meta = FrameMeta {
        file_name: file_name.clone(),
        video_id: video_id.to_string(),
        frame_idx: kf.frame_idx,
        t_sec: kf.t_sec,
        image_w: kf.image_w,
        image_h: kf.image_h,
        track_ids: kf.instances.iter().map(|i| i.track_id).collect(),
    };
    (
        HoiaFrame {
            file_name,
            annotations,
            hoi_annotation,
        },
        meta,
    )
}

/// Rebuilds a keyframe from its HOI-A record and metadata. HOIs whose
/// endpoints lack track ids cannot be represented and are rejected.
pub fn hoia_to_keyframe(frame: &HoiaFrame, meta: &FrameMeta) -> Result<Keyframe> {
    if frame.file_name != meta.file_name || frame.annotations.len() != meta.track_ids.len() {
        return Err(Error::Annotation(format!("metadata mismatch for {}", frame.file_name)));
    }
    let instances: Vec<Instance> = frame
        .annotations
        .iter()
        .zip(&meta.track_ids)
        .map(|(a, &track_id)| Instance {
            track_id,
            category: a.category_id,
            bbox: a.bbox,
        })
        .collect();
    let mut grouped: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    let mut order = Vec::new();
    for h in &frame.hoi_annotation {
        let key = (h.subject_id, h.object_id);
        if !grouped.contains_key(&key) {
            order.push(key);
        }
        grouped.entry(key).or_default().insert(h.category_id);
    }
    let mut hois = Vec::with_capacity(order.len());
    for key in order {
        let track = |i: usize| {
            instances.get(i).and_then(|x| x.track_id).ok_or_else(|| {
                Error::Annotation(format!("{}: interaction references untracked instance {i}", frame.file_name))
            })
        };
        hois.push(HoiLabel {
            subj_track: track(key.0)?,
            obj_track: track(key.1)?,
            verbs: grouped.remove(&key).unwrap_or_default(),
        });
    }
    Ok(Keyframe {
        t_sec: meta.t_sec,
        frame_idx: meta.frame_idx,
        image_w: meta.image_w,
        image_h: meta.image_h,
        instances,
        hois,
    })
}

/// Collects every keyframe referenced by a clip (observed frames and horizon
/// targets), deduplicated and ordered by video then frame index.
pub fn referenced_frames(clips: &[ClipManifest], segments: &[Segment]) -> Result<Vec<(String, Keyframe)>> {
    let seg_map: BTreeMap<(&str, usize), &Segment> = segments
        .iter()
        .map(|s| ((s.video_id.as_str(), s.segment_index), s))
        .collect();
    let mut frames: BTreeMap<(String, u64), Keyframe> = BTreeMap::new();
    for clip in clips {
        let seg = seg_map
            .get(&(clip.video_id.as_str(), clip.segment_index))
            .ok_or_else(|| Error::InvalidArgument(format!("no segment for clip {}", clip.clip_id)))?;
        let positions = clip
            .observed_positions
            .iter()
            .copied()
            .chain(clip.horizons.iter().filter_map(|h| h.target_position));
        for p in positions {
            let kf = seg
                .keyframes
                .get(p)
                .ok_or_else(|| Error::InvalidArgument(format!("clip {} position {p} out of range", clip.clip_id)))?;
            frames.entry((clip.video_id.clone(), kf.frame_idx)).or_insert_with(|| kf.clone());
        }
    }
    Ok(frames.into_iter().map(|((v, _), kf)| (v, kf)).collect())
}

/// Writes `hoia.json` (frame records) and `metadata.json` (per-frame temporal
/// fields plus the clip manifests) into `out_dir`.
pub fn export_hoia(clips: &[ClipManifest], segments: &[Segment], out_dir: &Path) -> Result<()> {
    let mut records = Vec::new();
    let mut metas = Vec::new();
    for (video, kf) in referenced_frames(clips, segments)? {
        let (r, m) = keyframe_to_hoia(&video, &kf);
        records.push(r);
        metas.push(m);
    }
    let meta = ExportMetadata {
        frames: metas,
        clips: clips.to_vec(),
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(&out_dir.join(HOIA_FILE), &records)?;
    write_json(&out_dir.join(METADATA_FILE), &meta)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportedExport {
    pub frames: Vec<(String, Keyframe)>,
    pub clips: Vec<ClipManifest>,
}

/// Reads back an export written by [`export_hoia`].
pub fn import_hoia(dir: &Path) -> Result<ImportedExport> {
    let records: Vec<HoiaFrame> = read_json(&dir.join(HOIA_FILE))?;
    let meta: ExportMetadata = read_json(&dir.join(METADATA_FILE))?;
    if records.len() != meta.frames.len() {
        return Err(Error::Annotation("hoia and metadata frame counts differ".into()));
    }
    let frames = records
        .iter()
        .zip(&meta.frames)
        .map(|(r, m)| Ok((m.video_id.clone(), hoia_to_keyframe(r, m)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportedExport {
        frames,
        clips: meta.clips,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

/// Writes one compact JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses JSON Lines, skipping blank lines. Errors carry the line number.
pub fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Annotation(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(track: u64, cat: usize, bbox: [f64; 4]) -> Instance {
        Instance { track_id: Some(track), category: cat, bbox }
    }

    fn hoi(s: u64, o: u64, verbs: &[usize]) -> HoiLabel {
        HoiLabel { subj_track: s, obj_track: o, verbs: verbs.iter().copied().collect() }
    }

    fn frame(t: f64, interactive: bool) -> Keyframe {
        Keyframe {
            t_sec: t,
            frame_idx: (t * 30.0).round() as u64,
            image_w: 640,
            image_h: 480,
            instances: vec![inst(1, 0, [10.0, 10.0, 100.0, 200.0]), inst(2, 3, [120.0, 50.0, 200.0, 150.0])],
            hois: if interactive { vec![hoi(1, 2, &[4])] } else { vec![] },
        }
    }

    fn stream(times: &[f64], interactive: impl Fn(usize) -> bool) -> AnnotationStream {
        AnnotationStream {
            video_id: "v".into(),
            nominal_step_sec: 1.0,
            split: "train".into(),
            keyframes: times.iter().enumerate().map(|(i, &t)| frame(t, interactive(i))).collect(),
        }
    }

    fn range(a: usize, b: usize) -> Vec<f64> {
        (a..b).map(|t| t as f64).collect()
    }

    #[test]
    fn gap_examples() {
        assert_eq!(detect_gaps(&stream(&range(0, 6), |_| true), 0.1).n_step, 0);
        let mut t = range(0, 6);
        t.extend(range(10, 16));
        let r = detect_gaps(&stream(&t, |_| true), 0.1);
        assert_eq!(r, GapReport { n_step: 1, l_steps: vec![5.0] });
        let mut t = range(0, 5);
        t.extend(range(7, 10));
        t.extend(range(18, 20));
        let r = detect_gaps(&stream(&t, |_| true), 0.1);
        assert_eq!(r.l_steps, vec![3.0, 9.0]);
        assert_eq!(detect_gaps(&stream(&[0.0], |_| true), 0.1), GapReport::default());
        // jitter below tolerance is not a gap
        assert_eq!(detect_gaps(&stream(&[0.0, 1.05, 2.0], |_| true), 0.1).n_step, 0);
    }

    #[test]
    fn merge_examples() {
        let s = stream(&[0.0, 3.0], |_| true);
        let sup = vec![frame(1.0, false), frame(2.0, false)];
        let m = merge_supplementary(&s, &sup).unwrap();
        assert_eq!(m.keyframes.len(), 4);
        assert!(m.keyframes.windows(2).all(|p| p[0].t_sec < p[1].t_sec));
        assert_eq!(merge_supplementary(&s, &[]).unwrap(), s);

        let mut dup = frame(3.0, false);
        dup.instances.pop();
        let m = merge_supplementary(&s, &[dup]).unwrap();
        assert_eq!(m.keyframes, s.keyframes);

        assert!(merge_supplementary(&s, &[frame(1.0, true)]).is_err());
        assert!(merge_supplementary(&s, &[frame(5.0, false)]).is_err());
    }

    #[test]
    fn continuity_examples() {
        let p = CorrectionParams::new(6);
        let cont = stream(&range(0, 12), |_| true);
        let segs = continuity_correct(&cont, &p).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].keyframes, cont.keyframes);
        assert!(segs[0].short_gaps.is_empty());

        let mut t = range(0, 8);
        t.extend(range(10, 18));
        let segs = continuity_correct(&stream(&t, |_| true), &p).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].short_gaps, vec![ShortGap { after_frame_idx: 210, seconds: 3.0 }]);

        let mut t = range(0, 8);
        t.extend(range(17, 25));
        let segs = continuity_correct(&stream(&t, |_| true), &p).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].origin, [0, 7]);
        assert_eq!(segs[1].origin, [8, 15]);
        assert!(segs.iter().all(|s| s.keyframes.iter().all(|k| k.t_sec <= 7.0 || k.t_sec >= 17.0)));
    }

    #[test]
    fn idle_runs_split_and_drop() {
        let p = CorrectionParams::new(6);
        // interactive 0..4, idle 5..12 (span 13-4 = 9 steps), interactive 13..20
        let s = stream(&range(0, 20), |i| !(5..13).contains(&i));
        let segs = continuity_correct(&s, &p).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].origin, [0, 4]);
        assert_eq!(segs[1].origin, [13, 19]);
        // a short idle run is kept
        let s = stream(&range(0, 20), |i| !(5..8).contains(&i));
        assert_eq!(continuity_correct(&s, &p).unwrap()[0].keyframes.len(), 20);
        // long idle edges are trimmed
        let s = stream(&range(0, 20), |i| (7..12).contains(&i));
        let segs = continuity_correct(&s, &p).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].origin, [7, 11]);
        // no supervision at all
        assert!(continuity_correct(&stream(&range(0, 9), |_| false), &p).unwrap().is_empty());
        assert!(continuity_correct(&stream(&range(0, 9), |_| true), &CorrectionParams::new(1)).is_err());
    }

    #[test]
    fn twelve_frames_make_seven_clips() {
        let s = stream(&range(0, 12), |_| true);
        let seg = &continuity_correct(&s, &CorrectionParams::new(6)).unwrap()[0];
        for mode in [StreamMode::Vidhoi, StreamMode::Ag] {
            let params = ClipParams { mode, ..Default::default() };
            let clips = build_clips(seg, &params).unwrap();
            assert_eq!(clips.len(), 7);
            for (k, c) in clips.iter().enumerate() {
                let det = 5 + k;
                assert_eq!(c.detection_position(), det);
                assert_eq!(c.observed_positions, (det - 5..=det).collect::<Vec<_>>());
                for ht in &c.horizons {
                    assert_eq!(ht.valid, det + ht.horizon as usize <= 11, "det {det} h {}", ht.horizon);
                    assert_eq!(ht.target_position, ht.valid.then_some(det + ht.horizon as usize));
                }
            }
            assert!(clips[6].horizons.iter().all(|h| !h.valid));
        }
    }

    #[test]
    fn clip_rules() {
        let s = stream(&range(0, 12), |i| i != 8);
        let seg = &continuity_correct(&s, &CorrectionParams::new(6)).unwrap()[0];
        let clips = build_clips(seg, &ClipParams::default()).unwrap();
        assert_eq!(clips.len(), 6);
        assert!(clips.iter().all(|c| c.detection_position() != 8));

        let six = stream(&range(0, 6), |_| true);
        let seg = &continuity_correct(&six, &CorrectionParams::new(6)).unwrap()[0];
        let clips = build_clips(seg, &ClipParams::default()).unwrap();
        assert_eq!(clips.len(), 1);
        assert!(clips[0].horizons.iter().all(|h| !h.valid && h.target_position.is_none()));

        let five = stream(&range(0, 5), |_| true);
        let seg = &continuity_correct(&five, &CorrectionParams::new(6)).unwrap()[0];
        assert!(build_clips(seg, &ClipParams::default()).unwrap().is_empty());
        let bad = ClipParams { horizons: vec![7, 1], ..Default::default() };
        assert!(build_clips(seg, &bad).is_err());
    }

    #[test]
    fn vidhoi_targets_follow_time_not_index() {
        // a retained 3-step gap after t=7 shifts indices but not timestamps
        let mut t = range(0, 8);
        t.extend(range(10, 16));
        let seg = &continuity_correct(&stream(&t, |_| true), &CorrectionParams::new(6)).unwrap()[0];
        let clips = build_clips(seg, &ClipParams::default()).unwrap();
        let c = &clips[0];
        assert_eq!(c.detection_position(), 5);
        let valid: Vec<bool> = c.horizons.iter().map(|h| h.valid).collect();
        // h=1 → t=6, h=3 → t=8 missing, h=5 → t=10, h=7 → t=12
        assert_eq!(valid, vec![true, false, true, true]);
        let ag = ClipParams { mode: StreamMode::Ag, ..Default::default() };
        let c = &build_clips(seg, &ag).unwrap()[0];
        assert!(c.horizons.iter().all(|h| h.valid));
    }

    #[test]
    fn alignment_examples() {
        let s = stream(&range(0, 12), |i| i < 9);
        let seg = &continuity_correct(&s, &CorrectionParams::new(6)).unwrap()[0];
        let clip = &build_clips(seg, &ClipParams::default()).unwrap()[0];
        let a = align_future_pairs(clip, seg, 0.5).unwrap();
        assert_eq!(a.pairs.len(), 1);
        let f = &a.pairs[0].future;
        assert!(f[..3].iter().all(|p| p.status == AlignStatus::Aligned));
        // t=6 has verbs, t=10 (h=5) is idle: aligned with an empty target
        assert_eq!(f[0].verbs, [4].into_iter().collect());
        assert!(f[2].verbs.is_empty());
        assert_eq!(f[3].status, AlignStatus::Masked);
    }

    #[test]
    fn alignment_iou_fallback() {
        let mut s = stream(&range(0, 7), |_| true);
        // future frame: untracked copies; subject shifted so IoU = 0.4
        let fut = &mut s.keyframes[6];
        fut.hois.clear();
        let base = [0.0, 0.0, 100.0, 100.0];
        s.keyframes[5].instances[0].bbox = base;
        let fut = &mut s.keyframes[6];
        fut.instances[0] = Instance { track_id: None, category: 0, bbox: [0.0, 0.0, 40.0, 100.0] };
        fut.instances[1].track_id = None;
        assert!((iou_corners(&base, &[0.0, 0.0, 40.0, 100.0]) - 0.4).abs() < 1e-12);
        let seg = &continuity_correct(&s, &CorrectionParams::new(6)).unwrap()[0];
        let clip = &build_clips(seg, &ClipParams::default()).unwrap()[0];
        let a = align_future_pairs(clip, seg, 0.5).unwrap();
        assert_eq!(a.pairs[0].future[0].status, AlignStatus::Unaligned);
        assert!(a.pairs[0].future[0].verbs.is_empty());

        // a shift with IoU 0.6 is recovered through the fallback
        s.keyframes[6].instances[0].bbox = [0.0, 0.0, 60.0, 100.0];
        let seg = &continuity_correct(&s, &CorrectionParams::new(6)).unwrap()[0];
        let a = align_future_pairs(clip, seg, 0.5).unwrap();
        assert_eq!(a.pairs[0].future[0].status, AlignStatus::Aligned);
        assert_eq!(a.pairs[0].future[1].status, AlignStatus::Masked);
    }

    #[test]
    fn hoia_smallest_record() {
        let kf = frame(0.0, true);
        let (r, m) = keyframe_to_hoia("vid", &kf);
        assert_eq!(r.file_name, "vid/000000.jpg");
        assert_eq!(r.annotations.len(), 2);
        assert_eq!(r.hoi_annotation, vec![HoiaInteraction { subject_id: 0, object_id: 1, category_id: 4 }]);
        assert_eq!(hoia_to_keyframe(&r, &m).unwrap(), kf);
    }

    #[test]
    fn export_round_trip_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let out = build_benchmark(&[stream(&range(0, 14), |i| i % 3 != 1)], &[], &BuildParams::default()).unwrap();
        let clips: Vec<ClipManifest> = out.clips().cloned().collect();
        let segs: Vec<Segment> = out.segments().cloned().collect();
        assert!(!clips.is_empty());
        export_hoia(&clips, &segs, dir.path()).unwrap();
        let back = import_hoia(dir.path()).unwrap();
        assert_eq!(back.clips, clips);
        assert_eq!(back.frames, referenced_frames(&clips, &segs).unwrap());

        let empty = tempfile::tempdir().unwrap();
        export_hoia(&[], &[], empty.path()).unwrap();
        let back = import_hoia(empty.path()).unwrap();
        assert!(back.clips.is_empty() && back.frames.is_empty());
        assert!(export_hoia(&[], &[], &empty.path().join(HOIA_FILE).join("x")).is_err());
    }

    #[test]
    fn stats_count_valid_pairs() {
        let out = build_benchmark(&[stream(&range(0, 12), |_| true)], &[], &BuildParams::default()).unwrap();
        let v: Vec<usize> = out.stats.valid_pairs.iter().map(|c| c.valid).collect();
        // detection positions 5..=11, valid iff pos + h <= 11
        assert_eq!(v, vec![6, 4, 2, 0]);
        assert_eq!(out.stats.clips, 7);
        assert_eq!(out.stats.per_split["train"].clips, 7);

        let stats = benchmark_stats(&[], &[1, 3], 0);
        assert!(stats.valid_pairs.iter().all(|c| c.valid == 0));
    }

    #[test]
    fn ground_truth_from_clips() {
        let out = build_benchmark(&[stream(&range(0, 12), |_| true)], &[], &BuildParams::default()).unwrap();
        let clips: Vec<ClipManifest> = out.clips().cloned().collect();
        let gt = eval_ground_truth(&clips);
        assert_eq!(gt.len(), clips.len() * 5);
        assert_eq!(gt[0].horizon, 0);
        assert_eq!(gt[0].triplets.len(), 1);
        assert_eq!(gt[0].triplets[0].person_id, Some(1));
        let last = &gt[gt.len() - 5..];
        assert!(last[1..].iter().all(|r| r.masked && r.triplets.is_empty()));
    }

    #[test]
    fn invalid_streams_rejected() {
        let mut s = stream(&range(0, 3), |_| true);
        s.keyframes[1].t_sec = 0.0;
        assert!(s.validate().is_err());
        let mut s = stream(&range(0, 3), |_| true);
        s.keyframes[0].hois[0].obj_track = 9;
        assert!(s.validate().is_err());
        let mut s = stream(&range(0, 3), |_| true);
        s.keyframes[0].instances[0].bbox[2] = 1000.0;
        assert!(s.validate().is_err());
        let a = stream(&range(0, 3), |_| true);
        assert!(build_benchmark(&[a.clone(), a], &[], &BuildParams::default()).is_err());
    }

    #[test]
    fn pipeline_is_a_fixed_point() {
        let mut t = range(0, 9);
        t.extend(range(11, 20));
        t.extend(range(40, 52));
        let s = stream(&t, |i| i % 5 != 2);
        let p = BuildParams::default();
        let first = process_video(&s, &[], &p).unwrap();
        for seg in &first.segments {
            let again = AnnotationStream {
                video_id: seg.video_id.clone(),
                nominal_step_sec: seg.nominal_step_sec,
                split: seg.split.clone(),
                keyframes: seg.keyframes.clone(),
            };
            let segs = continuity_correct(&again, &p.correction).unwrap();
            assert_eq!(segs.len(), 1);
            assert_eq!(segs[0].keyframes, seg.keyframes);
            let c1 = build_clips(seg, &p.clip).unwrap();
            let c2 = build_clips(&Segment { segment_index: seg.segment_index, ..segs[0].clone() }, &p.clip).unwrap();
            assert_eq!(c1, c2);
        }
    }
}
