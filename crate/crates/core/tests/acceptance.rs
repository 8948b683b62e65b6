//! Acceptance criteria. Runs without the test harness so that one PASS/FAIL
//! line per criterion is always printed; exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use detant_core::benchmark::{
    build_benchmark, build_clips, continuity_correct, detect_gaps, export_hoia, import_hoia, AnnotationStream,
    BuildParams, ClipParams, CorrectionParams, HoiLabel, Instance, Keyframe,
};
use detant_core::eval::evaluate;
use detant_core::eval::FrequencyTable;
use detant_core::losses::{
    focal_verb_grad, focal_verb_loss, horizon_orthogonality, horizon_weights, orth_grads, rampup,
    slot_predictions, task_orthogonality, ClipTargets, DetectionWeights, GradientRoute, HorizonMask,
    LossBreakdown, ObjectiveConfig, OrthInputs,
};
use detant_core::matching::{cost_matrix, hungarian, Assignment};
use detant_core::model::{model_forward, ForwardOutput, ModelConfig, ModelParams, VisualMemory};
use detant_core::numerics::{Mat, DEFAULT_EPS};
use detant_core::rng::SeededRng;
use detant_core::synth::{gen_eval_case, gen_stream, PlantedGap, SynthEvalSpec, SynthStreamSpec};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("{what} took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

// ---------- independent oracles ----------

/// Exhaustive minimum over injections of the smaller side into the larger.
fn exhaustive_min(cost: &[Vec<f64>]) -> f64 {
    let (r, c) = (cost.len(), cost[0].len());
    let at = |i: usize, j: usize| if r <= c { cost[i][j] } else { cost[j][i] };
    let (n, m) = (r.min(c), r.max(c));
    fn go(i: usize, n: usize, m: usize, used: &mut [bool], acc: f64, best: &mut f64, at: &dyn Fn(usize, usize) -> f64) {
        if i == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                go(i + 1, n, m, used, acc + at(i, j), best, at);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, n, m, &mut vec![false; m], 0.0, &mut best, &at);
    best
}

fn central_differences(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖∞ / ‖n‖∞`, or the absolute difference when the numeric gradient vanishes.
fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = n.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

// ---------- criteria ----------

fn hungarian_optimality() -> Outcome {
    let mut rng = SeededRng::new(0xa11);
    let start = Instant::now();
    let mut solver = Duration::ZERO;
    let mut sizes = BTreeSet::new();
    for case in 0..500 {
        let small = 1 + rng.below(7);
        let large = small + rng.below(3);
        let (r, c) = if rng.uniform() < 0.5 { (small, large) } else { (large, small) };
        // dyadic grid so every summation order is exact; a coarse grid also yields ties
        let levels = if case % 4 == 0 { 4 } else { 4096 };
        let rows: Vec<Vec<f64>> = (0..r)
            .map(|_| (0..c).map(|_| rng.below(levels) as f64 / 64.0).collect())
            .collect();
        let m = Mat::from_rows(&rows).unwrap();
        let t = Instant::now();
        let a = hungarian(&m).map_err(|e| e.to_string())?;
        solver += t.elapsed();
        ensure(a.pairs.len() == r.min(c), || format!("case {case}: {} pairs for {r}x{c}", a.pairs.len()))?;
        let got = a.total_cost(&m);
        let want = exhaustive_min(&rows);
        ensure(got == want, || format!("case {case} ({r}x{c}): cost {got} vs optimum {want}"))?;
        sizes.insert((r, c));
    }
    ensure(solver < Duration::from_secs(5), || format!("solver took {solver:?}"))?;
    Ok(format!(
        "500 matrices, {} shapes, exact optimum; solver {:?}, with oracle {:?}",
        sizes.len(),
        solver,
        start.elapsed()
    ))
}

fn random_orth(rng: &mut SeededRng) -> (Mat, Vec<Mat>, HorizonMask, usize) {
    let (b, p, d, nh) = (1 + rng.below(3), 1 + rng.below(3), 2 + rng.below(6), 2 + rng.below(3));
    let z = Mat::gaussian(b * p, d, 1.0, rng);
    let r = (0..nh).map(|_| Mat::gaussian(b * p, d, 1.0, rng)).collect();
    let mask = HorizonMask {
        bits: (0..b).map(|_| (0..nh).map(|_| rng.uniform() < 0.75).collect()).collect(),
    };
    (z, r, mask, p)
}

fn flatten(z: &Mat, r: &[Mat]) -> Vec<f64> {
    let mut v = z.values().to_vec();
    for m in r {
        v.extend_from_slice(m.values());
    }
    v
}

fn gradient_fidelity() -> Outcome {
    const STEP: f64 = 1e-6;
    const TOL: f64 = 1e-5;
    let start = Instant::now();
    let mut rng = SeededRng::new(0x9d);
    let mut worst = [0.0f64; 3];

    for case in 0..100 {
        let (r, c) = (1 + rng.below(5), 1 + rng.below(10));
        let p: Vec<f64> = (0..r * c).map(|_| rng.uniform_range(0.02, 0.98)).collect();
        let y: Vec<f64> = (0..r * c).map(|_| if rng.uniform() < 0.35 { 1.0 } else { 0.0 }).collect();
        let ym = Mat::new(r, c, y).unwrap();
        let g = focal_verb_grad(&Mat::new(r, c, p.clone()).unwrap(), &ym).unwrap();
        let f = |x: &[f64]| focal_verb_loss(&Mat::new(r, c, x.to_vec()).unwrap(), &ym).unwrap();
        let e = rel_err(g.values(), &central_differences(&f, &p, STEP));
        ensure(e < TOL, || format!("focal case {case}: relative error {e:e}"))?;
        worst[0] = worst[0].max(e);
    }

    for (k, loss) in [(1usize, task_orthogonality as fn(&OrthInputs<'_>) -> _), (2, horizon_orthogonality)] {
        for case in 0..100 {
            let (z, res, mask, p) = random_orth(&mut rng);
            let (rows, cols, nh) = (z.rows(), z.cols(), res.len());
            let inputs = OrthInputs {
                boundary: &z,
                residuals: &res,
                mask: &mask,
                slots_per_sample: p,
                eps: DEFAULT_EPS,
            };
            let grads = orth_grads(&inputs, GradientRoute::Both).unwrap();
            let g = if k == 1 { grads.task } else { grads.horizon };
            let f = |x: &[f64]| {
                let n = rows * cols;
                let zz = Mat::new(rows, cols, x[..n].to_vec()).unwrap();
                let rr: Vec<Mat> = (0..nh)
                    .map(|h| Mat::new(rows, cols, x[n * (h + 1)..n * (h + 2)].to_vec()).unwrap())
                    .collect();
                loss(&OrthInputs {
                    boundary: &zz,
                    residuals: &rr,
                    ..inputs
                })
                .unwrap()
            };
            let e = rel_err(&flatten(&g.boundary, &g.residuals), &central_differences(&f, &flatten(&z, &res), STEP));
            ensure(e < TOL, || format!("orthogonality term {k} case {case}: relative error {e:e}"))?;
            worst[k] = worst[k].max(e);
        }
    }
    let took = within(Duration::from_secs(10), start, "gradient checks")?;
    Ok(format!(
        "worst relative error focal {:.1e}, task {:.1e}, horizon {:.1e}; {took:?}",
        worst[0], worst[1], worst[2]
    ))
}

fn schedule_exactness() -> Outcome {
    let w = horizon_weights(0.8, 0.7, &[1, 3, 5, 7]).map_err(|e| e.to_string())?;
    let sum: f64 = w.iter().sum();
    ensure((sum - 0.8).abs() <= 1e-12, || format!("weights sum to {sum}"))?;
    ensure(w.windows(2).all(|p| p[0] >= p[1]), || format!("weights increase: {w:?}"))?;
    // closed form: 0.8 · 0.7^(j−1) / Σ 0.7^(m−1)
    let z = 1.0 + 0.7 + 0.49 + 0.343;
    for (j, v) in w.iter().enumerate() {
        let want = 0.8 * 0.7f64.powi(j as i32) / z;
        ensure((v - want).abs() <= 1e-15, || format!("weight {j}: {v} vs {want}"))?;
    }
    let r0 = rampup(0, 0.25, 8).map_err(|e| e.to_string())?;
    ensure(r0 == 0.25, || format!("rampup(0) = {r0}"))?;
    for e in 7..40 {
        let r = rampup(e, 0.25, 8).map_err(|e| e.to_string())?;
        ensure(r == 1.0, || format!("rampup({e}) = {r}"))?;
    }
    for e in 1..7 {
        let r = rampup(e, 0.25, 8).map_err(|e| e.to_string())?;
        ensure(r > 0.25 && r < 1.0, || format!("rampup({e}) = {r} not inside the ramp"))?;
    }
    Ok(format!("weights {w:.6?}, sum error {:.1e}", (sum - 0.8).abs()))
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn orthogonality_geometry() -> Outcome {
    const EXACT_EPS: f64 = 1e-14;
    let mut rng = SeededRng::new(0x6e0);
    let mut worst_exact = 0.0f64;
    let mut worst_default = 0.0f64;
    for case in 0..50 {
        let d = 2 + rng.below(7);
        let rows = 1 + rng.below(4);
        let mut zs = Vec::new();
        let mut orth = Vec::new();
        let mut par = Vec::new();
        let mut diag = Vec::new();
        for _ in 0..rows {
            let z = unit(rng.gaussian_vec(d, 1.0));
            let raw = rng.gaussian_vec(d, 1.0);
            let proj: f64 = raw.iter().zip(&z).map(|(a, b)| a * b).sum();
            let perp = unit(raw.iter().zip(&z).map(|(a, b)| a - proj * b).collect());
            let sign = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
            par.push(z.iter().map(|v| sign * v).collect::<Vec<_>>());
            diag.push(unit(z.iter().zip(&perp).map(|(a, b)| a + b).collect()));
            orth.push(perp);
            zs.push(z);
        }
        let z = Mat::from_rows(&zs).unwrap();
        for (res, want) in [(orth, 0.0), (par, 1.0), (diag, 0.5)] {
            let r = [Mat::from_rows(&res).unwrap()];
            let mask = HorizonMask::all_valid(rows, 1);
            for (eps, worst) in [(EXACT_EPS, &mut worst_exact), (DEFAULT_EPS, &mut worst_default)] {
                let v = task_orthogonality(&OrthInputs {
                    boundary: &z,
                    residuals: &r,
                    mask: &mask,
                    slots_per_sample: 1,
                    eps,
                })
                .unwrap();
                *worst = worst.max((v - want).abs());
            }
        }
        ensure(worst_exact <= 1e-12, || format!("case {case}: error {worst_exact:e} at eps {EXACT_EPS:e}"))?;
        ensure(worst_default <= 1e-7, || format!("case {case}: error {worst_default:e} at default eps"))?;
    }

    // zero branch: no sample has two valid horizons
    let z = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.4]]).unwrap();
    let r = [z.clone(), z.clone(), z.clone()];
    let mut zero_cases = 0;
    for bits in [
        vec![vec![true, false, false], vec![false, true, false], vec![false, false, false]],
        vec![vec![false; 3]; 3],
    ] {
        let mask = HorizonMask { bits };
        let v = horizon_orthogonality(&OrthInputs {
            boundary: &z,
            residuals: &r,
            mask: &mask,
            slots_per_sample: 1,
            eps: DEFAULT_EPS,
        })
        .unwrap();
        ensure(v == 0.0, || format!("horizon term {v} without jointly valid pairs"))?;
        zero_cases += 1;
    }
    Ok(format!(
        "50 random frames; worst {worst_exact:.1e} at eps 1e-14, {worst_default:.1e} at default eps; {zero_cases} zero-branch cases"
    ))
}

fn residual_identity() -> Outcome {
    let start = Instant::now();
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let config = ModelConfig {
            seed,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config).map_err(|e| e.to_string())?;
        let out = model_forward(&config, &params, &VisualMemory::synthesize(&config, seed ^ 0xfeed))
            .map_err(|e| e.to_string())?;
        ensure(out.residuals.len() == config.horizons.len(), || "residual count".into())?;
        for (h, (res, ant)) in out.residuals.iter().zip(&out.anticipation_states).enumerate() {
            for (i, ((r, b), a)) in res
                .values()
                .iter()
                .zip(out.boundary_state.values())
                .zip(ant.values())
                .enumerate()
            {
                ensure(r + b == *a, || format!("seed {seed} horizon {h} entry {i}: {r} + {b} != {a}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("100 forwards, {checked} entries exact; {:?}", start.elapsed()))
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let (mut multi_person, mut all_masked, mut fp_over_tp, mut compared) = (0, 0, 0, 0usize);
    for seed in 0..50u64 {
        let case = gen_eval_case(&SynthEvalSpec::variant(seed)).map_err(|e| e.to_string())?;
        let freq = FrequencyTable::from_entries(&case.frequencies);
        let report = evaluate(&case.predictions, &case.ground_truth, &case.config, &freq).map_err(|e| e.to_string())?;
        for exp in &case.expected {
            let got = report
                .horizon(exp.horizon)
                .ok_or_else(|| format!("seed {seed}: horizon {} missing", exp.horizon))?;
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
            let opt_close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(x), Some(y)) => close(x, y),
                (None, None) => true,
                _ => false,
            };
            ensure(close(got.map_full, exp.map_full), || {
                format!("seed {seed} h={}: full {} vs {}", exp.horizon, got.map_full, exp.map_full)
            })?;
            ensure(opt_close(got.map_rare, exp.map_rare), || {
                format!("seed {seed} h={}: rare {:?} vs {:?}", exp.horizon, got.map_rare, exp.map_rare)
            })?;
            ensure(opt_close(got.map_nonrare, exp.map_nonrare), || {
                format!("seed {seed} h={}: nonrare {:?} vs {:?}", exp.horizon, got.map_nonrare, exp.map_nonrare)
            })?;
            for k in [10usize, 20, 50] {
                let (g, e) = (got.recall.get(&k).copied(), exp.recall.get(&k).copied());
                ensure(opt_close(g, e) && g.is_some(), || {
                    format!("seed {seed} h={} R@{k}: {g:?} vs {e:?}", exp.horizon)
                })?;
            }
            for (k, e) in &exp.recall {
                ensure(close(got.recall[k], *e), || format!("seed {seed} h={} R@{k}", exp.horizon))?;
            }
            let r: Vec<f64> = got.recall.values().copied().collect();
            ensure(r.windows(2).all(|p| p[0] <= p[1]), || format!("seed {seed}: recall not monotone {r:?}"))?;
            compared += 1;
        }

        // coverage of the fixture family
        if case.ground_truth.iter().any(|rec| {
            let persons: BTreeSet<_> = rec.triplets.iter().map(|t| t.person_id).collect();
            persons.len() > 1
        }) {
            multi_person += 1;
        }
        let mut by_h: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for rec in &case.ground_truth {
            let e = by_h.entry(rec.horizon).or_default();
            e.0 += 1;
            e.1 += rec.masked as usize;
        }
        if by_h.values().any(|&(n, m)| n > 0 && n == m) {
            all_masked += 1;
        }
        let truth: BTreeSet<String> = case
            .ground_truth
            .iter()
            .flat_map(|rec| {
                rec.triplets.iter().map(move |t| {
                    format!("{}|{}|{:?}|{:?}|{}|{}", rec.clip_id, rec.horizon, t.human_box, t.object_box, t.object_category, t.verb)
                })
            })
            .collect();
        let mut preds = case.predictions.clone();
        preds.sort_by(|a, b| b.score.total_cmp(&a.score));
        let is_true = |p: &detant_core::eval::Prediction| {
            truth.contains(&format!(
                "{}|{}|{:?}|{:?}|{}|{}",
                p.clip_id, p.horizon, p.human_box, p.object_box, p.object_category, p.verb
            ))
        };
        if let Some(first_false) = preds.iter().position(|p| !is_true(p)) {
            if preds[first_false..].iter().any(is_true) {
                fp_over_tp += 1;
            }
        }
    }
    ensure(multi_person > 0 && all_masked > 0 && fp_over_tp > 0, || {
        format!("fixture coverage: multi-person {multi_person}, all-masked {all_masked}, fp-above-tp {fp_over_tp}")
    })?;
    let took = within(Duration::from_secs(10), start, "metric oracle")?;
    Ok(format!(
        "50 fixtures, {compared} horizon reports exact; {multi_person} multi-person, {all_masked} all-masked, {fp_over_tp} with FP above TP; {took:?}"
    ))
}

fn interactive_frame(i: usize, step: f64) -> Keyframe {
    Keyframe {
        t_sec: i as f64 * step,
        frame_idx: 30 * i as u64,
        image_w: 640,
        image_h: 480,
        instances: vec![
            Instance {
                track_id: Some(1),
                category: 0,
                bbox: [10.0 + i as f64, 20.0, 110.0 + i as f64, 220.0],
            },
            Instance {
                track_id: Some(2),
                category: 3,
                bbox: [200.0, 200.0 + i as f64, 260.0, 300.0 + i as f64],
            },
        ],
        hois: vec![HoiLabel {
            subj_track: 1,
            obj_track: 2,
            verbs: [i % 3].into_iter().collect(),
        }],
    }
}

fn benchmark_construction() -> Outcome {
    // planted gaps are reproduced exactly
    let mut planted_total = 0;
    for seed in 0..20u64 {
        let mut spec = SynthStreamSpec::basic(seed, &format!("g{seed}"), 40);
        spec.nominal_step = [1.0, 0.5, 0.25, 2.0][seed as usize % 4];
        let mut rng = SeededRng::new(seed);
        let mut positions: Vec<usize> = (0..1 + rng.below(4)).map(|_| 1 + rng.below(37)).collect();
        positions.sort_unstable();
        positions.dedup();
        spec.gaps = positions
            .into_iter()
            .map(|position| PlantedGap {
                position,
                length_steps: 2 + rng.below(12) as u32,
            })
            .collect();
        let s = gen_stream(&spec).map_err(|e| e.to_string())?;
        let report = detect_gaps(&s.stream, 0.1);
        ensure(report == s.planted, || format!("seed {seed}: detected {report:?}, planted {:?}", s.planted))?;
        ensure(report.n_step == spec.gaps.len(), || format!("seed {seed}: gap count"))?;
        for (g, l) in spec.gaps.iter().zip(&report.l_steps) {
            ensure(*l == g.length_steps as f64 * spec.nominal_step, || format!("seed {seed}: duration {l}"))?;
        }
        planted_total += report.n_step;
    }

    // retain a 3-step gap, split at a 10-step gap
    let mut split_counts = Vec::new();
    for len in [3u32, 10] {
        let mut spec = SynthStreamSpec::basic(7, "split", 24);
        spec.gaps = vec![PlantedGap {
            position: 11,
            length_steps: len,
        }];
        let s = gen_stream(&spec).map_err(|e| e.to_string())?;
        let segs = continuity_correct(&s.stream, &CorrectionParams::new(6)).map_err(|e| e.to_string())?;
        split_counts.push(segs.len());
    }
    ensure(split_counts == [1, 2], || format!("segments for 3- and 10-step gaps: {split_counts:?}"))?;

    // 12 continuous interactive keyframes
    let stream = AnnotationStream {
        video_id: "c12".into(),
        nominal_step_sec: 1.0,
        split: "test".into(),
        keyframes: (0..12).map(|i| interactive_frame(i, 1.0)).collect(),
    };
    let segs = continuity_correct(&stream, &CorrectionParams::new(6)).map_err(|e| e.to_string())?;
    ensure(segs.len() == 1, || format!("{} segments", segs.len()))?;
    let clips = build_clips(&segs[0], &ClipParams::default()).map_err(|e| e.to_string())?;
    ensure(clips.len() == 7, || format!("{} clips", clips.len()))?;
    for (n, clip) in clips.iter().enumerate() {
        let pos = n + 5;
        ensure(clip.detection_position() == pos, || format!("clip {n} ends at {}", clip.detection_position()))?;
        ensure(clip.observed_positions == (n..=pos).collect::<Vec<_>>(), || format!("clip {n} window"))?;
        for t in &clip.horizons {
            let valid = pos + t.horizon as usize <= 11;
            ensure(t.valid == valid, || format!("clip at {pos}, h={}: valid {}", t.horizon, t.valid))?;
            ensure(t.target_position == valid.then_some(pos + t.horizon as usize), || {
                format!("clip at {pos}, h={}: target {:?}", t.horizon, t.target_position)
            })?;
        }
    }

    // HOI-A export round trip
    let mut streams = Vec::new();
    let mut supplements = Vec::new();
    for seed in 0..4u64 {
        let mut spec = SynthStreamSpec::basic(seed, &format!("rt{seed}"), 30);
        spec.gaps = vec![PlantedGap {
            position: 8,
            length_steps: 3,
        }];
        spec.supplement_below = Some(6);
        let s = gen_stream(&spec).map_err(|e| e.to_string())?;
        streams.push(s.stream);
        supplements.push(s.supplements);
    }
    let built = build_benchmark(&streams, &supplements, &BuildParams::default()).map_err(|e| e.to_string())?;
    let clips: Vec<_> = built.clips().cloned().collect();
    let segments: Vec<_> = built.segments().cloned().collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    export_hoia(&clips, &segments, dir.path()).map_err(|e| e.to_string())?;
    let back = import_hoia(dir.path()).map_err(|e| e.to_string())?;
    ensure(back.clips == clips, || "clip manifests differ after round trip".into())?;
    let originals: BTreeMap<(String, u64), &Keyframe> = segments
        .iter()
        .flat_map(|s| s.keyframes.iter().map(move |k| ((s.video_id.clone(), k.frame_idx), k)))
        .collect();
    let mut referenced = BTreeSet::new();
    for c in &clips {
        for &f in &c.observed_frame_idx {
            referenced.insert((c.video_id.clone(), f));
        }
        for t in &c.horizons {
            if let Some(f) = t.target_frame_idx {
                referenced.insert((c.video_id.clone(), f));
            }
        }
    }
    ensure(back.frames.len() == referenced.len(), || {
        format!("{} frames exported, {} referenced", back.frames.len(), referenced.len())
    })?;
    for (video, kf) in &back.frames {
        let orig = originals
            .get(&(video.clone(), kf.frame_idx))
            .ok_or_else(|| format!("{video}/{} not in any segment", kf.frame_idx))?;
        ensure(*orig == kf, || format!("{video}/{} differs after round trip", kf.frame_idx))?;
    }
    Ok(format!(
        "{planted_total} planted gaps reproduced; segments {split_counts:?}; 7 clips with expected masks; {} frames and {} clips round-trip",
        back.frames.len(),
        clips.len()
    ))
}

fn detant(args: &[&str], threads: Option<&str>) -> Result<std::process::Output, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_detant"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("DETANT_THREADS", t),
        None => cmd.env_remove("DETANT_THREADS"),
    };
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("detant {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out)
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let spec = SynthStreamSpec {
        gaps: vec![
            PlantedGap {
                position: 6,
                length_steps: 3,
            },
            PlantedGap {
                position: 20,
                length_steps: 9,
            },
        ],
        supplement_below: Some(6),
        idle: vec![[30, 33]],
        ..SynthStreamSpec::basic(11, "det", 44)
    };
    std::fs::write(p("spec.json"), serde_json::to_vec(&spec).unwrap()).map_err(|e| e.to_string())?;
    detant(&["synth", "stream", "--spec", &p("spec.json"), "--out", &p("s")], None)?;
    let mut builds = Vec::new();
    for (i, threads) in [None, None, Some("1")].into_iter().enumerate() {
        let out = p(&format!("b{i}"));
        detant(
            &[
                "bench",
                "build",
                "--ann",
                &p("s/stream.jsonl"),
                "--supplements",
                &p("s/supplements.jsonl"),
                "--out",
                &out,
            ],
            threads,
        )?;
        builds.push(dir_bytes(Path::new(&out)));
    }
    ensure(builds[0].len() >= 6, || format!("bench build wrote {:?}", builds[0].keys()))?;
    ensure(builds[0] == builds[1], || "bench build outputs differ between runs".into())?;
    ensure(builds[0] == builds[2], || "bench build outputs depend on the thread count".into())?;

    let mut demos = Vec::new();
    for i in 0..2 {
        let out = p(&format!("demo{i}.json"));
        let o = detant(&["demo", "forward", "--seed", "5", "--out", &out], None)?;
        demos.push((std::fs::read(&out).map_err(|e| e.to_string())?, o.stdout));
    }
    ensure(demos[0] == demos[1], || "demo forward outputs differ between runs".into())?;
    let other = p("demo_other.json");
    detant(&["demo", "forward", "--seed", "6", "--out", &other], None)?;
    ensure(std::fs::read(&other).unwrap() != demos[0].0, || "seed has no effect on demo forward".into())?;
    let bytes: usize = builds[0].values().map(Vec::len).sum();
    Ok(format!("bench build ({} files, {bytes} bytes) and demo forward byte-identical", builds[0].len()))
}

#[derive(serde::Deserialize)]
struct DemoDocument {
    config: ModelConfig,
    output: ForwardOutput,
    targets: ClipTargets,
    assignment: Assignment,
    loss: LossBreakdown,
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("demo.json");
    let o = detant(
        &[
            "demo", "forward", "--seed", "3", "--slots", "8", "--frames", "6", "--hidden", "32", "--horizons", "1,3,5,7",
            "--out", out.to_str().unwrap(),
        ],
        None,
    )?;
    ensure(!o.stdout.is_empty(), || "demo forward printed nothing".into())?;
    let doc: DemoDocument =
        serde_json::from_slice(&std::fs::read(&out).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let c = &doc.config;
    ensure(
        (c.pair_slots, c.frames, c.hidden, c.horizons.as_slice()) == (8, 6, 32, &[1u32, 3, 5, 7][..]),
        || format!("unexpected config {c:?}"),
    )?;
    let o = &doc.output;
    ensure(o.subject_boxes.len() == 8 && o.verb_logits_future.len() == 4, || "output shapes".into())?;

    // the assignment is optimal for the cost matrix implied by the outputs
    let cost = cost_matrix(&slot_predictions(o), &doc.targets.current, &ObjectiveConfig::default().cost);
    let rows: Vec<Vec<f64>> = cost.iter_rows().map(<[f64]>::to_vec).collect();
    let opt = exhaustive_min(&rows);
    let got = doc.assignment.total_cost(&cost);
    ensure((got - opt).abs() <= 1e-9 * opt.abs().max(1.0), || format!("assignment cost {got} vs optimum {opt}"))?;
    ensure(doc.assignment.pairs.len() == doc.targets.current.len(), || "unmatched targets".into())?;

    // total recomposes from its terms
    let l = &doc.loss;
    let dw = DetectionWeights::default();
    let det = dw.lambda_box * l.box_l1 + dw.lambda_giou * l.giou + dw.lambda_obj * l.obj + dw.lambda_verb * l.verb_current;
    ensure((det - l.det).abs() <= 1e-12, || format!("detection {det} vs {}", l.det))?;
    let total = l.det + l.alpha * (l.ant + l.lambda_torth * l.torth + l.lambda_horth * l.horth);
    ensure((total - l.total).abs() <= 1e-12, || format!("total {total} vs {}", l.total))?;
    ensure(l.alpha == 0.25 && l.lambda_torth == 0.05 && l.lambda_horth == 0.05, || "objective constants".into())?;
    ensure(l.total.is_finite() && l.total > 0.0, || format!("total {}", l.total))?;
    let ant: f64 = l.verb_future.iter().zip(horizon_weights(0.8, 0.7, &[1, 3, 5, 7]).unwrap()).map(|(a, w)| a * w).sum();
    ensure((ant - l.ant).abs() <= 1e-12, || format!("anticipation {ant} vs {}", l.ant))?;

    let sc = detant(&["loss", "selfcheck", "--seed", "3"], None)?;
    let table = String::from_utf8_lossy(&sc.stdout);
    ensure(table.lines().skip(1).all(|l| l.contains("PASS")), || format!("selfcheck:\n{table}"))?;
    let took = within(Duration::from_secs(30), start, "end-to-end")?;
    Ok(format!(
        "{} matched pairs, total {:.6}, recomposition error {:.1e}; selfcheck {} checks; {took:?}",
        doc.assignment.pairs.len(),
        l.total,
        (total - l.total).abs(),
        table.lines().count() - 1
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("hungarian optimality", hungarian_optimality),
        ("gradient fidelity", gradient_fidelity),
        ("schedule exactness", schedule_exactness),
        ("orthogonality geometry", orthogonality_geometry),
        ("residual identity", residual_identity),
        ("metric oracle equivalence", metric_oracle),
        ("benchmark construction", benchmark_construction),
        ("determinism", determinism),
        ("end-to-end smoke", end_to_end),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
