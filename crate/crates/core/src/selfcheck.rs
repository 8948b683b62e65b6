//! Runtime self-checks: finite-difference gradient checks and invariant
//! probes over seeded random configurations.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{
    focal_verb_grad, focal_verb_loss, horizon_orthogonality, horizon_weights, orth_grads, rampup,
    task_orthogonality, GradientRoute, HorizonMask, OrthGrads, OrthInputs,
};
use crate::matching::hungarian;
use crate::model::{model_forward, ModelConfig, ModelParams, VisualMemory};
use crate::numerics::{Mat, DEFAULT_EPS};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckConfig {
    pub seed: u64,
    pub cases: usize,
    pub fd_step: f64,
    pub tolerance: f64,
}

impl Default for SelfcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 100,
            fd_step: 1e-6,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Largest observed error (meaning depends on the check).
    pub worst: f64,
    pub tolerance: f64,
}

/// Central differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `max |a − n| / max |n|`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Random orthogonality configuration: `(boundary, residuals, mask, slots)`.
pub fn random_orth_case(rng: &mut SeededRng) -> (Mat, Vec<Mat>, HorizonMask, usize) {
    let (b, p, d, h) = (1 + rng.below(2), 1 + rng.below(3), 2 + rng.below(5), 2 + rng.below(3));
    let z = Mat::gaussian(b * p, d, 1.0, rng);
    let r = (0..h).map(|_| Mat::gaussian(b * p, d, 1.0, rng)).collect();
    let mask = HorizonMask {
        bits: (0..b).map(|_| (0..h).map(|_| rng.uniform() < 0.8).collect()).collect(),
    };
    (z, r, mask, p)
}

fn pack(z: &Mat, r: &[Mat]) -> Vec<f64> {
    let mut v = z.values().to_vec();
    r.iter().for_each(|m| v.extend_from_slice(m.values()));
    v
}

fn unpack(x: &[f64], rows: usize, cols: usize, n_h: usize) -> (Mat, Vec<Mat>) {
    let n = rows * cols;
    let z = Mat::new(rows, cols, x[..n].to_vec()).expect("sized");
    let r = (0..n_h)
        .map(|h| Mat::new(rows, cols, x[n * (h + 1)..n * (h + 2)].to_vec()).expect("sized"))
        .collect();
    (z, r)
}

fn orth_check(
    config: &SelfcheckConfig,
    name: &str,
    loss: fn(&OrthInputs<'_>) -> Result<f64>,
    pick: fn(crate::losses::OrthGradients) -> OrthGrads,
) -> Result<CheckResult> {
    let mut rng = SeededRng::new(config.seed ^ 0x0b7);
    let mut worst = 0.0f64;
    for _ in 0..config.cases {
        let (z, r, mask, p) = random_orth_case(&mut rng);
        let (rows, cols, n_h) = (z.rows(), z.cols(), r.len());
        let inputs = OrthInputs {
            boundary: &z,
            residuals: &r,
            mask: &mask,
            slots_per_sample: p,
            eps: DEFAULT_EPS,
        };
        let g = pick(orth_grads(&inputs, GradientRoute::Both)?);
        let f = |x: &[f64]| {
            let (zz, rr) = unpack(x, rows, cols, n_h);
            loss(&OrthInputs {
                boundary: &zz,
                residuals: &rr,
                ..inputs
            })
            .expect("validated shapes")
        };
        let numeric = fd_gradient(f, &pack(&z, &r), config.fd_step);
        worst = worst.max(relative_error(&pack(&g.boundary, &g.residuals), &numeric));
    }
    Ok(CheckResult {
        name: name.into(),
        passed: worst < config.tolerance,
        cases: config.cases,
        worst,
        tolerance: config.tolerance,
    })
}

fn focal_check(config: &SelfcheckConfig) -> Result<CheckResult> {
    let mut rng = SeededRng::new(config.seed ^ 0xf0c);
    let mut worst = 0.0f64;
    for _ in 0..config.cases {
        let (r, c) = (1 + rng.below(4), 1 + rng.below(8));
        let p = Mat::new(r, c, (0..r * c).map(|_| rng.uniform_range(0.02, 0.98)).collect())?;
        let y = Mat::new(r, c, (0..r * c).map(|_| (rng.uniform() < 0.4) as u8 as f64).collect())?;
        let g = focal_verb_grad(&p, &y)?;
        let f = |x: &[f64]| focal_verb_loss(&Mat::new(r, c, x.to_vec()).expect("sized"), &y).expect("valid");
        worst = worst.max(relative_error(g.values(), &fd_gradient(f, p.values(), config.fd_step)));
    }
    Ok(CheckResult {
        name: "focal verb gradient".into(),
        passed: worst < config.tolerance,
        cases: config.cases,
        worst,
        tolerance: config.tolerance,
    })
}

fn schedule_check() -> Result<CheckResult> {
    let w = horizon_weights(0.8, 0.7, &[1, 3, 5, 7])?;
    let sum_err = (w.iter().sum::<f64>() - 0.8).abs();
    let monotone = w.windows(2).all(|p| p[0] >= p[1]);
    let ramp_ok = rampup(0, 0.25, 8)? == 0.25 && (7..20).all(|e| rampup(e, 0.25, 8).is_ok_and(|a| a == 1.0));
    Ok(CheckResult {
        name: "horizon weights and ramp-up".into(),
        passed: sum_err <= 1e-12 && monotone && ramp_ok,
        cases: 1,
        worst: sum_err,
        tolerance: 1e-12,
    })
}

fn geometry_check() -> Result<CheckResult> {
    let one = HorizonMask::all_valid(1, 1);
    let z = Mat::from_rows(&[vec![1.0, 0.0]])?;
    let eps = 1e-14;
    let at = |r: Vec<f64>| -> Result<f64> {
        let res = [Mat::from_rows(&[r])?];
        task_orthogonality(&OrthInputs {
            boundary: &z,
            residuals: &res,
            mask: &one,
            slots_per_sample: 1,
            eps,
        })
    };
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let errs = [at(vec![0.0, 1.0])?, (at(vec![1.0, 0.0])? - 1.0).abs(), (at(vec![s, s])? - 0.5).abs()];
    let disjoint = HorizonMask {
        bits: vec![vec![true, false], vec![false, true]],
    };
    let z2 = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let r2 = [z2.clone(), z2.clone()];
    let horth = horizon_orthogonality(&OrthInputs {
        boundary: &z2,
        residuals: &r2,
        mask: &disjoint,
        slots_per_sample: 1,
        eps: DEFAULT_EPS,
    })?;
    let worst = errs.iter().fold(horth.abs(), |a, &b| a.max(b));
    Ok(CheckResult {
        name: "orthogonality geometry".into(),
        passed: worst <= 1e-12,
        cases: 4,
        worst,
        tolerance: 1e-12,
    })
}

fn residual_check(config: &SelfcheckConfig) -> Result<CheckResult> {
    let cases = config.cases.min(10);
    let mut worst = 0.0f64;
    for i in 0..cases {
        let cfg = ModelConfig {
            pair_slots: 4,
            hidden: 16,
            ffn_hidden: 32,
            visual_tokens: 8,
            seed: config.seed.wrapping_add(i as u64),
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg)?;
        let out = model_forward(&cfg, &params, &VisualMemory::synthesize(&cfg, cfg.seed))?;
        for (res, ant) in out.residuals.iter().zip(&out.anticipation_states) {
            let back = res.add(&out.boundary_state)?;
            for (a, b) in back.values().iter().zip(ant.values()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(CheckResult {
        name: "residual identity".into(),
        passed: worst == 0.0,
        cases,
        worst,
        tolerance: 0.0,
    })
}

/// Minimum assignment cost by enumerating injections of the smaller side.
pub fn brute_force_assignment(cost: &Mat) -> f64 {
    fn rec(cost: &Mat, transposed: bool, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let (n, m) = if transposed { (cost.cols(), cost.rows()) } else { (cost.rows(), cost.cols()) };
        if row == n {
            *best = best.min(acc);
            return;
        }
        for c in 0..m {
            if !used[c] {
                used[c] = true;
                let v = if transposed { cost.get(c, row) } else { cost.get(row, c) };
                rec(cost, transposed, row + 1, used, acc + v, best);
                used[c] = false;
            }
        }
    }
    let transposed = cost.rows() > cost.cols();
    let m = cost.rows().max(cost.cols());
    let mut best = f64::INFINITY;
    rec(cost, transposed, 0, &mut vec![false; m], 0.0, &mut best);
    best
}

fn hungarian_check(config: &SelfcheckConfig) -> Result<CheckResult> {
    let mut rng = SeededRng::new(config.seed ^ 0x4a7);
    let mut worst = 0.0f64;
    for _ in 0..config.cases {
        let (r, c) = (1 + rng.below(6), 1 + rng.below(6));
        let cost = Mat::new(r, c, (0..r * c).map(|_| rng.uniform_range(0.0, 10.0)).collect())?;
        let a = hungarian(&cost)?;
        worst = worst.max((a.total_cost(&cost) - brute_force_assignment(&cost)).abs());
    }
    Ok(CheckResult {
        name: "assignment optimality".into(),
        passed: worst <= 1e-9,
        cases: config.cases,
        worst,
        tolerance: 1e-9,
    })
}

/// Runs every check. Errors only on internal failures, not on failed checks.
pub fn run_selfcheck(config: &SelfcheckConfig) -> Result<Vec<CheckResult>> {
    Ok(vec![
        focal_check(config)?,
        orth_check(config, "task orthogonality gradient", task_orthogonality, |g| g.task)?,
        orth_check(config, "horizon orthogonality gradient", horizon_orthogonality, |g| g.horizon)?,
        schedule_check()?,
        geometry_check()?,
        residual_check(config)?,
        hungarian_check(config)?,
    ])
}

/// Fixed-width pass/fail table.
pub fn format_results(results: &[CheckResult]) -> String {
    let mut s = format!("{:<34} {:>6} {:>6} {:>12} {:>10}\n", "check", "status", "cases", "worst", "tol");
    for r in results {
        s.push_str(&format!(
            "{:<34} {:>6} {:>6} {:>12.3e} {:>10.1e}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.cases,
            r.worst,
            r.tolerance
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let results = run_selfcheck(&SelfcheckConfig { seed: 7, cases: 30, ..Default::default() }).unwrap();
        assert_eq!(results.len(), 7);
        for r in &results {
            assert!(r.passed, "{r:?}");
        }
        assert!(format_results(&results).lines().count() == 8);
    }

    #[test]
    fn fd_of_quadratic() {
        let g = fd_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn brute_force_small() {
        let m = Mat::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]]).unwrap();
        assert_eq!(brute_force_assignment(&m), 3.0);
        assert_eq!(brute_force_assignment(&m.transpose()), 3.0);
    }
}
