//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use hypnoeval::consensus::{consensus_hypnogram, probabilistic_consensus, soft_agreements, soft_consensus, ConsensusMode};
use hypnoeval::disagreement::{epoch_features, fit_logistic, loro_auc, roc_auc, shannon_entropy, FeatureSet, LogisticOptions, RecordingFeatures};
use hypnoeval::ensemble::soft_vote;
use hypnoeval::gamlss::{expected_value, load_gamlss_table, CovariateProfile};
use hypnoeval::io::{parse_hypnodensity_csv, parse_hypnogram_csv, write_hypnodensity_csv, write_hypnogram_csv};
use hypnoeval::markers::{derive_markers, RateDenominator};
use hypnoeval::metrics::{acs, confusion, summarize, AbsentClass};
use hypnoeval::stats::{holm_adjust, wilcoxon_one_sided, Alternative};
use hypnoeval::{Hypnodensity, Hypnogram, ProbVec, Stage};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_row(rng: &mut ChaCha8Rng) -> ProbVec {
    let mut row = [0.0; 5];
    // Sparse rows exercise exact zeros.
    let support = rng.gen_range(1..=5);
    let mut idx = [0, 1, 2, 3, 4];
    idx.shuffle(rng);
    for &c in &idx[..support] {
        row[c] = -rng.gen_range(1e-12f64..1.0).ln();
    }
    let s: f64 = row.iter().sum();
    row.map(|x| x / s)
}

fn random_density(rng: &mut ChaCha8Rng, t: usize) -> Hypnodensity {
    Hypnodensity::new((0..t).map(|_| random_row(rng)).collect(), 30.0).unwrap()
}

fn random_stage(rng: &mut ChaCha8Rng, mask_rate: f64) -> Stage {
    if rng.gen_bool(mask_rate) {
        Stage::Mask
    } else {
        Stage::SCORED[rng.gen_range(0..5)]
    }
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/model_e_coefficients.csv");
    let specs = load_gamlss_table(&std::fs::read_to_string(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let baseline = CovariateProfile::new(false, 0.0, 0.0).unwrap();
    let loaded = CovariateProfile::new(true, 30.0, 10.0).unwrap();
    let cases = [("MF1", &baseline, 0.754), ("MF1", &loaded, 0.709), ("TST", &baseline, -9.05), ("TST", &loaded, -16.74)];
    let mut got = Vec::new();
    for (outcome, profile, want) in cases {
        let v = expected_value(&specs[outcome], profile).map_err(|e| e.to_string())?;
        ensure((v - want).abs() <= 0.001, || format!("{outcome}: {v} vs {want}"))?;
        got.push(format!("{v:.4}"));
    }
    Ok(format!("E[MF1] {}, {}; E[dTST] {}, {} (tol 0.001)", got[0], got[1], got[2], got[3]))
}

// ---------------------------------------------------------------- 2

const TRIPLE: [Stage; 3] = [Stage::W, Stage::N2, Stage::Rem];

/// Brute-force protocol outputs for one labelling, `labels[s][t]` in 0..3.
struct Oracle {
    z: Vec<Vec<[f64; 3]>>,
    agreement: Vec<f64>,
    soft: Vec<[f64; 3]>,
}

fn oracle(labels: &[Vec<usize>]) -> Oracle {
    let s_n = labels.len();
    let t_n = labels[0].len();
    let mut z = vec![vec![[0.0; 3]; t_n]; s_n];
    let mut agreement = vec![0.0; s_n];
    for s in 0..s_n {
        let mut credit = 0.0;
        for t in 0..t_n {
            let mut counts = [0u32; 3];
            for (o, row) in labels.iter().enumerate() {
                if o != s {
                    counts[row[t]] += 1;
                }
            }
            let m = *counts.iter().max().unwrap();
            for c in 0..3 {
                z[s][t][c] = counts[c] as f64 / m as f64;
            }
            credit += z[s][t][labels[s][t]];
        }
        agreement[s] = credit / t_n as f64;
    }
    let soft = (0..t_n)
        .map(|t| {
            let mut p = [0.0; 3];
            for row in labels {
                p[row[t]] += 1.0;
            }
            p.map(|x| x / s_n as f64)
        })
        .collect();
    Oracle { z, agreement, soft }
}

/// Majority among `members`; a tie goes to the stage whose best-ranked voter
/// (highest agreement, then name) ranks highest.
fn oracle_vote(labels: &[Vec<usize>], agreement: &[f64], members: &[usize], t: usize) -> usize {
    let mut counts = [0u32; 3];
    for &m in members {
        counts[labels[m][t]] += 1;
    }
    let top = *counts.iter().max().unwrap();
    let rank_of = |m: usize| members.iter().filter(|&&o| agreement[o] > agreement[m] || (agreement[o] == agreement[m] && o < m)).count();
    (0..3)
        .filter(|&c| counts[c] == top)
        .min_by_key(|&c| members.iter().filter(|&&m| labels[m][t] == c).map(|&m| rank_of(m)).min().unwrap())
        .unwrap()
}

fn check_labelling(labels: &[Vec<usize>]) -> Result<(), String> {
    let s_n = labels.len();
    let t_n = labels[0].len();
    let named: Vec<(String, Hypnogram)> = labels
        .iter()
        .enumerate()
        .map(|(s, row)| (format!("s{s}"), Hypnogram::from_stages(row.iter().map(|&c| TRIPLE[c]).collect()).unwrap()))
        .collect();
    let hyps: Vec<&Hypnogram> = named.iter().map(|(_, h)| h).collect();
    let o = oracle(labels);
    let fail = || format!("labelling {labels:?}");

    for s in 0..s_n {
        for t in 0..t_n {
            let z = probabilistic_consensus(&hyps, s, t).map_err(|e| e.to_string())?;
            for (c, stage) in TRIPLE.iter().enumerate() {
                ensure(z[stage.index().unwrap()] == o.z[s][t][c], fail)?;
            }
            ensure(z.iter().sum::<f64>() == o.z[s][t].iter().sum::<f64>(), fail)?;
        }
    }
    let sa = soft_agreements(&hyps).map_err(|e| e.to_string())?;
    ensure(sa == o.agreement, fail)?;
    for t in 0..t_n {
        let p = soft_consensus(&hyps, t).map_err(|e| e.to_string())?;
        for (c, stage) in TRIPLE.iter().enumerate() {
            ensure(p[stage.index().unwrap()] == o.soft[t][c], fail)?;
        }
    }
    let mut modes: Vec<(ConsensusMode, Vec<usize>)> = vec![(ConsensusMode::Set((0..s_n).collect()), (0..s_n).collect())];
    if s_n >= 3 {
        for s in 0..s_n {
            modes.push((ConsensusMode::ExcludeOne(s), (0..s_n).filter(|&i| i != s).collect()));
        }
    }
    for (mode, members) in modes {
        let h = consensus_hypnogram(&named, &mode).map_err(|e| e.to_string())?;
        for t in 0..t_n {
            ensure(h.stages()[t] == TRIPLE[oracle_vote(labels, &o.agreement, &members, t)], || format!("{mode:?} {labels:?}"))?;
        }
    }
    Ok(())
}

fn decode(mut code: u64, s_n: usize, t_n: usize) -> Vec<Vec<usize>> {
    let mut labels = vec![vec![0; t_n]; s_n];
    for row in labels.iter_mut() {
        for x in row.iter_mut() {
            *x = (code % 3) as usize;
            code /= 3;
        }
    }
    labels
}

/// Exhaustive for S*T <= 10 (3^10 labellings); the larger grid cells, up to
/// 3^30 labellings, are sampled.
const EXHAUSTIVE_CELLS: usize = 10;
const SAMPLES_PER_CELL: usize = 2_000;

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut exhaustive, mut sampled) = (0u64, 0u64);
    for s_n in 2..=5 {
        for t_n in 1..=6 {
            if s_n * t_n <= EXHAUSTIVE_CELLS {
                for code in 0..3u64.pow((s_n * t_n) as u32) {
                    check_labelling(&decode(code, s_n, t_n))?;
                    exhaustive += 1;
                }
            } else {
                for _ in 0..SAMPLES_PER_CELL {
                    let labels: Vec<Vec<usize>> = (0..s_n).map(|_| (0..t_n).map(|_| rng.gen_range(0..3)).collect()).collect();
                    check_labelling(&labels)?;
                    sampled += 1;
                }
            }
        }
    }
    Ok(format!("{exhaustive} exhaustive + {sampled} sampled labellings, exact match"))
}

// ---------------------------------------------------------------- 3

const METRIC_TOL: f64 = 1e-12;

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_err = 0.0f64;
    let mut checked = 0;
    while checked < 1000 {
        let t_n = rng.gen_range(1..=200);
        let mask_rate = rng.gen_range(0.0..0.3);
        // Few-class pairs exercise absent classes and degenerate kappa.
        let classes = rng.gen_range(1..=5);
        let draw = |rng: &mut ChaCha8Rng| if rng.gen_bool(mask_rate) { Stage::Mask } else { Stage::SCORED[rng.gen_range(0..classes)] };
        let r: Vec<Stage> = (0..t_n).map(|_| draw(&mut rng)).collect();
        let p: Vec<Stage> = (0..t_n).map(|_| draw(&mut rng)).collect();
        let pairs: Vec<(usize, usize)> = r.iter().zip(&p).filter_map(|(a, b)| Some((a.index()?, b.index()?))).collect();
        if pairs.is_empty() {
            continue;
        }
        checked += 1;
        let cm = confusion(&Hypnogram::from_stages(r).unwrap(), &Hypnogram::from_stages(p).unwrap()).map_err(|e| e.to_string())?;
        let lib = summarize(&cm, AbsentClass::Exclude).map_err(|e| e.to_string())?;

        let n = pairs.len() as f64;
        let acc = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
        let mut f1s = Vec::new();
        for c in 0..5 {
            let tp = pairs.iter().filter(|&&(a, b)| a == c && b == c).count() as f64;
            let fp = pairs.iter().filter(|&&(a, b)| a != c && b == c).count() as f64;
            let fn_ = pairs.iter().filter(|&&(a, b)| a == c && b != c).count() as f64;
            let f1 = (tp + fp + fn_ > 0.0).then(|| 2.0 * tp / (2.0 * tp + fp + fn_));
            match (f1, lib.class_f1[c]) {
                (None, None) => {}
                (Some(x), Some(y)) => max_err = max_err.max((x - y).abs()),
                _ => return Err(format!("class {c} presence differs")),
            }
            f1s.extend(f1);
        }
        let mf1 = f1s.iter().sum::<f64>() / f1s.len() as f64;
        let p_e: f64 = (0..5)
            .map(|c| pairs.iter().filter(|p| p.0 == c).count() as f64 / n * (pairs.iter().filter(|p| p.1 == c).count() as f64 / n))
            .sum();
        let kappa = (p_e < 1.0).then(|| (acc - p_e) / (1.0 - p_e));
        max_err = max_err.max((acc - lib.accuracy).abs()).max((mf1 - lib.macro_f1).abs());
        match (kappa, lib.kappa) {
            (None, None) => {}
            (Some(x), Some(y)) => max_err = max_err.max((x - y).abs()),
            _ => return Err(format!("kappa definedness differs: {kappa:?} vs {:?}", lib.kappa)),
        }

        let a = random_density(&mut rng, t_n);
        let b = random_density(&mut rng, t_n);
        let mut total = 0.0;
        for t in 0..t_n {
            let (x, y) = (a.row(t), b.row(t));
            let mut dot = 0.0;
            let (mut nx, mut ny) = (0.0, 0.0);
            for c in 0..5 {
                dot += x[c] * y[c];
                nx += x[c] * x[c];
                ny += y[c] * y[c];
            }
            total += dot / (nx.sqrt() * ny.sqrt());
        }
        max_err = max_err.max((total / t_n as f64 - acs(&a, &b).map_err(|e| e.to_string())?).abs());
    }
    ensure(max_err <= METRIC_TOL, || format!("max deviation {max_err:e} > {METRIC_TOL:e}"))?;
    Ok(format!("1000 pairs, max deviation {max_err:.1e} (tol {METRIC_TOL:e})"))
}

// ---------------------------------------------------------------- 4

const ENSEMBLE_TOL: f64 = 1e-12;

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_perm = 0.0f64;
    let mut max_sum = 0.0f64;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=8);
        let t_n = rng.gen_range(1..=100);
        let members: Vec<Hypnodensity> = (0..m).map(|_| random_density(&mut rng, t_n)).collect();
        let refs: Vec<&Hypnodensity> = members.iter().collect();
        let out = soft_vote(&refs).map_err(|e| e.to_string())?;

        let copies = vec![&members[0]; m];
        ensure(soft_vote(&copies).map_err(|e| e.to_string())? == members[0], || "soft_vote of identical members changed them".into())?;

        let mut shuffled = refs.clone();
        shuffled.shuffle(&mut rng);
        let permuted = soft_vote(&shuffled).map_err(|e| e.to_string())?;
        for (r1, r2) in out.rows().iter().zip(permuted.rows()) {
            for c in 0..5 {
                max_perm = max_perm.max((r1[c] - r2[c]).abs());
            }
        }
        for row in out.rows() {
            ensure(row.iter().all(|&p| (0.0..=1.0).contains(&p)), || format!("row {row:?} leaves [0,1]"))?;
            max_sum = max_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        ensure(out.len() == t_n && out.epoch_duration_s() == 30.0, || "shape changed".into())?;
    }
    ensure(max_perm <= ENSEMBLE_TOL, || format!("permutation deviation {max_perm:e}"))?;
    ensure(max_sum <= ENSEMBLE_TOL, || format!("row-sum deviation {max_sum:e}"))?;
    Ok(format!("1000 sets; exact idempotence, permutation dev {max_perm:.1e}, row-sum dev {max_sum:.1e} (tol {ENSEMBLE_TOL:e})"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Check {
    let ln5 = 5f64.ln();
    for c in 0..5 {
        let mut p = [0.0; 5];
        p[c] = 1.0;
        ensure(shannon_entropy(&p) == 0.0, || format!("one-hot {c} has entropy {}", shannon_entropy(&p)))?;
    }
    let u = shannon_entropy(&[0.2; 5]);
    ensure((u - ln5).abs() <= 1e-12, || format!("uniform entropy {u}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hi = 0.0f64;
    for _ in 0..10_000 {
        let h = shannon_entropy(&random_row(&mut rng));
        ensure((0.0..=ln5).contains(&h), || format!("entropy {h} outside [0, ln 5]"))?;
        hi = hi.max(h);
    }
    Ok(format!("one-hot 0, uniform {u:.12}, 10^4 rows in [0, {hi:.4}]"))
}

// ---------------------------------------------------------------- 6

const BRANCH_TOL: f64 = 0.01;

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let shift = rng.gen_range(-1.0..1.0);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x - shift * 0.3 + rng.gen_range(-0.5..0.5)).collect();
        let r = wilcoxon_one_sided(&a, &b, Alternative::Greater).map_err(|e| e.to_string())?;
        ensure(r.exact && r.n_effective == 12, || "n = 12 did not take the exact branch".into())?;
        let normal = 0.5 * erfc(r.z / std::f64::consts::SQRT_2);
        worst = worst.max((r.p_raw - normal).abs());
    }
    ensure(worst <= BRANCH_TOL, || format!("exact vs normal deviation {worst}"))?;
    let holm = holm_adjust(&[0.01, 0.04, 0.03]);
    let want = [0.03, 0.06, 0.06];
    ensure(holm.iter().zip(want).all(|(g, w)| (g - w).abs() < 1e-12), || format!("Holm {holm:?}"))?;
    Ok(format!("500 samples at n = 12, max |p_exact - p_normal| {worst:.4} (tol {BRANCH_TOL}); Holm {holm:?}"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut max_err = 0.0f64;
    let mut sets = 0;
    while sets < 200 {
        let n = rng.gen_range(2..=300);
        let levels = rng.gen_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let pos: Vec<f64> = scores.iter().zip(&labels).filter(|p| *p.1).map(|p| *p.0).collect();
        let neg: Vec<f64> = scores.iter().zip(&labels).filter(|p| !*p.1).map(|p| *p.0).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        sets += 1;
        let mut wins = 0.0;
        for p in &pos {
            for q in &neg {
                wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
            }
        }
        let brute = wins / (pos.len() * neg.len()) as f64;
        max_err = max_err.max((brute - roc_auc(&scores, &labels).map_err(|e| e.to_string())?).abs());
    }
    ensure(max_err <= 1e-12, || format!("max deviation {max_err:e}"))?;
    Ok(format!("200 tied score sets, max deviation {max_err:.1e} (tol 1e-12)"))
}

// ---------------------------------------------------------------- 8

const NLL_TOL: f64 = 1e-6;

/// BFGS with Armijo backtracking on the standardized problem.
fn bfgs_objective(rows: &[Vec<f64>], labels: &[bool], lambda: f64) -> f64 {
    let n = rows.len() as f64;
    let f = rows[0].len();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..f {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        cols.push(col.iter().map(|x| (x - mean) / sd).collect());
    }
    let y: Vec<f64> = labels.iter().map(|&b| b as u8 as f64).collect();
    let value = |beta: &[f64]| {
        let mut nll = 0.0;
        for i in 0..rows.len() {
            let eta = beta[0] + (0..f).map(|j| beta[j + 1] * cols[j][i]).sum::<f64>();
            nll += if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() } - y[i] * eta;
        }
        nll / n + 0.5 * lambda * beta[1..].iter().map(|b| b * b).sum::<f64>()
    };
    let grad = |beta: &[f64]| {
        let mut g = vec![0.0; f + 1];
        for i in 0..rows.len() {
            let eta = beta[0] + (0..f).map(|j| beta[j + 1] * cols[j][i]).sum::<f64>();
            let r = 1.0 / (1.0 + (-eta).exp()) - y[i];
            g[0] += r / n;
            for j in 0..f {
                g[j + 1] += r * cols[j][i] / n;
            }
        }
        for j in 0..f {
            g[j + 1] += lambda * beta[j + 1];
        }
        g
    };
    let k = f + 1;
    let mut beta = vec![0.0; k];
    let mut v = value(&beta);
    let mut g = grad(&beta);
    // Inverse Hessian approximation.
    let mut h: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _ in 0..10_000 {
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-10 {
            break;
        }
        let dir: Vec<f64> = (0..k).map(|i| -(0..k).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
        let slope: f64 = dir.iter().zip(&g).map(|(d, x)| d * x).sum();
        let mut step = 1.0;
        let accepted = loop {
            let next: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + step * d).collect();
            let nv = value(&next);
            if nv <= v + 1e-4 * step * slope {
                break Some((next, nv));
            }
            step *= 0.5;
            if step < 1e-14 {
                break None;
            }
        };
        let Some((next, nv)) = accepted else { break };
        if nv >= v {
            break;
        }
        let g_next = grad(&next);
        let sv: Vec<f64> = (0..k).map(|i| next[i] - beta[i]).collect();
        let yv: Vec<f64> = (0..k).map(|i| g_next[i] - g[i]).collect();
        let sy: f64 = sv.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-300 {
            let hy: Vec<f64> = (0..k).map(|i| (0..k).map(|j| h[i][j] * yv[j]).sum()).collect();
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..k {
                for j in 0..k {
                    h[i][j] += (sy + yhy) * sv[i] * sv[j] / (sy * sy) - (hy[i] * sv[j] + sv[i] * hy[j]) / sy;
                }
            }
        }
        beta = next;
        v = nv;
        g = g_next;
    }
    v
}

fn synthetic_recording(rng: &mut ChaCha8Rng, id: &str, epochs: usize) -> RecordingFeatures {
    let mut members: Vec<Vec<ProbVec>> = vec![Vec::new(); 3];
    let mut labels = Vec::new();
    for _ in 0..epochs {
        let disagree = rng.gen_bool(0.3);
        // Disagreement epochs carry less confident, hence higher-entropy, ensembles.
        let q: f64 = if disagree { rng.gen_range(0.5..0.8) } else { rng.gen_range(0.7..0.99) };
        let c = rng.gen_range(0..5);
        for m in members.iter_mut() {
            let qm = (q + rng.gen_range(-0.03..0.03)).clamp(0.21, 1.0);
            let mut row = [(1.0 - qm) / 4.0; 5];
            row[c] = qm;
            m.push(row);
        }
        labels.push(disagree);
    }
    let densities: Vec<Hypnodensity> = members.into_iter().map(|rows| Hypnodensity::new(rows, 30.0).unwrap()).collect();
    let refs: Vec<&Hypnodensity> = densities.iter().collect();
    RecordingFeatures { recording_id: id.into(), features: epoch_features(&refs).unwrap(), labels }
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lambda = LogisticOptions::default().lambda;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(50..=200);
        let w = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
        let b = rng.gen_range(-0.5..0.5);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(0.0..10.0)]).collect();
        let labels: Vec<bool> = rows
            .iter()
            .map(|r| {
                let eta = b + w[0] * r[0] + w[1] * (r[1] - 5.0) / 3.0;
                rng.gen_bool(1.0 / (1.0 + (-eta).exp()))
            })
            .collect();
        if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
            continue;
        }
        let model = fit_logistic(&rows, &labels, &LogisticOptions::default()).map_err(|e| e.to_string())?;
        let ours = model.objective(&rows, &labels, lambda).map_err(|e| e.to_string())?;
        let reference = bfgs_objective(&rows, &labels, lambda);
        worst = worst.max((ours - reference).abs());
    }
    ensure(worst <= NLL_TOL, || format!("objective gap {worst:e}"))?;

    let corpus: Vec<RecordingFeatures> = (0..10).map(|i| synthetic_recording(&mut rng, &format!("r{i}"), 300)).collect();
    let informative = loro_auc(&corpus, FeatureSet::Entropy, lambda).map_err(|e| e.to_string())?.mean_auc;
    ensure(informative > 0.9, || format!("informative LORO AUC {informative}"))?;
    let mut controls = Vec::new();
    for _ in 0..5 {
        let mut shuffled = corpus.clone();
        for r in shuffled.iter_mut() {
            r.labels.shuffle(&mut rng);
        }
        let auc = loro_auc(&shuffled, FeatureSet::Entropy, lambda).map_err(|e| e.to_string())?.mean_auc;
        ensure((auc - 0.5).abs() <= 0.05, || format!("shuffled control AUC {auc}"))?;
        controls.push(format!("{auc:.3}"));
    }
    Ok(format!(
        "objective gap {worst:.1e} (tol {NLL_TOL:e}); LORO AUC {informative:.3} > 0.9; shuffled {} within 0.5 +- 0.05",
        controls.join(", ")
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Check {
    use Stage::*;
    let night = Hypnogram::from_stages(vec![W, W, N1, N2, N2, N3, Rem, W, N2, W]).unwrap();
    let m = derive_markers(&night, RateDenominator::Tst).map_err(|e| e.to_string())?;
    let mut padded = night.stages().to_vec();
    padded.extend([Mask; 7]);
    let mp = derive_markers(&Hypnogram::from_stages(padded).unwrap(), RateDenominator::Tst).map_err(|e| e.to_string())?;
    ensure(m == mp, || "trailing MASK changed the markers".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let t_n = rng.gen_range(1..=120);
        let mut stages: Vec<Stage> = (0..t_n).map(|_| random_stage(&mut rng, 0.1)).collect();
        let base = derive_markers(&Hypnogram::from_stages(stages.clone()).unwrap(), RateDenominator::Tst);
        stages.extend(std::iter::repeat_n(Mask, rng.gen_range(1..20)));
        let ext = derive_markers(&Hypnogram::from_stages(stages).unwrap(), RateDenominator::Tst);
        ensure(format!("{base:?}") == format!("{ext:?}"), || "trailing MASK changed random markers".into())?;
    }
    let got = format!(
        "TST {}, WASO {}, REML {:?}, AwH {:.2}, TrH {:.2}",
        m.tst_min, m.waso_min, m.reml_min, m.awh_per_hour, m.trh_per_hour
    );
    let expected = [(m.tst_min, 3.5, 1e-9), (m.waso_min, 0.5, 1e-9), (m.reml_min.unwrap_or(f64::NAN), 2.0, 1e-9), (m.awh_per_hour, 34.29, 0.01), (m.trh_per_hour, 137.14, 0.01)];
    ensure(expected.iter().all(|(g, w, tol)| (g - w).abs() <= *tol), || {
        format!("{got}; expected TST 3.5, WASO 0.5, REML 2.0, AwH 34.29, TrH 137.14 (MASK invariance holds)")
    })?;
    Ok(format!("{got}; MASK invariance holds"))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..500 {
        let t_n = rng.gen_range(1..=300);
        let dur = [30.0, 20.0, 4.0][i % 3];
        let h = Hypnogram::new((0..t_n).map(|_| random_stage(&mut rng, 0.1)).collect(), dur).unwrap();
        let first = write_hypnogram_csv(&h);
        let back = parse_hypnogram_csv(&first, dur).map_err(|e| e.to_string())?;
        ensure(back == h && write_hypnogram_csv(&back) == first, || format!("hypnogram {i} did not round-trip"))?;

        let mut rows: Vec<ProbVec> = (0..t_n).map(|_| random_row(&mut rng)).collect();
        if i % 5 == 0 {
            rows[0] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0];
        }
        let d = Hypnodensity::new(rows, dur).unwrap();
        let first = write_hypnodensity_csv(&d);
        let back = parse_hypnodensity_csv(&first, dur).map_err(|e| e.to_string())?;
        ensure(write_hypnodensity_csv(&back) == first, || format!("hypnodensity {i} did not round-trip"))?;
    }
    Ok("500 hypnograms and 500 hypnodensities byte-identical on re-serialization".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("GAMLSS worked examples", criterion_1),
        ("consensus protocol oracle", criterion_2),
        ("metric oracle", criterion_3),
        ("ensemble invariants", criterion_4),
        ("entropy bounds", criterion_5),
        ("Wilcoxon branch agreement and Holm", criterion_6),
        ("ROC-AUC oracle", criterion_7),
        ("logistic fit oracle and LORO", criterion_8),
        ("markers worked example", criterion_9),
        ("I/O round trip", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
