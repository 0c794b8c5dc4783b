//! The 3D metric against a from-scratch reference evaluator: its own
//! interpolation, exhaustive-permutation assignment and aggregation.

use bevlane::eval::{eval3d, match_lanes, EvalReport, MatchConfig};
use bevlane::geometry::GroundPoint;
use bevlane::lane::{Lane3D, LaneCategory};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ── Reference implementation (kept deliberately naive) ──────────────────

fn ref_interp(lane: &Lane3D, y: f64) -> (f64, f64, bool) {
    // Linear interpolation with end extension; visibility from the span
    // of visible points.
    let mut pts: Vec<(f64, f64, f64, bool)> = lane
        .points
        .iter()
        .zip(&lane.visibility)
        .map(|(p, &v)| (p.y, p.x, p.z, v))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let vis_lo = pts.iter().filter(|p| p.3).map(|p| p.0).fold(f64::INFINITY, f64::min);
    let vis_hi = pts.iter().filter(|p| p.3).map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let vis = y >= vis_lo && y <= vis_hi;
    let seg = if y <= pts[0].0 {
        (pts[0], pts[1])
    } else if y >= pts[pts.len() - 1].0 {
        (pts[pts.len() - 2], pts[pts.len() - 1])
    } else {
        let mut i = 0;
        while pts[i + 1].0 < y {
            i += 1;
        }
        (pts[i], pts[i + 1])
    };
    if y == seg.0 .0 {
        return (seg.0 .1, seg.0 .2, vis);
    }
    if y == seg.1 .0 {
        return (seg.1 .1, seg.1 .2, vis);
    }
    let t = (y - seg.0 .0) / (seg.1 .0 - seg.0 .0);
    (seg.0 .1 + t * (seg.1 .1 - seg.0 .1), seg.0 .2 + t * (seg.1 .2 - seg.0 .2), vis)
}

struct RefAccum {
    tp: u64,
    fp: u64,
    fn_: u64,
    x_near: Vec<f64>,
    x_far: Vec<f64>,
    z_near: Vec<f64>,
    z_far: Vec<f64>,
    cat_hits: u64,
}

fn ref_frame(preds: &[Lane3D], gts: &[Lane3D], cfg: &MatchConfig, acc: &mut RefAccum) {
    let np = preds.len();
    let ng = gts.len();
    // Pairwise per-slot distances.
    let dist = |p: &Lane3D, g: &Lane3D| -> (Vec<f64>, Vec<bool>) {
        let mut d = Vec::new();
        let mut c = Vec::new();
        for &y in &cfg.y_samples {
            let (gx, gz, gvis) = ref_interp(g, y);
            c.push(gvis);
            if !gvis {
                d.push(0.0);
                continue;
            }
            let (px, pz, pvis) = ref_interp(p, y);
            d.push(if pvis { ((px - gx).powi(2) + (pz - gz).powi(2)).sqrt() } else { cfg.max_dist });
        }
        (d, c)
    };
    let cost = |d: &(Vec<f64>, Vec<bool>)| -> f64 {
        let n = d.1.iter().filter(|&&c| c).count();
        if n == 0 {
            return cfg.max_dist;
        }
        d.0.iter().zip(&d.1).filter(|(_, &c)| c).map(|(x, _)| x.min(cfg.max_dist)).sum::<f64>()
            / n as f64
    };
    let table: Vec<Vec<(Vec<f64>, Vec<bool>)>> =
        preds.iter().map(|p| gts.iter().map(|g| dist(p, g)).collect()).collect();

    // Exhaustive assignment over the smaller side.
    let k = np.min(ng);
    let mut best_total = f64::INFINITY;
    let mut best: Vec<(usize, usize)> = Vec::new();
    if k > 0 {
        // All injections of preds into gts (or the transpose).
        let (rows, cols, swapped) = if np <= ng { (np, ng, false) } else { (ng, np, true) };
        let mut chosen = vec![usize::MAX; rows];
        let mut used = vec![false; cols];
        fn rec(
            r: usize,
            rows: usize,
            cols: usize,
            chosen: &mut Vec<usize>,
            used: &mut Vec<bool>,
            visit: &mut dyn FnMut(&[usize]),
        ) {
            if r == rows {
                visit(chosen);
                return;
            }
            for c in 0..cols {
                if !used[c] {
                    used[c] = true;
                    chosen[r] = c;
                    rec(r + 1, rows, cols, chosen, used, visit);
                    used[c] = false;
                }
            }
        }
        rec(0, rows, cols, &mut chosen, &mut used, &mut |assign: &[usize]| {
            let mut total = 0.0;
            let mut pairs = Vec::new();
            for (r, &c) in assign.iter().enumerate() {
                let (pi, gi) = if swapped { (c, r) } else { (r, c) };
                total += cost(&table[pi][gi]);
                pairs.push((pi, gi));
            }
            if total < best_total {
                best_total = total;
                best = pairs;
            }
        });
    }

    let mut matched_preds = vec![false; np];
    let mut matched_gts = vec![false; ng];
    for &(pi, gi) in &best {
        let (d, c) = &table[pi][gi];
        let covered = c.iter().filter(|&&x| x).count();
        let hits = d.iter().zip(c).filter(|(x, &cc)| cc && **x < cfg.max_dist).count();
        if covered > 0 && hits as f64 >= cfg.coverage_frac * covered as f64 {
            matched_preds[pi] = true;
            matched_gts[gi] = true;
            acc.tp += 1;
            if preds[pi].category == gts[gi].category {
                acc.cat_hits += 1;
            }
            for (k, &y) in cfg.y_samples.iter().enumerate() {
                if !c[k] {
                    continue;
                }
                let (px, pz, pvis) = ref_interp(&preds[pi], y);
                let (gx, gz, _) = ref_interp(&gts[gi], y);
                if !pvis {
                    continue;
                }
                if y < cfg.near_far_split {
                    acc.x_near.push((px - gx).abs());
                    acc.z_near.push((pz - gz).abs());
                } else {
                    acc.x_far.push((px - gx).abs());
                    acc.z_far.push((pz - gz).abs());
                }
            }
        }
    }
    acc.fp += matched_preds.iter().filter(|&&m| !m).count() as u64;
    acc.fn_ += matched_gts.iter().filter(|&&m| !m).count() as u64;
}

fn ref_eval(preds: &[Vec<Lane3D>], gts: &[Vec<Lane3D>], cfg: &MatchConfig) -> EvalReport {
    let mut acc = RefAccum {
        tp: 0,
        fp: 0,
        fn_: 0,
        x_near: vec![],
        x_far: vec![],
        z_near: vec![],
        z_far: vec![],
        cat_hits: 0,
    };
    for (p, g) in preds.iter().zip(gts) {
        ref_frame(p, g, cfg, &mut acc);
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let precision = if acc.tp + acc.fp > 0 { acc.tp as f64 / (acc.tp + acc.fp) as f64 } else { 0.0 };
    let recall = if acc.tp + acc.fn_ > 0 { acc.tp as f64 / (acc.tp + acc.fn_) as f64 } else { 0.0 };
    EvalReport {
        f_score: if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        },
        precision,
        recall,
        x_err_near: mean(&acc.x_near),
        x_err_far: mean(&acc.x_far),
        z_err_near: mean(&acc.z_near),
        z_err_far: mean(&acc.z_far),
        category_accuracy: if acc.tp > 0 { acc.cat_hits as f64 / acc.tp as f64 } else { 0.0 },
        true_positives: acc.tp,
        false_positives: acc.fp,
        false_negatives: acc.fn_,
    }
}

// ── Random scene generation ──────────────────────────────────────────────

fn random_lane(rng: &mut ChaCha8Rng) -> Lane3D {
    let x0 = rng.random_range(-9.0..9.0);
    let slope = rng.random_range(-0.08..0.08);
    let z0 = rng.random_range(-0.3..0.3);
    let y_start = rng.random_range(1.0..20.0);
    let y_end = rng.random_range(45.0..110.0);
    let n = rng.random_range(4..12);
    let points: Vec<GroundPoint> = (0..n)
        .map(|k| {
            let y = y_start + (y_end - y_start) * k as f64 / (n - 1) as f64;
            GroundPoint::new(x0 + slope * y, y, z0 + 0.002 * y)
        })
        .collect();
    let visibility = (0..n).map(|k| k != 0 || rng.random_bool(0.8)).collect();
    Lane3D {
        points,
        visibility,
        category: LaneCategory::from_code(rng.random_range(0..14)).unwrap(),
        track_id: 0,
        importance_slot: None,
    }
}

fn perturb(lane: &Lane3D, rng: &mut ChaCha8Rng) -> Lane3D {
    let mut out = lane.clone();
    let shift = rng.random_range(-2.0..2.0);
    for p in out.points.iter_mut() {
        p.x += shift + rng.random_range(-0.2..0.2);
        p.z += rng.random_range(-0.1..0.1);
    }
    if rng.random_bool(0.2) {
        out.category = LaneCategory::from_code(rng.random_range(0..14)).unwrap();
    }
    out
}

#[test]
fn matches_reference_on_randomized_suite() {
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for _ in 0..50 {
        let n_gt = rng.random_range(0..5usize);
        let gt_frame: Vec<Lane3D> = (0..n_gt).map(|_| random_lane(&mut rng)).collect();
        let mut pred_frame: Vec<Lane3D> = Vec::new();
        for l in &gt_frame {
            if rng.random_bool(0.85) {
                pred_frame.push(perturb(l, &mut rng));
            }
        }
        for _ in 0..rng.random_range(0..2usize) {
            pred_frame.push(random_lane(&mut rng));
        }
        gts.push(gt_frame);
        preds.push(pred_frame);
    }
    let got = eval3d(&preds, &gts, &cfg).unwrap();
    let want = ref_eval(&preds, &gts, &cfg);

    assert_eq!(got.true_positives, want.true_positives);
    assert_eq!(got.false_positives, want.false_positives);
    assert_eq!(got.false_negatives, want.false_negatives);
    for (a, b, name) in [
        (got.f_score, want.f_score, "f"),
        (got.precision, want.precision, "p"),
        (got.recall, want.recall, "r"),
        (got.x_err_near, want.x_err_near, "xn"),
        (got.x_err_far, want.x_err_far, "xf"),
        (got.z_err_near, want.z_err_near, "zn"),
        (got.z_err_far, want.z_err_far, "zf"),
        (got.category_accuracy, want.category_accuracy, "cat"),
    ] {
        assert!((a - b).abs() < 1e-12, "{name}: {a} vs {b}");
    }
}

#[test]
fn optimal_matching_equals_permutation_oracle_on_frames() {
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..60 {
        let n = rng.random_range(1..=6usize);
        let gts: Vec<Lane3D> = (0..n).map(|_| random_lane(&mut rng)).collect();
        let preds: Vec<Lane3D> = gts.iter().map(|l| perturb(l, &mut rng)).collect();
        let m = match_lanes(&preds, &gts, &cfg);
        let mut acc = RefAccum {
            tp: 0,
            fp: 0,
            fn_: 0,
            x_near: vec![],
            x_far: vec![],
            z_near: vec![],
            z_far: vec![],
            cat_hits: 0,
        };
        ref_frame(&preds, &gts, &cfg, &mut acc);
        assert_eq!(m.tp_pairs.len() as u64, acc.tp);
        assert_eq!(m.false_positives, acc.fp);
        assert_eq!(m.false_negatives, acc.fn_);
    }
}

#[test]
fn self_evaluation_perfect_on_random_sets() {
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.random_range(1..6usize);
        let frame: Vec<Lane3D> = (0..n).map(|_| random_lane(&mut rng)).collect();
        let r = eval3d(&[frame.clone()], &[frame], &cfg).unwrap();
        assert_eq!(r.f_score, 1.0);
        assert_eq!(r.x_err_near, 0.0);
        assert_eq!(r.x_err_far, 0.0);
        assert_eq!(r.z_err_near, 0.0);
        assert_eq!(r.z_err_far, 0.0);
        assert_eq!(r.category_accuracy, 1.0);
    }
}
