use std::path::Path;

use bevlane::anchor::build_anchor_set;
use bevlane::eval;
use bevlane::geometry::BevGridSpec;
use bevlane::gradcheck::{grad_check_resampling, GradOp};
use bevlane::gt::{generate_labels, synth_scene, SceneSpec, SynthScene};
use bevlane::heads::{prediction_heads, HeadWeights};
use bevlane::io::{self, RunConfig};
use bevlane::lane::FrameRecord;
use bevlane::tensor::Tensor;
use bevlane::transformer::{forward_pyramid, FeaturePyramid, TransformerParams};

use crate::{CliError, CliResult};

fn scene_preset(name: &str, seed: u64) -> Result<SceneSpec, CliError> {
    match name {
        "flat" => Ok(SceneSpec::flat_demo(seed)),
        "rolling" => Ok(SceneSpec::rolling_demo(seed)),
        "graded" => Ok(SceneSpec::graded_demo(seed, 0.05, 3.5)),
        "uturn" => Ok(SceneSpec::uturn_demo(seed)),
        other => Err(CliError::Run(format!(
            "unknown scene preset {other:?} (flat, rolling, graded, uturn)"
        ))),
    }
}

fn annotation_frames(scene: &SynthScene) -> Vec<FrameRecord> {
    scene
        .frames
        .iter()
        .map(|f| FrameRecord {
            camera: f.camera,
            lanes_3d: Vec::new(),
            lanes_2d: f.lanes_2d.clone(),
            scene_tags: Default::default(),
            cipo: Vec::new(),
            extra: Default::default(),
        })
        .collect()
}

fn truth_frames(scene: &SynthScene) -> Vec<FrameRecord> {
    scene
        .frames
        .iter()
        .zip(&scene.truth)
        .map(|(f, truth)| FrameRecord {
            camera: f.camera,
            lanes_3d: truth.clone(),
            lanes_2d: Vec::new(),
            scene_tags: Default::default(),
            cipo: Vec::new(),
            extra: Default::default(),
        })
        .collect()
}

pub(crate) fn synth(_cfg: &RunConfig, seed: u64, scene_name: &str, out: &Path) -> CliResult {
    let mut spec = scene_preset(scene_name, seed)?;
    spec.seed = seed;
    let scene = synth_scene(&spec);

    std::fs::create_dir_all(out)?;
    let mut spec_json = serde_json::to_string_pretty(&spec)?;
    spec_json.push('\n');
    std::fs::write(out.join("scene.json"), spec_json)?;
    io::write_frame_set_file(&annotation_frames(&scene), &out.join("frames.json"))?;
    io::write_frame_set_file(&truth_frames(&scene), &out.join("truth.json"))?;
    let lidar: Vec<_> = scene.frames.iter().map(|f| &f.lidar).collect();
    let mut lidar_json = serde_json::to_string_pretty(&lidar)?;
    lidar_json.push('\n');
    std::fs::write(out.join("lidar.json"), lidar_json)?;

    let n_points: usize = scene.frames.iter().map(|f| f.lidar.points.len()).sum();
    println!(
        "synth: scene={scene_name} seed={seed} frames={} lanes={} lidar_points={}",
        scene.frames.len(),
        spec.lanes.len(),
        n_points
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub(crate) fn gen_gt(cfg: &RunConfig, scene_path: &Path, out: &Path) -> CliResult {
    let text = std::fs::read_to_string(scene_path)?;
    let spec: SceneSpec = serde_json::from_str(&text)?;
    let scene = synth_scene(&spec);
    let labels = generate_labels(&scene.frames, &cfg.gt, &spec.grid, spec.img)?;

    std::fs::create_dir_all(out)?;
    let frames: Vec<FrameRecord> = scene
        .frames
        .iter()
        .zip(&labels.frames)
        .map(|(f, lanes)| FrameRecord {
            camera: f.camera,
            lanes_3d: lanes.clone(),
            lanes_2d: Vec::new(),
            scene_tags: Default::default(),
            cipo: Vec::new(),
            extra: Default::default(),
        })
        .collect();
    io::write_frame_set_file(&frames, &out.join("labels.json"))?;
    let mut drop_json = serde_json::to_string_pretty(&labels.dropped)?;
    drop_json.push('\n');
    std::fs::write(out.join("dropped.json"), drop_json)?;

    let n_lanes: usize = labels.frames.iter().map(|f| f.len()).sum();
    println!(
        "gen-gt: frames={} lanes={} dropped={}",
        labels.frames.len(),
        n_lanes,
        labels.dropped.len()
    );
    for note in &labels.dropped {
        eprintln!("dropped frame {} track {}: {}", note.frame, note.track_id, note.reason);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn write_report(report: &eval::EvalReport, out: Option<&Path>) -> CliResult {
    print!("{}", report.to_table());
    if let Some(path) = out {
        let mut json = serde_json::to_string_pretty(report)?;
        json.push('\n');
        std::fs::write(path, json)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// Keep only aligned frame pairs whose ground-truth scene tag matches
// "key=value" (key one of weather, scene, hours).
fn apply_tag_filter(
    preds: &mut Vec<FrameRecord>,
    gts: &mut Vec<FrameRecord>,
    tag: &str,
) -> CliResult {
    if preds.len() != gts.len() {
        return Err(CliError::Run(format!(
            "frame count mismatch before tag filtering: {} vs {}",
            preds.len(),
            gts.len()
        )));
    }
    let (key, value) = tag
        .split_once('=')
        .ok_or_else(|| CliError::Run(format!("tag filter {tag:?} is not key=value")))?;
    let keep: Vec<bool> = gts
        .iter()
        .map(|f| {
            let got = match key {
                "weather" => serde_json::to_value(f.scene_tags.weather),
                "scene" => serde_json::to_value(f.scene_tags.scene),
                "hours" => serde_json::to_value(f.scene_tags.hours),
                _ => return Err(CliError::Run(format!(
                    "unknown tag key {key:?} (weather, scene, hours)"
                ))),
            };
            Ok(got? == serde_json::Value::String(value.to_string()))
        })
        .collect::<Result<_, CliError>>()?;
    let filter = |frames: &mut Vec<FrameRecord>| {
        let mut it = keep.iter();
        frames.retain(|_| *it.next().unwrap_or(&false));
    };
    filter(preds);
    filter(gts);
    Ok(())
}

pub(crate) fn eval3d(
    cfg: &RunConfig,
    pred: &Path,
    gt: &Path,
    max_dist: Option<f64>,
    coverage: Option<f64>,
    tag: Option<&str>,
    out: Option<&Path>,
) -> CliResult {
    let mut pred_frames = io::read_frame_set(pred)?;
    let mut gt_frames = io::read_frame_set(gt)?;
    if let Some(tag) = tag {
        apply_tag_filter(&mut pred_frames, &mut gt_frames, tag)?;
    }
    let mut mc = cfg.match3d.clone();
    if let Some(d) = max_dist {
        mc.max_dist = d;
    }
    if let Some(c) = coverage {
        mc.coverage_frac = c;
    }
    let preds: Vec<_> = pred_frames.into_iter().map(|f| f.lanes_3d).collect();
    let gts: Vec<_> = gt_frames.into_iter().map(|f| f.lanes_3d).collect();
    let report = eval::eval3d(&preds, &gts, &mc)?;
    write_report(&report, out)
}

pub(crate) fn eval2d(
    cfg: &RunConfig,
    pred: &Path,
    gt: &Path,
    iou: Option<f64>,
    tag: Option<&str>,
    out: Option<&Path>,
) -> CliResult {
    let mut pred_frames = io::read_frame_set(pred)?;
    let mut gt_frames = io::read_frame_set(gt)?;
    if let Some(tag) = tag {
        apply_tag_filter(&mut pred_frames, &mut gt_frames, tag)?;
    }
    let preds: Vec<_> = pred_frames.into_iter().map(|f| f.lanes_2d).collect();
    let gts: Vec<_> = gt_frames.into_iter().map(|f| f.lanes_2d).collect();
    let report = eval::eval2d_culane(
        &preds,
        &gts,
        cfg.image,
        iou.unwrap_or(cfg.culane_iou_thresh),
        cfg.culane_stroke_px,
    )?;
    write_report(&report, out)
}

pub(crate) fn anchors_dump(cfg: &RunConfig, out: Option<&Path>) -> CliResult {
    let set = build_anchor_set(&cfg.grid, &cfg.camera, cfg.image);
    println!(
        "anchors: starts={} angles={} total={} (grid {}x{} cells)",
        set.starts_x.len(),
        set.angles.len(),
        set.len(),
        cfg.grid.width_cells,
        cfg.grid.height_cells
    );
    println!("{:>5} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7}", "idx", "start_x", "angle", "slope", "theta", "vis3d", "vis2d");
    for (i, a) in set.anchors.iter().enumerate() {
        println!(
            "{:>5} {:>9.3} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7}",
            i,
            a.start_x,
            a.angle_grid,
            a.slope,
            a.angle_image,
            a.valid_3d.iter().filter(|&&v| v).count(),
            a.valid_2d.iter().filter(|&&v| v).count()
        );
    }
    if let Some(path) = out {
        let mut json = serde_json::to_string_pretty(&set)?;
        json.push('\n');
        std::fs::write(path, json)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub(crate) fn persformer_demo(cfg: &RunConfig, seed: u64) -> CliResult {
    // Desk-scale configuration: 2 pyramid levels, 8 channels, 2 heads,
    // 4 sampling points per query.
    let base_bev = BevGridSpec {
        width_cells: 16,
        height_cells: 12,
        ..cfg.grid
    };
    let params = TransformerParams::seeded(seed, cfg.image, &base_bev, 2, 8, 2, 4);
    let pyr = FeaturePyramid::seeded(seed ^ 0x5eed, &[(24, 32), (12, 16)], 8);
    let bev = forward_pyramid(&pyr, &cfg.camera, &params)?;
    println!("forward: seed={seed} levels={}", bev.len());
    for (l, t) in bev.iter().enumerate() {
        println!("  level {l}: shape {:?} checksum {:016x}", t.shape, t.checksum());
    }

    // Exercise the heads once on the level-0 outputs.
    let set = build_anchor_set(&base_bev, &cfg.camera, cfg.image);
    let weights = HeadWeights::seeded(seed ^ 0xad, 8);
    let f_fv: &Tensor = &pyr.levels[0];
    let preds = prediction_heads(&bev[0], f_fv, &set, &weights, cfg.image)?;
    println!("heads: anchors={} outputs={}", set.len(), preds.len());

    println!("gradient checks (central differences):");
    let mut all_ok = true;
    for op in GradOp::ALL {
        let step = op.default_step();
        match grad_check_resampling(op, seed, step, 8) {
            Ok(err) => {
                let ok = err < op.tolerance();
                all_ok &= ok;
                println!(
                    "  {:<22} step {:>7.0e}  max rel err {:>12.3e}  tol {:>7.0e}  {}",
                    op.name(),
                    step,
                    err,
                    op.tolerance(),
                    if ok { "PASS" } else { "FAIL" }
                );
            }
            Err(e) => {
                all_ok = false;
                println!("  {:<22} {e}", op.name());
            }
        }
    }
    if !all_ok {
        return Err(CliError::Run("gradient checks failed".into()));
    }
    Ok(())
}
