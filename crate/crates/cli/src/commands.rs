//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pose_anchor::geometry::{fundamental_from_pose, symmetric_epipolar_distance, StereoRig};
use pose_anchor::pipeline::{
    estimate_relative_pose, follower_global_pose, follower_to_leader, match_timestamps,
    two_view_reconstruct, viewing_angle_check, FollowerBundle, LeaderBundle, PipelineConfig,
    StageTimings,
};
use pose_anchor::refine::{build_correspondences, refine_stacked, Correspondence};
use pose_anchor::reid::{associate_from_scores, similarity_matrix_with_min_area, Association};
use pose_anchor::report::{fmt_f64, loss_curve_svg, svg_series, trajectory_svg};
use pose_anchor::synthetic::{
    generate_scene, load_view, parse_scene_config, random_two_view_spec, render_views, write_scene,
    RandomSceneOptions, ViewFiles, LEADER_ID, LEADER_RIGHT_ID,
};
use pose_anchor::{compose, invert, par, Error, Pixel, Point3, RelativePose, Result};
use serde_json::{json, Value};

use crate::args::{Cli, EstimateArgs, PairArgs, PlotArgs, SfmArgs, SynthArgs};
use crate::output::{matrix_json, pose_json, write_json};

const RUN_CONFIG: &str = "run_config.json";

fn echo_config(cli: &Cli, out: &Path) -> Result<()> {
    write_json(out, RUN_CONFIG, cli)
}

fn load(dir: &Path) -> Result<ViewFiles> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "{} is not a camera directory",
            dir.display()
        )));
    }
    load_view(dir).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", dir.display())),
        other => other,
    })
}

/// Leader-to-follower pose from the world-to-camera truths of two views.
fn true_relative(leader: &ViewFiles, follower: &ViewFiles) -> Option<RelativePose> {
    let (l, f) = (leader.truth.as_ref()?, follower.truth.as_ref()?);
    compose(&f.pose, &invert(&l.pose)).ok()
}

pub fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let spec = match &a.scene {
        Some(path) => parse_scene_config(&fs::read_to_string(path)?)?,
        None => random_two_view_spec(a.seed, &RandomSceneOptions::default()),
    };
    let scene = generate_scene(&spec)?;
    let views = render_views(&scene)?;
    write_scene(&a.out, &scene, &views, &[LEADER_ID])?;
    echo_config(cli, &a.out)
}

fn associations(
    leader: &ViewFiles,
    follower: &ViewFiles,
    a: &PairArgs,
) -> (Vec<Vec<Option<f64>>>, Vec<Association>) {
    let reid = a.tuning.pipeline().reid;
    let scores = similarity_matrix_with_min_area(
        &leader.image,
        &leader.detections,
        &follower.image,
        &follower.detections,
        reid.min_box_area,
    );
    let assoc = associate_from_scores(&scores, follower.detections.len(), reid.delta_min);
    (scores, assoc)
}

/// Association entries, with a truth check when both views carry identities.
fn associations_json(assoc: &[Association], leader: &ViewFiles, follower: &ViewFiles) -> Value {
    let ids = leader.truth.as_ref().zip(follower.truth.as_ref());
    let entries: Vec<Value> = assoc
        .iter()
        .map(|x| {
            let mut v = json!({
                "follower_index": x.follower_index,
                "leader_index": x.leader_index,
                "score": x.score,
            });
            if let Some((lt, ft)) = ids {
                let truth = lt
                    .person_ids
                    .iter()
                    .position(|p| *p == ft.person_ids[x.follower_index]);
                v["true_leader_index"] = json!(truth);
            }
            v
        })
        .collect();
    json!(entries)
}

pub fn reid(cli: &Cli, a: &PairArgs) -> Result<()> {
    let (leader, follower) = (load(&a.leader)?, load(&a.follower)?);
    let (scores, assoc) = associations(&leader, &follower, a);
    let doc = json!({
        "leader": a.leader,
        "follower": a.follower,
        "similarity": scores,
        "associations": associations_json(&assoc, &leader, &follower),
    });
    write_json(&a.out, "associations.json", &doc)?;
    echo_config(cli, &a.out)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn refine(cli: &Cli, a: &PairArgs) -> Result<()> {
    let (leader, follower) = (load(&a.leader)?, load(&a.follower)?);
    let (_, assoc) = associations(&leader, &follower, a);
    if assoc.iter().all(|x| x.leader_index.is_none()) {
        return Err(Error::NoAssociations);
    }
    let initial = build_correspondences(&assoc, &leader.detections, &follower.detections)?;
    let refined = refine_stacked(
        &leader.image,
        &follower.image,
        &initial,
        &a.tuning.pipeline().refine,
    )?;

    let mut csv = String::from("iter,keypoint_id,loss\n");
    for (k, c) in refined.iter().enumerate() {
        for (i, loss) in c.loss_history.iter().enumerate() {
            csv.push_str(&format!("{i},{k},{}\n", fmt_f64(*loss)));
        }
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("loss.csv"), csv)?;

    let mut summary = json!({
        "correspondences": refined.len(),
        "mean_initial_loss": mean(refined.iter().filter_map(Correspondence::initial_loss)),
        "mean_final_loss": mean(refined.iter().filter_map(Correspondence::final_loss)),
        "mean_shift_px": mean(refined.iter().map(|c| c.follower_px.distance(c.follower_px0))),
    });
    if let Some(truth) = true_relative(&leader, &follower) {
        let f = fundamental_from_pose(&truth, &leader.camera, &follower.camera)?;
        let epi = |pick: fn(&Correspondence) -> (Pixel, Pixel)| {
            mean(
                refined
                    .iter()
                    .map(|c| symmetric_epipolar_distance(f.matrix(), pick(c))),
            )
        };
        summary["mean_epipolar_px_before"] = json!(epi(|c| (c.leader_px, c.follower_px0)));
        summary["mean_epipolar_px_after"] = json!(epi(|c| (c.leader_px, c.follower_px)));
    }
    let entries: Vec<Value> = refined
        .iter()
        .enumerate()
        .map(|(k, c)| {
            json!({
                "keypoint_id": k,
                "keypoint": c.keypoint_index,
                "leader_px": [c.leader_px.x, c.leader_px.y],
                "follower_px_initial": [c.follower_px0.x, c.follower_px0.y],
                "follower_px": [c.follower_px.x, c.follower_px.y],
                "iterations": c.loss_history.len().saturating_sub(1),
                "initial_loss": c.initial_loss(),
                "final_loss": c.final_loss(),
            })
        })
        .collect();
    write_json(
        &a.out,
        "correspondences.json",
        &json!({ "summary": summary, "correspondences": entries }),
    )?;
    echo_config(cli, &a.out)
}

pub fn sfm(cli: &Cli, a: &SfmArgs) -> Result<()> {
    let p = &a.pair;
    let (leader, follower) = (load(&p.leader)?, load(&p.follower)?);
    let r = two_view_reconstruct(
        (&leader.image, &leader.detections, &leader.camera),
        (&follower.image, &follower.detections, &follower.camera),
        &p.tuning.sfm(a.no_refine),
    )?;
    let points: Vec<Value> = r
        .points
        .iter()
        .zip(&r.point_correspondence)
        .map(|(x, &k)| {
            json!({
                "correspondence": k,
                "keypoint": r.correspondences[k].keypoint_index,
                "xyz": [x.x, x.y, x.z],
            })
        })
        .collect();
    let mut doc = json!({
        "fundamental": matrix_json(&r.fundamental),
        "essential": matrix_json(&r.essential),
        "pose": pose_json(&r.pose),
        "correspondences": r.correspondences.len(),
        "inliers": r.inliers.iter().filter(|m| **m).count(),
        "initial_rms_px": r.initial_rms,
        "final_rms_px": r.final_rms,
        "points": points,
        "associations": associations_json(&r.associations, &leader, &follower),
    });
    if let Some(truth) = true_relative(&leader, &follower) {
        let direction = r
            .pose
            .translation
            .normalize()
            .dot(&truth.translation.normalize());
        doc["truth"] = json!({
            "rotation_error_deg": r.pose.rotation_error(&truth).to_degrees(),
            "direction_error_deg": direction.clamp(-1.0, 1.0).acos().to_degrees(),
        });
    }
    write_json(&p.out, "sfm.json", &doc)?;
    echo_config(cli, &p.out)
}

/// Sub-directories of a scene whose name starts with `follower`, sorted.
fn scene_followers(scene: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(scene)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir() && e.file_name().to_string_lossy().starts_with("follower"))
        .map(|e| e.path())
        .collect();
    out.sort();
    Ok(out)
}

fn leader_bundle(
    view: &ViewFiles,
    right: Option<&ViewFiles>,
    baseline: Option<f64>,
    cfg: &PipelineConfig,
) -> Result<LeaderBundle> {
    match (right, baseline) {
        (Some(r), Some(baseline)) if !view.detections.has_3d() => {
            let rig = StereoRig {
                camera: view.camera,
                baseline,
            };
            LeaderBundle::from_stereo(
                (&view.image, &view.detections),
                (&r.image, &r.detections),
                &rig,
                cfg,
            )
        }
        _ => LeaderBundle::from_depth_detections(view.image.clone(), view.detections.clone()),
    }
}

/// Mean of the leader's 3D key-points, the person-group centroid.
fn group_centroid(leader: &LeaderBundle) -> Option<Point3> {
    let pts: Vec<&Point3> = leader.keypoints3d.iter().flatten().flatten().collect();
    let sum = pts
        .iter()
        .fold(Point3::origin().coords, |acc, p| acc + p.coords);
    (!pts.is_empty()).then(|| Point3::from(sum / pts.len() as f64))
}

/// Leader for each follower: every follower uses the only leader, unless
/// several leaders or a window are given, in which case timestamps decide.
fn pair_by_time(
    leaders: &[LeaderBundle],
    followers: &[f64],
    window: Option<f64>,
) -> Result<Vec<Option<usize>>> {
    if leaders.len() == 1 && window.is_none() {
        return Ok(vec![Some(0); followers.len()]);
    }
    let window = window.unwrap_or(DEFAULT_WINDOW_S);
    if !(window > 0.0) {
        return Err(Error::Config(format!(
            "--window-s must be positive, got {window}"
        )));
    }
    let sorted = |ts: Vec<f64>| {
        let mut idx: Vec<usize> = (0..ts.len()).collect();
        idx.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
        let times = idx.iter().map(|&i| ts[i]).collect::<Vec<_>>();
        (idx, times)
    };
    let (li, lt) = sorted(leaders.iter().map(|l| l.timestamp).collect());
    let (fi, ft) = sorted(followers.to_vec());
    let mut out = vec![None; followers.len()];
    for (l, f) in match_timestamps(&lt, &ft, window) {
        out[fi[f]] = Some(li[l]);
    }
    Ok(out)
}

/// Default pairing window when several leaders are given, seconds.
const DEFAULT_WINDOW_S: f64 = 0.1;

struct FollowerOutcome {
    doc: Value,
    timings: Option<StageTimings>,
    error: Option<Error>,
}

fn estimate_one(
    leader: Option<(&Path, &ViewFiles, &LeaderBundle)>,
    path: &Path,
    view: &ViewFiles,
    cfg: &PipelineConfig,
) -> FollowerOutcome {
    let mut doc = json!({
        "follower": path,
        "timestamp": view.detections.timestamp,
        "leader": leader.map(|l| l.0),
    });
    let Some((_, lview, lb)) = leader else {
        doc["status"] = json!("unpaired");
        return FollowerOutcome {
            doc,
            timings: None,
            error: None,
        };
    };
    let run = || -> Result<(Value, StageTimings)> {
        let fb = FollowerBundle::new(
            view.image.clone(),
            view.detections.clone(),
            view.camera,
            view.detections.timestamp,
        )?;
        let (pose, diag) = estimate_relative_pose(lb, &fb, cfg)?;
        let mut v = json!({
            "status": "ok",
            "pose": pose_json(&pose),
            "diagnostics": {
                "associations": associations_json(&diag.associations, lview, view),
                "correspondences": diag.correspondences,
                "inliers": diag.inliers,
                "reprojection_rms_px": diag.reprojection_rms,
                "mean_refinement_shift_px": diag.mean_refinement_shift,
            },
        });
        if let Some(c) = group_centroid(lb) {
            if let Ok((angle, warn)) = viewing_angle_check(&pose, &c) {
                v["viewing_angle_rad"] = json!(angle);
                v["viewing_angle_warning"] = json!(warn);
            }
        }
        // World frame when the leader's global pose is known, else the leader frame.
        let global = match &lview.truth {
            Some(t) => Some(follower_global_pose(
                &invert(&t.pose),
                &follower_to_leader(&pose),
            )?),
            None => None,
        };
        let position = global.map_or(pose.center(), |g| Point3::from(g.translation));
        v["frame"] = json!(if global.is_some() { "world" } else { "leader" });
        v["position"] = json!([position.x, position.y, position.z]);
        if let Some(g) = &global {
            v["global_pose"] = pose_json(g);
        }
        if let Some(truth) = true_relative(lview, view) {
            let true_position = match (&global, &view.truth) {
                (Some(_), Some(ft)) => Point3::from(invert(&ft.pose).translation),
                _ => truth.center(),
            };
            let dt = (pose.translation - truth.translation).norm();
            v["truth"] = json!({
                "rotation_error_deg": pose.rotation_error(&truth).to_degrees(),
                "translation_error_m": dt,
                "translation_error_pct": 100.0 * dt / truth.translation.norm(),
                "position": [true_position.x, true_position.y, true_position.z],
            });
        }
        Ok((v, diag.timings))
    };
    match run() {
        Ok((v, timings)) => {
            for (k, x) in v.as_object().expect("object").iter() {
                doc[k] = x.clone();
            }
            FollowerOutcome {
                doc,
                timings: Some(timings),
                error: None,
            }
        }
        Err(e) => {
            doc["status"] = json!(e.code());
            doc["message"] = json!(e.to_string());
            FollowerOutcome {
                doc,
                timings: None,
                error: Some(e),
            }
        }
    }
}

pub fn estimate(cli: &Cli, a: &EstimateArgs) -> Result<()> {
    let (leader_dirs, follower_dirs, right_dir) = match &a.scene {
        Some(s) => {
            let right = a.leader_right.clone().or_else(|| {
                let p = s.join(LEADER_RIGHT_ID);
                (a.baseline.is_some() && p.is_dir()).then_some(p)
            });
            (vec![s.join(LEADER_ID)], scene_followers(s)?, right)
        }
        None => (a.leader.clone(), a.follower.clone(), a.leader_right.clone()),
    };
    if leader_dirs.is_empty() || follower_dirs.is_empty() {
        return Err(Error::Config(
            "need at least one leader and one follower".into(),
        ));
    }
    if leader_dirs.len() > 1 && right_dir.is_some() {
        return Err(Error::Config(
            "a stereo leader takes a single --leader".into(),
        ));
    }
    let cfg = a.tuning.pipeline();
    let right = right_dir.as_deref().map(load).transpose()?;
    let leader_views = leader_dirs
        .iter()
        .map(|d| load(d))
        .collect::<Result<Vec<_>>>()?;
    let leaders = leader_views
        .iter()
        .map(|v| leader_bundle(v, right.as_ref(), a.baseline, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let followers = follower_dirs
        .iter()
        .map(|d| load(d))
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = followers.iter().map(|f| f.detections.timestamp).collect();
    let pairing = pair_by_time(&leaders, &times, a.window_s)?;

    // Followers are independent given the shared leader bundle.
    let outcomes = par::map_range(followers.len(), |k| {
        let leader = pairing[k].map(|l| (leader_dirs[l].as_path(), &leader_views[l], &leaders[l]));
        estimate_one(leader, &follower_dirs[k], &followers[k], &cfg)
    });
    let docs: Vec<&Value> = outcomes.iter().map(|o| &o.doc).collect();
    write_json(&a.out, "estimate.json", &json!({ "followers": docs }))?;
    let timings: Vec<Value> = outcomes
        .iter()
        .zip(&follower_dirs)
        .filter_map(|(o, d)| o.timings.map(|t| json!({ "follower": d, "timings_ms": t })))
        .collect();
    write_json(&a.out, "timing.json", &timings)?;
    echo_config(cli, &a.out)?;
    if outcomes.iter().all(|o| o.timings.is_none()) {
        let first = outcomes.into_iter().find_map(|o| o.error);
        return Err(first
            .unwrap_or_else(|| Error::Config("no follower could be paired with a leader".into())));
    }
    Ok(())
}

/// Mean loss per iteration from `iter,keypoint_id,loss` rows. A key-point
/// that stopped early keeps contributing its final loss.
fn mean_loss_curve(csv: &str) -> Result<Vec<(f64, f64)>> {
    let mut histories: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (n, line) in csv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || {
            Error::Config(format!(
                "loss CSV line {}: expected iter,keypoint_id,loss",
                n + 1
            ))
        };
        let mut f = line.split(',');
        let (Some(i), Some(k), Some(l), None) = (f.next(), f.next(), f.next(), f.next()) else {
            return Err(bad());
        };
        let (Ok(i), Ok(k), Ok(l)) = (i.trim().parse(), k.trim().parse(), l.trim().parse::<f64>())
        else {
            return Err(bad());
        };
        histories.entry(k).or_default().push((i, l));
    }
    let mut curves: Vec<Vec<f64>> = histories
        .into_values()
        .map(|mut h| {
            h.sort_by_key(|e| e.0);
            h.into_iter().map(|e| e.1).collect()
        })
        .collect();
    curves.retain(|c| !c.is_empty());
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    Ok((0..len)
        .map(|i| (i as f64, mean(curves.iter().map(|c| c[i.min(c.len() - 1)]))))
        .collect())
}

fn xz(v: &Value) -> Option<(f64, f64)> {
    Some((v.get(0)?.as_f64()?, v.get(2)?.as_f64()?))
}

pub fn plot(cli: &Cli, a: &PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input)?;
    let (name, svg) = match a.input.extension().and_then(|e| e.to_str()) {
        Some("csv") => ("loss.svg", loss_curve_svg(&mean_loss_curve(&text)?)),
        Some("json") => {
            let doc: Value = serde_json::from_str(&text)?;
            let followers = doc["followers"].as_array().ok_or_else(|| {
                Error::Config("expected an estimate.json with a followers array".into())
            })?;
            let estimated: Vec<(f64, f64)> = followers
                .iter()
                .filter_map(|f| xz(&f["position"]))
                .collect();
            let truth: Vec<(f64, f64)> = followers
                .iter()
                .filter_map(|f| xz(&f["truth"]["position"]))
                .collect();
            let truth = (!truth.is_empty()).then_some(truth.as_slice());
            ("trajectory.svg", trajectory_svg(&estimated, truth))
        }
        _ => {
            return Err(Error::Config(
                "plot input must be a .csv loss file or an estimate .json".into(),
            ))
        }
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(name), &svg)?;
    // The written plot must read back to the same curves.
    if svg_series(&svg).is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    echo_config(cli, &a.out)
}
