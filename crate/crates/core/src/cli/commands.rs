use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::attacks::{craft_batch, evaluate_under_attack, transfer_matrix, write_adversarial_set, AttackConfig};
use crate::classifiers::{evaluate, train, ArchSpec, ClassifierModel, Provenance, TrainConfig};
use crate::data::{fit_normalize, synth_generate, write_trace, SynthConfig, TimeSeriesWindow};
use crate::detector::{evaluate_detector, threshold_sweep, train_detector, DetectorKind, DetectorSpec};
use crate::error::{Error, Result};
use crate::explain::{global_importance, shap_input_sampled, signatures, SignatureRepository, SplitTag, XaiSignature};
use crate::numerics::derive_seed;
use crate::pipeline::{
    compare_runs, report_from_log, run_stream, write_event_log, write_latency_csv, write_timeline_csv, Defense, RunMode,
    RunReport,
};

use super::workspace::{create_file, ensure_parent, require, Split, Workspace};

fn seeded(cfg: &AttackConfig, seed: u64) -> AttackConfig {
    AttackConfig { seed, ..cfg.clone() }
}

pub fn synth(ws: &Workspace) -> Result<()> {
    let d = &ws.cfg.data;
    let seed = ws.cfg.seeds.data;
    let mut files = Vec::new();
    let mut stats = None;
    for (split, cycles, offset) in [
        (Split::Train, d.train_cycles, 0u64),
        (Split::Val, d.val_cycles, 1),
        (Split::Test, d.test_cycles, 2),
        (Split::Live, d.live_cycles, 10),
    ] {
        let sc = SynthConfig { cycles, seed: seed.wrapping_add(offset), ..d.synth.clone() };
        let trace = synth_generate(&sc, split.name())?;
        if split == Split::Train {
            stats = Some(fit_normalize(&trace)?.1);
        }
        let mut w = create_file(&ws.trace_path(split))?;
        write_trace(&trace, &mut w)?;
        w.flush()?;
        files.push(json!({ "split": split.name(), "frames": trace.len(), "seed": sc.seed }));
    }
    let stats = stats.expect("train split generated");
    ws.write_json("data/normalization.json", json!({ "fingerprint": stats.fingerprint(), "stats": stats }))?;
    ws.write_json("data/manifest.json", json!({ "traces": files }))?;
    Ok(())
}

pub fn train_models(ws: &Workspace, only: &[String]) -> Result<()> {
    let cfg = &ws.cfg;
    for name in only {
        if !cfg.model.presets.contains(name) {
            return Err(Error::config(format!("{name:?} is not among model.presets")));
        }
    }
    let stats = ws.stats()?;
    let (tr, va) = (ws.windows(Split::Train)?, ws.windows(Split::Val)?);
    for (k, name) in cfg.model.presets.iter().enumerate() {
        if !only.is_empty() && !only.contains(name) {
            continue;
        }
        let seed = cfg.seeds.model.wrapping_add(k as u64);
        let spec = ArchSpec::preset(name, cfg.data.timestep, cfg.data.synth.n_features)?;
        let mut init = ClassifierModel::build(spec, seed)?;
        init.normalization = Some(stats.fingerprint());
        init.provenance = Provenance { seed, config_hash: Some(ws.hash.clone()), epochs_trained: 0 };
        let (model, history) = train(&init, &tr, &va, &TrainConfig { seed, ..cfg.train.clone() })?;
        model.save(&ensure_parent(ws.model_path(name))?)?;
        ws.write_json(&format!("models/{name}.history.json"), json!({ "model": name, "seed": seed, "history": history }))?;
    }
    Ok(())
}

pub fn eval(ws: &Workspace) -> Result<()> {
    let test = ws.windows(Split::Test)?;
    let mut out = serde_json::Map::new();
    for name in &ws.cfg.model.presets {
        let m = ws.model(name)?;
        out.insert(name.clone(), serde_json::to_value(evaluate(&m, &test)?)?);
    }
    ws.write_json("reports/eval.json", json!({ "test_windows": test.len(), "models": out }))
}

pub fn attack(ws: &Workspace) -> Result<()> {
    let model = ws.primary()?;
    let set = ws.attack_set()?;
    let names = ws.trace(Split::Test)?.feature_names;
    let clean = evaluate(&model, &set)?;
    let mut rows = Vec::new();
    for (i, cfg) in ws.cfg.attack.attacks.iter().enumerate() {
        let cfg = seeded(cfg, ws.cfg.seeds.attack);
        let (evaluation, adv) = evaluate_under_attack(&model, &set, &cfg)?;
        let stem = format!("attacks/{i}_{}", cfg.kind);
        let mut w = ws.create(&format!("{stem}.csv"))?;
        let sidecar = write_adversarial_set(&adv, &set, &names, &cfg, ws.header(), &mut w)?;
        w.flush()?;
        ws.write_json(&format!("{stem}.json"), sidecar)?;
        rows.push(json!({ "attack": cfg, "evaluation": evaluation }));
    }
    ws.write_json(
        "reports/attack.json",
        json!({ "model": ws.cfg.model.primary, "windows": set.len(), "clean": clean, "attacks": rows }),
    )
}

pub fn transfer(ws: &Workspace) -> Result<()> {
    let models: Vec<(String, ClassifierModel)> =
        ws.cfg.model.presets.iter().map(|n| Ok((n.clone(), ws.model(n)?))).collect::<Result<_>>()?;
    let refs: Vec<(&str, &ClassifierModel)> = models.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let cfgs: Vec<AttackConfig> = ws.cfg.attack.transfer.iter().map(|c| seeded(c, ws.cfg.seeds.attack)).collect();
    if cfgs.is_empty() {
        return Err(Error::config("attack.transfer is empty"));
    }
    let matrix = transfer_matrix(&refs, &ws.attack_set()?, &cfgs)?;
    let mut w = ws.create("reports/transfer.csv")?;
    w.write_all(ws.comment().as_bytes())?;
    matrix.write_csv(&mut w)?;
    w.flush()?;
    ws.write_json("reports/transfer.json", json!({ "attacks": cfgs, "matrix": matrix }))
}

pub fn explain(ws: &Workspace) -> Result<()> {
    let model = ws.primary()?;
    let bg = ws.background(&model)?;
    let test = ws.windows(Split::Test)?;
    let n = ws.cfg.explain.local_windows.min(test.len());
    let picked: Vec<&TimeSeriesWindow> = (0..n).map(|k| &test[k * test.len() / n.max(1)]).collect();
    let windows: Vec<TimeSeriesWindow> = picked.iter().map(|w| (*w).clone()).collect();
    let predicted = if windows.is_empty() { Vec::new() } else { model.predict_labels(&windows)? };
    let mut local = Vec::new();
    for (k, (w, p)) in windows.iter().zip(&predicted).enumerate() {
        let seed = derive_seed(ws.cfg.seeds.explain, k as u64);
        let a = shap_input_sampled(&model, w, &bg, p.index(), ws.cfg.explain.n_perm, seed)?;
        local.push(json!({ "window": w.id(), "label": w.label, "predicted": p, "attribution": a }));
    }
    let values: Vec<Vec<f64>> =
        local.iter().map(|l| serde_json::from_value(l["attribution"]["values"].clone()).expect("own output")).collect();
    let features = ws.trace(Split::Test)?.feature_names;
    let ranking: Vec<Value> = if values.is_empty() {
        Vec::new()
    } else {
        global_importance(values.iter().map(|v| v.as_slice()))?
            .into_iter()
            .map(|f| json!({ "feature": features[f.feature], "index": f.feature, "mean_abs": f.mean_abs }))
            .collect()
    };
    ws.write_json(
        "reports/explain.json",
        json!({ "model": ws.cfg.model.primary, "background": bg.fingerprint(), "local": local, "global": ranking }),
    )
}

/// Signatures of adversarial versions of `windows`, the attacks assigned round robin.
fn adversarial_signatures(ws: &Workspace, model: &ClassifierModel, bg: &crate::explain::BackgroundSet, windows: &[TimeSeriesWindow]) -> Result<Vec<XaiSignature>> {
    let attacks = &ws.cfg.explain.signing_attacks;
    let mut out = Vec::new();
    for (k, cfg) in attacks.iter().enumerate() {
        let part: Vec<TimeSeriesWindow> = windows.iter().skip(k).step_by(attacks.len()).cloned().collect();
        if part.is_empty() {
            continue;
        }
        let adv = craft_batch(model, &part, &seeded(cfg, ws.cfg.seeds.attack))?;
        let perturbed: Vec<TimeSeriesWindow> = adv.iter().map(|a| a.window.clone()).collect();
        let mut sigs = signatures(model, &perturbed, bg, ws.cfg.explain.signature_mode)?;
        for (s, a) in sigs.iter_mut().zip(&adv) {
            s.id = a.id();
            s.label = 1;
        }
        out.extend(sigs);
    }
    Ok(out)
}

pub fn sign(ws: &Workspace) -> Result<()> {
    let model = ws.primary()?;
    let bg = ws.background(&model)?;
    let mode = ws.cfg.explain.signature_mode;
    let train: Vec<TimeSeriesWindow> = ws.windows(Split::Train)?.into_iter().step_by(ws.cfg.explain.train_every).collect();
    let test = ws.windows(Split::Test)?;
    let mut repo = SignatureRepository::new(Some(ws.hash.clone()));
    for (split, windows) in [(SplitTag::Train, &train), (SplitTag::Test, &test)] {
        repo.append_signatures(&signatures(&model, windows, &bg, mode)?, split)?;
        repo.append_signatures(&adversarial_signatures(ws, &model, &bg, windows)?, split)?;
    }
    repo.save(&ensure_parent(ws.repository_path())?)?;
    let mut w = ws.create("signatures/background.csv")?;
    crate::data::write_windows(bg.windows(), &ws.trace(Split::Train)?.feature_names, &mut w)?;
    w.flush()?;
    ws.write_json(
        "signatures/manifest.json",
        json!({
            "records": repo.len(),
            "train_windows": train.len(),
            "test_windows": test.len(),
            "background": bg.fingerprint(),
            "signing_attacks": ws.cfg.explain.signing_attacks,
        }),
    )
}

pub fn fit_detectors(ws: &Workspace) -> Result<()> {
    let data = ws.repository()?.dataset(SplitTag::Train)?;
    let mut fitted = Vec::new();
    for &kind in &ws.cfg.detector.kinds {
        let spec = DetectorSpec { kind, seed: ws.cfg.seeds.detector, ..ws.cfg.detector.spec.clone() };
        let det = train_detector(&data, &spec)?;
        det.save(&ensure_parent(ws.detector_path(kind))?)?;
        fitted.push(json!({ "kind": kind, "training_fingerprint": det.training_fingerprint(), "samples": data.len() }));
    }
    ws.write_json("detectors/manifest.json", json!({ "detectors": fitted }))
}

pub fn detect_eval(ws: &Workspace) -> Result<()> {
    let data = ws.repository()?.dataset(SplitTag::Test)?;
    let mut rows = serde_json::Map::new();
    for &kind in &ws.cfg.detector.kinds {
        let det = ws.detector(kind)?;
        let rows_x: Vec<&[f64]> = data.x.iter().map(Vec::as_slice).collect();
        let sweep = threshold_sweep(&det.scores(&rows_x)?, &data.y)?;
        ws.write_csv_rows(&format!("reports/threshold_sweep_{kind}.csv"), &sweep)?;
        rows.insert(kind.to_string(), serde_json::to_value(evaluate_detector(&det, &data)?)?);
    }
    let positives = data.y.iter().filter(|&&y| y == 1).count();
    ws.write_json(
        "reports/detection.json",
        json!({ "samples": data.len(), "adversarial": positives, "detectors": rows }),
    )
}

#[derive(Serialize)]
struct RunFiles<'a> {
    mode: RunMode,
    summary: Value,
    attack_frames: Option<(usize, usize)>,
    warnings: &'a [String],
}

pub fn simulate(ws: &Workspace, modes: &[RunMode], detector: Option<DetectorKind>) -> Result<()> {
    let cfg = &ws.cfg.pipeline;
    let modes = if modes.is_empty() { cfg.modes.clone() } else { modes.to_vec() };
    let model = ws.primary()?;
    let live = ws.trace(Split::Live)?;
    let schedule = crate::pipeline::InjectionSchedule {
        attack: seeded(&cfg.schedule.attack, ws.cfg.seeds.attack),
        ..cfg.schedule.clone()
    };
    let needs_defense = modes.iter().any(|m| matches!(m, RunMode::Defended | RunMode::Monitored));
    let (det, bg) = if needs_defense {
        let det = ws.detector(detector.unwrap_or(cfg.detector))?;
        (Some(det), Some(ws.background(&model)?))
    } else {
        (None, None)
    };
    for mode in modes {
        let defense = match (&det, &bg) {
            (Some(d), Some(b)) if matches!(mode, RunMode::Defended | RunMode::Monitored) => {
                Some(Defense { detector: d, background: b, mode: ws.cfg.explain.signature_mode })
            }
            _ => None,
        };
        let sched = matches!(mode, RunMode::Attacked | RunMode::Defended).then_some(&schedule);
        let mut report = run_stream(&live, &model, defense.as_ref(), sched, &cfg.options)?;
        report.config_hash = Some(ws.hash.clone());
        report.seed = ws.cfg.seeds.base;
        write_run(ws, &report)?;
    }
    Ok(())
}

fn write_run(ws: &Workspace, report: &RunReport) -> Result<()> {
    let mode = report.mode.to_string();
    let mut w = create_file(&ws.event_log_path(&mode))?;
    write_event_log(report, &mut w)?;
    let mut w = ws.create(&format!("runs/{mode}.timeline.csv"))?;
    write_timeline_csv(report, &mut w)?;
    let mut w = ws.create(&format!("runs/{mode}.latency.csv"))?;
    write_latency_csv(report, &mut w)?;
    let mut summary = serde_json::to_value(&report.summary)?;
    if let Value::Object(m) = &mut summary {
        m.remove("latency_mean_s");
        m.remove("latency_p95_s");
    }
    let files = RunFiles { mode: report.mode, summary, attack_frames: report.attack_frames, warnings: &report.warnings };
    ws.write_json(&format!("runs/{mode}.summary.json"), serde_json::to_value(files)?)?;
    ws.write_json(
        &format!("runs/{mode}.latency.json"),
        json!({ "mean_s": report.summary.latency_mean_s, "p95_s": report.summary.latency_p95_s }),
    )
}

pub fn load_run(ws: &Workspace, mode: &str) -> Result<RunReport> {
    let p = require(ws.event_log_path(mode), &format!("simulate --mode {mode}"))?;
    report_from_log(std::fs::File::open(p)?)
}

pub fn compare(ws: &Workspace) -> Result<()> {
    let baseline = load_run(ws, "baseline")?;
    let mut others = Vec::new();
    for mode in ["attacked", "defended", "monitored"] {
        if ws.event_log_path(mode).exists() {
            others.push(load_run(ws, mode)?);
        }
    }
    let refs: Vec<&RunReport> = others.iter().collect();
    let rows = compare_runs(&baseline, &refs)?;
    ws.write_csv_rows("reports/comparison.csv", &rows)?;
    ws.write_json("reports/comparison.json", json!({ "trace": baseline.trace_id, "rows": rows }))
}
