use std::fmt::Write as _;
use std::io::Write;

use serde_json::Value;

use crate::error::Result;
use crate::pipeline::RunReport;
use crate::TOOL_VERSION;

use super::commands::load_run;
use super::workspace::Workspace;

fn f3(v: &Value) -> String {
    v.as_f64().map_or("n/a".into(), |x| format!("{x:.3}"))
}

fn optional(ws: &Workspace, rel: &str) -> Option<Value> {
    ws.read_json(rel, "").ok()
}

fn missing(md: &mut String, producer: &str) {
    let _ = writeln!(md, "_not available: run `{producer}`._\n");
}

/// Markdown summary of whatever reports exist; `svg` also draws the run timelines.
pub fn report(ws: &Workspace, svg: bool) -> Result<()> {
    let mut md = String::new();
    let _ = writeln!(md, "# Run report\n");
    let _ = writeln!(md, "tool version {TOOL_VERSION}, config hash `{}`, seed {}\n", ws.hash, ws.cfg.seeds.base);

    let _ = writeln!(md, "## Clean classification (test split)\n");
    match optional(ws, "reports/eval.json") {
        Some(doc) => {
            let _ = writeln!(md, "| model | accuracy | macro F1 |\n|---|---|---|");
            if let Some(models) = doc["models"].as_object() {
                for (name, m) in models {
                    let _ = writeln!(md, "| {name} | {} | {} |", f3(&m["accuracy"]), f3(&m["f1"]));
                }
            }
            md.push('\n');
        }
        None => missing(&mut md, "eval"),
    }

    let _ = writeln!(md, "## Accuracy under attack\n");
    match optional(ws, "reports/attack.json") {
        Some(doc) => {
            let _ = writeln!(md, "model `{}`, {} windows\n", doc["model"].as_str().unwrap_or("?"), doc["windows"]);
            let _ = writeln!(md, "| attack | epsilon | accuracy | success rate | mean L∞ | mean L2 | mean PCC |\n|---|---|---|---|---|---|---|");
            let _ = writeln!(md, "| none | | {} | | | | |", f3(&doc["clean"]["accuracy"]));
            for row in doc["attacks"].as_array().into_iter().flatten() {
                let (a, e) = (&row["attack"], &row["evaluation"]);
                let eps = if a["kind"] == "cw" { format!("κ={}", a["kappa"]) } else { a["epsilon"].to_string() };
                let _ = writeln!(
                    md,
                    "| {} | {eps} | {} | {} | {} | {} | {} |",
                    a["kind"].as_str().unwrap_or("?"),
                    f3(&e["metrics"]["accuracy"]),
                    f3(&e["success_rate"]),
                    f3(&e["mean_linf"]),
                    f3(&e["mean_l2"]),
                    f3(&e["mean_pcc"])
                );
            }
            md.push('\n');
        }
        None => missing(&mut md, "attack"),
    }

    let _ = writeln!(md, "## Transfer (source → target accuracy)\n");
    match optional(ws, "reports/transfer.json") {
        Some(doc) => {
            let m = &doc["matrix"];
            let models: Vec<&str> = m["models"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
            let kinds: Vec<&str> = m["kinds"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
            let _ = writeln!(md, "| source | target | clean | {} |", kinds.join(" | "));
            let _ = writeln!(md, "|---|---|---|{}", "---|".repeat(kinds.len()));
            for (s, src) in models.iter().enumerate() {
                for (t, tgt) in models.iter().enumerate() {
                    let accs: Vec<String> = (0..kinds.len()).map(|k| f3(&m["accuracy"][s][t][k])).collect();
                    let _ = writeln!(md, "| {src} | {tgt} | {} | {} |", f3(&m["clean"][t]), accs.join(" | "));
                }
            }
            md.push('\n');
        }
        None => missing(&mut md, "transfer"),
    }

    let _ = writeln!(md, "## Global feature importance\n");
    match optional(ws, "reports/explain.json") {
        Some(doc) => {
            let _ = writeln!(md, "| rank | feature | mean abs Shapley |\n|---|---|---|");
            for (r, f) in doc["global"].as_array().into_iter().flatten().enumerate() {
                let _ = writeln!(md, "| {} | {} | {} |", r + 1, f["feature"].as_str().unwrap_or("?"), f3(&f["mean_abs"]));
            }
            md.push('\n');
        }
        None => missing(&mut md, "explain"),
    }

    let _ = writeln!(md, "## Attack detection on held-out signatures\n");
    match optional(ws, "reports/detection.json") {
        Some(doc) => {
            let _ = writeln!(md, "{} samples, {} adversarial\n", doc["samples"], doc["adversarial"]);
            let _ = writeln!(md, "| detector | accuracy | F1 normal | F1 attack | attack recall |\n|---|---|---|---|---|");
            if let Some(rows) = doc["detectors"].as_object() {
                for (kind, m) in rows {
                    let _ = writeln!(
                        md,
                        "| {kind} | {} | {} | {} | {} |",
                        f3(&m["accuracy"]),
                        f3(&m["f1_normal"]),
                        f3(&m["f1_attack"]),
                        f3(&m["recall_attack"])
                    );
                }
            }
            md.push('\n');
        }
        None => missing(&mut md, "detect-eval"),
    }

    let _ = writeln!(md, "## Closed loop\n");
    match optional(ws, "reports/comparison.json") {
        Some(doc) => {
            let _ = writeln!(
                md,
                "| mode | decisions | accuracy | action agreement | prediction agreement | alerts | attack frames alerted |\n|---|---|---|---|---|---|---|"
            );
            for r in doc["rows"].as_array().into_iter().flatten() {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {}/{} |",
                    r["mode"].as_str().unwrap_or("?"),
                    r["decisions"],
                    f3(&r["accuracy"]),
                    f3(&r["action_agreement"]),
                    f3(&r["prediction_agreement"]),
                    r["alerts"],
                    r["attack_frames_alerted"],
                    r["attack_frames"]
                );
            }
            md.push('\n');
            let _ = writeln!(md, "Per-decision series: `runs/<mode>.timeline.csv`.\n");
        }
        None => missing(&mut md, "compare"),
    }

    if svg {
        let mut runs = Vec::new();
        for mode in ["baseline", "attacked", "defended"] {
            if ws.event_log_path(mode).exists() {
                runs.push(load_run(ws, mode)?);
            }
        }
        if runs.is_empty() {
            missing(&mut md, "simulate");
        } else {
            let mut w = ws.create("reports/timeline.svg")?;
            w.write_all(timeline_svg(ws, &runs).as_bytes())?;
            w.flush()?;
            let _ = writeln!(md, "![predicted level per mode](timeline.svg)\n");
        }
    }

    let mut w = ws.create("reports/report.md")?;
    w.write_all(md.as_bytes())?;
    w.flush()?;
    Ok(())
}

const COLORS: [&str; 4] = ["#222222", "#d62728", "#1f77b4", "#2ca02c"];

/// Predicted severity over time, one step line per run, attack window shaded.
fn timeline_svg(ws: &Workspace, runs: &[RunReport]) -> String {
    let (w, h, pad) = (900.0, 60.0 + 110.0 * runs.len() as f64, 40.0);
    let t_end = runs.iter().flat_map(|r| r.events.last()).map(|e| e.time_s).fold(1.0, f64::max);
    let x = |t: f64| pad + (w - 2.0 * pad) * t / t_end;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, "<!-- tool_version={TOOL_VERSION} config_hash={} seed={} -->", ws.hash, ws.cfg.seeds.base);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (i, run) in runs.iter().enumerate() {
        let top = 30.0 + 110.0 * i as f64;
        let y = |level: usize| top + 80.0 - 25.0 * level as f64;
        if let Some((a, b)) = run.attack_frames {
            let (xa, xb) = (x(a as f64 / run.sample_rate), x(b as f64 / run.sample_rate));
            let _ = writeln!(s, r##"<rect x="{xa:.1}" y="{top}" width="{:.1}" height="90" fill="#ffdddd"/>"##, xb - xa);
        }
        let _ = writeln!(s, r#"<text x="{pad}" y="{}">{}</text>"#, top - 5.0, run.mode);
        let mut pts = String::new();
        for e in &run.events {
            let _ = write!(pts, "{:.1},{:.1} ", x(e.time_s), y(e.predicted.index()));
        }
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, pts.trim_end());
        for e in run.events.iter().filter(|e| e.alert) {
            let _ = writeln!(s, r##"<rect x="{:.1}" y="{}" width="1" height="4" fill="#ff7f0e"/>"##, x(e.time_s), top + 86.0);
        }
    }
    s.push_str("</svg>\n");
    s
}
