//! End-to-end acceptance run. Drives the CLI stages on the default
//! configuration in a temporary directory, then checks each criterion and
//! prints one PASS/FAIL line per criterion.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::Value;

use cybershield::attacks::{craft_cw, AttackConfig};
use cybershield::classifiers::{ArchSpec, ClassifierModel, TapeModel};
use cybershield::cli::{main_with_args, RunConfig, Split, Workspace};
use cybershield::data::{read_windows, Severity, TimeSeriesWindow};
use cybershield::explain::{shap_input, signatures, ShapleyMode, ShapleyOptions, SignatureMode};
use cybershield::numerics::{FdOptions, SeededRng, Tape, Tensor, Var};
use cybershield::pipeline::{read_event_log, run_stream, Defense, PipelineEvent, RunMode};

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn cli(config: &Path, args: &[&str]) -> f64 {
    let start = Instant::now();
    let mut argv = vec!["cybershield", "--config", config.to_str().unwrap()];
    argv.extend_from_slice(args);
    let code = main_with_args(argv);
    assert_eq!(code, 0, "cybershield {} failed", args.join(" "));
    start.elapsed().as_secs_f64()
}

fn read_json(ws: &Workspace, rel: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(ws.path(rel)).unwrap()).unwrap()
}

fn events(ws: &Workspace, mode: &str) -> Vec<PipelineEvent> {
    read_event_log(fs::File::open(ws.event_log_path(mode)).unwrap()).unwrap().1
}

fn toy_window(values: Vec<f32>, t: usize, n: usize, label: Severity) -> TimeSeriesWindow {
    TimeSeriesWindow { timestep: t, n_features: n, values, label, source: "toy".into(), end_frame: 0 }
}

/// `logits = act(flat(x)·W1 + b1)·W2` or `flat(x)·W1 + b1` without a hidden layer.
struct Toy {
    t: usize,
    n: usize,
    w1: Tensor,
    b1: Tensor,
    w2: Option<Tensor>,
}

impl Toy {
    fn linear(t: usize, n: usize, classes: usize, rng: &mut SeededRng) -> Self {
        let d = t * n;
        Toy {
            t,
            n,
            w1: Tensor::new(vec![d, classes], (0..d * classes).map(|_| rng.normal() as f32).collect()).unwrap(),
            b1: Tensor::new(vec![classes], (0..classes).map(|_| rng.normal() as f32).collect()).unwrap(),
            w2: None,
        }
    }

    /// One logit equal to Σ_i w_i·x̄_i (x̄ the time mean).
    fn mean_linear(t: usize, w: &[f32]) -> Self {
        let n = w.len();
        Toy {
            t,
            n,
            w1: Tensor::new(vec![t * n, 1], (0..t * n).map(|i| w[i % n] / t as f32).collect()).unwrap(),
            b1: Tensor::new(vec![1], vec![0.0]).unwrap(),
            w2: None,
        }
    }

    fn mlp(t: usize, n: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let d = t * n;
        Toy {
            t,
            n,
            w1: Tensor::new(vec![d, hidden], (0..d * hidden).map(|_| rng.normal() as f32).collect()).unwrap(),
            b1: Tensor::new(vec![hidden], vec![0.0; hidden]).unwrap(),
            w2: Some(Tensor::new(vec![hidden, 2], (0..hidden * 2).map(|_| rng.normal() as f32).collect()).unwrap()),
        }
    }

    fn linear_logits(&self, x: &[f32]) -> Vec<f64> {
        let c = self.b1.len();
        (0..c)
            .map(|k| {
                self.b1.data()[k] as f64
                    + x.iter().enumerate().map(|(j, &v)| v as f64 * self.w1.data()[j * c + k] as f64).sum::<f64>()
            })
            .collect()
    }
}

impl TapeModel for Toy {
    fn input_shape(&self) -> (usize, usize) {
        (self.t, self.n)
    }

    fn n_classes(&self) -> usize {
        self.w2.as_ref().map_or(self.w1.shape()[1], |w| w.shape()[1])
    }

    fn logits(&self, tape: &mut Tape<f32>, x: Var) -> cybershield::Result<Var> {
        let b = tape.value(x).shape()[0];
        let flat = tape.reshape(x, &[b, self.t * self.n])?;
        let w1 = tape.constant(self.w1.clone());
        let b1 = tape.constant(self.b1.clone());
        let h = tape.matmul(flat, w1)?;
        let h = tape.add_bias(h, b1)?;
        match &self.w2 {
            None => Ok(h),
            Some(w2) => {
                let a = tape.tanh(h);
                let w2 = tape.constant(w2.clone());
                tape.matmul(a, w2)
            }
        }
    }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let (t, n) = (30, 6);
    let mut rng = SeededRng::new(11);
    let windows: Vec<TimeSeriesWindow> = (0..2)
        .map(|k| toy_window((0..t * n).map(|_| rng.uniform() as f32).collect(), t, n, Severity::ALL[k]))
        .collect();
    let mut worst: f64 = 0.0;
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, preset) in ["desk_lstm", "desk_gru", "desk_cnn_lstm"].iter().enumerate() {
        let m = ClassifierModel::build(ArchSpec::preset(preset, t, n).unwrap(), i as u64 + 1).unwrap();
        let r = m
            .check_gradients(&windows, &FdOptions { h: 1e-3, tolerance: 1e-4, coords: Some(100), seed: 5 })
            .unwrap();
        pass &= r.passed && r.checked == 100;
        worst = worst.max(r.max_rel_error);
        parts.push(format!("{preset} {:.1e}", r.max_rel_error));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        name: "gradient check",
        pass: pass && worst <= 1e-4 && secs <= 60.0,
        detail: format!("max rel error {} (tol 1e-4), {secs:.1}s", parts.join(", ")),
    }
}

fn c2_clean_accuracy(ws: &Workspace, train_secs: f64) -> Outcome {
    let eval = read_json(ws, "reports/eval.json");
    let acc = eval["models"]["desk_lstm"]["accuracy"].as_f64().unwrap();
    Outcome {
        id: 2,
        name: "clean LSTM accuracy",
        pass: acc >= 0.85 && train_secs <= 300.0,
        detail: format!("accuracy {acc:.3} (>= 0.85) on {} windows, training {train_secs:.0}s", eval["test_windows"]),
    }
}

fn c3_attack_ordering(ws: &Workspace, secs: f64) -> Outcome {
    let doc = read_json(ws, "reports/attack.json");
    let clean = doc["clean"]["accuracy"].as_f64().unwrap();
    let acc = |kind: &str| {
        doc["attacks"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["attack"]["kind"] == kind)
            .map(|r| r["evaluation"]["metrics"]["accuracy"].as_f64().unwrap())
            .unwrap()
    };
    let (fgsm, pgd, cw) = (acc("fgsm"), acc("pgd"), acc("cw"));
    Outcome {
        id: 3,
        name: "attack strength ordering",
        pass: cw <= pgd && pgd <= fgsm + 0.01 && fgsm < clean && pgd <= 0.5 * clean && secs <= 600.0,
        detail: format!("clean {clean:.3}, fgsm {fgsm:.3}, pgd {pgd:.3}, cw {cw:.3}; {secs:.0}s"),
    }
}

fn c4_budgets(ws: &Workspace) -> Outcome {
    let originals = ws.attack_set().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, cfg) in ws.cfg.attack.attacks.iter().enumerate() {
        if cfg.kind == cybershield::attacks::AttackKind::Cw {
            continue;
        }
        let path = ws.path(&format!("attacks/{i}_{}.csv", cfg.kind));
        let (adv, _) = read_windows(fs::File::open(path).unwrap()).unwrap();
        pass &= adv.len() == originals.len();
        let mut linf: f64 = 0.0;
        let mut in_range = true;
        for (a, o) in adv.iter().zip(&originals) {
            for (&x, &y) in a.values.iter().zip(&o.values) {
                linf = linf.max((x as f64 - y as f64).abs());
                in_range &= (0.0..=1.0).contains(&x);
            }
        }
        pass &= linf <= cfg.epsilon + 1e-6 && in_range;
        parts.push(format!("{} max L∞ {linf:.6} (ε {}), in range {in_range}", cfg.kind, cfg.epsilon));
    }
    Outcome { id: 4, name: "perturbation budgets", pass, detail: parts.join("; ") }
}

fn c5_cw_hyperplane() -> Outcome {
    let mut rng = SeededRng::new(2024);
    let (t, n) = (4, 3);
    let mut worst: f64 = 0.0;
    let mut all_success = true;
    for _ in 0..20 {
        let dist = rng.uniform_range(0.05, 0.2);
        let mut m = Toy::linear(t, n, 2, &mut rng);
        let x: Vec<f32> = (0..t * n).map(|_| rng.uniform_range(0.35, 0.65) as f32).collect();
        let dw = (0..t * n)
            .map(|j| (m.w1.data()[j * 2] - m.w1.data()[j * 2 + 1]) as f64)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let z = m.linear_logits(&x);
        m.b1.data_mut()[0] += (dist * dw - (z[0] - z[1])) as f32;
        let z = m.linear_logits(&x);
        let expected = (z[0] - z[1]) / dw;
        let a = craft_cw(&m, &toy_window(x, t, n, Severity::None), &AttackConfig::cw(1.0, 0.0)).unwrap();
        all_success &= a.success;
        worst = worst.max((a.l2 - expected).abs() / expected);
    }
    Outcome {
        id: 5,
        name: "C&W minimal distance",
        pass: all_success && worst <= 0.05,
        detail: format!("20 instances, worst relative L2 gap {:.2}% (<= 5%), all successful {all_success}", worst * 100.0),
    }
}

fn c6_transfer(ws: &Workspace) -> Outcome {
    let doc = read_json(ws, "reports/transfer.json");
    let m = &doc["matrix"];
    let models: Vec<String> = serde_json::from_value(m["models"].clone()).unwrap();
    let kinds: Vec<String> = serde_json::from_value(m["kinds"].clone()).unwrap();
    let src = models.iter().position(|s| s == "desk_gru").unwrap();
    let dst = models.iter().position(|s| s == "desk_lstm").unwrap();
    let clean = m["clean"][dst].as_f64().unwrap();
    let acc = |kind: &str| m["accuracy"][src][dst][kinds.iter().position(|k| k == kind).unwrap()].as_f64().unwrap();
    let (pgd, cw) = (acc("pgd"), acc("cw"));
    Outcome {
        id: 6,
        name: "GRU to LSTM transfer",
        pass: clean - pgd >= 0.20 && clean - cw >= 0.20 && cw <= pgd + 0.03,
        detail: format!("LSTM clean {clean:.3}, GRU-crafted pgd {pgd:.3} (drop {:.3}), cw {cw:.3} (drop {:.3})", clean - pgd, clean - cw),
    }
}

fn c7_shapley(ws: &Workspace) -> Outcome {
    // efficiency of the last-layer signatures on clean and adversarial windows
    let model = ws.primary().unwrap();
    let bg = ws.background(&model).unwrap();
    let mut windows = ws.windows(Split::Test).unwrap();
    for (i, cfg) in ws.cfg.attack.attacks.iter().enumerate() {
        let path = ws.path(&format!("attacks/{i}_{}.csv", cfg.kind));
        windows.extend(read_windows(fs::File::open(path).unwrap()).unwrap().0);
    }
    let sigs = signatures(&model, &windows, &bg, SignatureMode::AllClasses).unwrap();
    let hbar = bg.mean_penultimate(&model).unwrap().to_vec();
    let (w, b) = model.output_layer();
    let (p, c) = (model.spec().penultimate_width(), model.spec().n_classes);
    let mut eff: f64 = 0.0;
    for chunk_start in (0..windows.len()).step_by(256) {
        let chunk = &windows[chunk_start..(chunk_start + 256).min(windows.len())];
        let logits = model.logits_batch(&cybershield::data::batch_tensor(chunk).unwrap()).unwrap();
        for (k, z) in logits.data().chunks(c).enumerate() {
            let s = &sigs[chunk_start + k];
            for class in 0..c {
                let at_base = b.data()[class] as f64 + (0..p).map(|j| hbar[j] * w.data()[j * c + class] as f64).sum::<f64>();
                let sum: f64 = s.values[class * p..(class + 1) * p].iter().sum();
                eff = eff.max((sum - (z[class] as f64 - at_base)).abs());
            }
        }
    }

    // sampled against enumerated values on an 8-feature toy
    let mut rng = SeededRng::new(4);
    let toy = Toy::mlp(2, 8, 6, &mut rng);
    let x = toy_window((0..16).map(|_| rng.uniform() as f32).collect(), 2, 8, Severity::None);
    let base: Vec<f32> = (0..16).map(|_| rng.uniform() as f32).collect();
    let exact = shap_input(&toy, &x, &base, 0, &ShapleyOptions { mode: ShapleyMode::Exact, ..Default::default() }).unwrap();
    let est = shap_input(&toy, &x, &base, 0, &ShapleyOptions { n_perm: 2000, seed: 7, mode: ShapleyMode::Sampled }).unwrap();
    let worst_se = (0..8)
        .map(|f| (est.values[f] - exact.values[f]).abs() / est.std_errors[f].max(1e-12))
        .fold(0.0, f64::max);

    // closed form on a linear model of the time means
    let wts = [0.5f32, -1.0, 2.0, 0.0, 1.5, -0.25];
    let lin = Toy::mean_linear(4, &wts);
    let x = toy_window((0..24).map(|_| rng.uniform() as f32).collect(), 4, 6, Severity::None);
    let base: Vec<f32> = (0..24).map(|_| rng.uniform() as f32).collect();
    let a = shap_input(&lin, &x, &base, 0, &ShapleyOptions { mode: ShapleyMode::Exact, ..Default::default() }).unwrap();
    let mean = |v: &[f32], f: usize| (0..4).map(|t| v[t * 6 + f] as f64).sum::<f64>() / 4.0;
    let closed = (0..6)
        .map(|f| (a.values[f] - wts[f] as f64 * (mean(&x.values, f) - mean(&base, f))).abs())
        .fold(0.0, f64::max);

    Outcome {
        id: 7,
        name: "Shapley correctness",
        pass: eff <= 1e-4 && worst_se <= 3.0 && closed <= 1e-6,
        detail: format!(
            "efficiency gap {eff:.2e} over {} windows (<= 1e-4), sampled vs exact {worst_se:.2} SE (<= 3), linear closed form gap {closed:.1e}",
            windows.len()
        ),
    }
}

fn c8_detection(ws: &Workspace, secs: f64) -> Outcome {
    let doc = read_json(ws, "reports/detection.json");
    let n = doc["samples"].as_u64().unwrap();
    let pos = doc["adversarial"].as_u64().unwrap();
    let acc = |k: &str| doc["detectors"][k]["accuracy"].as_f64().unwrap();
    let (rf, gbt, ffnn) = (acc("rf"), acc("gbt"), acc("ffnn"));
    Outcome {
        id: 8,
        name: "attack detection",
        pass: n >= 400 && 2 * pos == n && gbt >= 0.85 && rf >= 0.80 && ffnn >= 0.80 && secs <= 300.0,
        detail: format!("{n} held-out signatures ({pos} adversarial): gbt {gbt:.3}, rf {rf:.3}, ffnn {ffnn:.3}; {secs:.0}s"),
    }
}

fn c9_closed_loop(ws: &Workspace) -> Outcome {
    let base = events(ws, "baseline");
    let att = events(ws, "attacked");
    let def = events(ws, "defended");
    let live = ws.trace(Split::Live).unwrap();
    let duration = live.len() as f64 / live.sample_rate;
    let aligned = base.len() == att.len() && base.len() == def.len();
    let window: Vec<usize> = (0..att.len()).filter(|&i| att[i].attack_active).collect();
    let disagree = window.iter().filter(|&&i| att[i].predicted != base[i].predicted).count() as f64 / window.len() as f64;
    let alerted = window.iter().filter(|&&i| def[i].alert).count() as f64 / window.len() as f64;
    let agree = |run: &[PipelineEvent]| run.iter().zip(&base).filter(|(e, b)| e.action == b.action).count() as f64 / base.len() as f64;
    let (def_agree, att_agree) = (agree(&def), agree(&att));
    let mut sound = true;
    let mut prev = cybershield::pipeline::MitigationAction::NoMitigation;
    for e in &def {
        if e.verdict == cybershield::pipeline::Verdict::Attack {
            sound &= e.action == prev && e.alert;
        }
        prev = e.action;
    }
    Outcome {
        id: 9,
        name: "closed-loop defense",
        pass: aligned && duration >= 300.0 && disagree >= 0.5 && alerted >= 0.8 && def_agree >= 0.8 && sound,
        detail: format!(
            "{duration:.0}s trace, in-window disagreement {disagree:.3} (>= 0.5), alerted {alerted:.3} (>= 0.8), action agreement defended {def_agree:.3} (>= 0.8) vs attacked {att_agree:.3}, gate sound {sound}"
        ),
    }
}

fn c10_determinism(ws: &Workspace, config: &Path) -> Outcome {
    let log = ws.event_log_path("defended");
    let first = fs::read(&log).unwrap();
    cli(config, &["simulate", "--mode", "defended"]);
    let identical = fs::read(&log).unwrap() == first;

    // a prefix of the live trace replays to the same events
    let model = ws.primary().unwrap();
    let bg = ws.background(&model).unwrap();
    let det = ws.detector(ws.cfg.pipeline.detector).unwrap();
    let mut live = ws.trace(Split::Live).unwrap();
    let keep = 1200.min(live.len());
    let nf = live.n_features();
    live.frames.truncate(keep * nf);
    live.labels.truncate(keep);
    live.timestamps.truncate(keep);
    let schedule = cybershield::pipeline::InjectionSchedule {
        attack: AttackConfig { seed: ws.cfg.seeds.attack, ..ws.cfg.pipeline.schedule.attack.clone() },
        ..ws.cfg.pipeline.schedule.clone()
    };
    let defense = Defense { detector: &det, background: &bg, mode: ws.cfg.explain.signature_mode };
    let run = run_stream(&live, &model, Some(&defense), Some(&schedule), &ws.cfg.pipeline.options).unwrap();
    let full = events(ws, "defended");
    let prefix_ok = run.mode == RunMode::Defended
        && !run.events.is_empty()
        && run.events.len() <= full.len()
        && run.events.iter().zip(&full).all(|(a, b)| PipelineEvent { latency_s: 0.0, ..a.clone() } == *b);
    Outcome {
        id: 10,
        name: "deterministic replay",
        pass: identical && prefix_ok,
        detail: format!(
            "repeated defended run byte-identical {identical}; {keep}-frame prefix ({} decisions) matches full run {prefix_ok}",
            run.events.len()
        ),
    }
}

fn c11_latency(ws: &Workspace) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for mode in ["baseline", "attacked", "defended"] {
        let p95 = read_json(ws, &format!("runs/{mode}.latency.json"))["p95_s"].as_f64().unwrap();
        worst = worst.max(p95);
        parts.push(format!("{mode} {:.2}ms", p95 * 1e3));
    }
    Outcome { id: 11, name: "decision latency", pass: worst <= 0.010, detail: format!("p95 {} (<= 10ms)", parts.join(", ")) }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let out = dir.path().join("out");
    fs::write(&config, serde_json::json!({ "output_dir": out }).to_string()).unwrap();
    let ws = Workspace::new(RunConfig::load(&config, &[]).unwrap());

    let mut results = vec![c1_gradients(), c5_cw_hyperplane()];

    cli(&config, &["synth"]);
    let train_secs = cli(&config, &["train"]);
    cli(&config, &["eval"]);
    results.push(c2_clean_accuracy(&ws, train_secs));
    let attack_secs = cli(&config, &["attack"]);
    results.push(c3_attack_ordering(&ws, attack_secs));
    results.push(c4_budgets(&ws));
    cli(&config, &["transfer"]);
    results.push(c6_transfer(&ws));
    results.push(c7_shapley(&ws));
    let detect_secs = cli(&config, &["sign"]) + cli(&config, &["fit-detector"]) + cli(&config, &["detect-eval"]);
    results.push(c8_detection(&ws, detect_secs));
    cli(&config, &["simulate"]);
    results.push(c9_closed_loop(&ws));
    results.push(c11_latency(&ws));
    results.push(c10_determinism(&ws, &config));

    results.sort_by_key(|o| o.id);
    println!();
    for o in &results {
        println!("criterion {:>2} {:<26} {}  {}", o.id, o.name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<usize> = results.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("\n{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
