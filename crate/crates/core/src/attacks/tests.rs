use super::*;
use crate::classifiers::{ArchSpec, ClassifierModel, TapeModel};
use crate::data::{Severity, TimeSeriesWindow};
use crate::error::Result;
use crate::numerics::{argmax, SeededRng, Tape, Tensor, Var};

/// `logits = flatten(x) · W + b`.
struct Linear {
    t: usize,
    n: usize,
    w: Tensor,
    b: Tensor,
}

impl Linear {
    fn random(t: usize, n: usize, classes: usize, rng: &mut SeededRng) -> Self {
        let d = t * n;
        Linear {
            t,
            n,
            w: Tensor::new(vec![d, classes], (0..d * classes).map(|_| rng.normal() as f32).collect()).unwrap(),
            b: Tensor::new(vec![classes], (0..classes).map(|_| rng.normal() as f32).collect()).unwrap(),
        }
    }

    fn logits_of(&self, values: &[f32]) -> Vec<f64> {
        let c = self.b.len();
        (0..c)
            .map(|k| self.b.data()[k] as f64 + values.iter().enumerate().map(|(j, &v)| v as f64 * self.w.data()[j * c + k] as f64).sum::<f64>())
            .collect()
    }
}

impl TapeModel for Linear {
    fn input_shape(&self) -> (usize, usize) {
        (self.t, self.n)
    }

    fn n_classes(&self) -> usize {
        self.b.len()
    }

    fn logits(&self, tape: &mut Tape<f32>, x: Var) -> Result<Var> {
        let b = tape.value(x).shape()[0];
        let flat = tape.reshape(x, &[b, self.t * self.n])?;
        let w = tape.constant(self.w.clone());
        let bias = tape.constant(self.b.clone());
        let y = tape.matmul(flat, w)?;
        tape.add_bias(y, bias)
    }
}

fn window(values: Vec<f32>, t: usize, n: usize, label: usize, k: usize) -> TimeSeriesWindow {
    TimeSeriesWindow { timestep: t, n_features: n, values, label: Severity::ALL[label], source: "w".into(), end_frame: k }
}

fn random_windows(count: usize, t: usize, n: usize, rng: &mut SeededRng) -> Vec<TimeSeriesWindow> {
    (0..count).map(|k| window((0..t * n).map(|_| rng.uniform() as f32).collect(), t, n, k % 4, k)).collect()
}

/// Relabels windows with the model's own prediction so every one starts correct.
fn self_labeled<M: TapeModel>(m: &M, mut ws: Vec<TimeSeriesWindow>) -> Vec<TimeSeriesWindow> {
    let pred = model_predictions(m, &ws).unwrap();
    for (w, p) in ws.iter_mut().zip(pred) {
        w.label = Severity::ALL[p];
    }
    ws
}

#[test]
fn zero_budget_fgsm_is_identity() {
    let mut rng = SeededRng::new(1);
    let m = ClassifierModel::build(ArchSpec::desk_lstm(6, 2), 1).unwrap();
    let ws = self_labeled(&m, random_windows(5, 6, 2, &mut rng));
    for w in &ws {
        let a = craft_fgsm(&m, w, &AttackConfig::fgsm(0.0)).unwrap();
        assert_eq!(a.window.values, w.values);
        assert!(!a.success);
    }
}

#[test]
fn logistic_model_moves_every_coordinate_down() {
    // class 1 logit = w·mean(x), class 0 logit = 0, so p(class 1) = σ(w·x̄)
    let t = 10;
    let m = Linear {
        t,
        n: 1,
        w: Tensor::new(vec![t, 2], (0..t).flat_map(|_| [0.0, 2.0 / t as f32]).collect()).unwrap(),
        b: Tensor::zeros(&[2]),
    };
    let mut rng = SeededRng::new(4);
    let w = window((0..t).map(|_| rng.uniform_range(0.3, 0.7) as f32).collect(), t, 1, 1, 0);
    let a = craft_fgsm(&m, &w, &AttackConfig::fgsm(0.05)).unwrap();
    for (x, y) in w.values.iter().zip(&a.window.values) {
        assert_eq!(*y, x - 0.05f32);
    }
}

#[test]
fn pgd_without_iterations_is_identity_and_one_big_step_is_fgsm() {
    let mut rng = SeededRng::new(2);
    for seed in 0..5 {
        let m = ClassifierModel::build(ArchSpec::desk_gru(5, 3), seed).unwrap();
        let ws = random_windows(6, 5, 3, &mut rng);
        let none = craft_batch(&m, &ws, &AttackConfig::pgd(0.1, 0.01, 0)).unwrap();
        for (a, w) in none.iter().zip(&ws) {
            assert_eq!(a.window.values, w.values);
        }
        let f = craft_batch(&m, &ws, &AttackConfig::fgsm(0.1)).unwrap();
        let p = craft_batch(&m, &ws, &AttackConfig::pgd(0.1, 0.15, 1)).unwrap();
        for (a, b) in f.iter().zip(&p) {
            for (x, y) in a.window.values.iter().zip(&b.window.values) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn batch_results_match_single_window_results() {
    let mut rng = SeededRng::new(3);
    let m = ClassifierModel::build(ArchSpec::desk_lstm(6, 2), 5).unwrap();
    let ws = random_windows(5, 6, 2, &mut rng);
    for cfg in [AttackConfig::pgd(0.1, 0.02, 5), AttackConfig { cw_iterations: 30, binary_search_steps: 2, ..AttackConfig::cw(1.0, 0.0) }] {
        let batch = craft_batch(&m, &ws, &cfg).unwrap();
        for (w, b) in ws.iter().zip(&batch) {
            assert_eq!(&craft_batch(&m, std::slice::from_ref(w), &cfg).unwrap()[0], b);
        }
        assert_eq!(craft_batch(&m, &ws, &cfg).unwrap(), batch);
    }
}

#[test]
fn random_start_stays_in_budget_and_is_seeded() {
    let mut rng = SeededRng::new(8);
    let m = ClassifierModel::build(ArchSpec::desk_lstm(6, 2), 5).unwrap();
    let ws = random_windows(4, 6, 2, &mut rng);
    let cfg = AttackConfig { random_start: true, seed: 9, ..AttackConfig::pgd(0.05, 0.01, 3) };
    let a = craft_batch(&m, &ws, &cfg).unwrap();
    assert_eq!(a, craft_batch(&m, &ws, &cfg).unwrap());
    assert!(a.iter().all(|x| x.linf <= 0.05 + 1e-6));
    let other = craft_batch(&m, &ws, &AttackConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a, other);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
    #[test]
    fn fgsm_and_pgd_respect_the_budget(seed in 0u64..1000, eps in 0.0f64..0.3, iters in 0usize..6) {
        let mut rng = SeededRng::new(seed);
        let m = ClassifierModel::build(ArchSpec::desk_lstm(5, 2), seed).unwrap();
        let ws = random_windows(4, 5, 2, &mut rng);
        for cfg in [AttackConfig::fgsm(eps), AttackConfig::pgd(eps, eps / 4.0 + 1e-3, iters)] {
            for (a, w) in craft_batch(&m, &ws, &cfg).unwrap().iter().zip(&ws) {
                for (x, y) in w.values.iter().zip(&a.window.values) {
                    proptest::prop_assert!(((y - x).abs() as f64) <= eps + 1e-6);
                    proptest::prop_assert!((0.0..=1.0).contains(y));
                }
            }
        }
    }
}

#[test]
fn cw_with_zero_c_stays_put() {
    let mut rng = SeededRng::new(5);
    let m = Linear::random(4, 3, 4, &mut rng);
    let ws = self_labeled(&m, random_windows(5, 4, 3, &mut rng));
    let cfg = AttackConfig { binary_search_steps: 1, cw_abort_early: false, ..AttackConfig::cw(0.0, 0.0) };
    for a in craft_batch(&m, &ws, &cfg).unwrap() {
        assert!(a.l2 <= 1e-3, "l2 {}", a.l2);
        assert!(!a.success);
    }
}

/// Draws a 2-class linear model and a correctly classified interior point at
/// hyperplane distance `dist`; returns the model and window.
pub(super) fn hyperplane_instance(rng: &mut SeededRng, dist: f64) -> (impl TapeModel, TimeSeriesWindow, f64) {
    let (t, n) = (4, 3);
    let mut m = Linear::random(t, n, 2, rng);
    let x: Vec<f32> = (0..t * n).map(|_| rng.uniform_range(0.35, 0.65) as f32).collect();
    let z = m.logits_of(&x);
    let dw: f64 = (0..t * n).map(|j| (m.w.data()[j * 2] - m.w.data()[j * 2 + 1]) as f64).map(|v| v * v).sum::<f64>().sqrt();
    // shift the class-0 bias so its margin is exactly dist·‖Δw‖
    m.b.data_mut()[0] += (dist * dw - (z[0] - z[1])) as f32;
    let z = m.logits_of(&x);
    let expected = (z[0] - z[1]) / dw;
    (m, window(x, t, n, 0, 0), expected)
}

#[test]
fn cw_reaches_the_hyperplane_distance() {
    let mut rng = SeededRng::new(6);
    for _ in 0..5 {
        let dist = rng.uniform_range(0.05, 0.2);
        let (m, w, expected) = hyperplane_instance(&mut rng, dist);
        let a = craft_cw(&m, &w, &AttackConfig::cw(1.0, 0.0)).unwrap();
        assert!(a.success);
        assert!((a.l2 - expected).abs() <= 0.05 * expected, "l2 {} vs {expected}", a.l2);
    }
}

#[test]
fn cw_success_flags_are_genuine() {
    let mut rng = SeededRng::new(7);
    let cfg = AttackConfig { cw_iterations: 100, binary_search_steps: 3, cw_learning_rate: 0.05, ..AttackConfig::cw(1.0, 0.0) };
    let m = ClassifierModel::build(ArchSpec::desk_lstm(6, 2), 3).unwrap();
    let ws = self_labeled(&m, random_windows(8, 6, 2, &mut rng));
    for (a, w) in craft_batch(&m, &ws, &cfg).unwrap().iter().zip(&ws) {
        assert_eq!(a.success, m.predict_label(&a.window).unwrap() != w.label);
        assert!(a.window.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let lin = Linear::random(6, 2, 4, &mut rng);
    let ws = self_labeled(&lin, random_windows(20, 6, 2, &mut rng));
    let adv = craft_batch(&lin, &ws, &cfg).unwrap();
    for (a, w) in adv.iter().zip(&ws) {
        assert_eq!(a.success, argmax(&lin.logits_of(&a.window.values)) != w.label.index());
    }
    assert!(adv.iter().filter(|a| a.success).count() >= 10);
}

#[test]
fn targeting_the_true_class_keeps_accuracy() {
    let mut rng = SeededRng::new(9);
    let m = Linear::random(4, 3, 4, &mut rng);
    let ws = self_labeled(&m, random_windows(40, 4, 3, &mut rng));
    for w in &ws {
        let cfg = AttackConfig { target: Some(w.label), ..AttackConfig::fgsm(0.1) };
        let a = craft_fgsm(&m, w, &cfg).unwrap();
        assert_eq!(argmax(&m.logits_of(&a.window.values)), w.label.index());
        assert!(a.success);
    }
}

#[test]
fn zero_budget_evaluation_equals_clean() {
    let mut rng = SeededRng::new(10);
    let m = ClassifierModel::build(ArchSpec::desk_lstm(6, 2), 4).unwrap();
    let ws = random_windows(12, 6, 2, &mut rng);
    let clean = crate::classifiers::evaluate(&m, &ws).unwrap();
    for cfg in [AttackConfig::fgsm(0.0), AttackConfig::pgd(0.0, 0.01, 5)] {
        let (ev, _) = evaluate_under_attack(&m, &ws, &cfg).unwrap();
        assert_eq!(ev.metrics, clean);
        assert_eq!(ev.max_linf, 0.0);
    }
}

#[test]
fn transfer_degenerate_cases() {
    let mut rng = SeededRng::new(11);
    let a = ClassifierModel::build(ArchSpec::desk_lstm(6, 2), 4).unwrap();
    let b = ClassifierModel::build(ArchSpec::desk_lstm(6, 2), 4).unwrap();
    let ws = random_windows(12, 6, 2, &mut rng);
    let cfgs = [AttackConfig::fgsm(0.1), AttackConfig::pgd(0.1, 0.01, 5)];
    let single = transfer_matrix(&[("a", &a)], &ws, &cfgs).unwrap();
    for (k, cfg) in cfgs.iter().enumerate() {
        let (ev, _) = evaluate_under_attack(&a, &ws, cfg).unwrap();
        assert_eq!(single.get(0, 0, k), ev.metrics.accuracy);
    }
    let pair = transfer_matrix(&[("a", &a), ("b", &b)], &ws, &cfgs).unwrap();
    for k in 0..2 {
        assert_eq!(pair.get(0, 1, k), pair.get(0, 0, k));
        assert_eq!(pair.get(1, 0, k), pair.get(1, 1, k));
    }
    let other = ClassifierModel::build(ArchSpec::desk_lstm(7, 2), 4).unwrap();
    assert!(transfer_matrix(&[("a", &a), ("c", &other)], &ws, &cfgs).is_err());
}

#[test]
fn adversarial_set_files() {
    let mut rng = SeededRng::new(12);
    let m = ClassifierModel::build(ArchSpec::desk_lstm(6, 2), 4).unwrap();
    let ws = random_windows(3, 6, 2, &mut rng);
    let cfg = AttackConfig::fgsm(0.1);
    let adv = craft_batch(&m, &ws, &cfg).unwrap();
    let mut csv = Vec::new();
    let names = vec!["a".to_string(), "b".to_string()];
    let side = write_adversarial_set(&adv, &ws, &names, &cfg, serde_json::json!({"seed": 1}), &mut csv).unwrap();
    let (back, _) = crate::data::read_windows(csv.as_slice()).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back[1].values, adv[1].window.values);
    assert_eq!(side["windows"].as_array().unwrap().len(), 3);
    assert_eq!(side["attack"]["kind"], "fgsm");
}
