use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

use super::window::TimeSeriesWindow;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Train / validation / test fractions; must sum to 1.
    pub fractions: [f64; 3],
    pub seed: u64,
    /// Apply the fractions within each class separately.
    pub stratified: bool,
    /// Keep all windows of one source trace in the same split.
    pub group_by_source: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { fractions: [0.8, 0.1, 0.1], seed: 0, stratified: true, group_by_source: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TimeSeriesWindow>,
    pub val: Vec<TimeSeriesWindow>,
    pub test: Vec<TimeSeriesWindow>,
}

fn check_fractions(f: &[f64; 3]) -> Result<()> {
    if let Some(bad) = f.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::config(format!("split fraction {bad} is negative")));
    }
    let total: f64 = f.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions sum to {total}, not 1")));
    }
    Ok(())
}

/// Splits `n` items into three counts by largest remainder; ties go to the earlier split.
fn apportion(n: usize, f: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = f.iter().map(|v| v * n as f64).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        counts[k] = (exact[k] + 1e-9).floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if f[k] > 0.0 {
            counts[k] += 1;
            left -= 1;
        }
    }
    counts
}

/// Index-level split. `labels` drive stratification; `groups`, when given,
/// are kept intact. Returned index lists are sorted.
pub fn split_indices(labels: &[usize], groups: Option<&[String]>, cfg: &SplitConfig) -> Result<[Vec<usize>; 3]> {
    check_fractions(&cfg.fractions)?;
    if let Some(g) = groups {
        if g.len() != labels.len() {
            return Err(Error::contract("group list length differs from label list"));
        }
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut out: [Vec<usize>; 3] = Default::default();

    // strata: one per class when stratified, else a single stratum
    let n_strata = if cfg.stratified { labels.iter().max().map_or(0, |m| m + 1) } else { 1 };
    for s in 0..n_strata.max(1) {
        let members: Vec<usize> =
            (0..labels.len()).filter(|&i| !cfg.stratified || labels[i] == s).collect();
        if members.is_empty() {
            continue;
        }
        match groups {
            None => {
                let mut shuffled = members;
                rng.shuffle(&mut shuffled);
                let counts = apportion(shuffled.len(), &cfg.fractions);
                let mut it = shuffled.into_iter();
                for k in 0..3 {
                    out[k].extend(it.by_ref().take(counts[k]));
                }
            }
            Some(g) => {
                // whole groups, taken in shuffled order, fill the targets in turn
                let mut names: Vec<&String> = members.iter().map(|&i| &g[i]).collect();
                names.sort();
                names.dedup();
                rng.shuffle(&mut names);
                let targets = apportion(members.len(), &cfg.fractions);
                let mut filled = [0usize; 3];
                for name in names {
                    let group: Vec<usize> = members.iter().copied().filter(|&i| &g[i] == name).collect();
                    let k = (0..3)
                        .find(|&k| filled[k] < targets[k])
                        .unwrap_or_else(|| (0..3).rev().find(|&k| cfg.fractions[k] > 0.0).unwrap_or(0));
                    filled[k] += group.len();
                    out[k].extend(group);
                }
            }
        }
    }
    for part in &mut out {
        part.sort_unstable();
    }
    Ok(out)
}

/// Splits windows into train / validation / test.
pub fn split(windows: &[TimeSeriesWindow], cfg: &SplitConfig) -> Result<DatasetSplit> {
    let labels: Vec<usize> = windows.iter().map(|w| w.label.index()).collect();
    let groups: Vec<String> = windows.iter().map(|w| w.source.clone()).collect();
    let idx = split_indices(&labels, cfg.group_by_source.then_some(groups.as_slice()), cfg)?;
    let take = |ix: &[usize]| ix.iter().map(|&i| windows[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit { train: take(&idx[0]), val: take(&idx[1]), test: take(&idx[2]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Severity;

    fn windows(counts: &[usize]) -> Vec<TimeSeriesWindow> {
        let mut out = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for k in 0..n {
                out.push(TimeSeriesWindow {
                    timestep: 1,
                    n_features: 1,
                    values: vec![k as f32],
                    label: Severity::from_index(c).unwrap(),
                    source: format!("trace{}", k % 7),
                    end_frame: out.len(),
                });
            }
        }
        out
    }

    fn class_counts(ws: &[TimeSeriesWindow]) -> [usize; 4] {
        let mut c = [0; 4];
        for w in ws {
            c[w.label.index()] += 1;
        }
        c
    }

    #[test]
    fn everything_to_train() {
        let ws = windows(&[10, 5, 3, 2]);
        let s = split(&ws, &SplitConfig { fractions: [1.0, 0.0, 0.0], ..Default::default() }).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (20, 0, 0));
    }

    #[test]
    fn eighty_ten_ten() {
        let ws = windows(&[100]);
        let s = split(&ws, &SplitConfig { stratified: false, ..Default::default() }).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
    }

    #[test]
    fn stratified_half_train() {
        let ws = windows(&[40, 30, 20, 10]);
        let s = split(&ws, &SplitConfig { fractions: [0.5, 0.25, 0.25], ..Default::default() }).unwrap();
        assert_eq!(class_counts(&s.train), [20, 15, 10, 5]);
    }

    #[test]
    fn bad_fractions() {
        let ws = windows(&[4]);
        assert!(matches!(split(&ws, &SplitConfig { fractions: [1.2, -0.2, 0.0], ..Default::default() }), Err(Error::Config(_))));
        assert!(split(&ws, &SplitConfig { fractions: [0.5, 0.2, 0.2], ..Default::default() }).is_err());
    }

    #[test]
    fn groups_never_straddle_splits() {
        let ws = windows(&[50, 50, 50, 50]);
        let cfg = SplitConfig { stratified: false, group_by_source: true, fractions: [0.6, 0.2, 0.2], seed: 3 };
        let s = split(&ws, &cfg).unwrap();
        let sources = |v: &[TimeSeriesWindow]| v.iter().map(|w| w.source.clone()).collect::<std::collections::BTreeSet<_>>();
        let (a, b, c) = (sources(&s.train), sources(&s.val), sources(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 200);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(50))]
        #[test]
        fn disjoint_and_exhaustive(seed in proptest::prelude::any::<u64>(), stratified in proptest::prelude::any::<bool>(), grouped in proptest::prelude::any::<bool>()) {
            let labels: Vec<usize> = (0..97).map(|i| (i * 7 + i / 5) % 4).collect();
            let groups: Vec<String> = (0..97).map(|i| format!("g{}", i % 11)).collect();
            let cfg = SplitConfig { fractions: [0.7, 0.15, 0.15], seed, stratified, group_by_source: grouped };
            let parts = split_indices(&labels, grouped.then_some(groups.as_slice()), &cfg).unwrap();
            let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..97).collect::<Vec<_>>());
            if stratified && !grouped {
                for c in 0..4 {
                    let total = labels.iter().filter(|&&l| l == c).count() as f64;
                    let got = parts[0].iter().filter(|&&i| labels[i] == c).count() as f64;
                    proptest::prop_assert!((got - 0.7 * total).abs() <= 1.0);
                }
            }
        }
    }
}
