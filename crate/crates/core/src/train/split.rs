//! Hold-out splitting and k-fold assignment, optionally grouped by GIF.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::TrainError;
use crate::label::Label;
use crate::preprocess::Split;
use crate::seed::{derive_seed, rng_from};

/// What the splitters need to know about a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitKey<'a> {
    pub gif_id: &'a str,
    pub label: Label,
}

/// `(train, val, test)` sizes for `n` samples: the test share is rounded up,
/// the validation share down, and train takes the rest.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    let test = ((ratios[2] * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let val = ((ratios[1] * n as f64) + 1e-9).floor() as usize;
    let test = test.min(n);
    let val = val.min(n - test);
    (n - test - val, val, test)
}

/// Splits `total` across labels in proportion to `per_label`, largest
/// remainder first (ties to the lower label).
fn apportion(total: usize, per_label: &[usize], caps: &[usize]) -> Vec<usize> {
    let n: usize = per_label.iter().sum();
    if n == 0 {
        return vec![0; per_label.len()];
    }
    let exact: Vec<f64> = per_label.iter().map(|&c| total as f64 * c as f64 / n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().zip(caps).map(|(e, &cap)| (e.floor() as usize).min(cap)).collect();
    let mut order: Vec<usize> = (0..per_label.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(quota.iter().sum());
    while left > 0 {
        let mut progressed = false;
        for &i in &order {
            if left > 0 && quota[i] < caps[i] {
                quota[i] += 1;
                left -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quota
}

fn label_counts(keys: &[SplitKey<'_>]) -> Vec<usize> {
    let mut counts = vec![0; Label::ALL.len()];
    for k in keys {
        counts[k.label.index()] += 1;
    }
    counts
}

/// Assigns each sample to train, val or test, stratified by label.
pub fn split_dataset(
    keys: &[SplitKey<'_>],
    ratios: [f64; 3],
    seed: u64,
    group_by_gif: bool,
) -> Result<Vec<Split>, TrainError> {
    super::validate_ratios(ratios)?;
    if keys.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let assignment = if group_by_gif {
        split_grouped(keys, ratios, seed)
    } else {
        split_ungrouped(keys, ratios, seed)
    };
    for (split, name) in [(Split::Train, "train"), (Split::Val, "val"), (Split::Test, "test")] {
        if !assignment.contains(&split) {
            return Err(TrainError::EmptySplit(name));
        }
    }
    Ok(assignment)
}

fn split_ungrouped(keys: &[SplitKey<'_>], ratios: [f64; 3], seed: u64) -> Vec<Split> {
    let (_, val_n, test_n) = split_sizes(keys.len(), ratios);
    let counts = label_counts(keys);
    let test_q = apportion(test_n, &counts, &counts);
    let remaining: Vec<usize> = counts.iter().zip(&test_q).map(|(c, t)| c - t).collect();
    let val_q = apportion(val_n, &counts, &remaining);

    let mut out = vec![Split::Train; keys.len()];
    for label in Label::ALL {
        let li = label.index();
        let mut idx: Vec<usize> = (0..keys.len()).filter(|&i| keys[i].label == label).collect();
        idx.shuffle(&mut rng_from(derive_seed("split", &[&seed, &label.as_str()])));
        for (pos, &i) in idx.iter().enumerate() {
            out[i] = if pos < test_q[li] {
                Split::Test
            } else if pos < test_q[li] + val_q[li] {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    out
}

/// GIF groups in first-seen order: `(gif_id, label, member indices)`.
fn groups<'a>(keys: &[SplitKey<'a>]) -> Vec<(&'a str, Label, Vec<usize>)> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out: Vec<(&str, Label, Vec<usize>)> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        let g = *index.entry(k.gif_id).or_insert_with(|| {
            out.push((k.gif_id, k.label, Vec::new()));
            out.len() - 1
        });
        out[g].2.push(i);
    }
    out
}

fn split_grouped(keys: &[SplitKey<'_>], ratios: [f64; 3], seed: u64) -> Vec<Split> {
    let (_, val_n, test_n) = split_sizes(keys.len(), ratios);
    let counts = label_counts(keys);
    let test_q = apportion(test_n, &counts, &counts);
    let remaining: Vec<usize> = counts.iter().zip(&test_q).map(|(c, t)| c - t).collect();
    let val_q = apportion(val_n, &counts, &remaining);

    let all = groups(keys);
    let mut group_split = vec![Split::Train; all.len()];
    for label in Label::ALL {
        let li = label.index();
        let mut members: Vec<usize> = (0..all.len()).filter(|&g| all[g].1 == label).collect();
        members.shuffle(&mut rng_from(derive_seed("split", &[&seed, &label.as_str()])));
        for (split, target) in [(Split::Test, test_q[li]), (Split::Val, val_q[li])] {
            let mut filled = 0usize;
            for &g in &members {
                if group_split[g] != Split::Train {
                    continue;
                }
                let size = all[g].2.len();
                if (filled + size).abs_diff(target) < filled.abs_diff(target) {
                    group_split[g] = split;
                    filled += size;
                }
            }
        }
    }
    // Greedy fill can leave a small split empty when groups are coarse;
    // give it the smallest group still in train, if train keeps one.
    for split in [Split::Test, Split::Val] {
        if group_split.contains(&split) {
            continue;
        }
        let train_groups: Vec<usize> = (0..all.len()).filter(|&g| group_split[g] == Split::Train).collect();
        if let Some(&g) = train_groups.iter().min_by_key(|&&g| (all[g].2.len(), g)) {
            group_split[g] = split;
        }
    }
    let mut out = vec![Split::Train; keys.len()];
    for (g, (_, _, members)) in all.iter().enumerate() {
        for &i in members {
            out[i] = group_split[g];
        }
    }
    out
}

/// Fold index per sample. Every fold gets at least one sample.
pub fn kfold_assign(keys: &[SplitKey<'_>], k: usize, seed: u64, group_by_gif: bool) -> Result<Vec<usize>, TrainError> {
    if k < 2 {
        return Err(TrainError::Config("k_folds must be >= 2".into()));
    }
    if keys.len() < k {
        return Err(TrainError::TooFewForFolds { samples: keys.len(), k });
    }
    if !group_by_gif {
        // Label-major order, round-robin: stratified and sizes within one.
        let mut order = Vec::with_capacity(keys.len());
        for label in Label::ALL {
            let mut idx: Vec<usize> = (0..keys.len()).filter(|&i| keys[i].label == label).collect();
            idx.shuffle(&mut rng_from(derive_seed("kfold", &[&seed, &label.as_str()])));
            order.extend(idx);
        }
        let mut out = vec![0; keys.len()];
        for (pos, i) in order.into_iter().enumerate() {
            out[i] = pos % k;
        }
        return Ok(out);
    }

    let mut all = groups(keys);
    if all.len() < k {
        return Err(TrainError::TooFewForFolds { samples: all.len(), k });
    }
    all.shuffle(&mut rng_from(derive_seed("kfold", &[&seed])));
    // Largest group first, into the lightest fold.
    all.sort_by_key(|g| std::cmp::Reverse(g.2.len()));
    let mut sizes = vec![0usize; k];
    let mut per_label = vec![vec![0usize; Label::ALL.len()]; k];
    let mut out = vec![0; keys.len()];
    for (_, label, members) in &all {
        let fold = (0..k)
            .min_by_key(|&f| (sizes[f], per_label[f][label.index()], f))
            .expect("k >= 2");
        sizes[fold] += members.len();
        per_label[fold][label.index()] += members.len();
        for &i in members {
            out[i] = fold;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{HashMap, HashSet};

    fn keys_from(gifs: &[(String, Label)]) -> Vec<SplitKey<'_>> {
        gifs.iter().map(|(g, l)| SplitKey { gif_id: g, label: *l }).collect()
    }

    #[test]
    fn sizes_for_sixteen_thousand() {
        assert_eq!(split_sizes(16_875, [0.8, 0.1, 0.1]), (13_500, 1_687, 1_688));
        assert_eq!(split_sizes(10, [0.8, 0.1, 0.1]), (8, 1, 1));
        assert_eq!(split_sizes(100, [0.8, 0.1, 0.1]), (80, 10, 10));
    }

    #[test]
    fn ungrouped_full_scale_sizes() {
        let ids: Vec<(String, Label)> = (0..16_875)
            .map(|i| (format!("g{}", i / 4), if i % 9 < 5 { Label::Cyberbullying } else { Label::NonCyberbullying }))
            .collect();
        let keys = keys_from(&ids);
        let s = split_dataset(&keys, [0.8, 0.1, 0.1], 1, false).unwrap();
        let count = |x| s.iter().filter(|&&v| v == x).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (13_500, 1_687, 1_688));
    }

    #[test]
    fn single_gif_cannot_be_grouped_into_three_splits() {
        let ids: Vec<(String, Label)> = (0..10).map(|_| ("only".to_string(), Label::Cyberbullying)).collect();
        assert!(matches!(
            split_dataset(&keys_from(&ids), [0.8, 0.1, 0.1], 0, true),
            Err(TrainError::EmptySplit(_))
        ));
    }

    #[test]
    fn loo_folds() {
        let ids: Vec<(String, Label)> =
            (0..6).map(|i| (format!("g{i}"), if i < 3 { Label::Cyberbullying } else { Label::NonCyberbullying })).collect();
        let folds = kfold_assign(&keys_from(&ids), 6, 0, false).unwrap();
        let mut sorted = folds.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn table_four_pool_fold_sizes() {
        let ids: Vec<(String, Label)> = (0..4128)
            .map(|i| (format!("g{i}"), if i < 2050 { Label::Cyberbullying } else { Label::NonCyberbullying }))
            .collect();
        let folds = kfold_assign(&keys_from(&ids), 5, 3, false).unwrap();
        let mut sizes = [0usize; 5];
        for f in folds {
            sizes[f] += 1;
        }
        assert_eq!(sizes, [826, 826, 826, 825, 825]);
    }

    #[test]
    fn brute_force_each_sample_validated_once() {
        let ids: Vec<(String, Label)> = (0..20)
            .map(|i| (format!("g{}", i / 2), if i % 3 == 0 { Label::Cyberbullying } else { Label::NonCyberbullying }))
            .collect();
        let keys = keys_from(&ids);
        for grouped in [false, true] {
            let folds = kfold_assign(&keys, 4, 11, grouped).unwrap();
            for i in 0..keys.len() {
                let hits = (0..4).filter(|&f| folds[i] == f).count();
                assert_eq!(hits, 1);
            }
        }
    }

    fn toy(gif_sizes: &[usize], seed: u64) -> Vec<(String, Label)> {
        let mut out = Vec::new();
        for (g, &n) in gif_sizes.iter().enumerate() {
            let label = if (g as u64 + seed).is_multiple_of(3) { Label::Cyberbullying } else { Label::NonCyberbullying };
            for _ in 0..n {
                out.push((format!("gif{g}"), label));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn split_is_a_deterministic_partition(
            sizes in proptest::collection::vec(1usize..12, 12..40),
            seed in 0u64..1000,
            grouped in any::<bool>(),
        ) {
            let ids = toy(&sizes, seed);
            let keys = keys_from(&ids);
            let a = split_dataset(&keys, [0.8, 0.1, 0.1], seed, grouped);
            let b = split_dataset(&keys, [0.8, 0.1, 0.1], seed, grouped);
            prop_assert_eq!(a.is_ok(), b.is_ok());
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.len(), keys.len());
                prop_assert!(a.iter().all(|s| *s != Split::Unassigned));
                if grouped {
                    let mut seen: HashMap<&str, Split> = HashMap::new();
                    for (k, s) in keys.iter().zip(&a) {
                        prop_assert_eq!(*seen.entry(k.gif_id).or_insert(*s), *s);
                    }
                }
            }
        }

        #[test]
        fn grouped_folds_keep_gifs_whole(
            sizes in proptest::collection::vec(1usize..10, 10..40),
            seed in 0u64..1000,
        ) {
            let ids = toy(&sizes, seed);
            let keys = keys_from(&ids);
            let folds = kfold_assign(&keys, 5, seed, true).unwrap();
            let mut fold_of: HashMap<&str, usize> = HashMap::new();
            for (k, f) in keys.iter().zip(&folds) {
                prop_assert_eq!(*fold_of.entry(k.gif_id).or_insert(*f), *f);
            }
            let used: HashSet<usize> = folds.iter().copied().collect();
            prop_assert_eq!(used.len(), 5);
            let mut totals = [0usize; 5];
            for f in &folds {
                totals[*f] += 1;
            }
            let max_group = *sizes.iter().max().unwrap();
            let spread = totals.iter().max().unwrap() - totals.iter().min().unwrap();
            prop_assert!(spread <= max_group);
        }
    }
}
