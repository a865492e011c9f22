use std::collections::{BTreeMap, BTreeSet};

use icufeat::pathfeat::{FeatureMode, FeatureRow, FeatureTable};
use icufeat::treelab::{fit_tree, leave_two_out_cv};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

struct Builder {
    table: FeatureTable,
}

impl Builder {
    fn new(features: usize) -> Self {
        let columns = (0..features).map(|j| format!("f{j}")).collect();
        Self {
            table: FeatureTable::new(FeatureMode::Mid, columns, "acceptance".into()),
        }
    }

    fn push(&mut self, group: &str, class: u8, source_of: Option<&str>, flagged: bool, values: Vec<f64>) -> String {
        let id = format!("img{:04}", self.table.rows.len());
        self.table.rows.push(FeatureRow {
            image_id: id.clone(),
            group_id: group.to_string(),
            class_label: class,
            augmentation_of: source_of.map(str::to_string),
            flagged,
            values,
        });
        id
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Fold bookkeeping on random group structures, recomputed from the table.
fn fold_structure(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let groups = [rng.gen_range(2..=12), rng.gen_range(2..=12)];
    let mut b = Builder::new(3);
    let mut group_class = BTreeMap::new();
    for (class, &count) in groups.iter().enumerate() {
        for g in 0..count {
            let group = format!("c{class}g{g}");
            group_class.insert(group.clone(), class as u8);
            for _ in 0..rng.gen_range(1..=3) {
                let flagged = rng.gen_bool(0.1);
                let v = noise(rng, 3);
                let src = b.push(&group, class as u8, None, flagged, v.clone());
                for _ in 0..rng.gen_range(0..=2) {
                    b.push(&group, class as u8, Some(&src), flagged, v.clone());
                }
            }
        }
    }
    // Every group needs at least one usable source row.
    for (group, &class) in &group_class {
        b.push(group, class, None, false, noise(rng, 3));
    }
    let t = &b.table;
    let cv = leave_two_out_cv(t, 1, 3, 0).map_err(|e| e.to_string())?;
    let folds = cv.per_fold.as_ref().ok_or("no per-fold results")?;
    let expected = groups[0].min(groups[1]);
    ensure(folds.len() == expected, || {
        format!("{groups:?} groups gave {} folds", folds.len())
    })?;

    let smaller = usize::from(groups[1] < groups[0]);
    let mut seen = [BTreeSet::new(), BTreeSet::new()];
    for f in folds {
        for (class, g) in f.held_out_groups.iter().enumerate() {
            ensure(group_class.get(g) == Some(&(class as u8)), || {
                format!("fold {} holds out {g} as class {class}", f.fold)
            })?;
            ensure(seen[class].insert(g.clone()), || format!("group {g} held out twice"))?;
        }
        let held: BTreeSet<&String> = f.held_out_groups.iter().collect();
        let train = t
            .rows
            .iter()
            .filter(|r| !r.flagged && !held.contains(&r.group_id))
            .count();
        ensure(f.train_rows == train, || {
            format!("fold {} trains on {} rows, expected {train}", f.fold, f.train_rows)
        })?;
        let want: BTreeSet<&str> = t
            .rows
            .iter()
            .filter(|r| !r.flagged && r.is_source() && held.contains(&r.group_id))
            .map(|r| r.image_id.as_str())
            .collect();
        let got: BTreeSet<&str> = f.scored.iter().map(|s| s.image_id.as_str()).collect();
        ensure(got == want, || {
            format!("fold {} scored {got:?}, expected {want:?}", f.fold)
        })?;
    }
    ensure(seen[smaller].len() == groups[smaller], || {
        "smaller class not fully covered".into()
    })?;
    Ok(expected)
}

/// Each group gets a unique feature value shared by all of its rows and a
/// random label. A leaf-per-value tree memorizes the training set, so any
/// held-out row reaching training would be predicted correctly.
fn memorization_probe() -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1EA);
    let mut classes: Vec<u8> = [0u8, 1].iter().flat_map(|&c| std::iter::repeat_n(c, 30)).collect();
    classes.shuffle(&mut rng);
    let mut b = Builder::new(1);
    for (g, &class) in classes.iter().enumerate() {
        let group = format!("p{g}");
        let v = vec![g as f64];
        let src = b.push(&group, class, None, false, v.clone());
        for _ in 0..4 {
            b.push(&group, class, Some(&src), false, v.clone());
        }
    }
    let whole = fit_tree(&b.table, 1, 16, 0).map_err(|e| e.to_string())?;
    let preds = whole.predict_table(&b.table).map_err(|e| e.to_string())?;
    let fit_acc = preds
        .iter()
        .zip(&b.table.rows)
        .filter(|(p, r)| **p == r.class_label)
        .count() as f64
        / preds.len() as f64;
    let cv = leave_two_out_cv(&b.table, 1, 16, 0).map_err(|e| e.to_string())?;
    Ok((fit_acc, cv.accuracy))
}

fn separable() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E9);
    let mut b = Builder::new(2);
    for class in 0..2u8 {
        for g in 0..25 {
            let group = format!("c{class}g{g}");
            for _ in 0..2 {
                let v = vec![
                    f64::from(class) * 10.0 + rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                ];
                b.push(&group, class, None, false, v);
            }
        }
    }
    let cv = leave_two_out_cv(&b.table, 2, 2, 0).map_err(|e| e.to_string())?;
    Ok(cv.accuracy)
}

fn random_labels(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<u8> = [0u8, 1].iter().flat_map(|&c| std::iter::repeat_n(c, 40)).collect();
    classes.shuffle(&mut rng);
    let mut b = Builder::new(3);
    for (g, &class) in classes.iter().enumerate() {
        let v = noise(&mut rng, 3);
        b.push(&format!("p{g}"), class, None, false, v);
    }
    Ok(leave_two_out_cv(&b.table, 5, 3, seed)
        .map_err(|e| e.to_string())?
        .accuracy)
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF01D);
    let mut folds = 0;
    for k in 0..40 {
        folds += fold_structure(&mut rng).map_err(|e| format!("structure {k}: {e}"))?;
    }

    let (fit_acc, probe_acc) = memorization_probe()?;
    ensure(fit_acc == 1.0, || format!("memorizing tree fits only {fit_acc}"))?;
    ensure(probe_acc < 0.8, || {
        format!("held-out groups predicted at {probe_acc}; training leaks")
    })?;

    let sep = separable()?;
    ensure(sep == 1.0, || format!("separable data scored {sep}"))?;

    let accs: Vec<f64> = (0..20).map(random_labels).collect::<Result<_, _>>()?;
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    ensure((mean - 0.5).abs() <= 0.1, || {
        format!("random labels scored {mean:.3} on average")
    })?;

    Ok(format!(
        "{folds} folds audited, leak probe {probe_acc:.2}, separable {sep:.1}, random-label mean {mean:.3}"
    ))
}
