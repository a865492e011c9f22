use icufeat::treelab::{fit_matrix, TreeModel, TreeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

/// Values on a quarter grid so ties are common and every midpoint is exact.
fn grid_value(rng: &mut ChaCha8Rng, span: i32) -> f64 {
    f64::from(rng.gen_range(-span..=span)) / 4.0
}

fn random_table(rng: &mut ChaCha8Rng, n: usize, f: usize, continuous: bool) -> Table {
    let span = rng.gen_range(1..=40);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..f)
                .map(|_| {
                    if continuous {
                        rng.gen_range(-10.0..10.0)
                    } else {
                        grid_value(rng, span)
                    }
                })
                .collect()
        })
        .collect();
    let noise = rng.gen_range(0.0..1.0);
    let mut labels: Vec<u8> = rows
        .iter()
        .map(|r| u8::from(r[0] + rng.gen_range(-noise..=noise) * 10.0 > 0.0))
        .collect();
    // Both classes must be present.
    labels[0] = 0;
    labels[n - 1] = 1;
    Table {
        columns: (0..f).map(|j| format!("f{j}")).collect(),
        rows,
        labels,
    }
}

fn leaf_of(model: &TreeModel, row: &[f64]) -> usize {
    let mut i = 0;
    loop {
        let node = &model.nodes[i];
        match (&node.split, node.left, node.right) {
            (None, _, _) => return i,
            (Some(s), Some(l), Some(r)) => i = if row[s.feature_index] <= s.threshold { l } else { r },
            _ => panic!("node {i} has a split but is missing a child"),
        }
    }
}

/// Route every training row independently and check leaf sizes, stored
/// counts and depths.
fn audit(model: &TreeModel, t: &Table, params: &TreeParams) -> Result<(), String> {
    let mut routed = vec![[0usize; 2]; model.nodes.len()];
    for (row, &label) in t.rows.iter().zip(&t.labels) {
        routed[leaf_of(model, row)][label as usize] += 1;
    }
    for (i, node) in model.nodes.iter().enumerate() {
        let mut depth = 0;
        let mut at = i;
        while let Some(p) = model.nodes[at].parent {
            depth += 1;
            at = p;
        }
        ensure(at == 0, || format!("node {i} does not descend from the root"))?;
        ensure(depth == node.depth, || {
            format!("node {i} claims depth {} but sits at {depth}", node.depth)
        })?;
        ensure(depth <= params.max_depth, || {
            format!("node {i} at depth {depth} > {}", params.max_depth)
        })?;
        if node.split.is_none() {
            let n = routed[i][0] + routed[i][1];
            ensure(n >= params.min_leaf, || {
                format!("leaf {i} holds {n} rows < {}", params.min_leaf)
            })?;
            ensure(routed[i] == node.class_histogram && n == node.sample_count, || {
                format!(
                    "leaf {i} stores {:?} but receives {:?}",
                    node.class_histogram, routed[i]
                )
            })?;
        }
    }
    Ok(())
}

pub fn constraints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0A7);
    let mut leaves = 0;
    for k in 0..200 {
        let params = TreeParams {
            min_leaf: rng.gen_range(1..=25),
            max_depth: rng.gen_range(1..=7),
        };
        let n = rng.gen_range(2 * params.min_leaf.max(2)..=300);
        let (f, continuous) = (rng.gen_range(1..=8), rng.gen_bool(0.5));
        let t = random_table(&mut rng, n, f, continuous);
        let model = fit_matrix(&t.columns, &t.rows, &t.labels, &params, k).map_err(|e| format!("table {k}: {e}"))?;
        audit(&model, &t, &params).map_err(|e| format!("table {k} ({n} rows, {params:?}): {e}"))?;
        leaves += model.leaves().count();
    }
    let oracle_tables = 500;
    for k in 0..oracle_tables {
        depth_one_matches_oracle(&mut rng).map_err(|e| format!("oracle table {k}: {e}"))?;
    }
    Ok(format!(
        "200 audited trees ({leaves} leaves), {oracle_tables} depth-1 oracle tables"
    ))
}

/// Weighted Gini of a split as the exact fraction `num / den`.
#[derive(Clone, Copy)]
struct Frac {
    num: i128,
    den: i128,
}

impl Frac {
    fn split(left: [i128; 2], right: [i128; 2]) -> Self {
        let nl = left[0] + left[1];
        let nr = right[0] + right[1];
        let impurity_l = nl * nl - left[0] * left[0] - left[1] * left[1];
        let impurity_r = nr * nr - right[0] * right[0] - right[1] * right[1];
        Frac {
            num: nr * impurity_l + nl * impurity_r,
            den: (nl + nr) * nl * nr,
        }
    }

    fn less(self, other: Frac) -> bool {
        self.num * other.den < other.num * self.den
    }
}

struct OracleSplit {
    feature: usize,
    threshold: f64,
    gini: Frac,
}

/// Exhaustive search over every feature and every gap between consecutive
/// distinct values, keeping the first strict minimum.
fn brute_force(t: &Table, min_leaf: usize) -> Option<OracleSplit> {
    let mut best: Option<OracleSplit> = None;
    for j in 0..t.columns.len() {
        let mut distinct: Vec<f64> = t.rows.iter().map(|r| r[j]).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for pair in distinct.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let mut left = [0i128; 2];
            let mut right = [0i128; 2];
            for (r, &l) in t.rows.iter().zip(&t.labels) {
                if r[j] <= lo {
                    left[l as usize] += 1;
                } else {
                    right[l as usize] += 1;
                }
            }
            if ((left[0] + left[1]) as usize) < min_leaf || ((right[0] + right[1]) as usize) < min_leaf {
                continue;
            }
            let gini = Frac::split(left, right);
            if best.as_ref().is_none_or(|b| gini.less(b.gini)) {
                best = Some(OracleSplit {
                    feature: j,
                    threshold: (lo + hi) / 2.0,
                    gini,
                });
            }
        }
    }
    best
}

fn depth_one_matches_oracle(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.gen_range(2..=64);
    let min_leaf = rng.gen_range(1..=n / 2);
    let f = rng.gen_range(1..=4);
    let t = random_table(rng, n, f, false);
    let params = TreeParams { min_leaf, max_depth: 1 };
    let model = fit_matrix(&t.columns, &t.rows, &t.labels, &params, 0).map_err(|e| e.to_string())?;
    match (brute_force(&t, min_leaf), &model.root().split) {
        (None, None) => Ok(()),
        (Some(o), Some(s)) => ensure(o.feature == s.feature_index && o.threshold == s.threshold, || {
            format!(
                "{n}x{} min_leaf {min_leaf}: fitted f{} <= {} but oracle f{} <= {}",
                t.columns.len(),
                s.feature_index,
                s.threshold,
                o.feature,
                o.threshold
            )
        }),
        (o, s) => Err(format!(
            "{n}x{} min_leaf {min_leaf}: oracle split {} but fitted split {}",
            t.columns.len(),
            o.is_some(),
            s.is_some()
        )),
    }
}

type Transform = fn(f64) -> f64;

const TRANSFORMS: [(&str, Transform); 6] = [
    ("affine", |x| 3.0 * x + 1.0),
    ("cubic", |x| x * x * x + x),
    ("exp", f64::exp),
    ("sinh", |x| x.sinh() + 2.0 * x),
    ("log", |x| (x + 20.0).ln()),
    ("logistic", |x| 1.0 / (1.0 + (-x / 4.0).exp())),
];

pub fn monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3070);
    let mut internal = 0;
    for k in 0..50 {
        let params = TreeParams {
            min_leaf: rng.gen_range(1..=8),
            max_depth: rng.gen_range(2..=6),
        };
        let n = rng.gen_range(40..=150);
        let f = rng.gen_range(2..=5);
        let t = random_table(&mut rng, n, f, false);
        let picks: Vec<usize> = (0..t.columns.len())
            .map(|_| rng.gen_range(0..TRANSFORMS.len()))
            .collect();
        let moved: Vec<Vec<f64>> = t
            .rows
            .iter()
            .map(|r| r.iter().zip(&picks).map(|(&v, &p)| (TRANSFORMS[p].1)(v)).collect())
            .collect();
        let names: Vec<&str> = picks.iter().map(|&p| TRANSFORMS[p].0).collect();

        let a = fit_matrix(&t.columns, &t.rows, &t.labels, &params, 0).map_err(|e| e.to_string())?;
        let b = fit_matrix(&t.columns, &moved, &t.labels, &params, 0).map_err(|e| e.to_string())?;
        for (i, (ra, rb)) in t.rows.iter().zip(&moved).enumerate() {
            let pa = a.predict_values(&t.columns, ra).map_err(|e| e.to_string())?;
            let pb = b.predict_values(&t.columns, rb).map_err(|e| e.to_string())?;
            ensure(pa == pb, || {
                format!("table {k} {names:?}: row {i} predicted {pa} then {pb}")
            })?;
        }
        let shape = |m: &TreeModel| -> Vec<(Option<usize>, usize)> {
            m.nodes
                .iter()
                .map(|n| (n.split.as_ref().map(|s| s.feature_index), n.sample_count))
                .collect()
        };
        ensure(shape(&a) == shape(&b), || {
            format!("table {k} {names:?}: tree structure changed")
        })?;
        internal += a.nodes.iter().filter(|n| n.split.is_some()).count();
    }
    Ok(format!("50 tables, {internal} splits, identical training predictions"))
}
