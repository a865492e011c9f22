use std::collections::{BTreeMap, BTreeSet};

use icufeat::corrext::{frequency_ratio, null_hypothesis_check};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

type Corpus = Vec<Vec<String>>;

fn vocabulary(size: usize) -> Vec<String> {
    (0..size).map(|i| format!("tok{i:02}")).collect()
}

/// Token sets drawn with per-token prevalence; duplicates within an image are
/// allowed so that per-image deduplication is exercised.
fn corpus(rng: &mut ChaCha8Rng, n: usize, vocab: &[String], prevalence: &[f64]) -> Corpus {
    (0..n)
        .map(|_| {
            let mut tokens = Vec::new();
            for (t, &p) in vocab.iter().zip(prevalence) {
                if rng.gen_bool(p) {
                    tokens.push(t.clone());
                    if rng.gen_bool(0.1) {
                        tokens.push(t.clone());
                    }
                }
            }
            tokens
        })
        .collect()
}

fn oracle(c0: &Corpus, c1: &Corpus, min_count: usize) -> BTreeMap<String, f64> {
    let presence = |c: &Corpus| {
        let mut m: BTreeMap<String, usize> = BTreeMap::new();
        for img in c {
            for t in img.iter().collect::<BTreeSet<_>>() {
                *m.entry(t.clone()).or_default() += 1;
            }
        }
        m
    };
    let (p0, p1) = (presence(c0), presence(c1));
    let floor = min_count.max(1);
    p1.iter()
        .filter_map(|(t, &k1)| {
            let k0 = *p0.get(t)?;
            (k0 >= floor && k1 >= floor)
                .then(|| (t.clone(), (k1 as f64 / c1.len() as f64) / (k0 as f64 / c0.len() as f64)))
        })
        .collect()
}

fn as_map(c0: &Corpus, c1: &Corpus, min_count: usize) -> BTreeMap<String, f64> {
    frequency_ratio(c0, c1, min_count)
        .rows
        .into_iter()
        .map(|r| (r.token, r.ratio))
        .collect()
}

fn with_token(n: usize, carrying: usize, token: &str) -> Corpus {
    (0..n)
        .map(|i| {
            if i < carrying {
                vec![token.to_string(), "other".into()]
            } else {
                vec!["other".into()]
            }
        })
        .collect()
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7A7);
    let vocab = vocabulary(20);

    for k in 0..50 {
        let prevalence: Vec<f64> = vocab.iter().map(|_| rng.gen_range(0.01..0.7)).collect();
        let n0 = rng.gen_range(20..300);
        let n1 = rng.gen_range(20..300);
        let c0 = corpus(&mut rng, n0, &vocab, &prevalence);
        let c1 = corpus(&mut rng, n1, &vocab, &prevalence);
        let min_count = rng.gen_range(0..10);

        // Same multiset on both sides, reordered and then doubled.
        let mut shuffled = c0.clone();
        shuffled.shuffle(&mut rng);
        let doubled: Corpus = c0.iter().chain(&c0).cloned().collect();
        for other in [&shuffled, &doubled] {
            let null = frequency_ratio(&c0, other, min_count);
            ensure(null.rows.iter().all(|r| r.ratio == 1.0), || {
                format!("corpus {k}: identical multisets gave {:?}", null.rows)
            })?;
        }

        let forward = as_map(&c0, &c1, min_count);
        let backward = as_map(&c1, &c0, min_count);
        ensure(forward.keys().eq(backward.keys()), || {
            format!("corpus {k}: token sets differ when classes swap")
        })?;
        for (t, r) in &forward {
            let product = r * backward[t];
            ensure((product - 1.0).abs() <= 1e-12, || {
                format!("corpus {k} {t}: r * r' = {product}")
            })?;
        }

        let want = oracle(&c0, &c1, min_count);
        ensure(want.keys().eq(forward.keys()), || {
            format!("corpus {k}: tokens {:?} vs oracle {:?}", forward.keys(), want.keys())
        })?;
        for (t, r) in &forward {
            ensure((r - want[t]).abs() <= 1e-12 * want[t], || {
                format!("corpus {k} {t}: {r} vs oracle {}", want[t])
            })?;
        }
        let report = frequency_ratio(&c0, &c1, min_count);
        ensure(report.rows.windows(2).all(|w| w[0].ratio >= w[1].ratio), || {
            format!("corpus {k}: rows not sorted")
        })?;
    }

    // (30/40)/(30/60)
    let c1 = with_token(40, 30, "consolidation");
    let c0 = with_token(60, 30, "consolidation");
    let report = frequency_ratio(&c0, &c1, 1);
    let r = report.get("consolidation").map(|r| r.ratio);
    ensure(r == Some(1.5), || format!("worked example gave {r:?}"))?;
    ensure(report.over_represented().any(|r| r.token == "consolidation"), || {
        "1.5 not over-represented".into()
    })?;

    // Random partitions of a 1312-image corpus split 806 / 506.
    let prevalence: Vec<f64> = vocab.iter().map(|_| rng.gen_range(0.08..0.6)).collect();
    let images = corpus(&mut rng, 1312, &vocab, &prevalence);
    let mut labels: Vec<u8> = std::iter::repeat_n(0, 806).chain(std::iter::repeat_n(1, 506)).collect();
    labels.shuffle(&mut rng);
    let check = null_hypothesis_check(&images, &labels, 20, 99, 200).map_err(|e| e.to_string())?;
    ensure(check.trials == 200, || format!("{} trials ran", check.trials))?;
    ensure(check.tokens.len() == vocab.len(), || {
        format!("{} tokens survived min_count", check.tokens.len())
    })?;
    let mut worst: f64 = 0.0;
    for t in &check.tokens {
        worst = worst.max((t.mean - 1.0).abs());
        ensure((t.mean - 1.0).abs() <= 0.1, || {
            format!("{}: null mean ratio {}", t.token, t.mean)
        })?;
        ensure(t.lo <= t.mean && t.mean <= t.hi, || {
            format!("{}: mean outside its own interval", t.token)
        })?;
    }
    Ok(format!(
        "50 corpora, worked example 1.5, null means within {worst:.3} of 1 over {} tokens",
        check.tokens.len()
    ))
}
