use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::derive_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub token: String,
    /// Images of class 1 carrying the token.
    pub count_c1: usize,
    pub count_c0: usize,
    /// `(count_c1 / n1) / (count_c0 / n0)`
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub n0: usize,
    pub n1: usize,
    pub min_count: usize,
    pub hi: f64,
    pub lo: f64,
    /// Descending by ratio, then by token.
    pub rows: Vec<RatioRow>,
}

fn presence_counts<S: AsRef<[String]>>(images: &[S]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for img in images {
        let unique: BTreeSet<&str> = img.as_ref().iter().map(String::as_str).collect();
        for t in unique {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    counts
}

/// Normalized per-class frequency ratio of every token seen in at least
/// `min_count` images of each class. Each image counts a token once; images
/// without tokens still count towards the class size.
pub fn frequency_ratio<S: AsRef<[String]>>(c0: &[S], c1: &[S], min_count: usize) -> RatioReport {
    let (n0, n1) = (c0.len(), c1.len());
    let counts0 = presence_counts(c0);
    let counts1 = presence_counts(c1);
    let floor = min_count.max(1);
    let mut rows: Vec<RatioRow> = counts1
        .iter()
        .filter_map(|(&token, &k1)| {
            let k0 = *counts0.get(token)?;
            (k1 >= floor && k0 >= floor).then(|| RatioRow {
                token: token.to_string(),
                count_c1: k1,
                count_c0: k0,
                ratio: (k1 * n0) as f64 / (k0 * n1) as f64,
            })
        })
        .collect();
    // Exact comparison of k1·n0 / (k0·n1); the class sizes cancel.
    rows.sort_by(|a, b| {
        let lhs = a.count_c1 as u128 * b.count_c0 as u128;
        let rhs = b.count_c1 as u128 * a.count_c0 as u128;
        rhs.cmp(&lhs).then_with(|| a.token.cmp(&b.token))
    });
    RatioReport {
        n0,
        n1,
        min_count,
        hi: 1.2,
        lo: 0.8,
        rows,
    }
}

impl RatioReport {
    pub fn get(&self, token: &str) -> Option<&RatioRow> {
        self.rows.iter().find(|r| r.token == token)
    }

    pub fn over_represented(&self) -> impl Iterator<Item = &RatioRow> {
        self.rows.iter().filter(|r| r.ratio > self.hi)
    }

    pub fn under_represented(&self) -> impl Iterator<Item = &RatioRow> {
        self.rows.iter().filter(|r| r.ratio < self.lo)
    }

    pub fn to_csv(&self, lexicon: &Lexicon) -> String {
        let mut s = String::from("token,section,count_c1,count_c0,ratio\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                csv_field(&r.token),
                lexicon.section(&r.token),
                r.count_c1,
                r.count_c0,
                r.ratio
            );
        }
        s
    }

    /// Pathology and localization sections listing tokens above `hi`, then
    /// below `lo`. Counts in parentheses are totals over both classes.
    pub fn to_text_table(&self, lexicon: &Lexicon) -> String {
        let mut s = format!(
            "class sizes: n1 = {}, n0 = {}; min count {}; ratio thresholds {} / {}\n",
            self.n1, self.n0, self.min_count, self.hi, self.lo
        );
        for section in ["pathology", "localization"] {
            let _ = writeln!(s, "\n{section}\n{:<32} {:>7}", "feature (count)", "c1/c0");
            let pick = |r: &&RatioRow| lexicon.section(&r.token) == section;
            let over: Vec<_> = self.over_represented().filter(pick).collect();
            let under: Vec<_> = self.under_represented().filter(pick).collect();
            for r in &over {
                let _ = writeln!(
                    s,
                    "{:<32} {:>7.2}",
                    format!("{} ({})", r.token, r.count_c1 + r.count_c0),
                    r.ratio
                );
            }
            if !over.is_empty() && !under.is_empty() {
                s.push_str("...\n");
            }
            for r in &under {
                let _ = writeln!(
                    s,
                    "{:<32} {:>7.2}",
                    format!("{} ({})", r.token, r.count_c1 + r.count_c0),
                    r.ratio
                );
            }
            if over.is_empty() && under.is_empty() {
                s.push_str("(none)\n");
            }
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Tokens naming a location; every other token is a pathology term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub localization: BTreeSet<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        let words = [
            "bilateral",
            "peripheral",
            "middle",
            "lower",
            "upper",
            "left",
            "right",
            "hilar",
            "mediastinum",
        ];
        Self {
            localization: words.iter().map(|w| w.to_string()).collect(),
        }
    }
}

impl Lexicon {
    /// One localization token per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        let localization = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Self { localization }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(
            &std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        ))
    }

    pub fn section(&self, token: &str) -> &'static str {
        if self.localization.contains(token) {
            "localization"
        } else {
            "pathology"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullToken {
    pub token: String,
    /// Ratio under the real partition, when the token passes `min_count` there.
    pub real_ratio: Option<f64>,
    pub mean: f64,
    /// 2.5th and 97.5th percentiles of the null ratios.
    pub lo: f64,
    pub hi: f64,
    /// Trials in which the token passed `min_count`.
    pub trials_observed: usize,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCheck {
    pub trials: usize,
    pub min_count: usize,
    pub tokens: Vec<NullToken>,
}

impl NullCheck {
    pub fn get(&self, token: &str) -> Option<&NullToken> {
        self.tokens.iter().find(|t| t.token == token)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("token,real_ratio,null_mean,null_lo,null_hi,trials_observed,significant\n");
        for t in &self.tokens {
            let real = t.real_ratio.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{real},{},{},{},{},{}",
                csv_field(&t.token),
                t.mean,
                t.lo,
                t.hi,
                t.trials_observed,
                u8::from(t.significant)
            );
        }
        s
    }
}

fn split_by<'a, S: AsRef<[String]>>(images: &'a [S], labels: &[u8]) -> [Vec<&'a [String]>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (img, &l) in images.iter().zip(labels) {
        out[usize::from(l == 1)].push(img.as_ref());
    }
    out
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + (sorted[i + 1] - sorted[i]) * frac
    } else {
        sorted[i]
    }
}

/// Compare the real partition against explicitly supplied null partitions.
pub fn null_hypothesis_check_with<S: AsRef<[String]>>(
    images: &[S],
    labels: &[u8],
    min_count: usize,
    partitions: &[Vec<u8>],
) -> Result<NullCheck> {
    for p in std::iter::once(labels).chain(partitions.iter().map(Vec::as_slice)) {
        if p.len() != images.len() {
            return Err(Error::Length(format!("{} labels for {} images", p.len(), images.len())));
        }
    }
    let [c0, c1] = split_by(images, labels);
    let real = frequency_ratio(&c0, &c1, min_count);
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in partitions {
        let [c0, c1] = split_by(images, p);
        for row in frequency_ratio(&c0, &c1, min_count).rows {
            samples.entry(row.token).or_default().push(row.ratio);
        }
    }
    let tokens = samples
        .into_iter()
        .map(|(token, mut v)| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let (lo, hi) = (percentile(&v, 0.025), percentile(&v, 0.975));
            let real_ratio = real.get(&token).map(|r| r.ratio);
            NullToken {
                significant: real_ratio.is_some_and(|r| r < lo || r > hi),
                token,
                real_ratio,
                mean,
                lo,
                hi,
                trials_observed: v.len(),
            }
        })
        .collect();
    Ok(NullCheck {
        trials: partitions.len(),
        min_count,
        tokens,
    })
}

/// Monte-Carlo null: `trials` random relabelings with the real class sizes.
pub fn null_hypothesis_check<S: AsRef<[String]>>(
    images: &[S],
    labels: &[u8],
    min_count: usize,
    seed: u64,
    trials: usize,
) -> Result<NullCheck> {
    let with_tokens = images.iter().filter(|i| !i.as_ref().is_empty()).count();
    if with_tokens < 200 {
        log::warn!("null check on only {with_tokens} labelled images; intervals will be wide");
    }
    let partitions: Vec<Vec<u8>> = (0..trials)
        .map(|t| {
            let mut p = labels.to_vec();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                "null-partition",
                t as u64,
            )));
            p
        })
        .collect();
    null_hypothesis_check_with(images, labels, min_count, &partitions)
}
