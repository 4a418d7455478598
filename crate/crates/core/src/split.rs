//! Stratified test holdout plus k-fold cross-validation assignment.
//!
//! Per class, ids are sorted and shuffled by a seeded stream. The first
//! share goes to the test set; the remainder is dealt round-robin into the
//! folds, with the dealing position carried over from one class to the next
//! so that fold sizes stay within one of each other.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::stack::{ClassLabel, DatasetManifest};

pub const SPLIT_VERSION: &str = "split-v1";
pub const DEFAULT_TEST_FRACTION: f64 = 0.10;
pub const DEFAULT_FOLDS: usize = 10;

/// Where a sample goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Test,
    Fold(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub seed: u64,
    pub k: usize,
    pub test_fraction: f64,
    /// Every id with its label and role, sorted by id.
    assignments: BTreeMap<String, (ClassLabel, Role)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRoles {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// `round(fraction * n)` with halves rounded up.
pub fn test_count(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 0.5 + 1e-9).floor() as usize
}

/// Splits `total` across classes proportionally to `counts` by largest
/// remainder; ties go to the lower class id.
fn apportion(total: usize, counts: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let mut shares: Vec<usize> = counts.iter().map(|&c| total * c / n).collect();
    let mut left = total - shares.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(total * counts[i] % n));
    for i in order {
        if left == 0 {
            break;
        }
        shares[i] += 1;
        left -= 1;
    }
    shares
}

pub fn make_split(
    manifest: &DatasetManifest,
    seed: u64,
    test_fraction: f64,
    k: usize,
) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::Config(format!("folds must be at least 2, got {k}")));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test_fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); ClassLabel::COUNT];
    for r in manifest.records() {
        by_class[r.label.id()].push(r.id.as_str());
    }
    for label in ClassLabel::ALL {
        let count = by_class[label.id()].len();
        if count < k {
            return Err(Error::InsufficientClassSamples {
                class: label.name().to_string(),
                count,
                needed: k,
            });
        }
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let test_shares = apportion(test_count(manifest.len(), test_fraction), &counts);

    let mut assignments = BTreeMap::new();
    let mut deal = 0usize;
    for label in ClassLabel::ALL {
        let ids = &mut by_class[label.id()];
        ids.sort_unstable();
        let mut rng = keyed_rng("split", seed, &[&(label.id() as u64).to_le_bytes()]);
        ids.shuffle(&mut rng);
        let (test, rest) = ids.split_at(test_shares[label.id()]);
        for id in test {
            assignments.insert(id.to_string(), (label, Role::Test));
        }
        for id in rest {
            assignments.insert(id.to_string(), (label, Role::Fold(deal % k)));
            deal += 1;
        }
    }
    Ok(SplitPlan {
        seed,
        k,
        test_fraction,
        assignments,
    })
}

impl SplitPlan {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn role(&self, id: &str) -> Option<Role> {
        self.assignments.get(id).map(|&(_, r)| r)
    }

    pub fn label(&self, id: &str) -> Option<ClassLabel> {
        self.assignments.get(id).map(|&(l, _)| l)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.assignments.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.assignments.keys().map(String::as_str)
    }

    fn ids_where(&self, pred: impl Fn(Role) -> bool) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &(_, r))| pred(r))
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn test_ids(&self) -> Vec<String> {
        self.ids_where(|r| r == Role::Test)
    }

    pub fn fold(&self, f: usize) -> Vec<String> {
        self.ids_where(|r| r == Role::Fold(f))
    }

    pub fn folds(&self) -> Vec<Vec<String>> {
        (0..self.k).map(|f| self.fold(f)).collect()
    }

    /// Fold `fold_index` validates; the other folds train.
    pub fn fold_roles(&self, fold_index: usize) -> Result<FoldRoles> {
        if fold_index >= self.k {
            return Err(Error::FoldOutOfRange {
                fold: fold_index,
                k: self.k,
            });
        }
        Ok(FoldRoles {
            train: self.ids_where(|r| matches!(r, Role::Fold(f) if f != fold_index)),
            val: self.fold(fold_index),
            test: self.test_ids(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "#{SPLIT_VERSION}");
        let _ = writeln!(s, "#seed={}", self.seed);
        let _ = writeln!(s, "#k={}", self.k);
        let _ = writeln!(s, "#test_fraction={}", self.test_fraction);
        s.push_str("id\tlabel\trole\n");
        for (id, (label, role)) in &self.assignments {
            let role = match role {
                Role::Test => "test".to_string(),
                Role::Fold(f) => f.to_string(),
            };
            let _ = writeln!(s, "{id}\t{}\t{role}", label.id());
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == format!("#{SPLIT_VERSION}") => {}
            Some((_, l)) => {
                return Err(Error::VersionMismatch {
                    found: l.trim_start_matches('#').to_string(),
                    expected: SPLIT_VERSION.into(),
                })
            }
            None => return Err(Error::format(name, 1, "empty split file")),
        }
        let (mut seed, mut k, mut test_fraction) = (None, None, None);
        let mut assignments = BTreeMap::new();
        let mut saw_header = false;
        for (line, l) in lines {
            if let Some(meta) = l.strip_prefix('#') {
                let (key, value) = meta
                    .split_once('=')
                    .ok_or_else(|| Error::format(name, line, "expected #key=value"))?;
                let bad = |e: &dyn std::fmt::Display| Error::format(name, line, format!("{key}: {e}"));
                match key {
                    "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(&e))?),
                    "k" => k = Some(value.parse::<usize>().map_err(|e| bad(&e))?),
                    "test_fraction" => {
                        test_fraction = Some(value.parse::<f64>().map_err(|e| bad(&e))?)
                    }
                    _ => return Err(Error::format(name, line, format!("unknown key {key:?}"))),
                }
                continue;
            }
            if !saw_header {
                if l != "id\tlabel\trole" {
                    return Err(Error::format(name, line, "bad column header"));
                }
                saw_header = true;
                continue;
            }
            if l.is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::format(name, line, "expected 3 tab-separated fields"));
            }
            let label = f[1]
                .parse::<usize>()
                .ok()
                .and_then(ClassLabel::from_id)
                .ok_or_else(|| Error::format(name, line, "bad label"))?;
            let role = match f[2] {
                "test" => Role::Test,
                v => Role::Fold(
                    v.parse()
                        .map_err(|_| Error::format(name, line, format!("bad role {v:?}")))?,
                ),
            };
            if assignments.insert(f[0].to_string(), (label, role)).is_some() {
                return Err(Error::DuplicateId(f[0].to_string()));
            }
        }
        let missing = |what| Error::format(name, 1, format!("missing #{what}"));
        let k = k.ok_or_else(|| missing("k"))?;
        if let Some((id, _)) = assignments
            .iter()
            .find(|(_, &(_, r))| matches!(r, Role::Fold(f) if f >= k))
        {
            return Err(Error::format(name, 0, format!("{id}: fold out of range")));
        }
        Ok(SplitPlan {
            seed: seed.ok_or_else(|| missing("seed"))?,
            k,
            test_fraction: test_fraction.ok_or_else(|| missing("test_fraction"))?,
            assignments,
        })
    }

    /// Per-class counts of ids carrying `role`.
    pub fn class_counts(&self, role: Role) -> [usize; ClassLabel::COUNT] {
        let mut c = [0; ClassLabel::COUNT];
        for &(label, r) in self.assignments.values() {
            if r == role {
                c[label.id()] += 1;
            }
        }
        c
    }

    pub fn all_ids(&self) -> BTreeSet<&str> {
        self.ids().collect()
    }
}
