//! Datasets of short texts: category sets, JSONL interchange, stratified
//! splitting, the 20 Newsgroups loader and a synthetic transaction corpus.

mod newsgroups;
mod synth;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use newsgroups::{
    load_20newsgroup, load_20newsgroup_roots, resolve_newsgroup_roots, LoadReport, NewsgroupOptions,
};
pub use synth::{synth_generate, SynthConfig};

/// The ten transaction categories of the delivery-service corpus.
pub const TRANSACTION_CATEGORIES: [&str; 10] = [
    "Food",
    "Grocery",
    "Package",
    "Medicines",
    "Household Items",
    "Cigarettes",
    "Clothes",
    "Electronics",
    "Keys",
    "Documents/Books",
];

/// Labeled-partition size of the newsgroup preset split.
pub const PAPER_COUNTS_LABELED: usize = 8_073;
/// Test-partition size of the newsgroup preset split.
pub const PAPER_COUNTS_TEST: usize = 805;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl CategorySet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidCategories(format!(
                "need at least 2 categories, got {}",
                names.len()
            )));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidCategories(format!(
                    "duplicate category {name:?}"
                )));
            }
        }
        Ok(Self { names, index })
    }

    pub fn transactions() -> Self {
        Self::new(TRANSACTION_CATEGORIES).expect("static category list is valid")
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

impl Serialize for CategorySet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.names.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CategorySet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(deserializer)?;
        CategorySet::new(names).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: Option<usize>,
    /// Gold label kept on unlabeled partitions for audit reporting only.
    /// Training code never reads it.
    pub audit_label: Option<usize>,
}

impl Example {
    pub fn labeled(id: impl Into<String>, text: impl Into<String>, label: usize) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: Some(label),
            audit_label: None,
        }
    }

    pub fn unlabeled(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: None,
            audit_label: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Labeled,
    Unlabeled,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    categories: CategorySet,
    examples: Vec<Example>,
    kind: DatasetKind,
}

impl Dataset {
    pub fn new(categories: CategorySet, examples: Vec<Example>, kind: DatasetKind) -> Result<Self> {
        let k = categories.k();
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
            for label in ex.label.iter().chain(ex.audit_label.iter()) {
                if *label >= k {
                    return Err(Error::LabelOutOfRange { label: *label, k });
                }
            }
            match (kind, ex.label) {
                (DatasetKind::Unlabeled, Some(_)) => {
                    return Err(Error::InvalidDataset(format!(
                        "unlabeled dataset contains labeled example {:?}",
                        ex.id
                    )))
                }
                (DatasetKind::Labeled | DatasetKind::Test, None) => {
                    return Err(Error::InvalidDataset(format!(
                        "{kind:?} dataset contains unlabeled example {:?}",
                        ex.id
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            categories,
            examples,
            kind,
        })
    }

    pub fn categories(&self) -> &CategorySet {
        &self.categories
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.id.as_str())
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.text.as_str())
    }

    /// Gold labels of a labeled or test dataset.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.examples
            .iter()
            .map(|e| {
                e.label.ok_or_else(|| {
                    Error::InvalidDataset(format!("example {:?} has no label", e.id))
                })
            })
            .collect()
    }

    /// Relabels a labeled dataset as a test set, or the reverse.
    pub fn with_kind(self, kind: DatasetKind) -> Result<Self> {
        Dataset::new(self.categories, self.examples, kind)
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.categories.k()];
        for ex in &self.examples {
            if let Some(l) = ex.label.or(ex.audit_label) {
                counts[l] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audit_label: Option<String>,
}

/// Reads a JSONL dataset. Lines without a `label` are unlabeled; a file must
/// be entirely labeled or entirely unlabeled. Missing ids default to the
/// zero-padded line index.
pub fn load_jsonl(path: impl AsRef<Path>, categories: &CategorySet) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut examples = Vec::new();
    let mut labeled = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_owned(),
                line: lineno,
                message: e.to_string(),
            })?;
        let resolve = |name: String| {
            categories.index_of(&name).ok_or(Error::UnknownLabel {
                path: path.to_owned(),
                line: lineno,
                label: name,
            })
        };
        let label = record.label.map(resolve).transpose()?;
        let audit_label = record.audit_label.map(resolve).transpose()?;
        labeled += usize::from(label.is_some());
        examples.push(Example {
            id: record.id.unwrap_or_else(|| format!("{idx:08}")),
            text: record.text,
            label,
            audit_label,
        });
    }

    let kind = if labeled == examples.len() {
        DatasetKind::Labeled
    } else if labeled == 0 {
        DatasetKind::Unlabeled
    } else {
        return Err(Error::InvalidDataset(format!(
            "{}: {labeled} of {} lines are labeled; a file must be all labeled or all unlabeled",
            path.display(),
            examples.len()
        )));
    };
    Dataset::new(categories.clone(), examples, kind)
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_jsonl(dataset, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<W: Write>(dataset: &Dataset, out: &mut W) -> std::io::Result<()> {
    let cats = dataset.categories();
    for ex in dataset.examples() {
        let record = JsonlRecord {
            id: Some(ex.id.clone()),
            text: ex.text.clone(),
            label: ex.label.map(|l| cats.name(l).to_owned()),
            audit_label: ex.audit_label.map(|l| cats.name(l).to_owned()),
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Distinct label strings of a JSONL file in sorted order, for building a
/// category set when none is supplied.
pub fn infer_categories(path: impl AsRef<Path>) -> Result<CategorySet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut names = std::collections::BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_owned(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        names.extend(record.label);
        names.extend(record.audit_label);
    }
    CategorySet::new(names)
}

#[derive(Debug, Clone)]
pub struct Split {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
}

/// Stratified three-way split by fractions `(labeled, unlabeled, test)`.
///
/// Each category is shuffled independently under `seed` and cut by
/// largest-remainder rounding, so every per-category partition size is within
/// one example of `fraction * category_size`.
pub fn split(dataset: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be positive, got {fr:?}"
        )));
    }
    let total: f64 = fr.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let groups = category_groups(dataset)?;
    for (c, group) in groups.iter().enumerate() {
        if group.len() < 3 {
            return Err(Error::InvalidDataset(format!(
                "category {:?} has {} examples; at least 3 are needed to stratify",
                dataset.categories().name(c),
                group.len()
            )));
        }
    }
    let quotas: Vec<[usize; 3]> = groups
        .iter()
        .map(|g| {
            let q = largest_remainder(&fr.map(|f| f * g.len() as f64), g.len());
            [q[0], q[1], q[2]]
        })
        .collect();
    assign(dataset, groups, &quotas, seed)
}

/// Stratified split with exact partition sizes `[labeled, unlabeled, test]`.
/// Per-category quotas are proportional to category size.
pub fn split_by_counts(dataset: &Dataset, counts: [usize; 3], seed: u64) -> Result<Split> {
    let n = dataset.len();
    if counts.iter().sum::<usize>() != n {
        return Err(Error::InvalidConfig(format!(
            "split counts {counts:?} do not sum to dataset size {n}"
        )));
    }
    let groups = category_groups(dataset)?;
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut remaining = sizes.clone();
    let mut quotas = vec![[0usize; 3]; sizes.len()];
    // Labeled and test quotas are apportioned across categories; the
    // unlabeled pool takes what is left in each category.
    for part in [0usize, 2] {
        let ideal: Vec<f64> = sizes
            .iter()
            .map(|&s| s as f64 * counts[part] as f64 / n as f64)
            .collect();
        let mut alloc = largest_remainder(&ideal, counts[part]);
        // Capping only bites on tiny categories; spill over to the others.
        let mut spill = 0;
        for (c, a) in alloc.iter_mut().enumerate() {
            if *a > remaining[c] {
                spill += *a - remaining[c];
                *a = remaining[c];
            }
        }
        for (c, a) in alloc.iter_mut().enumerate() {
            let room = remaining[c] - *a;
            let take = room.min(spill);
            *a += take;
            spill -= take;
        }
        for (c, a) in alloc.into_iter().enumerate() {
            quotas[c][part] = a;
            remaining[c] -= a;
        }
    }
    for (c, q) in quotas.iter_mut().enumerate() {
        q[1] = remaining[c];
    }
    assign(dataset, groups, &quotas, seed)
}

/// The newsgroup preset: 8,073 labeled and 805 test examples, the rest pooled.
pub fn split_paper_counts(dataset: &Dataset, seed: u64) -> Result<Split> {
    let n = dataset.len();
    let fixed = PAPER_COUNTS_LABELED + PAPER_COUNTS_TEST;
    if n <= fixed {
        return Err(Error::InvalidDataset(format!(
            "preset split needs more than {fixed} examples, dataset has {n}"
        )));
    }
    split_by_counts(
        dataset,
        [PAPER_COUNTS_LABELED, n - fixed, PAPER_COUNTS_TEST],
        seed,
    )
}

fn category_groups(dataset: &Dataset) -> Result<Vec<Vec<usize>>> {
    if dataset.kind() == DatasetKind::Unlabeled {
        return Err(Error::InvalidDataset(
            "only a labeled dataset can be split".into(),
        ));
    }
    let mut groups = vec![Vec::new(); dataset.categories().k()];
    for (i, ex) in dataset.examples().iter().enumerate() {
        let label = ex.label.expect("labeled dataset");
        groups[label].push(i);
    }
    Ok(groups)
}

fn assign(
    dataset: &Dataset,
    mut groups: Vec<Vec<usize>>,
    quotas: &[[usize; 3]],
    seed: u64,
) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (group, quota) in groups.iter_mut().zip(quotas) {
        group.shuffle(&mut rng);
        let mut rest = group.as_slice();
        for (p, &q) in quota.iter().enumerate() {
            let (head, tail) = rest.split_at(q);
            parts[p].extend_from_slice(head);
            rest = tail;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let cats = dataset.categories().clone();
    let pick = |idx: &[usize], strip: bool| -> Vec<Example> {
        idx.iter()
            .map(|&i| {
                let mut ex = dataset.examples()[i].clone();
                if strip {
                    ex.audit_label = ex.label.take();
                }
                ex
            })
            .collect()
    };
    Ok(Split {
        labeled: Dataset::new(cats.clone(), pick(&parts[0], false), DatasetKind::Labeled)?,
        unlabeled: Dataset::new(cats.clone(), pick(&parts[1], true), DatasetKind::Unlabeled)?,
        test: Dataset::new(cats, pick(&parts[2], false), DatasetKind::Test)?,
    })
}

/// Rounds `ideal` to integers summing to `total`, giving leftover units to the
/// largest fractional parts (lowest index first on ties).
fn largest_remainder(ideal: &[f64], total: usize) -> Vec<usize> {
    let mut alloc: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..ideal.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Fails if any id appears in more than one of the given datasets.
pub fn check_disjoint(parts: &[&Dataset]) -> Result<()> {
    let mut seen = HashSet::new();
    for part in parts {
        for id in part.ids() {
            if !seen.insert(id) {
                return Err(Error::OverlappingPartitions(id.to_owned()));
            }
        }
    }
    Ok(())
}
