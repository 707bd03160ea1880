//! Accuracy and confusion reporting, the PFID split, and the location ablation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PFID_INSTANCES: usize = 3;
pub const PFID_VIEWS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// True test classes.
    pub rows: Vec<String>,
    /// Trained classes; may be a superset of the rows.
    pub cols: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>) -> Self {
        let counts = vec![vec![0; cols.len()]; rows.len()];
        ConfusionMatrix { rows, cols, counts }
    }

    pub fn record(&mut self, truth: &str, predicted: &str) -> Result<()> {
        let r = self
            .rows
            .iter()
            .position(|l| l == truth)
            .ok_or_else(|| Error::Report(format!("unknown true label {truth:?}")))?;
        // a prediction from a neighbouring restaurant's menu gets its own column
        let c = match self.cols.iter().position(|l| l == predicted) {
            Some(c) => c,
            None => {
                self.cols.push(predicted.to_string());
                self.counts.iter_mut().for_each(|row| row.push(0));
                self.cols.len() - 1
            }
        };
        self.counts[r][c] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.rows
            .iter()
            .zip(&self.counts)
            .filter_map(|(label, row)| self.cols.iter().position(|c| c == label).map(|j| row[j]))
            .sum()
    }

    /// Percentage of items on the diagonal; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 { 0.0 } else { 100.0 * self.correct() as f64 / t as f64 }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in &self.cols {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (label, row) in self.rows.iter().zip(&self.counts) {
            s.push_str(label);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestItem {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestGroup {
    pub name: String,
    /// Classes the group's classifier can output.
    pub label_space: Vec<String>,
    pub items: Vec<TestItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    /// Hash of the test features the prediction was made from.
    pub feature_hash: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub truth: String,
    pub predicted: String,
    pub feature_hash: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub name: String,
    pub accuracy: f64,
    pub items: Vec<ItemRecord>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub groups: Vec<GroupResult>,
    /// Unweighted mean of the group accuracies.
    pub overall: f64,
    pub config: BTreeMap<String, String>,
}

impl EvaluationReport {
    pub fn from_groups(groups: Vec<GroupResult>, config: BTreeMap<String, String>) -> Self {
        let overall = if groups.is_empty() {
            0.0
        } else {
            groups.iter().map(|g| g.accuracy).sum::<f64>() / groups.len() as f64
        };
        EvaluationReport { groups, overall, config }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let width = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(0).max(7);
        let mut s = format!("{:<width$}  {:>6}  {:>9}\n", "group", "items", "accuracy");
        for g in &self.groups {
            let _ = writeln!(s, "{:<width$}  {:>6}  {:>8.2}%", g.name, g.items.len(), g.accuracy);
        }
        let _ = writeln!(s, "{:<width$}  {:>6}  {:>8.2}%", "overall", "", self.overall);
        s
    }
}

fn row_labels(group: &TestGroup) -> Vec<String> {
    let mut rows: Vec<String> = Vec::new();
    for item in &group.items {
        if !rows.contains(&item.label) {
            rows.push(item.label.clone());
        }
    }
    rows.sort_by_key(|l| group.label_space.iter().position(|c| c == l).unwrap_or(usize::MAX));
    rows
}

/// Runs `predict` on every item and tabulates per-group results.
pub fn evaluate<F>(groups: &[TestGroup], config: BTreeMap<String, String>, predict: F) -> Result<EvaluationReport>
where
    F: Fn(&TestGroup, &TestItem) -> Result<Prediction> + Sync + Send,
{
    let mut results = Vec::with_capacity(groups.len());
    for group in groups {
        if let Some(item) = group.items.iter().find(|i| !group.label_space.contains(&i.label)) {
            return Err(Error::Report(format!(
                "true label {:?} of {:?} is not in the label space of {:?}",
                item.label, item.id, group.name
            )));
        }
        let predictions = crate::par::try_map(&group.items, |item| predict(group, item))?;
        let mut confusion = ConfusionMatrix::new(row_labels(group), group.label_space.clone());
        let mut items = Vec::with_capacity(predictions.len());
        for (item, p) in group.items.iter().zip(predictions) {
            confusion.record(&item.label, &p.label)?;
            items.push(ItemRecord {
                id: item.id.clone(),
                truth: item.label.clone(),
                predicted: p.label,
                feature_hash: p.feature_hash,
            });
        }
        results.push(GroupResult {
            name: group.name.clone(),
            accuracy: confusion.accuracy(),
            items,
            confusion,
        });
    }
    Ok(EvaluationReport::from_groups(results, config))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfidCategory<T> {
    pub name: String,
    /// Three instances of six views each.
    pub instances: Vec<Vec<T>>,
}

/// Leave-one-instance-out: fold f tests on instance f and trains on the
/// other two.
#[allow(clippy::type_complexity)]
pub fn pfid_protocol_split<T: Clone>(
    categories: &[PfidCategory<T>],
    fold: usize,
) -> Result<(Vec<(String, T)>, Vec<(String, T)>)> {
    if fold >= PFID_INSTANCES {
        return Err(Error::Protocol(format!("fold {fold} is outside 0..{PFID_INSTANCES}")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for cat in categories {
        if cat.instances.len() != PFID_INSTANCES {
            return Err(Error::Protocol(format!(
                "category {:?} has {} instances, expected {PFID_INSTANCES}",
                cat.name,
                cat.instances.len()
            )));
        }
        if let Some(bad) = cat.instances.iter().find(|v| v.len() != PFID_VIEWS) {
            return Err(Error::Protocol(format!(
                "category {:?} has an instance with {} views, expected {PFID_VIEWS}",
                cat.name,
                bad.len()
            )));
        }
        for (i, views) in cat.instances.iter().enumerate() {
            let dst = if i == fold { &mut test } else { &mut train };
            dst.extend(views.iter().map(|v| (cat.name.clone(), v.clone())));
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub restricted: EvaluationReport,
    pub unrestricted: EvaluationReport,
    /// Restricted minus unrestricted overall accuracy, in points.
    pub delta: f64,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates the same items with per-group classifiers and with one
/// classifier over `union_labels`. Both conditions must see bit-identical
/// test features.
pub fn ablate_location<A, B>(
    groups: &[TestGroup],
    union_labels: &[String],
    restricted_config: BTreeMap<String, String>,
    unrestricted_config: BTreeMap<String, String>,
    restricted: A,
    unrestricted: B,
) -> Result<AblationReport>
where
    A: Fn(&TestGroup, &TestItem) -> Result<Prediction> + Sync + Send,
    B: Fn(&TestGroup, &TestItem) -> Result<Prediction> + Sync + Send,
{
    let a = evaluate(groups, restricted_config, restricted)?;
    let union_groups: Vec<TestGroup> = groups
        .iter()
        .map(|g| TestGroup {
            label_space: union_labels.to_vec(),
            ..g.clone()
        })
        .collect();
    let b = evaluate(&union_groups, unrestricted_config, unrestricted)?;
    let hashes: HashMap<(&str, &str), Option<u64>> = a
        .groups
        .iter()
        .flat_map(|g| g.items.iter().map(move |i| ((g.name.as_str(), i.id.as_str()), i.feature_hash)))
        .collect();
    for g in &b.groups {
        for i in &g.items {
            if hashes.get(&(g.name.as_str(), i.id.as_str())) != Some(&i.feature_hash) {
                return Err(Error::Report(format!(
                    "test features for {:?} differ between conditions",
                    i.id
                )));
            }
        }
    }
    let delta = a.overall - b.overall;
    Ok(AblationReport {
        restricted: a,
        unrestricted: b,
        delta,
    })
}
