//! Classification metrics, confusion matrices and the Stuart-Maxwell test of
//! marginal homogeneity for paired predictions.

mod chisq;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::CategorySet;
use crate::error::{Error, Result};

pub use chisq::{chi_square_sf, gamma_q, ln_gamma, ln_gamma_q, TailProbability};

/// p-values below this print as `< 2.2e-16`.
pub const P_VALUE_FLOOR: f64 = 2.2e-16;

/// k×k table of counts, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquareTable {
    k: usize,
    counts: Vec<u64>,
}

impl SquareTable {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Statistics("table must be square".into()));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    fn tally(a: &[usize], b: &[usize], k: usize) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let mut t = Self::zeros(k);
        for (&i, &j) in a.iter().zip(b) {
            for label in [i, j] {
                if label >= k {
                    return Err(Error::LabelOutOfRange { label, k });
                }
            }
            t.counts[i * k + j] += 1;
        }
        Ok(t)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.k + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        (0..self.k).map(|c| self.get(row, c)).sum()
    }

    pub fn col_sum(&self, col: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, col)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.k.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.k);
        for r in 0..self.k {
            for c in 0..self.k {
                t.counts[c * self.k + r] = self.get(r, c);
            }
        }
        t
    }

    /// CSV with a header row and a header column of category names.
    pub fn write_csv<W: Write>(
        &self,
        categories: &CategorySet,
        corner: &str,
        out: W,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![corner.to_owned()];
        header.extend(categories.names().iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.k {
            let mut row = vec![categories.name(r).to_owned()];
            row.extend((0..self.k).map(|c| self.get(r, c).to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// `cell(g, p)` counts examples with gold label `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix(pub SquareTable);

/// `cell(a, b)` counts examples model A labels `a` and model B labels `b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairedTable(pub SquareTable);

pub fn confusion(preds: &[usize], golds: &[usize], k: usize) -> Result<ConfusionMatrix> {
    Ok(ConfusionMatrix(SquareTable::tally(golds, preds, k)?))
}

pub fn paired_table(a_preds: &[usize], b_preds: &[usize], k: usize) -> Result<PairedTable> {
    Ok(PairedTable(SquareTable::tally(a_preds, b_preds, k)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, macro- and support-weighted F1 and per-class scores. Every 0/0
/// precision, recall or F1 counts as 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let t = &cm.0;
    let total = t.total();
    if total == 0 {
        return Err(Error::Statistics(
            "metrics of an empty confusion matrix".into(),
        ));
    }
    let per_class: Vec<ClassMetrics> = (0..t.k())
        .map(|c| {
            let tp = t.get(c, c);
            let support = t.row_sum(c);
            let precision = ratio(tp, t.col_sum(c));
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / t.k() as f64;
    let weighted_f1 = per_class
        .iter()
        .map(|c| c.f1 * c.support as f64)
        .sum::<f64>()
        / total as f64;
    Ok(Metrics {
        accuracy: ratio(t.trace(), total),
        macro_f1,
        weighted_f1,
        per_class,
    })
}

pub fn evaluate(preds: &[usize], golds: &[usize], k: usize) -> Result<Metrics> {
    metrics(&confusion(preds, golds, k)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StuartMaxwellResult {
    pub statistic: f64,
    /// Effective categories minus one.
    pub dof: u32,
    /// `None` when the covariance matrix is singular.
    pub p_value: Option<f64>,
    pub ln_p_value: Option<f64>,
    pub underflow: bool,
    /// Categories dropped because neither model disagrees on them.
    pub collapsed: Vec<usize>,
    pub degenerate: bool,
}

impl StuartMaxwellResult {
    /// Human-readable p-value, floored at `< 2.2e-16`.
    pub fn p_value_display(&self) -> String {
        format_p_value(self.p_value)
    }
}

pub fn format_p_value(p: Option<f64>) -> String {
    match p {
        None => "degenerate".to_owned(),
        Some(p) if p < P_VALUE_FLOOR => "< 2.2e-16".to_owned(),
        Some(p) => format!("{p:.4e}"),
    }
}

/// Stuart-Maxwell test of marginal homogeneity.
///
/// Categories with no off-diagonal mass are removed first. Over the remaining
/// `m` categories, `d_i = row_i - col_i` and
/// `S_ii = row_i + col_i - 2 t_ii`, `S_ij = -(t_ij + t_ji)`; one category is
/// dropped and `d' S^-1 d` is chi-square with `m - 1` degrees of freedom.
/// A table with no disagreements at all is trivially homogeneous: statistic 0,
/// p-value 1, zero degrees of freedom.
pub fn stuart_maxwell(table: &PairedTable) -> Result<StuartMaxwellResult> {
    stuart_maxwell_dropping(table, None)
}

/// As [`stuart_maxwell`], dropping effective category `drop` (an index into
/// the non-collapsed categories) instead of the last one.
pub fn stuart_maxwell_dropping(
    table: &PairedTable,
    drop: Option<usize>,
) -> Result<StuartMaxwellResult> {
    let t = &table.0;
    if t.k() < 2 {
        return Err(Error::Statistics(
            "Stuart-Maxwell needs at least 2 categories".into(),
        ));
    }
    let off_support = |i: usize| t.row_sum(i) + t.col_sum(i) - 2 * t.get(i, i);
    let (active, collapsed): (Vec<usize>, Vec<usize>) =
        (0..t.k()).partition(|&i| off_support(i) > 0);
    let m = active.len();
    if m == 0 {
        return Ok(StuartMaxwellResult {
            statistic: 0.0,
            dof: 0,
            p_value: Some(1.0),
            ln_p_value: Some(0.0),
            underflow: false,
            collapsed,
            degenerate: false,
        });
    }
    // One off-diagonal cell always supports two categories.
    debug_assert!(m >= 2);
    let dof = (m - 1) as u32;
    let degenerate = |statistic: f64| StuartMaxwellResult {
        statistic,
        dof,
        p_value: None,
        ln_p_value: None,
        underflow: false,
        collapsed: collapsed.clone(),
        degenerate: true,
    };
    if !disagreement_graph_connected(t, &active) {
        return Ok(degenerate(f64::NAN));
    }

    let drop = drop.unwrap_or(m - 1);
    if drop >= m {
        return Err(Error::Statistics(format!("drop index {drop} out of {m}")));
    }
    let kept: Vec<usize> = active
        .iter()
        .enumerate()
        .filter(|&(pos, _)| pos != drop)
        .map(|(_, &c)| c)
        .collect();
    let n = kept.len();
    let d: Vec<f64> = kept
        .iter()
        .map(|&i| t.row_sum(i) as f64 - t.col_sum(i) as f64)
        .collect();
    let mut s = vec![0.0; n * n];
    for (a, &i) in kept.iter().enumerate() {
        for (b, &j) in kept.iter().enumerate() {
            s[a * n + b] = if a == b {
                off_support(i) as f64
            } else {
                -((t.get(i, j) + t.get(j, i)) as f64)
            };
        }
    }
    let Some(solution) = solve(s, d.clone(), n) else {
        return Ok(degenerate(f64::NAN));
    };
    let statistic = d
        .iter()
        .zip(&solution)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0);
    let tail = chi_square_sf(statistic, dof)?;
    Ok(StuartMaxwellResult {
        statistic,
        dof,
        p_value: Some(tail.p_value),
        ln_p_value: Some(tail.ln_p_value),
        underflow: tail.underflow,
        collapsed,
        degenerate: false,
    })
}

// The covariance restricted to the active categories is a weighted graph
// Laplacian; removing one row and column leaves it invertible exactly when the
// disagreement graph is connected.
fn disagreement_graph_connected(t: &SquareTable, active: &[usize]) -> bool {
    let mut seen = vec![false; t.k()];
    let mut stack = vec![active[0]];
    seen[active[0]] = true;
    while let Some(i) = stack.pop() {
        for &j in active {
            if !seen[j] && t.get(i, j) + t.get(j, i) > 0 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    active.iter().all(|&i| seen[i])
}

/// Gaussian elimination with partial pivoting on a row-major `n × n` system.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                a.swap(pivot * n + c, col * n + c);
            }
            b.swap(pivot, col);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[row * n + c] -= factor * a[col * n + c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[row * n + c] * x[c];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub table: PairedTable,
    pub test: StuartMaxwellResult,
    pub metrics_a: Metrics,
    pub metrics_b: Metrics,
}

/// Paired comparison of two prediction lists over the same gold labels.
pub fn compare_models(
    a_preds: &[usize],
    b_preds: &[usize],
    golds: &[usize],
    k: usize,
) -> Result<Comparison> {
    if a_preds.len() != golds.len() || b_preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: a_preds.len().max(b_preds.len()),
            right: golds.len(),
        });
    }
    let table = paired_table(a_preds, b_preds, k)?;
    Ok(Comparison {
        test: stuart_maxwell(&table)?,
        metrics_a: evaluate(a_preds, golds, k)?,
        metrics_b: evaluate(b_preds, golds, k)?,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        assert_eq!(cm.0.rows(), vec![vec![1, 1], vec![0, 1]]);
        let diag = confusion(&[0, 2, 1], &[0, 2, 1], 3).unwrap();
        assert_eq!(diag.0.trace(), 3);
        assert_eq!(confusion(&[], &[], 3).unwrap().0.total(), 0);
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn two_class_metrics_by_hand() {
        let cm = ConfusionMatrix(SquareTable::from_rows(&[vec![8, 2], vec![3, 7]]).unwrap());
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.75);
        let (p0, r0, p1, r1) = (8.0 / 11.0, 0.8, 7.0 / 9.0, 0.7);
        approx::assert_abs_diff_eq!(m.per_class[0].precision, p0, epsilon = 1e-15);
        approx::assert_abs_diff_eq!(m.per_class[0].recall, r0, epsilon = 1e-15);
        approx::assert_abs_diff_eq!(m.per_class[1].precision, p1, epsilon = 1e-15);
        approx::assert_abs_diff_eq!(m.per_class[1].recall, r1, epsilon = 1e-15);
        let f0 = 2.0 * p0 * r0 / (p0 + r0);
        let f1 = 2.0 * p1 * r1 / (p1 + r1);
        approx::assert_abs_diff_eq!(m.macro_f1, (f0 + f1) / 2.0, epsilon = 1e-15);
        // Supports are 10 and 10, so the weighted mean equals the macro mean.
        approx::assert_abs_diff_eq!(m.weighted_f1, m.macro_f1, epsilon = 1e-15);
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = evaluate(&[0, 1, 0], &[0, 1, 0], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.per_class[2].f1, 0.0);
        approx::assert_abs_diff_eq!(m.macro_f1, 2.0 / 3.0, epsilon = 1e-15);
        assert!(evaluate(&[], &[], 3).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let m = evaluate(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn symmetric_table_is_homogeneous() {
        let t = PairedTable(
            SquareTable::from_rows(&[vec![5, 2, 3], vec![2, 4, 1], vec![3, 1, 9]]).unwrap(),
        );
        let r = stuart_maxwell(&t).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, Some(1.0));
        assert_eq!(r.dof, 2);
    }

    #[test]
    fn two_by_two_is_mcnemar() {
        let t = PairedTable(SquareTable::from_rows(&[vec![10, 7], vec![2, 30]]).unwrap());
        let r = stuart_maxwell(&t).unwrap();
        approx::assert_abs_diff_eq!(r.statistic, 25.0 / 9.0, epsilon = 1e-12);
        assert_eq!(r.dof, 1);
    }

    #[test]
    fn identical_raters_and_collapse() {
        let c = compare_models(&[0, 1, 2, 2], &[0, 1, 2, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(c.test.statistic, 0.0);
        assert_eq!(c.test.p_value, Some(1.0));
        assert_eq!(c.test.collapsed, vec![0, 1, 2]);

        // Category 2 only ever agrees, so it is collapsed out.
        let t = PairedTable(
            SquareTable::from_rows(&[vec![3, 4, 0], vec![1, 2, 0], vec![0, 0, 6]]).unwrap(),
        );
        let r = stuart_maxwell(&t).unwrap();
        assert_eq!(r.collapsed, vec![2]);
        assert_eq!(r.dof, 1);
        approx::assert_abs_diff_eq!(r.statistic, 9.0 / 5.0, epsilon = 1e-12);
    }

    #[test]
    fn disconnected_disagreements_are_degenerate() {
        let t = PairedTable(
            SquareTable::from_rows(&[
                vec![1, 3, 0, 0],
                vec![1, 1, 0, 0],
                vec![0, 0, 1, 2],
                vec![0, 0, 5, 1],
            ])
            .unwrap(),
        );
        let r = stuart_maxwell(&t).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, None);
        assert_eq!(r.p_value_display(), "degenerate");
    }

    #[test]
    fn p_value_display_floor() {
        assert_eq!(format_p_value(Some(1e-20)), "< 2.2e-16");
        assert_eq!(format_p_value(Some(0.0)), "< 2.2e-16");
        assert_eq!(format_p_value(Some(0.5)), "5.0000e-1");
    }

    #[test]
    fn csv_export() {
        let cats = CategorySet::new(["Food", "Household Items"]).unwrap();
        let cm = confusion(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        let mut out = Vec::new();
        cm.0.write_csv(&cats, "gold\\pred", &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "gold\\pred,Food,Household Items\nFood,1,1\nHousehold Items,0,1\n"
        );
    }
}
