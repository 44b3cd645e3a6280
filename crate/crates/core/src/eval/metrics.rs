use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op: "predictions vs labels",
            left: vec![a],
            right: vec![b],
        });
    }
    if a == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Fraction of positions where `preds` equals `labels`.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean per-class recall over the classes that occur in `labels`. A constant
/// predictor scores `1 / #classes present`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    let cm = confusion(preds, labels, k)?;
    let recalls: Vec<f64> = (0..k)
        .filter_map(|c| {
            let row = cm.row(c);
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// `k × k` counts, rows are true classes and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::ShapeMismatch {
                op: "confusion counts",
                left: vec![counts.len()],
                right: vec![k, k],
            });
        }
        Ok(ConfusionMatrix { k, counts })
    }

    /// Row-major counts.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Share of all predictions that went to class `pred`.
    pub fn column_fraction(&self, pred: usize) -> f64 {
        let col: u64 = (0..self.k).map(|t| self.get(t, pred)).sum();
        col as f64 / self.total() as f64
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|t| {
                let row = self.row(t);
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|c| if n == 0 { 0.0 } else { *c as f64 / n as f64 })
                    .collect()
            })
            .collect()
    }

    /// Header `true\pred,0,1,...` then one row of counts per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for p in 0..self.k {
            s.push_str(&format!(",{p}"));
        }
        s.push('\n');
        for t in 0..self.k {
            s.push_str(&t.to_string());
            for c in self.row(t) {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    check_lengths(preds.len(), labels.len())?;
    let mut cm = ConfusionMatrix::new(k);
    for (&p, &t) in preds.iter().zip(labels) {
        for v in [p, t] {
            if v >= k {
                return Err(Error::LabelOutOfRange { label: v, classes: k });
            }
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

/// Plug-in mutual information (nats) of a joint count table with `cols`
/// columns: `Σ p(a,b) ln(p(a,b) / (p(a) p(b)))`, empty cells contribute 0.
pub fn discrete_mi(counts: &[u64], cols: usize) -> Result<f64> {
    if cols == 0 || counts.len() % cols != 0 {
        return Err(Error::ShapeMismatch {
            op: "joint table",
            left: vec![counts.len()],
            right: vec![cols],
        });
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let rows = counts.len() / cols;
    let n = total as f64;
    let row_sum: Vec<f64> = (0..rows)
        .map(|r| counts[r * cols..(r + 1) * cols].iter().sum::<u64>() as f64)
        .collect();
    let col_sum: Vec<f64> = (0..cols)
        .map(|c| (0..rows).map(|r| counts[r * cols + c]).sum::<u64>() as f64)
        .collect();
    let mut mi = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let nab = counts[r * cols + c] as f64;
            if nab > 0.0 {
                mi += nab / n * (nab * n / (row_sum[r] * col_sum[c])).ln();
            }
        }
    }
    // rounding can leave a tiny negative residue on independent tables
    Ok(mi.max(0.0))
}

/// Joint count table of two discrete sequences.
pub fn joint_counts(a: &[usize], ka: usize, b: &[usize], kb: usize) -> Result<Vec<u64>> {
    check_lengths(a.len(), b.len())?;
    let mut t = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        if x >= ka || y >= kb {
            return Err(Error::LabelOutOfRange {
                label: x.max(y),
                classes: ka.min(kb),
            });
        }
        t[x * kb + y] += 1;
    }
    Ok(t)
}
