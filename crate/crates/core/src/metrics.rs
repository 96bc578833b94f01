//! Confusion matrices, per-class precision/recall/F1, report rendering and
//! baseline-vs-KGML comparison.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::label::{ClassLabel, NUM_CLASSES};
use crate::model::Mode;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_indices(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::InvalidArgument(format!(
                    "class index out of range: {t}, {p}"
                )));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub label: ClassLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One row per class in index order; any 0/0 is reported as 0.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    ClassLabel::ALL
        .iter()
        .map(|&label| {
            let c = label.index();
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.predicted(c));
            let recall = ratio(tp, cm.support(c));
            ClassMetrics {
                label,
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.support(c),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: Option<ConfusionMatrix>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub fn from_confusion(cm: ConfusionMatrix, mode: Option<Mode>, seed: Option<u64>) -> Self {
        let per_class = if cm.total() == 0 {
            Vec::new()
        } else {
            per_class_metrics(&cm)
        };
        let mut r = Self::from_rows(per_class);
        r.confusion = Some(cm);
        r.mode = mode;
        r.seed = seed;
        r
    }

    /// Report from already-computed rows (e.g. a printed table). Macro
    /// values are unweighted means of the given columns.
    pub fn from_rows(per_class: Vec<ClassMetrics>) -> Self {
        Self {
            macro_precision: mean(per_class.iter().map(|r| r.precision)),
            macro_recall: mean(per_class.iter().map(|r| r.recall)),
            macro_f1: mean(per_class.iter().map(|r| r.f1)),
            per_class,
            confusion: None,
            mode: None,
            seed: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.per_class.is_empty()
    }

    pub fn total_support(&self) -> u64 {
        self.per_class.iter().map(|r| r.support).sum()
    }

    pub fn row(&self, label: ClassLabel) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|r| r.label == label)
    }
}

const COLUMNS: [(&str, usize); 5] = [
    ("Category", 8),
    ("Precision", 9),
    ("Recall", 6),
    ("F1-Score", 8),
    ("Support", 7),
];

fn header_line() -> String {
    COLUMNS
        .iter()
        .map(|(name, w)| format!("{name:<w$}"))
        .collect::<Vec<_>>()
        .join("  ")
        .trim_end()
        .to_string()
}

fn table_row(label: &str, p: f64, r: f64, f1: f64, support: u64) -> String {
    format!(
        "{label:<w0$}  {p:>w1$.2}  {r:>w2$.2}  {f1:>w3$.2}  {support:>w4$}",
        w0 = COLUMNS[0].1,
        w1 = COLUMNS[1].1,
        w2 = COLUMNS[2].1,
        w3 = COLUMNS[3].1,
        w4 = COLUMNS[4].1,
    )
}

/// Fixed-column text table, metrics at two decimals, rows in class order,
/// closed by a macro-average row.
pub fn render_report(r: &EvalReport) -> String {
    let mut s = String::new();
    if let Some(mode) = r.mode {
        writeln!(s, "# mode: {mode}").unwrap();
    }
    if let Some(seed) = r.seed {
        writeln!(s, "# seed: {seed}").unwrap();
    }
    writeln!(s, "{}", header_line()).unwrap();
    if r.is_empty() {
        writeln!(s, "{:<w$}  n/a", "macro", w = COLUMNS[0].1).unwrap();
        return s;
    }
    for row in &r.per_class {
        writeln!(
            s,
            "{}",
            table_row(
                row.label.code(),
                row.precision,
                row.recall,
                row.f1,
                row.support
            )
        )
        .unwrap();
    }
    writeln!(
        s,
        "{}",
        table_row(
            "macro",
            r.macro_precision,
            r.macro_recall,
            r.macro_f1,
            r.total_support()
        )
    )
    .unwrap();
    s
}

/// Delimited twin of [`render_report`] at full precision.
pub fn report_csv(r: &EvalReport) -> String {
    let mut s = String::from("label,precision,recall,f1,support\n");
    for row in &r.per_class {
        writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{}",
            row.label.code(),
            row.precision,
            row.recall,
            row.f1,
            row.support
        )
        .unwrap();
    }
    s
}

fn parse_row(fields: &[&str], line: &str) -> Result<ClassMetrics> {
    if fields.len() != 5 {
        return Err(Error::Report(format!("expected 5 fields in {line:?}")));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Report(format!("bad number {s:?} in {line:?}")))
    };
    Ok(ClassMetrics {
        label: fields[0].parse()?,
        precision: num(fields[1])?,
        recall: num(fields[2])?,
        f1: num(fields[3])?,
        support: fields[4]
            .parse()
            .map_err(|_| Error::Report(format!("bad support in {line:?}")))?,
    })
}

fn parse_meta(line: &str, r: &mut EvalReport) -> Result<()> {
    if let Some(m) = line.strip_prefix("# mode:") {
        r.mode = Some(m.trim().parse()?);
    } else if let Some(s) = line.strip_prefix("# seed:") {
        r.seed = Some(
            s.trim()
                .parse()
                .map_err(|_| Error::Report(format!("bad seed line {line:?}")))?,
        );
    }
    Ok(())
}

/// Parse the text table written by [`render_report`].
pub fn parse_report_table(text: &str) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let mut meta = EvalReport::from_rows(Vec::new());
    let mut header = false;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with('#') {
            parse_meta(line, &mut meta)?;
            continue;
        }
        if !header {
            if !line.starts_with("Category") {
                return Err(Error::Report(format!(
                    "expected table header, found {line:?}"
                )));
            }
            header = true;
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.first() == Some(&"macro") {
            continue;
        }
        rows.push(parse_row(&fields, line)?);
    }
    if !header {
        return Err(Error::Report("missing table header".into()));
    }
    let mut r = EvalReport::from_rows(rows);
    r.mode = meta.mode;
    r.seed = meta.seed;
    Ok(r)
}

/// Parse the delimited twin written by [`report_csv`].
pub fn parse_report_csv(text: &str) -> Result<EvalReport> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some("label,precision,recall,f1,support") => {}
        other => return Err(Error::Report(format!("unexpected csv header {other:?}"))),
    }
    let rows = lines
        .map(|l| parse_row(&l.split(',').map(str::trim).collect::<Vec<_>>(), l))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDelta {
    pub label: ClassLabel,
    pub delta_precision: f64,
    pub delta_recall: f64,
    pub delta_f1: f64,
}

impl ClassDelta {
    pub fn improved_all(&self) -> bool {
        self.delta_precision > 0.0 && self.delta_recall > 0.0 && self.delta_f1 > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub per_class: Vec<ClassDelta>,
    pub delta_macro_precision: f64,
    pub delta_macro_recall: f64,
    pub delta_macro_f1: f64,
}

impl ComparisonReport {
    pub fn improved_classes(&self) -> Vec<ClassLabel> {
        self.per_class
            .iter()
            .filter(|d| d.improved_all())
            .map(|d| d.label)
            .collect()
    }

    pub fn f1_improved_count(&self) -> usize {
        self.per_class.iter().filter(|d| d.delta_f1 > 0.0).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,delta_p,delta_r,delta_f1\n");
        for d in &self.per_class {
            writeln!(
                s,
                "{},{:.6},{:.6},{:.6}",
                d.label.code(),
                d.delta_precision,
                d.delta_recall,
                d.delta_f1
            )
            .unwrap();
        }
        writeln!(
            s,
            "macro,{:.6},{:.6},{:.6}",
            self.delta_macro_precision, self.delta_macro_recall, self.delta_macro_f1
        )
        .unwrap();
        s
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<8}  {:>8}  {:>8}  {:>8}  improved\n",
            "Category", "dP", "dR", "dF1"
        );
        for d in &self.per_class {
            writeln!(
                s,
                "{:<8}  {:>+8.3}  {:>+8.3}  {:>+8.3}  {}",
                d.label.code(),
                d.delta_precision,
                d.delta_recall,
                d.delta_f1,
                if d.improved_all() { "yes" } else { "no" }
            )
            .unwrap();
        }
        writeln!(
            s,
            "{:<8}  {:>+8.3}  {:>+8.3}  {:>+8.3}",
            "macro", self.delta_macro_precision, self.delta_macro_recall, self.delta_macro_f1
        )
        .unwrap();
        s
    }
}

/// Deltas `b - a`. Both reports must cover the same classes with the same
/// supports, i.e. come from the same test split.
pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<ComparisonReport> {
    let labels = |r: &EvalReport| r.per_class.iter().map(|c| c.label).collect::<Vec<_>>();
    if labels(a) != labels(b) {
        return Err(Error::Report("reports cover different class sets".into()));
    }
    let mut per_class = Vec::with_capacity(a.per_class.len());
    for (x, y) in a.per_class.iter().zip(&b.per_class) {
        if x.support != y.support {
            return Err(Error::Report(format!(
                "{}: support {} vs {} (different test sets)",
                x.label, x.support, y.support
            )));
        }
        per_class.push(ClassDelta {
            label: x.label,
            delta_precision: y.precision - x.precision,
            delta_recall: y.recall - x.recall,
            delta_f1: y.f1 - x.f1,
        });
    }
    Ok(ComparisonReport {
        per_class,
        delta_macro_precision: b.macro_precision - a.macro_precision,
        delta_macro_recall: b.macro_recall - a.macro_recall,
        delta_macro_f1: b.macro_f1 - a.macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(n: [u64; 5]) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for (i, &v) in n.iter().enumerate() {
            cm.counts[i][i] = v;
        }
        cm
    }

    #[test]
    fn perfect_classifier() {
        let rows = per_class_metrics(&diag([3, 4, 5, 6, 7]));
        for r in rows {
            assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn absent_class_is_zero_not_nan() {
        let rows = per_class_metrics(&diag([3, 0, 5, 6, 7]));
        assert_eq!(
            (rows[1].precision, rows[1].recall, rows[1].f1),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(rows[1].support, 0);
    }

    #[test]
    fn ng_row_f1() {
        assert_eq!(format!("{:.2}", f1_score(0.75, 0.79)), "0.77");
    }

    #[test]
    fn constant_predictor() {
        let truth = [0, 0, 1, 2, 2, 2, 3, 4, 4, 4];
        let pred = [2; 10];
        let cm = ConfusionMatrix::from_indices(&truth, &pred).unwrap();
        let rows = per_class_metrics(&cm);
        for r in &rows {
            if r.label.index() == 2 {
                assert_eq!(r.recall, 1.0);
                assert_eq!(r.precision, 3.0 / 10.0);
            } else {
                assert_eq!(r.recall, 0.0);
            }
        }
    }

    #[test]
    fn render_ng_line_and_parse_back() {
        let mut rows = per_class_metrics(&diag([1, 1, 1, 1, 1]));
        rows[3] = ClassMetrics {
            label: ClassLabel::Ng,
            precision: 0.75,
            recall: 0.79,
            f1: 0.77,
            support: 230,
        };
        let mut r = EvalReport::from_rows(rows);
        r.mode = Some(Mode::Baseline);
        r.seed = Some(4);
        let text = render_report(&r);
        let ng = text.lines().find(|l| l.starts_with("NG")).unwrap();
        assert_eq!(
            ng.split_whitespace().collect::<Vec<_>>(),
            ["NG", "0.75", "0.79", "0.77", "230"]
        );
        assert!(text.contains("Category  Precision  Recall  F1-Score  Support"));
        let back = parse_report_table(&text).unwrap();
        assert_eq!(back.mode, Some(Mode::Baseline));
        assert_eq!(back.seed, Some(4));
        assert_eq!(back.per_class[3], r.per_class[3]);
    }

    #[test]
    fn empty_report() {
        let r = EvalReport::from_confusion(ConfusionMatrix::default(), None, None);
        let text = render_report(&r);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("macro") && lines[1].ends_with("n/a"));
        assert!(parse_report_table(&text).unwrap().is_empty());
    }

    #[test]
    fn self_compare_is_zero_and_mismatch_errors() {
        let a = EvalReport::from_confusion(diag([2, 3, 4, 5, 6]), None, None);
        let c = compare(&a, &a).unwrap();
        assert!(c
            .per_class
            .iter()
            .all(|d| d.delta_f1 == 0.0 && d.delta_precision == 0.0));
        assert_eq!(c.delta_macro_f1, 0.0);
        let b = EvalReport::from_confusion(diag([2, 3, 4, 5, 7]), None, None);
        assert!(compare(&a, &b).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut cm = diag([5, 6, 7, 8, 9]);
        cm.counts[0][3] = 2;
        cm.counts[4][1] = 1;
        let r = EvalReport::from_confusion(cm, None, None);
        let back = parse_report_csv(&report_csv(&r)).unwrap();
        for (x, y) in back.per_class.iter().zip(&r.per_class) {
            assert!((x.f1 - y.f1).abs() < 1e-6);
            assert_eq!(x.support, y.support);
        }
    }
}
