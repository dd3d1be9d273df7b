use std::fmt::Write as _;

use super::MetricReport;

impl MetricReport {
    /// Human-readable summary, one `name value` pair per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images {}", self.per_image.len());
        let _ = writeln!(s, "ods {:.6} threshold {:.2}", self.ods, self.ods_threshold);
        let _ = writeln!(s, "ois {:.6}", self.ois);
        let _ = writeln!(s, "ois_pooled {:.6}", self.ois_pooled);
        let _ = writeln!(s, "ap {:.6}", self.ap);
        s
    }

    /// Aggregate PR rows followed by a summary block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,f,tp,fp,fn\n");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{:.2},{:.6},{:.6},{:.6},{},{},{}",
                p.threshold,
                p.precision(),
                p.recall(),
                p.f(),
                p.tp,
                p.fp,
                p.fn_
            );
        }
        s.push_str("\nmetric,value\n");
        let _ = writeln!(s, "ods,{:.6}", self.ods);
        let _ = writeln!(s, "ods_threshold,{:.2}", self.ods_threshold);
        let _ = writeln!(s, "ois,{:.6}", self.ois);
        let _ = writeln!(s, "ois_pooled,{:.6}", self.ois_pooled);
        let _ = writeln!(s, "ap,{:.6}", self.ap);
        s
    }

    /// Recall/precision pairs for plotting.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("recall,precision\n");
        for p in &self.points {
            let _ = writeln!(s, "{:.6},{:.6}", p.recall(), p.precision());
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaRow {
    pub metric: String,
    pub baseline: f64,
    pub selected: f64,
}

impl DeltaRow {
    /// Relative change in percent, `(selected − baseline) / baseline · 100`.
    pub fn percent(&self) -> f64 {
        (self.selected - self.baseline) / self.baseline * 100.0
    }
}

/// `+10.64%` style, two decimals with an explicit sign.
pub fn format_delta(baseline: f64, selected: f64) -> String {
    let row = DeltaRow {
        metric: String::new(),
        baseline,
        selected,
    };
    if baseline == 0.0 {
        return "n/a".into();
    }
    format!("{:+.2}%", row.percent())
}

/// Table with one line per metric: `metric baseline selected (delta)`.
pub fn delta_table(rows: &[DeltaRow]) -> String {
    let mut s = format!("{:<8} {:>9} {:>20}\n", "metric", "baseline", "selected");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>9.3} {:>20}",
            r.metric,
            r.baseline,
            format!("{:.3} ({})", r.selected, format_delta(r.baseline, r.selected))
        );
    }
    s
}

impl DeltaRow {
    pub fn from_reports(baseline: &MetricReport, selected: &MetricReport) -> Vec<DeltaRow> {
        [
            ("ODS", baseline.ods, selected.ods),
            ("OIS", baseline.ois, selected.ois),
            ("AP", baseline.ap, selected.ap),
        ]
        .into_iter()
        .map(|(m, b, s)| DeltaRow {
            metric: m.into(),
            baseline: b,
            selected: s,
        })
        .collect()
    }
}
