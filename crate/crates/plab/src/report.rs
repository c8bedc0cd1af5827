//! Text artifacts: metrics CSV, training history CSV, F1 bar chart.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use plab_core::metrics::ClassCounts;
use plab_core::trainer::TrainHistory;
use plab_core::MetricsReport;

use crate::error::{Error, Result};

pub const REPORT_HEADER: [&str; 8] = ["class", "tp", "fp", "fn", "tn", "precision", "recall", "f1"];
pub const HISTORY_HEADER: &str = "epoch,train_loss,val_macro_f1,val_micro_f1,seconds";

fn check_names(report: &MetricsReport, class_names: &[String]) -> Result<()> {
    if report.per_class.len() != class_names.len() {
        return Err(Error::Config(format!(
            "report has {} classes but {} names were given",
            report.per_class.len(),
            class_names.len()
        )));
    }
    Ok(())
}

fn row(name: &str, c: &ClassCounts, p: f64, r: f64, f1: f64) -> [String; 8] {
    [
        name.to_string(),
        c.tp.to_string(),
        c.fp.to_string(),
        c.fn_.to_string(),
        c.tn.to_string(),
        format!("{p:.6}"),
        format!("{r:.6}"),
        format!("{f1:.6}"),
    ]
}

/// Per-class rows in class order, then `__macro__` and `__micro__`. The
/// aggregate rows carry the summed counts.
pub fn report_csv(report: &MetricsReport, class_names: &[String]) -> Result<String> {
    check_names(report, class_names)?;
    let total = report.counts.total();
    let s = &report.summary;
    let rows = class_names
        .iter()
        .zip(&report.counts.per_class)
        .zip(&report.per_class)
        .map(|((name, c), m)| row(name, c, m.precision, m.recall, m.f1))
        .chain([
            row(
                "__macro__",
                &total,
                s.macro_precision,
                s.macro_recall,
                s.macro_f1,
            ),
            row(
                "__micro__",
                &total,
                s.micro.precision,
                s.micro.recall,
                s.micro.f1,
            ),
        ]);
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(REPORT_HEADER).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per epoch. The loss uses the shortest round-trip decimal form.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in &history.epochs {
        writeln!(
            s,
            "{},{},{:.6},{:.6},{:.3}",
            r.epoch, r.train_loss, r.val_macro_f1, r.val_micro_f1, r.seconds
        )
        .unwrap();
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PLOT_H: f64 = 200.0;
const BAR_W: f64 = 28.0;
const STEP: f64 = 40.0;
const LEFT: f64 = 50.0;
const TOP: f64 = 30.0;

/// Per-class F1 bars in class order with a dashed macro-F1 line.
pub fn f1_svg(report: &MetricsReport, class_names: &[String]) -> Result<String> {
    check_names(report, class_names)?;
    let n = class_names.len() as f64;
    let width = LEFT + STEP * n + 20.0;
    let height = TOP + PLOT_H + 110.0;
    let base = TOP + PLOT_H;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{LEFT}" y="18" font-size="13">Per-class F1</text>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        width - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/>"#
    )
    .unwrap();
    for tick in [0.0, 0.5, 1.0] {
        let y = base - tick * PLOT_H;
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{tick:.1}</text>"#,
            LEFT - 4.0,
            y + 4.0
        )
        .unwrap();
    }
    for (i, (name, m)) in class_names.iter().zip(&report.per_class).enumerate() {
        let x = LEFT + 6.0 + STEP * i as f64;
        let h = m.f1.clamp(0.0, 1.0) * PLOT_H;
        let name = escape(name);
        writeln!(
            s,
            r##"<rect class="bar" data-class="{name}" data-f1="{:.6}" x="{x}" y="{:.3}" width="{BAR_W}" height="{h:.3}" fill="#4c72b0"/>"##,
            m.f1,
            base - h
        )
        .unwrap();
        let lx = x + BAR_W / 2.0;
        let ly = base + 10.0;
        writeln!(
            s,
            r#"<text class="label" x="{lx}" y="{ly}" text-anchor="end" transform="rotate(-60 {lx} {ly})">{name}</text>"#
        )
        .unwrap();
    }
    let macro_f1 = report.summary.macro_f1;
    let y = base - macro_f1.clamp(0.0, 1.0) * PLOT_H;
    writeln!(
        s,
        r##"<line class="macro" data-f1="{macro_f1:.6}" x1="{LEFT}" y1="{y:.3}" x2="{}" y2="{y:.3}" stroke="#c44e52" stroke-dasharray="6 3"/>"##,
        width - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r##"<text x="{}" y="{:.3}" text-anchor="end" fill="#c44e52">macro {macro_f1:.3}</text>"##,
        width - 10.0,
        y - 4.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_f1_plot(
    report: &MetricsReport,
    class_names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, f1_svg(report, class_names)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use plab_core::metrics::report;
    use plab_core::trainer::EpochRecord;
    use plab_core::LabelVector;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn two_class() -> MetricsReport {
        // Class 0: one TP, one FP. Class 1: one FN, one TN.
        let preds = vec![vec![0.9, 0.2], vec![0.7, 0.1]];
        let labels = vec![
            LabelVector::from_values(&[1, 1]).unwrap(),
            LabelVector::from_values(&[-1, -1]).unwrap(),
        ];
        report(&preds, &labels, 0.5).unwrap()
    }

    #[test]
    fn csv_layout() {
        let csv = report_csv(&two_class(), &names(2)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,tp,fp,fn,tn,precision,recall,f1");
        assert_eq!(lines[1], "c0,1,1,0,0,0.500000,1.000000,0.666667");
        assert_eq!(lines[2], "c1,0,0,1,1,0.000000,0.000000,0.000000");
        assert_eq!(lines[3], "__macro__,1,1,1,1,0.250000,0.500000,0.333333");
        assert_eq!(lines[4], "__micro__,1,1,1,1,0.500000,0.500000,0.500000");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn csv_quotes_awkward_names() {
        let csv = report_csv(&two_class(), &["a,b".into(), "c".into()]).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("\"a,b\",1"));
        assert!(report_csv(&two_class(), &names(3)).is_err());
    }

    #[test]
    fn history_layout() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.25,
                val_macro_f1: 0.5,
                val_micro_f1: 2.0 / 3.0,
                seconds: 0.0,
            }],
            best_epoch: Some(1),
        };
        assert_eq!(
            history_csv(&h),
            format!("{HISTORY_HEADER}\n1,0.25,0.500000,0.666667,0.000\n")
        );
    }

    #[test]
    fn single_perfect_class_is_full_height() {
        let r = report(
            &[vec![0.9]],
            &[LabelVector::from_values(&[1]).unwrap()],
            0.5,
        )
        .unwrap();
        let svg = f1_svg(&r, &names(1)).unwrap();
        assert_eq!(svg.matches(r#"class="bar""#).count(), 1);
        assert!(
            svg.contains(r#"data-f1="1.000000" x="56" y="30.000" width="28" height="200.000""#),
            "{svg}"
        );
    }

    #[test]
    fn twenty_bars_in_order_and_stable_bytes() {
        let preds: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..20).map(|c| ((i + c) % 3) as f64 / 2.0).collect())
            .collect();
        let labels: Vec<LabelVector> = (0..3)
            .map(|i| {
                LabelVector::from_values(
                    &(0..20)
                        .map(|c| if (i + c) % 2 == 0 { 1 } else { -1 })
                        .collect::<Vec<_>>(),
                )
                .unwrap()
            })
            .collect();
        let r = report(&preds, &labels, 0.5).unwrap();
        let mut class_names = names(20);
        class_names[3] = "<b&>".into();
        let svg = f1_svg(&r, &class_names).unwrap();
        assert_eq!(svg, f1_svg(&r, &class_names).unwrap());
        let bars: Vec<&str> = svg
            .split(r#"class="bar" data-class=""#)
            .skip(1)
            .map(|rest| &rest[..rest.find('"').unwrap()])
            .collect();
        let mut expected = names(20);
        expected[3] = "&lt;b&amp;&gt;".into();
        assert_eq!(bars, expected);
        assert_eq!(svg.matches(r#"class="macro""#).count(), 1);
    }
}
