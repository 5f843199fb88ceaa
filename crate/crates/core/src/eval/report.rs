use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{round1, EvalError, EvalReport};

/// File name of the combined grid report.
pub const GRID_REPORT: &str = "report.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), EvalError> {
    let mut f = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f.write_all(body).and_then(|_| f.flush()).map_err(io_err(path))
}

fn json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("reports serialize");
    s.push(b'\n');
    s
}

fn label(r: &EvalReport) -> String {
    r.experiment.as_ref().map_or_else(|| "model".to_string(), |e| e.id.clone())
}

fn horizons_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("spec,horizon,accuracy\n");
    for r in reports {
        for (h, a) in r.metrics.acc_per_horizon.iter().enumerate() {
            writeln!(s, "{},{h},{a}", label(r)).expect("string write");
        }
    }
    s
}

fn confusion_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("spec,true,predicted,count\n");
    for r in reports {
        for (i, row) in r.metrics.confusion.iter().enumerate() {
            for (j, n) in row.iter().enumerate() {
                writeln!(s, "{},{},{},{n}", label(r), r.class_order[i], r.class_order[j]).expect("string write");
            }
        }
    }
    s
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", round1(v)))
}

fn tables_md(reports: &[EvalReport]) -> String {
    let mut s = String::from("# Results\n\nAccuracies in percent on the held-out test session.\n\n");
    s.push_str("## Experiments\n\n");
    s.push_str("| Experiment | Classes | AVD | w | Current turn | Future turns average | Overall | Validation |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in reports {
        let m = &r.metrics;
        writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            label(r),
            r.class_order.len(),
            if r.window.use_avd { "yes" } else { "no" },
            r.window.w_text,
            pct(Some(m.acc_current)),
            pct(m.acc_future_avg),
            pct(Some(m.acc_overall)),
            pct(r.acc_validation),
        )
        .expect("string write");
    }
    let find = |id: &str| reports.iter().find(|r| r.experiment.as_ref().is_some_and(|e| e.id == id));
    let mut pair = |title: &str, a: &str, b: &str, note: &str| {
        if let (Some(x), Some(y)) = (find(a), find(b)) {
            writeln!(s, "\n## {title}\n\n{note}\n").expect("string write");
            s.push_str("| Experiment | Current turn | Future turns average | Overall |\n|---|---|---|---|\n");
            for r in [x, y] {
                let m = &r.metrics;
                writeln!(
                    s,
                    "| {} | {} | {} | {} |",
                    label(r),
                    pct(Some(m.acc_current)),
                    pct(m.acc_future_avg),
                    pct(Some(m.acc_overall))
                )
                .expect("string write");
            }
            let d = x.metrics.acc_overall - y.metrics.acc_overall;
            writeln!(s, "\nOverall difference {a} - {b}: {:+.1} points.", round1(d)).expect("string write");
        }
    };
    pair("Emotion attributes", "E4", "E5", "Same window with and without AVD in the emotion history.");
    pair("Class scheme", "E6", "E4", "Four merged classes against six.");
    s.push_str("\n## Accuracy by horizon\n\n| Experiment |");
    let k = reports.iter().map(|r| r.metrics.acc_per_horizon.len()).max().unwrap_or(0);
    for h in 0..k {
        write!(s, " t+{h} |").expect("string write");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(k));
    s.push('\n');
    for r in reports {
        write!(s, "| {} |", label(r)).expect("string write");
        for h in 0..k {
            write!(s, " {} |", pct(r.metrics.acc_per_horizon.get(h).copied())).expect("string write");
        }
        s.push('\n');
    }
    s
}

/// Writes `report.json`, `tables.md`, `horizons.csv` and `confusion.csv`
/// for one report.
pub fn write_report(dir: impl AsRef<Path>, report: &EvalReport) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let one = std::slice::from_ref(report);
    write_file(&dir.join("report.json"), &json(report))?;
    write_file(&dir.join("tables.md"), tables_md(one).as_bytes())?;
    write_file(&dir.join("horizons.csv"), horizons_csv(one).as_bytes())?;
    write_file(&dir.join("confusion.csv"), confusion_csv(one).as_bytes())
}

/// Writes one `<id>/report.json` per experiment plus combined
/// `report.json`, `tables.md`, `horizons.csv` and `confusion.csv`.
pub fn write_grid(dir: impl AsRef<Path>, reports: &[EvalReport]) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    for r in reports {
        let sub = dir.join(label(r));
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        write_file(&sub.join("report.json"), &json(r))?;
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(GRID_REPORT), &json(&reports))?;
    write_file(&dir.join("tables.md"), tables_md(reports).as_bytes())?;
    write_file(&dir.join("horizons.csv"), horizons_csv(reports).as_bytes())?;
    write_file(&dir.join("confusion.csv"), confusion_csv(reports).as_bytes())
}
