//! Summaries of ablation and model-comparison CSVs plus a gnuplot script.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pemorl_core::trainer::{ABLATION_FILE, MODEL_COMPARE_FILE};
use pemorl_core::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_FILE: &str = "plot.gp";

struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Schema(format!("{}: {msg}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let header = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?;
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name}", self.path.display())))
    }

    fn num(&self, row: &[String], col: usize) -> Result<f64> {
        row[col]
            .parse()
            .map_err(|_| Error::Schema(format!("{}: {:?} is not a number", self.path.display(), row[col])))
    }
}

fn summarize_ablation(t: &Table, out: &mut Vec<[String; 5]>) -> Result<()> {
    let (h, l, m) = (t.col("config_hash")?, t.col("lambda")?, t.col("mixing_ratio")?);
    let metrics = ["r_over_rstar_mean", "r_over_rstar_std", "online_rate_mean", "gmv_mean"];
    let cols = metrics.iter().map(|c| t.col(c)).collect::<Result<Vec<_>>>()?;
    for row in &t.rows {
        let key = format!("lambda={} mixing={}", row[l], row[m]);
        for (name, &c) in metrics.iter().zip(&cols) {
            out.push([row[h].clone(), "ablation".into(), key.clone(), name.to_string(), row[c].clone()]);
        }
    }
    Ok(())
}

fn summarize_compare(t: &Table, out: &mut Vec<[String; 5]>) -> Result<()> {
    let (h, m) = (t.col("config_hash")?, t.col("model")?);
    let metrics = ["test_mae", "test_mse", "gap"];
    let cols = metrics.iter().map(|c| t.col(c)).collect::<Result<Vec<_>>>()?;
    // Keyed by (hash, model); first-seen model order is kept via the index.
    let mut acc: BTreeMap<(usize, String, String), (Vec<f64>, usize)> = BTreeMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for row in &t.rows {
        let id = (row[h].clone(), row[m].clone());
        let idx = match order.iter().position(|o| *o == id) {
            Some(i) => i,
            None => {
                order.push(id.clone());
                order.len() - 1
            }
        };
        let e = acc.entry((idx, id.0, id.1)).or_insert((vec![0.0; metrics.len()], 0));
        for (k, &c) in cols.iter().enumerate() {
            e.0[k] += t.num(row, c)?;
        }
        e.1 += 1;
    }
    for ((_, hash, model), (sums, n)) in acc {
        for (name, s) in metrics.iter().zip(sums) {
            out.push([
                hash.clone(),
                "model_compare".into(),
                model.clone(),
                format!("{name}_mean"),
                format!("{}", s / n as f64),
            ]);
        }
    }
    Ok(())
}

fn plot_script(ablation: Option<&Path>, compare: bool) -> String {
    let mut s = String::from("# gnuplot script; run with `gnuplot plot.gp`\nset datafile separator ','\nset terminal pngcairo size 800,500\n");
    if let Some(path) = ablation {
        s.push_str(&format!(
            "\nset output 'ablation.png'\nset xlabel 'lambda'\nset ylabel 'R/R*'\nset key off\n\
             # rows with mixing_ratio 0 are the no-imaginary-data baseline\n\
             plot '{}' every ::1 using 2:($3 > 0 ? $5 : 1/0):6 with yerrorlines\n",
            path.display()
        ));
    }
    if compare {
        s.push_str(&format!(
            "\nset output 'model_compare.png'\nset style data histograms\nset style fill solid\nset ylabel 'test MAE'\nset key off\n\
             plot '< grep test_mae_mean {SUMMARY_FILE}' using 5:xtic(3)\n"
        ));
    }
    s
}

/// Reads the CSVs in `input` and writes the summary and plot script to
/// `out`; returns the written paths.
pub fn write_report(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let ablation = input.join(ABLATION_FILE);
    let compare = input.join(MODEL_COMPARE_FILE);
    let (has_a, has_c) = (ablation.is_file(), compare.is_file());
    if !has_a && !has_c {
        return Err(Error::InvalidArgument(format!(
            "{} holds neither {ABLATION_FILE} nor {MODEL_COMPARE_FILE}",
            input.display()
        )));
    }
    let mut rows = Vec::new();
    if has_a {
        summarize_ablation(&Table::read(&ablation)?, &mut rows)?;
    }
    if has_c {
        summarize_compare(&Table::read(&compare)?, &mut rows)?;
    }
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| Error::Io { path: p, source }
    };
    std::fs::create_dir_all(out).map_err(io(out))?;
    let summary = out.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&summary).map_err(|e| Error::Schema(e.to_string()))?;
    w.write_record(["config_hash", "source", "key", "metric", "value"])
        .map_err(|e| Error::Schema(e.to_string()))?;
    for r in &rows {
        w.write_record(r).map_err(|e| Error::Schema(e.to_string()))?;
    }
    w.flush().map_err(io(&summary))?;
    let abs = if has_a { Some(std::path::absolute(&ablation).map_err(io(&ablation))?) } else { None };
    let plot = out.join(PLOT_FILE);
    std::fs::write(&plot, plot_script(abs.as_deref(), has_c)).map_err(io(&plot))?;
    Ok(vec![summary, plot])
}
