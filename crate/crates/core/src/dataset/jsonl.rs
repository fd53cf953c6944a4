//! JSON-lines format: line 1 is a meta object (with a `count` of the
//! transitions that follow), then one object per transition with keys
//! `s, a, r, c, s_next, kind, ep, t`. Reals are written with 17 significant
//! digits so every value round-trips exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

use super::{DataMeta, DataSet, Transition, TransitionKind};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(flatten)]
    meta: DataMeta,
    count: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    s: Vec<f64>,
    a: Vec<f64>,
    r: f64,
    c: f64,
    s_next: Vec<f64>,
    kind: TransitionKind,
    ep: u64,
    t: usize,
}

pub(crate) fn fmt_real(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("write to string");
}

fn fmt_array(out: &mut String, vs: &[f64]) {
    out.push('[');
    for (i, v) in vs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        fmt_real(out, *v);
    }
    out.push(']');
}

fn kind_str(k: TransitionKind) -> &'static str {
    match k {
        TransitionKind::Real => "real",
        TransitionKind::Imaginary => "imaginary",
        TransitionKind::ImaginaryPenalized => "imaginary_penalized",
    }
}

fn transition_line(tr: &Transition) -> String {
    let mut s = String::with_capacity(512);
    s.push_str("{\"s\":");
    fmt_array(&mut s, &tr.global_state);
    s.push_str(",\"a\":");
    fmt_array(&mut s, &tr.joint_action);
    s.push_str(",\"r\":");
    fmt_real(&mut s, tr.reward);
    s.push_str(",\"c\":");
    fmt_real(&mut s, tr.cost);
    s.push_str(",\"s_next\":");
    fmt_array(&mut s, &tr.next_global_state);
    write!(
        s,
        ",\"kind\":\"{}\",\"ep\":{},\"t\":{}}}",
        kind_str(tr.kind),
        tr.episode_id,
        tr.t
    )
    .expect("write to string");
    s
}

pub fn write_jsonl(ds: &DataSet, path: &Path) -> Result<()> {
    ds.validate()?;
    for (k, tr) in ds.transitions.iter().enumerate() {
        let finite = tr
            .global_state
            .iter()
            .chain(&tr.next_global_state)
            .chain(&tr.joint_action)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                context: format!("transition {k}"),
                detail: "state or action".into(),
            });
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = serde_json::to_value(&ds.meta).expect("meta serializes");
    header["count"] = serde_json::Value::from(ds.transitions.len());
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for tr in &ds.transitions {
        writeln!(w, "{}", transition_line(tr)).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<DataSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let first = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::Schema(format!("{}: empty file, no meta header", path.display()))),
    };
    let header: Header = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    let meta = header.meta;
    let sd = meta.n * meta.ds;

    let mut transitions = Vec::with_capacity(header.count);
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if row.s.len() != sd || row.s_next.len() != sd || row.a.len() != meta.n {
            return Err(Error::Schema(format!(
                "{}:{lineno}: dims s={} s_next={} a={} do not match meta (state {sd}, n {})",
                path.display(),
                row.s.len(),
                row.s_next.len(),
                row.a.len(),
                meta.n
            )));
        }
        transitions.push(Transition {
            global_state: row.s,
            joint_action: row.a,
            reward: row.r,
            cost: row.c,
            next_global_state: row.s_next,
            kind: row.kind,
            episode_id: row.ep,
            t: row.t,
        });
    }
    if transitions.len() != header.count {
        return Err(Error::Schema(format!(
            "{}: header announces {} transitions, found {} (truncated file?)",
            path.display(),
            header.count,
            transitions.len()
        )));
    }
    DataSet::new(meta, transitions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{BehaviorParams, SimConfig};
    use crate::dataset::collect_real_data;

    fn sample() -> DataSet {
        let cfg = SimConfig::default();
        let b = [BehaviorParams { mean: 1.0, noise: 0.1 }];
        collect_real_data(&cfg, &b, 7, 1).unwrap()
    }

    #[test]
    fn real_formatting_round_trips() {
        for v in [0.1, -0.0, 1.0 / 3.0, 1e-300, 123456.789, f64::MAX, f64::MIN_POSITIVE] {
            let mut s = String::new();
            fmt_real(&mut s, v);
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        assert!(ds.len() >= 100);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_jsonl(&ds, &p).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let mut ds = sample();
        ds.transitions.clear();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        write_jsonl(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_jsonl(&p).unwrap(), ds);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        write_jsonl(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let keep: Vec<&str> = text.lines().take(10).collect();
        std::fs::write(&p, keep.join("\n")).unwrap();
        assert!(matches!(read_jsonl(&p), Err(Error::Schema(_))));
        // A line cut mid-object is a parse error carrying its line number.
        let cut = &text[..text.len() / 2];
        std::fs::write(&p, cut).unwrap();
        match read_jsonl(&p) {
            Err(Error::Parse { line, .. }) => assert!(line > 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_schema_error() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_jsonl(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let patched = text.replacen("\"n\":3", "\"n\":4", 1);
        std::fs::write(&p, patched).unwrap();
        assert!(matches!(read_jsonl(&p), Err(Error::Schema(_))));
    }
}
