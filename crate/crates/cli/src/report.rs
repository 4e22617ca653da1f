//! CSV reports: per-instance results in long form, per-size means, and the
//! wide Objective/Gap layout.

use std::cmp::Ordering;
use std::fmt::Write as _;

use jsp_core::env::{gap_percent, reported_gap, round_percent};
use jsp_core::Time;

/// One decoded instance under one method.
#[derive(Clone, Debug)]
pub struct Row {
    pub name: String,
    pub size: (usize, usize),
    pub method: String,
    pub makespan: Time,
    pub reference: Time,
}

/// A long-form record as written to CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub method: String,
    pub makespan: String,
    pub gap: String,
}

/// `# key=value` lines.
pub fn echo(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

/// Orders `TA2` before `TA10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let split = |s: &str| {
        let digits = s.len() - s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        let (head, tail) = s.split_at(s.len() - digits);
        (head.to_string(), tail.parse::<u64>().ok())
    };
    split(a).cmp(&split(b)).then_with(|| a.cmp(b))
}

/// Instance records grouped by size, each group followed by its mean
/// records. `methods` fixes the method order within an instance.
pub fn records(rows: &[Row], methods: &[String]) -> Vec<Record> {
    let method_index = |m: &str| methods.iter().position(|x| x == m).unwrap_or(usize::MAX);
    let mut sorted: Vec<&Row> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.size
            .cmp(&b.size)
            .then_with(|| natural_cmp(&a.name, &b.name))
            .then_with(|| method_index(&a.method).cmp(&method_index(&b.method)))
    });
    let mut out = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let size = sorted[start].size;
        let end = start
            + sorted[start..]
                .iter()
                .take_while(|r| r.size == size)
                .count();
        let group = &sorted[start..end];
        for r in group {
            out.push(Record {
                name: r.name.clone(),
                method: r.method.clone(),
                makespan: r.makespan.to_string(),
                gap: format!("{:.2}", reported_gap(r.makespan, r.reference)),
            });
        }
        for m in methods {
            let of: Vec<&&Row> = group.iter().filter(|r| &r.method == m).collect();
            if of.is_empty() {
                continue;
            }
            let k = of.len() as f64;
            let mean_makespan = of.iter().map(|r| f64::from(r.makespan)).sum::<f64>() / k;
            let mean_gap = of
                .iter()
                .map(|r| gap_percent(r.makespan, r.reference))
                .sum::<f64>()
                / k;
            out.push(Record {
                name: format!("mean:{}x{}", size.0, size.1),
                method: m.clone(),
                makespan: format!("{mean_makespan:.1}"),
                gap: format!("{:.2}", round_percent(mean_gap)),
            });
        }
        start = end;
    }
    out
}

pub fn long_csv(records: &[Record], method_header: &str) -> String {
    let mut out = format!("name,{method_header},makespan,gap\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.name, r.method, r.makespan, r.gap);
    }
    out
}

/// One row per name and an `_obj`/`_gap` column pair per method, both in
/// order of first appearance.
pub fn wide_csv(records: &[Record]) -> String {
    let mut names: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.name.as_str()) {
            names.push(&r.name);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = String::from("name");
    for m in &methods {
        let _ = write!(out, ",{m}_obj,{m}_gap");
    }
    out.push('\n');
    for name in names {
        out.push_str(name);
        for m in &methods {
            match records.iter().find(|r| r.name == name && r.method == *m) {
                Some(r) => {
                    let _ = write!(out, ",{},{}", r.makespan, r.gap);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Reads long-form records, skipping `#` lines.
pub fn parse_long(text: &str) -> Result<Vec<Record>, String> {
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.len() != 4 || &headers[0] != "name" || &headers[2] != "makespan" {
        return Err(format!(
            "expected columns name,<method>,makespan,gap; found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        ));
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(Record {
                name: rec[0].to_string(),
                method: rec[1].to_string(),
                makespan: rec[2].to_string(),
                gap: rec[3].to_string(),
            })
        })
        .collect()
}
