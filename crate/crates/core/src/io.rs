//! CSV ingestion of accuracy and score tables, metric reports, and writers
//! for every tabular output.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fim::FimSpectrum;
use crate::metrics::{kendall_tau_b, ndcg_over_seeds, spearman_rho, EvalPair};
use crate::ranking::{rank_from_scores, Direction, Provenance, ScoreTable};
use crate::search::{Member, SearchResult};

/// Shortest text that parses back to the same `f64`, switching to
/// exponent notation for very small or very large magnitudes.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Validation accuracies in percent, one row per architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub rows: Vec<(String, f64)>,
    pub dataset_tag: String,
}

impl AccuracyTable {
    pub fn get(&self, arch_id: &str) -> Option<f64> {
        self.rows.iter().find(|(id, _)| id == arch_id).map(|r| r.1)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Reads CSV records after checking the header, handing each record to `row`
/// together with its 1-based line number.
fn read_records<R: Read>(
    reader: R,
    header: &[&str],
    mut row: impl FnMut(usize, &csv::StringRecord) -> Result<()>,
) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let first = records.next().ok_or(Error::Empty("csv file"))??;
    let got: Vec<&str> = first.iter().map(str::trim).collect();
    if got != header {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("expected header `{}`, found `{}`", header.join(","), got.join(",")),
        });
    }
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                column: record.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        row(line, &record)?;
    }
    Ok(())
}

fn parse_field(record: &csv::StringRecord, column: usize, line: usize) -> Result<f64> {
    let text = record[column].trim();
    let v: f64 = text.parse().map_err(|_| Error::Parse {
        line,
        column: column + 1,
        message: format!("`{text}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            column: column + 1,
            message: format!("`{text}` is not finite"),
        });
    }
    Ok(v)
}

fn non_empty_id(record: &csv::StringRecord, line: usize) -> Result<String> {
    let id = record[0].trim();
    if id.is_empty() {
        return Err(Error::Parse {
            line,
            column: 1,
            message: "empty arch_id".into(),
        });
    }
    Ok(id.to_string())
}

pub fn parse_accuracy_table<R: Read>(reader: R, dataset_tag: &str) -> Result<AccuracyTable> {
    let mut rows = Vec::new();
    let mut lines: HashMap<String, usize> = HashMap::new();
    read_records(reader, &["arch_id", "accuracy"], |line, record| {
        let id = non_empty_id(record, line)?;
        let acc = parse_field(record, 1, line)?;
        if !(0.0..=100.0).contains(&acc) {
            return Err(Error::OutOfRange {
                line,
                value: acc,
                min: 0.0,
                max: 100.0,
            });
        }
        if let Some(&first) = lines.get(&id) {
            return Err(Error::DuplicateRow {
                key: id,
                first,
                second: line,
            });
        }
        lines.insert(id.clone(), line);
        rows.push((id, acc));
        Ok(())
    })?;
    Ok(AccuracyTable {
        rows,
        dataset_tag: dataset_tag.to_string(),
    })
}

/// Reads an `arch_id,accuracy` file; the dataset tag is the file stem.
pub fn ingest_accuracy_table(path: &Path) -> Result<AccuracyTable> {
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_accuracy_table(std::fs::File::open(path)?, &tag)
}

/// Writes the table sorted by `arch_id`.
pub fn write_accuracy_table<W: Write>(table: &AccuracyTable, out: W) -> Result<()> {
    let mut rows: Vec<&(String, f64)> = table.rows.iter().collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["arch_id", "accuracy"])?;
    for (id, acc) in rows {
        w.write_record([id.as_str(), &format_f64(*acc)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_score_table<R: Read>(reader: R) -> Result<ScoreTable> {
    let mut table = ScoreTable::new(Provenance::ExternalFile);
    let mut lines: HashMap<(String, String), usize> = HashMap::new();
    read_records(reader, &["arch_id", "proxy_name", "value"], |line, record| {
        let id = non_empty_id(record, line)?;
        let proxy = record[1].trim().to_string();
        if proxy.is_empty() {
            return Err(Error::Parse {
                line,
                column: 2,
                message: "empty proxy_name".into(),
            });
        }
        let value = parse_field(record, 2, line)?;
        let key = (id.clone(), proxy.clone());
        if let Some(&first) = lines.get(&key) {
            return Err(Error::DuplicateRow {
                key: format!("{id},{proxy}"),
                first,
                second: line,
            });
        }
        lines.insert(key, line);
        table.insert(&id, &proxy, value)
    })?;
    Ok(table)
}

pub fn ingest_score_table(path: &Path) -> Result<ScoreTable> {
    parse_score_table(std::fs::File::open(path)?)
}

/// Writes rows in table order.
pub fn write_score_table<W: Write>(table: &ScoreTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["arch_id", "proxy_name", "value"])?;
    for r in table.rows() {
        w.write_record([r.arch_id.as_str(), r.proxy_name.as_str(), &format_f64(r.value)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_spectrum<W: Write>(spec: &FimSpectrum, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "eigenvalue"])?;
    for (i, v) in spec.eigenvalues.iter().enumerate() {
        w.write_record([i.to_string(), format_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_population<W: Write>(population: &[Member], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["arch_id", "score", "flops", "aleph"])?;
    for m in population {
        w.write_record([
            m.encoding.to_string(),
            format_f64(m.score),
            m.flops.to_string(),
            m.aleph.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(result: &SearchResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "best_score"])?;
    for (i, v) in result.trace.iter().enumerate() {
        w.write_record([i.to_string(), format_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Rank-quality metrics of one proxy against the accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyMetrics {
    pub proxy: String,
    /// Architectures scored by this proxy and present in the accuracy table.
    pub overlap: usize,
    /// Ids present on one side only.
    pub missing: Vec<String>,
    pub kendall_tau: f64,
    pub spearman_rho: f64,
    pub ndcg: Vec<f64>,
    pub ndcg_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub p: usize,
    pub seeds: Vec<u64>,
    pub dataset_tag: String,
    pub proxies: Vec<ProxyMetrics>,
}

/// Kendall τ and Spearman ρ once per proxy, nDCG_P once per tie seed.
pub fn eval_report(scores: &ScoreTable, acc: &AccuracyTable, p: usize, seeds: &[u64]) -> Result<MetricReport> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let names = scores.proxy_names();
    if names.is_empty() {
        return Err(Error::Empty("score table"));
    }
    let mut proxies = Vec::with_capacity(names.len());
    for proxy in names {
        let scored = scores.scores(&proxy);
        let by_id: HashMap<&str, f64> = scored.iter().map(|(id, v)| (id.as_str(), *v)).collect();
        let mut joined = Vec::new();
        let mut accuracies = Vec::new();
        let mut missing = Vec::new();
        for (id, a) in &acc.rows {
            match by_id.get(id.as_str()) {
                Some(&v) => {
                    joined.push((id.clone(), v));
                    accuracies.push(*a);
                }
                None => missing.push(id.clone()),
            }
        }
        missing.extend(
            scored
                .iter()
                .filter(|(id, _)| acc.get(id).is_none())
                .map(|(id, _)| id.clone()),
        );
        if joined.len() < 2 {
            return Err(Error::InsufficientOverlap { overlap: joined.len() });
        }
        let ranks = rank_from_scores(&joined, Direction::HigherBetter)?;
        let pair = EvalPair::new(accuracies, ranks.ranks)?;
        let (ndcg_mean, ndcg) = ndcg_over_seeds(&pair, p, seeds)?;
        proxies.push(ProxyMetrics {
            proxy,
            overlap: pair.len(),
            missing,
            kendall_tau: kendall_tau_b(&pair)?,
            spearman_rho: spearman_rho(&pair)?,
            ndcg,
            ndcg_mean,
        });
    }
    Ok(MetricReport {
        p,
        seeds: seeds.to_vec(),
        dataset_tag: acc.dataset_tag.clone(),
        proxies,
    })
}

impl MetricReport {
    /// Long format: `proxy,metric,seed,value`, with `mean` in the seed
    /// column for the averaged nDCG and empty for seed-free metrics.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["proxy", "metric", "seed", "value"])?;
        let ndcg = format!("ndcg@{}", self.p);
        for m in &self.proxies {
            w.write_record([m.proxy.as_str(), "kt", "", &format_f64(m.kendall_tau)])?;
            w.write_record([m.proxy.as_str(), "spr", "", &format_f64(m.spearman_rho)])?;
            for (seed, v) in self.seeds.iter().zip(&m.ndcg) {
                w.write_record([m.proxy.as_str(), ndcg.as_str(), &seed.to_string(), &format_f64(*v)])?;
            }
            w.write_record([m.proxy.as_str(), ndcg.as_str(), "mean", &format_f64(m.ndcg_mean)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "| Proxy | KT | SPR | nDCG@{} (mean of {}) |",
            self.p,
            self.seeds.len()
        );
        s.push_str("|---|---:|---:|---:|\n");
        for m in &self.proxies {
            let _ = writeln!(
                s,
                "| {} | {:.3} | {:.3} | {:.3} |",
                m.proxy, m.kendall_tau, m.spearman_rho, m.ndcg_mean
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_a_well_formed_table() {
        let t = parse_accuracy_table("arch_id,accuracy\na,91.5\nb,88\nc,70.25\n".as_bytes(), "c10").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.get("b"), Some(88.0));
        assert_eq!(t.dataset_tag, "c10");
    }

    #[test]
    fn duplicates_name_both_lines() {
        let err = parse_accuracy_table("arch_id,accuracy\na,1\nb,2\na,3\n".as_bytes(), "").unwrap_err();
        assert!(
            matches!(
                err,
                Error::DuplicateRow {
                    first: 2,
                    second: 4,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn bad_rows_report_position() {
        let err = parse_accuracy_table("arch_id,accuracy\na,1\nb,x\n".as_bytes(), "").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, column: 2, .. }), "{err}");
        let err = parse_accuracy_table("arch_id,accuracy\na,101\n".as_bytes(), "").unwrap_err();
        assert!(matches!(err, Error::OutOfRange { line: 2, .. }));
        let err = parse_accuracy_table("arch_id,acc\n".as_bytes(), "").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_accuracy_table("arch_id,accuracy\na,1,2\n".as_bytes(), "").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: 3, .. }));
    }

    #[test]
    fn score_tables_round_trip() {
        let text = "arch_id,proxy_name,value\na,flops,10\na,jacov,-3.5\nb,flops,1.25e-7\n";
        let t = parse_score_table(text.as_bytes()).unwrap();
        assert_eq!(t.provenance, Provenance::ExternalFile);
        let mut out = Vec::new();
        write_score_table(&t, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        let dup = "arch_id,proxy_name,value\na,flops,1\na,flops,2\n";
        assert!(matches!(
            parse_score_table(dup.as_bytes()),
            Err(Error::DuplicateRow {
                first: 2,
                second: 3,
                ..
            })
        ));
        assert!(parse_score_table("arch_id,proxy_name,value\na,f,NaN\n".as_bytes()).is_err());
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.0, 1.0, -2.5, 1e-300, 123456.789, 3.2e20, 1e-4, 9.99e-5] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_f64(1e-300), "1e-300");
    }

    #[test]
    fn perfect_proxy_scores_one() {
        let acc = parse_accuracy_table("arch_id,accuracy\na,50\nb,60\nc,70\nd,65\n".as_bytes(), "t").unwrap();
        let mut scores = ScoreTable::new(Provenance::Native);
        for (id, a) in &acc.rows {
            scores.insert(id, "oracle", *a).unwrap();
        }
        let r = eval_report(&scores, &acc, 1000, &[0, 1, 2]).unwrap();
        let m = &r.proxies[0];
        assert_eq!(m.kendall_tau, 1.0);
        assert!((m.spearman_rho - 1.0).abs() < 1e-15);
        assert!(m.ndcg.iter().all(|&v| v == 1.0));
        assert!(m.missing.is_empty());
    }

    #[test]
    fn overlap_is_checked() {
        let acc = parse_accuracy_table("arch_id,accuracy\na,50\nb,60\n".as_bytes(), "t").unwrap();
        let mut scores = ScoreTable::new(Provenance::Native);
        scores.insert("a", "p", 1.0).unwrap();
        scores.insert("z", "p", 2.0).unwrap();
        assert!(matches!(
            eval_report(&scores, &acc, 10, &[0]),
            Err(Error::InsufficientOverlap { overlap: 1 })
        ));
    }
}
