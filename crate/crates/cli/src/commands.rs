use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use vkdnw_core::fim::{fim_spectrum_of, FimConfig};
use vkdnw_core::graph::{count_flops, trainable_layer_count};
use vkdnw_core::io::{
    eval_report, format_f64, ingest_accuracy_table, ingest_score_table, write_population, write_score_table,
    write_spectrum, write_trace,
};
use vkdnw_core::net::build_network;
use vkdnw_core::ranking::{
    aggregate_nonlinear, compute_proxy, rank_from_scores, Direction, Provenance, ProxyName, ScoreTable,
};
use vkdnw_core::search::{evolve, SearchConfig};
use vkdnw_core::space::{canonicalize, ArchEncoding, SpaceSpec};
use vkdnw_core::statlab::{
    cramer_rao_experiment, kl_survey, label_separation, mc_fim_convergence, InputSupport, MleExperimentConfig,
    SoftmaxModel,
};

use crate::{Experiment, Format};

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn enumerate(space_id: &str, unique: bool, output: Option<&Path>) -> Result<()> {
    let space = SpaceSpec::by_id(space_id)?;
    let mut w = csv_writer(output)?;
    w.write_record(["arch_id", "hash", "flops", "aleph"])?;
    let mut seen = HashSet::new();
    for enc in space.enumerate()? {
        let canon = canonicalize(&space.decode(&enc)?);
        if unique && !seen.insert(canon.hash) {
            continue;
        }
        w.write_record([
            enc.to_string(),
            canon.hash_hex(),
            count_flops(&canon.graph).to_string(),
            trainable_layer_count(&canon.graph).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(output: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(sink(output)?))
}

/// Encodings from the command line, then from `archs`, then the whole of space `all`.
pub fn collect_encodings(args: Vec<String>, archs: Option<&Path>, all: Option<&str>) -> Result<Vec<ArchEncoding>> {
    let mut out = Vec::new();
    for text in &args {
        out.push(text.parse().with_context(|| format!("encoding `{text}`"))?);
    }
    if let Some(path) = archs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            out.push(
                line.parse()
                    .with_context(|| format!("{}:{}: encoding `{line}`", path.display(), i + 1))?,
            );
        }
    }
    if let Some(id) = all {
        out.extend(SpaceSpec::by_id(id)?.enumerate()?);
    }
    if out.is_empty() {
        bail!("no architectures given; pass encodings, --archs or --all");
    }
    Ok(out)
}

/// Scores each distinct canonical structure once, in parallel, then writes
/// rows in input order.
pub fn score(encodings: &[ArchEncoding], proxies: &[ProxyName], fim: &FimConfig, output: Option<&Path>) -> Result<()> {
    let mut spaces: HashMap<String, SpaceSpec> = HashMap::new();
    let mut canon = Vec::with_capacity(encodings.len());
    for enc in encodings {
        if !spaces.contains_key(&enc.space_id) {
            spaces.insert(enc.space_id.clone(), SpaceSpec::by_id(&enc.space_id)?);
        }
        canon.push(canonicalize(&spaces[&enc.space_id].decode(enc)?));
    }
    let mut first_of: HashMap<u128, usize> = HashMap::new();
    for (i, c) in canon.iter().enumerate() {
        first_of.entry(c.hash).or_insert(i);
    }
    let mut distinct: Vec<usize> = first_of.values().copied().collect();
    distinct.sort_unstable();
    let values: HashMap<u128, Vec<f64>> = distinct
        .par_iter()
        .map(|&i| {
            let c = &canon[i];
            let row = proxies
                .iter()
                .map(|&p| compute_proxy(p, c, fim).with_context(|| format!("scoring {} with {p}", encodings[i])))
                .collect::<Result<Vec<f64>>>()?;
            Ok((c.hash, row))
        })
        .collect::<Result<_>>()?;

    let mut table = ScoreTable::new(Provenance::Native);
    let mut written = HashSet::new();
    for (enc, c) in encodings.iter().zip(&canon) {
        let id = enc.to_string();
        if !written.insert(id.clone()) {
            continue;
        }
        for (p, v) in proxies.iter().zip(&values[&c.hash]) {
            table.insert(&id, p.as_str(), *v)?;
        }
    }
    let mut out = sink(output)?;
    write_score_table(&table, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn spectrum(encoding: &str, fim: &FimConfig, output: Option<&Path>) -> Result<()> {
    let enc: ArchEncoding = encoding.parse().with_context(|| format!("encoding `{encoding}`"))?;
    let canon = canonicalize(&SpaceSpec::by_id(&enc.space_id)?.decode(&enc)?);
    let net = build_network(&canon.graph, &fim.init, fim.init_seed)?;
    let batch = fim.random_batch(canon.graph.input_shape)?;
    let spec = fim_spectrum_of(&net, &batch, &fim.policy)?;
    let mut out = sink(output)?;
    write_spectrum(&spec, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn eval(
    scores: &Path,
    accuracy: &Path,
    p: usize,
    seeds: &[u64],
    aggregate: &[String],
    format: Format,
    output: Option<&Path>,
) -> Result<()> {
    let mut table = ingest_score_table(scores).with_context(|| format!("reading {}", scores.display()))?;
    let acc = ingest_accuracy_table(accuracy).with_context(|| format!("reading {}", accuracy.display()))?;
    if !aggregate.is_empty() {
        let known = table.proxy_names();
        let rankings = aggregate
            .iter()
            .map(|name| {
                if !known.contains(name) {
                    bail!("aggregate names proxy `{name}`, which the score table lacks");
                }
                Ok(rank_from_scores(&table.scores(name), Direction::HigherBetter)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let agg = aggregate_nonlinear(&rankings).context("aggregating rankings")?;
        for (id, rank) in agg.arch_ids.iter().zip(&agg.ranks) {
            table.insert(id, "agg", *rank)?;
        }
    }
    let report = eval_report(&table, &acc, p, seeds)?;
    for m in &report.proxies {
        if !m.missing.is_empty() {
            eprintln!(
                "warning: {}: {} architectures lack a score or an accuracy",
                m.proxy,
                m.missing.len()
            );
        }
    }
    let mut out = sink(output)?;
    match format {
        Format::Csv => report.write_csv(&mut out)?,
        Format::Markdown => out.write_all(report.to_markdown().as_bytes())?,
    }
    out.flush()?;
    Ok(())
}

pub fn search(space_id: &str, cfg: &SearchConfig, trace: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let space = SpaceSpec::by_id(space_id)?;
    let result = evolve(&space, cfg)?;
    let mut out = sink(output)?;
    write_population(&result.population, &mut out)?;
    out.flush()?;
    if let Some(path) = trace {
        let mut t = sink(Some(path))?;
        write_trace(&result, &mut t)?;
        t.flush()?;
    }
    Ok(())
}

/// Long-format experiment results: `experiment,setting,metric,value`.
#[derive(Default)]
struct Report {
    rows: Vec<(&'static str, String, &'static str, f64)>,
}

impl Report {
    fn push(&mut self, experiment: &'static str, setting: impl Into<String>, metric: &'static str, value: f64) {
        self.rows.push((experiment, setting.into(), metric, value));
    }

    fn write(&self, format: Format, out: &mut dyn Write) -> Result<()> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(["experiment", "setting", "metric", "value"])?;
                for (e, s, m, v) in &self.rows {
                    w.write_record([e, s.as_str(), m, &format_f64(*v)])?;
                }
                w.flush()?;
            }
            Format::Markdown => {
                let mut text = String::new();
                let mut current = "";
                for (e, s, m, v) in &self.rows {
                    if *e != current {
                        current = e;
                        let _ = write!(text, "\n## {e}\n\n| setting | metric | value |\n|---|---|---:|\n");
                    }
                    let _ = writeln!(text, "| {s} | {m} | {} |", format_f64(*v));
                }
                out.write_all(text.trim_start().as_bytes())?;
            }
        }
        Ok(())
    }
}

pub fn validate(
    experiment: Experiment,
    mle: &MleExperimentConfig,
    seed: u64,
    format: Format,
    output: Option<&Path>,
) -> Result<()> {
    let wants = |e: Experiment| experiment == e || experiment == Experiment::All;
    let mut report = Report::default();
    let space = SpaceSpec::nb201_toy();

    if wants(Experiment::McFim) {
        let rows = mle.true_weights.len();
        let cols = mle.true_weights.first().map_or(0, Vec::len);
        let weights = DMatrix::from_fn(rows, cols, |i, j| mle.true_weights[i][j]);
        let model = SoftmaxModel::new(weights)?;
        let support = InputSupport::gaussian(mle.support_size, cols, mle.support_seed);
        let curve = mc_fim_convergence(&model, &support, &[781, 3125, 12_500, 50_000], seed)?;
        for (n, err) in curve.points {
            report.push("mc_fim", format!("n={n}"), "relative_frobenius", err);
        }
    }
    if wants(Experiment::LabelFim) {
        let s = label_separation(&space, 100, 16, seed)?;
        let setting = format!("trials={}", s.trials);
        report.push("label_fim", setting.clone(), "separated", s.separated as f64);
        report.push("label_fim", setting.clone(), "degenerate", s.degenerate as f64);
        report.push("label_fim", setting, "worst_psd_ratio", s.worst_psd_ratio);
    }
    if wants(Experiment::Kl) {
        for net in kl_survey(&space, 20, 8, seed)? {
            for pt in &net.points {
                let setting = format!("{} scale={}", net.encoding, format_f64(pt.scale));
                report.push("kl", setting.clone(), "kl", pt.kl);
                report.push("kl", setting.clone(), "quad", pt.quad);
                report.push("kl", setting, "rel_err", pt.rel_err);
            }
        }
    }
    if wants(Experiment::CramerRao) {
        for level in cramer_rao_experiment(mle)?.levels {
            let n = format!("n={}", level.n);
            report.push("cramer_rao", n.clone(), "mean_ratio", level.mean_ratio);
            report.push("cramer_rao", n.clone(), "converged", level.converged as f64);
            for (i, ((v, b), r)) in level.variance.iter().zip(&level.bound).zip(&level.ratio).enumerate() {
                let setting = format!("{n} param={i}");
                report.push("cramer_rao", setting.clone(), "variance", *v);
                report.push("cramer_rao", setting.clone(), "bound", *b);
                report.push("cramer_rao", setting, "ratio", *r);
            }
        }
    }
    let mut out = sink(output)?;
    report.write(format, &mut out)?;
    out.flush()?;
    Ok(())
}
