//! Experiment recipes. Each recipe is a set of independent jobs (one per
//! axis value and seed) whose results are merged, in job order, into CSV
//! tables, SQW model files and a JSON-lines log under the output directory.

use super::config::{ExperimentConfig, ModelSize, Recipe, Task};
use super::data::{load_dataset, Splits};
use super::metrics;
use super::models::build_model;
use crate::ensemble::{mean_outputs, suggest_training_set, Ensemble, SuggestionConfig, SuggestionStep};
use crate::error::{Error, Result};
use crate::inq::{inq_train, InqStepLog, PartitionState};
use crate::nncore::{argmax_positions, predict, train_epochs, Dataset, ModelGraph, OptimizerState, Tensor};
use crate::packstore::{pack_model, PackedModel};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const EVAL_BATCH: usize = 128;

/// One CSV line before aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub axes: Vec<String>,
    pub seed: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub axes: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(name: &str, axes: &[&str], columns: &[String]) -> Self {
        Table {
            name: name.to_string(),
            axes: axes.iter().map(|s| s.to_string()).collect(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Distinct axis tuples in first-appearance order.
    pub fn axis_values(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.axes) {
                out.push(r.axes.clone());
            }
        }
        out
    }

    pub fn values(&self, axes: &[&str], column: &str) -> Vec<f64> {
        let Some(c) = self.column(column) else { return Vec::new() };
        self.rows
            .iter()
            .filter(|r| r.axes.iter().map(String::as_str).eq(axes.iter().copied()))
            .map(|r| r.values[c])
            .collect()
    }

    /// Mean of `column` over seeds for one axis tuple.
    pub fn mean(&self, axes: &[&str], column: &str) -> Option<f64> {
        let v = self.values(axes, column);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Data rows, then a `mean` and a `best` row per axis tuple. "Best" is
    /// the minimum for error columns and the maximum otherwise.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.axes.iter().map(String::as_str).collect();
        header.push("seed");
        header.extend(self.columns.iter().map(String::as_str));
        w.write_record(&header)?;
        let fmt = |v: f64| format!("{v:.4}");
        for r in &self.rows {
            let mut rec = r.axes.clone();
            rec.push(r.seed.to_string());
            rec.extend(r.values.iter().map(|&v| fmt(v)));
            w.write_record(&rec)?;
        }
        for axes in self.axis_values() {
            let rows: Vec<&Row> = self.rows.iter().filter(|r| r.axes == axes).collect();
            let mut mean = axes.clone();
            let mut best = axes.clone();
            mean.push("mean".into());
            best.push("best".into());
            for (c, name) in self.columns.iter().enumerate() {
                let vals = rows.iter().map(|r| r.values[c]);
                mean.push(fmt(vals.clone().sum::<f64>() / rows.len() as f64));
                let b = if name.contains("error") {
                    vals.fold(f64::INFINITY, f64::min)
                } else {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                };
                best.push(fmt(b));
            }
            w.write_record(&mean)?;
            w.write_record(&best)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub tables: Vec<Table>,
    /// Every file written, in write order.
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Single writer for everything a run produces.
#[derive(Default)]
struct Sink {
    tables: Vec<Table>,
    log: Vec<serde_json::Value>,
    models: Vec<(String, PackedModel)>,
}

impl Sink {
    fn flush(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir.join("models"))?;
        let mut files = Vec::new();
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            std::fs::write(&p, t.to_csv()?)?;
            files.push(p);
        }
        for (name, m) in &self.models {
            let p = dir.join("models").join(format!("{name}.sqw"));
            m.write(&p)?;
            files.push(p);
        }
        let mut log = String::new();
        for line in &self.log {
            writeln!(log, "{line}").expect("write to string");
        }
        let p = dir.join("log.jsonl");
        std::fs::write(&p, log)?;
        files.push(p);
        Ok(files)
    }
}

/// Runs `f` over `jobs` on up to `workers` threads; results keep job order.
pub fn run_jobs<J, T, F>(workers: usize, jobs: &[J], f: F) -> Vec<Result<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync + Send,
{
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(&f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| jobs.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("could not start {workers} workers ({e}); running serially");
            jobs.iter().map(&f).collect()
        }
    }
}

/// Splits successes from failures, keeping the first error.
fn partition<T>(results: Vec<Result<T>>) -> (Vec<Option<T>>, Option<Error>) {
    let mut first = None;
    let ok = results
        .into_iter()
        .map(|r| match r {
            Ok(v) => Some(v),
            Err(e) => {
                first.get_or_insert(e);
                None
            }
        })
        .collect();
    (ok, first)
}

pub fn metric_names(task: Task) -> Vec<String> {
    let names: &[&str] = match task {
        Task::Cls => &["accuracy", "top1_error"],
        Task::Seg => &["dice", "object_f1", "seg_avg"],
        Task::Asr => &["frame_accuracy", "frame_error_rate"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Headline higher-is-better metric of a task.
pub fn primary_metric(task: Task) -> &'static str {
    match task {
        Task::Cls => "accuracy",
        Task::Seg => "seg_avg",
        Task::Asr => "frame_accuracy",
    }
}

/// Metrics of probability outputs against `data`, in [`metric_names`] order.
pub fn evaluate_probs(task: Task, probs: &Tensor<f32>, data: &Dataset) -> Result<Vec<f64>> {
    let pred = argmax_positions(probs);
    match task {
        Task::Cls => {
            let e = metrics::top1_error(&pred, &data.targets)?;
            Ok(vec![100.0 - e, e])
        }
        Task::Asr => {
            let e = metrics::frame_error_rate(&pred, &data.targets)?;
            Ok(vec![100.0 - e, e])
        }
        Task::Seg => {
            let s = data.sample_shape();
            let sc = metrics::segmentation_scores(&pred, &data.targets, data.len(), s[1], s[2])?;
            Ok(vec![sc.dice, sc.object_f1, sc.seg_avg])
        }
    }
}

pub fn evaluate_model(task: Task, model: &ModelGraph<f32>, data: &Dataset) -> Result<Vec<f64>> {
    evaluate_probs(task, &predict(model, &data.inputs, EVAL_BATCH)?, data)
}

/// Trains a freshly initialised model on `data` with the pretraining
/// settings; returns it with the per-epoch losses.
pub fn train_float(
    cfg: &ExperimentConfig,
    size: ModelSize,
    data: &Dataset,
    seed: u64,
    epochs: usize,
) -> Result<(ModelGraph<f32>, Vec<f64>)> {
    let mut model = build_model(cfg.task, size, cfg.dataset(), seed)?;
    let mut opt = OptimizerState::new(cfg.train().optimizer.clone(), &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let losses = train_epochs(&mut model, &mut opt, data, epochs, cfg.train().batch_size, None, &mut rng)?;
    Ok((model, losses))
}

/// INQ of a copy of `model` at `bits`.
pub fn quantize_model(
    cfg: &ExperimentConfig,
    model: &ModelGraph<f32>,
    data: &Dataset,
    bits: u32,
    seed: u64,
) -> Result<(ModelGraph<f32>, PartitionState, Vec<InqStepLog>)> {
    let mut m = model.clone();
    let (state, log) = inq_train(&mut m, data, &cfg.inq_config(bits, seed)?, None)?;
    Ok((m, state, log))
}

fn member_seed(seed: u64, member: usize) -> u64 {
    seed * 1000 + member as u64
}

/// Runs the configured recipe and writes its outputs to `cfg.output_dir`.
/// Finished tables and models are written even when a later job fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = load_dataset(cfg.task, cfg.dataset())?;
    let mut sink = Sink::default();
    sink.log.push(json!({
        "event": "start",
        "name": cfg.name,
        "task": cfg.task,
        "recipe": cfg.recipe,
        "train": data.train.len(),
        "test": data.test.len(),
    }));
    let outcome = match cfg.recipe {
        Recipe::BitwidthSweep => bitwidth_sweep(cfg, &data, &mut sink),
        Recipe::ParallelSweep => parallel_sweep(cfg, &data, &mut sink, false),
        Recipe::BitwidthParallel => parallel_sweep(cfg, &data, &mut sink, true),
        Recipe::SmallModel => small_model(cfg, &data, &mut sink),
        Recipe::Suggestion => suggestion(cfg, &data, &mut sink),
    };
    if let Err(e) = &outcome {
        sink.log.push(json!({"event": "abort", "error": e.to_string()}));
    }
    let files = sink.flush(&cfg.output_dir)?;
    outcome?;
    Ok(ExperimentReport {
        tables: sink.tables,
        files,
    })
}

fn pretrain_all(cfg: &ExperimentConfig, data: &Splits, jobs: &[(ModelSize, u64)]) -> Vec<Result<(ModelGraph<f32>, Vec<f64>)>> {
    run_jobs(cfg.workers, jobs, |&(size, seed)| {
        train_float(cfg, size, &data.train, seed, cfg.train().epochs)
    })
}

fn bitwidth_sweep(cfg: &ExperimentConfig, data: &Splits, sink: &mut Sink) -> Result<()> {
    let names = metric_names(cfg.task);
    let jobs: Vec<_> = cfg.seeds.iter().map(|&s| (cfg.model_size, s)).collect();
    let (pre, err) = partition(pretrain_all(cfg, data, &jobs));
    let mut base = Table::new("baseline", &["model"], &names);
    let mut pretrained = Vec::new();
    for (&seed, r) in cfg.seeds.iter().zip(pre) {
        let Some((model, losses)) = r else { continue };
        let values = evaluate_model(cfg.task, &model, &data.test)?;
        sink.log.push(json!({"event": "pretrain", "seed": seed, "losses": losses, "metrics": values}));
        sink.models.push((format!("float-s{seed}"), pack_model(&model, None)?));
        base.rows.push(Row { axes: vec!["float".into()], seed, values });
        pretrained.push((seed, model));
    }
    sink.tables.push(base);
    if let Some(e) = err {
        return Err(e);
    }

    let jobs: Vec<(u32, usize)> = cfg
        .bit_widths
        .iter()
        .flat_map(|&b| (0..pretrained.len()).map(move |i| (b, i)))
        .collect();
    let results = run_jobs(cfg.workers, &jobs, |&(bits, i)| {
        let (seed, ref model) = pretrained[i];
        let (q, state, log) = quantize_model(cfg, model, &data.train, bits, seed)?;
        let values = evaluate_model(cfg.task, &q, &data.test)?;
        Ok((values, log, pack_model(&q, Some(&state))?))
    });
    let mut table = Table::new("bitwidth", &["bit_width"], &names);
    let (results, err) = partition(results);
    for (&(bits, i), r) in jobs.iter().zip(results) {
        let Some((values, log, packed)) = r else { continue };
        let seed = pretrained[i].0;
        sink.log.push(json!({"event": "inq", "bit_width": bits, "seed": seed, "steps": log, "metrics": values}));
        sink.models.push((format!("inq-b{bits}-s{seed}"), packed));
        table.rows.push(Row { axes: vec![bits.to_string()], seed, values });
    }
    sink.tables.push(table);
    err.map_or(Ok(()), Err)
}

fn parallel_sweep(cfg: &ExperimentConfig, data: &Splits, sink: &mut Sink, quantized: bool) -> Result<()> {
    let names = metric_names(cfg.task);
    let primary = names.iter().position(|n| n == primary_metric(cfg.task)).unwrap();
    let kmax = *cfg.parallel.iter().max().expect("validated nonempty");
    let members: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| (0..kmax).map(move |m| (s, m)))
        .collect();
    let (pre, err) = partition(run_jobs(cfg.workers, &members, |&(s, m)| {
        train_float(cfg, cfg.model_size, &data.train, member_seed(s, m), cfg.train().epochs)
    }));
    if let Some(e) = err {
        return Err(e);
    }
    let pre: Vec<ModelGraph<f32>> = pre.into_iter().map(|r| r.unwrap().0).collect();

    // variants: float members, or one quantized copy per bit width
    let variants: Vec<Option<u32>> = if quantized {
        cfg.bit_widths.iter().map(|&b| Some(b)).collect()
    } else {
        vec![None]
    };
    let jobs: Vec<(Option<u32>, usize)> = variants
        .iter()
        .flat_map(|&v| (0..members.len()).map(move |i| (v, i)))
        .collect();
    let results = run_jobs(cfg.workers, &jobs, |&(bits, i)| {
        let (s, m) = members[i];
        let (model, packed, log) = match bits {
            Some(b) => {
                let (q, state, log) = quantize_model(cfg, &pre[i], &data.train, b, member_seed(s, m))?;
                let packed = pack_model(&q, Some(&state))?;
                (q, packed, Some(log))
            }
            None => (pre[i].clone(), pack_model(&pre[i], None)?, None),
        };
        let probs = predict(&model, &data.test.inputs, EVAL_BATCH)?;
        Ok((probs, packed, log))
    });
    let (results, err) = partition(results);
    let mut probs = std::collections::HashMap::new();
    for (&(bits, i), r) in jobs.iter().zip(results) {
        let Some((p, packed, log)) = r else { continue };
        let (s, m) = members[i];
        let tag = bits.map_or("float".to_string(), |b| format!("b{b}"));
        if let Some(log) = log {
            sink.log.push(json!({"event": "inq", "bit_width": bits, "seed": s, "member": m, "steps": log}));
        }
        sink.models.push((format!("member-{tag}-s{s}-m{m}"), packed));
        probs.insert((bits, s, m), p);
    }
    if let Some(e) = err {
        return Err(e);
    }

    let mut columns = names.clone();
    columns.push(format!("member_mean_{}", names[primary]));
    let (name, axes): (&str, &[&str]) = if quantized {
        ("bitwidth_parallel", &["bit_width", "parallel"])
    } else {
        ("parallel", &["parallel"])
    };
    let mut table = Table::new(name, axes, &columns);
    for &bits in &variants {
        for &k in &cfg.parallel {
            for &s in &cfg.seeds {
                let outs: Vec<Tensor<f32>> = (0..k).map(|m| probs[&(bits, s, m)].clone()).collect();
                let mut values = evaluate_probs(cfg.task, &mean_outputs(&outs)?, &data.test)?;
                let mut member_sum = 0.0;
                for o in &outs {
                    member_sum += evaluate_probs(cfg.task, o, &data.test)?[primary];
                }
                values.push(member_sum / k as f64);
                let mut axes = Vec::new();
                if let Some(b) = bits {
                    axes.push(b.to_string());
                }
                axes.push(k.to_string());
                table.rows.push(Row { axes, seed: s, values });
            }
        }
    }
    sink.tables.push(table);
    Ok(())
}

fn small_model(cfg: &ExperimentConfig, data: &Splits, sink: &mut Sink) -> Result<()> {
    let primary = metric_names(cfg.task)
        .iter()
        .position(|n| n == primary_metric(cfg.task))
        .unwrap();
    let jobs: Vec<(ModelSize, u64)> = [ModelSize::Full, ModelSize::Small]
        .into_iter()
        .flat_map(|z| cfg.seeds.iter().map(move |&s| (z, s)))
        .collect();
    let (pre, err) = partition(pretrain_all(cfg, data, &jobs));
    if let Some(e) = err {
        return Err(e);
    }
    let pre: Vec<ModelGraph<f32>> = pre.into_iter().map(|r| r.unwrap().0).collect();
    let qjobs: Vec<(usize, u32)> = (0..jobs.len())
        .flat_map(|i| cfg.bit_widths.iter().map(move |&b| (i, b)))
        .collect();
    let (qres, err) = partition(run_jobs(cfg.workers, &qjobs, |&(i, bits)| {
        let (q, state, log) = quantize_model(cfg, &pre[i], &data.train, bits, jobs[i].1)?;
        Ok((evaluate_model(cfg.task, &q, &data.test)?[primary], pack_model(&q, Some(&state))?, log))
    }));
    if let Some(e) = err {
        return Err(e);
    }
    let mut columns = vec!["params".to_string(), "float".to_string()];
    columns.extend(cfg.bit_widths.iter().map(|b| format!("{b}bit")));
    let mut table = Table::new(&format!("small_model_{}", primary_metric(cfg.task)), &["model_size"], &columns);
    let mut qres = qres.into_iter().map(Option::unwrap);
    for (i, &(size, seed)) in jobs.iter().enumerate() {
        let size_name = format!("{size:?}").to_lowercase();
        let mut values = vec![
            pre[i].param_count() as f64,
            evaluate_model(cfg.task, &pre[i], &data.test)?[primary],
        ];
        for &bits in &cfg.bit_widths {
            let (v, packed, log) = qres.next().unwrap();
            sink.log.push(json!({"event": "inq", "model_size": size_name, "bit_width": bits, "seed": seed, "steps": log}));
            sink.models.push((format!("{size_name}-b{bits}-s{seed}"), packed));
            values.push(v);
        }
        table.rows.push(Row { axes: vec![size_name], seed, values });
    }
    sink.tables.push(table);
    Ok(())
}

/// Outcome of one suggestion run for a seed.
#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub seed_labeled: Vec<usize>,
    pub suggested: Vec<usize>,
    pub random: Vec<usize>,
    pub exhausted: bool,
    pub steps: Vec<SuggestionStep>,
}

/// Draws the seed set, runs the suggestion loop over the rest of the
/// training split and draws an equally sized random selection.
pub fn select_training_sets(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<SelectionRun> {
    let sp = &cfg.suggestion;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seed_labeled = index::sample(&mut rng, train.len(), sp.seed_labeled).into_vec();
    seed_labeled.sort_unstable();
    let pool: Vec<usize> = (0..train.len()).filter(|i| !seed_labeled.contains(i)).collect();

    let scfg = SuggestionConfig {
        uncertainty_take: sp.uncertainty_take,
        representative_take: sp.representative_take,
        iterations: sp.iterations,
        quantize_suggestors: sp.quantize_suggestors,
        retrain_every_iteration: sp.retrain_every_iteration,
        batch_size: EVAL_BATCH,
    };
    let trainer = |labeled: &[usize], it: usize| -> Result<Ensemble> {
        let subset = train.subset(labeled);
        let members = run_jobs(cfg.workers, &(0..sp.ensemble_size).collect::<Vec<_>>(), |&m| {
            let s = member_seed(seed, it * sp.ensemble_size + m);
            let (model, _) = train_float(cfg, cfg.model_size, &subset, s, sp.suggestor_epochs)?;
            match sp.quantize_suggestors {
                Some(b) => Ok(quantize_model(cfg, &model, &subset, b, s)?.0),
                None => Ok(model),
            }
        });
        Ensemble::new(members.into_iter().collect::<Result<_>>()?)
    };
    let suggestion = suggest_training_set(train, &seed_labeled, &pool, &scfg, trainer)?;

    let take = suggestion.suggested.len();
    let random: Vec<usize> = index::sample(&mut rng, pool.len(), take)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    Ok(SelectionRun {
        seed_labeled,
        suggested: suggestion.suggested,
        random,
        exhausted: suggestion.exhausted,
        steps: suggestion.steps,
    })
}

fn suggestion(cfg: &ExperimentConfig, data: &Splits, sink: &mut Sink) -> Result<()> {
    let names = metric_names(cfg.task);
    let (runs, err) = partition(run_jobs(cfg.workers, &cfg.seeds, |&seed| {
        let sel = select_training_sets(cfg, &data.train, seed)?;
        let mut scores = Vec::new();
        for chosen in [&sel.suggested, &sel.random] {
            let idx: Vec<usize> = sel.seed_labeled.iter().chain(chosen.iter()).copied().collect();
            let (model, _) = train_float(cfg, cfg.model_size, &data.train.subset(&idx), seed, cfg.train().epochs)?;
            scores.push(evaluate_model(cfg.task, &model, &data.test)?);
        }
        Ok((sel, scores))
    }));
    let mut table = Table::new("suggestion", &["selection"], &names);
    for (&seed, r) in cfg.seeds.iter().zip(runs) {
        let Some((sel, scores)) = r else { continue };
        sink.log.push(json!({
            "event": "suggest",
            "seed": seed,
            "seed_labeled": sel.seed_labeled,
            "suggested": sel.suggested,
            "random": sel.random,
            "exhausted": sel.exhausted,
            "steps": sel.steps,
        }));
        for (label, values) in ["suggestive", "random"].into_iter().zip(scores) {
            table.rows.push(Row { axes: vec![label.into()], seed, values });
        }
    }
    // rows grouped by selection, seeds in order
    table.rows.sort_by_key(|r| (r.axes[0] != "suggestive", cfg.seeds.iter().position(|&s| s == r.seed)));
    sink.tables.push(table);
    err.map_or(Ok(()), Err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_with_mean_and_best() {
        let mut t = Table::new("t", &["bit_width"], &["accuracy".into(), "top1_error".into()]);
        for (b, s, a) in [(4, 1, 90.0), (4, 2, 92.0), (8, 1, 95.0)] {
            t.rows.push(Row { axes: vec![b.to_string()], seed: s, values: vec![a, 100.0 - a] });
        }
        let csv = t.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "bit_width,seed,accuracy,top1_error");
        assert_eq!(lines[4], "4,mean,91.0000,9.0000");
        assert_eq!(lines[5], "4,best,92.0000,8.0000");
        assert_eq!(lines.len(), 8);
        assert_eq!(t.mean(&["4"], "accuracy"), Some(91.0));
    }

    #[test]
    fn jobs_keep_order() {
        let jobs: Vec<u32> = (0..20).collect();
        let out: Vec<u32> = run_jobs(3, &jobs, |&j| Ok(j * 2)).into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(out, jobs.iter().map(|j| j * 2).collect::<Vec<_>>());
    }
}
