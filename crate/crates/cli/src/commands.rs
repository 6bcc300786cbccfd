//! Subcommand implementations.
//!
//! A dataset directory holds `train/` and `test/` splits plus the echoed
//! config. A run directory holds `config.toml`, `metrics.csv`,
//! `summary.json` and `checkpoints/`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use npn_core::data::{
    generate_blobs, inject_noise, load_dataset, save_dataset, write_csv, Dataset, Split, CSV_FILE,
};
use npn_core::label_space::{build_candidate_set, build_complementary_set, LabelVector};
use npn_core::losses::Probabilities;
use npn_core::trainer::{evaluate, train as train_model, Method, TrainConfig};
use npn_core::Checkpoint;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Invalid;
use crate::output::{guarded, prepare_dir, run_dir_name, write_json};
use crate::{parse_list, EvalArgs, Format, GenDataArgs, InspectArgs, SweepArgs, TrainArgs, TrainOverrides};

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

fn load_split(dir: &Path, split: Split) -> anyhow::Result<Dataset> {
    let sub = dir.join(split.to_string());
    if !sub.is_dir() {
        return Err(Invalid(format!("{} is not a dataset directory (missing {split}/)", dir.display())).into());
    }
    let ds = load_dataset(&sub).with_context(|| format!("loading {}", sub.display()))?;
    if ds.split != split {
        return Err(Invalid(format!("{} holds the {} split", sub.display(), ds.split)).into());
    }
    Ok(ds)
}

fn load_pair(dir: &Path) -> anyhow::Result<(Dataset, Dataset)> {
    let train = load_split(dir, Split::Train)?;
    let test = load_split(dir, Split::Test)?;
    if train.classes != test.classes || train.dim() != test.dim() {
        return Err(Invalid(format!("train and test splits in {} disagree on shape", dir.display())).into());
    }
    Ok((train, test))
}

/// Prints `rows` as CSV (header plus rows) or as JSON (one object, or an
/// array when `many`).
fn print_report<T: Serialize>(format: Format, header: &str, rows: &[T], csv_row: impl Fn(&T) -> String, many: bool) -> anyhow::Result<()> {
    match format {
        Format::Csv => {
            println!("{header}");
            for r in rows {
                println!("{}", csv_row(r));
            }
        }
        Format::Json => {
            let text = if many {
                serde_json::to_string_pretty(rows)?
            } else {
                serde_json::to_string_pretty(&rows[0])?
            };
            println!("{text}");
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct DataReport {
    dir: PathBuf,
    train_samples: usize,
    test_samples: usize,
    classes: usize,
    dim: usize,
    noise: String,
    rate: f64,
    corrupted: usize,
    empirical_rate: f64,
}

pub fn gen_data(mut cfg: ExperimentConfig, args: GenDataArgs, format: Option<Format>) -> anyhow::Result<()> {
    let g = &mut cfg.generator;
    g.classes = args.classes.unwrap_or(g.classes);
    g.per_class = args.per_class.unwrap_or(g.per_class);
    g.test_per_class = args.test_per_class.unwrap_or(g.test_per_class);
    g.dim = args.dim.unwrap_or(g.dim);
    g.separation = args.separation.unwrap_or(g.separation);
    cfg.noise.kind = args.noise.unwrap_or(cfg.noise.kind);
    cfg.noise.rate = args.rate.unwrap_or(cfg.noise.rate);
    let blobs = cfg.blob_spec();
    let noise = cfg.noise_spec();
    blobs.validate()?;
    noise.validate()?;

    let dir = args
        .out
        .unwrap_or_else(|| run_dir_name(&cfg.out_root(), cfg.seed, "data"));
    prepare_dir(&dir, args.force)?;
    cfg.data = Some(dir.clone());
    cfg.echo(&dir)?;
    guarded(&dir, || {
        let splits = generate_blobs(&blobs)?;
        let train = inject_noise(&splits.train, &noise)?;
        save_dataset(&train, &dir.join(TRAIN_DIR))?;
        save_dataset(&splits.test, &dir.join(TEST_DIR))?;
        if format == Some(Format::Csv) {
            write_csv(&train, &dir.join(TRAIN_DIR).join(CSV_FILE))?;
            write_csv(&splits.test, &dir.join(TEST_DIR).join(CSV_FILE))?;
        }
        let report = DataReport {
            dir: dir.clone(),
            train_samples: train.len(),
            test_samples: splits.test.len(),
            classes: train.classes,
            dim: train.dim(),
            noise: noise.kind.as_str().to_string(),
            rate: noise.rate,
            corrupted: train.corrupted_count(),
            empirical_rate: train.empirical_noise_rate(),
        };
        print_report(
            format.unwrap_or(Format::Json),
            "dir,train_samples,test_samples,classes,dim,noise,rate,corrupted,empirical_rate",
            &[report],
            |r| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    r.dir.display(),
                    r.train_samples,
                    r.test_samples,
                    r.classes,
                    r.dim,
                    r.noise,
                    r.rate,
                    r.corrupted,
                    r.empirical_rate
                )
            },
            false,
        )
    })
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &TrainOverrides) -> anyhow::Result<()> {
    if let Some(d) = &o.data {
        cfg.data = Some(d.clone());
    }
    if let Some(out) = &o.out {
        cfg.out = Some(out.clone());
    }
    let t = &mut cfg.train;
    t.mode = o.mode.unwrap_or(t.mode);
    t.method = o.method.unwrap_or(t.method);
    t.total_epochs = o.epochs.unwrap_or(t.total_epochs);
    t.warmup_epochs = o.warmup_epochs.unwrap_or(t.warmup_epochs);
    t.batch_size = o.batch_size.unwrap_or(t.batch_size);
    if let Some(lr) = o.lr {
        t.warmup_lr = lr;
        t.robust_lr = lr;
    }
    if let Some(h) = &o.hidden {
        t.hidden = parse_list("hidden", h)?;
    }
    t.checkpoint_every = o.checkpoint_every.unwrap_or(t.checkpoint_every);
    Ok(())
}

fn mode_label(t: &TrainConfig) -> String {
    match t.method {
        Method::Standard => "standard".to_string(),
        Method::Npn => t.mode.to_string(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary {
    config: ExperimentConfig,
    run_dir: PathBuf,
    epochs: usize,
    last10_mean_acc: f64,
    best_acc: f64,
    final_acc: f64,
    wall_clock_secs: f64,
}

const SUMMARY_HEADER: &str = "run_dir,epochs,last10_mean_acc,best_acc,final_acc,wall_clock_secs";

fn summary_row(s: &RunSummary) -> String {
    format!(
        "{},{},{},{},{},{}",
        s.run_dir.display(),
        s.epochs,
        s.last10_mean_acc,
        s.best_acc,
        s.final_acc,
        s.wall_clock_secs
    )
}

/// Echoes the config into `dir`, trains, and writes `summary.json`.
fn run_in_dir(mut cfg: ExperimentConfig, dir: &Path, train_set: &Dataset, test_set: &Dataset) -> anyhow::Result<RunSummary> {
    cfg.train.metrics_path = Some(dir.join(METRICS_FILE));
    cfg.train.checkpoint_dir = Some(dir.join(CHECKPOINT_DIR));
    cfg.echo(dir)?;
    guarded(dir, || {
        let outcome = train_model(&cfg.train, train_set, test_set)?;
        let s = outcome.summary;
        let summary = RunSummary {
            config: cfg.clone(),
            run_dir: dir.to_path_buf(),
            epochs: s.epochs,
            last10_mean_acc: s.last10_mean_acc,
            best_acc: s.best_acc,
            final_acc: s.final_acc,
            wall_clock_secs: s.wall_clock_secs,
        };
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
        Ok(summary)
    })
}

pub fn train(mut cfg: ExperimentConfig, args: TrainArgs, format: Option<Format>) -> anyhow::Result<()> {
    apply_overrides(&mut cfg, &args.common)?;
    cfg.train.alpha = args.alpha.unwrap_or(cfg.train.alpha);
    cfg.train.beta = args.beta.unwrap_or(cfg.train.beta);
    cfg.train_problems()?;
    let (train_set, test_set) = load_pair(cfg.data_dir()?)?;

    let dir = run_dir_name(&cfg.out_root(), cfg.seed, &mode_label(&cfg.train));
    prepare_dir(&dir, args.common.force)?;
    let summary = run_in_dir(cfg, &dir, &train_set, &test_set)?;
    print_report(format.unwrap_or(Format::Json), SUMMARY_HEADER, &[summary], summary_row, false)
}

#[derive(Debug, Clone, Serialize)]
struct Cell {
    alpha: f64,
    beta: f64,
    last10_mean_acc: f64,
    best_acc: f64,
    final_acc: f64,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    config: ExperimentConfig,
    cells: Vec<Cell>,
    best: Cell,
}

const AGGREGATE_HEADER: &str = "alpha,beta,last10_mean_acc,best_acc,final_acc";

fn cell_row(c: &Cell) -> String {
    format!("{},{},{},{},{}", c.alpha, c.beta, c.last10_mean_acc, c.best_acc, c.final_acc)
}

/// First cell with the highest last-10 mean.
fn argmax_cell(cells: &[Cell]) -> Option<&Cell> {
    cells
        .iter()
        .fold(None, |best: Option<&Cell>, c| match best {
            Some(b) if b.last10_mean_acc >= c.last10_mean_acc => Some(b),
            _ => Some(c),
        })
}

pub fn sweep(mut cfg: ExperimentConfig, args: SweepArgs, format: Option<Format>) -> anyhow::Result<()> {
    apply_overrides(&mut cfg, &args.common)?;
    if let Some(a) = &args.alphas {
        cfg.sweep.alphas = parse_list("alpha", a)?;
    }
    if let Some(b) = &args.betas {
        cfg.sweep.betas = parse_list("beta", b)?;
    }
    if cfg.sweep.alphas.is_empty() || cfg.sweep.betas.is_empty() {
        return Err(Invalid("sweep grid is empty; give at least one alpha and one beta".into()).into());
    }
    let grid: Vec<(f64, f64)> = cfg
        .sweep
        .alphas
        .iter()
        .flat_map(|&a| cfg.sweep.betas.iter().map(move |&b| (a, b)))
        .collect();
    for &(alpha, beta) in &grid {
        let mut cell = cfg.clone();
        cell.train.alpha = alpha;
        cell.train.beta = beta;
        cell.train_problems()
            .with_context(|| format!("cell alpha={alpha} beta={beta}"))?;
    }
    let (train_set, test_set) = load_pair(cfg.data_dir()?)?;

    let dir = run_dir_name(&cfg.out_root(), cfg.seed, "sweep");
    prepare_dir(&dir, args.common.force)?;
    cfg.echo(&dir)?;
    let cells = guarded(&dir, || {
        let cells = grid
            .par_iter()
            .map(|&(alpha, beta)| {
                let cell_dir = dir.join(format!("alpha-{alpha}_beta-{beta}"));
                prepare_dir(&cell_dir, args.common.force)?;
                let mut cell_cfg = cfg.clone();
                cell_cfg.train.alpha = alpha;
                cell_cfg.train.beta = beta;
                let s = run_in_dir(cell_cfg, &cell_dir, &train_set, &test_set)
                    .with_context(|| format!("cell alpha={alpha} beta={beta}"))?;
                Ok(Cell {
                    alpha,
                    beta,
                    last10_mean_acc: s.last10_mean_acc,
                    best_acc: s.best_acc,
                    final_acc: s.final_acc,
                })
            })
            .collect::<anyhow::Result<Vec<Cell>>>()?;
        let mut csv = String::from(AGGREGATE_HEADER);
        csv.push('\n');
        for c in &cells {
            csv.push_str(&cell_row(c));
            csv.push('\n');
        }
        let path = dir.join(AGGREGATE_FILE);
        fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
        let best = argmax_cell(&cells).expect("grid is non-empty").clone();
        write_json(
            &dir.join(SUMMARY_FILE),
            &SweepSummary {
                config: cfg.clone(),
                cells: cells.clone(),
                best: best.clone(),
            },
        )?;
        eprintln!(
            "best cell: alpha={} beta={} last10_mean_acc={:.2}",
            best.alpha, best.beta, best.last10_mean_acc
        );
        Ok(cells)
    })?;
    print_report(format.unwrap_or(Format::Csv), AGGREGATE_HEADER, &cells, cell_row, true)
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    if !path.is_file() {
        return Err(Invalid(format!("checkpoint {} does not exist", path.display())).into());
    }
    Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn checked_train_split(ck: &Checkpoint, data: &Path) -> anyhow::Result<Dataset> {
    let train = load_split(data, Split::Train)?;
    let matches = train.len() == ck.histograms.len()
        && train.dim() == ck.net.input_dim()
        && train.classes == ck.net.classes()
        && ck
            .labels
            .as_ref()
            .is_none_or(|(noisy, truth)| *noisy == train.noisy_labels && *truth == train.true_labels);
    if !matches {
        return Err(Invalid(format!("checkpoint was not trained on {}", data.display())).into());
    }
    Ok(train)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    epochs_completed: u64,
    train_acc: f64,
    test_acc: f64,
}

pub fn eval(cfg: ExperimentConfig, args: EvalArgs, format: Option<Format>) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let data = args.data.as_deref().map_or_else(|| cfg.data_dir(), Ok)?;
    let train = checked_train_split(&ck, data)?;
    let test = load_split(data, Split::Test)?;
    let report = EvalReport {
        checkpoint: args.checkpoint.clone(),
        epochs_completed: ck.next_epoch,
        train_acc: evaluate(&ck.net, &train)?,
        test_acc: evaluate(&ck.net, &test)?,
    };
    print_report(
        format.unwrap_or(Format::Json),
        "checkpoint,epochs_completed,train_acc,test_acc",
        &[report],
        |r| format!("{},{},{},{}", r.checkpoint.display(), r.epochs_completed, r.train_acc, r.test_acc),
        false,
    )
}

#[derive(Debug, Serialize)]
struct SampleReport {
    index: usize,
    noisy_label: u16,
    true_label: u16,
    histogram: Vec<u32>,
    hard_label: usize,
    hard_weight: f64,
    soft_label: Vec<f64>,
    candidates: Vec<usize>,
    complementary: Vec<usize>,
}

fn joined<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn sample_row(r: &SampleReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.index,
        r.noisy_label,
        r.true_label,
        joined(&r.histogram),
        r.hard_label,
        r.hard_weight,
        joined(&r.soft_label),
        joined(&r.candidates),
        joined(&r.complementary)
    )
}

pub fn inspect(cfg: ExperimentConfig, args: InspectArgs, format: Option<Format>) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let n = ck.histograms.len();
    let indices: Vec<usize> = match (args.all, args.index) {
        (true, _) => (0..n).collect(),
        (false, None) => return Err(Invalid("pass --index <i> or --all".into()).into()),
        (false, Some(i)) if i < 0 => return Err(Invalid(format!("--index must be non-negative, got {i}")).into()),
        (false, Some(i)) if i as usize >= n => {
            return Err(Invalid(format!("--index {i} is out of range for {n} samples")).into())
        }
        (false, Some(i)) => vec![i as usize],
    };
    let data = args.data.as_deref().map_or_else(|| cfg.data_dir(), Ok)?;
    let train = checked_train_split(&ck, data)?;

    let logits = ck.net.predict(train.batch(&indices).view())?;
    let probs = Probabilities::from_logits(logits.view());
    let mut reports = Vec::with_capacity(indices.len());
    for (row, &i) in indices.iter().enumerate() {
        let hist = ck.histograms.get(i).expect("index checked against the store");
        let d = hist.disambiguate()?;
        let given = LabelVector::one_hot(train.noisy_labels[i] as usize, train.classes)?;
        let cand = build_candidate_set(&given, probs.row(row).as_slice().expect("standard layout"))?;
        reports.push(SampleReport {
            index: i,
            noisy_label: train.noisy_labels[i],
            true_label: train.true_labels[i],
            histogram: hist.counts().to_vec(),
            hard_label: d.hard_label,
            hard_weight: d.hard_weight,
            soft_label: d.soft_label,
            candidates: cand.members(),
            complementary: build_complementary_set(&cand).members(),
        });
    }
    print_report(
        format.unwrap_or(Format::Json),
        "index,noisy_label,true_label,histogram,hard_label,hard_weight,soft_label,candidates,complementary",
        &reports,
        sample_row,
        args.all,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(alpha: f64, acc: f64) -> Cell {
        Cell {
            alpha,
            beta: 0.0,
            last10_mean_acc: acc,
            best_acc: acc,
            final_acc: acc,
        }
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let cells = [cell(0.0, 50.0), cell(1.0, 70.0), cell(2.0, 70.0)];
        assert_eq!(argmax_cell(&cells).unwrap().alpha, 1.0);
        assert!(argmax_cell(&[]).is_none());
    }

    #[test]
    fn sample_rows_join_lists() {
        let r = SampleReport {
            index: 3,
            noisy_label: 1,
            true_label: 2,
            histogram: vec![0, 3, 2, 0],
            hard_label: 1,
            hard_weight: 0.6,
            soft_label: vec![0.0, 0.6, 0.4, 0.0],
            candidates: vec![1, 2],
            complementary: vec![0, 3],
        };
        assert_eq!(sample_row(&r), "3,1,2,0;3;2;0,1,0.6,0;0.6;0.4;0,1;2,0;3");
    }

    #[test]
    fn mode_labels() {
        let t = TrainConfig::default();
        assert_eq!(mode_label(&t), "hard");
        let s = TrainConfig {
            method: Method::Standard,
            ..t
        };
        assert_eq!(mode_label(&s), "standard");
    }
}
