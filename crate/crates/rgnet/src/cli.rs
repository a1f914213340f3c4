//! Command-line entry points: dataset synthesis, training, evaluation,
//! prediction dumps, hyperparameter sweeps, and plot rendering.
//!
//! Exit codes: 0 success, 1 argument/validation errors (message names the
//! offending key), 2 runtime failures.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{
    generate_synthetic_dataset, save_manifest, write_feature_file, Dataset, ManifestRecord,
    SyntheticConfig,
};
use crate::error::RgError;
use crate::trainer::{
    evaluate, logs_to_jsonl, predict, sweep, train, Checkpoint, SweepAxis, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "rgnet",
    version,
    about = "Proposal retrieval and moment grounding for long videos"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Parser, Debug, Clone)]
struct CommonOpts {
    /// TOML configuration file with flat keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one config key, e.g. `--set top_k=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Force deterministic mode (fixed seeds, serial reductions).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset: feature files plus a JSONL manifest.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train a model on a dataset manifest.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Dataset manifest (JSONL) to train on.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint: retrieval, grounding, and oracle metrics.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Dump ranked moment predictions as JSON Lines.
    Predict {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train + evaluate across one hyperparameter axis; emits CSV and SVG.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        /// One of: top_k, proposal_length_s, temperature, n_queries.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `1,3,5`.
        #[arg(long)]
        values: String,
    },
    /// Render a sweep CSV to an SVG line chart.
    Plot {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        csv: PathBuf,
    },
}

/// Run the CLI; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here with a zero exit.
            if e.exit_code() == 0 {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RgError::Config(_)
                | RgError::DuplicateId(_)
                | RgError::InvalidInterval(_)
                | RgError::EmptyInput(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), RgError> {
    match cli.command {
        Command::Synth { common } => cmd_synth(&common),
        Command::Train { common, data } => cmd_train(&common, &data),
        Command::Eval {
            common,
            data,
            checkpoint,
        } => cmd_eval(&common, &data, &checkpoint),
        Command::Predict {
            common,
            data,
            checkpoint,
        } => cmd_predict(&common, &data, &checkpoint),
        Command::Sweep {
            common,
            data,
            axis,
            values,
        } => cmd_sweep(&common, &data, &axis, &values),
        Command::Plot { common, csv } => cmd_plot(&common, &csv),
    }
}

/// Load the flat TOML config, apply `--set`/`--seed`/`--deterministic`
/// overrides, and split it into the train and synth views.
fn load_configs(common: &CommonOpts) -> Result<(TrainConfig, SyntheticConfig), RgError> {
    let mut table: toml::Table = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(RgError::Config(format!(
                    "missing config file {}",
                    path.display()
                )));
            }
            let text = fs::read_to_string(path)
                .map_err(|e| RgError::io(path.display().to_string(), e))?;
            text.parse()
                .map_err(|e| RgError::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };

    let mut overridden: BTreeSet<String> = BTreeSet::new();
    for kv in &common.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| RgError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        let key = key.trim().to_string();
        if !overridden.insert(key.clone()) {
            return Err(RgError::Config(format!(
                "conflicting overrides for key `{key}`"
            )));
        }
        table.insert(key, parse_toml_value(value.trim()));
    }
    if let Some(seed) = common.seed {
        if overridden.contains("seed") {
            return Err(RgError::Config(
                "conflicting overrides for key `seed` (--seed and --set seed=...)".into(),
            ));
        }
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    if common.deterministic {
        table.insert("deterministic".into(), toml::Value::Boolean(true));
    }

    let train_keys = keys_of(&TrainConfig::default())?;
    let synth_keys = keys_of(&SyntheticConfig::default())?;
    for key in table.keys() {
        if !train_keys.contains(key) && !synth_keys.contains(key) {
            return Err(RgError::Config(format!("unknown config key `{key}`")));
        }
    }

    let train_cfg: TrainConfig = subset_into(&table, &train_keys)?;
    let synth_cfg: SyntheticConfig = subset_into(&table, &synth_keys)?;
    train_cfg.validate()?;
    Ok((train_cfg, synth_cfg))
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn keys_of<T: serde::Serialize>(value: &T) -> Result<BTreeSet<String>, RgError> {
    let text = toml::to_string(value).map_err(|e| RgError::Config(e.to_string()))?;
    let table: toml::Table = text.parse().map_err(|e| RgError::Config(format!("{e}")))?;
    Ok(table.keys().cloned().collect())
}

fn subset_into<T: serde::de::DeserializeOwned>(
    table: &toml::Table,
    keys: &BTreeSet<String>,
) -> Result<T, RgError> {
    let mut subset = toml::Table::new();
    for (k, v) in table {
        if keys.contains(k) {
            subset.insert(k.clone(), v.clone());
        }
    }
    let text = toml::to_string(&subset).map_err(|e| RgError::Config(e.to_string()))?;
    toml::from_str(&text).map_err(|e| RgError::Config(format!("{e}")))
}

fn ensure_out_dir(out: &Path) -> Result<(), RgError> {
    fs::create_dir_all(out).map_err(|e| RgError::io(out.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), RgError> {
    fs::write(path, text).map_err(|e| RgError::io(path.display().to_string(), e))
}

fn cmd_synth(common: &CommonOpts) -> Result<(), RgError> {
    let (_, synth_cfg) = load_configs(common)?;
    ensure_out_dir(&common.out)?;
    let features_dir = common.out.join("features");
    ensure_out_dir(&features_dir)?;

    let (videos, queries, annotations) = generate_synthetic_dataset(&synth_cfg)?;
    let mut records = Vec::new();
    for video in &videos {
        let rel = format!("features/{}.rgft", video.video_id);
        write_feature_file(video, &common.out.join(&rel))?;
        records.push(ManifestRecord::Video {
            video_id: video.video_id.clone(),
            feature_path: rel,
            fps: video.fps,
            duration_s: video.duration_s(),
        });
    }
    for query in &queries {
        let tokens = query
            .tokens
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect();
        records.push(ManifestRecord::QueryInline {
            query_id: query.query_id.clone(),
            tokens,
        });
    }
    for ann in &annotations {
        let iv = ann.moment.interval();
        records.push(ManifestRecord::Annotation {
            query_id: ann.query_id.clone(),
            video_id: ann.video_id.clone(),
            start_s: iv.start_s,
            end_s: iv.end_s,
        });
    }
    let manifest = common.out.join("manifest.jsonl");
    save_manifest(&records, &manifest)?;
    println!(
        "wrote {} videos, {} queries, {} annotations to {}",
        videos.len(),
        queries.len(),
        annotations.len(),
        manifest.display()
    );
    Ok(())
}

fn cmd_train(common: &CommonOpts, data: &Path) -> Result<(), RgError> {
    let (train_cfg, _) = load_configs(common)?;
    ensure_out_dir(&common.out)?;
    let ckpt_path = common.out.join("checkpoint.rgck");
    if ckpt_path.exists() {
        return Err(RgError::Config(format!(
            "refusing to overwrite existing checkpoint {}",
            ckpt_path.display()
        )));
    }
    let dataset = Dataset::load(data)?;
    let (ckpt, logs) = train(&train_cfg, &dataset)?;
    ckpt.save(&ckpt_path)?;
    write_text(&common.out.join("train_log.jsonl"), &logs_to_jsonl(&logs))?;
    println!(
        "trained {} steps ({} epochs); final loss {}; checkpoint at {}",
        ckpt.step,
        ckpt.epoch,
        logs.last().map(|l| l.loss_total).unwrap_or(f64::NAN),
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_eval(common: &CommonOpts, data: &Path, checkpoint: &Path) -> Result<(), RgError> {
    let _ = load_configs(common)?;
    ensure_out_dir(&common.out)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let dataset = Dataset::load(data)?;
    let report = evaluate(&ckpt, &dataset)?;
    write_text(
        &common.out.join("metrics.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    let table = report.to_table_string();
    write_text(&common.out.join("metrics.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_predict(common: &CommonOpts, data: &Path, checkpoint: &Path) -> Result<(), RgError> {
    let _ = load_configs(common)?;
    ensure_out_dir(&common.out)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let dataset = Dataset::load(data)?;
    let records = predict(&ckpt, &dataset)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    let path = common.out.join("predictions.jsonl");
    write_text(&path, &text)?;
    println!("wrote {} predictions to {}", records.len(), path.display());
    Ok(())
}

fn cmd_sweep(common: &CommonOpts, data: &Path, axis: &str, values: &str) -> Result<(), RgError> {
    let (train_cfg, _) = load_configs(common)?;
    ensure_out_dir(&common.out)?;
    let axis = SweepAxis::parse(axis)?;
    let parsed: Result<Vec<f64>, _> = values
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect();
    let parsed = parsed.map_err(|e| RgError::Config(format!("bad --values entry: {e}")))?;
    let dataset = Dataset::load(data)?;
    let table = sweep(&train_cfg, axis, &parsed, &dataset)?;
    let csv = table.to_csv();
    let csv_path = common.out.join(format!("sweep_{}.csv", table.axis));
    write_text(&csv_path, &csv)?;
    let svg = render_line_chart_svg(&csv)?;
    let svg_path = common.out.join(format!("sweep_{}.svg", table.axis));
    write_text(&svg_path, &svg)?;
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

fn cmd_plot(common: &CommonOpts, csv: &Path) -> Result<(), RgError> {
    let _ = load_configs(common)?;
    ensure_out_dir(&common.out)?;
    let text = fs::read_to_string(csv).map_err(|e| RgError::io(csv.display().to_string(), e))?;
    let svg = render_line_chart_svg(&text)?;
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let path = common.out.join(format!("{stem}.svg"));
    write_text(&path, &svg)?;
    println!("wrote {}", path.display());
    Ok(())
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// Minimal line chart: first CSV column is the x axis, every other column is
/// one series. Pure-text SVG so headless runs need no raster backend.
pub fn render_line_chart_svg(csv: &str) -> Result<String, RgError> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| RgError::EmptyInput("empty csv".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < 2 {
        return Err(RgError::Config(
            "csv needs an x column and at least one series".into(),
        ));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in lines {
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| RgError::Config(format!("bad csv number: {e}")))?;
        if row.len() != header.len() {
            return Err(RgError::Config("ragged csv row".into()));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(RgError::EmptyInput("csv has no data rows".into()));
    }

    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 60.0, 180.0, 20.0, 40.0);
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x_span = (x_max - x_min).max(1e-9);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for r in &rows {
        for &v in &r[1..] {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    let y_span = (y_max - y_min).max(1e-9);
    let sx = |x: f64| ml + (x - x_min) / x_span * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y_min) / y_span * (h - mt - mb);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"monospace\" font-size=\"11\">\n"
    );
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr
    ));
    svg.push_str(&format!(
        "  <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (ml + w - mr) / 2.0,
        h - 8.0,
        header[0]
    ));
    for (t, label) in [(y_min, format!("{y_min:.1}")), (y_max, format!("{y_max:.1}"))] {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{label}</text>\n",
            ml - 6.0,
            sy(t) + 4.0
        ));
    }
    for (x, label) in [(x_min, format!("{x_min}")), (x_max, format!("{x_max}"))] {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{label}</text>\n",
            sx(x),
            h - mb + 16.0
        ));
    }
    for (s, name) in header[1..].iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let points: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r[0]), sy(r[s + 1])))
            .collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        for p in &points {
            let (px, py) = p.split_once(',').unwrap();
            svg.push_str(&format!(
                "  <circle cx=\"{px}\" cy=\"{py}\" r=\"2.5\" fill=\"{color}\"/>\n"
            ));
        }
        let ly = mt + 14.0 * s as f64;
        svg.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"10\" height=\"3\" fill=\"{color}\"/>\n",
            w - mr + 8.0,
            ly
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\">{name}</text>\n",
            w - mr + 22.0,
            ly + 5.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
