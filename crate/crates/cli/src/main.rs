//! `rangegan`: dataset generation, training, self-augmentation, evaluation,
//! conditional generation and silhouette rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rangegan_core::domain::{
    exact_evaluate, generate_dataset, load_dataset, render_svg, save_dataset, Dataset, DesignParams, LabelSet,
    DESIGN_DIM,
};
use rangegan_core::metrics::{bin_counts, condition_sweep, data_baseline, Labeler, SweepReport, SweepSettings};
use rangegan_core::models::{InferenceStats, TrainedModels};
use rangegan_core::sampling::MIN_RANGE_WIDTH;
use rangegan_core::trainer::{augmentation_round, bundle, train_estimator, train_rangegan, TrainConfig};
use rangegan_core::{Error, RangeCondition, Result};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_PARSE: u8 = 4;
const EXIT_CONFIG: u8 = 5;
const EXIT_NUMERIC: u8 = 6;

const MODELS_FILE: &str = "models.json";
const LOG_FILE: &str = "train_log.csv";
const CONFIG_FILE: &str = "config.toml";

#[derive(Parser)]
#[command(name = "rangegan", version, about = "Range-constrained conditional GAN on a planform design domain")]
#[command(after_help = "Exit codes: 2 usage, 3 i/o, 4 malformed input, 5 configuration, 6 numerical fault.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Labels {
    Aspect,
    Area,
    Both,
}

impl From<Labels> for LabelSet {
    fn from(l: Labels) -> Self {
        match l {
            Labels::Aspect => LabelSet::Aspect,
            Labels::Area => LabelSet::Area,
            Labels::Both => LabelSet::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelerArg {
    Estimator,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stats {
    Batch,
    Running,
}

impl From<Stats> for InferenceStats {
    fn from(s: Stats) -> Self {
        match s {
            Stats::Batch => InferenceStats::Batch,
            Stats::Running => InferenceStats::Running,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a planform dataset and write it with its metadata file.
    GenData {
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the estimator, then train Range-GAN.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        labels: Labels,
        /// Flat `key = value` file overriding training defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// One label-aware self-augmentation round with fresh retraining.
    Augment {
        /// Model file written by `train`.
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of generated candidates (defaults to the configured pool size).
        #[arg(long)]
        pool: Option<usize>,
        /// Replaces the configuration stored with the models.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Condition-satisfaction sweep plus the matching dataset baseline.
    Evaluate {
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "estimator")]
        labeler: LabelerArg,
        #[arg(long, default_value_t = 0.1)]
        range_size: f64,
        #[arg(long, default_value_t = 50)]
        n_conditions: usize,
        #[arg(long, default_value_t = 500)]
        n_samples: usize,
        /// Defaults to the seed the models were trained with.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "batch")]
        stats: Stats,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate designs for one condition, with exact labels and a satisfied flag.
    Generate {
        #[arg(long)]
        gan: PathBuf,
        /// Lower bound(s), comma separated for two labels.
        #[arg(long)]
        lb: String,
        /// Upper bound(s), comma separated for two labels.
        #[arg(long)]
        ub: String,
        /// Bounds are raw label values instead of normalized ones.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "batch")]
        stats: Stats,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw designs (from a dataset or `generate` output) as an SVG sheet.
    Render {
        #[arg(long)]
        designs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        columns: usize,
    },
}

fn config_help() -> String {
    let mut s = String::from("Configuration keys (defaults):\n");
    let text = TrainConfig::default().to_toml().unwrap_or_default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let _ = writeln!(s, "  {line}");
    }
    s
}

fn main() -> ExitCode {
    let keys = config_help();
    let cmd = Cli::command()
        .mut_subcommand("train", |c| c.after_help(keys.clone()))
        .mut_subcommand("augment", |c| c.after_help(keys.clone()));
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage(_) => EXIT_USAGE,
                Error::Io { .. } => EXIT_IO,
                Error::Parse { .. } => EXIT_PARSE,
                Error::Config(_) => EXIT_CONFIG,
                Error::TrainingFault { .. } => EXIT_NUMERIC,
            })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { n, seed, out } => cmd_gen_data(n, seed, &out),
        Command::Train {
            data,
            labels,
            config,
            seed,
            out_dir,
        } => cmd_train(&data, labels.into(), config.as_deref(), seed, &out_dir),
        Command::Augment {
            gan,
            data,
            pool,
            config,
            out_dir,
        } => cmd_augment(&gan, &data, pool, config.as_deref(), &out_dir),
        Command::Evaluate {
            gan,
            data,
            labeler,
            range_size,
            n_conditions,
            n_samples,
            seed,
            stats,
            out,
        } => {
            let models = TrainedModels::load(&gan)?;
            let seed = seed.unwrap_or(models.manifest.seed);
            let settings = SweepSettings {
                stats: stats.into(),
                ..SweepSettings::new(range_size, n_conditions, n_samples, seed)
            };
            cmd_evaluate(&models, &data, labeler, &settings, &out)
        }
        Command::Generate {
            gan,
            lb,
            ub,
            raw,
            n,
            seed,
            stats,
            out,
        } => cmd_generate(&gan, &lb, &ub, raw, n, seed, stats.into(), &out),
        Command::Render { designs, out, columns } => cmd_render(&designs, &out, columns),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_bins(title: &str, counts: &[usize]) {
    let cells: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
    println!("  {title:<8} {}", cells.join(" "));
}

fn cmd_gen_data(n: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = generate_dataset(n, seed)?;
    save_dataset(&ds, out)?;
    println!("wrote {} rows to {} (seed {seed}, requested {n})", ds.len(), out.display());
    println!("label histogram, 10 bins over the normalized range:");
    for label in [LabelSet::Aspect, LabelSet::Area] {
        print_bins(&label.to_string(), &bin_counts(&ds.normalized_labels(label).column(0), 10));
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn sweep_summary(models: &TrainedModels, cfg: &TrainConfig) -> Result<SweepReport> {
    let mut merged: Option<SweepReport> = None;
    for range_size in [0.2, 0.1] {
        let settings = SweepSettings {
            stats: cfg.inference_stats,
            ..SweepSettings::new(range_size, cfg.sweep_conditions, cfg.sweep_samples, cfg.seed)
        };
        let r = condition_sweep(&models.generator, Labeler::Estimator(&models.estimator), &settings)?;
        println!(
            "sweep range {range_size}: mean estimator satisfaction {:.4}, mean entropy {:.6}",
            r.mean_satisfaction(),
            r.mean_entropy()
        );
        merged = Some(match merged {
            None => r,
            Some(m) => m.merged(r)?,
        });
    }
    Ok(merged.expect("two sweeps"))
}

fn cmd_train(data: &Path, labels: LabelSet, config: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.labels = labels;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ds = load_dataset(data)?;
    create_dir(out_dir)?;
    println!("training on {} rows, labels {labels}, seed {}", ds.len(), cfg.seed);

    let (est, report) = train_estimator(&ds, &cfg)?;
    for (name, mae) in labels.names().iter().zip(&report.mae) {
        println!("estimator held-out MAE ({name}): {mae:.5} over {} rows", report.n_holdout);
    }
    let run = train_rangegan(&ds, &est, &cfg)?;
    let models = bundle(&run, &est, &ds, &cfg)?;
    models.save(out_dir.join(MODELS_FILE))?;
    run.log.save(out_dir.join(LOG_FILE))?;
    write(&out_dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
    sweep_summary(&models, &cfg)?.save(out_dir.join("sweep_summary.csv"))?;
    println!("wrote models, log and sweep summary to {}", out_dir.display());
    Ok(())
}

fn check_compatible(models: &TrainedModels, ds: &Dataset) -> Result<()> {
    if models.manifest.normalizer != ds.meta.normalizer {
        return Err(Error::config(
            "dataset label normalization differs from the one the models were trained with",
        ));
    }
    Ok(())
}

fn cmd_augment(gan: &Path, data: &Path, pool: Option<usize>, config: Option<&Path>, out_dir: &Path) -> Result<()> {
    let models = TrainedModels::load(gan)?;
    let ds = load_dataset(data)?;
    check_compatible(&models, &ds)?;
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::from_toml(&models.manifest.config)?,
    };
    if cfg.labels != models.manifest.labels {
        return Err(Error::config(format!(
            "configuration conditions on {} but the models on {}",
            cfg.labels, models.manifest.labels
        )));
    }
    if let Some(p) = pool {
        cfg.pool_size = p;
    }
    create_dir(out_dir)?;
    let out = augmentation_round(&ds, &models.generator, &cfg)?;
    save_dataset(&out.dataset, out_dir.join("augmented.csv"))?;
    bundle(&out.run, &out.estimator, &out.dataset, &cfg)?.save(out_dir.join(MODELS_FILE))?;
    out.run.log.save(out_dir.join(LOG_FILE))?;
    write(&out_dir.join(CONFIG_FILE), &cfg.to_toml()?)?;

    let mut before = out.before.clone();
    let mut after = out.after.clone();
    before.rows.iter_mut().for_each(|r| r.labeler = "exact[before]".into());
    after.rows.iter_mut().for_each(|r| r.labeler = "exact[after]".into());
    before.merged(after)?.save(out_dir.join("augment_report.csv"))?;

    let mut bins = format!("# seed={}\nlabel,bin,lo,hi,count_before,count_after\n", cfg.seed);
    for (j, name) in cfg.labels.names().iter().enumerate() {
        let k = cfg.augment_bins;
        for b in 0..k {
            let _ = writeln!(
                bins,
                "{name},{b},{},{},{},{}",
                b as f64 / k as f64,
                (b + 1) as f64 / k as f64,
                out.summary.bins_before[j][b],
                out.summary.bins_after[j][b]
            );
        }
    }
    write(&out_dir.join("augment_bins.csv"), &bins)?;

    println!(
        "pool {} designs, added {} rows ({} total)",
        out.summary.pool_size,
        out.summary.added,
        out.dataset.len()
    );
    for (j, name) in cfg.labels.names().iter().enumerate() {
        println!("{name} bin counts:");
        print_bins("before", &out.summary.bins_before[j]);
        print_bins("after", &out.summary.bins_after[j]);
    }
    println!("[before] mean exact satisfaction (range 0.1): {:.4}", out.before.mean_satisfaction());
    println!("[after]  mean exact satisfaction (range 0.1): {:.4}", out.after.mean_satisfaction());
    Ok(())
}

fn cmd_evaluate(models: &TrainedModels, data: &Path, labeler: LabelerArg, s: &SweepSettings, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    check_compatible(models, &ds)?;
    let labeler = match labeler {
        LabelerArg::Estimator => Labeler::Estimator(&models.estimator),
        LabelerArg::Exact => Labeler::Exact(&models.manifest.normalizer),
    };
    let report = condition_sweep(&models.generator, labeler, s)?;
    let baseline = data_baseline(&ds, models.manifest.labels, s.range_size, s.n_conditions)?;
    println!(
        "{} labeler, range {}: mean satisfaction {:.4} (std {:.4}), mean entropy {:.6}; data baseline {:.4}",
        labeler.name(),
        s.range_size,
        report.mean_satisfaction(),
        report.std_satisfaction(),
        report.mean_entropy(),
        baseline.mean_satisfaction()
    );
    let seed = report.seed;
    let mut merged = report.merged(baseline)?;
    merged.seed = seed;
    merged.save(out)
}

fn parse_bounds(text: &str, flag: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::usage(format!("--{flag} {t:?}: {e}")))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    gan: &Path,
    lb: &str,
    ub: &str,
    raw: bool,
    n: usize,
    seed: u64,
    stats: InferenceStats,
    out: &Path,
) -> Result<()> {
    let models = TrainedModels::load(gan)?;
    let labels = models.manifest.labels;
    let (mut lbs, mut ubs) = (parse_bounds(lb, "lb")?, parse_bounds(ub, "ub")?);
    if lbs.len() != labels.len() || ubs.len() != labels.len() {
        return Err(Error::usage(format!(
            "the models condition on {labels}; give {} bound(s) per flag",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::usage("--n must be positive"));
    }
    let norm = &models.manifest.normalizer;
    if raw {
        for (j, &i) in labels.indices().iter().enumerate() {
            let span = norm.raw_max[i] - norm.raw_min[i];
            lbs[j] = (lbs[j] - norm.raw_min[i]) / span;
            ubs[j] = (ubs[j] - norm.raw_min[i]) / span;
        }
    }
    let bounds: Vec<(f64, f64)> = lbs.into_iter().zip(ubs).collect();
    for &(l, u) in &bounds {
        if l > u {
            return Err(Error::usage(format!("lower bound {l} exceeds upper bound {u}")));
        }
        if u - l < MIN_RANGE_WIDTH - 1e-12 {
            return Err(Error::usage(format!(
                "range [{l}, {u}] is narrower than the minimum width {MIN_RANGE_WIDTH}"
            )));
        }
    }
    let cond = RangeCondition::new(bounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let designs = models.generator.sample(n, &cond, stats, &mut rng)?;

    let names = labels.names();
    let mut text = format!("# seed={seed} labels={labels}");
    for (name, (l, u)) in names.iter().zip(&cond.bounds) {
        let _ = write!(text, " {name}=[{l},{u}]");
    }
    text.push('\n');
    let mut header: Vec<String> = (0..DESIGN_DIM).map(|k| format!("d{k}")).collect();
    header.extend(["aspect_ratio_raw", "area_ratio_raw"].map(String::from));
    header.extend(names.iter().map(|n| format!("{n}_norm")));
    header.push("satisfied".into());
    let _ = writeln!(text, "{}", header.join(","));
    let mut hits = 0;
    for row in designs.iter_rows() {
        let d = DesignParams::from_slice(row)?;
        let raw_labels = exact_evaluate(&d).as_array();
        let normed = norm.normalize(&raw_labels);
        let picked: Vec<f64> = labels.indices().iter().map(|&i| normed[i]).collect();
        let ok = cond.is_satisfied(&picked);
        hits += usize::from(ok);
        let mut fields: Vec<String> = row.iter().map(f64::to_string).collect();
        fields.extend(raw_labels.iter().map(f64::to_string));
        fields.extend(picked.iter().map(f64::to_string));
        fields.push(ok.to_string());
        let _ = writeln!(text, "{}", fields.join(","));
    }
    write(out, &text)?;
    println!(
        "generated {n} designs, {hits} satisfy the condition ({:.3}) by exact evaluation",
        hits as f64 / n as f64
    );
    Ok(())
}

/// Reads the design columns `d0..d5` of a dataset or `generate` output.
fn read_designs(path: &Path) -> Result<Vec<DesignParams>> {
    let perr = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => perr(0, format!("{other:?}")),
        })?;
    let header = rdr.headers().map_err(|e| perr(0, e.to_string()))?.clone();
    let cols: Vec<usize> = (0..DESIGN_DIM)
        .map(|k| {
            let name = format!("d{k}");
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| perr(0, format!("missing column {name}")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| perr(k + 1, e.to_string()))?;
        let mut d = [0.0; DESIGN_DIM];
        for (v, &c) in d.iter_mut().zip(&cols) {
            let field = rec.get(c).ok_or_else(|| perr(k + 1, "row too short".into()))?;
            *v = field.trim().parse().map_err(|e| perr(k + 1, format!("{field:?}: {e}")))?;
        }
        out.push(DesignParams::new(d).map_err(|e| perr(k + 1, e.to_string()))?);
    }
    Ok(out)
}

fn cmd_render(designs: &Path, out: &Path, columns: usize) -> Result<()> {
    if columns == 0 {
        return Err(Error::usage("--columns must be positive"));
    }
    let d = read_designs(designs)?;
    write(out, &render_svg(&d, columns))?;
    println!("rendered {} designs to {}", d.len(), out.display());
    Ok(())
}
