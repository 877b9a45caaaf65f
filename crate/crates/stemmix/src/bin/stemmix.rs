//! Thin command-line front end over the `stemmix` library: corpus
//! synthesis, database building, dataset generation, training, ranking,
//! and side-by-side evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 internal failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use stemmix::evaluate::{self, format_report, TablePlan};
use stemmix::generation::{self, GenConfig};
use stemmix::mashupdb::{self, MashupDB};
use stemmix::model::{
    self, candidate_features, load_checkpoint, save_checkpoint, train_on_features, Hyper,
    ModelConfig, Variant,
};
use stemmix::synth::{self, SynthConfig};
use stemmix::{Error, Result};

/// Environment variable capping worker threads. The current engine is
/// single-threaded; the cap is validated and echoed for forward
/// compatibility.
const THREADS_ENV: &str = "STEMMIX_THREADS";

#[derive(Parser)]
#[command(
    name = "stemmix",
    version,
    about = "Stem mashup generation and mashability ranking"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a deterministic stem corpus with a ground-truth sidecar
    Synth {
        #[arg(long, default_value_t = 12)]
        n_songs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for stems, manifest, and truth sidecar
        #[arg(long)]
        out: PathBuf,
        /// TOML overrides
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Analyze a stem corpus into a mashup database index
    Builddb {
        /// Stem corpus root (also receives the index)
        #[arg(long)]
        out: PathBuf,
        /// Build manifest; defaults to <out>/manifest.tsv
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a labeled mashup candidate dataset from a database
    Dataset {
        /// Database root (directory holding index.tsv)
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 12)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also render each example's mixture WAV under <out>/audio
        #[arg(long, default_value_t = false)]
        render: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a mashability model on a generated dataset
    Train {
        #[arg(long)]
        db: PathBuf,
        /// Dataset manifest written by `dataset`
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "premix")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a pool of matched candidates for one vocal seed
    Rank {
        #[arg(long)]
        db: PathBuf,
        /// Trained checkpoint from `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vocal stem id, e.g. synth0003/vocal; defaults to a seeded pick
        #[arg(long)]
        vocal: Option<String>,
        #[arg(long, default_value_t = 20)]
        pool_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train all four model variants and report them beside the baseline
    Eval {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Resolved overrides from `--config` TOML, with defaults suited to the
/// synthetic desk-scale corpus.
#[derive(Debug, Clone)]
struct Overrides {
    duration_range: (f64, f64),
    model_scale: String,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    n_rank_seeds: usize,
    pool_size: usize,
    threads: usize,
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides {
            duration_range: GenConfig::desk().duration_range,
            model_scale: "desk".into(),
            lr: 1e-3,
            batch_size: 16,
            epochs: 10,
            n_rank_seeds: 10,
            pool_size: 20,
            threads: 1,
        }
    }
}

impl Overrides {
    fn load(path: Option<&Path>) -> Result<Overrides> {
        let mut o = Overrides::default();
        if let Ok(v) = std::env::var(THREADS_ENV) {
            o.threads = v.parse::<usize>().ok().filter(|&t| t >= 1).ok_or_else(|| {
                Error::Config(format!("{THREADS_ENV} must be a positive integer"))
            })?;
        }
        let Some(path) = path else { return Ok(o) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let num = |t: &toml::Table, key: &str| -> Option<f64> {
            t.get(key)
                .and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)))
        };
        if let Some(g) = table.get("generation").and_then(|v| v.as_table()) {
            if let Some(lo) = num(g, "duration_min") {
                o.duration_range.0 = lo;
            }
            if let Some(hi) = num(g, "duration_max") {
                o.duration_range.1 = hi;
            }
        }
        if let Some(m) = table.get("model").and_then(|v| v.as_table()) {
            if let Some(s) = m.get("scale").and_then(|v| v.as_str()) {
                o.model_scale = s.to_string();
            }
        }
        if let Some(t) = table.get("train").and_then(|v| v.as_table()) {
            if let Some(v) = num(t, "lr") {
                o.lr = v;
            }
            if let Some(v) = num(t, "batch_size") {
                o.batch_size = v as usize;
            }
            if let Some(v) = num(t, "epochs") {
                o.epochs = v as usize;
            }
        }
        if let Some(e) = table.get("eval").and_then(|v| v.as_table()) {
            if let Some(v) = num(e, "n_rank_seeds") {
                o.n_rank_seeds = v as usize;
            }
            if let Some(v) = num(e, "pool_size") {
                o.pool_size = v as usize;
            }
        }
        o.validate()?;
        Ok(o)
    }

    fn validate(&self) -> Result<()> {
        if !(self.duration_range.0 > 0.0 && self.duration_range.0 <= self.duration_range.1) {
            return Err(Error::Config(
                "duration window must be 0 < min <= max".into(),
            ));
        }
        if self.lr <= 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "lr, batch_size, epochs must be positive".into(),
            ));
        }
        if self.pool_size == 0 || self.n_rank_seeds == 0 {
            return Err(Error::Config(
                "pool_size and n_rank_seeds must be positive".into(),
            ));
        }
        self.model_config(Variant::Premix)?;
        Ok(())
    }

    fn gen(&self) -> GenConfig {
        GenConfig {
            duration_range: self.duration_range,
        }
    }

    fn model_config(&self, variant: Variant) -> Result<ModelConfig> {
        match self.model_scale.as_str() {
            "full" => Ok(ModelConfig::full(variant)),
            "desk" => Ok(ModelConfig::desk(variant)),
            "tiny" => Ok(ModelConfig::tiny(variant)),
            other => Err(Error::Config(format!("unknown model scale {other:?}"))),
        }
    }

    fn hyper(&self, seed: u64) -> Hyper {
        Hyper {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        }
    }

    /// Full resolved config as TOML, echoed into every output directory.
    fn echo(&self, subcommand: &str, seed: u64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "subcommand = {subcommand:?}");
        let _ = writeln!(s, "seed = {seed}");
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "\n[generation]");
        let _ = writeln!(s, "duration_min = {}", self.duration_range.0);
        let _ = writeln!(s, "duration_max = {}", self.duration_range.1);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "scale = {:?}", self.model_scale);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "n_rank_seeds = {}", self.n_rank_seeds);
        let _ = writeln!(s, "pool_size = {}", self.pool_size);
        s
    }
}

fn write_echo(out_dir: &Path, overrides: &Overrides, subcommand: &str, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("run_config.toml");
    std::fs::write(&path, overrides.echo(subcommand, seed)).map_err(|e| Error::io(&path, e))
}

fn load_dataset(path: &Path) -> Result<Vec<generation::DatasetExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    generation::parse_manifest(&text)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth {
            n_songs,
            seed,
            out,
            config,
        } => {
            if n_songs == 0 {
                return Err(Error::Config("n_songs must be at least 1".into()));
            }
            let o = Overrides::load(config.as_deref())?;
            write_echo(&out, &o, "synth", seed)?;
            let truths = synth::synthesize_corpus(&out, n_songs, seed, &SynthConfig::default())?;
            println!(
                "wrote {} songs ({} stems) under {}",
                truths.len(),
                3 * truths.len(),
                out.display()
            );
        }
        Cmd::Builddb {
            out,
            manifest,
            config,
        } => {
            let o = Overrides::load(config.as_deref())?;
            write_echo(&out, &o, "builddb", 0)?;
            let manifest = manifest.unwrap_or_else(|| out.join("manifest.tsv"));
            let db = mashupdb::build_db(&out, &manifest)?;
            let index = db.save()?;
            println!("indexed {} stems into {}", db.len(), index.display());
        }
        Cmd::Dataset {
            db,
            n_per_class,
            seed,
            out,
            render,
            config,
        } => {
            if n_per_class == 0 {
                return Err(Error::Config("n_per_class must be at least 1".into()));
            }
            let o = Overrides::load(config.as_deref())?;
            write_echo(&out, &o, "dataset", seed)?;
            let db = MashupDB::load(&db)?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let examples = generation::build_dataset_cfg(&db, n_per_class, &mut rng, &o.gen())?;
            if render {
                generation::write_dataset(&db, &examples, &out, &o.gen())?;
            } else {
                let path = out.join("dataset.tsv");
                std::fs::write(&path, generation::manifest_lines(&examples))
                    .map_err(|e| Error::io(&path, e))?;
            }
            println!(
                "wrote {} examples ({} per class) under {}",
                examples.len(),
                n_per_class,
                out.display()
            );
        }
        Cmd::Train {
            db,
            dataset,
            variant,
            seed,
            out,
            config,
        } => {
            let o = Overrides::load(config.as_deref())?;
            write_echo(&out, &o, "train", seed)?;
            let variant: Variant = variant.parse()?;
            let model_cfg = o.model_config(variant)?;
            let db = MashupDB::load(&db)?;
            let examples = load_dataset(&dataset)?;
            let mut feats = Vec::with_capacity(examples.len());
            for ex in &examples {
                feats.push(candidate_features(
                    &db,
                    &ex.candidate,
                    &model_cfg,
                    &o.gen(),
                )?);
            }
            let outcome = train_on_features(&examples, &feats, &model_cfg, &o.hyper(seed))?;
            let mut log = String::new();
            for m in &outcome.metrics {
                let _ = writeln!(log, "{m}");
            }
            let log_path = out.join("train_log.tsv");
            std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
            let ckpt = out.join("model.ckpt");
            let mut network = outcome.network;
            save_checkpoint(&mut network, &ckpt)?;
            println!(
                "trained {} epochs, best validation accuracy {:.4}, checkpoint {}",
                outcome.metrics.len(),
                outcome.best_val_accuracy,
                ckpt.display()
            );
        }
        Cmd::Rank {
            db,
            checkpoint,
            vocal,
            pool_size,
            seed,
            out,
            config,
        } => {
            let o = Overrides::load(config.as_deref())?;
            write_echo(&out, &o, "rank", seed)?;
            let db = MashupDB::load(&db)?;
            let mut network = load_checkpoint(&checkpoint)?;
            let model_cfg = network.config.clone();
            let gen = o.gen();
            let (original, pool) = match vocal {
                Some(vid) => {
                    let mut rng = ChaCha20Rng::seed_from_u64(seed);
                    let original = generation::generate_candidate_cfg(
                        &db,
                        generation::Condition::Original,
                        Some(&vid),
                        &mut rng,
                        &gen,
                    )?;
                    let mut pool = Vec::with_capacity(pool_size);
                    for _ in 0..pool_size {
                        pool.push(generation::generate_candidate_cfg(
                            &db,
                            generation::Condition::Matched,
                            Some(&vid),
                            &mut rng,
                            &gen,
                        )?);
                    }
                    (original, pool)
                }
                None => evaluate::rank_pools(&db, &gen, 1, pool_size, seed)?
                    .into_iter()
                    .next()
                    .expect("rank_pools returns at least one pool"),
            };
            let mut scored: Vec<(f64, &generation::MashupCandidate)> = Vec::new();
            for c in std::iter::once(&original).chain(pool.iter()) {
                let feats = candidate_features(&db, c, &model_cfg, &gen)?;
                scored.push((model::mashability_features(&mut network, &feats)?, c));
            }
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
            let mut listing = String::from("score\tcondition\tvocal\tharmonic\tpercussion\n");
            for (score, c) in &scored {
                let _ = writeln!(
                    listing,
                    "{score:.6}\t{}\t{}\t{}\t{}",
                    c.condition, c.vocal_id, c.harmonic_id, c.percussion_id
                );
            }
            let path = out.join("ranking.tsv");
            std::fs::write(&path, &listing).map_err(|e| Error::io(&path, e))?;
            print!("{listing}");
            let original_rank = 1 + scored
                .iter()
                .take_while(|(_, c)| c.condition != generation::Condition::Original)
                .count();
            println!("original candidate rank: {original_rank}");
        }
        Cmd::Eval {
            db,
            dataset,
            seed,
            out,
            config,
        } => {
            let o = Overrides::load(config.as_deref())?;
            write_echo(&out, &o, "eval", seed)?;
            let db = MashupDB::load(&db)?;
            let examples = load_dataset(&dataset)?;
            let plan = TablePlan {
                premix: o.model_config(Variant::Premix)?,
                postmix: o.model_config(Variant::Postmix)?,
                hyper: o.hyper(seed),
                gen: o.gen(),
                n_rank_seeds: o.n_rank_seeds,
                pool_size: o.pool_size,
            };
            let rows = evaluate::run_table(&db, &examples, &plan)?;
            let report = format_report(&rows);
            let path = out.join("report.tsv");
            std::fs::write(&path, &report).map_err(|e| Error::io(&path, e))?;
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits; everything else is usage
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::NonFinite(_) | Error::Diverged(_))) => {
            eprintln!("internal error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
