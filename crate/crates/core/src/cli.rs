//! Command-line surface: `synth`, `extract`, `train`, `score` and `eval`.
//!
//! Every command reads an optional JSON [`RunConfig`]; flags override it, and a
//! top-level `--seed` replaces every module seed.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augment::{augment_pipeline, resize, AugmentConfig};
use crate::data::{load_manifest, load_manifest_with, stratified_split, write_manifest, DatasetSplit, SampleRecord, Source, Taxonomy};
use crate::embedding::{external_extract, read_embeddings, read_ids, write_embeddings, write_ids, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::imageio::{load_image, save_png};
use crate::metrics::{build_report, ColumnKey, EvalTable, LabeledScore, ReportConfig, ReportMetadata};
use crate::scorer::{format_scores_csv, score_vectors, ScorerConfig};
use crate::seed::derive_seed;
use crate::svm::{svm_score, svm_train, SvmConfig};
use crate::synth::{synth_dataset, SynthConfig, SPECIES_A, SPECIES_B};
use crate::trainer::{read_checkpoint, train, write_checkpoint, Checkpoint, TrainConfig};

pub const METHOD_PF: &str = "probability-filtering";
pub const METHOD_SVM: &str = "linear-svm";

#[derive(Parser, Debug)]
#[command(name = "hybridscore", version, about = "Hybrid anomaly scoring from class probabilities")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Top-level seed; every module derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic two-species embedding dataset.
    Synth(SynthArgs),
    /// Augment images and embed them with an external extractor.
    Extract(ExtractArgs),
    /// Train the classifier head.
    Train(TrainArgs),
    /// Write an `id,score` CSV.
    Score(ScoreArgs),
    /// Evaluate a checkpoint and print the metric table.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub n_hybrid: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub mimic_shift: Option<f64>,
    /// Fraction of species A held out into `species_a_test.csv`; 0 disables.
    #[arg(long)]
    pub holdout: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct ExtractArgs {
    /// Manifest whose `source` column holds image paths.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Shell command implementing the extractor protocol.
    #[arg(long)]
    pub extractor: Option<String>,
    /// Extractor timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Augmented views per image; 0 embeds a plain resize.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub no_jitter: bool,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Treat the manifest sources as images: augment and extract before training.
    #[arg(long)]
    pub images: bool,
    #[arg(long)]
    pub extractor: Option<String>,
    #[arg(long)]
    pub no_jitter: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_head: Option<f64>,
    #[arg(long)]
    pub lr_adapter: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `MANIFEST=EMBEDDINGS` pair to evaluate; repeatable.
    #[arg(long = "data", value_parser = parse_pair)]
    pub data: Vec<(PathBuf, PathBuf)>,
    /// Add a baseline row; only `svm` is known.
    #[arg(long)]
    pub ablate: Option<String>,
    /// `MANIFEST=EMBEDDINGS` pair the SVM baseline trains on.
    #[arg(long, value_parser = parse_pair)]
    pub svm_train: Option<(PathBuf, PathBuf)>,
    /// Split written by `train`: its training ids are dropped from evaluation and are the
    /// only ones the SVM baseline may use.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub recall_threshold: Option<f64>,
    /// Record the run as jitter-disabled image mode.
    #[arg(long)]
    pub no_jitter: bool,
}

fn parse_pair(s: &str) -> std::result::Result<(PathBuf, PathBuf), String> {
    let (m, e) = s
        .split_once('=')
        .ok_or_else(|| format!("expected MANIFEST=EMBEDDINGS, got `{s}`"))?;
    if m.is_empty() || e.is_empty() {
        return Err(format!("expected MANIFEST=EMBEDDINGS, got `{s}`"));
    }
    Ok((PathBuf::from(m), PathBuf::from(e)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub command: Option<String>,
    pub timeout_secs: f64,
    pub views: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            command: None,
            timeout_secs: 300.0,
            views: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub holdout: f64,
    pub train: TrainConfig,
    pub scorer: ScorerConfig,
    pub augment: AugmentConfig,
    pub extractor: ExtractorConfig,
    pub report: ReportConfig,
    pub svm: SvmConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            synth: SynthConfig::default(),
            holdout: 0.2,
            train: TrainConfig::default(),
            scorer: ScorerConfig::default(),
            augment: AugmentConfig::default(),
            extractor: ExtractorConfig::default(),
            report: ReportConfig::default(),
            svm: SvmConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.train.seed = seed;
        self.augment.seed = seed;
        self.svm.seed = seed;
    }

    fn out_dir(&self) -> PathBuf {
        self.paths.output.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| Error::invalid(format!("missing --{what}")))?;
    if !p.exists() {
        return Err(Error::invalid(format!("{what} `{}` does not exist", p.display())));
    }
    Ok(p)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Parses arguments, runs the command and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns the text it prints on success.
pub fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed.or(cfg.seed) {
        cfg.set_seed(s);
    }
    set(&mut cfg.paths.output, cli.out.map(Some));
    match cli.command {
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Extract(a) => cmd_extract(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Score(a) => cmd_score(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
    }
}

pub fn cmd_synth(mut cfg: RunConfig, a: SynthArgs) -> Result<String> {
    set(&mut cfg.synth.k_classes, a.k);
    set(&mut cfg.synth.dim, a.dim);
    set(&mut cfg.synth.n_per_class, a.n_per_class);
    set(&mut cfg.synth.n_hybrid, a.n_hybrid);
    set(&mut cfg.synth.noise_sigma, a.sigma);
    set(&mut cfg.synth.mimic_shift, a.mimic_shift);
    set(&mut cfg.holdout, a.holdout);
    if !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::invalid(format!("holdout must be in [0, 1), got {}", cfg.holdout)));
    }
    let ds = synth_dataset(&cfg.synth)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    ds.taxonomy.write_json_file(&out.join("taxonomy.json"))?;
    let mut summary = String::new();
    for (group, stem) in [(SPECIES_A, "species_a"), (SPECIES_B, "species_b")] {
        let (records, emb) = ds.species(group)?;
        let emb_path = out.join(format!("{stem}.emb"));
        write_manifest(&out.join(format!("{stem}.csv")), &ds.taxonomy, &records)?;
        write_embeddings(&emb, &emb_path)?;
        write_ids(&emb_path, &records.iter().map(|r| r.id.clone()).collect::<Vec<_>>())?;
        summary.push_str(&format!("{stem}: {} samples, dim {}\n", records.len(), emb.dim()));
        if group == SPECIES_A && cfg.holdout > 0.0 {
            let split = stratified_split(&records, cfg.holdout, derive_seed(cfg.synth.seed, "holdout"))?;
            let test: HashSet<&str> = split.val.iter().map(String::as_str).collect();
            let (te, tr): (Vec<SampleRecord>, Vec<SampleRecord>) =
                records.iter().cloned().partition(|r| test.contains(r.id.as_str()));
            write_manifest(&out.join(format!("{stem}_train.csv")), &ds.taxonomy, &tr)?;
            write_manifest(&out.join(format!("{stem}_test.csv")), &ds.taxonomy, &te)?;
            summary.push_str(&format!("{stem}: {} train / {} held out\n", tr.len(), te.len()));
        }
    }
    write_json(&out.join("synth_config.json"), &cfg.synth)?;
    Ok(summary)
}

/// Resolves relative image paths against the manifest's directory.
fn image_path(manifest: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractMeta {
    pub views: usize,
    pub color_jitter: bool,
    pub extractor: String,
    pub images: usize,
}

struct Extracted {
    manifest: PathBuf,
    embeddings: PathBuf,
}

fn extract_into(
    cfg: &RunConfig,
    manifest: &Path,
    taxonomy: &Taxonomy,
    records: &[SampleRecord],
    no_jitter: bool,
    out: &Path,
) -> Result<Extracted> {
    let command = cfg
        .extractor
        .command
        .clone()
        .ok_or_else(|| Error::invalid("missing --extractor"))?;
    if !(cfg.extractor.timeout_secs.is_finite() && cfg.extractor.timeout_secs > 0.0) {
        return Err(Error::invalid("extractor timeout must be positive"));
    }
    let aug = if no_jitter { cfg.augment.without_jitter() } else { cfg.augment.clone() };
    aug.validate()?;
    let views_dir = out.join("views");
    create_dir(&views_dir)?;

    let mut paths = Vec::new();
    let mut out_records = Vec::new();
    let per_image = cfg.extractor.views.max(1);
    for (i, r) in records.iter().enumerate() {
        let Source::Image(src) = &r.source else {
            return Err(Error::invalid(format!("record `{}` has no image source", r.id)));
        };
        let img = load_image(&image_path(manifest, src))?;
        for v in 0..per_image {
            let view = if cfg.extractor.views == 0 {
                resize(&img, aug.out_size)?
            } else {
                let mut rng = aug.rng_for_sample((i * per_image + v) as u64);
                augment_pipeline(&img, &aug, &mut rng)?
            };
            let j = out_records.len();
            let path = views_dir.join(format!("{j:06}.png"));
            save_png(&view, &path)?;
            paths.push(path);
            out_records.push(SampleRecord {
                id: if cfg.extractor.views == 0 { r.id.clone() } else { format!("{}#{v}", r.id) },
                label: r.label,
                source: Source::Row(j),
                species_group: r.species_group.clone(),
            });
        }
    }
    let emb = external_extract(&command, &paths, Duration::from_secs_f64(cfg.extractor.timeout_secs))?;
    let manifest_out = out.join("manifest.csv");
    let emb_out = out.join("embeddings.emb");
    write_manifest(&manifest_out, taxonomy, &out_records)?;
    write_embeddings(&emb, &emb_out)?;
    write_ids(&emb_out, &out_records.iter().map(|r| r.id.clone()).collect::<Vec<_>>())?;
    write_json(
        &out.join("extract_meta.json"),
        &ExtractMeta {
            views: cfg.extractor.views,
            color_jitter: !no_jitter,
            extractor: command,
            images: records.len(),
        },
    )?;
    Ok(Extracted {
        manifest: manifest_out,
        embeddings: emb_out,
    })
}

fn load_records(manifest: &Path, taxonomy: Option<&Path>) -> Result<(Taxonomy, Vec<SampleRecord>)> {
    match taxonomy {
        Some(t) => {
            let tax = Taxonomy::from_json_file(t)?;
            let records = load_manifest_with(manifest, &tax)?;
            Ok((tax, records))
        }
        None => load_manifest(manifest),
    }
}

pub fn cmd_extract(mut cfg: RunConfig, a: ExtractArgs) -> Result<String> {
    set(&mut cfg.paths.manifest, a.manifest.map(Some));
    set(&mut cfg.paths.taxonomy, a.taxonomy.map(Some));
    set(&mut cfg.extractor.command, a.extractor.map(Some));
    set(&mut cfg.extractor.timeout_secs, a.timeout);
    set(&mut cfg.extractor.views, a.views);
    let manifest = require(cfg.paths.manifest.clone(), "manifest")?;
    let (tax, records) = load_records(&manifest, cfg.paths.taxonomy.as_deref())?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let ex = extract_into(&cfg, &manifest, &tax, &records, a.no_jitter, &out)?;
    let emb = read_embeddings(&ex.embeddings)?;
    Ok(format!(
        "extracted {} embeddings of dim {} from {} images\n",
        emb.rows(),
        emb.dim(),
        records.len()
    ))
}

/// Loads a manifest and its embedding file and checks that they line up.
pub fn load_dataset(
    manifest: &Path,
    embeddings: &Path,
    taxonomy: Option<&Taxonomy>,
) -> Result<(Taxonomy, Vec<SampleRecord>, EmbeddingMatrix)> {
    let (tax, records) = match taxonomy {
        Some(t) => (t.clone(), load_manifest_with(manifest, t)?),
        None => load_manifest(manifest)?,
    };
    let emb = read_embeddings(embeddings)?;
    let ids = read_ids(embeddings)?;
    if let Some(ids) = &ids {
        if ids.len() != emb.rows() {
            return Err(Error::Format {
                path: embeddings.to_path_buf(),
                msg: format!("{} ids for {} rows", ids.len(), emb.rows()),
            });
        }
    }
    for r in &records {
        let Source::Row(i) = r.source else {
            return Err(Error::invalid(format!(
                "record `{}` has an image source; run `extract` first",
                r.id
            )));
        };
        if i >= emb.rows() {
            return Err(Error::invalid(format!(
                "record `{}` points at row {i}, {} has {} rows",
                r.id,
                embeddings.display(),
                emb.rows()
            )));
        }
        if let Some(ids) = &ids {
            if ids[i] != r.id {
                return Err(Error::invalid(format!(
                    "record `{}` points at row {i}, which holds `{}`",
                    r.id, ids[i]
                )));
            }
        }
    }
    Ok((tax, records, emb))
}

fn row_of(r: &SampleRecord) -> usize {
    match r.source {
        Source::Row(i) => i,
        Source::Image(_) => unreachable!("load_dataset admits row sources only"),
    }
}

pub fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<String> {
    set(&mut cfg.paths.manifest, a.manifest.map(Some));
    set(&mut cfg.paths.embeddings, a.embeddings.map(Some));
    set(&mut cfg.paths.taxonomy, a.taxonomy.map(Some));
    set(&mut cfg.extractor.command, a.extractor.map(Some));
    set(&mut cfg.train.epochs, a.epochs);
    set(&mut cfg.train.batch_size, a.batch_size);
    set(&mut cfg.train.lr_head, a.lr_head);
    set(&mut cfg.train.lr_adapter, a.lr_adapter);
    set(&mut cfg.train.momentum, a.momentum);
    set(&mut cfg.train.weight_decay, a.weight_decay);
    cfg.train.validate()?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let manifest = require(cfg.paths.manifest.clone(), "manifest")?;
    let full_tax = cfg.paths.taxonomy.as_deref().map(Taxonomy::from_json_file).transpose()?;

    let (tax, records, emb) = if a.images {
        let (tax, records) = load_records(&manifest, cfg.paths.taxonomy.as_deref())?;
        let ex = extract_into(&cfg, &manifest, &tax, &records, a.no_jitter, &out)?;
        load_dataset(&ex.manifest, &ex.embeddings, Some(&tax))?
    } else {
        let embeddings = require(cfg.paths.embeddings.clone(), "embeddings")?;
        load_dataset(&manifest, &embeddings, full_tax.as_ref())?
    };
    let (tax, records) = tax.restrict_to(&records)?;
    let outcome = train(&records, &emb, &tax, &cfg.train)?;
    let ck = Checkpoint {
        params: outcome.params,
        taxonomy: tax,
        config: cfg.train.clone(),
    };
    write_checkpoint(&ck, &out.join("checkpoint.mlp"))?;
    write_json(&out.join("history.json"), &outcome.history)?;
    write_json(&out.join("split.json"), &outcome.split)?;

    let mut summary = format!(
        "trained {} epochs on {} samples ({} classes); selected epoch {}\n",
        outcome.history.epochs.len(),
        outcome.split.train.len(),
        ck.taxonomy.k(),
        outcome.history.selected_epoch
    );
    if let Some(last) = outcome.history.epochs.last() {
        summary.push_str(&format!("final loss {:.4}\n", last.loss));
    }
    Ok(summary)
}

fn scorer_config(cfg: &RunConfig, threshold: Option<f64>) -> Result<ScorerConfig> {
    ScorerConfig::new(threshold.unwrap_or(cfg.scorer.threshold))
}

fn score_records(ck: &Checkpoint, records: &[SampleRecord], emb: &EmbeddingMatrix, sc: &ScorerConfig) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| emb.row_f64(row_of(r))).collect();
    score_vectors(&ck.params, &rows, sc)
}

pub fn cmd_score(mut cfg: RunConfig, a: ScoreArgs) -> Result<String> {
    set(&mut cfg.paths.checkpoint, a.checkpoint.map(Some));
    set(&mut cfg.paths.manifest, a.manifest.map(Some));
    set(&mut cfg.paths.embeddings, a.embeddings.map(Some));
    let sc = scorer_config(&cfg, a.threshold)?;
    let ck = read_checkpoint(&require(cfg.paths.checkpoint.clone(), "checkpoint")?)?;
    let manifest = require(cfg.paths.manifest.clone(), "manifest")?;
    let embeddings = require(cfg.paths.embeddings.clone(), "embeddings")?;
    let (_, records, emb) = load_dataset(&manifest, &embeddings, None)?;
    let scores = score_records(&ck, &records, &emb, &sc)?;
    let rows: Vec<(String, f64)> = records.iter().map(|r| r.id.clone()).zip(scores).collect();
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_file(&out.join("scores.csv"), format_scores_csv(&rows))?;
    Ok(format!("scored {} samples\n", rows.len()))
}

struct EvalData {
    records: Vec<SampleRecord>,
    emb: EmbeddingMatrix,
}

fn labeled(records: &[SampleRecord], scores: &[f64]) -> Vec<LabeledScore> {
    records
        .iter()
        .zip(scores)
        .filter_map(|(r, &s)| {
            r.label.is_hybrid().map(|h| LabeledScore {
                id: r.id.clone(),
                score: s,
                is_hybrid: h,
                species_group: r.species_group.clone(),
            })
        })
        .collect()
}

/// Color jitter recorded by `extract` next to an embedding file, if any.
fn jitter_from_meta(embeddings: &Path) -> Option<bool> {
    let meta = embeddings.parent()?.join("extract_meta.json");
    read_json::<ExtractMeta>(&meta).ok().map(|m| m.color_jitter)
}

pub fn cmd_eval(mut cfg: RunConfig, a: EvalArgs) -> Result<String> {
    set(&mut cfg.paths.checkpoint, a.checkpoint.map(Some));
    set(&mut cfg.report.recall_threshold, a.recall_threshold);
    let sc = scorer_config(&cfg, a.threshold)?;
    let ck = read_checkpoint(&require(cfg.paths.checkpoint.clone(), "checkpoint")?)?;

    let mut pairs = a.data;
    if pairs.is_empty() {
        if let (Some(m), Some(e)) = (cfg.paths.manifest.clone(), cfg.paths.embeddings.clone()) {
            pairs.push((m, e));
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid("missing --data MANIFEST=EMBEDDINGS"));
    }
    let split: Option<DatasetSplit> = a.split.map(|p| require(Some(p), "split")).transpose()?.map(|p| read_json(&p)).transpose()?;
    let train_ids: HashSet<String> = split.as_ref().map(|s| s.train.iter().cloned().collect()).unwrap_or_default();

    let mut data = Vec::new();
    let mut color_jitter = None;
    for (m, e) in &pairs {
        let (_, records, emb) = load_dataset(&require(Some(m.clone()), "data manifest")?, &require(Some(e.clone()), "data embeddings")?, None)?;
        let records = records.into_iter().filter(|r| !train_ids.contains(&r.id)).collect();
        color_jitter = color_jitter.or(jitter_from_meta(e));
        data.push(EvalData { records, emb });
    }
    if a.no_jitter {
        color_jitter = Some(false);
    }

    let mut pf_scores = Vec::new();
    for d in &data {
        let s = score_records(&ck, &d.records, &d.emb, &sc)?;
        pf_scores.extend(labeled(&d.records, &s));
    }
    if pf_scores.is_empty() {
        return Err(Error::invalid("no labeled records to evaluate"));
    }

    let mut report_cfg = cfg.report.clone();
    let groups: Vec<String> = pf_scores
        .iter()
        .map(|s| s.species_group.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let trained: Vec<&str> = ck.taxonomy.species_groups().into_iter().collect();
    if report_cfg.columns.is_none() && groups.len() == 2 && trained.len() == 1 {
        let primary = trained[0];
        if let Some(mimic) = groups.iter().find(|g| g.as_str() != primary) {
            if groups.iter().any(|g| g == primary) {
                report_cfg.columns = Some(ColumnKey::transfer_layout(primary, mimic));
            }
        }
    }

    let mut rows = vec![build_report(METHOD_PF, &pf_scores, &report_cfg)?];
    match a.ablate.as_deref() {
        None => {}
        Some("svm") => {
            let (m, e) = a
                .svm_train
                .ok_or_else(|| Error::invalid("--ablate svm needs --svm-train MANIFEST=EMBEDDINGS"))?;
            let (_, train_records, train_emb) = load_dataset(&require(Some(m), "svm-train manifest")?, &require(Some(e), "svm-train embeddings")?, None)?;
            let usable: Vec<&SampleRecord> = train_records
                .iter()
                .filter(|r| r.label.is_hybrid().is_some())
                .filter(|r| split.is_none() || train_ids.contains(&r.id))
                .collect();
            let xs: Vec<Vec<f64>> = usable.iter().map(|r| train_emb.row_f64(row_of(r))).collect();
            let ys: Vec<bool> = usable.iter().map(|r| r.label.is_hybrid() == Some(true)).collect();
            let model = svm_train(&xs, &ys, &cfg.svm)?;
            let mut svm_scores = Vec::new();
            for d in &data {
                let s = d
                    .records
                    .iter()
                    .map(|r| svm_score(&model, &d.emb.row_f64(row_of(r))))
                    .collect::<Result<Vec<_>>>()?;
                svm_scores.extend(labeled(&d.records, &s));
            }
            rows.push(build_report(METHOD_SVM, &svm_scores, &report_cfg)?);
        }
        Some(other) => return Err(Error::invalid(format!("unknown ablation `{other}`; expected `svm`"))),
    }

    let mut notes = Vec::new();
    if split.is_some() {
        notes.push("training ids excluded from evaluation".to_string());
    }
    let table = EvalTable {
        metadata: ReportMetadata {
            threshold: sc.threshold,
            recall_threshold: report_cfg.recall_threshold,
            seed: ck.config.seed,
            color_jitter,
            notes,
        },
        rows,
    };
    let out = cfg.out_dir();
    create_dir(&out)?;
    let text = table.render();
    write_file(&out.join("report.json"), table.to_json()?)?;
    write_file(&out.join("report.txt"), &text)?;
    Ok(text)
}
