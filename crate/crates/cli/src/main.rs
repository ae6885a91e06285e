use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use weakhoi::config::{Paths, RunConfig};
use weakhoi::dataset::{base_dir, load_dataset, save_dataset};
use weakhoi::eval::Mode;
use weakhoi::fsio;
use weakhoi::grounding::{build_manifests, load_record_maps, prune_proposals};
use weakhoi::infer::{load_detections, save_detections};
use weakhoi::labels::{extract_corpus, load_captions, load_triplets, SynonymList};
use weakhoi::model::checkpoint::Checkpoint;
use weakhoi::pipeline::{fit, load_samples, predict, score};
use weakhoi::plausibility::{build_table, load_distributions, load_table, save_table, PlausibilityTable};
use weakhoi::synth::{generate_synthetic, oracle_report};
use weakhoi::vocab::{default_prepositions, Role, VocabSet, Vocabulary};

#[derive(Parser)]
#[command(name = "weakhoi", version, about = "Weakly supervised HOI detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset into `paths.output_dir`.
    Synth(Common),
    /// Image-level verb and preposition labels from tagged captions and triplets.
    ExtractLabels(Common),
    /// Grounding caption manifest for an external vision-language model.
    Manifest(Common),
    /// Flag the bottom half of proposals as background using grounding maps.
    Prune(Common),
    /// Binary object/verb plausibility table from verb distributions.
    BuildPlausibility(Common),
    Train(Common),
    Infer(Common),
    Eval(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_pruning: bool,
    #[arg(long)]
    no_plausibility: bool,
    #[arg(long)]
    no_preposition: bool,
    #[arg(long, default_value = "role")]
    mode: Mode,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        cfg.toggles.pruning &= !self.no_pruning;
        cfg.toggles.plausibility &= !self.no_plausibility;
        cfg.toggles.preposition &= !self.no_preposition;
        Ok(cfg)
    }
}

/// One JSON record per line on stdout.
fn emit(event: &str, mut fields: serde_json::Value) {
    fields["event"] = json!(event);
    println!("{fields}");
}

fn vocabs(cfg: &RunConfig) -> Result<VocabSet> {
    let p = &cfg.paths;
    Ok(VocabSet {
        verbs: Vocabulary::load(Role::Verb, &cfg.require("verbs", &p.verbs)?)?,
        objects: Vocabulary::load(Role::Object, &cfg.require("objects", &p.objects)?)?,
        preps: match cfg.optional(&p.prepositions) {
            Some(path) => Vocabulary::load(Role::Preposition, &path)?,
            None => default_prepositions(),
        },
    })
}

fn data_base(cfg: &RunConfig, dataset: &Path) -> PathBuf {
    cfg.optional(&cfg.paths.maps_dir).unwrap_or_else(|| base_dir(dataset))
}

fn synonyms(cfg: &RunConfig) -> Result<SynonymList> {
    Ok(match cfg.optional(&cfg.paths.synonyms) {
        Some(p) => SynonymList::load(&p)?,
        None => SynonymList::default(),
    })
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require("output_dir", &cfg.paths.output_dir)?;
    let ds = generate_synthetic(&cfg.synth)?;
    let paths = ds.write_to(&out)?;

    // A ready-to-use run config next to the data.
    let rel = |p: &Path| -> PathBuf { p.strip_prefix(&out).unwrap_or(p).to_path_buf() };
    let mut run = cfg.clone();
    run.paths = Paths {
        verbs: Some(rel(&paths.verbs)),
        objects: Some(rel(&paths.objects)),
        prepositions: Some(rel(&paths.prepositions)),
        train: Some(rel(&paths.train)),
        test: Some(rel(&paths.test)),
        captions: Some(rel(&paths.captions)),
        triplets: Some(rel(&paths.triplets)),
        distributions: Some(rel(&paths.distributions)),
        labels: Some("labels.jsonl".into()),
        manifest: Some("manifest.jsonl".into()),
        pruned: Some("train.pruned.jsonl".into()),
        table: Some("plausibility.json".into()),
        checkpoint: Some("checkpoint.json".into()),
        detections: Some("detections.jsonl".into()),
        report: Some("report.json".into()),
        ..Paths::default()
    };
    let text = serde_json::to_string_pretty(&run)? + "\n";
    fsio::write_atomic(&out.join("run.json"), text.as_bytes())?;

    let oracle = oracle_report(&ds, Mode::Role).mean_ap;
    emit(
        "synth",
        json!({"train": ds.train.len(), "test": ds.test.len(), "oracle_role_ap": oracle, "dir": out}),
    );
    eprintln!(
        "wrote {} train / {} test images to {} (oracle role AP {oracle:.3})",
        ds.train.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_extract_labels(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let verbs = Vocabulary::load(Role::Verb, &cfg.require("verbs", &p.verbs)?)?;
    let preps = match cfg.optional(&p.prepositions) {
        Some(path) => Vocabulary::load(Role::Preposition, &path)?,
        None => default_prepositions(),
    };
    let captions = load_captions(&cfg.require("captions", &p.captions)?)?;
    let triplets = match cfg.optional(&p.triplets) {
        Some(path) => load_triplets(&path)?,
        None => Vec::new(),
    };
    let labels = extract_corpus(&captions, &triplets, &verbs, &preps, &synonyms(cfg)?);
    let out = cfg.require("labels", &p.labels)?;
    fsio::write_jsonl(&out, &labels)?;
    let with_verbs = labels.iter().filter(|l| !l.verb_labels.is_empty()).count();
    emit("labels", json!({"images": labels.len(), "with_verbs": with_verbs}));
    eprintln!("{} images labelled, {with_verbs} with at least one verb", labels.len());
    Ok(())
}

fn cmd_manifest(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let captions = load_captions(&cfg.require("captions", &p.captions)?)?;
    let manifests = build_manifests(&captions);
    fsio::write_jsonl(&cfg.require("manifest", &p.manifest)?, &manifests)?;
    let n: usize = manifests
        .iter()
        .map(|m| m.human_captions.len() + m.object_captions.len())
        .sum();
    emit("manifest", json!({"images": manifests.len(), "captions": n}));
    eprintln!("{} grounding captions for {} images", n, manifests.len());
    Ok(())
}

fn cmd_prune(cfg: &RunConfig) -> Result<()> {
    let v = vocabs(cfg)?;
    let input = cfg.require("train", &cfg.paths.train)?;
    let base = data_base(cfg, &input);
    let records = load_dataset(&input, &v)?;
    let mut out = Vec::with_capacity(records.len());
    let mut n_bg = 0usize;
    for r in &records {
        let (gh, go) = load_record_maps(r, &base)?;
        let pruned = prune_proposals(r, &gh, &go);
        n_bg += pruned.humans.iter().chain(&pruned.objects).filter(|p| p.background).count();
        out.push(pruned);
    }
    save_dataset(&cfg.require("pruned", &cfg.paths.pruned)?, &out, &v)?;
    emit("prune", json!({"images": out.len(), "background": n_bg}));
    eprintln!("flagged {n_bg} proposals as background across {} images", out.len());
    Ok(())
}

fn cmd_build_plausibility(cfg: &RunConfig) -> Result<()> {
    let v = vocabs(cfg)?;
    let dists = load_distributions(&cfg.require("distributions", &cfg.paths.distributions)?, &v)?;
    let table = build_table(&dists.dists, &v)?;
    save_table(&cfg.require("table", &cfg.paths.table)?, &table, &v)?;
    let plausible = (0..table.n_objects())
        .map(|o| table.row(o).iter().filter(|b| **b).count())
        .sum::<usize>();
    emit("plausibility", json!({"objects": table.n_objects(), "plausible": plausible}));
    eprintln!("{plausible} plausible object/verb pairs over {} objects", table.n_objects());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let v = vocabs(cfg)?;
    let input = cfg.require("train", &cfg.paths.train)?;
    let ck_path = cfg.require("checkpoint", &cfg.paths.checkpoint)?;
    let records = load_dataset(&input, &v)?;
    let samples = load_samples(&records, &data_base(cfg, &input), cfg.toggles.pruning)?;
    let start = Instant::now();
    let ck = fit(&samples, &v, &cfg.train, cfg.toggles, |s| {
        let mut rec = serde_json::to_value(s).expect("serializable");
        rec["elapsed_s"] = json!(start.elapsed().as_secs_f64());
        emit("epoch", rec);
    })?;
    ck.save(&ck_path)?;
    emit(
        "train",
        json!({"images": samples.len(), "epochs": cfg.train.epochs, "toggles": cfg.toggles, "checkpoint": ck_path}),
    );
    eprintln!(
        "trained on {} images for {} epochs in {:.1}s -> {}",
        samples.len(),
        cfg.train.epochs,
        start.elapsed().as_secs_f64(),
        ck_path.display()
    );
    Ok(())
}

fn table_for(cfg: &RunConfig, v: &VocabSet) -> Result<Option<PlausibilityTable>> {
    if !cfg.toggles.plausibility {
        return Ok(None);
    }
    if let Some(p) = cfg.optional(&cfg.paths.table) {
        if p.exists() {
            return Ok(Some(load_table(&p, v)?));
        }
    }
    if let Some(p) = cfg.optional(&cfg.paths.distributions) {
        return Ok(Some(build_table(&load_distributions(&p, v)?.dists, v)?));
    }
    bail!("plausibility is on but neither paths.table nor paths.distributions is usable (pass --no-plausibility to skip)")
}

fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let v = vocabs(cfg)?;
    let ck = Checkpoint::load(&cfg.require("checkpoint", &cfg.paths.checkpoint)?)?;
    ck.check_vocab(&v)?;
    let input = cfg.require("test", &cfg.paths.test)?;
    let records = load_dataset(&input, &v)?;
    // Grounding maps are never read here: pruning is training-only.
    let samples = load_samples(&records, &data_base(cfg, &input), false)?;
    let table = table_for(cfg, &v)?;
    let dets = predict(&samples, &ck, table.as_ref())?;
    let out = cfg.require("detections", &cfg.paths.detections)?;
    save_detections(&out, &dets, &v)?;
    let n: usize = dets.iter().map(|d| d.detections.len()).sum();
    emit("infer", json!({"images": dets.len(), "detections": n, "plausibility": table.is_some()}));
    eprintln!("{n} detections over {} images -> {}", dets.len(), out.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, mode: Mode) -> Result<()> {
    let v = vocabs(cfg)?;
    let records = load_dataset(&cfg.require("test", &cfg.paths.test)?, &v)?;
    let dets = load_detections(&cfg.require("detections", &cfg.paths.detections)?, &v)?;
    let report = score(&records, &dets, &v, mode, cfg.interpolation)?;
    let out = cfg.require("report", &cfg.paths.report)?;
    report.save(&out)?;
    if cfg.write_curves {
        let dir = out.with_extension("").with_file_name(format!(
            "{}_curves",
            out.file_stem().and_then(|s| s.to_str()).unwrap_or("report")
        ));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        report.write_curves(&dir)?;
    }
    emit("eval", json!({"mode": mode, "mean_ap": report.mean_ap, "classes": report.classes.len()}));
    eprintln!("{mode} mAP {:.4} over {} classes", report.mean_ap, report.classes.len());
    for c in &report.classes {
        eprintln!("  {:<24} {:.4} ({} gt)", c.name, c.curve.ap, c.n_gt);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (common, f): (&Common, fn(&RunConfig, Mode) -> Result<()>) = match &cli.command {
        Command::Synth(c) => (c, |cfg, _| cmd_synth(cfg)),
        Command::ExtractLabels(c) => (c, |cfg, _| cmd_extract_labels(cfg)),
        Command::Manifest(c) => (c, |cfg, _| cmd_manifest(cfg)),
        Command::Prune(c) => (c, |cfg, _| cmd_prune(cfg)),
        Command::BuildPlausibility(c) => (c, |cfg, _| cmd_build_plausibility(cfg)),
        Command::Train(c) => (c, |cfg, _| cmd_train(cfg)),
        Command::Infer(c) => (c, |cfg, _| cmd_infer(cfg)),
        Command::Eval(c) => (c, cmd_eval),
    };
    let cfg = common.load()?;
    log::debug!("toggles: {:?}", cfg.toggles);
    f(&cfg, common.mode)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
