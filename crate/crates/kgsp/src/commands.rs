//! The operations behind the `kgsp` binary, callable as a library.
//!
//! Every command is a pure function of its configuration and seed: artifacts
//! written twice from the same inputs are byte-identical. Output locations:
//!
//! - `split-pczsl`: the partial manifest at `out`.
//! - `feasibility`: the score matrix at `out`.
//! - `train`: `out/model.kgsm` and `out/train_log.csv`.
//! - `eval`: `out/metrics.csv` and `out/metrics.txt`.
//! - `synth`: `out/manifest.txt`, `out/features.kgsp`,
//!   `out/oracle_feasibility.txt`.

use crate::config::{ExperimentConfig, FeasibilityMethod, PseudoKind, TaskMode};
use crate::data::{
    load_embeddings, make_pczsl_split, DatasetManifest, FeatureStore, Regime, SplitTag,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_biased, evaluate_unbiased, MetricsReport};
use crate::feasibility::{
    compcos_feasibility, feasibility_mask, knowledge_feasibility, FeasibilityMatrix,
};
use crate::model::{KgSpModel, DEFAULT_DROPOUT, DEFAULT_HIDDEN_DIMS};
use crate::rng::substream;
use crate::synth::{generate, SynthSpec};
use crate::train::{train, PseudoMode, TrainConfig};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

/// Converts a fully labeled manifest into a partial-supervision split and
/// prints a coverage report.
pub fn cmd_split_pczsl(cfg: &ExperimentConfig) -> Result<()> {
    let manifest_path = cfg.require_manifest()?;
    let seed = cfg.require_seed()?;
    let out = cfg.require_out()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let split = make_pczsl_split(&manifest, seed)?;
    split.save(out)?;

    let vocab = split.vocabulary();
    let mut object_only = 0usize;
    let mut state_only = 0usize;
    let mut states_covered = BTreeSet::new();
    let mut objects_covered = BTreeSet::new();
    for rec in split.split_records(SplitTag::Train) {
        match (rec.state, rec.object) {
            (Some(s), None) => {
                state_only += 1;
                states_covered.insert(s);
            }
            (None, Some(o)) => {
                object_only += 1;
                objects_covered.insert(o);
            }
            _ => unreachable!("split output is partial"),
        }
    }
    println!("wrote partial manifest to {}", out.display());
    println!(
        "coverage: {} object-labeled + {} state-labeled records; {}/{} states and {}/{} objects covered",
        object_only,
        state_only,
        states_covered.len(),
        vocab.n_states(),
        objects_covered.len(),
        vocab.n_objects()
    );
    let absent: Vec<&str> = vocab
        .objects()
        .iter()
        .enumerate()
        .filter(|(o, _)| !objects_covered.contains(o))
        .map(|(_, name)| name.as_str())
        .chain(
            vocab
                .states()
                .iter()
                .enumerate()
                .filter(|(s, _)| !states_covered.contains(s))
                .map(|(_, name)| name.as_str()),
        )
        .collect();
    if !absent.is_empty() {
        println!(
            "note: {} vocabulary classes have no training samples at all: {}",
            absent.len(),
            absent.join(", ")
        );
    }
    Ok(())
}

/// Computes a feasibility matrix from word embeddings and writes it as text.
pub fn cmd_feasibility(cfg: &ExperimentConfig) -> Result<()> {
    let manifest = DatasetManifest::load(cfg.require_manifest()?)?;
    let embeddings_path = cfg.require_embeddings()?;
    let out = cfg.require_out()?;
    let method = cfg.method.unwrap_or(FeasibilityMethod::Knowledge);
    let vocab = manifest.vocabulary();
    let table = load_embeddings(embeddings_path, vocab)?;
    let report = table.report();
    println!(
        "resolved {} names ({} direct, {} averaged from sub-tokens)",
        report.direct + report.averaged,
        report.direct,
        report.averaged
    );

    let matrix = match method {
        FeasibilityMethod::Knowledge => knowledge_feasibility(&table, vocab)?,
        FeasibilityMethod::Compcos => {
            compcos_feasibility(&table, vocab, manifest.seen_compositions())?
        }
    };
    matrix.save(out)?;
    println!(
        "wrote {} {}x{} matrix to {}",
        matrix.provenance().as_str(),
        matrix.n_states(),
        matrix.n_objects(),
        out.display()
    );

    let accepted = matrix.scores().iter().filter(|&&s| s > 0.0).count();
    println!(
        "{accepted} of {} compositions accepted at threshold 0",
        vocab.n_compositions()
    );
    let mut ranked: Vec<(f64, usize, usize)> = (0..vocab.n_states())
        .flat_map(|s| (0..vocab.n_objects()).map(move |o| (s, o)))
        .map(|(s, o)| (matrix.score(s, o), s, o))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let name = |s: usize, o: usize| format!("{} {}", vocab.states()[s], vocab.objects()[o]);
    println!("most feasible:");
    for &(score, s, o) in ranked.iter().take(5) {
        println!("  {:<30} {score:.4}", name(s, o));
    }
    println!("least feasible:");
    for &(score, s, o) in ranked.iter().rev().take(5) {
        println!("  {:<30} {score:.4}", name(s, o));
    }
    Ok(())
}

fn train_config(cfg: &ExperimentConfig) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let pseudo = match cfg.pseudo.unwrap_or(PseudoKind::Off) {
        PseudoKind::Off => PseudoMode::Off,
        PseudoKind::Vanilla => PseudoMode::Vanilla {
            threshold: cfg.vanilla_threshold.unwrap_or(0.5),
        },
        PseudoKind::Kg => PseudoMode::KgGumbel,
    };
    Ok(TrainConfig {
        epochs: cfg.epochs.unwrap_or(defaults.epochs),
        batch_size: cfg.batch_size.unwrap_or(defaults.batch_size),
        lr: cfg.lr.unwrap_or(defaults.lr),
        weight_decay: cfg.weight_decay.unwrap_or(defaults.weight_decay),
        seed: cfg.require_seed()?,
        pseudo,
        warmup_epochs: cfg.warmup_epochs.unwrap_or(defaults.warmup_epochs),
        entropy_weight: cfg.entropy_weight.unwrap_or(defaults.entropy_weight),
    })
}

fn check_mode(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<()> {
    if let Some(mode) = cfg.mode {
        let expected = match manifest.regime() {
            Regime::Full => TaskMode::OwCzsl,
            Regime::Partial => TaskMode::PCzsl,
        };
        if mode != expected {
            return Err(Error::Config(format!(
                "mode {:?} does not match the manifest ({} train labels)",
                mode,
                match manifest.regime() {
                    Regime::Full => "full",
                    Regime::Partial => "partial",
                }
            )));
        }
    }
    Ok(())
}

/// Trains a model and writes the checkpoint plus the per-epoch loss log.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let manifest = DatasetManifest::load(cfg.require_manifest()?)?;
    let features = FeatureStore::load(cfg.require_features()?)?;
    let out = cfg.require_out()?;
    check_mode(cfg, &manifest)?;
    let tc = train_config(cfg)?;
    let feasibility = match &cfg.feasibility {
        Some(path) => Some(FeasibilityMatrix::load(path)?),
        None => None,
    };

    let vocab = manifest.vocabulary();
    let hidden = cfg
        .hidden_dims
        .clone()
        .unwrap_or_else(|| DEFAULT_HIDDEN_DIMS.to_vec());
    let dropout = cfg.dropout.unwrap_or(DEFAULT_DROPOUT);
    let mut init_rng = substream(tc.seed, "init");
    let mut model = KgSpModel::new(
        features.dim(),
        vocab.n_states(),
        vocab.n_objects(),
        &hidden,
        dropout,
        &mut init_rng,
    )?;

    let log = train(&mut model, &manifest, &features, &tc, feasibility.as_ref())?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let checkpoint = out.join("model.kgsm");
    model.save(&checkpoint)?;
    let log_path = out.join("train_log.csv");
    log.save(&log_path)?;
    let last = log.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs; final loss {:.6}; checkpoint {}",
        log.epochs.len(),
        last.total_loss(),
        checkpoint.display()
    );
    Ok(())
}

/// Evaluates a checkpoint on the manifest's test split and writes the
/// metrics as a table and a CSV curve.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let manifest = DatasetManifest::load(cfg.require_manifest()?)?;
    let features = FeatureStore::load(cfg.require_features()?)?;
    let model = KgSpModel::load(cfg.require_checkpoint()?)?;
    let out = cfg.require_out()?;
    let vocab = manifest.vocabulary();
    if model.n_states() != vocab.n_states() || model.n_objects() != vocab.n_objects() {
        return Err(Error::Checkpoint(format!(
            "checkpoint heads ({} states, {} objects) do not match the vocabulary ({}, {})",
            model.n_states(),
            model.n_objects(),
            vocab.n_states(),
            vocab.n_objects()
        )));
    }

    let mask = match cfg.mask.unwrap_or(false) {
        false => None,
        true => {
            let path = cfg.feasibility.as_deref().ok_or_else(|| {
                Error::Config("--mask needs a feasibility matrix (--feasibility)".into())
            })?;
            let matrix = FeasibilityMatrix::load(path)?;
            Some(feasibility_mask(&matrix, 0.0)?)
        }
    };

    let mode = cfg.mode.unwrap_or(match manifest.regime() {
        Regime::Full => TaskMode::OwCzsl,
        Regime::Partial => TaskMode::PCzsl,
    });
    let report = match mode {
        TaskMode::OwCzsl => evaluate_biased(
            &model,
            &manifest,
            &features,
            manifest.seen_compositions(),
            mask.as_ref(),
        )?,
        TaskMode::PCzsl => evaluate_unbiased(&model, &manifest, &features, mask.as_ref())?,
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.save_csv(&out.join("metrics.csv"))?;
    let table = report.render_table();
    fs::write(out.join("metrics.txt"), &table).map_err(|e| Error::io(&out.join("metrics.txt"), e))?;
    print!("{table}");
    Ok(())
}

/// Generates a synthetic dataset with an exact feasibility oracle.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        n_states: cfg.states.unwrap_or(defaults.n_states),
        n_objects: cfg.objects.unwrap_or(defaults.n_objects),
        pad_objects: cfg.pad_objects.unwrap_or(defaults.pad_objects),
        state_dim: cfg.state_dim.unwrap_or(defaults.state_dim),
        object_dim: cfg.object_dim.unwrap_or(defaults.object_dim),
        noise: cfg.noise.unwrap_or(defaults.noise),
        n_seen: cfg.seen.unwrap_or(defaults.n_seen),
        train_per_seen: cfg.train_per_comp.unwrap_or(defaults.train_per_seen),
        test_per_comp: cfg.test_per_comp.unwrap_or(defaults.test_per_comp),
        seed: cfg.require_seed()?,
    };
    let output = generate(&spec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    output.manifest.save(&out.join("manifest.txt"))?;
    output.features.save(&out.join("features.kgsp"))?;
    output.oracle.save(&out.join("oracle_feasibility.txt"))?;
    let vocab = output.manifest.vocabulary();
    println!(
        "synthetic dataset in {}: {} states x {} objects ({} compositions, {} seen), {} feature rows of dim {}",
        out.display(),
        vocab.n_states(),
        vocab.n_objects(),
        vocab.n_compositions(),
        output.manifest.seen_compositions().len(),
        output.features.n_rows(),
        output.features.dim()
    );
    Ok(())
}

/// Re-renders a metrics CSV as the human-readable table.
pub fn cmd_report(metrics_path: &Path) -> Result<()> {
    let text = fs::read_to_string(metrics_path).map_err(|e| Error::io(metrics_path, e))?;
    let report = MetricsReport::from_csv(&text)?;
    print!("{}", report.render_table());
    Ok(())
}
