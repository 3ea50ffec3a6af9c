use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cslr_core::checkpoint;
use cslr_core::config::FlatConfig;
use cslr_core::ctc::{Decoder, GlossVocabulary};
use cslr_core::eval::{check_vocab, decode_all, evaluate};
use cslr_core::metrics::{edit_ops, pooled_wer, EditOps};
use cslr_core::models::{Model, ModelConfig, ModelKind};
use cslr_core::pose::{self, load_dataset, read_manifest, read_vocab, Split, DEFAULT_TORSO};
use cslr_core::synth::{generate_synthetic_corpus, SplitPolicy, SynthCorpusSpec};
use cslr_core::train::{prepare, train, Example, TrainConfig};
use cslr_core::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "cslr", version, about = "Pose-based continuous sign language recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill gaps, normalize to the torso and flatten a keypoint manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Output feature manifest; blobs go next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TORSO)]
        torso_indices: Vec<usize>,
    },
    /// Generate a synthetic corpus from a flat spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `si` holds out signers, `us` holds out sentences.
        #[arg(long, default_value = "si")]
        split: SplitPolicy,
    },
    /// Train a recognizer on `<data>/train.manifest`, selecting by dev WER.
    Train {
        #[arg(long)]
        model: ModelKind,
        /// Flat config: training keys plus model keys, `version = 1`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TORSO)]
        torso_indices: Vec<usize>,
    },
    /// Decode a manifest and score it with pooled WER.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// `greedy` or `beam:K`.
        #[arg(long, default_value = "greedy")]
        decode: Decoder,
        /// Line-delimited JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TORSO)]
        torso_indices: Vec<usize>,
    },
    /// Print `<id>\t<glosses>` for every record of a manifest.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Beam width; greedy decoding when omitted.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TORSO)]
        torso_indices: Vec<usize>,
    },
    /// Pooled WER between two `<id>\t<glosses>` files.
    Wer {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess {
            manifest,
            out,
            torso_indices,
        } => {
            let samples = read_manifest(&manifest, &manifest_vocab(&manifest)?)?;
            let features = samples
                .iter()
                .map(|s| Ok((pose::preprocess(&s.sequence, &torso_indices)?, s)))
                .collect::<Result<Vec<_>>>()?;
            pose::write_features(&out, &features)?;
            eprintln!("preprocessed {} sequences into {}", features.len(), out.display());
            Ok(())
        }
        Command::Synth { spec, out, split } => {
            let spec: SynthCorpusSpec = FlatConfig::load(&spec)?.into_typed("synth spec")?;
            let corpus = generate_synthetic_corpus(&spec, split)?;
            corpus.write(&out)?;
            eprintln!(
                "wrote {} train / {} dev / {} test recordings to {}",
                corpus.train.len(),
                corpus.dev.len(),
                corpus.test.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            model,
            config,
            data,
            out,
            torso_indices,
        } => train_command(model, config.as_deref(), &data, &out, &torso_indices),
        Command::Eval {
            checkpoint,
            manifest,
            decode,
            report,
            torso_indices,
        } => {
            let (model, examples) = load_for_inference(&checkpoint, &manifest, &torso_indices)?;
            let result = evaluate(&model, &examples, decode)?;
            if let Some(path) = report {
                let file = File::create(&path).map_err(|e| io_error(&path, e))?;
                let mut w = BufWriter::new(file);
                result
                    .write_jsonl(&mut w)
                    .and_then(|_| w.flush())
                    .map_err(|e| io_error(&path, e))?;
            }
            print!("{}", result.table());
            Ok(())
        }
        Command::Decode {
            checkpoint,
            manifest,
            beam,
            torso_indices,
        } => {
            let decoder = match beam {
                Some(0) => return Err(Error::Config("beam width must be at least 1".into())),
                Some(k) => Decoder::Beam(k),
                None => Decoder::Greedy,
            };
            let (model, examples) = load_for_inference(&checkpoint, &manifest, &torso_indices)?;
            let hyps = decode_all(&model, &examples, decoder)?;
            let mut stdout = std::io::stdout().lock();
            for (e, h) in examples.iter().zip(&hyps) {
                let line = format!("{}\t{}", e.id, model.vocab.decode(h).join(" "));
                writeln!(stdout, "{line}").map_err(|err| io_error(Path::new("<stdout>"), err))?;
            }
            Ok(())
        }
        Command::Wer { reference, hyp } => {
            let refs = read_tsv(&reference)?;
            let hyp_rows = read_tsv(&hyp)?;
            if let Some(record) = hyp_rows.iter().position(|(id, _)| !refs.iter().any(|(r, _)| r == id)) {
                return Err(tsv_error(&hyp, record, format!("id {:?} has no reference", hyp_rows[record].0)));
            }
            let hyps: HashMap<String, Vec<String>> = hyp_rows.into_iter().collect();
            let mut ops = Vec::with_capacity(refs.len());
            for (record, (id, r)) in refs.iter().enumerate() {
                let h = hyps
                    .get(id)
                    .ok_or_else(|| tsv_error(&reference, record, format!("no hypothesis for id {id:?}")))?;
                ops.push(edit_ops(r, h));
            }
            let (rate, EditOps { s, i, d, n }) = pooled_wer(ops)?;
            println!("WER {:.2}% (S={s} I={i} D={d} N={n}, {} sentences)", 100.0 * rate, refs.len());
            Ok(())
        }
    }
}

fn train_command(kind: ModelKind, config: Option<&Path>, data: &Path, out: &Path, torso: &[usize]) -> Result<()> {
    let mut flat = match config {
        Some(path) => FlatConfig::load(path)?,
        None => FlatConfig::default(),
    };
    let train_cfg: TrainConfig = flat.split_off(&TrainConfig::KEYS).into_typed("train config")?;
    let model_cfg = match kind {
        ModelKind::ConformerSi => ModelConfig::Conformer(flat.into_typed("conformer config")?),
        ModelKind::FusionUs => ModelConfig::Fusion(flat.into_typed("fusion config")?),
    };
    let (vocab, train_samples) = load_dataset(data, Split::Train)?;
    let dev_samples = match load_dataset(data, Split::Dev) {
        Ok((dev_vocab, samples)) if dev_vocab == vocab => samples,
        Ok(_) => return Err(Error::Config("train and dev vocabularies differ".into())),
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    let train_set = prepare(&train_samples, torso)?;
    let dev_set = prepare(&dev_samples, torso)?;
    let mut model = Model::new(model_cfg, vocab, train_cfg.seed)?;
    eprintln!(
        "training {kind}: {} parameters, {} train / {} dev sequences, {} epochs",
        model.params.scalar_count(),
        train_set.len(),
        dev_set.len(),
        train_cfg.epochs
    );
    let report = train(&mut model, &train_cfg, &train_set, &dev_set, Some(out))?;
    for log in &report.epochs {
        let dev = log.dev_wer.map_or("-".to_string(), |w| format!("{:.2}%", 100.0 * w));
        eprintln!("epoch {:>3}  lr {:.3e}  loss {:.4}  dev WER {dev}", log.epoch, log.lr, log.mean_loss);
    }
    eprintln!("kept epoch {} in {}", report.best_epoch, out.display());
    Ok(())
}

/// The vocabulary lives beside the manifest as `vocab.txt`.
fn manifest_vocab(manifest: &Path) -> Result<GlossVocabulary> {
    read_vocab(&manifest.parent().unwrap_or(Path::new(".")).join("vocab.txt"))
}

fn load_for_inference(checkpoint: &Path, manifest: &Path, torso: &[usize]) -> Result<(Model, Vec<Example>)> {
    let model = checkpoint::load(checkpoint)?;
    let vocab = manifest_vocab(manifest)?;
    check_vocab(&model, &vocab)?;
    let samples = read_manifest(manifest, &vocab)?;
    Ok((model, prepare(&samples, torso)?))
}

/// `<id>\t<space-separated glosses>` per line; blank lines are skipped.
fn read_tsv(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for (record, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let (id, glosses) = line.split_once('\t').unwrap_or((line, ""));
        let id = id.trim();
        if id.is_empty() {
            return Err(tsv_error(path, record, "empty id".into()));
        }
        if out.iter().any(|(seen, _)| seen == id) {
            return Err(tsv_error(path, record, format!("duplicate id {id:?}")));
        }
        out.push((id.to_string(), glosses.split_whitespace().map(String::from).collect()));
    }
    Ok(out)
}

fn tsv_error(path: &Path, record: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        record,
        message,
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
