//! Command-line front end. Every run writes `manifest.txt` into its output
//! directory; `replay` re-executes a manifest and checks the artifacts.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::corpus::{generate_corpus, Corpus, Split};
use super::labels::{load_corpus_dir, save_corpus};
use super::manifest::{sha256_file, Manifest};
use crate::error::{invalid, Error, Result};
use crate::phoneme::{confusion_matrix, train_classifier, ClassifierModel};
use crate::pipeline::{
    convert, diversity_report, interpolation_sweep, sample_epsilon, write_mel_pgm, InterpolationSpec, SamplerConfig,
};
use crate::signal::{read_wav, write_pgm, write_wav, Waveform};
use crate::synth::{train_baseline, train_synthesizer, NoiseVector, SynthModel, SynthTrainingReport};

#[derive(Debug, Parser)]
#[command(name = "cvae-vc", version, about = "Many-to-one voice conversion with a conditional VAE")]
struct Cli {
    /// Run configuration (`key = value` lines); defaults apply otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Models {
    /// Classifier checkpoint.
    #[arg(long)]
    classifier: PathBuf,
    /// Synthesizer or baseline checkpoint.
    #[arg(long)]
    synth: PathBuf,
}

#[derive(Debug, Subcommand, Clone)]
enum Command {
    /// Render the synthetic corpus.
    GenCorpus,
    /// Train the phoneme classifier on a corpus directory.
    TrainClassifier {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train the synthesizer on the target speaker's utterances.
    TrainSynth {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Add inverse autoregressive flow steps to the posterior.
        #[arg(long, conflicts_with = "baseline")]
        flow: bool,
        /// Train the deterministic baseline instead.
        #[arg(long)]
        baseline: bool,
    },
    /// Convert one utterance.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Per-coordinate noise bound; overrides the configured one.
        #[arg(long)]
        clamp: Option<f64>,
        /// Use this noise vector instead of sampling one.
        #[arg(long)]
        eps: Option<PathBuf>,
        #[command(flatten)]
        models: Models,
    },
    /// Sweep the noise between two vectors.
    Interpolate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        eps1: PathBuf,
        #[arg(long)]
        eps2: PathBuf,
        #[arg(long)]
        steps: usize,
        #[command(flatten)]
        models: Models,
    },
    /// Convert one utterance under several noise draws and compare them.
    Diversity {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        models: Models,
    },
    /// Held-out accuracy and confusion matrix.
    EvalClassifier {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
    },
    /// Render a saved spectrogram as a PGM image.
    Plot { checkpoint: PathBuf },
    /// Re-execute a manifest into `--out` and compare artifact hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn abs(p: &Path) -> String {
    std::path::absolute(p)
        .unwrap_or_else(|_| p.to_path_buf())
        .to_string_lossy()
        .into_owned()
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::TrainClassifier { .. } => "train-classifier",
            Command::TrainSynth { .. } => "train-synth",
            Command::Convert { .. } => "convert",
            Command::Interpolate { .. } => "interpolate",
            Command::Diversity { .. } => "diversity",
            Command::EvalClassifier { .. } => "eval-classifier",
            Command::Plot { .. } => "plot",
            Command::Replay { .. } => "replay",
        }
    }

    /// Canonical arguments with absolute paths, as stored in manifests.
    fn to_args(&self) -> Vec<String> {
        let mut a: Vec<String> = Vec::new();
        let mut flag = |a: &mut Vec<String>, k: &str, v: String| {
            a.push(format!("--{k}"));
            a.push(v);
        };
        let models = |a: &mut Vec<String>, m: &Models, flag: &mut dyn FnMut(&mut Vec<String>, &str, String)| {
            flag(a, "classifier", abs(&m.classifier));
            flag(a, "synth", abs(&m.synth));
        };
        match self {
            Command::GenCorpus => {}
            Command::TrainClassifier { corpus } => flag(&mut a, "corpus", abs(corpus)),
            Command::TrainSynth {
                corpus,
                classifier,
                flow,
                baseline,
            } => {
                flag(&mut a, "corpus", abs(corpus));
                flag(&mut a, "classifier", abs(classifier));
                if *flow {
                    a.push("--flow".into());
                }
                if *baseline {
                    a.push("--baseline".into());
                }
            }
            Command::Convert {
                input,
                seed,
                clamp,
                eps,
                models: m,
            } => {
                flag(&mut a, "in", abs(input));
                flag(&mut a, "seed", seed.to_string());
                if let Some(c) = clamp {
                    flag(&mut a, "clamp", format!("{c:?}"));
                }
                if let Some(e) = eps {
                    flag(&mut a, "eps", abs(e));
                }
                models(&mut a, m, &mut flag);
            }
            Command::Interpolate {
                input,
                eps1,
                eps2,
                steps,
                models: m,
            } => {
                flag(&mut a, "in", abs(input));
                flag(&mut a, "eps1", abs(eps1));
                flag(&mut a, "eps2", abs(eps2));
                flag(&mut a, "steps", steps.to_string());
                models(&mut a, m, &mut flag);
            }
            Command::Diversity {
                input,
                samples,
                seed,
                models: m,
            } => {
                flag(&mut a, "in", abs(input));
                flag(&mut a, "samples", samples.to_string());
                flag(&mut a, "seed", seed.to_string());
                models(&mut a, m, &mut flag);
            }
            Command::EvalClassifier { corpus, classifier } => {
                flag(&mut a, "corpus", abs(corpus));
                flag(&mut a, "classifier", abs(classifier));
            }
            Command::Plot { checkpoint } => a.push(abs(checkpoint)),
            Command::Replay { manifest } => flag(&mut a, "manifest", abs(manifest)),
        }
        a
    }
}

/// Files a run read and wrote, plus its console summary.
struct Outcome {
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    summary: String,
}

fn load_classifier(path: &Path) -> Result<ClassifierModel> {
    Checkpoint::load(path)?.to_classifier()
}

fn load_synth(path: &Path) -> Result<SynthModel> {
    Checkpoint::load(path)?.to_synth()
}

fn latent_dim(m: &SynthModel) -> usize {
    match m {
        SynthModel::Cvae(c) => c.spec.latent_dim,
        SynthModel::Baseline(_) => 1,
    }
}

fn read_source(path: &Path, cfg: &RunConfig) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate != cfg.features.framing.sample_rate {
        return Err(invalid(format!(
            "{}: expected {} Hz, got {} Hz",
            path.display(),
            cfg.features.framing.sample_rate,
            w.sample_rate
        )));
    }
    Ok(w)
}

fn load_corpus_for(dir: &Path, cfg: &RunConfig) -> Result<(Corpus, Vec<PathBuf>)> {
    let corpus = load_corpus_dir(dir, cfg.features.framing)?;
    let mut inputs = vec![dir.join("utterances.txt"), dir.join("inventory.txt")];
    for u in &corpus.utterances {
        inputs.push(dir.join(format!("{}.wav", u.id)));
        inputs.push(dir.join(format!("{}.phn", u.id)));
    }
    inputs.retain(|p| p.exists());
    Ok((corpus, inputs))
}

fn synth_log(report: &SynthTrainingReport) -> String {
    let mut s = String::from("epoch,total,recon,kl\n");
    for e in std::iter::once(&report.initial).chain(&report.epochs) {
        let _ = writeln!(s, "{},{:?},{:?},{:?}", e.epoch, e.total, e.recon, e.kl);
    }
    s
}

fn execute(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out)?;
    let mut inputs = Vec::new();
    let artifacts;
    let mut summary = String::new();
    match cmd {
        Command::GenCorpus => {
            let corpus = generate_corpus(cfg.seed, &cfg.corpus)?;
            artifacts = save_corpus(&corpus, out)?;
            let _ = writeln!(
                summary,
                "{} utterances ({} held out) written to {}",
                corpus.utterances.len(),
                corpus.split(Split::HeldOut).count(),
                out.display()
            );
        }
        Command::TrainClassifier { corpus } => {
            let (c, files) = load_corpus_for(corpus, cfg)?;
            inputs = files;
            let train = c.labeled(&cfg.features, Split::Train)?;
            let eval = c.labeled(&cfg.features, Split::HeldOut)?;
            let (model, report) = train_classifier(&train, &eval, &c.inventory, cfg.features, &cfg.classifier, cfg.seed)?;
            let ckpt = out.join("classifier.ckpt");
            Checkpoint::from_classifier(&model, cfg.seed)
                .with_config(cfg.entries())
                .save(&ckpt)?;
            let mut log = format!("epoch,train_loss,train_accuracy,eval_accuracy\n0,{:?},,\n", report.initial_loss);
            for e in &report.epochs {
                let eval = e.eval_accuracy.map_or(String::new(), |a| format!("{a:?}"));
                let _ = writeln!(log, "{},{:?},{:?},{eval}", e.epoch, e.train_loss, e.train_accuracy);
            }
            let log_path = out.join("classifier_log.csv");
            std::fs::write(&log_path, log)?;
            artifacts = vec![ckpt, log_path];
            if let Some(last) = report.epochs.last() {
                let _ = writeln!(
                    summary,
                    "epoch {}: train loss {:.4}, held-out accuracy {}",
                    last.epoch,
                    last.train_loss,
                    last.eval_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            }
        }
        Command::TrainSynth {
            corpus,
            classifier,
            flow,
            baseline,
        } => {
            let (c, files) = load_corpus_for(corpus, cfg)?;
            inputs = files;
            inputs.push(classifier.clone());
            let clf = load_classifier(classifier)?;
            let target: Vec<Waveform> = c
                .speaker(cfg.target_speaker, Split::Train)
                .iter()
                .map(|u| u.waveform.clone())
                .collect();
            if target.is_empty() {
                return Err(invalid(format!("speaker {} has no training utterances", cfg.target_speaker)));
            }
            let sc = cfg.synth_config(*flow);
            let (model, report, name) = if *baseline {
                let (m, r) = train_baseline(&target, &clf, &sc, cfg.seed)?;
                (SynthModel::Baseline(m), r, "baseline")
            } else {
                let (m, r) = train_synthesizer(&target, &clf, &sc, cfg.seed)?;
                (SynthModel::Cvae(m), r, if *flow { "synth_flow" } else { "synth" })
            };
            let ckpt = out.join(format!("{name}.ckpt"));
            Checkpoint::from_synth(&model, cfg.seed)
                .with_config(cfg.entries())
                .save(&ckpt)?;
            let log_path = out.join(format!("{name}_log.csv"));
            std::fs::write(&log_path, synth_log(&report))?;
            artifacts = vec![ckpt, log_path];
            let last = report.last();
            let _ = writeln!(
                summary,
                "{name}: {} utterances, recon {:.4} -> {:.4}, kl {:.4}",
                target.len(),
                report.initial.recon,
                last.recon,
                last.kl
            );
        }
        Command::Convert {
            input,
            seed,
            clamp,
            eps,
            models,
        } => {
            let source = read_source(input, cfg)?;
            let clf = load_classifier(&models.classifier)?;
            let synth = load_synth(&models.synth)?;
            inputs = vec![input.clone(), models.classifier.clone(), models.synth.clone()];
            let noise = match eps {
                Some(p) => {
                    inputs.push(p.clone());
                    NoiseVector::from_text(&std::fs::read_to_string(p)?)?
                }
                None => {
                    let sampler = SamplerConfig {
                        seed: *seed,
                        clamp_radius: clamp.or(cfg.sampler.clamp_radius),
                        ..cfg.sampler
                    };
                    sample_epsilon(&sampler, latent_dim(&synth))?
                }
            };
            let r = convert(&source, &clf, &synth, &noise, &cfg.vocoder)?;
            let wav = out.join("converted.wav");
            write_wav(&wav, &r.waveform)?;
            let pgm = out.join("converted.pgm");
            write_mel_pgm(&pgm, &r.mel)?;
            let spec = out.join("converted_spec.ckpt");
            Checkpoint::from_spectrogram(&r.spectrogram, *seed).save(&spec)?;
            let eps_path = out.join("eps.txt");
            std::fs::write(&eps_path, r.eps_used.to_text())?;
            let f0_path = out.join("f0.txt");
            std::fs::write(
                &f0_path,
                r.f0_contour
                    .iter()
                    .map(|v| format!("{:?}\n", v.unwrap_or(0.0)))
                    .collect::<String>(),
            )?;
            artifacts = vec![wav, pgm, spec, eps_path, f0_path];
            let _ = writeln!(summary, "{} frames converted", r.spectrogram.frames);
        }
        Command::Interpolate {
            input,
            eps1,
            eps2,
            steps,
            models,
        } => {
            let source = read_source(input, cfg)?;
            let clf = load_classifier(&models.classifier)?;
            let synth = load_synth(&models.synth)?;
            let e1 = NoiseVector::from_text(&std::fs::read_to_string(eps1)?)?;
            let e2 = NoiseVector::from_text(&std::fs::read_to_string(eps2)?)?;
            inputs = vec![
                input.clone(),
                eps1.clone(),
                eps2.clone(),
                models.classifier.clone(),
                models.synth.clone(),
            ];
            let spec = InterpolationSpec::evenly(e1, e2, *steps)?;
            let sweep = interpolation_sweep(&source, &clf, &synth, &spec, &cfg.vocoder)?;
            artifacts = sweep.write(out, "interp")?;
            let _ = writeln!(
                summary,
                "{} steps, median adjacent mel distance {:.4}, max {:.4}",
                steps,
                sweep.median_adjacent(),
                sweep.max_adjacent()
            );
        }
        Command::Diversity {
            input,
            samples,
            seed,
            models,
        } => {
            let source = read_source(input, cfg)?;
            let clf = load_classifier(&models.classifier)?;
            let synth = load_synth(&models.synth)?;
            inputs = vec![input.clone(), models.classifier.clone(), models.synth.clone()];
            let sampler = SamplerConfig {
                seed: *seed,
                num_samples: *samples,
                ..cfg.sampler
            };
            let report = diversity_report(&source, &clf, &synth, &sampler, &cfg.vocoder)?;
            artifacts = report.write(out, "div")?;
            summary = report.summary();
        }
        Command::EvalClassifier { corpus, classifier } => {
            let (c, files) = load_corpus_for(corpus, cfg)?;
            inputs = files;
            inputs.push(classifier.clone());
            let clf = load_classifier(classifier)?;
            let eval = c.labeled(&clf.features, Split::HeldOut)?;
            let cm = confusion_matrix(&clf, &eval)?;
            let csv = out.join("confusion.csv");
            std::fs::write(&csv, cm.to_csv(clf.inventory.symbols()))?;
            let _ = writeln!(summary, "held-out frame accuracy = {:?}", cm.accuracy());
            if let Some(((i, j), mass)) = cm.most_confused_pair() {
                let _ = writeln!(
                    summary,
                    "most confused pair = {} {} ({mass} frames)",
                    clf.inventory.symbol(i),
                    clf.inventory.symbol(j)
                );
            }
            let txt = out.join("eval.txt");
            std::fs::write(&txt, &summary)?;
            artifacts = vec![csv, txt];
        }
        Command::Plot { checkpoint } => {
            let s = Checkpoint::load(checkpoint)?.to_spectrogram()?;
            inputs = vec![checkpoint.clone()];
            let (rows, cols) = (s.bins(), s.frames);
            let mut img = vec![0.0; rows * cols];
            for t in 0..cols {
                for k in 0..rows {
                    img[(rows - 1 - k) * cols + t] = (s.mags[t * rows + k] + 1e-6).ln();
                }
            }
            let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("spectrogram");
            let pgm = out.join(format!("{stem}.pgm"));
            write_pgm(&pgm, &img, rows, cols)?;
            artifacts = vec![pgm];
            let _ = writeln!(summary, "{cols} frames x {rows} bins plotted");
        }
        Command::Replay { manifest } => return replay(manifest, out),
    }
    Ok(Outcome {
        inputs,
        artifacts,
        summary,
    })
}

fn replay(path: &Path, out: &Path) -> Result<Outcome> {
    let m = Manifest::load(path)?;
    for (p, h) in &m.inputs {
        let got = sha256_file(Path::new(p))?;
        if &got != h {
            return Err(Error::Config(format!("input {p} changed since the recorded run")));
        }
    }
    let cfg = RunConfig::parse(&m.config)?;
    let mut argv: Vec<String> = vec!["cvae-vc".into(), m.command.clone()];
    argv.extend(m.args.iter().cloned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(Error::Config("a replay manifest cannot be replayed".into()));
    }
    run_recorded(&cli.command, &cfg, out)?;
    let bad = m.mismatches(out);
    if !bad.is_empty() {
        return Err(Error::Config(format!("replay differs in {}", bad.join(", "))));
    }
    Ok(Outcome {
        inputs: Vec::new(),
        artifacts: Vec::new(),
        summary: format!("{} artifacts reproduced byte-identically\n", m.artifacts.len()),
    })
}

/// Runs `cmd` and writes its manifest next to the artifacts.
fn run_recorded(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let outcome = execute(cmd, cfg, out)?;
    let mut m = Manifest {
        command: cmd.name().to_string(),
        args: cmd.to_args(),
        config: cfg.to_text(),
        ..Manifest::default()
    };
    for p in &outcome.inputs {
        m.record_input(&std::path::absolute(p)?)?;
    }
    m.record_artifacts(out, &outcome.artifacts)?;
    m.write(out)?;
    Ok(outcome)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = (|| {
        let cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        match &cli.command {
            Command::Replay { .. } => execute(&cli.command, &cfg, &cli.out),
            cmd => run_recorded(cmd, &cfg, &cli.out),
        }
    })();
    match result {
        Ok(o) => {
            print!("{}", o.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
