use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use emarch_cli::commands::{self, SegmentMode};
use emarch_cli::config::RunConfig;
use emarch_cli::{usage, CliResult};
use emarch_core::dsp::{Normalization, PadPolicy, PreprocessConfig};
use emarch_core::segmenter::boundaries_to_json;
use emarch_core::simulator::Protocol;

#[derive(Parser)]
#[command(
    name = "emarch",
    version,
    about = "Simulated EM side-channel architecture fingerprinting"
)]
struct Cli {
    /// TOML file with [em_model], [sim_config], [train_config] and [preprocess] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolName {
    Paper,
    Desk,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizeArg {
    Zscore,
    Maxabs,
    None,
}

impl From<NormalizeArg> for Normalization {
    fn from(n: NormalizeArg) -> Self {
        match n {
            NormalizeArg::Zscore => Normalization::Zscore,
            NormalizeArg::Maxabs => Normalization::Maxabs,
            NormalizeArg::None => Normalization::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PadArg {
    ZeroPadRight,
    TruncateRight,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one inference trace.
    Simulate {
        #[arg(long)]
        corpus: PathBuf,
        /// Architecture name; `<name>#prefix<k>` runs only the first k layers.
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 0)]
        model_seed: u64,
        #[arg(long, default_value_t = 0)]
        trace_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a labeled dataset under a collection protocol.
    Dataset {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        protocol: ProtocolName,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Custom protocol: profiling models per architecture.
        #[arg(long)]
        n_train: Option<usize>,
        /// Custom protocol: held-out models per architecture.
        #[arg(long)]
        n_test: Option<usize>,
        /// Custom protocol: traces per profiling model.
        #[arg(long)]
        train_traces: Option<usize>,
        /// Custom protocol: traces per held-out model.
        #[arg(long)]
        test_traces: Option<usize>,
    },
    /// Envelope a trace, or envelope, fit and split a dataset directory.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, value_enum)]
        normalize: Option<NormalizeArg>,
        #[arg(long)]
        target_len: Option<usize>,
        #[arg(long, value_enum)]
        pad_policy: Option<PadArg>,
        /// Seed of the train/validation split (datasets only).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier; writes the checkpoint and `<out>.history.tsv`.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Identify the architecture behind a single trace.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Locate layer boundaries in a trace.
    Segment {
        #[arg(long)]
        trace: PathBuf,
        /// Use simulated prefix networks of --arch instead of gap detection.
        #[arg(long, requires = "arch")]
        prefix_mode: bool,
        #[arg(long)]
        arch: Option<String>,
        /// Corpus holding --arch (prefix mode).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        window: usize,
        #[arg(long)]
        svg: PathBuf,
        /// Also write the boundaries as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Band-power heatmap over a grid of cell_<row>_<col>.emt traces.
    Heatmap {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 78e6)]
        freq: f64,
        #[arg(long, default_value_t = 1e6)]
        bw: f64,
        #[arg(long)]
        svg: PathBuf,
    },
    /// Plot a trace as SVG.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        svg: PathBuf,
        /// Boundary JSON from `segment --out`; indices refer to the plotted samples.
        #[arg(long)]
        boundaries: Option<PathBuf>,
        /// Plot the envelope with this window instead of raw samples.
        #[arg(long)]
        window: Option<usize>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate {
            corpus,
            arch,
            model_seed,
            trace_seed,
            out,
        } => {
            let t = commands::simulate(&corpus, &arch, model_seed, trace_seed, &out, &cfg)?;
            println!(
                "{} samples at {} Hz -> {}",
                t.len(),
                t.sample_rate_hz(),
                out.display()
            );
        }
        Command::Dataset {
            corpus,
            protocol,
            out,
            seed,
            n_train,
            n_test,
            train_traces,
            test_traces,
        } => {
            let p = match protocol {
                ProtocolName::Paper => Protocol::PAPER,
                ProtocolName::Desk => Protocol::DESK,
                ProtocolName::Custom => match (n_train, n_test, train_traces, test_traces) {
                    (Some(a), Some(b), Some(c), Some(d)) => Protocol {
                        n_train_models: a,
                        n_test_models: b,
                        traces_per_train_model: c,
                        traces_per_test_model: d,
                    },
                    _ => {
                        return Err(usage(
                            "custom protocol needs --n-train, --n-test, --train-traces and --test-traces",
                        ))
                    }
                },
            };
            let c = commands::dataset(&corpus, &p, &out, seed, &cfg)?;
            println!(
                "{} traces (profiling {}, test {}) -> {}",
                c.train + c.val + c.test,
                c.train + c.val,
                c.test,
                out.display()
            );
        }
        Command::Preprocess {
            input,
            window,
            normalize,
            target_len,
            pad_policy,
            seed,
            out,
        } => {
            let base = cfg.preprocess;
            let pre = PreprocessConfig {
                window: window.unwrap_or(base.window),
                normalize: normalize.map(Into::into).unwrap_or(base.normalize),
                target_len: target_len.or(base.target_len),
                pad_policy: match pad_policy {
                    Some(PadArg::ZeroPadRight) => PadPolicy::ZeroPadRight,
                    Some(PadArg::TruncateRight) => PadPolicy::TruncateRight,
                    None => base.pad_policy,
                },
                min_len: base.min_len,
            };
            commands::preprocess(&input, &out, &pre, seed)?;
            println!("-> {}", out.display());
        }
        Command::Train {
            dataset,
            out,
            epochs,
            lr,
            batch,
            patience,
            seed,
        } => {
            let mut tc = cfg.train_config.clone();
            tc.max_epochs = epochs.unwrap_or(tc.max_epochs);
            tc.learning_rate = lr.unwrap_or(tc.learning_rate);
            tc.batch_size = batch.unwrap_or(tc.batch_size);
            tc.early_stop_patience = patience.unwrap_or(tc.early_stop_patience);
            tc.rng_seed = seed.unwrap_or(tc.rng_seed);
            let (_, h) = commands::train(&dataset, &out, &tc, &cfg.preprocess)?;
            print!("{}", h.to_text());
            println!(
                "best epoch {} -> {} ({})",
                h.best_epoch,
                out.display(),
                commands::history_path(&out).display()
            );
        }
        Command::Eval {
            model,
            dataset,
            report,
        } => {
            let r = commands::eval(&model, &dataset, &report)?;
            print!("{}", r.to_text());
        }
        Command::Attack { model, trace } => {
            let id = commands::attack(&model, &trace)?;
            for (name, p) in id.ranked() {
                println!("{name}\t{p:.6}");
            }
            if id.low_confidence {
                println!("warning: low confidence");
            }
        }
        Command::Segment {
            trace,
            prefix_mode,
            arch,
            corpus,
            window,
            svg,
            out,
        } => {
            let mode = if prefix_mode {
                SegmentMode::Prefix {
                    corpus: corpus.ok_or_else(|| usage("--prefix-mode needs --corpus"))?,
                    arch: arch.expect("clap enforces --arch"),
                }
            } else {
                SegmentMode::Gaps
            };
            let s = commands::segment(&trace, &mode, window, &svg, out.as_deref(), &cfg)?;
            print!("{}", boundaries_to_json(&s.boundaries));
        }
        Command::Heatmap {
            grid,
            freq,
            bw,
            svg,
        } => {
            let h = commands::heatmap(&grid, freq, bw, &svg)?;
            for (r, c, p) in h.ranked {
                println!("cell_{r}_{c}\t{p:.6e}");
            }
        }
        Command::Plot {
            trace,
            svg,
            boundaries,
            window,
        } => {
            commands::plot(&trace, &svg, boundaries.as_deref(), window)?;
            println!("-> {}", svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code())
        }
    }
}
