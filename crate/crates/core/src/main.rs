use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use planartrack::cli::{
    cmd_composite, cmd_eval, cmd_generate, cmd_track, cmd_train, initial_quad, parse_quad,
};
use planartrack::config::Config;
use planartrack::geometry::Quad;
use planartrack::tracking::HeadKind;

#[derive(Parser)]
#[command(name = "planartrack", version, about = "Planar object tracking with visibility and confidence")]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increment head, overriding `tracker.head`.
    #[arg(long, global = true, value_parser = ["analytic", "learned"])]
    head: Option<String>,
    /// Weight file to read (track) or write (train).
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InitQuad {
    /// Initial quad "x1 y1 x2 y2 x3 y3 x4 y4", clockwise from top-left.
    #[arg(long, conflicts_with = "annotations")]
    init: Option<String>,
    /// Annotation file whose first quad is the initial one.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

impl InitQuad {
    fn resolve(&self) -> planartrack::Result<Quad> {
        match (&self.init, &self.annotations) {
            (Some(q), _) => parse_quad(q),
            (None, Some(a)) => initial_quad(a),
            (None, None) => Err(planartrack::Error::Config("give --init or --annotations".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic pair archive.
    Generate {
        /// Source images; procedural sources when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs, overriding `dataset.pairs`.
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Train motion weights, then the confidence head.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Track a directory of frames.
    Track {
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        quad: InitQuad,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a results file against annotations.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paste an overlay image onto the tracked plane.
    Composite {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        overlay: PathBuf,
        #[command(flatten)]
        quad: InitQuad,
        /// Visibility masks written by `track`.
        #[arg(long)]
        vis: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> planartrack::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(h) = &cli.head {
        cfg.tracker.head = h.parse::<HeadKind>()?;
    }
    let weights = cli.weights.as_deref();
    match cli.command {
        Command::Generate { corpus, out, pairs } => {
            if let Some(n) = pairs {
                cfg.dataset.pairs = n;
            }
            let n = cmd_generate(corpus.as_deref(), &out, &cfg)?;
            println!("wrote {n} pairs to {}", out.display());
        }
        Command::Train { dataset } => {
            let out = weights.ok_or_else(|| planartrack::Error::Config("train needs --weights".into()))?;
            let report = cmd_train(&dataset, out, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Track { frames, quad, out } => {
            let recs = cmd_track(&frames, &quad.resolve()?, weights, &cfg, &out)?;
            let lost = recs.iter().filter(|r| r.lost).count();
            println!("tracked {} frames ({lost} lost) into {}", recs.len(), out.display());
        }
        Command::Eval {
            results,
            annotations,
            out,
        } => {
            let s = cmd_eval(&results, &annotations, &cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Composite {
            frames,
            results,
            overlay,
            quad,
            vis,
            out,
        } => {
            let n = cmd_composite(&frames, &results, &overlay, &quad.resolve()?, vis.as_deref(), &cfg, &out)?;
            println!("wrote {n} frames to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
