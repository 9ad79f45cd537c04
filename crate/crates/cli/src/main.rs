use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sonaprint::pipeline::{self, Analyzer, Feature};
use sonaprint::spectral::WindowKind;
use sonaprint::{store, Error, PipelineConfig};

/// Audio fingerprinting and content-based music recommendation.
#[derive(Parser)]
#[command(name = "sonaprint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fingerprint every track of a corpus into an index file.
    Scan {
        /// Directory holding the WAV files.
        #[arg(long)]
        input: PathBuf,
        /// `track_id,path,genres` CSV; without it every .wav in the input directory is scanned.
        #[arg(long)]
        tags: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads, 0 for one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit the PCA model on an index and reduce every track.
    Build {
        #[arg(long)]
        index: PathBuf,
        /// Share of variance the retained components must explain.
        #[arg(long)]
        variance: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Write `component,ratio,cumulative` for every axis.
        #[arg(long)]
        variance_curve: Option<PathBuf>,
        /// Write `track_id,pc1,pc2,genres` for plotting.
        #[arg(long)]
        scatter: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// List the k tracks closest to one track of the model.
    Recommend {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        track: String,
        /// Defaults to the k stored in the model.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Genre accuracy of top-k recommendations over every track.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Dump one intermediate feature of a single file as CSV.
    Inspect {
        #[arg(long)]
        track: PathBuf,
        #[arg(long, value_parser = parse_feature)]
        feature: Feature,
        /// Standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn parse_feature(s: &str) -> Result<Feature, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Analysis settings; anything left out keeps its default.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    sample_rate: Option<u32>,
    #[arg(long)]
    frame_size: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long, value_parser = parse_window)]
    window: Option<WindowKind>,
    #[arg(long)]
    n_mels: Option<usize>,
    #[arg(long)]
    n_mfcc: Option<usize>,
    /// Start of the analysed segment, seconds.
    #[arg(long)]
    segment_start: Option<f64>,
    /// Length of the analysed segment, seconds.
    #[arg(long)]
    segment_dur: Option<f64>,
    /// Weight of the tempo-consistency term in beat tracking.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    bpm_min: Option<f64>,
    #[arg(long)]
    bpm_max: Option<f64>,
    /// Recommendations per track stored as the model default.
    #[arg(long)]
    k: Option<usize>,
}

fn parse_window(s: &str) -> Result<WindowKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut c = PipelineConfig::default();
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(
            sample_rate => sample_rate,
            frame_size => frame_size,
            hop => hop,
            window => window,
            n_mels => n_mels,
            n_mfcc => n_mfcc,
            segment_start => segment_start_s,
            segment_dur => segment_dur_s,
            alpha => alpha,
            k => k
        );
        if let Some(lo) = self.bpm_min {
            c.bpm_range[0] = lo;
        }
        if let Some(hi) = self.bpm_max {
            c.bpm_range[1] = hi;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Scan finished but some tracks were skipped.
const EXIT_PARTIAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NotFound(_) | Error::InvalidK { .. } | Error::TagsMissing(_)) => 4,
        Some(
            Error::Decode(_)
            | Error::UnsupportedFormat(_)
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::DuplicateTrack(_)
            | Error::Shape { .. },
        ) => 5,
        Some(Error::EmptyCorpus | Error::InsufficientData(_) | Error::InsufficientAudio { .. }) => {
            6
        }
        Some(Error::InvalidConfig(_)) => 2,
        _ => 1,
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Scan {
            input,
            tags,
            out: index,
            jobs,
            config,
        } => {
            let config = config.resolve()?;
            let tags = tags.map(store::load_tags).transpose()?;
            let report = pipeline::scan(&input, tags.as_deref(), &config, jobs)?;
            store::write_index(&index, &report.records)?;
            for f in &report.failures {
                log::error!("skipped {f}");
            }
            log::info!(
                "indexed {} tracks into {}",
                report.records.len(),
                index.display()
            );
            writeln!(out, "{}", report.records.len())?;
            if !report.failures.is_empty() {
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
        Command::Build {
            index,
            variance,
            out: model_path,
            variance_curve,
            scatter,
            config,
        } => {
            let mut config = config.resolve()?;
            if let Some(v) = variance {
                config.variance_target = v;
            }
            let records = store::read_index(&index, config.fingerprint_len())?;
            let (model, pca) = pipeline::build_model(&records, &config)?;
            store::write_model(&model_path, &model)?;
            if let Some(p) = variance_curve {
                let mut w = create(&p)?;
                pipeline::write_variance_curve(&mut w, &pca)?;
                w.flush()?;
            }
            if let Some(p) = scatter {
                let mut w = create(&p)?;
                pipeline::write_scatter(&mut w, &model)?;
                w.flush()?;
            }
            writeln!(out, "n_components,{}", model.n_components)?;
            writeln!(out, "component,ratio,cumulative")?;
            let cumulative = pca.cumulative_variance();
            for (i, r) in model.explained_variance_ratio.iter().enumerate() {
                writeln!(out, "{},{:.6},{:.6}", i + 1, r, cumulative[i])?;
            }
        }
        Command::Recommend { model, track, k } => {
            let model = store::read_model(&model)?;
            let k = k.unwrap_or(model.config.k);
            let recs = pipeline::recommend(&model, &track, k)?;
            for (rank, n) in recs.neighbors.iter().enumerate() {
                let genres = model
                    .tracks
                    .iter()
                    .find(|t| t.track_id == n.track_id)
                    .map(|t| t.genres.join("|"))
                    .unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{:.6},{}",
                    rank + 1,
                    n.track_id,
                    n.distance,
                    genres
                )?;
            }
        }
        Command::Evaluate { model, k } => {
            let model = store::read_model(&model)?;
            let k = k.unwrap_or(model.config.k);
            let report = pipeline::evaluate(&model, k)?;
            let total = report.per_track.len();
            writeln!(
                out,
                "accuracy,{}/{},{:.4},{:.2}%",
                report.successes,
                total,
                report.accuracy,
                100.0 * report.accuracy
            )?;
            writeln!(out, "track_id,success,neighbors")?;
            for t in &report.per_track {
                let ids: Vec<&str> = t
                    .recommendations
                    .neighbors
                    .iter()
                    .map(|n| n.track_id.as_str())
                    .collect();
                writeln!(
                    out,
                    "{},{},{}",
                    t.recommendations.target_id,
                    u8::from(t.success),
                    ids.join("|")
                )?;
            }
        }
        Command::Inspect {
            track,
            feature,
            out: csv,
            config,
        } => {
            let analyzer = Analyzer::new(config.resolve()?)?;
            let id = track
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let features = analyzer.analyze_file(&id, &track)?;
            match csv {
                Some(p) => {
                    let mut w = create(&p)?;
                    pipeline::write_feature(&mut w, &features, feature)?;
                    w.flush()?;
                }
                None => pipeline::write_feature(&mut out, &features, feature)?,
            }
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
