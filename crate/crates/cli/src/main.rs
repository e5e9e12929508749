//! `reexcite` command-line interface.
//!
//! Exit status: 0 on success, 2 for configuration or usage errors, 3 when a
//! run fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reexcite::analysis::{
    coincidence_pairs, cross_correlate, first_second_histograms, g2_zero, histogram2d,
};
use reexcite::detchain::detect;
use reexcite::experiment::presets::{detection_seed, simulate};
use reexcite::experiment::{
    emit_plotdata, run_preset, ConfigError, ExperimentConfig, OutputSet, PlotStyle, Preset, Product,
    RunError, RunManifest,
};
use reexcite::tagio::{self, TagStream};

#[derive(Parser)]
#[command(name = "reexcite", version, about = "Phonon-assisted re-excitation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file and list every violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate pulses, run the detection chain and write the time tags.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Output tag file.
        #[arg(long)]
        tags: PathBuf,
        #[arg(long, value_enum, default_value_t = TagFormat::Binary)]
        format: TagFormat,
        /// Also dump the emitted photons (before detection) as CSV.
        #[arg(long)]
        photons: Option<PathBuf>,
    },
    /// Histogram a tag file.
    Analyze {
        #[arg(long)]
        tags: PathBuf,
        #[arg(long, value_enum, default_value_t = TagFormat::Auto)]
        format: TagFormat,
        #[arg(long, value_enum)]
        product: AnalysisProduct,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        clock_channel: u8,
        #[arg(long, default_value_t = 1)]
        channel_a: u8,
        #[arg(long, default_value_t = 2)]
        channel_b: u8,
        /// Histogram bin, ps (defaults: 1 for correlations, 10 for time histograms, 5 for 2D).
        #[arg(long)]
        bin_ps: Option<i64>,
        /// Coincidence window, ps.
        #[arg(long, default_value_t = 3000)]
        window_ps: i64,
        #[arg(long, default_value_t = 13166)]
        rep_period_ps: i64,
        #[command(flatten)]
        plot: PlotArgs,
    },
    /// Heralded filter scan in all gating modes.
    Spectrum {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        start_ghz: Option<f64>,
        #[arg(long)]
        stop_ghz: Option<f64>,
        #[arg(long)]
        step_ghz: Option<f64>,
    },
    /// g²(0) against pulse length at constant average power.
    G2scan {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated pulse lengths, ps.
        #[arg(long, value_delimiter = ',')]
        pulse_lengths_ps: Option<Vec<f64>>,
    },
    /// Run a figure preset.
    Preset {
        /// One of fig2b, fig3a, fig3b, fig4, figS3, figS4, figS5.
        name: Option<String>,
        #[command(flatten)]
        run: RunArgs,
        /// Run every preset, each into its own subdirectory.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `sim.n_pulses`.
    #[arg(long)]
    n_pulses: Option<u64>,
    /// Overrides `sim.workers` (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    plot: PlotArgs,
}

#[derive(Args)]
struct PlotArgs {
    /// Also write SVG renderings.
    #[arg(long)]
    svg: bool,
    /// Logarithmic y axis in SVG line plots.
    #[arg(long)]
    log_y: bool,
}

impl PlotArgs {
    fn style(&self) -> PlotStyle {
        PlotStyle {
            svg: self.svg,
            log_y: self.log_y,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TagFormat {
    Auto,
    Binary,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnalysisProduct {
    /// Cross-correlation and g²(0).
    G2,
    /// Early and late click histograms of coincidences.
    FirstSecond,
    /// 2D histogram of coincidence click times.
    Hist2d,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(n) = args.n_pulses {
        cfg.sim.n_pulses = n;
    }
    if let Some(w) = args.workers {
        cfg.sim.workers = w;
    }
    if let Some(dir) = &args.out {
        cfg.output.dir = dir.clone();
    }
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(ConfigError::Invalid(v).into());
    }
    eprintln!(
        "config: {}; seed {}; {} pulses",
        args.config
            .as_deref()
            .map_or("built-in defaults".to_string(), |p| p.display().to_string()),
        cfg.sim.seed,
        cfg.sim.n_pulses
    );
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { config } => validate(&config),
        Command::Simulate {
            run,
            tags,
            format,
            photons,
        } => simulate_tags(&run, &tags, format, photons.as_deref()),
        Command::Analyze {
            tags,
            format,
            product,
            out,
            clock_channel,
            channel_a,
            channel_b,
            bin_ps,
            window_ps,
            rep_period_ps,
            plot,
        } => {
            let stream = read_tags(&tags, format)?;
            let mut outputs = OutputSet::create(&out)?;
            let clock = stream.times(clock_channel);
            let (a, b) = (stream.times(channel_a), stream.times(channel_b));
            let runtime = |e: reexcite::analysis::AnalysisError| Failure::Runtime(e.to_string());
            match product {
                AnalysisProduct::G2 => {
                    let bin = bin_ps.unwrap_or(1);
                    let span = 2 * rep_period_ps;
                    let hist = cross_correlate(&a, &b, bin, span - span % bin).map_err(runtime)?;
                    emit_plotdata(Product::Correlation(&hist), plot.style(), &mut outputs, "correlation")?;
                    let g2 = g2_zero(&hist, rep_period_ps).map_err(runtime)?;
                    println!("g2(0) = {:.5} ± {:.5}", g2.value, g2.error);
                }
                AnalysisProduct::FirstSecond => {
                    let pairs = coincidence_pairs(&a, &b, window_ps).map_err(runtime)?;
                    let fs = first_second_histograms(&pairs, &clock, bin_ps.unwrap_or(10)).map_err(runtime)?;
                    emit_plotdata(Product::Histogram(&fs.first), plot.style(), &mut outputs, "first_photon_hist")?;
                    emit_plotdata(Product::Histogram(&fs.second), plot.style(), &mut outputs, "second_photon_hist")?;
                    println!("{} coincidences, {} clicks before the first clock", pairs.len(), fs.dropped);
                }
                AnalysisProduct::Hist2d => {
                    let pairs = coincidence_pairs(&a, &b, window_ps).map_err(runtime)?;
                    let h = histogram2d(&pairs, &clock, bin_ps.unwrap_or(5), 400).map_err(runtime)?;
                    emit_plotdata(Product::Hist2D(&h), plot.style(), &mut outputs, "hist2d")?;
                    println!("{} coincidences in the 2D histogram", h.total());
                }
            }
            for e in outputs.entries() {
                println!("wrote {}", out.join(&e.file).display());
            }
            Ok(())
        }
        Command::Spectrum {
            run,
            start_ghz,
            stop_ghz,
            step_ghz,
        } => {
            let mut cfg = load(&run)?;
            cfg.scan.start_ghz = start_ghz.unwrap_or(cfg.scan.start_ghz);
            cfg.scan.stop_ghz = stop_ghz.unwrap_or(cfg.scan.stop_ghz);
            cfg.scan.step_ghz = step_ghz.unwrap_or(cfg.scan.step_ghz);
            preset(Preset::Fig3a, &cfg, &cfg.output.dir.clone(), run.plot.style())
        }
        Command::G2scan {
            run,
            pulse_lengths_ps,
        } => {
            let mut cfg = load(&run)?;
            if let Some(lengths) = pulse_lengths_ps {
                cfg.pulse_scan.pulse_lengths_ps = lengths;
            }
            preset(Preset::Fig4, &cfg, &cfg.output.dir.clone(), run.plot.style())
        }
        Command::Preset { name, run, all } => {
            let cfg = load(&run)?;
            let style = run.plot.style();
            if all {
                for p in Preset::ALL {
                    preset(p, &cfg, &cfg.output.dir.join(p.name()), style)?;
                }
                return Ok(());
            }
            let name = name
                .or_else(|| cfg.output.preset.clone())
                .ok_or_else(|| Failure::Config("no preset given (name argument, --all or output.preset)".into()))?;
            let p: Preset = name.parse()?;
            preset(p, &cfg, &cfg.output.dir.clone(), style)
        }
    }
}

fn validate(path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    let v = cfg.violations();
    if v.is_empty() {
        println!("{}: ok", path.display());
        Ok(())
    } else {
        for violation in &v {
            println!("{violation}");
        }
        Err(Failure::Config(format!("{} violation(s) in {}", v.len(), path.display())))
    }
}

fn preset(p: Preset, cfg: &ExperimentConfig, dir: &Path, style: PlotStyle) -> Result<(), Failure> {
    eprintln!("running {p} into {}", dir.display());
    let out = run_preset(p, cfg, dir, style)?;
    println!("{}", manifest_summary(&out.manifest));
    Ok(())
}

fn manifest_summary(m: &RunManifest) -> String {
    let files: Vec<String> = m.outputs.iter().map(|e| format!("  {}  {}", e.sha256, e.file)).collect();
    format!(
        "{} (seed {}, {:.1} s)\n{}",
        m.preset,
        m.seed,
        m.wall_time_s,
        files.join("\n")
    )
}

fn simulate_tags(run: &RunArgs, path: &Path, format: TagFormat, photons_csv: Option<&Path>) -> Result<(), Failure> {
    let cfg = load(run)?;
    let photons = simulate(&cfg)?;
    if let Some(p) = photons_csv {
        let file = std::io::BufWriter::new(std::fs::File::create(p)?);
        photons.write_csv(file)?;
    }
    let tags = detect(&photons, &cfg.chain(), detection_seed(&cfg, 1), cfg.sim.workers)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    match format {
        TagFormat::Csv => {
            let file = std::io::BufWriter::new(std::fs::File::create(path)?);
            tagio::write_csv(&tags, file)?;
        }
        TagFormat::Binary | TagFormat::Auto => std::fs::write(path, tagio::write_binary(&tags))?,
    }
    eprintln!(
        "{} photons from {} pulses; {} tags written to {}",
        photons.records.len(),
        photons.n_pulses(),
        tags.len(),
        path.display()
    );
    Ok(())
}

fn read_tags(path: &Path, format: TagFormat) -> Result<TagStream, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let binary = match format {
        TagFormat::Binary => true,
        TagFormat::Csv => false,
        TagFormat::Auto => bytes.starts_with(tagio::MAGIC),
    };
    let parsed = if binary {
        tagio::parse_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        tagio::parse_csv(&text)
    };
    let stream = parsed.map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let (stream, moved) = tagio::sort_and_validate(stream);
    if moved > 0 {
        eprintln!("{moved} tags were out of order and have been sorted");
    }
    Ok(stream)
}
