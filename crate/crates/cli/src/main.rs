use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use csk_core::colorimetry::Scheme;
use csk_core::config::{FileConfig, Hardware};
use csk_core::harness::{
    ber_curve, find_power_requirement, run_ber_point, summarize, sweep_dt, write_curves_csv,
    write_requirements_csv, ExperimentConfig,
};
use csk_core::rng::derive_seed;

/// Colour shift keying link simulator with frequency-domain equalisation.
#[derive(Parser, Debug)]
#[command(name = "csk", version)]
struct Cli {
    /// TOML configuration file; explicit flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// BER against optical SNR for one configuration.
    BerCurve {
        #[command(flatten)]
        link: LinkArgs,
        /// Comma-separated SNR values in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "snr_range")]
        snr: Option<Vec<f64>>,
        /// SNR grid as start:stop:step in dB, inclusive.
        #[arg(long, value_name = "START:STOP:STEP", allow_hyphen_values = true)]
        snr_range: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Power requirement (relative to OOK) for a list of delay spreads.
    PowerVsDt {
        #[command(flatten)]
        link: LinkArgs,
        /// Comma-separated normalised delay spreads.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.01,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"
        )]
        dts: Vec<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Power requirements for table entries given as scheme:M:dt:fde|nofde.
    Table1 {
        #[command(flatten)]
        link: LinkArgs,
        /// Comma-separated entries, e.g. qled:4:1.0:fde,tled:16:0.5:nofde.
        #[arg(long, value_delimiter = ',', required = true)]
        entries: Vec<String>,
        /// Also write a JSON summary laid out as a table.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Constellation points with chromaticities and LED intensities.
    Constellation {
        #[command(flatten)]
        link: LinkArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Noiseless end-to-end check: counts bit errors without noise.
    LoopbackCheck {
        #[command(flatten)]
        link: LinkArgs,
        /// Number of bits to send.
        #[arg(long, default_value_t = 1_000_000)]
        bits: u64,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct LinkArgs {
    /// Modulation scheme: tled or qled [default: qled]
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Constellation order M [default: 4]
    #[arg(long)]
    order: Option<usize>,
    /// Normalised delay spread Dt [default: 0]
    #[arg(long)]
    dt: Option<f64>,
    /// Frequency-domain equaliser: on or off [default: on]
    #[arg(long, value_parser = parse_switch)]
    fde: Option<bool>,
    /// Payload symbols per block N [default: 64]
    #[arg(long)]
    n: Option<usize>,
    /// Cyclic prefix length L [default: 8]
    #[arg(long)]
    cp: Option<usize>,
    /// Symbol rate in symbols per second [default: 24e6]
    #[arg(long)]
    rs: Option<f64>,
    /// Target BER for power requirements [default: 1e-6]
    #[arg(long)]
    target_ber: Option<f64>,
    /// Bit errors to collect per measurement [default: 100]
    #[arg(long)]
    min_errors: Option<u64>,
    /// Bit budget per measurement [default: 1e9]
    #[arg(long)]
    max_bits: Option<u64>,
    /// Master random seed [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    /// Lower end of the power search in dB of optical SNR [default: -10]
    #[arg(long, allow_hyphen_values = true)]
    snr_lo: Option<f64>,
    /// Upper end of the power search; a BER floor above it means unachievable [default: 40]
    #[arg(long, allow_hyphen_values = true)]
    snr_hi: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
struct OutArgs {
    /// Output file; standard output if omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

impl LinkArgs {
    /// Defaults, then the file, then the flags given on the command line.
    fn resolve(&self, file: &FileConfig) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        file.experiment.apply(&mut cfg);
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            scheme => scheme, order => order, dt => dt, fde => fde, n => n, cp => cp, rs => rs,
            target_ber => target_ber, min_errors => min_bit_errors, max_bits => max_bits,
            seed => seed, snr_lo => snr_lo, snr_hi => snr_hi
        );
        cfg
    }
}

/// An error whose exit status is 2 (bad invocation or parameters).
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(Usage(e.into()))
}

fn core(e: csk_core::Error) -> anyhow::Error {
    if e.is_invalid_input() {
        usage(e)
    } else {
        e.into()
    }
}

fn parse_range(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("--snr-range expects START:STOP:STEP, got {s:?}"))?;
    let [start, stop, step] = parts[..] else {
        bail!("--snr-range expects START:STOP:STEP, got {s:?}");
    };
    if step.is_nan() || step <= 0.0 || stop < start {
        bail!("--snr-range needs a positive step and STOP >= START");
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

fn parse_entry(s: &str, template: &ExperimentConfig) -> anyhow::Result<ExperimentConfig> {
    let parts: Vec<&str> = s.split(':').collect();
    let [scheme, order, dt, fde] = parts[..] else {
        bail!("table entry {s:?} is not scheme:M:dt:fde|nofde");
    };
    let fde = match fde {
        "fde" => true,
        "nofde" => false,
        other => bail!("table entry {s:?}: expected fde or nofde, got {other:?}"),
    };
    Ok(ExperimentConfig {
        scheme: scheme.parse().map_err(|e: csk_core::Error| anyhow!(e))?,
        order: order.parse().with_context(|| format!("table entry {s:?}: bad order"))?,
        dt: dt.parse().with_context(|| format!("table entry {s:?}: bad dt"))?,
        fde,
        ..template.clone()
    })
}

fn open_out(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)
            .map_err(|e| usage(anyhow!(e).context(format!("reading {}", p.display()))))?,
        None => FileConfig::default(),
    };
    let hw: Hardware = file.hardware().map_err(core)?;

    match cli.command {
        Command::BerCurve { link, snr, snr_range, out } => {
            let mut cfg = link.resolve(&file);
            if let Some(s) = snr {
                cfg.snr_grid = s;
            } else if let Some(r) = snr_range {
                cfg.snr_grid = parse_range(&r).map_err(usage)?;
            }
            if cfg.snr_grid.is_empty() {
                return Err(usage(anyhow!("give --snr or --snr-range (or snr_grid in the config file)")));
            }
            cfg.validate().map_err(core)?;
            let curve = ber_curve(&cfg, &hw).map_err(core)?;
            write_curves_csv(&[curve], open_out(out.out.as_deref())?).map_err(core)?;
        }
        Command::PowerVsDt { link, dts, out } => {
            let cfg = link.resolve(&file);
            cfg.validate().map_err(core)?;
            let reqs = sweep_dt(&cfg, &hw, &dts, cfg.target_ber).map_err(core)?;
            write_requirements_csv(&reqs, open_out(out.out.as_deref())?).map_err(core)?;
        }
        Command::Table1 { link, entries, json, out } => {
            let template = link.resolve(&file);
            let cfgs = entries
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let mut c = parse_entry(e, &template)?;
                    c.seed = derive_seed(template.seed, i as u64);
                    c.validate().map_err(core)?;
                    Ok(c)
                })
                .collect::<anyhow::Result<Vec<_>>>()
                .map_err(|e| if e.is::<Usage>() { e } else { usage(e) })?;
            let mut reqs = Vec::with_capacity(cfgs.len());
            for c in &cfgs {
                reqs.push(find_power_requirement(c, &hw, c.target_ber, c.snr_lo, c.snr_hi).map_err(core)?);
            }
            write_requirements_csv(&reqs, open_out(out.out.as_deref())?).map_err(core)?;
            if let Some(path) = json {
                let summary = summarize(&reqs, template.n, template.cp, template.rs);
                let mut w = open_out(Some(&path))?;
                serde_json::to_writer_pretty(&mut w, &summary)?;
                writeln!(w)?;
                w.flush()?;
            }
        }
        Command::Constellation { link, out } => {
            let cfg = link.resolve(&file);
            cfg.scheme.check_order(cfg.order).map_err(core)?;
            let c = hw.constellation(cfg.scheme, cfg.order).map_err(core)?;
            let mut w = open_out(out.out.as_deref())?;
            c.write_csv(&mut w).map_err(core)?;
            w.flush()?;
        }
        Command::LoopbackCheck { link, bits, out } => {
            let mut cfg = link.resolve(&file);
            cfg.max_bits = bits;
            cfg.validate().map_err(core)?;
            let p = run_ber_point(&cfg, &hw, f64::INFINITY).map_err(core)?;
            let mut w = open_out(out.out.as_deref())?;
            writeln!(w, "scheme,M,Dt,fde,bits,errors")?;
            writeln!(w, "{},{},{},{},{},{}", cfg.scheme, cfg.order, cfg.dt, cfg.fde, p.bits, p.errors)?;
            w.flush()?;
            if p.errors != 0 {
                bail!("noiseless loopback produced {} bit errors in {} bits", p.errors, p.bits);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                eprintln!("run `csk --help` for usage");
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
