use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use nlofdm::pa::{
    drive_for_obo, fit_polynomial, read_amam_table, tabulate, write_amam_table, write_polynomial, PaModel,
};
use nlofdm::sim::{
    run_convergence, run_ideal_feedback, run_mse_gain, run_sweep, write_csv_file, write_manifest, Execution,
    SimConfig,
};

#[derive(Parser)]
#[command(name = "nlofdm", version, about = "OFDM link simulation with PA nonlinearity compensation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// BER/PER versus SNR for the configured receivers.
    Sweep(Common),
    /// Mean error function per joint-estimator iteration.
    Convergence(Common),
    /// Channel-estimate MSE gain of the joint estimator over least squares.
    Msegain(Common),
    /// Compensation with genie decisions: averaged versus per-symbol coefficients.
    Idealfb(Common),
    /// Fit an odd-order polynomial to an AM/AM - AM/PM table.
    FitPa(FitPa),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Packets per SNR point.
    #[arg(long)]
    packets: Option<usize>,
    /// Desk-scale run: 500 packets per point unless --packets is given.
    #[arg(long)]
    quick: bool,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct FitPa {
    /// `rho_in,amam_out,ampm_rad` table; without it the configured PA is tabulated.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Odd polynomial order.
    #[arg(long, default_value_t = 5)]
    order: usize,
    /// Largest input amplitude used in the fit.
    #[arg(long, default_value_t = 1.5)]
    rho_max: f64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(SimConfig::default()),
    }
}

impl Common {
    fn resolve(&self) -> Result<(SimConfig, Execution)> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.quick {
            cfg.packets = 500;
        }
        if let Some(p) = self.packets {
            cfg.packets = p;
        }
        let exec = if self.sequential { Execution::Sequential } else { Execution::Parallel };
        Ok((cfg, exec))
    }
}

fn fit_pa(args: &FitPa) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    std::fs::create_dir_all(&args.out)?;
    let pa = cfg.pa.build()?;
    let table = match &args.table {
        Some(p) => read_amam_table(std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        None => {
            let t = tabulate(&pa, args.rho_max, 301);
            write_amam_table(std::fs::File::create(args.out.join("pa_table.csv"))?, &t)?;
            t
        }
    };
    let input_power = match pa {
        PaModel::Linear => 1.0,
        _ => drive_for_obo(&pa, cfg.obo_db)?,
    };
    let poly = fit_polynomial(&table, args.order, args.rho_max, input_power)?;
    write_polynomial(std::fs::File::create(args.out.join("pa_poly.txt"))?, &poly)?;
    println!("wrote {}", args.out.join("pa_poly.txt").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Sweep(c) => {
            let (cfg, exec) = c.resolve()?;
            let res = run_sweep(&cfg, exec)?;
            write_csv_file(&c.out, "sweep", &res.rows)?;
            write_csv_file(&c.out, "timing", &res.timing)?;
            write_manifest(&c.out, "sweep", &cfg)?;
        }
        Command::Idealfb(c) => {
            let (cfg, exec) = c.resolve()?;
            let res = run_ideal_feedback(&cfg, exec)?;
            write_csv_file(&c.out, "idealfb", &res.rows)?;
            write_csv_file(&c.out, "timing", &res.timing)?;
            write_manifest(&c.out, "idealfb", &cfg)?;
        }
        Command::Convergence(c) => {
            let (cfg, exec) = c.resolve()?;
            write_csv_file(&c.out, "convergence", &run_convergence(&cfg, exec)?)?;
            write_manifest(&c.out, "convergence", &cfg)?;
        }
        Command::Msegain(c) => {
            let (cfg, exec) = c.resolve()?;
            write_csv_file(&c.out, "msegain", &run_mse_gain(&cfg, exec)?)?;
            write_manifest(&c.out, "msegain", &cfg)?;
        }
        Command::FitPa(args) => fit_pa(args)?,
    }
    if !matches!(cli.command, Command::FitPa(_)) {
        eprintln!("done");
    }
    Ok(())
}
