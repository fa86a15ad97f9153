use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tactile_ee::config::{ConfigFile, Mode};
use tactile_ee::harness::{
    cmd_required_resources, cmd_run, cmd_table2, cmd_validate_bound, Experiment,
};
use tactile_ee::Result;

#[derive(Parser)]
#[command(
    version,
    about = "Energy-efficient downlink allocation under tight delay and reliability targets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved config in SI units.
    ValidateConfig(Common),
    /// Simulated vs M/D/1 delay CCDF against the exponential bound (ccdf.csv).
    ValidateBound(Common),
    /// Normalized power and peak resources per antenna count (summary.csv).
    Table2(Common),
    /// Peak transmit power and bandwidth bounds vs reliability (fig4.csv).
    RequiredResources(Common),
    /// Single simulation with ccdf, power trace, summary and manifest.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

impl Common {
    fn experiment(&self) -> Result<Experiment> {
        let mut file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        if let Some(s) = self.seed {
            file.experiment.seed = s;
        }
        if let Some(f) = self.frames {
            file.experiment.frames = f;
        }
        if let Some(m) = self.mode {
            file.experiment.mode = m;
        }
        if let Some(t) = self.threads {
            // only fails if a pool already exists, which cannot happen here
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global();
        }
        Experiment::new(file)
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ValidateConfig(c) => {
            let exp = c.experiment()?;
            let sc = &exp.scenario;
            print!("{}", toml::to_string(sc).expect("scenario serializes"));
            for u in sc.targets()? {
                println!(
                    "# user {}: d={:.3} m, alpha={:e}, lambda={} pkt/frame, D^q={:e} s, eps^q={:e}, theta={:?}, E_B={:e} pkt/s",
                    u.id,
                    u.distance,
                    u.large_scale_gain,
                    u.arrival_rate,
                    u.qos.delay_bound,
                    u.qos.violation_prob,
                    u.qos.qos_exponent,
                    u.qos.effective_bw
                );
            }
            Ok(())
        }
        Command::ValidateBound(c) => {
            let exp = c.experiment()?;
            let (rep, written) = cmd_validate_bound(&exp, &c.out)?;
            report(&written.0);
            rep.check()
        }
        Command::Table2(c) => {
            let exp = c.experiment()?;
            let (_, written) = cmd_table2(&exp, &c.out)?;
            report(&written.0);
            Ok(())
        }
        Command::RequiredResources(c) => {
            let exp = c.experiment()?;
            let (_, written) = cmd_required_resources(&exp, &c.out)?;
            report(&written.0);
            Ok(())
        }
        Command::Run(c) => {
            let exp = c.experiment()?;
            let (rep, written) = cmd_run(&exp, &c.out)?;
            report(&written.0);
            rep.check()
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
