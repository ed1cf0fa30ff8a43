use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ubfit::dataset::DataSet;
use ubfit::eval::EvalMode;
use ubfit::fastmath::MathPolicy;
use ubfit::fit::{fit_to, FitOptions, FitResult};
use ubfit::model_file::ModelFile;
use ubfit::sampling::sample;
use ubfit_cli::{bench, parity, CliError, ExitKind};

#[derive(Parser)]
#[command(
    name = "ubfit",
    version,
    about = "Unbinned maximum-likelihood fits in scalar or batch mode"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample events from the model and write them as CSV.
    Generate {
        model: PathBuf,
        #[arg(short = 'n', long = "events")]
        events: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit the model to a CSV dataset.
    Fit {
        model: PathBuf,
        data: PathBuf,
        #[arg(long = "batch-mode", value_enum, default_value_t = BatchMode::Fast)]
        batch_mode: BatchMode,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
        #[arg(long = "max-iterations", default_value_t = 10_000)]
        max_iterations: usize,
        /// Machine-readable CSV report.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(short, long)]
        verbose: bool,
    },
    /// Time full NLL evaluations in every mode.
    Bench {
        model: PathBuf,
        #[arg(short = 'n', long = "events", default_value_t = 100_000)]
        events: usize,
        #[arg(short = 'r', long, default_value_t = 7)]
        repeat: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Check batch evaluation against scalar evaluation entry by entry.
    Parity {
        model: PathBuf,
        #[arg(short = 'n', long = "events", default_value_t = 100_000)]
        events: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BatchMode {
    Off,
    Precise,
    Fast,
}

impl From<BatchMode> for EvalMode {
    fn from(m: BatchMode) -> Self {
        match m {
            BatchMode::Off => EvalMode::Scalar,
            BatchMode::Precise => EvalMode::Batch(MathPolicy::Precise),
            BatchMode::Fast => EvalMode::Batch(MathPolicy::Fast),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid usage");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(ExitKind::Usage as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    ModelFile::read(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn generate_data(m: &ModelFile, events: usize, seed: u64) -> Result<(DataSet, Option<f64>), CliError> {
    let out = sample(m.model.spec(), &m.observable, m.model.graph(), events, seed)?;
    Ok((out.data, out.accept_reject.map(|t| t.efficiency())))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate {
            model,
            events,
            seed,
            out,
        } => {
            let m = load_model(&model)?;
            let (data, efficiency) = generate_data(&m, events, seed)?;
            data.write_csv(&out)
                .map_err(|e| CliError::from(e).context(out.display()))?;
            println!("wrote {} events to {}", data.n_rows(), out.display());
            if let Some(eff) = efficiency {
                println!("accept/reject efficiency: {eff:.4}");
            }
            Ok(())
        }
        Command::Fit {
            model,
            data,
            batch_mode,
            tolerance,
            max_iterations,
            out,
            verbose,
        } => {
            let mut m = load_model(&model)?;
            let ds = DataSet::from_csv(&data, std::slice::from_ref(&m.observable))
                .map_err(|e| CliError::from(e).context(data.display()))?;
            if ds.dropped_rows() > 0 {
                eprintln!(
                    "warning: {} rows outside the observable range were dropped",
                    ds.dropped_rows()
                );
            }
            let options = FitOptions {
                mode: batch_mode.into(),
                tolerance,
                max_iterations,
                verbose,
            };
            let result = fit_to(&mut m.model, &ds, &options)?;
            print!("{}", fit_table(&result, options.mode));
            if let Some(out) = out {
                std::fs::write(&out, fit_report_csv(&result, options.mode))
                    .map_err(|e| CliError::data(e).context(out.display()))?;
            }
            if !result.converged {
                return Err(CliError::numerical(format!(
                    "fit did not converge within {max_iterations} iterations"
                )));
            }
            Ok(())
        }
        Command::Bench {
            model,
            events,
            repeat,
            seed,
            out,
        } => {
            if events == 0 || repeat == 0 {
                return Err(CliError::new(
                    ExitKind::Usage,
                    "--events and --repeat must be at least 1",
                ));
            }
            let mut m = load_model(&model)?;
            let (data, _) = generate_data(&m, events, seed)?;
            let report = bench::run(&mut m.model, &m.name, &data, repeat)?;
            let csv = report.to_csv();
            match out {
                Some(out) => std::fs::write(&out, &csv).map_err(|e| CliError::data(e).context(out.display()))?,
                None => print!("{csv}"),
            }
            let p = parity::check(&mut m.model, &data)?;
            for mp in &p.modes {
                println!(
                    "{}: max |dp/p| vs scalar {:.3e}, |dNLL/NLL| {:.3e}",
                    mp.mode.label(),
                    mp.max_prob_relative,
                    mp.nll_relative
                );
            }
            Ok(())
        }
        Command::Parity { model, events, seed } => {
            let mut m = load_model(&model)?;
            let (data, _) = generate_data(&m, events, seed)?;
            let report = parity::check(&mut m.model, &data)?;
            print!("{}", report.render());
            if report.passed() {
                println!("PASS");
                Ok(())
            } else {
                let worst = report
                    .modes
                    .iter()
                    .filter(|m| !m.passed)
                    .map(|m| match m.worst.first() {
                        Some(d) => format!("{} entry {} rel {:.3e}", m.mode.label(), d.index, d.relative),
                        None => format!("{} NLL rel {:.3e}", m.mode.label(), m.nll_relative),
                    })
                    .collect::<Vec<_>>()
                    .join("; ");
                Err(CliError::numerical(format!("parity violated: {worst}")))
            }
        }
    }
}

fn fit_table(r: &FitResult, mode: EvalMode) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>22} {:>22}", "parameter", "value", "uncertainty");
    for p in &r.parameters {
        let _ = writeln!(s, "{:<16} {:>22.12e} {:>22.6e}", p.name, p.value, p.uncertainty);
    }
    let _ = writeln!(
        s,
        "mode {}  converged {}  NLL {:?}  calls {}  wall time {:.3} s",
        mode.label(),
        r.converged,
        r.nll_min,
        r.n_nll_calls,
        r.wall_time.as_secs_f64()
    );
    if !r.uncertainties_valid {
        let _ = writeln!(s, "warning: Hessian not invertible; uncertainties set to 0");
    }
    s
}

fn fit_report_csv(r: &FitResult, mode: EvalMode) -> String {
    let mut s = String::from("parameter,value,uncertainty\n");
    for p in &r.parameters {
        let _ = writeln!(s, "{},{:?},{:?}", p.name, p.value, p.uncertainty);
    }
    let _ = writeln!(s, "# mode,{}", mode.label());
    let _ = writeln!(s, "# converged,{}", r.converged);
    let _ = writeln!(s, "# uncertainties_valid,{}", r.uncertainties_valid);
    let _ = writeln!(s, "# nll,{:?}", r.nll_min);
    let _ = writeln!(s, "# nll_calls,{}", r.n_nll_calls);
    let _ = writeln!(s, "# wall_time_s,{:.6}", r.wall_time.as_secs_f64());
    s
}
