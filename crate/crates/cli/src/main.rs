//! `schedlab` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 threshold violation under `--check`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use schedlab::config::{parse_config, write_resolved_config, SweepMode, SweepSpec};
use schedlab::denoiser::DenoiserParams;
use schedlab::metrics::redundancy_curve;
use schedlab::output::{write_pgm, write_samples_csv};
use schedlab::sampler::{generate, EpsModel};
use schedlab::schedule::{gamma, log_snr, ScheduleSpec};
use schedlab::sweep::{
    cell_seed, run_sweep_with, sample_labels, sampler_seed, score, write_sweep_csv, CellStatus,
    SweepContext,
};
use schedlab::training::{train, write_loss_csv};
use schedlab::Error;

/// Number of generated toy images dumped as PGM files.
const PGM_DUMPS: usize = 16;

#[derive(Parser)]
#[command(name = "schedlab", version, about = "Noise-schedule and input-scaling lab for toy diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base seed (overrides `sweep.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all outputs; created if missing.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print a t, gamma, logSNR table for a schedule.
    Schedule {
        /// e.g. `linear`, `cosine:0.2,1,1`, `sigmoid:-3,3,0.9`.
        spec: String,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
    /// Train the first grid cell of a config and save its weights.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Generate samples from saved weights, or from the oracle in oracle mode.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Weights written by `train` (`ema.bin` or `params.bin`).
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every (schedule, scale) cell and write `sweep.csv`.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Exit with status 3 if any cell's metric exceeds this value.
        #[arg(long, value_name = "MAX_METRIC")]
        check: Option<f64>,
        /// Also write each cell's samples.
        #[arg(long)]
        save_samples: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate oracle Bayes MSE over AR(1) correlation and noise level.
    OracleCurve {
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,0.9,0.99")]
        rhos: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure mapped to an exit status.
enum Failure {
    Lib(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Schedule { spec, scale, points } => print_schedule(&spec, scale, points),
        Command::Train { cfg, common } => cmd_train(&cfg, &common),
        Command::Sample { cfg, model, common } => cmd_sample(&cfg, model.as_deref(), &common),
        Command::Sweep { cfg, check, save_samples, common } => {
            cmd_sweep(&cfg, check, save_samples, &common)
        }
        Command::OracleCurve { dim, rhos, gammas, scale, common } => {
            let table = redundancy_curve(&rhos, &gammas, dim, scale)?;
            let mut text = String::from("gamma");
            for r in &rhos {
                text.push_str(&format!(",rho={r}"));
            }
            text.push('\n');
            for (i, g) in gammas.iter().enumerate() {
                text.push_str(&g.to_string());
                for j in 0..rhos.len() {
                    text.push_str(&format!(",{}", table.get2(i, j)));
                }
                text.push('\n');
            }
            let path = prepare_dir(&common.out_dir)?.join("oracle_curve.csv");
            write_file(&path, &text)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn print_schedule(spec: &str, scale: f64, points: usize) -> CliResult {
    let spec: ScheduleSpec = spec.parse()?;
    if points < 2 {
        return Err(Error::InvalidArgument("need at least 2 points".into()).into());
    }
    println!("t,gamma,logsnr");
    for k in 0..points {
        let t = k as f64 / (points - 1) as f64;
        let g = gamma(&spec, t)?;
        let l = if g < 1.0 { log_snr(&spec, t, scale)? } else { f64::INFINITY };
        println!("{t},{g},{l}");
    }
    Ok(())
}

fn load_spec(cfg: &ConfigArgs, common: &Common) -> CliResult<SweepSpec> {
    let mut spec = match &cfg.config {
        Some(p) => parse_config(p)?,
        None => SweepSpec::default(),
    };
    for o in &cfg.overrides {
        spec.set(o)?;
    }
    if let Some(s) = common.seed {
        spec.sweep.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn prepare_dir(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    Ok(dir.to_path_buf())
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn cmd_train(cfg: &ConfigArgs, common: &Common) -> CliResult {
    let spec = load_spec(cfg, common)?;
    if spec.sweep.mode == SweepMode::Oracle {
        return Err(Error::InvalidArgument("oracle mode has nothing to train".into()).into());
    }
    let dir = prepare_dir(&common.out_dir)?;
    write_resolved_config(dir.join("resolved.toml"), &spec)?;
    let ctx = SweepContext::new(&spec)?;
    let cs = spec.compound(0, 0)?;
    let seed = cell_seed(spec.sweep.seed, 0, 0);
    let out = train(&ctx.dataset, &spec.arch()?, &cs, &spec.train_config(seed))?;
    out.params.save(dir.join("params.bin"))?;
    out.ema.save(dir.join("ema.bin"))?;
    write_loss_csv(dir.join("loss.csv"), &out.history, 100)?;
    if let Some(last) = out.history.last() {
        println!("trained {} steps; final loss {:.5}", last.step + 1, last.loss);
    }
    Ok(())
}

fn cmd_sample(cfg: &ConfigArgs, model: Option<&Path>, common: &Common) -> CliResult {
    let spec = load_spec(cfg, common)?;
    let dir = prepare_dir(&common.out_dir)?;
    write_resolved_config(dir.join("resolved.toml"), &spec)?;
    let ctx = SweepContext::new(&spec)?;
    let cs = spec.compound(0, 0)?;
    let seed = cell_seed(spec.sweep.seed, 0, 0);
    let sc = spec.sampler_for(&cs.schedule, sampler_seed(seed));
    let n = spec.eval.n_samples;
    let dim = spec.dataset.kind.dim();

    let loaded;
    let eps_model: &dyn EpsModel = match (spec.sweep.mode, model) {
        (SweepMode::Oracle, _) => ctx.oracle.as_ref().expect("oracle context"),
        (SweepMode::Trained, Some(p)) => {
            loaded = DenoiserParams::load(p)?;
            if loaded.arch != spec.arch()? {
                return Err(Error::InvalidArgument(format!(
                    "weights have arch [{}], config describes [{}]",
                    loaded.arch,
                    spec.arch()?
                ))
                .into());
            }
            &loaded
        }
        (SweepMode::Trained, None) => {
            return Err(Error::InvalidArgument("--model is required outside oracle mode".into()).into())
        }
    };
    let labels = sample_labels(&spec, n);
    let samples = generate(eps_model, &cs, &sc, n, dim, labels.as_deref())?;
    write_samples_csv(dir.join("samples.csv"), &samples)?;
    dump_images(&spec, &samples, &dir, "sample")?;
    let report = score(&spec, &ctx, spec.metric(), &samples, seed)?;
    println!("{} = {}", report.name, report.value);
    Ok(())
}

fn dump_images(spec: &SweepSpec, samples: &schedlab::numeric::Tensor, dir: &Path, stem: &str) -> CliResult {
    if let Some(side) = spec.dataset.kind.image_side() {
        for i in 0..samples.rows().min(PGM_DUMPS) {
            write_pgm(dir.join(format!("{stem}_{i:03}.pgm")), samples.row(i), side)?;
        }
    }
    Ok(())
}

fn cmd_sweep(cfg: &ConfigArgs, check: Option<f64>, save_samples: bool, common: &Common) -> CliResult {
    let spec = load_spec(cfg, common)?;
    let dir = prepare_dir(&common.out_dir)?;
    write_resolved_config(dir.join("resolved.toml"), &spec)?;
    let ctx = SweepContext::new(&spec)?;
    let result = run_sweep_with(&spec, &ctx, |i, j, out| {
        if save_samples {
            write_samples_csv(dir.join(format!("samples_{i}_{j}.csv")), &out.samples)?;
        }
        Ok(())
    })?;
    write_sweep_csv(dir.join("sweep.csv"), &result)?;
    for r in &result.rows {
        match &r.status {
            CellStatus::Ok => println!("{} b={} {}={:.6}", r.schedule, r.scale, result.metric, r.metric),
            CellStatus::Failed(m) => eprintln!("{} b={} failed: {m}", r.schedule, r.scale),
        }
    }
    if result.failures() > 0 {
        return Err(Error::Degenerate(format!("{} sweep cell(s) failed", result.failures())).into());
    }
    if let Some(max) = check {
        let bad: Vec<String> = result
            .rows
            .iter()
            .filter(|r| r.metric > max)
            .map(|r| format!("{} b={} ({})", r.schedule, r.scale, r.metric))
            .collect();
        if !bad.is_empty() {
            return Err(Failure::Check(format!("{} above {max}: {}", result.metric, bad.join("; "))));
        }
    }
    Ok(())
}
