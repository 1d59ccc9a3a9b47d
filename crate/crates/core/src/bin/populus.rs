use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde_json::json;

use populus::analysis::{self, attack_demo};
use populus::bench::{self, Mode, Workload};
use populus::diskstore::{Access, DiskImage, DiskOptions};
use populus::keymgr::MasterKey;
use populus::keystream::{derive_hash_key, PrnStream};
use populus::sectorcipher::{Sector, SECTOR_BYTES};

/// Sector-level disk encryption with single-use matrix keys.
#[derive(Parser)]
#[command(name = "populus", version)]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an encrypted image.
    Init(InitArgs),
    /// Encrypt up to 512 bytes from a file into one sector.
    Write(WriteArgs),
    /// Decrypt one sector into a 512-byte file.
    Read(ReadArgs),
    /// Benchmark throughput and operation counts.
    Bench(BenchArgs),
    /// Estimate energy savings from a measured trace.
    Ge(GeArgs),
    /// Run the linear key-recovery attack against one sector key.
    AttackDemo(AttackArgs),
    /// Evaluate the attack probability bounds.
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct ImageArgs {
    #[arg(long)]
    image: PathBuf,
    /// File whose bytes are the user key.
    #[arg(long)]
    key_file: PathBuf,
    /// Skip fsync between write steps.
    #[arg(long)]
    no_sync: bool,
}

impl ImageArgs {
    fn options(&self) -> DiskOptions {
        DiskOptions { sync: !self.no_sync }
    }
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    image: ImageArgs,
    /// Number of 512-byte sectors.
    #[arg(long)]
    sectors: u64,
    /// RT-PRN pool size d (even); allows d/2 writes.
    #[arg(long)]
    pool: u64,
}

#[derive(Args)]
struct WriteArgs {
    #[command(flatten)]
    image: ImageArgs,
    #[arg(long)]
    sector: u64,
    /// Input file of at most 512 bytes; shorter input is zero-padded.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct ReadArgs {
    #[command(flatten)]
    image: ImageArgs,
    #[arg(long)]
    sector: u64,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Populus,
    AesBaseline,
    None,
    Dense,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Populus => Mode::Populus,
            ModeArg::AesBaseline => Mode::AesBaseline,
            ModeArg::None => Mode::None,
            ModeArg::Dense => Mode::Dense,
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    sectors: u64,
    /// Modes to run; repeat for several.
    #[arg(long, value_enum, default_values_t = [ModeArg::Populus, ModeArg::AesBaseline])]
    mode: Vec<ModeArg>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench")]
    workload: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GeArgs {
    /// Trace CSV with columns i,conf,EC_j,ET_j and an SP row.
    #[arg(long)]
    trace: PathBuf,
    /// Smallest accepted denominator magnitude.
    #[arg(long, default_value_t = bench::DEFAULT_GE_EPSILON)]
    epsilon: f64,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, default_value_t = 64)]
    pairs: usize,
    /// Draw a fresh temporary key for every encryption, as in normal use.
    #[arg(long)]
    rotate: bool,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 80.0)]
    t_log2: f64,
    #[arg(long, default_value_t = 80.0)]
    theta_log2: f64,
    /// Also report the tail and union bound at r = 2^R pairs.
    #[arg(long)]
    r_log2: Option<f64>,
}

enum Failure {
    Usage(String),
    Runtime(populus::Error),
}

impl From<populus::Error> for Failure {
    fn from(e: populus::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult = Result<(), Failure>;

fn read_key(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Usage(format!("cannot read key file {}: {e}", path.display())))
}

fn emit(json: bool, value: serde_json::Value, text: impl FnOnce() -> String) {
    if json {
        println!("{value}");
    } else {
        println!("{}", text());
    }
}

fn init(args: &InitArgs, json: bool) -> CliResult {
    let key = read_key(&args.image.key_file)?;
    let img = DiskImage::init(&args.image.image, &key, args.sectors, args.pool, args.image.options())?;
    emit(
        json,
        json!({"image": img.path(), "sectors": img.sector_count(), "pool": img.pool_size(), "writes_available": img.remaining_writes()}),
        || {
            format!(
                "initialized {} with {} sectors, pool {} ({} writes)",
                img.path().display(),
                img.sector_count(),
                img.pool_size(),
                img.remaining_writes()
            )
        },
    );
    Ok(())
}

fn write(args: &WriteArgs, json: bool) -> CliResult {
    let key = read_key(&args.image.key_file)?;
    let data = fs::read(&args.input)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.input.display())))?;
    if data.len() > SECTOR_BYTES {
        return Err(Failure::Usage(format!("{} holds {} bytes; a sector holds {SECTOR_BYTES}", args.input.display(), data.len())));
    }
    let mut img = DiskImage::open_with(&args.image.image, &key, Access::ReadWrite, args.image.options())?;
    img.write_sector(args.sector, &Sector::from_slice(&data))?;
    emit(json, json!({"sector": args.sector, "j": img.recorded_j(args.sector)?, "next_j": img.next_j()}), || {
        format!("wrote sector {} ({} writes left)", args.sector, img.remaining_writes())
    });
    Ok(())
}

fn read(args: &ReadArgs, json: bool) -> CliResult {
    let key = read_key(&args.image.key_file)?;
    let img = DiskImage::open_with(&args.image.image, &key, Access::ReadOnly, args.image.options())?;
    let sector = img.read_sector(args.sector)?;
    fs::write(&args.output, sector.to_bytes())?;
    emit(json, json!({"sector": args.sector, "out": args.output}), || {
        format!("read sector {} into {}", args.sector, args.output.display())
    });
    Ok(())
}

fn run_bench(args: &BenchArgs, json: bool) -> CliResult {
    let mut rows = Vec::new();
    for &m in &args.mode {
        let w = Workload { seed: args.seed, ..Workload::new(args.workload.clone(), args.sectors, m.into()) };
        rows.extend(bench::run_bench_threads(&w, args.threads)?);
    }
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    if json {
        bench::write_reports_json(&mut out, &rows)?;
        writeln!(out)?;
    } else {
        bench::write_reports_csv(&mut out, &rows)?;
    }
    Ok(())
}

fn ge(args: &GeArgs, json: bool) -> CliResult {
    let file = fs::File::open(&args.trace)
        .map_err(|e| Failure::Usage(format!("cannot open {}: {e}", args.trace.display())))?;
    let trace = bench::parse_energy_csv(file)?;
    let result = bench::compute_ge_with(&trace, args.epsilon)?;
    let stdout = io::stdout().lock();
    if json {
        bench::write_ge_json(stdout, &result)?;
        println!();
    } else {
        bench::write_ge_csv(stdout, &result)?;
        let (lo, hi) = bench::REFERENCE_GE_RANGE;
        eprintln!(
            "reference: SP = {} mW, mean GE {:.0}-{:.0}% on device (not reproduced)",
            bench::REFERENCE_IDLE_POWER_W * 1e3,
            lo * 100.0,
            hi * 100.0
        );
    }
    Ok(())
}

fn attack(args: &AttackArgs, json: bool) -> CliResult {
    let mut rng = StdRng::seed_from_u64(args.seed);
    let pool = 2 * (args.pairs as u64 + 2);
    let mut outcomes = Vec::with_capacity(args.trials);
    for trial in 0..args.trials {
        let stream = PrnStream::new(derive_hash_key(format!("attack-demo/{}/{trial}", args.seed).as_bytes())?);
        let master = MasterKey::generate(&stream);
        outcomes.push(attack_demo(&master, &stream, pool, args.pairs, args.rotate, &mut rng)?);
    }
    let predicted = outcomes.iter().filter(|o| o.predicted()).count();
    emit(
        json,
        json!({
            "pairs": args.pairs,
            "rotate": args.rotate,
            "trials": args.trials,
            "predicted": predicted,
            "mismatched_words": outcomes.iter().map(|o| o.mismatched_words).collect::<Vec<_>>(),
        }),
        || {
            let keys = if args.rotate { "fresh key per write" } else { "one fixed key" };
            format!(
                "{keys}: recovered map predicted the held-out ciphertext in {predicted}/{} trials",
                args.trials
            )
        },
    );
    Ok(())
}

fn bounds(args: &BoundsArgs, json: bool) -> CliResult {
    let v = analysis::theorem_check(args.t_log2.exp2(), args.theta_log2.exp2())?;
    let mut doc = json!({
        "t_log2": args.t_log2,
        "theta_log2": args.theta_log2,
        "epsilon_log2": v.epsilon_log2,
        "meets_threshold": v.meets_threshold,
        "threshold_log2": analysis::EPSILON_LOG2_THRESHOLD,
    });
    let mut lines = vec![format!(
        "t = 2^{}, θ = 2^{}: log2 ε = {:.4} ({} 2^{})",
        args.t_log2,
        args.theta_log2,
        v.epsilon_log2,
        if v.meets_threshold { "below" } else { "NOT below" },
        analysis::EPSILON_LOG2_THRESHOLD
    )];
    if let Some(r_log2) = args.r_log2 {
        let r = r_log2.exp2();
        let tail = analysis::event_probability(r);
        let union = analysis::union_bound(args.theta_log2.exp2(), r)?;
        doc["r_log2"] = r_log2.into();
        doc["event_probability_log2"] = tail.into();
        doc["union_bound_log2"] = union.into();
        lines.push(format!("r = 2^{r_log2}: log2 P(64 pairs share a key) = {tail:.4}, union bound {union:.4}"));
    }
    emit(json, doc, || lines.join("\n"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    let result = match &cli.command {
        Command::Init(a) => init(a, json),
        Command::Write(a) => write(a, json),
        Command::Read(a) => read(a, json),
        Command::Bench(a) => run_bench(a, json),
        Command::Ge(a) => ge(a, json),
        Command::AttackDemo(a) => attack(a, json),
        Command::Bounds(a) => bounds(a, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            if json {
                println!("{}", json!({"error": msg, "kind": "Usage"}));
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            if json {
                println!("{}", json!({"error": e.to_string(), "kind": e.kind()}));
            }
            ExitCode::from(3)
        }
    }
}
