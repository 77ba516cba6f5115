//! `chargecim`: single MVMs, transfer curves, SQNR/energy sweeps and
//! quantized inference on the simulated macro.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chargecim::adc::{compute_dnl_inl, load_nonlinearity_csv, matched_gain, measured_shape_inl, NonIdealityProfile};
use chargecim::analysis::{
    fig2a_grid, fig2b_grid, frontier_sweep, sweep_max, transfer_sweep, trial_rng, write_frontier_csv,
    write_transfer_csv, FrontierSummary, GridPoint, TrialConfig,
};
use chargecim::config::{load_config, MacroConfig, Scheme, SchemeSpec};
use chargecim::energy::EnergyParams;
use chargecim::nn::network::{labels_from_tensor, samples_from_tensor};
use chargecim::nn::{digits, integer_reference, run_network, Network, Tensor};
use chargecim::scheme::{full_precision_profile, MvmEngine};
use chargecim::Exact;
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::Ratio;
use rand::Rng;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "chargecim", version, about = "Charge-domain compute-in-memory macro simulator")]
struct Cli {
    /// Macro config file; defaults to the built-in geometry.
    #[arg(long, global = true, env = "CHARGECIM_CONFIG")]
    config: Option<PathBuf>,

    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one (tiled) matrix-vector product.
    Mvm(MvmArgs),
    /// Sweep Σ X with uniform weights and characterize the ADC transfer.
    Transfer(TransferArgs),
    /// SQNR and energy over a scheme / N / ADC-level grid.
    Sweep(SweepArgs),
    /// Quantized inference on mapped macros.
    Infer(InferArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProfileName {
    Ideal,
    /// Measured-shape INL, 0.4 LSB noise, matched gain.
    #[value(name = "paper", alias = "measured")]
    Measured,
}

#[derive(Args, Debug)]
struct AdcArgs {
    /// Starting ADC profile.
    #[arg(long, value_enum, default_value = "ideal")]
    profile: ProfileName,
    /// ADC quantization levels.
    #[arg(long)]
    levels: Option<u64>,
    /// Code-domain noise sigma in LSB.
    #[arg(long)]
    noise: Option<f64>,
    /// Pre-ADC gain, an integer or `num/den` in [1, 4].
    #[arg(long, value_parser = parse_gain)]
    gain: Option<Ratio<i64>>,
    /// Nonlinearity table (`code,dnl_lsb,inl_lsb` CSV).
    #[arg(long)]
    inl_file: Option<PathBuf>,
    /// Use the measured-shape INL table.
    #[arg(long)]
    measured_inl: bool,
}

#[derive(Args, Debug)]
struct MvmArgs {
    #[arg(long, value_enum, default_value = "bp")]
    scheme: SchemeName,
    /// Rows per analog conversion; defaults to the slice height.
    #[arg(long)]
    rows: Option<usize>,
    /// Vector length when operands are given as constants or drawn at random.
    #[arg(long)]
    k: Option<usize>,
    /// Input digits, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["all_x", "x_file"])]
    x: Option<Vec<u32>>,
    /// Every input digit set to this value.
    #[arg(long, conflicts_with = "x_file")]
    all_x: Option<u32>,
    /// Input tensor file.
    #[arg(long)]
    x_file: Option<PathBuf>,
    /// Weights, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with_all = ["all_w", "w_file"])]
    w: Option<Vec<i32>>,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "w_file")]
    all_w: Option<i32>,
    #[arg(long)]
    w_file: Option<PathBuf>,
    /// Draw missing operands uniformly from the seed.
    #[arg(long)]
    random: bool,
    /// Weights are signed and go through the offset mapping.
    #[arg(long)]
    signed: bool,
    /// ADC resolves every partial sum exactly.
    #[arg(long, conflicts_with_all = ["levels", "noise", "gain", "inl_file", "measured_inl"])]
    ideal: bool,
    #[command(flatten)]
    adc: AdcArgs,
    /// Also write the result as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SchemeName {
    Bp,
    Wbs,
    Bs,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Scheme {
        match s {
            SchemeName::Bp => Scheme::Bp,
            SchemeName::Wbs => Scheme::Wbs,
            SchemeName::Bs => Scheme::Bs,
        }
    }
}

#[derive(Args, Debug)]
struct TransferArgs {
    /// Uniform stored weight code.
    #[arg(long, default_value_t = 15)]
    weight_code: u32,
    /// First Σ X of the sweep.
    #[arg(long, default_value_t = 0)]
    from: u32,
    /// Last Σ X of the sweep; defaults to full scale.
    #[arg(long)]
    to: Option<u32>,
    #[arg(long, default_value_t = 1)]
    step: u32,
    /// Conversions per sweep point.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[command(flatten)]
    adc: AdcArgs,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Figure {
    #[value(name = "2a")]
    A,
    #[value(name = "2b")]
    B,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Preset grid: `2a` (N sweep at 64 levels) or `2b` (level sweep at N = 144).
    #[arg(long, value_enum)]
    fig: Option<Figure>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["bp", "wbs", "bs"])]
    schemes: Vec<SchemeName>,
    /// Rows per conversion, comma separated.
    #[arg(long = "n", value_delimiter = ',')]
    n: Vec<usize>,
    /// ADC levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<u64>,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Dot-product length; defaults to a 3×3×16 kernel (144).
    #[arg(long)]
    k: Option<usize>,
    /// ADC noise in LSB.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Frontier CSV destination.
    #[arg(long)]
    out: PathBuf,
    /// Also write a JSON summary with the full configuration.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Model JSON; the bundled digit classifier when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Input tensor, one sample per row.
    #[arg(long, requires = "labels")]
    inputs: Option<PathBuf>,
    /// Label tensor.
    #[arg(long, requires = "inputs")]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "paper")]
    profile: ProfileName,
    /// Override the profile's noise sigma (LSB).
    #[arg(long)]
    noise: Option<f64>,
    /// Write the bundled model and data into this directory and exit.
    #[arg(long, exclusive = true)]
    export_bundled: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<chargecim::Error> for Failure {
    fn from(e: chargecim::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn parse_gain(s: &str) -> Result<Ratio<i64>, String> {
    let parse = |t: &str| t.trim().parse::<i64>().map_err(|e| format!("bad gain `{s}`: {e}"));
    let g = match s.split_once('/') {
        Some((n, d)) => {
            let d = parse(d)?;
            if d == 0 {
                return Err("gain denominator is zero".into());
            }
            Ratio::new(parse(n)?, d)
        }
        None => Ratio::from_integer(parse(s)?),
    };
    Ok(g)
}

/// Everything a result file needs to be regenerated.
struct Provenance {
    command: &'static str,
    args: String,
    seed: u64,
    cfg: MacroConfig,
}

impl Provenance {
    fn comments(&self, profile: Option<&NonIdealityProfile>) -> Vec<String> {
        let mut c = vec![
            format!("chargecim {} {}", self.command, env!("CARGO_PKG_VERSION")),
            format!("args: {}", self.args),
            format!("seed: {}", self.seed),
        ];
        c.extend(self.cfg.to_config_string().lines().map(|l| format!("config: {l}")));
        if let Some(p) = profile {
            c.push(format!("profile: {}", serde_json::to_string(p).expect("profile serializes")));
        }
        c
    }

    fn json(&self) -> serde_json::Value {
        json!({
            "command": self.command,
            "args": self.args,
            "seed": self.seed,
            "config": self.cfg.to_config_string(),
        })
    }
}

/// Command-line arguments minus the global and output-path flags, which the
/// header records separately or which do not affect results.
fn echoed_args() -> String {
    let skip = ["--config", "--seed", "--out", "--json"];
    let mut out = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if skip.contains(&a.as_str()) {
            args.next();
        } else if !skip.iter().any(|s| a.starts_with(&format!("{s}="))) {
            out.push(a);
        }
    }
    out.join(" ")
}

/// Writes report lines to stdout; a closed pipe ends output quietly.
fn emit(lines: &[String]) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    for l in lines {
        match writeln!(out, "{l}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            r => r.map_err(|e| Failure::Runtime(e.to_string()))?,
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn build_profile(a: &AdcArgs, default_gain: Option<Ratio<i64>>) -> CliResult<NonIdealityProfile> {
    let mut p = match a.profile {
        ProfileName::Ideal => NonIdealityProfile::ideal(chargecim::adc::DEFAULT_LEVELS)?,
        ProfileName::Measured => NonIdealityProfile::measured(),
    };
    if let Some(l) = a.levels {
        if a.profile == ProfileName::Measured && p.inl().is_some() {
            p = p.with_inl(None)?;
        }
        p = p.with_levels(l)?;
    }
    if let Some(g) = a.gain.or(default_gain) {
        p = p.with_gain(g)?;
    }
    if let Some(s) = a.noise {
        p = p.with_noise(s)?;
    }
    if a.measured_inl {
        let levels = p.resolution_levels() as usize;
        p = p.with_inl(Some(measured_shape_inl(levels)))?;
    }
    if let Some(path) = &a.inl_file {
        p = p.with_tables(load_nonlinearity_csv(path)?)?;
    }
    Ok(p)
}

fn load_macro_config(cli: &Cli) -> CliResult<MacroConfig> {
    match &cli.config {
        Some(path) => Ok(load_config(path)?),
        None => Ok(MacroConfig::default()),
    }
}

fn operand<T: Copy + std::str::FromStr>(
    name: &str,
    list: &Option<Vec<T>>,
    all: Option<T>,
    file: &Option<PathBuf>,
    k: Option<usize>,
) -> CliResult<Option<Vec<T>>>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = list {
        return Ok(Some(v.clone()));
    }
    if let Some(path) = file {
        return Ok(Some(Tensor::<T>::load(path)?.into_data()));
    }
    match (all, k) {
        (Some(v), Some(k)) => Ok(Some(vec![v; k])),
        (Some(_), None) => usage(format!("--all-{name} needs a length (--k)")),
        (None, _) => Ok(None),
    }
}

fn cmd_mvm(cli: &Cli, a: &MvmArgs) -> CliResult<()> {
    let cfg = load_macro_config(cli)?;
    let rows = a.rows.unwrap_or(cfg.rows_per_slice);
    let spec = SchemeSpec::new(a.scheme.into(), cfg.dac_bits(), cfg.slices_per_group as u32)?;
    let explicit = a.x.as_ref().map(Vec::len).or(a.w.as_ref().map(Vec::len));
    let k = a.k.or(explicit).or(Some(rows));
    let mut x = operand("x", &a.x, a.all_x, &a.x_file, k)?;
    let mut w = operand("w", &a.w, a.all_w, &a.w_file, k)?;
    let mut rng = trial_rng(cli.seed, 0);
    let len = x.as_ref().map(Vec::len).or(w.as_ref().map(Vec::len)).unwrap_or(k.unwrap_or(rows));
    let x_top = (1u32 << spec.model_input_bits) - 1;
    let w_range = if a.signed {
        let h = 1i32 << (spec.model_weight_bits - 1);
        -h..h
    } else {
        0..(1i32 << spec.model_weight_bits)
    };
    if x.is_none() {
        if !a.random {
            return usage("no inputs: give --x, --all-x, --x-file or --random");
        }
        x = Some((0..len).map(|_| rng.gen_range(0..=x_top)).collect());
    }
    if w.is_none() {
        if !a.random {
            return usage("no weights: give --w, --all-w, --w-file or --random");
        }
        w = Some((0..len).map(|_| rng.gen_range(w_range.clone())).collect());
    }
    let (x, w) = (x.unwrap(), w.unwrap());
    if x.len() != w.len() {
        return usage(format!("{} inputs but {} weights", x.len(), w.len()));
    }
    if let Some(&bad) = w.iter().find(|v| !w_range.contains(v)) {
        return usage(format!("weight {bad} outside {}..{}", w_range.start, w_range.end));
    }
    let profile = if a.ideal {
        full_precision_profile(rows, &spec)
    } else {
        build_profile(&a.adc, None)?
    };
    let engine = MvmEngine::<Exact>::new(spec, rows, &cfg, &profile)?;
    let offset = if a.signed { 1i64 << (spec.model_weight_bits - 1) } else { 0 };
    let unsigned: Vec<u32> = w.iter().map(|&v| (v as i64 + offset) as u32).collect();
    let input_sum: i64 = x.iter().map(|&v| v as i64).sum();
    let r = engine.tile_mvm(&x, &unsigned, &mut rng)?;
    let output = r.output() - offset * input_sum;
    let exact: i64 = x.iter().zip(&w).map(|(&a, &b)| a as i64 * b as i64).sum();
    let step = chargecim::Scalar::to_f64(&r.step);
    let error = r.error();
    let lines = [
        format!("scheme: {}", spec.scheme),
        format!("rows: {rows}"),
        format!("k: {}", x.len()),
        format!("levels: {}", profile.resolution_levels()),
        format!("code_sum: {}", r.code_sum),
        format!("output: {output}"),
        format!("exact: {exact}"),
        format!("error: {error}"),
        format!("error_lsb: {}", error / step),
        format!("conversions: {}", r.conversions),
        format!("saturations: {}", r.saturations),
        format!("energy_units: {}", r.energy_units),
    ];
    emit(&lines)?;
    if let Some(path) = &a.json {
        let prov = Provenance {
            command: "mvm",
            args: echoed_args(),
            seed: cli.seed,
            cfg,
        };
        write_json(
            path,
            &json!({
                "provenance": prov.json(),
                "profile": profile,
                "result": {
                    "scheme": spec.scheme,
                    "rows": rows,
                    "k": x.len(),
                    "code_sum": r.code_sum.to_string(),
                    "output": output,
                    "exact": exact,
                    "error": error,
                    "error_lsb": error / step,
                    "conversions": r.conversions,
                    "saturations": r.saturations,
                    "energy_units": r.energy_units,
                },
            }),
        )?;
    }
    Ok(())
}

fn cmd_transfer(cli: &Cli, a: &TransferArgs) -> CliResult<()> {
    let cfg = load_macro_config(cli)?;
    cfg.validate()?;
    let top = a.to.unwrap_or_else(|| sweep_max(&cfg));
    if a.step == 0 || a.from > top {
        return usage(format!("empty sweep {}..={top} step {}", a.from, a.step));
    }
    let profile = build_profile(&a.adc, Some(matched_gain()))?;
    let inputs: Vec<u32> = (a.from..=top).step_by(a.step as usize).collect();
    let points = transfer_sweep(&cfg, &profile, a.weight_code, &inputs, a.repeats, cli.seed)?;
    let prov = Provenance {
        command: "transfer",
        args: echoed_args(),
        seed: cli.seed,
        cfg,
    };
    let mut buf = Vec::new();
    write_transfer_csv(&mut buf, &points, &prov.comments(Some(&profile)))?;

    let means: Vec<f64> = points.iter().map(|p| p.mean_code).collect();
    let sigma = points.iter().map(|p| p.std_code).sum::<f64>() / points.len() as f64;
    let saturated = points.iter().filter(|p| p.saturated > 0).count();
    let mut summary = vec![
        format!("points: {}", points.len()),
        format!("mean_sigma_lsb: {sigma:.4}"),
        format!("saturated_points: {saturated}"),
    ];
    match compute_dnl_inl(&means) {
        Ok(t) => {
            let (dlo, dhi) = t.dnl_range();
            let (ilo, ihi) = t.inl_range();
            summary.push(format!("dnl_lsb: min {dlo:.4} max {dhi:.4}"));
            summary.push(format!("inl_lsb: min {ilo:.4} max {ihi:.4}"));
        }
        Err(e) => summary.push(format!("dnl_lsb: unavailable ({e})")),
    }
    match &a.out {
        Some(path) => {
            write_file(path, &buf)?;
            emit(&summary)?;
        }
        None => {
            emit(&[String::from_utf8_lossy(&buf).trim_end().to_string()])?;
            for l in summary {
                eprintln!("{l}");
            }
        }
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> CliResult<()> {
    let cfg = load_macro_config(cli)?;
    let points: Vec<GridPoint> = match a.fig {
        Some(Figure::A) => fig2a_grid(),
        Some(Figure::B) => fig2b_grid(),
        None => a
            .schemes
            .iter()
            .flat_map(|&s| {
                a.n.iter().flat_map(move |&n| {
                    a.levels.iter().map(move |&levels| GridPoint {
                        scheme: s.into(),
                        n,
                        levels,
                    })
                })
            })
            .collect(),
    };
    if points.is_empty() {
        return usage("empty grid: give --fig or non-empty --n and --levels lists");
    }
    let tc = TrialConfig {
        trials: a.trials,
        seed: cli.seed,
        ..match a.k {
            Some(k) => TrialConfig {
                k,
                kernel: None,
                ..TrialConfig::default()
            },
            None => TrialConfig::default(),
        }
    };
    let profile = NonIdealityProfile::default().with_noise(a.noise)?;
    let params = EnergyParams::default();
    let rows = frontier_sweep(&points, &tc, &cfg, &profile, &params)?;
    let prov = Provenance {
        command: "sweep",
        args: echoed_args(),
        seed: cli.seed,
        cfg: cfg.clone(),
    };
    let mut comments = prov.comments(Some(&profile));
    comments.push(format!("trials: {} K: {}", tc.trials, tc.k));
    let mut buf = Vec::new();
    write_frontier_csv(&mut buf, &rows, &comments)?;
    write_file(&a.out, &buf)?;
    if let Some(path) = &a.json {
        let summary = FrontierSummary {
            macro_config: &cfg,
            trial_config: &tc,
            profile: &profile,
            energy: &params,
            rows: &rows,
        };
        write_json(path, &json!({ "provenance": prov.json(), "sweep": summary }))?;
    }
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{} N={} levels={} sqnr_db={:.3} energy_units={:.1}",
                r.scheme, r.n, r.levels, r.sqnr_db, r.energy_units
            )
        })
        .collect();
    emit(&lines)
}

fn cmd_infer(cli: &Cli, a: &InferArgs) -> CliResult<()> {
    if let Some(dir) = &a.export_bundled {
        digits::export_bundled(dir)?;
        return emit(&[format!("wrote bundled model to {}", dir.display())]);
    }
    if a.model.is_some() && a.inputs.is_none() {
        return usage("--model needs --inputs and --labels");
    }
    let net = match &a.model {
        Some(path) => Network::load(path)?,
        None => digits::load_bundled()?,
    };
    let (inputs, labels) = match (&a.inputs, &a.labels) {
        (Some(x), Some(y)) => (
            samples_from_tensor(&Tensor::<u32>::load(x)?),
            labels_from_tensor(&Tensor::<u32>::load(y)?),
        ),
        _ => digits::load_bundled_test_set()?,
    };
    let mut profile = match a.profile {
        ProfileName::Ideal => Network::ideal_profile(),
        ProfileName::Measured => NonIdealityProfile::measured(),
    };
    if let Some(s) = a.noise {
        profile = profile.with_noise(s)?;
    }
    let reference = integer_reference(&net, &inputs, &labels)?;
    let report = run_network(&net, &inputs, &labels, &profile, cli.seed)?;
    let matches = report.logits == reference.logits;
    let mut lines = vec![
        format!("model: {}", net.name()),
        format!("samples: {}", inputs.len()),
        format!("accuracy: {:.4}", report.accuracy),
        format!("reference_accuracy: {:.4}", reference.accuracy),
        format!("drop: {:.4}", reference.accuracy - report.accuracy),
        format!("matches_reference: {matches}"),
    ];
    for (layer, c) in net.layers().iter().zip(&report.clipping) {
        lines.push(format!(
            "layer {}: shift {} gain {} clipped {}/{}",
            layer.name(),
            layer.shift().unwrap_or(0),
            layer.gain().unwrap_or(1),
            c.clipped,
            c.activations
        ));
    }
    lines.push(format!("conversions: {}", report.conversions));
    lines.push(format!("saturations: {}", report.saturations));
    lines.push(format!("energy_units: {:.1}", report.energy_units));
    emit(&lines)?;
    if let Some(path) = &a.json {
        let prov = Provenance {
            command: "infer",
            args: echoed_args(),
            seed: cli.seed,
            cfg: net.config().clone(),
        };
        write_json(
            path,
            &json!({
                "provenance": prov.json(),
                "model": net.name(),
                "profile": profile,
                "reference_accuracy": reference.accuracy,
                "matches_reference": matches,
                "report": report,
            }),
        )?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Mvm(a) => cmd_mvm(&cli, a),
        Command::Transfer(a) => cmd_transfer(&cli, a),
        Command::Sweep(a) => cmd_sweep(&cli, a),
        Command::Infer(a) => cmd_infer(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
