#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qcars_core::analysis::{fit_exponential, fit_rabi, fit_ramsey, FitStatus};
use qcars_core::dac::{measured_response, response_curve, ReconstructionMode};
use qcars_core::orchestrator::{self, parse_config, parse_device, ExpType, Instrument, Manifest, SweepResult};
use qcars_core::readout::alias_fold;
use qcars_core::signal::SampleRate;
use qcars_core::sync::{jitter_histogram, measure_jitter, roundtrip_latency, JitterModel, LatencyConfig};
use qcars_core::{Error, FitResult64};

#[derive(Parser)]
#[command(name = "qcars", version, about = "Qubit control and readout chain simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment sweep from a config and a device file.
    Run(RunArgs),
    /// Write the DAC reconstruction response, analytic and simulated.
    Response(ResponseArgs),
    /// Fold an input frequency into the first Nyquist zone.
    Alias {
        #[arg(long)]
        fin: f64,
        #[arg(long)]
        fs: f64,
    },
    /// DAC-to-ADC loopback latency.
    Latency {
        #[arg(long, default_value_t = 8)]
        interp: usize,
        #[arg(long, default_value_t = 4)]
        decim: usize,
        #[arg(long, default_value_t = 192e6)]
        clock_hz: f64,
        #[arg(long)]
        no_mixers: bool,
    },
    /// Channel-to-channel jitter measurement.
    Jitter(JitterArgs),
    /// Fit a two-column data file.
    Fit(FitArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    device: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "QCARS_SEED", default_value_t = 0)]
    seed: u64,
    /// Replace inner_loop_count.
    #[arg(long)]
    shots_override: Option<u64>,
    /// Also write a gnuplot script for the sweep.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args)]
struct ResponseArgs {
    #[arg(long)]
    mode: ReconstructionMode,
    #[arg(long, default_value_t = 6.144e9)]
    fs: f64,
    #[arg(long)]
    fmax: f64,
    #[arg(long, default_value_t = 512)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args)]
struct JitterArgs {
    #[arg(long, default_value_t = 0.6)]
    sigma_ps: f64,
    #[arg(long, default_value_t = 4000)]
    samples: usize,
    #[arg(long, env = "QCARS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    /// Histogram CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    T1,
    Ramsey,
    Rabi,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long = "in")]
    input: PathBuf,
    /// Fitted-curve CSV; defaults to <input stem>_fit.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit a decay envelope on Rabi data.
    #[arg(long)]
    damped: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        let mut root = &e;
        while let Error::AtPoint { source, .. } = root {
            root = source;
        }
        match root {
            Error::Numerical(_) => Failure::Numerical(msg),
            Error::Io { .. } => Failure::Io(msg),
            _ => Failure::Usage(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Write through a temporary file in the target directory, then rename into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Failure::Io(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Failure::Io(e.to_string()))
}

fn rate(hz: f64) -> CliResult<SampleRate> {
    Ok(SampleRate::new(hz)?)
}

fn fit_for(exp: ExpType, r: &SweepResult) -> CliResult<FitResult64> {
    let y = r.aligned_signal()?;
    let x = r.axis();
    let us = || x.iter().map(|t| t * 1e-3).collect::<Vec<f64>>();
    Ok(match exp {
        ExpType::T1 => fit_exponential(&us(), &y)?,
        ExpType::Ramsey => fit_ramsey(&us(), &y)?,
        ExpType::TimeRabi | ExpType::PowerRabi => fit_rabi(&x, &y, false)?,
    })
}

fn cmd_run(a: &RunArgs) -> CliResult<()> {
    let mut cfg = parse_config(&read_input(&a.config)?)?;
    if let Some(n) = a.shots_override {
        cfg.inner_loop_count = n;
        cfg.validate()?;
    }
    let dev = parse_device(&read_input(&a.device)?)?;
    let plan = orchestrator::plan(&cfg)?;
    let result = orchestrator::run(&cfg, &plan, &dev, &Instrument::default(), a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| Failure::Io(format!("{}: {e}", a.out.display())))?;

    let axis_col = format!("axis_{}", result.axis_unit);
    let signal = result.aligned_signal().unwrap_or_else(|_| vec![f64::NAN; result.points.len()]);
    let rows = result.points.iter().zip(&signal).map(|(p, s)| {
        vec![
            p.index.to_string(),
            p.axis_value.to_string(),
            p.i_mean.to_string(),
            p.q_mean.to_string(),
            s.to_string(),
            p.p_excited.to_string(),
            p.shots.to_string(),
        ]
    });
    let header = ["index", axis_col.as_str(), "i_mean", "q_mean", "signal", "p_excited", "shots"];
    write_atomic(&a.out.join("sweep.csv"), &csv_bytes(&header, rows)?)?;

    let exp = cfg.experiment()?;
    let mut report = format!("exp_type={exp}\npoints={}\nseed={}\n", result.points.len(), a.seed);
    let mut failure = None;
    if cfg.loopback == 1 {
        for (k, d) in result.loopback_delays_ns.iter().enumerate() {
            let _ = writeln!(report, "loopback_delay_ns[{k}]={d}");
        }
    } else {
        match fit_for(exp, &result) {
            Ok(fit) => {
                report.push_str(&fit.to_string());
                if fit.status != FitStatus::Converged {
                    failure = Some(Failure::Numerical(format!("fit did not converge: status {:?}", fit.status)));
                }
            }
            Err(Failure::Usage(why)) => {
                let _ = writeln!(report, "fit=skipped\nreason={why}");
            }
            Err(f) => return Err(f),
        }
    }
    write_atomic(&a.out.join("fit.txt"), report.as_bytes())?;

    let manifest = Manifest::new(&cfg, &result);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Io(e.to_string()))?;
    write_atomic(&a.out.join("meta.json"), &json)?;

    if a.gnuplot {
        let script = format!(
            "set datafile separator ','\nset key autotitle columnhead\nset xlabel '{axis_col}'\nset ylabel 'signal'\nplot 'sweep.csv' using 2:5 with linespoints\n"
        );
        write_atomic(&a.out.join("sweep.gp"), script.as_bytes())?;
    }
    print!("{report}");
    failure.map_or(Ok(()), Err)
}

fn cmd_response(a: &ResponseArgs) -> CliResult<()> {
    let fs_rate = rate(a.fs)?;
    let curve = response_curve(fs_rate, a.mode, a.fmax, a.points)?;
    let mut rows = Vec::with_capacity(curve.points.len());
    for p in &curve.points {
        let (at, sim) = measured_response(p.freq_hz, fs_rate, a.mode, 1024)?;
        rows.push(vec![
            p.freq_hz.to_string(),
            p.magnitude.to_string(),
            p.magnitude_db().to_string(),
            p.phase_rad.to_string(),
            at.to_string(),
            sim.to_string(),
        ]);
    }
    let header = ["freq_hz", "magnitude", "magnitude_db", "phase_rad", "sim_freq_hz", "sim_magnitude"];
    write_atomic(&a.out, &csv_bytes(&header, rows)?)?;
    if a.gnuplot {
        let name = a.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let script = format!(
            "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'Hz'\nplot '{name}' using 1:2 with lines, '' using 5:6 with points\n"
        );
        write_atomic(&a.out.with_extension("gp"), script.as_bytes())?;
    }
    println!("mode={}\npoints={}\nout={}", a.mode, curve.points.len(), a.out.display());
    Ok(())
}

fn cmd_jitter(a: &JitterArgs) -> CliResult<()> {
    let jm = JitterModel { sigma_ps: a.sigma_ps, n_samples: a.samples, ..JitterModel::default() };
    let s = measure_jitter(&jm, a.seed)?;
    let h = jitter_histogram(&s, a.bins)?;
    // four standard errors of a sample standard deviation
    let half = 4.0 / (2.0 * (s.len() as f64 - 1.0)).sqrt();
    let (lo, hi) = (a.sigma_ps * (1.0 - half), a.sigma_ps * (1.0 + half));
    println!("samples={}\nmean_ps={}\nstd_ps={}", s.len(), h.mean, h.std);
    println!("bound_ps={lo}..{hi}\nwithin_bound={}", (lo..=hi).contains(&h.std));
    if let Some(out) = &a.out {
        let rows = h
            .bin_centers()
            .into_iter()
            .zip(&h.counts)
            .map(|(c, n)| vec![c.to_string(), n.to_string()]);
        write_atomic(out, &csv_bytes(&["center_ps", "count"], rows)?)?;
    }
    Ok(())
}

/// x and y columns of a fit input. Headers x/y, or a run's sweep.csv (axis_ns is converted to us).
fn read_series(path: &Path, time_model: bool) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let text = read_input(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let bad = |m: String| Failure::Usage(format!("{}: {m}", path.display()));
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    let xi = find(&["x", "t_us", "axis_ns", "axis_percent"]).unwrap_or(0);
    let yi = find(&["y", "signal"]).unwrap_or(1);
    let scale = if time_model && headers.get(xi).map(str::trim) == Some("axis_ns") { 1e-3 } else { 1.0 };
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .ok_or_else(|| bad(format!("row {} has no column {i}", line + 1)))?
                .trim()
                .parse()
                .map_err(|e| bad(format!("row {}: {e}", line + 1)))
        };
        x.push(num(xi)? * scale);
        y.push(num(yi)?);
    }
    Ok((x, y))
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    let (x, y) = read_series(&a.input, !matches!(a.model, Model::Rabi))?;
    let fit = match a.model {
        Model::T1 => fit_exponential(&x, &y)?,
        Model::Ramsey => fit_ramsey(&x, &y)?,
        Model::Rabi => fit_rabi(&x, &y, a.damped)?,
    };
    let out = a.out.clone().unwrap_or_else(|| {
        let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        a.input.with_file_name(format!("{stem}_fit.csv"))
    });
    let rows = x
        .iter()
        .zip(&y)
        .map(|(&xv, &yv)| vec![xv.to_string(), yv.to_string(), fit.eval(xv).to_string()]);
    write_atomic(&out, &csv_bytes(&["x", "y", "fit"], rows)?)?;
    print!("{fit}");
    if fit.status == FitStatus::Converged {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("fit did not converge: status {:?}", fit.status)))
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Response(a) => cmd_response(&a),
        Cmd::Alias { fin, fs } => {
            let (img, zone) = alias_fold(fin, rate(fs)?)?;
            println!("image_hz={img:e} zone={zone}");
            Ok(())
        }
        Cmd::Latency { interp, decim, clock_hz, no_mixers } => {
            let cfg = LatencyConfig {
                interp_factor: interp,
                decim_factor: decim,
                fpga_clock_hz: clock_hz,
                mixers_enabled: !no_mixers,
            };
            print!("{}", roundtrip_latency(&cfg)?);
            Ok(())
        }
        Cmd::Jitter(a) => cmd_jitter(&a),
        Cmd::Fit(a) => cmd_fit(&a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
