use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relscale_core::piecewise::{self, PiecewiseState};
use relscale_core::single_neuron::{self, SingleNeuronState};
use relscale_lab::config::{ModelKind, OutputFormat};
use relscale_lab::output::{self, metadata, write_meta};
use relscale_lab::run::{build_setup, record_schedule, run_setup, Model, RunOutput, RunStatus};
use relscale_lab::sweep::run_sweep;
use relscale_lab::{checks, ExperimentConfig, LabError, LabResult};
use serde_json::json;

#[derive(Parser)]
#[command(name = "relscale", version, about = "Gradient-flow experiments on relative layer scale")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set delta=-1`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent. A `.meta.json` sidecar is written next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["csv", "jsonl"])]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Single neuron on a fixture dataset.
    SingleNeuron {
        #[command(subcommand)]
        mode: NeuronMode,
    },
    /// Wide two-layer linear network.
    Wide {
        #[command(subcommand)]
        mode: FlowOnly,
    },
    /// Deep linear chain with a scalar head.
    Deep {
        #[command(subcommand)]
        mode: FlowOnly,
    },
    /// Two-layer piecewise-linear network on teacher-student data.
    Piecewise {
        #[command(subcommand)]
        mode: FlowOnly,
    },
    /// Grid over `tau_grid` x `delta_grid`, averaged over `seeds`.
    Sweep,
    /// Activation regions and their coloring for a trained 2-D piecewise network.
    Regions {
        /// Use the initialization instead. Fails for the symmetrized start, whose mirrored units share boundary lines.
        #[arg(long)]
        initial: bool,
    },
    /// Run the acceptance checks and print one line per check.
    Verify {
        /// Only these check ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Subcommand)]
enum NeuronMode {
    /// Closed-form trajectory of the hyperbolic-spherical coordinates.
    Exact,
    /// Numerical integration.
    Flow,
}

#[derive(Subcommand)]
enum FlowOnly {
    Flow,
}

fn load_config(common: &Common, model: Option<ModelKind>) -> LabResult<ExperimentConfig> {
    let mut overrides = Vec::new();
    if let Some(m) = model {
        let name = serde_json::to_value(m)?;
        overrides.push(format!("model=\"{}\"", name.as_str().unwrap_or_default()));
    }
    overrides.extend(common.set.iter().cloned());
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(f) = &common.format {
        overrides.push(format!("format=\"{f}\""));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("out={}", toml::Value::String(out.display().to_string())));
    }
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn sink(path: Option<&Path>) -> LabResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(cfg: &ExperimentConfig, status: Option<&RunStatus>, extra: serde_json::Value, write: impl FnOnce(&mut dyn Write) -> LabResult<()>) -> LabResult<()> {
    let path = cfg.out.as_ref().map(PathBuf::from);
    let mut w = sink(path.as_deref())?;
    write(&mut *w)?;
    w.flush()?;
    if let Some(p) = path {
        write_meta(&p, &metadata(cfg, status, extra))?;
    }
    Ok(())
}

fn finish_run(cfg: &ExperimentConfig, out: &RunOutput) -> LabResult<()> {
    let extra = json!({ "max_drift": out.max_drift, "initial_conserved": out.initial_conserved });
    emit(cfg, Some(&out.status), extra, |w| output::write_trajectory(out, cfg.format, w))?;
    if out.max_drift > cfg.drift_flag {
        eprintln!("warning: conservation drift {:.2e} exceeds {:.1e}", out.max_drift, cfg.drift_flag);
    }
    match &out.status {
        RunStatus::Complete => Ok(()),
        RunStatus::Failed(reason) => Err(LabError::Numerical(format!("{reason} (partial trajectory written)"))),
    }
}

fn flow(common: &Common, model: ModelKind) -> LabResult<()> {
    let cfg = load_config(common, Some(model))?;
    let setup = build_setup(&cfg, cfg.seed, cfg.tau, cfg.delta)?;
    let out = run_setup(&setup, &cfg, cfg.tau)?;
    finish_run(&cfg, &out)
}

fn exact(common: &Common) -> LabResult<()> {
    let cfg = load_config(common, Some(ModelKind::SingleNeuron))?;
    let setup = build_setup(&cfg, cfg.seed, cfg.tau, cfg.delta)?;
    let Model::SingleNeuron { data, rates, beta_star } = &setup.model else {
        unreachable!("single-neuron setup");
    };
    if (data.gram() - relscale_core::DenseMatrix::identity(data.d(), data.d())).amax() > 1e-12 {
        return Err(LabError::Config("closed-form trajectories need a whitened fixture".into()));
    }
    let s0 = SingleNeuronState::from_flat(&setup.y0, *rates)?;
    let columns = ["t", "mu", "phi", "a", "teacher_overlap"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for t in record_schedule(cfg.t_end * cfg.time_factor(cfg.tau), cfg.records) {
        let e = single_neuron::exact_solution(&s0, beta_star, t)?;
        rows.push(vec![t, e.coords.mu, e.coords.phi, e.a, e.omega]);
    }
    let out = RunOutput { columns, rows, states: vec![], status: RunStatus::Complete, initial_conserved: vec![cfg.delta], max_drift: 0.0 };
    emit(&cfg, Some(&out.status), json!({ "basin": format!("{:?}", single_neuron::classify_basin(&s0, beta_star)) }), |w| {
        output::write_trajectory(&out, cfg.format, w)
    })
}

fn sweep(common: &Common) -> LabResult<()> {
    let cfg = load_config(common, None)?;
    let result = run_sweep(&cfg)?;
    let failed: usize = result.cells.iter().map(|c| c.failures.len()).sum();
    let extra = json!({ "failures": result.cells.iter().flat_map(|c| c.failures.clone()).collect::<Vec<_>>() });
    emit(&cfg, None, extra, |w| output::write_sweep(&result, cfg.format, w))?;
    if failed > 0 {
        eprintln!("warning: {failed} runs failed and were excluded from the means");
    }
    Ok(())
}

fn regions(common: &Common, initial: bool) -> LabResult<()> {
    let cfg = load_config(common, Some(ModelKind::Piecewise))?;
    if cfg.d != 2 {
        return Err(LabError::Config(format!("regions need d = 2, got {}", cfg.d)));
    }
    let setup = build_setup(&cfg, cfg.seed, cfg.tau, cfg.delta)?;
    let rates = relscale_core::Rates::new(cfg.eta_a, cfg.eta_w)?;
    let flat = if !initial {
        let out = run_setup(&setup, &cfg, cfg.tau)?;
        if let RunStatus::Failed(reason) = out.status {
            return Err(LabError::Numerical(reason));
        }
        out.states.last().cloned().unwrap_or(setup.y0)
    } else {
        setup.y0
    };
    let state = PiecewiseState::from_flat(cfg.h, 2, &flat, cfg.gamma, rates)?;
    let regs = piecewise::enumerate_activation_regions_2d(&state)?;
    let colors = piecewise::two_coloring(&regs).map_err(|e| LabError::Invariant(e.to_string()))?;
    emit(&cfg, None, json!({ "regions": regs.len() }), |w| match cfg.format {
        OutputFormat::Csv => {
            let mut writer = csv::Writer::from_writer(w);
            writer.write_record(["start", "end", "active", "color", "pattern", "predictor_x", "predictor_y"])?;
            for (r, c) in regs.iter().zip(&colors) {
                let pattern: String = r.pattern.iter().map(|&on| if on { '1' } else { '0' }).collect();
                writer.write_record([
                    format!("{:?}", r.angular_interval.0),
                    format!("{:?}", r.angular_interval.1),
                    r.active_count().to_string(),
                    c.to_string(),
                    pattern,
                    format!("{:?}", r.predictor[0]),
                    format!("{:?}", r.predictor[1]),
                ])?;
            }
            writer.flush()?;
            Ok(())
        }
        OutputFormat::Jsonl => {
            for (r, c) in regs.iter().zip(&colors) {
                let record = json!({
                    "start": r.angular_interval.0,
                    "end": r.angular_interval.1,
                    "active": r.active_count(),
                    "color": c,
                    "pattern": r.pattern,
                    "predictor": [r.predictor[0], r.predictor[1]],
                });
                serde_json::to_writer(&mut *w, &record)?;
                writeln!(w)?;
            }
            Ok(())
        }
    })
}

fn verify(only: &[u8]) -> LabResult<()> {
    let ids: Vec<u8> = if only.is_empty() { (1..=11).collect() } else { only.to_vec() };
    let mut failed = Vec::new();
    for id in ids {
        let outcome = checks::run_check(id).ok_or_else(|| LabError::Config(format!("no check with id {id}")))?;
        println!("{}", outcome.line());
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(LabError::Invariant(format!("checks failed: {failed:?}")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SingleNeuron { mode: NeuronMode::Exact } => exact(&cli.common),
        Command::SingleNeuron { mode: NeuronMode::Flow } => flow(&cli.common, ModelKind::SingleNeuron),
        Command::Wide { mode: FlowOnly::Flow } => flow(&cli.common, ModelKind::Wide),
        Command::Deep { mode: FlowOnly::Flow } => flow(&cli.common, ModelKind::Deep),
        Command::Piecewise { mode: FlowOnly::Flow } => flow(&cli.common, ModelKind::Piecewise),
        Command::Sweep => sweep(&cli.common),
        Command::Regions { initial } => regions(&cli.common, *initial),
        Command::Verify { only } => verify(only),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
