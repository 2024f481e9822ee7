use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use xshark::analyzer::{
    analyze, apply_and_verify, plan_schedule, write_bundle, AnalysisError, Baseline, Bundle, ReportOptions,
    StallTotals, Suggestion, Verification,
};
use xshark::debugger::Breakpoint;
use xshark::recorder::{read_trace, record, write_trace, ExecutionTrace, RecordOptions, TraceFormat, WindowEnd};
use xshark::replayer::{replay, replay_with_schedule, ReplayError, ReplayOptions};
use xshark::sim::{PerfEventLog, RunStatus, SimConfig, Simulator};
use xshark::workloads::{
    assemble, disassemble, AllGatherParams, CheckerboardParams, Kernel, RandomParams, StarvationParams,
};

use crate::{Cli, CliError, Command, FormatArg, GenArgs, Workload};

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new("IO", format!("{}: {e}", path.display()), 1)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn emit<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("output serializes"));
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    match path {
        None => Ok(SimConfig::default()),
        Some(p) => SimConfig::from_json(&read_text(p)?)
            .map_err(|e| CliError::new("BAD_CONFIG", format!("{}: {e}", p.display()), 1)),
    }
}

/// Reads a program file, or assembles it when it is `.xasm` source.
fn load_program(path: &Path) -> Result<Kernel> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "xasm") {
        assemble(&text).map_err(|e| CliError::new("ASM", format!("{}:{e}", path.display()), 1))
    } else {
        Kernel::from_json(&text).map_err(|e| CliError::new("BAD_PROGRAM", format!("{}: {e}", path.display()), 1))
    }
}

fn load_trace(path: &Path) -> Result<ExecutionTrace> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_trace(BufReader::new(file)).map_err(|e| CliError::new(e.code(), format!("{}: {e}", path.display()), 1))
}

fn load_events(path: &Path) -> Result<PerfEventLog> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    PerfEventLog::read_jsonl(BufReader::new(file))
        .map_err(|e| CliError::new("BAD_EVENTS", format!("{}: {e}", path.display()), 1))
}

fn save_events(path: &Path, log: &PerfEventLog) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    log.write_jsonl(BufWriter::new(file)).map_err(|e| io_err(path, e))
}

fn simulator(config: &SimConfig) -> Result<Simulator> {
    Simulator::new(*config).map_err(|e| CliError::new("BAD_CONFIG", e.to_string(), 1))
}

fn replay_err(e: ReplayError) -> CliError {
    let exit = match e {
        ReplayError::Divergence { .. } | ReplayError::Fault { .. } => 2,
        _ => 1,
    };
    CliError::new(e.code(), e.to_string(), exit)
}

fn analysis_err(e: AnalysisError) -> CliError {
    CliError::new(e.code(), e.to_string(), 1)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Asm { input, output } => {
            let kernel = load_program(&input)?;
            write_text(&output, &kernel.to_json())?;
            emit(&json!({
                "instructions": kernel.program.len(),
                "entry_pc": kernel.program.entry_pc(),
                "labels": kernel.labels.len(),
                "regions": kernel.regions.len(),
            }));
            Ok(())
        }
        Command::Disasm { input, output } => {
            let text = disassemble(&load_program(&input)?);
            match output {
                Some(p) => write_text(&p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Gen(args) => generate(&args),
        Command::Run {
            program,
            max_cycles,
            output,
        } => run(&config, &program, max_cycles, output.as_deref()),
        Command::Record {
            program,
            breakpoint,
            hit,
            count,
            fast_forward,
            max_cycles,
            format,
            output,
        } => {
            let kernel = load_program(&program)?;
            let region = || kernel.regions.iter().find(|r| r.name == breakpoint).map(|r| r.start);
            let pc = match kernel.label(&breakpoint).or_else(region) {
                Some(pc) => pc,
                None => breakpoint.parse::<usize>().map_err(|_| {
                    CliError::new("BP_INVALID", format!("{breakpoint:?} is not a label, region or pc"), 1)
                })?,
            };
            if hit == 0 {
                return Err(CliError::new("BP_INVALID", "hit count must be at least 1", 1));
            }
            let sim = simulator(&config)?;
            let mut session = kernel
                .session(&sim)
                .map_err(|e| CliError::new("FAULT", e.to_string(), 2))?;
            let options = RecordOptions {
                breakpoint: Breakpoint::on_hit(pc, hit),
                count,
                fast_forward,
                max_cycles,
            };
            let rec = record(&mut session, &options).map_err(|e| {
                let exit = if e.code() == "USAGE" || e.code() == "BP_INVALID" {
                    1
                } else {
                    2
                };
                CliError::new(e.code(), e.to_string(), exit)
            })?;
            let format = match format {
                FormatArg::Text => TraceFormat::Text,
                FormatArg::Binary => TraceFormat::Binary,
            };
            let file = File::create(&output).map_err(|e| io_err(&output, e))?;
            write_trace(&rec.trace, format, BufWriter::new(file)).map_err(|e| io_err(&output, e))?;
            let end = match &rec.trace.header.end {
                WindowEnd::Count => "count",
                WindowEnd::Halted => "halted",
                WindowEnd::Faulted { .. } => "faulted",
            };
            emit(&json!({
                "start_pc": rec.trace.header.start_pc,
                "instructions": rec.trace.len(),
                "end": end,
                "reg_snapshots": rec.trace.reg_snapshots.len(),
                "mem_snapshots": rec.trace.mem_snapshots.len(),
                "snapshot_bytes": rec.trace.snapshot_bytes(),
            }));
            Ok(())
        }
        Command::Replay {
            trace,
            allow_config_mismatch,
            output,
        } => {
            let trace = load_trace(&trace)?;
            let mut log = PerfEventLog::new();
            let out =
                replay(&trace, &config, &mut log, &ReplayOptions { allow_config_mismatch }).map_err(replay_err)?;
            save_events(&output, &log)?;
            emit(&json!({
                "instructions": trace.len(),
                "end_cycle": out.end_cycle,
                "stalls": StallTotals::of(&log),
                "state_digest": out.state.arch_digest(),
            }));
            Ok(())
        }
        Command::Analyze {
            events,
            dma,
            util,
            vmem,
            deps,
            program,
            bucket_width,
            sample_interval,
            output,
        } => {
            let log = load_events(&events)?;
            let regions = program
                .as_deref()
                .map(load_program)
                .transpose()?
                .map(|k| k.region_map());
            let options = ReportOptions {
                bucket_width,
                sample_interval,
                vmem_capacity: config.vmem_capacity,
            };
            let bundle = analyze(&log, &options, regions.as_deref()).map_err(analysis_err)?;
            let all = !(dma || util || vmem || deps);
            let written = write_bundle(&output, &bundle).map_err(|e| io_err(&output, e))?;
            // The full bundle is written; drop the artifacts not asked for.
            for path in &written {
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                let wanted = all
                    || name == "report.json"
                    || (dma && name == "dma_timeline.svg")
                    || (util && name.starts_with("util_"))
                    || (vmem && name == "vmem_heatmap.svg")
                    || (deps && name == "suggestions.json");
                if !wanted {
                    fs::remove_file(path).map_err(|e| io_err(path, e))?;
                }
            }
            emit(&summary(&bundle));
            Ok(())
        }
        Command::Suggest { trace, events, output } => {
            let trace = load_trace(&trace)?;
            let log = load_events(&events)?;
            let bundle = analyze(
                &log,
                &ReportOptions {
                    vmem_capacity: config.vmem_capacity,
                    ..Default::default()
                },
                None,
            )
            .map_err(analysis_err)?;
            if bundle.graph.len() != trace.len() {
                return Err(CliError::new(
                    "BAD_EVENTS",
                    format!(
                        "log has {} instructions, trace has {}; suggest needs the log of replaying this trace",
                        bundle.graph.len(),
                        trace.len()
                    ),
                    1,
                ));
            }
            write_text(&output, &xshark::analyzer::report::to_json(&bundle.suggestions))?;
            for s in &bundle.suggestions {
                emit(s);
            }
            Ok(())
        }
        Command::Apply {
            trace,
            suggestions,
            verify,
            output,
        } => apply(&config, &trace, &suggestions, verify, &output),
        Command::Compare { baseline, candidate } => compare(&load_events(&baseline)?, &load_events(&candidate)?),
    }
}

fn generate(args: &GenArgs) -> Result<()> {
    let source = match args.workload {
        Workload::Starvation => {
            if args.tiles == 0 || args.tiles > StarvationParams::MAX_TILES || args.depth == 0 {
                return Err(CliError::usage(format!(
                    "starvation needs 1..={} tiles and depth at least 1",
                    StarvationParams::MAX_TILES
                )));
            }
            StarvationParams {
                tiles: args.tiles,
                prefetch_depth: args.depth,
            }
            .source()
        }
        Workload::Allgather => AllGatherParams {
            pinned: args.pinned,
            parallel_setup: args.parallel_setup,
            payload_bytes: args.payload,
            ..Default::default()
        }
        .source(),
        Workload::Checkerboard => CheckerboardParams {
            pages: args.pages,
            hold_iterations: args.hold,
        }
        .source(),
        Workload::Random => RandomParams {
            size: args.size,
            ..Default::default()
        }
        .source(args.seed),
    };
    match &args.output {
        Some(p) => write_text(p, &source),
        None => {
            print!("{source}");
            Ok(())
        }
    }
}

fn run(config: &SimConfig, program: &Path, max_cycles: u64, output: Option<&Path>) -> Result<()> {
    let kernel = load_program(program)?;
    let sim = simulator(config)?;
    let mut state = kernel
        .boot_state(&sim)
        .map_err(|e| CliError::new("FAULT", e.to_string(), 2))?;
    let mut log = PerfEventLog::new();
    let result = sim.run(&kernel.program, &mut state, &mut log, max_cycles);
    if let Some(p) = output {
        save_events(p, &log)?;
    }
    let status = match &result.status {
        RunStatus::Halted => "halted",
        RunStatus::BudgetExhausted => "budget_exhausted",
        RunStatus::Faulted { .. } => "faulted",
    };
    emit(&json!({
        "status": status,
        "end_cycle": result.end_cycle,
        "instructions": result.instructions,
        "stalls": StallTotals::of(&log),
        "state_digest": state.arch_digest(),
    }));
    match result.status {
        RunStatus::Faulted { pc, fault } => Err(CliError::new("FAULT", format!("pc {pc}: {fault}"), 2)),
        RunStatus::BudgetExhausted => Err(CliError::new(
            "BUDGET",
            format!("no HALT within {max_cycles} cycles"),
            2,
        )),
        RunStatus::Halted => Ok(()),
    }
}

fn summary(bundle: &Bundle) -> serde_json::Value {
    let r = &bundle.report;
    json!({
        "end_cycle": r.end_cycle,
        "instructions": r.instructions,
        "dmas": r.dma.len(),
        "stalls": r.stalls,
        "scenarios": r.scenarios,
        "suggestions": bundle.suggestions.len(),
    })
}

fn apply(config: &SimConfig, trace: &Path, path: &Path, verify: bool, output: &Path) -> Result<()> {
    let trace = load_trace(trace)?;
    let mut suggestions: Vec<Suggestion> = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::new("BAD_SUGGESTIONS", format!("{}: {e}", path.display()), 1))?;
    if let Some(s) = suggestions
        .iter()
        .find(|s| s.instr >= trace.len() || s.proposed_position > s.instr)
    {
        return Err(CliError::new(
            "BAD_SUGGESTIONS",
            format!("suggestion {} does not fit the {}-instruction trace", s.id, trace.len()),
            1,
        ));
    }
    let baseline = Baseline::replay(&trace, config).map_err(replay_err)?;
    if !verify {
        let stream: Vec<_> = trace.instr_stream.iter().map(|e| e.instr.clone()).collect();
        let refs: Vec<&Suggestion> = suggestions.iter().collect();
        let order = plan_schedule(&stream, &refs);
        let mut log = PerfEventLog::new();
        let out =
            replay_with_schedule(&trace, &order, config, &mut log, &ReplayOptions::default()).map_err(replay_err)?;
        save_events(output, &log)?;
        emit(&json!({
            "applied": suggestions.len(),
            "baseline_cycles": baseline.end_cycle,
            "end_cycle": out.end_cycle,
            "state_equal": out.state.arch_eq(&baseline.state),
        }));
        return Ok(());
    }
    let applied = apply_and_verify(&trace, config, &baseline, &mut suggestions);
    for s in &suggestions {
        if let Some(Verification::Rejected(reason)) = &s.verification {
            eprintln!(
                "note: suggestion {} (dma {} at {}) rejected: {}",
                s.id,
                s.dma,
                s.instr,
                serde_json::to_string(reason).unwrap_or_default()
            );
        }
        emit(&json!({ "id": s.id, "dma": s.dma, "instr": s.instr, "verification": s.verification }));
    }
    let (log, end_cycle, verification) = match applied.combined {
        Some(c) => match c.log {
            Some(log) => (log, c.end_cycle.unwrap_or(baseline.end_cycle), Some(c.verification)),
            None => {
                return Err(CliError::new(
                    "DIVERGENCE",
                    format!(
                        "verified suggestions fail together: {}",
                        serde_json::to_string(&c.verification).unwrap_or_default()
                    ),
                    2,
                ))
            }
        },
        None => (baseline.log.clone(), baseline.end_cycle, None),
    };
    if let Some(v @ Verification::Rejected(_)) = &verification {
        return Err(CliError::new(
            "STATE_MISMATCH",
            format!(
                "verified suggestions fail together: {}",
                serde_json::to_string(v).unwrap_or_default()
            ),
            2,
        ));
    }
    save_events(output, &log)?;
    emit(&json!({
        "applied": suggestions.iter().filter(|s| s.verification.as_ref().is_some_and(Verification::is_verified)).count(),
        "baseline_cycles": baseline.end_cycle,
        "end_cycle": end_cycle,
        "combined": verification,
    }));
    Ok(())
}

fn compare(a: &PerfEventLog, b: &PerfEventLog) -> Result<()> {
    let end = |log: &PerfEventLog| -> Result<(u64, String)> {
        log.run_end()
            .map(|(c, d)| (c, d.to_string()))
            .ok_or_else(|| CliError::new("BAD_EVENTS", "event log has no run_end record", 1))
    };
    let (ca, da) = end(a)?;
    let (cb, db) = end(b)?;
    let (sa, sb) = (StallTotals::of(a), StallTotals::of(b));
    let equal = da == db;
    emit(&json!({
        "baseline_cycles": ca,
        "candidate_cycles": cb,
        "cycle_delta": cb as i64 - ca as i64,
        "cycle_reduction": if ca == 0 { 0.0 } else { (ca as f64 - cb as f64) / ca as f64 },
        "baseline_stall": sa.total,
        "candidate_stall": sb.total,
        "stall_delta": sb.total as i64 - sa.total as i64,
        "state_equal": equal,
    }));
    if equal {
        Ok(())
    } else {
        Err(CliError::new("STATE_MISMATCH", "final architectural states differ", 2))
    }
}
