use hsic::experiments::{estimate_power_with, GeneratorKind, GeneratorSpec};
use hsic::PairedSample;

use crate::args::{Format, LandmarkArg, SweepArgs, TestArgs, Timings};
use crate::config::{build, build_all};
use crate::error::{config_error, CliResult};
use crate::io::{read_matrix, write_atomic};
use crate::output::{sweep_csv, sweep_json, SweepRow, TestRecord};

/// Runs one test and returns the serialized result.
pub fn cmd_test(a: &TestArgs) -> CliResult<String> {
    let cfg = build(&a.method, &a.opts, true)?;
    let procedure = cfg.procedure(None)?;
    let x = read_matrix(&a.x)?;
    let y = read_matrix(&a.y)?;
    let sample = PairedSample::new(x, y)?;
    let outcome = procedure.run(&sample, cfg.seed)?;
    let extra = [
        ("input_x", a.x.display().to_string()),
        ("input_y", a.y.display().to_string()),
    ];
    let record = TestRecord::new(outcome, &cfg, &extra, a.opts.timings == Timings::Record);
    let text = match a.format {
        Format::Json => record.to_json(),
        Format::Csv => record.to_csv(),
    };
    if let Some(out) = &a.out {
        write_atomic(out, text.as_bytes())?;
    }
    Ok(text)
}

/// Power table (`bench = false`, trials in parallel) or power-vs-time table
/// (`bench = true`, trials sequential). One row per (method, m), methods outermost.
pub fn cmd_sweep(a: &SweepArgs, bench: bool) -> CliResult<String> {
    let configs = build_all(&a.method, &a.opts)?;
    let kind = GeneratorKind::parse(&a.generator).ok_or_else(|| {
        config_error(format!(
            "unknown generator '{}' (expected linear, sine, large-scale or null)",
            a.generator
        ))
    })?;
    if a.trials == 0 {
        return Err(config_error("trials must be at least 1"));
    }
    let generators = a
        .m_grid
        .iter()
        .map(|&m| GeneratorSpec::new(kind, m, a.dim, 0))
        .collect::<hsic::Result<Vec<_>>>()?;
    let from_generator = a.landmark_source == Some(LandmarkArg::Generator);
    if a.landmark_source.is_some() && !configs.iter().any(|c| c.method == "nystrom") {
        return Err(config_error("--landmark-source only applies to nystrom"));
    }
    let procedures = configs
        .iter()
        .map(|c| {
            let source =
                (from_generator && c.method == "nystrom").then(|| generators[0].landmark_source());
            c.procedure(source)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let timings = a.opts.timings == Timings::Record;
    let mut rows = Vec::new();
    for (cfg, procedure) in configs.iter().zip(&procedures) {
        let source = match (cfg.method.as_str(), from_generator) {
            ("nystrom", true) => "generator",
            ("nystrom", false) => "data",
            _ => "",
        };
        for g in &generators {
            let report = estimate_power_with(procedure, g, a.trials, cfg.alpha, cfg.seed, !bench)?;
            log::info!("{} m={} power={}", report.method, report.m, report.power);
            rows.push(SweepRow::new(
                &report,
                cfg,
                kind.name(),
                a.dim,
                source,
                timings,
            ));
        }
    }
    let text = match a.format {
        Format::Csv => sweep_csv(&rows, bench),
        Format::Json => sweep_json(&rows),
    };
    if let Some(out) = &a.out {
        write_atomic(out, text.as_bytes())?;
    }
    Ok(text)
}
