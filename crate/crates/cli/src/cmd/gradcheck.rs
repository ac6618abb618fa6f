use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use sketchembed::gradcheck::{end_to_end_check, op_checks, raster_check, CheckResult};

use crate::config::{sidecar_path, write_effective};
use crate::failure::{CmdResult, Failure};

#[derive(Args, Serialize, Deserialize, Debug, Clone)]
pub struct GradcheckArgs {
    /// Flat key = value file or an effective-config JSON; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per check
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Single tolerance for every check (overrides the per-kind ones)
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub raster_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub op_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub model_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub raster_step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub op_step: f64,
    /// Skip the whole-model check
    #[arg(long)]
    pub skip_model: bool,
    /// CSV table to write
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const TABLE_HEADER: &str = "check,instances,compared,negligible,excluded,max_rel_err,tol,status";

fn row(r: &CheckResult) -> String {
    let status = if r.passed() { "PASS" } else { "FAIL" };
    format!("{},{},{},{},{},{:.3e},{:.1e},{status}", r.name, r.instances, r.compared, r.negligible, r.excluded, r.max_rel_err, r.tol)
}

pub fn run(args: GradcheckArgs) -> CmdResult {
    let start = Instant::now();
    let tol = |t: f64| args.tol.unwrap_or(t);
    let mut results = vec![raster_check(args.seed, args.instances, args.raster_step, tol(args.raster_tol))?];
    results.extend(op_checks(args.seed, args.instances, args.op_step, tol(args.op_tol))?);
    if !args.skip_model {
        results.push(end_to_end_check(args.seed, args.op_step, tol(args.model_tol))?);
    }
    let mut table = format!("{TABLE_HEADER}\n");
    for r in &results {
        writeln!(table, "{}", row(r)).expect("writing to a string");
    }
    print!("{table}");
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    println!("{} checks, {} failed, {:.1}s", results.len(), failed.len(), start.elapsed().as_secs_f64());
    if let Some(out) = &args.out {
        write_effective(&sidecar_path(out), &args)?;
        std::fs::write(out, &table)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::check(format!("gradient check failed: {}", failed.join(", "))))
    }
}
