use std::io::Write;
use std::path::Path;

use halosep_core::recovery::gradcheck::{gradcheck, GradcheckReport, OPS};

use crate::{write_json, UsageError};

/// Runs the finite-difference suite. `corrupt` perturbs one op's analytic
/// gradient (negative control).
pub fn cmd_gradcheck(seed: u64, corrupt: Option<&str>, out_dir: Option<&Path>) -> anyhow::Result<GradcheckReport> {
    if let Some(op) = corrupt {
        if !OPS.contains(&op) {
            return Err(UsageError(format!("unknown op '{op}', expected one of {}", OPS.join(", "))).into());
        }
    }
    let report = gradcheck(seed, corrupt);
    if let Some(dir) = out_dir {
        crate::create_dir(dir)?;
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    Ok(report)
}

pub fn print_report(report: &GradcheckReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "gradcheck seed={} step={:e} tolerance={:e}",
        report.seed, report.step, report.tolerance
    )?;
    writeln!(out, "{:<18} {:>8} {:>12}  status", "op", "params", "max_rel")?;
    for o in &report.ops {
        let status = if o.passed { "ok" } else { "FAIL" };
        writeln!(out, "{:<18} {:>8} {:>12.3e}  {status}", o.op, o.checked, o.max_rel_error)?;
    }
    Ok(())
}
