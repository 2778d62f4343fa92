use workbench_core::roofline::{emit_report, KernelMeasurement, MachineModel};

use super::display;
use crate::settings::{CliResult, Context};

pub fn report(ctx: &Context) -> CliResult<()> {
    let machine: MachineModel = ctx
        .lookup("machine", None)?
        .ok_or_else(|| ctx.usage_error("--config must provide a \"machine\" object"))?;
    let points: Vec<KernelMeasurement> = ctx
        .lookup("measurements", None)?
        .ok_or_else(|| ctx.usage_error("--config must provide a \"measurements\" list"))?;
    machine.validate()?;
    for p in &points {
        p.validate()?;
    }

    let report = emit_report(&points, &machine)?;
    let points_csv = report.points_csv();
    let path = ctx.write_text("roofline_points.csv", &points_csv)?;
    ctx.write_text("roofline_curve.csv", &report.roofline_csv())?;
    ctx.write_text("roofline.json", &report.to_json()?)?;

    println!("machine {}: ridge point {:.4} flop/byte", machine.name, report.ridge_point);
    print!("{points_csv}");
    println!("wrote {}", display(&path));
    Ok(())
}
