//! Roofline model: attainable rate as a function of operational intensity,
//! kernel classification against a machine, the batch scaling-slowdown law and
//! plot-ready report emission.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Number of log-spaced samples of the roofline polyline in a report.
pub const ROOFLINE_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineModel {
    pub name: String,
    /// Peak floating-point rate, flop/s.
    pub peak_flops: f64,
    /// Sustained (STREAM) memory bandwidth, byte/s.
    pub stream_bandwidth: f64,
}

impl MachineModel {
    pub fn new(name: impl Into<String>, peak_flops: f64, stream_bandwidth: f64) -> Result<Self> {
        let m = Self {
            name: name.into(),
            peak_flops,
            stream_bandwidth,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_flops > 0.0 && self.peak_flops.is_finite()) {
            return Err(invalid(format!("peak_flops must be positive, got {}", self.peak_flops)));
        }
        if !(self.stream_bandwidth > 0.0 && self.stream_bandwidth.is_finite()) {
            return Err(invalid(format!(
                "stream_bandwidth must be positive, got {}",
                self.stream_bandwidth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMeasurement {
    pub label: String,
    pub flops: f64,
    pub bytes: f64,
    pub seconds: f64,
}

impl KernelMeasurement {
    pub fn new(label: impl Into<String>, flops: f64, bytes: f64, seconds: f64) -> Result<Self> {
        let m = Self {
            label: label.into(),
            flops,
            bytes,
            seconds,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("flops", self.flops), ("bytes", self.bytes), ("seconds", self.seconds)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("measurement '{}': {name} must be positive", self.label)));
            }
        }
        Ok(())
    }

    /// Achieved flop/s.
    pub fn rate(&self) -> f64 {
        self.flops / self.seconds
    }

    /// Achieved byte/s.
    pub fn bandwidth(&self) -> f64 {
        self.bytes / self.seconds
    }
}

pub fn operational_intensity(flops: f64, bytes: f64) -> Result<f64> {
    if bytes == 0.0 {
        return Err(Error::Domain("operational intensity undefined for zero bytes".into()));
    }
    Ok(flops / bytes)
}

pub fn attainable(machine: &MachineModel, oi: f64) -> f64 {
    machine.peak_flops.min(machine.stream_bandwidth * oi)
}

pub fn ridge_point(machine: &MachineModel) -> f64 {
    machine.peak_flops / machine.stream_bandwidth
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    MemoryBound,
    ComputeBound,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::MemoryBound => "memory-bound",
            Regime::ComputeBound => "compute-bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub regime: Regime,
    pub operational_intensity: f64,
    /// Achieved rate over the roof at this intensity.
    pub fraction_of_roof: f64,
    pub achieved_flops: f64,
    pub attainable_flops: f64,
    pub achieved_bandwidth: f64,
    /// Achieved bandwidth over STREAM bandwidth.
    pub bandwidth_fraction: f64,
}

/// Places a measurement under the roofline. Points exactly at the ridge count
/// as compute-bound.
pub fn classify(measurement: &KernelMeasurement, machine: &MachineModel) -> Result<Classification> {
    measurement.validate()?;
    machine.validate()?;
    let oi = operational_intensity(measurement.flops, measurement.bytes)?;
    let regime = if oi < ridge_point(machine) {
        Regime::MemoryBound
    } else {
        Regime::ComputeBound
    };
    let roof = attainable(machine, oi);
    Ok(Classification {
        regime,
        operational_intensity: oi,
        fraction_of_roof: measurement.rate() / roof,
        achieved_flops: measurement.rate(),
        attainable_flops: roof,
        achieved_bandwidth: measurement.bandwidth(),
        bandwidth_fraction: measurement.bandwidth() / machine.stream_bandwidth,
    })
}

/// Fraction of the optical advantage retained when `total_pixels` are split
/// into `batches` independent transforms: `S = 1 - log P / log N`.
pub fn batch_slowdown(total_pixels: f64, batches: f64) -> Result<f64> {
    if !(total_pixels > 1.0) {
        return Err(Error::Domain(format!("N must exceed 1, got {total_pixels}")));
    }
    if !(batches >= 1.0 && batches <= total_pixels) {
        return Err(Error::Domain(format!(
            "P must lie in [1, N], got P = {batches}, N = {total_pixels}"
        )));
    }
    Ok(1.0 - batches.log10() / total_pixels.log10())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub operational_intensity: f64,
    pub achieved_flops: f64,
    pub attainable_flops: f64,
    pub fraction_of_roof: f64,
    pub regime: Regime,
    pub achieved_bandwidth: f64,
    pub bandwidth_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RooflineSample {
    pub operational_intensity: f64,
    pub attainable_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RooflineReport {
    pub machine: MachineModel,
    pub ridge_point: f64,
    pub rows: Vec<ReportRow>,
    pub roofline: Vec<RooflineSample>,
}

impl RooflineReport {
    pub const CSV_HEADER: &'static str =
        "label,oi,achieved,attainable,fraction,regime,achieved_bandwidth,bandwidth_fraction";

    /// One row per measurement.
    pub fn points_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                csv_field(&r.label),
                r.operational_intensity,
                r.achieved_flops,
                r.attainable_flops,
                r.fraction_of_roof,
                r.regime.as_str(),
                r.achieved_bandwidth,
                r.bandwidth_fraction
            ));
        }
        out
    }

    /// The sampled roof, for plotting.
    pub fn roofline_csv(&self) -> String {
        let mut out = String::from("oi,attainable\n");
        for s in &self.roofline {
            out.push_str(&format!("{},{}\n", s.operational_intensity, s.attainable_flops));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Builds the report for `points`; the roof is sampled at [`ROOFLINE_SAMPLES`]
/// log-spaced intensities spanning a decade either side of the points and the ridge.
pub fn emit_report(points: &[KernelMeasurement], machine: &MachineModel) -> Result<RooflineReport> {
    if points.is_empty() {
        return Err(invalid("report needs at least one measurement"));
    }
    let rows = points
        .iter()
        .map(|p| {
            let c = classify(p, machine)?;
            Ok(ReportRow {
                label: p.label.clone(),
                operational_intensity: c.operational_intensity,
                achieved_flops: c.achieved_flops,
                attainable_flops: c.attainable_flops,
                fraction_of_roof: c.fraction_of_roof,
                regime: c.regime,
                achieved_bandwidth: c.achieved_bandwidth,
                bandwidth_fraction: c.bandwidth_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ridge = ridge_point(machine);
    let lo = rows
        .iter()
        .map(|r| r.operational_intensity)
        .fold(ridge, f64::min)
        / 10.0;
    let hi = rows
        .iter()
        .map(|r| r.operational_intensity)
        .fold(ridge, f64::max)
        * 10.0;
    let (llo, lhi) = (lo.log10(), hi.log10());
    let roofline = (0..ROOFLINE_SAMPLES)
        .map(|i| {
            let t = i as f64 / (ROOFLINE_SAMPLES - 1) as f64;
            let oi = 10f64.powf(llo + t * (lhi - llo));
            RooflineSample {
                operational_intensity: oi,
                attainable_flops: attainable(machine, oi),
            }
        })
        .collect();

    Ok(RooflineReport {
        machine: machine.clone(),
        ridge_point: ridge,
        rows,
        roofline,
    })
}
