//! Parsing of `--grid` values per sweep axis.

use anyhow::{anyhow, bail, Context};
use radtrial_core::{GeneratorFamily, GridValue, SweepAxis, UtilityWeights};

/// Numbers as a comma list (`60,80,100`) or an inclusive range
/// `start:end:step`.
fn numbers(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [start, end, step] => {
            let (start, end, step): (f64, f64, f64) = (start.parse()?, end.parse()?, step.parse()?);
            if !(step > 0.0) || end < start {
                bail!("range `{spec}` needs start <= end and a positive step");
            }
            let n = ((end - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| {
                let v = start + i as f64 * step;
                (v * 1e9).round() / 1e9
            }).collect())
        }
        [_] => spec
            .split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("`{v}` is not a number")))
            .collect(),
        _ => bail!("malformed range `{spec}` (expected start:end:step)"),
    }
}

fn weights(item: &str) -> anyhow::Result<UtilityWeights> {
    if let Ok(row) = item.parse::<usize>() {
        return UtilityWeights::SENSITIVITY
            .get(row.wrapping_sub(1))
            .copied()
            .ok_or_else(|| anyhow!("weight row {row} does not exist (rows 1..=9)"));
    }
    let values: Vec<f64> = item
        .split('/')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("`{v}` is not a weight")))
        .collect::<anyhow::Result<_>>()?;
    let arr: [f64; 5] = values.try_into().map_err(|_| anyhow!("weights `{item}` must have five entries O1/O2/O3/O4/O5"))?;
    Ok(UtilityWeights(arr))
}

pub fn parse_grid(axis: SweepAxis, spec: &str) -> anyhow::Result<Vec<GridValue>> {
    let spec = spec.trim();
    if spec.is_empty() {
        bail!("empty grid");
    }
    match axis {
        SweepAxis::SampleSize | SweepAxis::ReProportion => Ok(numbers(spec)?.into_iter().map(GridValue::Number).collect()),
        SweepAxis::GeneratorFamily => spec
            .split(',')
            .map(|v| match v.trim() {
                "weibull" => Ok(GridValue::Family(GeneratorFamily::Weibull)),
                "log_logistic" | "loglogistic" | "logistic" => Ok(GridValue::Family(GeneratorFamily::LogLogistic)),
                other => Err(anyhow!("unknown generator family `{other}` (weibull, log_logistic)")),
            })
            .collect(),
        SweepAxis::Weights => {
            if spec == "all" {
                return Ok(UtilityWeights::SENSITIVITY.iter().map(|w| GridValue::Weights(*w)).collect());
            }
            spec.split(',').map(|item| weights(item.trim()).map(GridValue::Weights)).collect()
        }
    }
}
