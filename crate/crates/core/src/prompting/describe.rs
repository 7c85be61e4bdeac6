use crate::catalog::{FeatureCatalog, FlowRecord, Scalar};
use crate::selection::SelectedFeatureSet;

use super::PromptError;

/// Renders the kept features of a flow as one sentence each:
/// `The <description> is <value> <unit>.`
pub fn describe_flow(
    record: &FlowRecord,
    features: &SelectedFeatureSet,
    catalog: &FeatureCatalog,
) -> Result<String, PromptError> {
    let mut sentences = Vec::with_capacity(features.len());
    for &index in features.kept() {
        let entry = catalog
            .get(index)
            .ok_or(PromptError::UnknownFeatureIndex(index))?;
        let value = record
            .get(&entry.name)
            .ok_or_else(|| PromptError::MissingFeatureValue(entry.name.clone()))?;
        let value = match value {
            Scalar::Number(v) => format_number(*v),
            Scalar::Text(s) => s.clone(),
        };
        let sentence = match &entry.unit {
            Some(unit) => format!("The {} is {value} {unit}.", entry.description),
            None => format!("The {} is {value}.", entry.description),
        };
        sentences.push(sentence);
    }
    Ok(sentences.join(" "))
}

/// Integral values print exactly; everything else is rounded to six
/// significant digits. Never uses scientific notation.
pub fn format_number(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    if value.fract() == 0.0 && value.abs() < 1e15 {
        return format!("{}", value as i64);
    }
    let exponent = value.abs().log10().floor() as i32;
    let decimals = (5 - exponent).max(0) as usize;
    let text = format!("{value:.decimals$}");
    let text = if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        text
    };
    if text == "-0" {
        "0".into()
    } else {
        text
    }
}
