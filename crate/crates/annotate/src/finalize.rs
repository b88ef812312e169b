use std::collections::BTreeMap;

use gifguard_core::{DatasetManifest, GifStatus, Label};
use serde::{Deserialize, Serialize};

use crate::record::{AnnotationRecord, Round};
use crate::AnnotateError;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizeSummary {
    pub total: usize,
    pub cyberbullying: usize,
    pub non_cyberbullying: usize,
    pub unanimous: usize,
    pub adjudicated: usize,
}

/// How a GIF's final label was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Unanimous(Label),
    Adjudicated(Label),
    /// First-round raters disagree and no adjudication exists yet.
    Disputed,
    /// Adjudicators themselves disagree.
    Conflicted,
    Unlabeled,
}

/// Resolves one GIF from all of its records.
///
/// A unanimous first round decides. Otherwise `final` records decide, then
/// `round2` records; several adjudicators in the deciding round must agree.
pub fn resolve(records: &[&AnnotationRecord]) -> Resolution {
    let labels_in = |round: Round| -> Vec<Label> { records.iter().filter(|r| r.round == round).map(|r| r.label).collect() };
    let first = labels_in(Round::Round1);
    if let Some(&l) = first.first() {
        if first.iter().all(|&x| x == l) {
            return Resolution::Unanimous(l);
        }
    }
    for round in [Round::Final, Round::Round2] {
        let labels = labels_in(round);
        if let Some(&l) = labels.first() {
            return if labels.iter().all(|&x| x == l) { Resolution::Adjudicated(l) } else { Resolution::Conflicted };
        }
    }
    if first.is_empty() {
        Resolution::Unlabeled
    } else {
        Resolution::Disputed
    }
}

pub(crate) fn group_by_gif(records: &[AnnotationRecord]) -> BTreeMap<&str, Vec<&AnnotationRecord>> {
    let mut by_gif: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_gif.entry(r.gif_id.as_str()).or_default().push(r);
    }
    by_gif
}

/// Sets every record's final label and marks it annotated.
///
/// Fails, listing the offending ids in manifest order, if any GIF lacks both
/// first-round unanimity and a consistent adjudication.
pub fn finalize_labels(
    manifest: &DatasetManifest,
    records: &[AnnotationRecord],
) -> Result<(DatasetManifest, FinalizeSummary), AnnotateError> {
    let by_gif = group_by_gif(records);
    let mut out = manifest.clone();
    let mut summary = FinalizeSummary::default();
    let mut unresolved = Vec::new();
    for record in &mut out.records {
        let resolution = by_gif.get(record.id.as_str()).map_or(Resolution::Unlabeled, |rs| resolve(rs));
        let label = match resolution {
            Resolution::Unanimous(l) => {
                summary.unanimous += 1;
                l
            }
            Resolution::Adjudicated(l) => {
                summary.adjudicated += 1;
                l
            }
            _ => {
                unresolved.push(record.id.clone());
                continue;
            }
        };
        record.label = Some(label);
        record.status = GifStatus::Annotated;
        summary.total += 1;
        match label {
            Label::Cyberbullying => summary.cyberbullying += 1,
            Label::NonCyberbullying => summary.non_cyberbullying += 1,
        }
    }
    if !unresolved.is_empty() {
        return Err(AnnotateError::Unresolved(unresolved));
    }
    Ok((out, summary))
}
