use gifguard_core::Label;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_items: usize,
    pub percent_agreement: f64,
    pub cohens_kappa: f64,
    pub disagreement_ids: Vec<String>,
}

/// Observed agreement and Cohen's kappa for paired labels.
///
/// When chance agreement is 1 (both raters used one identical constant
/// label) kappa is 1 if agreement is perfect and 0 otherwise. Returns `None`
/// for an empty slice.
pub fn cohens_kappa(pairs: &[(Label, Label)]) -> Option<(f64, f64)> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let agree = pairs.iter().filter(|(a, b)| a == b).count() as f64;
    let p_o = agree / n;
    let p_e: f64 = Label::ALL
        .iter()
        .map(|&l| {
            let pa = pairs.iter().filter(|(a, _)| *a == l).count() as f64 / n;
            let pb = pairs.iter().filter(|(_, b)| *b == l).count() as f64 / n;
            pa * pb
        })
        .sum();
    let kappa = if (1.0 - p_e).abs() < 1e-12 {
        if (p_o - 1.0).abs() < 1e-12 { 1.0 } else { 0.0 }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Some((p_o, kappa))
}

/// Report over items both raters labeled, given as `(gif_id, a, b)`.
pub fn agreement(items: &[(String, Label, Label)]) -> Option<AgreementReport> {
    let pairs: Vec<_> = items.iter().map(|(_, a, b)| (*a, *b)).collect();
    let (percent_agreement, cohens_kappa) = cohens_kappa(&pairs)?;
    let disagreement_ids = items.iter().filter(|(_, a, b)| a != b).map(|(id, _, _)| id.clone()).collect();
    Some(AgreementReport { n_items: items.len(), percent_agreement, cohens_kappa, disagreement_ids })
}
