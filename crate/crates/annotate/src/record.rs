use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use gifguard_core::Label;
use serde::{Deserialize, Serialize};

use crate::AnnotateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round {
    Round1,
    Round2,
    Final,
}

impl Round {
    pub fn as_str(self) -> &'static str {
        match self {
            Round::Round1 => "round1",
            Round::Round2 => "round2",
            Round::Final => "final",
        }
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Round {
    type Err = AnnotateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "round1" => Ok(Round::Round1),
            "round2" => Ok(Round::Round2),
            "final" => Ok(Round::Final),
            other => Err(AnnotateError::BadRequest(format!("unknown round {other:?}"))),
        }
    }
}

/// Grounds on which a GIF is judged cyberbullying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    DirectedBullying,
    HateSpeechOrRemarks,
    HostileGestureOrExpression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub gif_id: String,
    pub annotator_id: String,
    pub round: Round,
    pub label: Label,
    #[serde(default)]
    pub criteria_flags: BTreeSet<Criterion>,
    pub timestamp: DateTime<Utc>,
}

/// Body of a label submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub gif_id: String,
    pub annotator_id: String,
    pub round: Round,
    pub label: Label,
    #[serde(default)]
    pub criteria_flags: BTreeSet<Criterion>,
}

impl LabelSubmission {
    /// Cyberbullying needs at least one criterion; the other label none.
    pub fn check_criteria(&self) -> Result<(), AnnotateError> {
        match (self.label, self.criteria_flags.is_empty()) {
            (Label::Cyberbullying, true) => Err(AnnotateError::CriteriaRequired),
            (Label::NonCyberbullying, false) => Err(AnnotateError::CriteriaForbidden),
            _ => Ok(()),
        }
    }

    pub fn into_record(self, timestamp: DateTime<Utc>) -> AnnotationRecord {
        AnnotationRecord {
            gif_id: self.gif_id,
            annotator_id: self.annotator_id,
            round: self.round,
            label: self.label,
            criteria_flags: self.criteria_flags,
            timestamp,
        }
    }
}
