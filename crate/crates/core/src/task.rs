//! Enhancement task descriptors: imaging modality plus the source and target
//! magnetic field strengths of one field-transition task.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    T1,
    T2,
    Flair,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::T1, Modality::T2, Modality::Flair];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::T1 => "T1",
            Modality::T2 => "T2",
            Modality::Flair => "FLAIR",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "T1" => Ok(Modality::T1),
            "T2" => Ok(Modality::T2),
            "FLAIR" => Ok(Modality::Flair),
            other => Err(Error::invalid(format!("unknown modality {other:?}"))),
        }
    }

    fn index(&self) -> usize {
        match self {
            Modality::T1 => 0,
            Modality::T2 => 1,
            Modality::Flair => 2,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scanner main-field strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldStrength {
    B64mT,
    B3T,
    B7T,
}

impl FieldStrength {
    pub fn as_str(&self) -> &'static str {
        match self {
            FieldStrength::B64mT => "64mT",
            FieldStrength::B3T => "3T",
            FieldStrength::B7T => "7T",
        }
    }
}

impl fmt::Display for FieldStrength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (modality, source field, target field) enhancement task. Only the
/// 64mT->3T and 3T->7T transitions are valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldTask {
    modality: Modality,
    source: FieldStrength,
    target: FieldStrength,
}

/// Number of distinct (transition, modality) combinations.
pub const TASK_COMBINATIONS: usize = 6;

impl FieldTask {
    pub fn new(modality: Modality, source: FieldStrength, target: FieldStrength) -> Result<Self> {
        match (source, target) {
            (FieldStrength::B64mT, FieldStrength::B3T)
            | (FieldStrength::B3T, FieldStrength::B7T) => Ok(Self {
                modality,
                source,
                target,
            }),
            _ => Err(Error::invalid(format!(
                "unsupported field transition {source} -> {target}"
            ))),
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn source(&self) -> FieldStrength {
        self.source
    }

    pub fn target(&self) -> FieldStrength {
        self.target
    }

    /// Canonical transition label, e.g. `64mT-to-3T`.
    pub fn transition_name(&self) -> &'static str {
        match self.source {
            FieldStrength::B64mT => "64mT-to-3T",
            _ => "3T-to-7T",
        }
    }

    /// Canonical condition string used to key the embedding table.
    pub fn prompt(&self) -> String {
        format!(
            "MRI {} sequence enhancement from {} to {} magnetic field",
            self.modality, self.source, self.target
        )
    }

    /// Stable index into per-task embedding tables, in `0..TASK_COMBINATIONS`.
    pub fn embedding_index(&self) -> usize {
        let transition = match self.source {
            FieldStrength::B64mT => 0,
            _ => 1,
        };
        transition * Modality::ALL.len() + self.modality.index()
    }

    /// Parses a `transition:modality` pair such as `64mT-to-3T:T1`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (transition, modality) = spec
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("task spec {spec:?} must be transition:modality")))?;
        let modality = Modality::parse(modality.trim())?;
        match transition.trim() {
            "64mT-to-3T" => FieldTask::new(modality, FieldStrength::B64mT, FieldStrength::B3T),
            "3T-to-7T" => FieldTask::new(modality, FieldStrength::B3T, FieldStrength::B7T),
            other => Err(Error::invalid(format!("unknown transition {other:?}"))),
        }
    }
}

impl fmt::Display for FieldTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.transition_name(), self.modality)
    }
}
