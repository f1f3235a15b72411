//! Nucleus class taxonomy.
//!
//! Class ids in label images run 1..=6 (0 is background). Reports use the
//! column order of the challenge leaderboard: pla, neu, epi, lym, eos, con.

use serde::{Deserialize, Serialize};

/// Number of nuclear classes.
pub const N_CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NucleusClass {
    Neutrophil = 1,
    Epithelial = 2,
    Lymphocyte = 3,
    Plasma = 4,
    Eosinophil = 5,
    Connective = 6,
}

impl NucleusClass {
    /// All classes in class-id order.
    pub const ALL: [NucleusClass; N_CLASSES] = [
        NucleusClass::Neutrophil,
        NucleusClass::Epithelial,
        NucleusClass::Lymphocyte,
        NucleusClass::Plasma,
        NucleusClass::Eosinophil,
        NucleusClass::Connective,
    ];

    /// All classes in report column order (pla, neu, epi, lym, eos, con).
    pub const REPORT_ORDER: [NucleusClass; N_CLASSES] = [
        NucleusClass::Plasma,
        NucleusClass::Neutrophil,
        NucleusClass::Epithelial,
        NucleusClass::Lymphocyte,
        NucleusClass::Eosinophil,
        NucleusClass::Connective,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1..=6 => Some(Self::ALL[id as usize - 1]),
            _ => None,
        }
    }

    /// Short column name used in reports.
    pub fn abbrev(self) -> &'static str {
        match self {
            NucleusClass::Neutrophil => "neu",
            NucleusClass::Epithelial => "epi",
            NucleusClass::Lymphocyte => "lym",
            NucleusClass::Plasma => "pla",
            NucleusClass::Eosinophil => "eos",
            NucleusClass::Connective => "con",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NucleusClass::Neutrophil => "neutrophil",
            NucleusClass::Epithelial => "epithelial",
            NucleusClass::Lymphocyte => "lymphocyte",
            NucleusClass::Plasma => "plasma",
            NucleusClass::Eosinophil => "eosinophil",
            NucleusClass::Connective => "connective",
        }
    }

    /// Position of this class in [`Self::REPORT_ORDER`].
    pub fn report_index(self) -> usize {
        Self::REPORT_ORDER
            .iter()
            .position(|&c| c == self)
            .expect("every class has a report column")
    }
}

/// Per-class values laid out in report column order.
///
/// Serializes as a JSON object with keys `pla, neu, epi, lym, eos, con` in that order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerClass<T> {
    pub pla: T,
    pub neu: T,
    pub epi: T,
    pub lym: T,
    pub eos: T,
    pub con: T,
}

impl<T: Copy> PerClass<T> {
    pub fn from_report_array(a: [T; N_CLASSES]) -> Self {
        PerClass {
            pla: a[0],
            neu: a[1],
            epi: a[2],
            lym: a[3],
            eos: a[4],
            con: a[5],
        }
    }

    pub fn to_report_array(&self) -> [T; N_CLASSES] {
        [self.pla, self.neu, self.epi, self.lym, self.eos, self.con]
    }

    pub fn get(&self, class: NucleusClass) -> T {
        self.to_report_array()[class.report_index()]
    }
}
