use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The five power plant categories. Index order is fixed and used for
/// logits, confusion matrices and report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Wnd,
    Sun,
    Bit,
    Ng,
    Wat,
}

pub const NUM_CLASSES: usize = 5;

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Wnd,
        ClassLabel::Sun,
        ClassLabel::Bit,
        ClassLabel::Ng,
        ClassLabel::Wat,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            ClassLabel::Wnd => "WND",
            ClassLabel::Sun => "SUN",
            ClassLabel::Bit => "BIT",
            ClassLabel::Ng => "NG",
            ClassLabel::Wat => "WAT",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ClassLabel::Wnd => "Wind",
            ClassLabel::Sun => "Solar",
            ClassLabel::Bit => "Biomass/Coal",
            ClassLabel::Ng => "Natural Gas",
            ClassLabel::Wat => "Hydroelectric",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.code() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}
