use std::fmt;

use serde::{Deserialize, Serialize};

/// Hard binary oracle decision. `Zero` is the class a threshold classifier
/// assigns to scores at or below its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Zero,
    One,
}

impl Label {
    pub fn from_bool(one: bool) -> Self {
        if one {
            Label::One
        } else {
            Label::Zero
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Zero => 0,
            Label::One => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Zero => Label::One,
            Label::One => Label::Zero,
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Zero),
            1 => Ok(Label::One),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// Imbalance ratio of a label multiset: minority count over majority count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImbalanceRatio {
    pub lambda: f64,
    pub minority: Option<Label>,
    /// Set when only one class (or nothing) was observed; `lambda` is then 0.
    pub single_class: bool,
}

pub fn imbalance_ratio(labels: &[Label]) -> ImbalanceRatio {
    let ones = labels.iter().filter(|l| **l == Label::One).count();
    let zeros = labels.len() - ones;
    if ones == 0 || zeros == 0 {
        return ImbalanceRatio {
            lambda: 0.0,
            minority: None,
            single_class: true,
        };
    }
    let (minority, min_count, maj_count) = if zeros <= ones {
        (Label::Zero, zeros, ones)
    } else {
        (Label::One, ones, zeros)
    };
    ImbalanceRatio {
        lambda: min_count as f64 / maj_count as f64,
        minority: Some(minority),
        single_class: false,
    }
}
