//! Slot layouts for (2,1) determination.

use std::fmt;

use crate::choi::{BoxAssignment, Label};

use super::{Result, TaskError};

pub const CLASS1_VALUE: f64 = 0.910516;
pub const CLASS2_VALUE: f64 = 0.902127;
pub const CLASS_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pattern {
    CP1111,
    CP211,
    CP22,
    CP31,
    CP4,
}

impl Pattern {
    pub fn name(self) -> &'static str {
        match self {
            Pattern::CP1111 => "CP1111",
            Pattern::CP211 => "CP211",
            Pattern::CP22 => "CP22",
            Pattern::CP31 => "CP31",
            Pattern::CP4 => "CP4",
        }
    }

    fn from_sizes(sizes: &[usize]) -> Option<Self> {
        let mut s = sizes.to_vec();
        s.sort_unstable_by(|a, b| b.cmp(a));
        match s.as_slice() {
            [1, 1, 1, 1] => Some(Pattern::CP1111),
            [2, 1, 1] => Some(Pattern::CP211),
            [2, 2] => Some(Pattern::CP22),
            [3, 1] => Some(Pattern::CP31),
            [4] => Some(Pattern::CP4),
            _ => None,
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    One,
    Two,
}

impl Class {
    pub fn value(self) -> f64 {
        match self {
            Class::One => CLASS1_VALUE,
            Class::Two => CLASS2_VALUE,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Class::One => 1,
            Class::Two => 2,
        }
    }

    /// Class whose value lies within `CLASS_TOL` of `v`.
    pub fn classify(v: f64) -> Option<Self> {
        [Class::One, Class::Two].into_iter().find(|c| (v - c.value()).abs() <= CLASS_TOL)
    }
}

/// Circuit with one reference box U2 and two U1: slots grouped into layers; boxes within a
/// layer act in parallel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Circuit {
    pub name: String,
    pub layers: Vec<Vec<Label>>,
}

impl Circuit {
    /// `spec` lists layers separated by `|`, e.g. "T R1 | R1 | R2".
    pub fn parse(name: &str, spec: &str) -> Result<Self> {
        let layers = spec
            .split('|')
            .map(|layer| layer.split_whitespace().map(|l| l.parse::<Label>()).collect::<std::result::Result<Vec<_>, _>>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let c = Circuit { name: name.to_string(), layers };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let a = self.assignment()?;
        if a.sample_counts() != (2, 1) {
            return Err(TaskError::Scenario(format!("{}: need two U1 and one U2 samples", self.name)));
        }
        if self.layers.iter().any(|l| l.is_empty()) || self.pattern().is_none() {
            return Err(TaskError::Scenario(format!("{}: not a four-slot layer pattern", self.name)));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn pattern(&self) -> Option<Pattern> {
        Pattern::from_sizes(&self.layer_sizes())
    }

    pub fn assignment(&self) -> Result<BoxAssignment> {
        Ok(BoxAssignment::new(self.layers.iter().flatten().copied().collect())?)
    }

    pub fn describe(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.iter().map(|x| x.short()).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join(" | ")
    }

    /// Expected class of a named Table-I circuit.
    pub fn expected_class(&self) -> Option<Class> {
        if self.name.starts_with("C1-") {
            Some(Class::One)
        } else if self.name.starts_with("C2-") {
            Some(Class::Two)
        } else {
            None
        }
    }
}

const TABLE_I: [(&str, &str); 15] = [
    ("C1-1", "T R1 | R1 | R2"),
    ("C1-2", "R1 R2 | T | R1"),
    ("C1-3", "R1 R2 | R1 | T"),
    ("C1-4", "T R1 | R2 | R1"),
    ("C1-5", "T R1 | R2 R1"),
    ("C1-6", "R2 R1 | T R1"),
    ("C2-1", "R1 R1 | T | R2"),
    ("C2-2", "R1 R1 | R2 | T"),
    ("C2-3", "T R2 | R1 | R1"),
    ("C2-4", "R1 R1 | T R2"),
    ("C2-5", "T R1 R1 | R2"),
    ("C2-6", "R2 R1 R1 | T"),
    ("C2-7", "T R1 R2 | R1"),
    ("C2-8", "T R2 R1 R1"),
    ("C2-9", "T R2 | R1 R1"),
];

/// The fifteen inequivalent circuits, six of class 1 then nine of class 2.
pub fn table_i() -> Vec<Circuit> {
    TABLE_I.iter().map(|(n, s)| Circuit::parse(n, s).expect("catalog entries are valid")).collect()
}

/// All twelve fully sequential arrangements, named `CP1111-t{target slot}-u{U2 slot}`.
pub fn fully_ordered() -> Vec<Circuit> {
    let mut out = Vec::new();
    for t in 1..=4 {
        for u in (1..=4).filter(|&u| u != t) {
            let layers = (1..=4)
                .map(|s| {
                    vec![if s == t {
                        Label::Target
                    } else if s == u {
                        Label::Ref2
                    } else {
                        Label::Ref1
                    }]
                })
                .collect();
            out.push(Circuit { name: format!("CP1111-t{t}-u{u}"), layers });
        }
    }
    out
}

pub fn find(name: &str) -> Option<Circuit> {
    table_i().into_iter().chain(fully_ordered()).find(|c| c.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_shapes() {
        let t = table_i();
        assert_eq!(t.len(), 15);
        assert_eq!(t.iter().filter(|c| c.expected_class() == Some(Class::One)).count(), 6);
        assert_eq!(t[13].pattern(), Some(Pattern::CP4));
        assert_eq!(t[4].pattern(), Some(Pattern::CP22));
        let f = fully_ordered();
        assert_eq!(f.len(), 12);
        assert!(f.iter().all(|c| c.pattern() == Some(Pattern::CP1111) && c.validate().is_ok()));
        assert_eq!(find("CP1111-t2-u4").unwrap().describe(), "U1 | Ui | U1 | U2");
        assert!(Circuit::parse("bad", "T R1 | R1").is_err());
    }
}
