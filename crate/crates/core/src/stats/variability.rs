use serde::{Deserialize, Serialize};

use super::mean_std;
use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::volume::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Novice,
    Expert,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Novice => "novice",
            Role::Expert => "expert",
        }
    }
}

/// One annotator's segmentations, aligned by case index.
#[derive(Debug, Clone)]
pub struct Annotator {
    pub name: String,
    pub role: Role,
    pub masks: Vec<Mask>,
    /// Second annotation of the same cases, for intra-operator agreement.
    pub repeat: Option<Vec<Mask>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityReport {
    pub pairing: String,
    pub mean_dice: f64,
    pub std_dice: f64,
    pub n: usize,
}

/// Mean ± std DICE per pairing category.
///
/// Categories: `novice/novice`, `novice/expert`, `expert/expert` (distinct
/// operators, every case), `auto/novice`, `auto/expert` (automatic against
/// each operator), and `intra/novice`, `intra/expert` (first against repeat
/// annotation). Categories without any pair are omitted. The std is the
/// sample standard deviation.
pub fn variability_table(operators: &[Annotator], auto: &[Mask]) -> Result<Vec<VariabilityReport>> {
    let cases = operators.first().map(|o| o.masks.len()).unwrap_or(auto.len());
    for op in operators {
        if op.masks.len() != cases || op.repeat.as_ref().is_some_and(|r| r.len() != cases) {
            return Err(Error::InvalidArgument(format!(
                "operator {:?} case list is not aligned ({} cases expected)",
                op.name, cases
            )));
        }
    }
    if !auto.is_empty() && auto.len() != cases {
        return Err(Error::InvalidArgument(format!(
            "automatic segmentations: {} cases, expected {cases}",
            auto.len()
        )));
    }

    let mut categories: Vec<(String, Vec<f64>)> = Vec::new();
    let mut push = |label: String, values: Vec<f64>| {
        if let Some(entry) = categories.iter_mut().find(|(l, _)| *l == label) {
            entry.1.extend(values);
        } else {
            categories.push((label, values));
        }
    };
    let pairwise = |a: &[Mask], b: &[Mask]| -> Result<Vec<f64>> { a.iter().zip(b).map(|(x, y)| dice(x, y)).collect() };

    for (i, a) in operators.iter().enumerate() {
        for b in &operators[i + 1..] {
            let (r1, r2) = if a.role == Role::Expert && b.role == Role::Novice {
                (b.role, a.role)
            } else {
                (a.role, b.role)
            };
            push(format!("{}/{}", r1.name(), r2.name()), pairwise(&a.masks, &b.masks)?);
        }
    }
    if !auto.is_empty() {
        for op in operators {
            push(format!("auto/{}", op.role.name()), pairwise(auto, &op.masks)?);
        }
    }
    for op in operators {
        if let Some(rep) = &op.repeat {
            push(format!("intra/{}", op.role.name()), pairwise(&op.masks, rep)?);
        }
    }

    let order = [
        "novice/novice",
        "novice/expert",
        "expert/expert",
        "auto/novice",
        "auto/expert",
        "intra/novice",
        "intra/expert",
    ];
    categories.sort_by_key(|(l, _)| order.iter().position(|o| o == l).unwrap_or(order.len()));
    Ok(categories
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(pairing, v)| {
            let (mean_dice, std_dice) = mean_std(&v);
            VariabilityReport {
                pairing,
                mean_dice,
                std_dice,
                n: v.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn row(n_on: usize) -> Mask {
        let g = Grid::isotropic([10, 1, 1], 1.0).unwrap();
        Mask::from_predicate(g, |p| p[0] < n_on)
    }

    #[test]
    fn operator_against_itself() {
        let masks = vec![row(4), row(6)];
        let a = Annotator {
            name: "A".into(),
            role: Role::Novice,
            masks: masks.clone(),
            repeat: Some(masks.clone()),
        };
        let b = Annotator {
            name: "B".into(),
            role: Role::Novice,
            masks: masks.clone(),
            repeat: None,
        };
        let t = variability_table(&[a, b], &masks).unwrap();
        for r in &t {
            assert_eq!(r.mean_dice, 1.0, "{}", r.pairing);
            assert_eq!(r.std_dice, 0.0);
        }
        let names: Vec<_> = t.iter().map(|r| r.pairing.as_str()).collect();
        assert_eq!(names, ["novice/novice", "auto/novice", "intra/novice"]);
    }

    #[test]
    fn misaligned_cases_rejected() {
        let a = Annotator {
            name: "A".into(),
            role: Role::Novice,
            masks: vec![row(1)],
            repeat: None,
        };
        let b = Annotator {
            name: "C".into(),
            role: Role::Expert,
            masks: vec![row(1), row(2)],
            repeat: None,
        };
        assert!(variability_table(&[a, b], &[]).is_err());
    }
}
