//! Dataset invariant checks. Violations are returned as data.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::data::{BipartiteGraph, Design, ExperimentDataset, TreatmentPanel};

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateEdge { treatment: u32, connected: u32 },
    MissingTreatmentEndpoint { edge: usize, treatment: u32 },
    MissingConnectedEndpoint { edge: usize, connected: u32 },
    InvalidWeight { edge: usize, weight: f64 },
    DuplicateUnit { id: u32 },
    NoEligibleUnit,
    /// Eligible ids must be exactly `1..=N` where N is the panel row count.
    EligibleIdsMismatch { expected: usize, found: Vec<u32> },
    NonBinaryAssignment { unit: u32, period: usize, value: u8 },
    /// Staggered row drops from treated back to control at `period`.
    NonMonotone { unit: u32, period: usize },
    /// Fixed-design row changes value at `period`.
    NonConstant { unit: u32, period: usize },
    IneligibleTreated { unit: u32, period: usize },
    NonFiniteOutcome { unit: u32, period: usize },
    PanelShape { what: String },
    CovariateShape { unit: u32, expected: usize, found: usize },
    NonFiniteCovariate { unit: u32, column: usize },
    PrePeriodOutOfRange { pre_period_end: usize, n_periods: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            DuplicateEdge { treatment, connected } => {
                write!(f, "duplicate edge ({treatment}, {connected})")
            }
            MissingTreatmentEndpoint { edge, treatment } => {
                write!(f, "edge {edge} references missing treatment unit {treatment}")
            }
            MissingConnectedEndpoint { edge, connected } => {
                write!(f, "edge {edge} references missing connected unit {connected}")
            }
            InvalidWeight { edge, weight } => write!(f, "edge {edge} has invalid weight {weight}"),
            DuplicateUnit { id } => write!(f, "treatment unit {id} listed twice"),
            NoEligibleUnit => write!(f, "graph has no eligible treatment unit"),
            EligibleIdsMismatch { expected, found } => write!(
                f,
                "eligible unit ids must be 1..={expected}, found {} id(s) starting {:?}",
                found.len(),
                &found[..found.len().min(5)]
            ),
            NonBinaryAssignment { unit, period, value } => {
                write!(f, "assignment ({unit}, {period}) = {value} is not binary")
            }
            NonMonotone { unit, period } => write!(
                f,
                "staggered monotonicity violated at ({unit}, {period}): treated unit returns to control"
            ),
            NonConstant { unit, period } => {
                write!(f, "fixed design violated at ({unit}, {period}): assignment changes")
            }
            IneligibleTreated { unit, period } => {
                write!(f, "ineligible unit {unit} is treated in period {period}")
            }
            NonFiniteOutcome { unit, period } => {
                write!(f, "outcome ({unit}, {period}) is not finite")
            }
            PanelShape { what } => write!(f, "panel shape: {what}"),
            CovariateShape { unit, expected, found } => write!(
                f,
                "unit {unit} has {found} covariate(s), expected {expected}"
            ),
            NonFiniteCovariate { unit, column } => {
                write!(f, "covariate {column} of unit {unit} is not finite")
            }
            PrePeriodOutOfRange { pre_period_end, n_periods } => write!(
                f,
                "pre_period_end {pre_period_end} must be < T = {n_periods}"
            ),
        }
    }
}

/// Checks every dataset invariant; empty result means the dataset is valid.
pub fn validate_dataset(d: &ExperimentDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = d.treatments.n_units;
    let t = d.treatments.n_periods;

    if d.treatments.assignments.len() != n * t {
        out.push(Violation::PanelShape {
            what: format!(
                "treatment panel holds {} entries, expected {n}×{t}",
                d.treatments.assignments.len()
            ),
        });
        return out;
    }
    if d.outcomes.n_units != n {
        out.push(Violation::PanelShape {
            what: format!("outcome panel has {} units, treatment panel {n}", d.outcomes.n_units),
        });
    }
    if d.outcomes.n_periods != t + 1 {
        out.push(Violation::PanelShape {
            what: format!(
                "outcome panel has {} periods, expected T + 1 = {}",
                d.outcomes.n_periods,
                t + 1
            ),
        });
    }
    if d.outcomes.outcomes.len() != d.outcomes.n_units * d.outcomes.n_periods {
        out.push(Violation::PanelShape {
            what: "outcome storage does not match its dimensions".into(),
        });
    } else {
        for i in 0..d.outcomes.n_units {
            for s in 0..d.outcomes.n_periods {
                if !d.outcomes.y(i, s).is_finite() {
                    out.push(Violation::NonFiniteOutcome {
                        unit: i as u32 + 1,
                        period: s,
                    });
                }
            }
        }
    }
    if d.pre_period_end >= t {
        out.push(Violation::PrePeriodOutOfRange {
            pre_period_end: d.pre_period_end,
            n_periods: t,
        });
    }
    out.extend(validate_panel(&d.treatments));

    if let Some(cov) = &d.covariates {
        if cov.values.len() != n {
            out.push(Violation::PanelShape {
                what: format!("covariates cover {} units, expected {n}", cov.values.len()),
            });
        }
        for (i, x) in cov.values.iter().enumerate() {
            let unit = i as u32 + 1;
            if x.len() != cov.dim() {
                out.push(Violation::CovariateShape {
                    unit,
                    expected: cov.dim(),
                    found: x.len(),
                });
            }
            for (c, v) in x.iter().enumerate() {
                if !v.is_finite() {
                    out.push(Violation::NonFiniteCovariate { unit, column: c + 1 });
                }
            }
        }
    }

    if let Some(g) = &d.graph {
        out.extend(validate_graph(g));
        let mut eligible: Vec<u32> = g
            .treatment_units
            .iter()
            .filter(|u| u.eligible)
            .map(|u| u.id)
            .collect();
        eligible.sort_unstable();
        let dense = eligible.len() == n && eligible.iter().enumerate().all(|(i, &id)| id == i as u32 + 1);
        if !dense && !eligible.is_empty() {
            out.push(Violation::EligibleIdsMismatch {
                expected: n,
                found: eligible,
            });
        }
    }
    out
}

/// Binary entries plus the design constraint.
pub fn validate_panel(w: &TreatmentPanel) -> Vec<Violation> {
    let mut out = Vec::new();
    for i in 0..w.n_units {
        let unit = i as u32 + 1;
        for s in 1..=w.n_periods {
            let v = w.w(i, s);
            if v > 1 {
                out.push(Violation::NonBinaryAssignment {
                    unit,
                    period: s,
                    value: v,
                });
            }
            if s == 1 {
                continue;
            }
            let prev = w.w(i, s - 1);
            match w.design {
                Design::Staggered if v < prev => {
                    out.push(Violation::NonMonotone { unit, period: s })
                }
                Design::Fixed if v != prev => out.push(Violation::NonConstant { unit, period: s }),
                _ => {}
            }
        }
    }
    out
}

/// Structural graph invariants.
pub fn validate_graph(g: &BipartiteGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut units = HashSet::new();
    for u in &g.treatment_units {
        if !units.insert(u.id) {
            out.push(Violation::DuplicateUnit { id: u.id });
        }
    }
    if !g.treatment_units.iter().any(|u| u.eligible) {
        out.push(Violation::NoEligibleUnit);
    }
    let connected: HashSet<u32> = g.connected_units.iter().copied().collect();
    let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
    for (k, e) in g.edges.iter().enumerate() {
        if !units.contains(&e.treatment) {
            out.push(Violation::MissingTreatmentEndpoint {
                edge: k,
                treatment: e.treatment,
            });
        }
        if !connected.contains(&e.connected) {
            out.push(Violation::MissingConnectedEndpoint {
                edge: k,
                connected: e.connected,
            });
        }
        if !(e.weight.is_finite() && e.weight >= 0.0) {
            out.push(Violation::InvalidWeight {
                edge: k,
                weight: e.weight,
            });
        }
        if seen.insert((e.treatment, e.connected), k).is_some() {
            out.push(Violation::DuplicateEdge {
                treatment: e.treatment,
                connected: e.connected,
            });
        }
    }
    out
}

/// Checks a full assignment panel (rows = all treatment units of `g`, in
/// `g.treatment_units` order): ineligible units must never be treated.
pub fn validate_full_assignment(g: &BipartiteGraph, w: &TreatmentPanel) -> Vec<Violation> {
    let mut out = validate_panel(w);
    if w.n_units != g.treatment_units.len() {
        out.push(Violation::PanelShape {
            what: format!(
                "full assignment has {} rows, graph has {} treatment units",
                w.n_units,
                g.treatment_units.len()
            ),
        });
        return out;
    }
    for (i, u) in g.treatment_units.iter().enumerate() {
        if u.eligible {
            continue;
        }
        if let Some(s) = (1..=w.n_periods).find(|&s| w.w(i, s) != 0) {
            out.push(Violation::IneligibleTreated { unit: u.id, period: s });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Edge, OutcomePanel, TreatmentUnit};

    fn small_dataset() -> ExperimentDataset {
        let mut w = TreatmentPanel::zeros(4, 6, Design::Staggered);
        for s in 3..=6 {
            w.set(2, s, 1);
        }
        ExperimentDataset {
            outcomes: OutcomePanel::zeros(4, 7),
            treatments: w,
            graph: Some(BipartiteGraph {
                treatment_units: (1..=4)
                    .map(|id| TreatmentUnit { id, eligible: true })
                    .chain(std::iter::once(TreatmentUnit { id: 5, eligible: false }))
                    .collect(),
                connected_units: vec![1, 2],
                edges: vec![
                    Edge { treatment: 1, connected: 1, weight: 1.0 },
                    Edge { treatment: 3, connected: 1, weight: 1.0 },
                    Edge { treatment: 5, connected: 2, weight: 1.0 },
                ],
            }),
            covariates: None,
            pre_period_end: 2,
        }
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert_eq!(validate_dataset(&small_dataset()), vec![]);
    }

    #[test]
    fn staggered_drop_is_named_at_unit_and_period() {
        let mut d = small_dataset();
        d.treatments.set(2, 5, 0);
        let v = validate_dataset(&d);
        assert_eq!(v, vec![Violation::NonMonotone { unit: 3, period: 5 }]);
        assert!(v[0].to_string().contains("(3, 5)"));
    }

    #[test]
    fn edge_to_missing_connected_unit_is_reported() {
        let mut d = small_dataset();
        d.graph.as_mut().unwrap().edges.push(Edge { treatment: 2, connected: 9, weight: 1.0 });
        let v = validate_dataset(&d);
        assert_eq!(v, vec![Violation::MissingConnectedEndpoint { edge: 3, connected: 9 }]);
    }

    #[test]
    fn fixed_design_must_be_constant() {
        let mut d = small_dataset();
        d.treatments.design = Design::Fixed;
        let v = validate_dataset(&d);
        assert_eq!(v, vec![Violation::NonConstant { unit: 3, period: 3 }]);
    }

    #[test]
    fn other_invariants() {
        let mut d = small_dataset();
        d.pre_period_end = 6;
        d.outcomes.set(0, 0, f64::NAN);
        let g = d.graph.as_mut().unwrap();
        g.edges.push(Edge { treatment: 1, connected: 1, weight: -1.0 });
        let v = validate_dataset(&d);
        assert!(v.contains(&Violation::PrePeriodOutOfRange { pre_period_end: 6, n_periods: 6 }));
        assert!(v.contains(&Violation::NonFiniteOutcome { unit: 1, period: 0 }));
        assert!(v.contains(&Violation::DuplicateEdge { treatment: 1, connected: 1 }));
        assert!(v.contains(&Violation::InvalidWeight { edge: 3, weight: -1.0 }));
    }

    #[test]
    fn treated_ineligible_unit_is_rejected() {
        let d = small_dataset();
        let g = d.graph.unwrap();
        let mut w = TreatmentPanel::zeros(5, 3, Design::Staggered);
        assert!(validate_full_assignment(&g, &w).is_empty());
        w.set(4, 3, 1);
        assert_eq!(
            validate_full_assignment(&g, &w),
            vec![Violation::IneligibleTreated { unit: 5, period: 3 }]
        );
    }
}
