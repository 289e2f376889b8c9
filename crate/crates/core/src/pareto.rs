//! Pareto fronts and the exact two-objective hypervolume indicator.

use thiserror::Error;

use crate::moga::{dominates, Genome};
use crate::rollout::ObjectiveVector;

/// Margin applied to the component-wise maximum when building a shared reference point.
pub const REFERENCE_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParetoError {
    #[error("cannot build a reference point: no finite, non-penalty points")]
    NoPoints,
}

/// Mutually non-dominated objective vectors, optionally with the genomes
/// that produced them (aligned by index).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParetoFront {
    pub points: Vec<ObjectiveVector>,
    pub genomes: Option<Vec<Genome>>,
    pub label: String,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Smallest tracking error on the front, if any.
    pub fn best_accuracy(&self) -> Option<f64> {
        self.points.iter().map(|p| p.f_acc).min_by(f64::total_cmp)
    }
}

/// Indices of the non-dominated members of `points`, keeping only the first
/// copy of exact duplicates. Indices come back in ascending order.
pub fn nondominated_indices(points: &[ObjectiveVector]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .f_acc
            .total_cmp(&points[b].f_acc)
            .then(points[a].f_t.total_cmp(&points[b].f_t))
            .then(a.cmp(&b))
    });
    // Sweep by ascending f_acc: a point survives iff its f_t beats every
    // earlier survivor (strictly, which also drops duplicates and ties).
    let mut keep = Vec::new();
    let mut best_ft = f64::INFINITY;
    for i in order {
        if points[i].f_t < best_ft {
            best_ft = points[i].f_t;
            keep.push(i);
        }
    }
    keep.sort_unstable();
    keep
}

pub fn extract_front(points: &[ObjectiveVector]) -> ParetoFront {
    let idx = nondominated_indices(points);
    ParetoFront {
        points: idx.iter().map(|&i| points[i]).collect(),
        genomes: None,
        label: String::new(),
    }
}

/// Like [`extract_front`] but keeps the genome of every surviving point.
pub fn extract_front_with_genomes(points: &[ObjectiveVector], genomes: &[Genome]) -> ParetoFront {
    assert_eq!(points.len(), genomes.len(), "points and genomes must align");
    let idx = nondominated_indices(points);
    ParetoFront {
        points: idx.iter().map(|&i| points[i]).collect(),
        genomes: Some(idx.iter().map(|&i| genomes[i].clone()).collect()),
        label: String::new(),
    }
}

/// Exact dominated area between the points and `reference`.
///
/// Points not strictly better than the reference in both objectives are
/// ignored, as are dominated points.
pub fn hypervolume_2d(points: &[ObjectiveVector], reference: ObjectiveVector) -> f64 {
    let inside: Vec<ObjectiveVector> = points
        .iter()
        .copied()
        .filter(|p| p.f_acc < reference.f_acc && p.f_t < reference.f_t)
        .collect();
    let mut front: Vec<ObjectiveVector> = nondominated_indices(&inside).into_iter().map(|i| inside[i]).collect();
    front.sort_by(|a, b| a.f_acc.total_cmp(&b.f_acc));
    let mut area = 0.0;
    for (i, p) in front.iter().enumerate() {
        let next = front.get(i + 1).map_or(reference.f_acc, |n| n.f_acc);
        area += (next - p.f_acc) * (reference.f_t - p.f_t);
    }
    area
}

/// Component-wise maximum over all fronts, scaled by [`REFERENCE_MARGIN`].
/// Penalty and non-finite points are skipped.
pub fn reference_point<'a, I>(fronts: I) -> Result<ObjectiveVector, ParetoError>
where
    I: IntoIterator<Item = &'a [ObjectiveVector]>,
{
    let mut max: Option<ObjectiveVector> = None;
    for p in fronts
        .into_iter()
        .flatten()
        .filter(|p| !p.is_penalty() && p.f_acc.is_finite() && p.f_t.is_finite())
    {
        max = Some(match max {
            None => *p,
            Some(m) => ObjectiveVector::new(m.f_acc.max(p.f_acc), m.f_t.max(p.f_t)),
        });
    }
    max.map(|m| ObjectiveVector::new(m.f_acc * REFERENCE_MARGIN, m.f_t * REFERENCE_MARGIN))
        .ok_or(ParetoError::NoPoints)
}

/// True when no member of `front` dominates another.
pub fn is_mutually_nondominated(front: &[ObjectiveVector]) -> bool {
    front
        .iter()
        .enumerate()
        .all(|(i, a)| front.iter().enumerate().all(|(j, b)| i == j || !dominates(a, b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ov(a: f64, b: f64) -> ObjectiveVector {
        ObjectiveVector::new(a, b)
    }

    /// O(n²) filter used as an oracle.
    fn brute_front(points: &[ObjectiveVector]) -> Vec<ObjectiveVector> {
        let mut out: Vec<ObjectiveVector> = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let dominated = points.iter().any(|q| dominates(q, p));
            let duplicate = points[..i].iter().any(|q| q == p);
            if !dominated && !duplicate {
                out.push(*p);
            }
        }
        out
    }

    #[test]
    fn extract_examples() {
        assert_eq!(extract_front(&[ov(1.0, 1.0), ov(2.0, 2.0)]).points, vec![ov(1.0, 1.0)]);
        let three = [ov(1.0, 3.0), ov(3.0, 1.0), ov(2.0, 2.0)];
        assert_eq!(extract_front(&three).points, three.to_vec());
        assert!(extract_front(&[]).is_empty());
        assert_eq!(extract_front(&[ov(1.0, 1.0), ov(1.0, 1.0)]).len(), 1);
    }

    #[test]
    fn extract_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<_> = (0..100)
                .map(|_| ov(rng.random_range(0..20) as f64, rng.random_range(0..20) as f64))
                .collect();
            assert_eq!(extract_front(&pts).points, brute_front(&pts));
        }
    }

    #[test]
    fn hypervolume_closed_forms() {
        assert_eq!(hypervolume_2d(&[ov(1.0, 1.0)], ov(2.0, 2.0)), 1.0);
        assert_eq!(hypervolume_2d(&[ov(1.0, 3.0), ov(3.0, 1.0)], ov(4.0, 4.0)), 5.0);
        assert_eq!(hypervolume_2d(&[ov(1.0, 3.0), ov(3.0, 1.0), ov(3.5, 3.5)], ov(4.0, 4.0)), 5.0);
        assert_eq!(hypervolume_2d(&[], ov(4.0, 4.0)), 0.0);
        // On the reference boundary: degenerate, discarded.
        assert_eq!(hypervolume_2d(&[ov(4.0, 1.0)], ov(4.0, 4.0)), 0.0);
    }

    #[test]
    fn reference_point_rules() {
        let r = reference_point([&[ov(1.0, 2.0)][..]]).unwrap();
        assert!((r.f_acc - 1.1).abs() < 1e-15 && (r.f_t - 2.2).abs() < 1e-15);
        let r = reference_point([&[ov(1.0, 4.0)][..], &[ov(3.0, 2.0)][..]]).unwrap();
        assert!((r.f_acc - 3.3).abs() < 1e-12 && (r.f_t - 4.4).abs() < 1e-12);
        let r = reference_point([&[ObjectiveVector::PENALTY, ov(1.0, 1.0)][..]]).unwrap();
        assert!((r.f_acc - 1.1).abs() < 1e-15 && (r.f_t - 1.1).abs() < 1e-15);
        assert_eq!(reference_point([&[][..]]), Err(ParetoError::NoPoints));
    }

    #[test]
    fn best_accuracy_picks_minimum() {
        let f = extract_front(&[ov(0.3, 1.0), ov(0.1, 5.0)]);
        assert_eq!(f.best_accuracy(), Some(0.1));
        assert_eq!(ParetoFront::default().best_accuracy(), None);
    }

    fn points() -> impl Strategy<Value = Vec<ObjectiveVector>> {
        prop::collection::vec((0.0f64..10.0, 0.0f64..10.0).prop_map(|(a, b)| ov(a, b)), 0..25)
    }

    proptest! {
        #[test]
        fn extract_is_idempotent(pts in points()) {
            let once = extract_front(&pts);
            prop_assert!(is_mutually_nondominated(&once.points));
            prop_assert_eq!(extract_front(&once.points).points, once.points);
        }

        #[test]
        fn hypervolume_ignores_order(pts in points(), seed in any::<u64>()) {
            let r = ov(11.0, 11.0);
            let mut shuffled = pts.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            prop_assert_eq!(hypervolume_2d(&pts, r), hypervolume_2d(&shuffled, r));
        }

        #[test]
        fn adding_a_point_never_shrinks_hypervolume(pts in points(), a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let r = ov(11.0, 11.0);
            let before = hypervolume_2d(&pts, r);
            let mut more = pts.clone();
            more.push(ov(a, b));
            prop_assert!(hypervolume_2d(&more, r) >= before - 1e-12);
        }
    }
}
