use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InterpolationMode {
    /// Linear interpolation over the smallest bracketing interval.
    #[default]
    LinearBracketing,
    /// The y of the temporally closest record.
    NearestRecord,
}

/// Finite mapping from inputs to outputs with strictly increasing x.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationTable {
    points: Vec<(f64, f64)>,
    mode: InterpolationMode,
}

impl InterpolationTable {
    pub fn new(points: Vec<(f64, f64)>, mode: InterpolationMode) -> Result<Self, SimError> {
        if points.is_empty() {
            return Err(SimError::Config("interpolation table is empty".into()));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(SimError::Config("interpolation table has non-finite values".into()));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(SimError::Config(format!(
                "interpolation x values must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(InterpolationTable { points, mode })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn mode(&self) -> InterpolationMode {
        self.mode
    }

    /// Out-of-range inputs clamp to the nearest endpoint.
    pub fn interpolate(&self, x: f64) -> f64 {
        let pts = &self.points;
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        if x <= first.0 {
            return first.1;
        }
        if x >= last.0 {
            return last.1;
        }
        // first index with xi > x; x lies in [pts[hi-1].x, pts[hi].x)
        let hi = pts.partition_point(|&(xi, _)| xi <= x);
        let (x1, y1) = pts[hi - 1];
        let (x2, y2) = pts[hi];
        match self.mode {
            InterpolationMode::LinearBracketing => {
                if x == x1 {
                    y1
                } else {
                    y1 + (y2 - y1) * (x - x1) / (x2 - x1)
                }
            }
            // ties go to the earlier record
            InterpolationMode::NearestRecord => {
                if x - x1 <= x2 - x {
                    y1
                } else {
                    y2
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lin(points: &[(f64, f64)]) -> InterpolationTable {
        InterpolationTable::new(points.to_vec(), InterpolationMode::LinearBracketing).unwrap()
    }

    #[test]
    fn linear_examples() {
        let t = lin(&[(0.0, 0.0), (10.0, 100.0)]);
        assert_eq!(t.interpolate(5.0), 50.0);
        assert_eq!(t.interpolate(10.0), 100.0);
        assert_eq!(t.interpolate(-3.0), 0.0);
        assert_eq!(t.interpolate(42.0), 100.0);
    }

    #[test]
    fn nearest_record_example() {
        let t = InterpolationTable::new(vec![(0.0, 5.0), (100.0, 8.0)], InterpolationMode::NearestRecord).unwrap();
        assert_eq!(t.interpolate(40.0), 5.0);
        assert_eq!(t.interpolate(60.0), 8.0);
    }

    #[test]
    fn empty_and_unordered_tables_are_rejected() {
        assert!(matches!(
            InterpolationTable::new(vec![], InterpolationMode::LinearBracketing),
            Err(SimError::Config(_))
        ));
        assert!(InterpolationTable::new(vec![(1.0, 0.0), (1.0, 2.0)], InterpolationMode::NearestRecord).is_err());
    }

    #[test]
    fn single_point_is_constant() {
        let t = lin(&[(3.0, 7.0)]);
        assert_eq!(t.interpolate(-100.0), 7.0);
        assert_eq!(t.interpolate(100.0), 7.0);
    }

    fn table_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.1f64..10.0, -100.0f64..100.0), 1..20).prop_map(|steps| {
            let mut x = 0.0;
            steps
                .into_iter()
                .map(|(dx, y)| {
                    x += dx;
                    (x, y)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn exact_at_nodes(points in table_strategy()) {
            for mode in [InterpolationMode::LinearBracketing, InterpolationMode::NearestRecord] {
                let t = InterpolationTable::new(points.clone(), mode).unwrap();
                for &(x, y) in &points {
                    prop_assert_eq!(t.interpolate(x), y);
                }
            }
        }

        #[test]
        fn monotone_tables_give_monotone_interpolants(
            steps in prop::collection::vec((0.1f64..10.0, 0.0f64..50.0), 2..20),
            probes in prop::collection::vec(0.0f64..1.0, 2..40),
        ) {
            let mut x = 0.0;
            let mut y = 0.0;
            let points: Vec<_> = steps.into_iter().map(|(dx, dy)| { x += dx; y += dy; (x, y) }).collect();
            let t = lin(&points);
            let span = points.last().unwrap().0 + 2.0;
            let mut xs: Vec<f64> = probes.iter().map(|p| p * span - 1.0).collect();
            xs.sort_by(f64::total_cmp);
            let ys: Vec<f64> = xs.iter().map(|&x| t.interpolate(x)).collect();
            for w in ys.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9);
            }
        }
    }
}
