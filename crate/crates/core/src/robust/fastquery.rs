//! Candidate filtering on a wide side CountSketch, then the robust query on the candidates only.
//!
//! The filter is the basic sign-alignment estimator; it stands in for a sublinear
//! heavy-hitter query structure.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::AlignmentCounts;
use crate::sketch::{init_sketch, SketchParams, SketchRandomness, SketchState, SketchVariant, SparseVector};

use super::{RobustEstimatorState, RobustReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastQueryConfig {
    pub filter_k: usize,
    /// Rows of the side sketch; each row has width (C_a + 1) b.
    pub side_rows: usize,
    pub side_seed: u64,
}

pub struct FastQueryVariant {
    side: SketchRandomness,
    robust: RobustEstimatorState,
    config: FastQueryConfig,
}

impl FastQueryVariant {
    pub fn new(robust: RobustEstimatorState, config: FastQueryConfig) -> Result<Self> {
        let p = robust.rand().params();
        let width = ((robust.constants().c_a + 1.0) * p.b as f64).round() as usize;
        let side_params = SketchParams::new(p.n, width * config.side_rows.max(1), width)?;
        let side = init_sketch(SketchVariant::CountSketch, side_params, config.side_seed)?;
        Ok(FastQueryVariant { side, robust, config })
    }

    pub fn side(&self) -> &SketchRandomness {
        &self.side
    }

    pub fn robust(&self) -> &RobustEstimatorState {
        &self.robust
    }

    pub fn robust_mut(&mut self) -> &mut RobustEstimatorState {
        &mut self.robust
    }

    /// Sketches `v` under both the main and the side randomness.
    pub fn sketch(&self, v: &SparseVector) -> Result<(SketchState, SketchState)> {
        Ok((self.robust.rand().sketch_vector(v)?, self.side.sketch_vector(v)?))
    }

    /// Up to `filter_k` keys with max(p-hat+, p-hat-) >= tau_a on the side sketch, best first.
    pub fn candidates(&self, side_state: &SketchState, universe: impl IntoIterator<Item = u64>) -> Result<Vec<u64>> {
        side_state.check(&self.side)?;
        let dob = self.side.params().d_over_b();
        let tau_a = self.robust.constants().tau_a;
        let mut scored = Vec::new();
        for key in universe {
            let a = AlignmentCounts::from_entries(side_state, &self.side.entries(key)?);
            let p = a.p_hat(1, dob).max(a.p_hat(-1, dob));
            if p >= tau_a {
                scored.push((key, p));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(self.config.filter_k);
        Ok(scored.into_iter().map(|(k, _)| k).collect())
    }

    pub fn query(
        &mut self,
        main_state: &SketchState,
        side_state: &SketchState,
        universe: impl IntoIterator<Item = u64>,
    ) -> Result<(RobustReport, Vec<u64>)> {
        let cands = self.candidates(side_state, universe)?;
        let report = self.robust.robust_threshold_query(main_state, cands.iter().copied())?;
        Ok((report, cands))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::ZeroNoise;
    use crate::estimators::EstimatorConstants;
    use crate::robust::RobustConfig;

    #[test]
    fn single_key_through_candidates() {
        let r = init_sketch(SketchVariant::BCountSketch, SketchParams::new(10_000, 800, 8).unwrap(), 1).unwrap();
        let cfg = RobustConfig::new(EstimatorConstants::relaxed(0.6, 0.9), 1000, 100);
        let rs = RobustEstimatorState::new(r, cfg, Box::new(ZeroNoise)).unwrap();
        let mut fq = FastQueryVariant::new(
            rs,
            FastQueryConfig {
                filter_k: 4,
                side_rows: 5,
                side_seed: 2,
            },
        )
        .unwrap();
        assert_eq!(fq.side().b(), 408);
        let v = SparseVector::unit(1234, 9.0);
        let (main, side) = fq.sketch(&v).unwrap();
        let (rep, cands) = fq.query(&main, &side, 0..10_000).unwrap();
        assert_eq!(cands, vec![1234]);
        assert!(rep.keys.is_subset(&[1234].into()));
    }
}
