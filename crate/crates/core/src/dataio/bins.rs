use serde::{Deserialize, Serialize};

use super::SurvivalRecord;
use crate::error::{Error, Result};

pub const NUM_BINS: usize = 4;

/// Interior cut points `t_1 < t_2 < t_3`; `t_0 = 0` and `t_4 = ∞` are implicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinCuts(pub [f64; 3]);

impl BinCuts {
    /// Quartiles of the given uncensored event times.
    pub fn from_event_times(times: &[f64]) -> Result<Self> {
        if times.len() < NUM_BINS {
            return Err(Error::Binning(format!(
                "need at least {NUM_BINS} uncensored patients, got {}",
                times.len()
            )));
        }
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self([
            percentile_linear(&sorted, 0.25),
            percentile_linear(&sorted, 0.50),
            percentile_linear(&sorted, 0.75),
        ]))
    }

    pub fn from_records(records: &[SurvivalRecord]) -> Result<Self> {
        let times: Vec<f64> = records
            .iter()
            .filter(|r| !r.censored)
            .map(|r| r.time)
            .collect();
        Self::from_event_times(&times)
    }

    /// Bin `r` with `t ∈ [t_r, t_{r+1})`.
    pub fn bin_of(&self, t: f64) -> usize {
        self.0.iter().take_while(|&&cut| t >= cut).count()
    }
}

/// Linear interpolation between order statistics at position `q·(n−1)`.
pub fn percentile_linear(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Computes cut points from the uncensored records and assigns every record
/// (censored or not) its bin.
pub fn assign_bins(records: &mut [SurvivalRecord]) -> Result<BinCuts> {
    let cuts = BinCuts::from_records(records)?;
    for r in records.iter_mut() {
        r.bin = Some(cuts.bin_of(r.time));
    }
    Ok(cuts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(time: f64, censored: bool) -> SurvivalRecord {
        SurvivalRecord {
            sample_id: format!("{time}"),
            time,
            censored,
            bin: None,
        }
    }

    #[test]
    fn quartile_cuts_by_linear_interpolation() {
        let mut records: Vec<_> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&t| rec(t, false))
            .collect();
        records.push(rec(2.5, true));
        records.push(rec(0.5, true));
        records.push(rec(9.0, true));
        let cuts = assign_bins(&mut records).unwrap();
        assert_eq!(cuts.0, [1.75, 2.5, 3.25]);
        assert_eq!(records[4].bin, Some(2));
        assert_eq!(records[5].bin, Some(0));
        assert_eq!(records[6].bin, Some(3));
    }

    #[test]
    fn too_few_events() {
        let mut records = vec![
            rec(1.0, false),
            rec(2.0, false),
            rec(3.0, false),
            rec(4.0, true),
        ];
        assert!(matches!(assign_bins(&mut records), Err(Error::Binning(_))));
    }

    proptest! {
        #[test]
        fn distinct_event_times_fill_bins_evenly(
            times in prop::collection::btree_set(1u32..100_000, 4..200)
        ) {
            let times: Vec<f64> = times.into_iter().map(|t| t as f64 / 7.0).collect();
            let cuts = BinCuts::from_event_times(&times).unwrap();
            let mut counts = [0usize; NUM_BINS];
            for &t in &times {
                counts[cuts.bin_of(t)] += 1;
            }
            let quarter = times.len() as f64 / 4.0;
            for c in counts {
                prop_assert!((c as f64 - quarter).abs() <= 1.0, "{counts:?}");
            }
        }
    }
}
