//! Discrete-time survival: fusion head, hazards, survival curve, likelihood
//! and the scalar risk score.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{SurvivalRecord, NUM_BINS};
use crate::error::{Error, Result};
use crate::numerics::{
    sigmoid, survival_curve, survival_nll_value, Graph, NodeId, ParamId, ParamStore,
};
use crate::vga::linear_init;

/// `[path CLS, genomic CLS]` (1 x 2d) → Linear(2d, 2d) → GELU → Linear(2d, 4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl SurvivalHead {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, d: usize) -> Self {
        let (w1, b1) = linear_init(store, rng, "head.fc1", 2 * d, 2 * d);
        let (w2, b2) = linear_init(store, rng, "head.fc2", 2 * d, NUM_BINS);
        Self { w1, b1, w2, b2 }
    }

    /// Hazard logits, 1 x 4.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fused: NodeId) -> Result<NodeId> {
        let [w1, b1, w2, b2] = [self.w1, self.b1, self.w2, self.b2].map(|id| g.param(store, id));
        let h = g.matmul(fused, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.gelu(h);
        let h = g.matmul(h, w2)?;
        g.add_row(h, b2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardProfile {
    pub logits: [f64; NUM_BINS],
    pub hazards: [f64; NUM_BINS],
    pub survival: [f64; NUM_BINS],
    /// `−Σ_r S(r)`; larger means worse prognosis.
    pub risk: f64,
}

/// Sigmoid hazards and `S(r) = Π_{u≤r} (1 − h(u))` from 4 logits.
pub fn hazards(logits: &[f64]) -> Result<HazardProfile> {
    let logits: [f64; NUM_BINS] = logits.try_into().map_err(|_| {
        Error::Loss(format!(
            "expected {NUM_BINS} hazard logits, got {}",
            logits.len()
        ))
    })?;
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Loss("non-finite hazard logit".into()));
    }
    let s = survival_curve(&logits);
    let survival: [f64; NUM_BINS] = s.try_into().expect("one entry per bin");
    Ok(HazardProfile {
        logits,
        hazards: logits.map(sigmoid),
        survival,
        risk: -survival.iter().sum::<f64>(),
    })
}

/// `−log S(Y)` when censored, `−log S(Y−1) − log h(Y)` otherwise, with
/// `S(−1) = 1` and log arguments floored at 1e-12.
pub fn nll_loss(profile: &HazardProfile, record: &SurvivalRecord) -> Result<f64> {
    let bin = record
        .bin
        .ok_or_else(|| Error::Loss(format!("{} has no survival bin assigned", record.sample_id)))?;
    if bin >= NUM_BINS {
        return Err(Error::Loss(format!("bin {bin} out of range")));
    }
    Ok(survival_nll_value(&profile.logits, bin, record.censored))
}

/// Tab-separated `sample_id, risk, bin, censor, time` rows.
pub fn risk_table_text(rows: &[(SurvivalRecord, f64)]) -> String {
    let mut s = String::from("sample_id\trisk\tbin\tcensor\ttime\n");
    for (r, risk) in rows {
        let bin = r.bin.map_or_else(|| "-".to_string(), |b| b.to_string());
        s.push_str(&format!(
            "{}\t{risk}\t{bin}\t{}\t{}\n",
            r.sample_id,
            u8::from(r.censored),
            r.time
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, seeded};
    use proptest::prelude::*;

    fn record(bin: usize, censored: bool) -> SurvivalRecord {
        SurvivalRecord {
            sample_id: "p".into(),
            time: 1.0,
            censored,
            bin: Some(bin),
        }
    }

    #[test]
    fn zero_logits_reference() {
        let p = hazards(&[0.0; 4]).unwrap();
        assert_eq!(p.hazards, [0.5; 4]);
        for (s, e) in p.survival.iter().zip([0.5, 0.25, 0.125, 0.0625]) {
            assert!((s - e).abs() < 1e-12);
        }
        assert!((p.risk + 0.9375).abs() < 1e-12);
    }

    #[test]
    fn no_hazard_limit() {
        let p = hazards(&[-50.0; 4]).unwrap();
        assert!(p.hazards.iter().all(|&h| h < 1e-20));
        assert!(p.survival.iter().all(|&s| (s - 1.0).abs() < 1e-20));
        assert!((p.risk + 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_term_likelihoods() {
        let p = hazards(&[0.0, 1.0, -1.0, 2.0]).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((nll_loss(&p, &record(0, true)).unwrap() - ln2).abs() < 1e-12);
        assert!((nll_loss(&p, &record(0, false)).unwrap() - ln2).abs() < 1e-12);
        let unassigned = SurvivalRecord {
            bin: None,
            ..record(0, true)
        };
        assert!(matches!(nll_loss(&p, &unassigned), Err(Error::Loss(_))));
    }

    #[test]
    fn likelihood_matches_direct_product_form() {
        let p = hazards(&[0.3, -0.7, 1.1, 0.2]).unwrap();
        for bin in 0..4 {
            let prev = if bin == 0 { 1.0 } else { p.survival[bin - 1] };
            let uncensored = -prev.ln() - p.hazards[bin].ln();
            let censored = -p.survival[bin].ln();
            assert!((nll_loss(&p, &record(bin, false)).unwrap() - uncensored).abs() < 1e-12);
            assert!((nll_loss(&p, &record(bin, true)).unwrap() - censored).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_event_hazard_lowers_loss() {
        let base = [0.1, -0.4, 0.3, 0.0];
        for bin in 0..4 {
            let mut up = base;
            up[bin] += 0.5;
            let a = nll_loss(&hazards(&base).unwrap(), &record(bin, false)).unwrap();
            let b = nll_loss(&hazards(&up).unwrap(), &record(bin, false)).unwrap();
            assert!(b < a);
        }
    }

    #[test]
    fn risk_table_layout() {
        let text = risk_table_text(&[(record(2, true), -1.5)]);
        assert_eq!(
            text,
            "sample_id\trisk\tbin\tcensor\ttime\np\t-1.5\t2\t1\t1\n"
        );
    }

    #[test]
    fn head_outputs_four_logits() {
        let mut store = ParamStore::new();
        let head = SurvivalHead::init(&mut store, &mut seeded(1), 3);
        let mut g = Graph::new();
        let x = g.constant(normal_matrix(&mut seeded(2), 1, 6, 1.0));
        let logits = head.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(logits).shape(), (1, NUM_BINS));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn likelihood_finite_and_positive(
            logits in prop::array::uniform4(-30.0f64..30.0),
            bin in 0usize..4,
            censored in any::<bool>(),
        ) {
            let p = hazards(&logits).unwrap();
            let l = nll_loss(&p, &record(bin, censored)).unwrap();
            prop_assert!(l.is_finite() && l >= 0.0);
            // strictly positive unless the likelihood saturates in f64
            prop_assert!(l > 0.0 || p.survival[bin] == 1.0 || p.hazards[bin] == 1.0);
        }

        #[test]
        fn survival_is_ordered(logits in prop::array::uniform4(-8.0f64..8.0)) {
            let s = hazards(&logits).unwrap().survival;
            prop_assert!(s[3] > 0.0 && s[0] < 1.0);
            prop_assert!(s[3] < s[2] && s[2] < s[1] && s[1] < s[0]);
        }
    }
}
