//! Survival evaluation: concordance, median-risk stratification,
//! Kaplan–Meier curves and the two-group logrank test.

use std::fmt::Write as _;

use crate::error::{Error, Result};

fn check_lengths(n: usize, others: &[usize]) -> Result<()> {
    if others.iter().any(|&m| m != n) {
        return Err(Error::UndefinedMetric(format!(
            "input lengths differ: {n} vs {others:?}"
        )));
    }
    Ok(())
}

/// Counts behind a concordance index, kept in half-units so the ratio is
/// exact: `2·concordant + tied` over `2·comparable`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub numerator: u64,
    pub denominator: u64,
}

impl ConcordanceCounts {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

/// Fenwick tree over risk ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's comparable pairs: `i` had the event and `t_i < t_j`. Pairs are
/// concordant when `risk_i > risk_j`, and count one half when the risks tie.
pub fn concordance_counts(
    risks: &[f64],
    times: &[f64],
    censored: &[bool],
) -> Result<ConcordanceCounts> {
    let n = risks.len();
    check_lengths(n, &[times.len(), censored.len()])?;
    if risks.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite risk or time".into()));
    }
    let mut sorted_risks = risks.to_vec();
    sorted_risks.sort_by(f64::total_cmp);
    sorted_risks.dedup();
    let rank = |r: f64| sorted_risks.partition_point(|&v| v < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick(vec![0; sorted_risks.len() + 1]);
    let mut inserted = 0u64;
    let mut counts = ConcordanceCounts::default();
    let mut start = 0;
    while start < n {
        let t = times[order[start]];
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| times[i] == t)
                .count();
        // the tree holds exactly the patients with later times
        for &i in &order[start..end] {
            if !censored[i] {
                let r = rank(risks[i]);
                let below = tree.prefix(r);
                let tied = tree.prefix(r + 1) - below;
                counts.numerator += 2 * below + tied;
                counts.denominator += 2 * inserted;
            }
        }
        for &i in &order[start..end] {
            tree.add(rank(risks[i]));
            inserted += 1;
        }
        start = end;
    }
    if counts.denominator == 0 {
        return Err(Error::UndefinedMetric("no comparable pairs".into()));
    }
    Ok(counts)
}

pub fn concordance_index(risks: &[f64], times: &[f64], censored: &[bool]) -> Result<f64> {
    Ok(concordance_counts(risks, times, censored)?.value())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratification {
    /// `true` for the high-risk group.
    pub high: Vec<bool>,
    pub median: f64,
    /// Set when nobody lands in the high-risk group.
    pub degenerate: bool,
}

/// Splits at the lower median; risks equal to it go to the low group.
pub fn stratify_by_median(risks: &[f64]) -> Result<Stratification> {
    if risks.len() < 2 {
        return Err(Error::UndefinedMetric(
            "stratification needs at least 2 patients".into(),
        ));
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(sorted.len() - 1) / 2];
    let high: Vec<bool> = risks.iter().map(|&r| r > median).collect();
    let degenerate = !high.iter().any(|&h| h);
    Ok(Stratification {
        high,
        median,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmCurve {
    /// `0` followed by each distinct event time, ascending.
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    pub fn to_text(&self, group: &str) -> String {
        let mut s = String::new();
        for i in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{group}\t{}\t{}\t{}",
                self.times[i], self.survival[i], self.at_risk[i]
            );
        }
        s
    }
}

/// Product-limit estimator. Censored patients stay at risk at their own time.
pub fn kaplan_meier(times: &[f64], censored: &[bool]) -> Result<KmCurve> {
    check_lengths(times.len(), &[censored.len()])?;
    if times.is_empty() {
        return Err(Error::UndefinedMetric(
            "Kaplan-Meier needs at least one patient".into(),
        ));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut curve = KmCurve {
        times: vec![0.0],
        survival: vec![1.0],
        at_risk: vec![times.len()],
        events: vec![0],
    };
    let mut s = 1.0;
    let mut remaining = times.len();
    let mut start = 0;
    while start < order.len() {
        let t = times[order[start]];
        let group = order[start..]
            .iter()
            .take_while(|&&i| times[i] == t)
            .count();
        let d = order[start..start + group]
            .iter()
            .filter(|&&i| !censored[i])
            .count();
        if d > 0 {
            s *= 1.0 - d as f64 / remaining as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(remaining);
            curve.events.push(d);
        }
        remaining -= group;
        start += group;
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogrankResult {
    pub chi2: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
    pub variance: f64,
}

/// Two-group logrank test with hypergeometric variance; `p` from the
/// chi-square (1 df) upper tail.
pub fn logrank_test(
    times_a: &[f64],
    censored_a: &[bool],
    times_b: &[f64],
    censored_b: &[bool],
) -> Result<LogrankResult> {
    check_lengths(times_a.len(), &[censored_a.len()])?;
    check_lengths(times_b.len(), &[censored_b.len()])?;
    let mut event_times: Vec<f64> = times_a
        .iter()
        .zip(censored_a)
        .chain(times_b.iter().zip(censored_b))
        .filter(|(_, &c)| !c)
        .map(|(&t, _)| t)
        .collect();
    if event_times.is_empty() {
        return Err(Error::DegenerateTest("no events in either group".into()));
    }
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();

    let at_risk = |times: &[f64], t: f64| times.iter().filter(|&&x| x >= t).count() as f64;
    let events = |times: &[f64], cens: &[bool], t: f64| {
        times
            .iter()
            .zip(cens)
            .filter(|(&x, &c)| x == t && !c)
            .count() as f64
    };
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for &t in &event_times {
        let na = at_risk(times_a, t);
        let nb = at_risk(times_b, t);
        let da = events(times_a, censored_a, t);
        let d = da + events(times_b, censored_b, t);
        let n = na + nb;
        observed += da;
        expected += d * na / n;
        if n > 1.0 {
            variance += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
        }
    }
    if variance <= 0.0 {
        return Err(Error::DegenerateTest(
            "zero variance in logrank statistic".into(),
        ));
    }
    let chi2 = (observed - expected).powi(2) / variance;
    Ok(LogrankResult {
        chi2,
        p_value: chi_square_sf(chi2, 1.0),
        observed_a: observed,
        expected_a: expected,
        variance,
    })
}

/// Upper tail of the chi-square distribution with `k` degrees of freedom.
pub fn chi_square_sf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    regularized_gamma_q(0.5 * k, 0.5 * x)
}

const GAMMA_TOL: f64 = 1e-15;
const GAMMA_MAX_ITERS: usize = 10_000;

/// `Q(a, x) = Γ(a, x) / Γ(a)`: series for `x < a + 1`, Lentz continued
/// fraction otherwise.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - libm::lgamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..GAMMA_MAX_ITERS {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * GAMMA_TOL {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..GAMMA_MAX_ITERS {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < GAMMA_TOL {
                break;
            }
        }
        log_prefix.exp() * h
    }
}

/// Median split, both Kaplan–Meier curves and the logrank test, as text.
pub fn stratified_report(risks: &[f64], times: &[f64], censored: &[bool]) -> Result<String> {
    check_lengths(risks.len(), &[times.len(), censored.len()])?;
    let strat = stratify_by_median(risks)?;
    let pick = |high: bool| -> (Vec<f64>, Vec<bool>) {
        (0..risks.len())
            .filter(|&i| strat.high[i] == high)
            .map(|i| (times[i], censored[i]))
            .unzip()
    };
    let (tl, cl) = pick(false);
    let (th, ch) = pick(true);
    let mut s = String::new();
    let _ = writeln!(s, "# median risk {}", strat.median);
    let _ = writeln!(s, "group\ttime\tsurvival\tat_risk");
    s.push_str(&kaplan_meier(&tl, &cl)?.to_text("low"));
    if !th.is_empty() {
        s.push_str(&kaplan_meier(&th, &ch)?.to_text("high"));
    }
    match logrank_test(&tl, &cl, &th, &ch) {
        Ok(lr) => {
            let _ = writeln!(s, "# logrank chi2 {} p {}", lr.chi2, lr.p_value);
        }
        Err(e) => {
            let _ = writeln!(s, "# logrank unavailable: {e}");
        }
    }
    Ok(s)
}

/// `mean ± std` (population std) of the values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn format_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.4} ± {s:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::cmp::Ordering;

    fn brute_force(risks: &[f64], times: &[f64], censored: &[bool]) -> Option<f64> {
        let (mut num, mut den) = (0u64, 0u64);
        for i in 0..risks.len() {
            for j in 0..risks.len() {
                if !censored[i] && times[i] < times[j] {
                    den += 2;
                    num += match risks[i].partial_cmp(&risks[j]).unwrap() {
                        Ordering::Greater => 2,
                        Ordering::Equal => 1,
                        Ordering::Less => 0,
                    };
                }
            }
        }
        (den > 0).then(|| num as f64 / den as f64)
    }

    #[test]
    fn concordance_reference_cases() {
        let times = [1.0, 2.0, 3.0, 4.0];
        let none = [false; 4];
        assert_eq!(
            concordance_index(&[4.0, 3.0, 2.0, 1.0], &times, &none).unwrap(),
            1.0
        );
        assert_eq!(concordance_index(&[1.0; 4], &times, &none).unwrap(), 0.5);
        assert!(matches!(
            concordance_index(&[1.0, 2.0], &[1.0, 2.0], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn concordance_matches_brute_force_with_ties() {
        for seed in 0..50u64 {
            let mut rng = seeded(seed);
            let n = 50;
            // coarse values force ties in both risks and times
            let risks: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64).collect();
            let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..15) as f64).collect();
            let cens: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            assert_eq!(
                concordance_index(&risks, &times, &cens).ok(),
                brute_force(&risks, &times, &cens)
            );
        }
    }

    #[test]
    fn stratification_cases() {
        let s = stratify_by_median(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.high, vec![false, false, true, true]);
        let s = stratify_by_median(&[2.0, 1.0, 3.0]).unwrap();
        assert_eq!(s.high, vec![false, false, true]);
        let s = stratify_by_median(&[5.0; 4]).unwrap();
        assert!(s.degenerate && s.high.iter().all(|&h| !h));
    }

    #[test]
    fn kaplan_meier_hand_cases() {
        let flat = kaplan_meier(&[1.0, 2.0], &[true, true]).unwrap();
        assert_eq!(flat.survival, vec![1.0]);

        let c = kaplan_meier(&[1.0, 2.0, 3.0], &[false; 3]).unwrap();
        assert_eq!(c.times, vec![0.0, 1.0, 2.0, 3.0]);
        let expect = [1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (s, e) in c.survival.iter().zip(expect) {
            assert!((s - e).abs() < 1e-15);
        }

        let c = kaplan_meier(&[3.0, 1.0, 2.0], &[false, false, true]).unwrap();
        assert_eq!(c.times, vec![0.0, 1.0, 3.0]);
        assert!((c.survival[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.survival[2], 0.0);
        assert_eq!(c.at_risk, vec![3, 3, 1]);
    }

    #[test]
    fn logrank_reference_cases() {
        let t = [1.0, 2.0, 3.0, 5.0];
        let c = [false, true, false, false];
        let same = logrank_test(&t, &c, &t, &c).unwrap();
        assert_eq!(same.chi2, 0.0);
        assert_eq!(same.p_value, 1.0);

        let a = logrank_test(&[1.0; 20], &[false; 20], &[10.0; 20], &[false; 20]).unwrap();
        assert!((a.chi2 - 39.0).abs() < 1e-12);
        // erfc(sqrt(39/2)), mpmath
        assert!((a.p_value - 4.238_055_426_079_458_127_8e-10).abs() < 1e-20);
        assert!(a.p_value < 1e-3);
        let b = logrank_test(&[10.0; 20], &[false; 20], &[1.0; 20], &[false; 20]).unwrap();
        assert_eq!(a.chi2, b.chi2);
        assert_eq!(a.p_value, b.p_value);

        assert!(matches!(
            logrank_test(&[1.0], &[false], &[], &[]),
            Err(Error::DegenerateTest(_))
        ));
    }

    #[test]
    fn chi_square_tail_agrees_with_independent_oracles() {
        for &x in &[
            1e-6,
            0.01,
            0.5,
            1.0,
            2.5,
            3.841_458_820_694_124,
            10.0,
            39.0,
            80.0,
        ] {
            let ours = chi_square_sf(x, 1.0);
            let erfc = libm::erfc((x / 2.0).sqrt());
            assert!(
                (ours - erfc).abs() <= 1e-10 * erfc.max(1e-300) + 1e-15,
                "x={x}"
            );
            for k in [1.0, 2.0, 5.0] {
                let reference = 1.0 - ChiSquared::new(k).unwrap().cdf(x);
                let ours = chi_square_sf(x, k);
                if reference > 1e-6 {
                    assert!(
                        (ours - reference).abs() < 1e-10,
                        "x={x} k={k}: {ours} vs {reference}"
                    );
                }
            }
        }
        assert!((chi_square_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn report_contains_both_groups() {
        let risks = [0.1, 0.2, 0.9, 1.0];
        let times = [5.0, 6.0, 1.0, 2.0];
        let text = stratified_report(&risks, &times, &[false; 4]).unwrap();
        assert!(text.contains("\nlow\t") && text.contains("\nhigh\t"));
        assert!(text.contains("# logrank chi2"));
    }

    #[test]
    fn mean_std_format() {
        assert_eq!(format_mean_std(&[0.5, 0.7]), "0.6000 ± 0.1000");
    }

    proptest! {
        #[test]
        fn concordance_of_negated_risks_is_complement(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let n = 30;
            let risks: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
            let cens: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            let neg: Vec<f64> = risks.iter().map(|r| -r).collect();
            if let Ok(c) = concordance_index(&risks, &times, &cens) {
                let d = concordance_index(&neg, &times, &cens).unwrap();
                prop_assert!((c + d - 1.0).abs() < 1e-12);
                let mono: Vec<f64> = risks.iter().map(|r| (3.0 * r).exp()).collect();
                prop_assert_eq!(concordance_index(&mono, &times, &cens).unwrap(), c);
            }
        }

        #[test]
        fn kaplan_meier_ignores_input_order(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let n = 25;
            let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..8) as f64).collect();
            let cens: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            let rev_t: Vec<f64> = times.iter().rev().copied().collect();
            let rev_c: Vec<bool> = cens.iter().rev().copied().collect();
            prop_assert_eq!(kaplan_meier(&times, &cens).unwrap(), kaplan_meier(&rev_t, &rev_c).unwrap());
        }

        #[test]
        fn logrank_is_a_probability(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let ta: Vec<f64> = (0..15).map(|_| rng.random_range(1..10) as f64).collect();
            let tb: Vec<f64> = (0..15).map(|_| rng.random_range(1..10) as f64).collect();
            let ca: Vec<bool> = (0..15).map(|_| rng.random_bool(0.3)).collect();
            let cb: Vec<bool> = (0..15).map(|_| rng.random_bool(0.3)).collect();
            if let Ok(r) = logrank_test(&ta, &ca, &tb, &cb) {
                prop_assert!(r.chi2 >= 0.0);
                prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
            }
        }
    }
}
