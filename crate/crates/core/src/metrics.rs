//! Assessment metrics and difficulty-validation statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verification::Classification;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no scored questions")]
    EmptyRun,
    #[error("average difficulty reference must be positive")]
    MissingCalibration,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("at least 3 points are needed, got {0}")]
    TooShort(usize),
    #[error("a series is constant")]
    DegenerateInput,
}

/// What the metrics need from one verified question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuestion {
    pub question_index: usize,
    pub classification: Classification,
    pub points: u8,
    /// Incorrect facts; zero unless aligned.
    pub incorrect_facts: u8,
    pub q_d: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaluDokDenominator {
    /// Three facts per aligned response.
    #[default]
    Aligned,
    /// Three facts per question.
    AllResponses,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub aligned: usize,
    pub hallucinated: usize,
    pub abstained: usize,
    pub correct_facts: usize,
    pub incorrect_facts: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub n_questions: usize,
    pub accuracy: f64,
    pub weighted_accuracy: f64,
    /// Set when the uncapped weighted accuracy exceeded 100.
    pub weighted_accuracy_capped: bool,
    pub assessment_qd: f64,
    pub avg_qd_reference: f64,
    pub abstain_rate: f64,
    /// Absent when every response abstained.
    pub halu_bok: Option<f64>,
    /// Absent when no response was aligned.
    pub halu_dok: Option<f64>,
    /// Percent of aligned responses with 0, 1, 2 and 3 incorrect facts.
    pub fact_halu_distribution: Option<[f64; 4]>,
    /// Percent aligned, hallucinated, abstained.
    pub classification_distribution: [f64; 3],
    pub counts: Counts,
}

pub fn accuracy(points: &[u8]) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    let total: u64 = points.iter().map(|p| *p as u64).sum();
    Ok(100.0 * total as f64 / (3 * points.len()) as f64)
}

/// Weighted accuracy and whether the cap at 100 applied.
pub fn weighted_accuracy(
    accuracy: f64,
    assessment_qd: f64,
    avg_qd_reference: f64,
) -> Result<(f64, bool), MetricsError> {
    if avg_qd_reference.is_nan() || avg_qd_reference <= 0.0 {
        return Err(MetricsError::MissingCalibration);
    }
    let wa = accuracy * assessment_qd / avg_qd_reference;
    Ok(if wa > 100.0 { (100.0, true) } else { (wa, false) })
}

pub fn halu_bok(total: usize, hallucinated: usize, abstained: usize) -> Option<f64> {
    let answered = total.checked_sub(abstained)?;
    (answered > 0).then(|| 100.0 * hallucinated as f64 / answered as f64)
}

pub fn halu_dok(incorrect_facts: usize, responses: usize) -> Option<f64> {
    (responses > 0).then(|| 100.0 * incorrect_facts as f64 / (3 * responses) as f64)
}

fn percent(part: usize, whole: usize) -> f64 {
    100.0 * part as f64 / whole as f64
}

/// Folds the records in question order, so the result does not depend on
/// the order they are passed in.
pub fn compute_report(
    records: &[ScoredQuestion],
    avg_qd_reference: f64,
    denominator: HaluDokDenominator,
) -> Result<AssessmentReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.question_index);

    let mut counts = Counts::default();
    let mut fact_hist = [0usize; 4];
    let mut qd_sum = 0.0;
    for r in &sorted {
        counts.points += r.points as usize;
        qd_sum += r.q_d;
        match r.classification {
            Classification::Aligned => {
                counts.aligned += 1;
                counts.incorrect_facts += r.incorrect_facts as usize;
                counts.correct_facts += 3 - r.incorrect_facts as usize;
                fact_hist[r.incorrect_facts.min(3) as usize] += 1;
            }
            Classification::Hallucinated => counts.hallucinated += 1,
            Classification::Abstained => counts.abstained += 1,
        }
    }
    let n = sorted.len();
    let points: Vec<u8> = sorted.iter().map(|r| r.points).collect();
    let acc = accuracy(&points)?;
    let assessment_qd = qd_sum / n as f64;
    let (wa, capped) = weighted_accuracy(acc, assessment_qd, avg_qd_reference)?;
    let dok_base = match denominator {
        HaluDokDenominator::Aligned => counts.aligned,
        HaluDokDenominator::AllResponses => n,
    };
    Ok(AssessmentReport {
        n_questions: n,
        accuracy: acc,
        weighted_accuracy: wa,
        weighted_accuracy_capped: capped,
        assessment_qd,
        avg_qd_reference,
        abstain_rate: percent(counts.abstained, n),
        halu_bok: halu_bok(n, counts.hallucinated, counts.abstained),
        halu_dok: if counts.aligned == 0 {
            None
        } else {
            halu_dok(counts.incorrect_facts, dok_base)
        },
        fact_halu_distribution: (counts.aligned > 0).then(|| fact_hist.map(|c| percent(c, counts.aligned))),
        classification_distribution: [
            percent(counts.aligned, n),
            percent(counts.hallucinated, n),
            percent(counts.abstained, n),
        ],
        counts,
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in &order[i..=j] {
            ranks[*k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Counts inversions while merge-sorting `v`.
fn count_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid], buf) + count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Tied pairs among runs of equal adjacent items.
fn tied_pairs<T: PartialEq>(items: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in items.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Kendall's tau-b in O(n log n).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tx = tied_pairs(&xs);
    let txy = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = count_swaps(&mut ys, &mut buf);
    let ty = tied_pairs(&ys);
    let n0 = n * (n - 1) / 2;
    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    if denom == 0.0 {
        return None;
    }
    // concordant - discordant = n0 - tx - ty + txy - 2 * swaps
    let s = n0 as f64 - tx as f64 - ty as f64 + txy as f64 - 2.0 * swaps as f64;
    Some((s / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelations {
    pub spearman_rho: f64,
    pub kendall_tau: f64,
}

pub fn rank_correlations(estimated: &[f64], realized: &[f64]) -> Result<RankCorrelations, MetricsError> {
    if estimated.len() != realized.len() {
        return Err(MetricsError::LengthMismatch(estimated.len(), realized.len()));
    }
    if estimated.len() < 3 {
        return Err(MetricsError::TooShort(estimated.len()));
    }
    let rho = pearson(&average_ranks(estimated), &average_ranks(realized)).ok_or(MetricsError::DegenerateInput)?;
    let tau = kendall_tau_b(estimated, realized).ok_or(MetricsError::DegenerateInput)?;
    Ok(RankCorrelations {
        spearman_rho: rho,
        kendall_tau: tau,
    })
}

/// Mean and population standard deviation of the present values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std_dev: f64,
    pub runs: usize,
}

pub fn spread(values: impl IntoIterator<Item = Option<f64>>) -> Option<Spread> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some(Spread {
        mean,
        std_dev: var.sqrt(),
        runs: v.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(i: usize, c: Classification, incorrect: u8) -> ScoredQuestion {
        let points = match c {
            Classification::Aligned => 3 - incorrect,
            Classification::Hallucinated => 0,
            Classification::Abstained => 1,
        };
        ScoredQuestion {
            question_index: i,
            classification: c,
            points,
            incorrect_facts: if c == Classification::Aligned { incorrect } else { 0 },
            q_d: 0.5,
        }
    }

    #[test]
    fn accuracy_examples() {
        assert!((accuracy(&[3, 1]).unwrap() - 400.0 / 6.0).abs() < 1e-12);
        assert_eq!(accuracy(&[3, 3, 3]).unwrap(), 100.0);
        assert_eq!(accuracy(&[0, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[]), Err(MetricsError::EmptyRun));
    }

    #[test]
    fn weighted_accuracy_examples() {
        assert_eq!(weighted_accuracy(42.0, 0.5, 0.5).unwrap(), (42.0, false));
        let (wa, capped) = weighted_accuracy(50.0, 0.6, 0.5).unwrap();
        assert!((wa - 60.0).abs() < 1e-12 && !capped);
        assert_eq!(weighted_accuracy(95.0, 0.6, 0.5).unwrap(), (100.0, true));
        assert_eq!(weighted_accuracy(95.0, 0.6, 0.0), Err(MetricsError::MissingCalibration));
    }

    #[test]
    fn rate_examples() {
        assert_eq!(halu_bok(10, 2, 2), Some(25.0));
        assert_eq!(halu_bok(10, 0, 2), Some(0.0));
        assert_eq!(halu_bok(10, 8, 2), Some(100.0));
        assert_eq!(halu_bok(3, 0, 3), None);
        assert_eq!(halu_dok(3, 4), Some(25.0));
        assert_eq!(halu_dok(0, 4), Some(0.0));
        assert_eq!(halu_dok(12, 4), Some(100.0));
        assert_eq!(halu_dok(0, 0), None);
    }

    #[test]
    fn distribution_examples() {
        use Classification::*;
        let r = compute_report(
            &[q(0, Aligned, 0), q(1, Aligned, 2), q(2, Abstained, 0)],
            0.5,
            HaluDokDenominator::Aligned,
        )
        .unwrap();
        let c = r.classification_distribution;
        assert!((c[0] - 200.0 / 3.0).abs() < 1e-9 && c[1] == 0.0 && (c[2] - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(r.fact_halu_distribution, Some([50.0, 0.0, 50.0, 0.0]));
        let r = compute_report(
            &[q(0, Abstained, 0), q(1, Abstained, 0)],
            0.5,
            HaluDokDenominator::Aligned,
        )
        .unwrap();
        assert_eq!(r.classification_distribution, [0.0, 0.0, 100.0]);
        assert_eq!(r.fact_halu_distribution, None);
        assert_eq!(r.halu_bok, None);
        assert_eq!(r.halu_dok, None);
        let r = compute_report(&[q(0, Aligned, 3)], 0.5, HaluDokDenominator::Aligned).unwrap();
        assert_eq!(r.fact_halu_distribution, Some([0.0, 0.0, 0.0, 100.0]));
    }

    #[test]
    fn all_responses_denominator() {
        use Classification::*;
        let recs = [q(0, Aligned, 3), q(1, Hallucinated, 0)];
        assert_eq!(
            compute_report(&recs, 0.5, HaluDokDenominator::Aligned)
                .unwrap()
                .halu_dok,
            Some(100.0)
        );
        assert_eq!(
            compute_report(&recs, 0.5, HaluDokDenominator::AllResponses)
                .unwrap()
                .halu_dok,
            Some(50.0)
        );
    }

    #[test]
    fn rank_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let inv = [5.0, 4.0, 3.0, 2.0, 1.0];
        let r = rank_correlations(&x, &inv).unwrap();
        assert!((r.spearman_rho + 1.0).abs() < 1e-12 && (r.kendall_tau + 1.0).abs() < 1e-12);
        let r = rank_correlations(&x, &[10.0, 20.0, 30.0, 40.0, 50.0]).unwrap();
        assert!((r.spearman_rho - 1.0).abs() < 1e-12 && (r.kendall_tau - 1.0).abs() < 1e-12);
        assert_eq!(rank_correlations(&x, &[1.0; 5]), Err(MetricsError::DegenerateInput));
        assert_eq!(rank_correlations(&x[..2], &x[..2]), Err(MetricsError::TooShort(2)));
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn kendall_with_ties_matches_hand_count() {
        // x = [1,1,2,3], y = [1,2,2,3]; pairs: (0,1) tie x, (0,2) C, (0,3) C,
        // (1,2) tie y, (1,3) C, (2,3) C -> nc=4, nd=0, n0=6, tx=1, ty=1
        let tau = kendall_tau_b(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert!((tau - 4.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn spread_is_population() {
        let s = spread([Some(2.0), None, Some(4.0)]).unwrap();
        assert_eq!((s.mean, s.std_dev, s.runs), (3.0, 1.0, 2));
        assert!(spread([None]).is_none());
    }

    proptest! {
        #[test]
        fn report_is_order_invariant(kinds in proptest::collection::vec((0u8..3, 0u8..4, 0.01f64..1.0), 1..40), seed in any::<u64>()) {
            let recs: Vec<_> = kinds.iter().enumerate().map(|(i, (k, inc, qd))| {
                let c = [Classification::Aligned, Classification::Hallucinated, Classification::Abstained][*k as usize];
                ScoredQuestion { q_d: *qd, ..q(i, c, *inc) }
            }).collect();
            let mut shuffled = recs.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                let j = (crate::backends::mock::splitmix64(&mut s) % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            let a = compute_report(&recs, 0.5, HaluDokDenominator::Aligned).unwrap();
            let b = compute_report(&shuffled, 0.5, HaluDokDenominator::Aligned).unwrap();
            prop_assert_eq!(&a, &b);
            let c = a.counts;
            prop_assert_eq!(c.points, c.correct_facts + c.abstained);
            prop_assert_eq!(c.incorrect_facts + c.correct_facts, 3 * c.aligned);
        }
    }
}
