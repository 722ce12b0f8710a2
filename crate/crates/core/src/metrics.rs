//! Recognition metrics: correct rate (CR), accurate rate (AR) and character
//! error rate (CER) from an optimal edit alignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deletion, substitution and insertion counts against `n_t` reference symbols.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditStats {
    pub d_e: usize,
    pub s_e: usize,
    pub i_e: usize,
    pub n_t: usize,
}

impl EditStats {
    pub fn distance(&self) -> usize {
        self.d_e + self.s_e + self.i_e
    }

    pub fn merge(&mut self, other: &EditStats) {
        self.d_e += other.d_e;
        self.s_e += other.s_e;
        self.i_e += other.i_e;
        self.n_t += other.n_t;
    }

    fn check(&self) -> Result<f64> {
        if self.n_t == 0 {
            return Err(Error::UndefinedMetric("reference has no symbols".into()));
        }
        Ok(self.n_t as f64)
    }
}

/// Unit-cost alignment of `prediction` against `truth`. Among optimal
/// alignments the backtrace prefers substitution (or match), then deletion,
/// then insertion.
pub fn edit_ops<T: PartialEq>(truth: &[T], prediction: &[T]) -> EditStats {
    let (n, m) = (truth.len(), prediction.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    dp.iter_mut().take(w).enumerate().for_each(|(j, v)| *v = j);
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(truth[i - 1] != prediction[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut stats = EditStats {
        n_t: n,
        ..EditStats::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let differ = truth[i - 1] != prediction[j - 1];
            if here == dp[(i - 1) * w + j - 1] + usize::from(differ) {
                stats.s_e += usize::from(differ);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[(i - 1) * w + j] + 1 {
            stats.d_e += 1;
            i -= 1;
        } else {
            stats.i_e += 1;
            j -= 1;
        }
    }
    stats
}

/// `CR = (N−D−S)/N`, `AR = (N−D−S−I)/N`. AR is not clamped and goes
/// negative when insertions outnumber correct symbols.
pub fn cr_ar(stats: &EditStats) -> Result<(f64, f64)> {
    let n = stats.check()?;
    let correct = stats.n_t as f64 - stats.d_e as f64 - stats.s_e as f64;
    Ok((correct / n, (correct - stats.i_e as f64) / n))
}

pub fn cer_of(stats: &EditStats) -> Result<f64> {
    let n = stats.check()?;
    Ok(stats.distance() as f64 / n)
}

/// `(D+S+I)/N` for one pair of strings.
pub fn cer(truth: &str, prediction: &str) -> Result<f64> {
    let t: Vec<char> = truth.chars().collect();
    let p: Vec<char> = prediction.chars().collect();
    cer_of(&edit_ops(&t, &p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    pub label: String,
    pub prediction: String,
    #[serde(flatten)]
    pub stats: EditStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cr: f64,
    pub ar: f64,
    pub cer: f64,
    pub n_t: usize,
    pub d_e: usize,
    pub s_e: usize,
    pub i_e: usize,
    pub num_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<SampleReport>>,
}

impl MetricsReport {
    /// Micro-averaged report: counts are summed over samples before the
    /// rates are computed.
    pub fn aggregate(samples: Vec<SampleReport>, keep_samples: bool) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("no samples to evaluate".into()));
        }
        let mut total = EditStats::default();
        samples.iter().for_each(|s| total.merge(&s.stats));
        let (cr, ar) = cr_ar(&total)?;
        Ok(Self {
            cr,
            ar,
            cer: cer_of(&total)?,
            n_t: total.n_t,
            d_e: total.d_e,
            s_e: total.s_e,
            i_e: total.i_e,
            num_samples: samples.len(),
            per_sample: keep_samples.then_some(samples),
        })
    }

    pub fn stats(&self) -> EditStats {
        EditStats {
            d_e: self.d_e,
            s_e: self.s_e,
            i_e: self.i_e,
            n_t: self.n_t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ops(a: &str, b: &str) -> (usize, usize, usize) {
        let s = edit_ops(a.as_bytes(), b.as_bytes());
        (s.d_e, s.s_e, s.i_e)
    }

    #[test]
    fn worked_examples() {
        assert_eq!(ops("abc", "abc"), (0, 0, 0));
        assert_eq!(ops("abc", "ab"), (1, 0, 0));
        assert_eq!(ops("ab", "aXb"), (0, 0, 1));
        assert_eq!(ops("abc", "axc"), (0, 1, 0));
        assert_eq!(ops("", ""), (0, 0, 0));
        assert_eq!(ops("", "ab"), (0, 0, 2));
    }

    #[test]
    fn rates() {
        let id = edit_ops(b"abc", b"abc");
        assert_eq!(cr_ar(&id).unwrap(), (1.0, 1.0));
        let (cr, ar) = cr_ar(&edit_ops(b"abc", b"axc")).unwrap();
        assert!((cr - 2.0 / 3.0).abs() < 1e-15 && (ar - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cr_ar(&edit_ops(b"ab", b"aXb")).unwrap(), (1.0, 0.5));
        assert_eq!(cer("ab", "aXb").unwrap(), 0.5);
        assert_eq!(cer("a", "").unwrap(), 1.0);
        assert_eq!(cer("same", "same").unwrap(), 0.0);
        assert!(matches!(cer("", "x"), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ar_unclamped() {
        let (cr, ar) = cr_ar(&edit_ops(b"a", b"abbb")).unwrap();
        assert_eq!((cr, ar), (1.0, -2.0));
    }

    #[test]
    fn tie_break_prefers_substitution() {
        // "ab" vs "ba": distance 2 reachable as 2 substitutions or D+I
        assert_eq!(ops("ab", "ba"), (0, 2, 0));
    }

    #[test]
    fn micro_aggregation() {
        let mk = |label: &str, pred: &str| SampleReport {
            index: 0,
            label: label.into(),
            prediction: pred.into(),
            stats: edit_ops(label.as_bytes(), pred.as_bytes()),
        };
        // per-sample CR would be 1/4 and 1, mean 0.625; micro is 2/5
        let r = MetricsReport::aggregate(vec![mk("abcd", "axyz"), mk("e", "e")], false).unwrap();
        assert_eq!(r.n_t, 5);
        assert!((r.cr - 2.0 / 5.0).abs() < 1e-15);
        assert!(MetricsReport::aggregate(vec![], false).is_err());
    }

    #[test]
    fn report_json_fields() {
        let r = MetricsReport::aggregate(
            vec![SampleReport {
                index: 0,
                label: "a".into(),
                prediction: "a".into(),
                stats: edit_ops(b"a", b"a"),
            }],
            false,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for k in ["cr", "ar", "cer", "n_t", "d_e", "s_e", "i_e", "num_samples"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(v.get("per_sample").is_none());
    }
}
