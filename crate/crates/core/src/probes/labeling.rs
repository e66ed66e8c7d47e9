use serde::{Deserialize, Serialize};

use crate::corpus::PhonemeAlignment;
use crate::error::{Error, Result};
use crate::model::LatentCodes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCode {
    pub code: Vec<f32>,
    pub label: String,
    pub utterance: String,
    /// Position of the code in its utterance.
    pub index: usize,
}

/// Half-open sample span `[i k hop, (i + 1) k hop)` covered by code `i`.
pub fn code_span(i: usize, hop: usize, k: usize) -> (u64, u64) {
    let w = (hop * k) as u64;
    (i as u64 * w, (i as u64 + 1) * w)
}

/// Index of the interval labeling `span`: largest overlap, ties to the
/// earlier interval. A span overlapping nothing takes the nearest interval.
fn best_interval(align: &PhonemeAlignment, (s, e): (u64, u64)) -> usize {
    let mut best = (0u64, 0usize);
    for (j, iv) in align.intervals.iter().enumerate() {
        let ov = iv.end.min(e).saturating_sub(iv.start.max(s));
        if ov > best.0 {
            best = (ov, j);
        }
    }
    if best.0 > 0 {
        return best.1;
    }
    let gap = |j: usize| {
        let iv = &align.intervals[j];
        if iv.end <= s {
            s - iv.end + 1
        } else {
            iv.start.saturating_sub(e) + 1
        }
    };
    (0..align.intervals.len()).min_by_key(|&j| gap(j)).unwrap_or(0)
}

/// Labels each code with the phoneme whose interval overlaps its sample span
/// the most. `align` must be in the same sample clock as the Mel frames.
pub fn label_codes(
    codes: &LatentCodes,
    align: &PhonemeAlignment,
    hop: usize,
    k: usize,
    utterance: &str,
) -> Result<Vec<LabeledCode>> {
    if align.intervals.is_empty() {
        return Err(Error::Argument(format!("alignment for {utterance} is empty")));
    }
    if hop == 0 || k == 0 {
        return Err(Error::Argument("hop and k must be positive".into()));
    }
    Ok((0..codes.n_codes())
        .map(|i| LabeledCode {
            code: codes.values.column(i).to_vec(),
            label: align.intervals[best_interval(align, code_span(i, hop, k))].label.clone(),
            utterance: utterance.to_string(),
            index: i,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PhonemeInterval;
    use ndarray::Array2;

    fn align(ivs: &[(u64, u64, &str)]) -> PhonemeAlignment {
        PhonemeAlignment::new(
            ivs.iter()
                .map(|&(start, end, l)| PhonemeInterval {
                    start,
                    end,
                    label: l.into(),
                })
                .collect(),
            22050,
        )
        .unwrap()
    }

    fn codes(n: usize) -> LatentCodes {
        LatentCodes {
            values: Array2::from_shape_fn((2, n), |(r, c)| (r * 10 + c) as f32),
            code_rate: 2.7,
        }
    }

    #[test]
    fn whole_utterance_phoneme() {
        let out = label_codes(&codes(3), &align(&[(0, 30000, "sil")]), 256, 32, "u").unwrap();
        assert!(out.iter().all(|c| c.label == "sil"));
        assert_eq!(out[2].code, vec![2.0, 12.0]);
        assert_eq!(out[2].index, 2);
    }

    #[test]
    fn majority_overlap_and_tie_rule() {
        // Inclusive 0..=4915 and 4916..=8191 in half-open form.
        let a = align(&[(0, 4916, "aa"), (4916, 8192, "b")]);
        assert_eq!(label_codes(&codes(1), &a, 256, 32, "u").unwrap()[0].label, "aa");
        let tie = align(&[(0, 4096, "x"), (4096, 8192, "y")]);
        assert_eq!(label_codes(&codes(1), &tie, 256, 32, "u").unwrap()[0].label, "x");
        let later_longer = align(&[(0, 100, "x"), (100, 8192, "y")]);
        assert_eq!(label_codes(&codes(1), &later_longer, 256, 32, "u").unwrap()[0].label, "y");
    }

    #[test]
    fn codes_past_the_alignment_take_the_nearest_phoneme() {
        let a = align(&[(0, 100, "x"), (200, 300, "y")]);
        let out = label_codes(&codes(4), &a, 16, 2, "u").unwrap();
        assert_eq!(out.iter().map(|c| c.label.as_str()).collect::<Vec<_>>(), ["x", "x", "x", "x"]);
        let out = label_codes(&codes(12), &a, 16, 2, "u").unwrap();
        assert_eq!(out[11].label, "y");
    }

    #[test]
    fn empty_alignment_is_an_argument_error() {
        let a = PhonemeAlignment::new(vec![], 22050).unwrap();
        assert!(matches!(label_codes(&codes(1), &a, 256, 32, "u"), Err(Error::Argument(_))));
    }
}
