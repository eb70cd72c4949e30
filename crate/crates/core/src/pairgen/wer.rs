use crate::error::{Error, Result};

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let m = hypothesis.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0; m + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Word error rate in percent: `100 * edits / |reference|`.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::contract("WER needs a non-empty reference"));
    }
    Ok(100.0 * edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(wer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(wer(&[1, 2, 3], &[]).unwrap(), 100.0);
        let w = wer(&['a', 'b', 'c'], &['a', 'x', 'c', 'd']).unwrap();
        assert!((w - 66.67).abs() < 0.01);
        assert!(wer::<u32>(&[], &[1]).is_err());
    }

    #[test]
    fn distance_is_symmetric_on_small_cases() {
        let a = [1, 2, 2, 3];
        let b = [2, 3, 1];
        assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        assert_eq!(edit_distance(&a, &b), 3);
    }
}
