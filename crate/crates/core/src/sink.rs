//! Scaled dot-product attention and the global-anchor key/value cache.
//!
//! Segment 0 captures the key/value rows of its first frame(s) at every
//! `(timestep, layer)`. Later segments prepend those rows to their own keys
//! and values; queries are never extended, so output length is unchanged.

use std::collections::HashMap;

use crate::error::{MlvError, ProtocolViolation, Result};
use crate::ops::softmax_rows;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Softmax weights `softmax(Q Kᵀ / √d)`.
pub fn attention_weights<S: Scalar>(q: &Matrix<S>, k: &Matrix<S>) -> Result<Matrix<S>> {
    if q.cols() != k.cols() {
        return Err(MlvError::shape(format!(
            "query width {} differs from key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if q.rows() == 0 || k.rows() == 0 {
        return Err(MlvError::shape(
            "attention needs at least one query and one key",
        ));
    }
    let scale = S::from_usize_exact(q.cols()).sqrt().recip();
    softmax_rows(&q.matmul_transposed(k)?.map(|v| v * scale))
}

/// `softmax(Q Kᵀ / √d) V`
pub fn attention<S: Scalar>(q: &Matrix<S>, k: &Matrix<S>, v: &Matrix<S>) -> Result<Matrix<S>> {
    if k.rows() != v.rows() {
        return Err(MlvError::shape(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    attention_weights(q, k)?.matmul(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEntry<S> {
    pub keys: Matrix<S>,
    pub values: Matrix<S>,
}

/// Write-once store of anchor key/value rows keyed by `(timestep, layer)`.
///
/// A cache belongs to one segment ordinal (`owner`); only that segment may
/// capture into it.
#[derive(Debug, Clone)]
pub struct AnchorCache<S> {
    owner: usize,
    anchor_tokens: usize,
    entries: HashMap<(usize, usize), AnchorEntry<S>>,
}

impl<S: Scalar> AnchorCache<S> {
    pub fn new(owner: usize, anchor_tokens: usize) -> Result<Self> {
        if anchor_tokens == 0 {
            return Err(MlvError::config("anchor token count must be at least 1"));
        }
        Ok(Self {
            owner,
            anchor_tokens,
            entries: HashMap::new(),
        })
    }

    /// Cache for the first segment's anchor.
    pub fn for_initial_segment(anchor_tokens: usize) -> Result<Self> {
        Self::new(0, anchor_tokens)
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn anchor_tokens(&self) -> usize {
        self.anchor_tokens
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, timestep: usize, layer: usize) -> Result<&AnchorEntry<S>> {
        self.entries
            .get(&(timestep, layer))
            .ok_or(MlvError::Protocol(ProtocolViolation::MissingAnchor {
                timestep,
                layer,
            }))
    }

    /// Stores the first `anchor_tokens` rows of `keys`/`values` captured by `segment`.
    pub fn capture(
        &mut self,
        segment: usize,
        timestep: usize,
        layer: usize,
        keys: &Matrix<S>,
        values: &Matrix<S>,
    ) -> Result<()> {
        if segment != self.owner {
            return Err(ProtocolViolation::CaptureFromWrongSegment {
                segment,
                owner: self.owner,
            }
            .into());
        }
        if keys.rows() != values.rows() || keys.cols() != values.cols() {
            return Err(MlvError::shape(format!(
                "anchor keys {}x{} and values {}x{} disagree",
                keys.rows(),
                keys.cols(),
                values.rows(),
                values.cols()
            )));
        }
        if self.anchor_tokens > keys.rows() {
            return Err(MlvError::config(format!(
                "anchor needs {} tokens but the segment has {}",
                self.anchor_tokens,
                keys.rows()
            )));
        }
        if self.entries.contains_key(&(timestep, layer)) {
            return Err(ProtocolViolation::DoubleWrite { timestep, layer }.into());
        }
        let entry = AnchorEntry {
            keys: keys.head_rows(self.anchor_tokens)?,
            values: values.head_rows(self.anchor_tokens)?,
        };
        self.entries.insert((timestep, layer), entry);
        Ok(())
    }
}

/// Free-function form of [`AnchorCache::capture`].
pub fn capture_anchor<S: Scalar>(
    cache: &mut AnchorCache<S>,
    segment: usize,
    timestep: usize,
    layer: usize,
    keys: &Matrix<S>,
    values: &Matrix<S>,
) -> Result<()> {
    cache.capture(segment, timestep, layer, keys, values)
}

/// Attention over `[anchor keys; K]` and `[anchor values; V]` with the
/// original queries.
pub fn attend_with_sink<S: Scalar>(
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
    cache: &AnchorCache<S>,
    timestep: usize,
    layer: usize,
) -> Result<Matrix<S>> {
    let anchor = cache.get(timestep, layer)?;
    let keys = anchor.keys.vstack(k)?;
    let values = anchor.values.vstack(v)?;
    attention(q, &keys, &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_key() {
        let out = attention(&m(&[&[0.0]]), &m(&[&[0.0]]), &m(&[&[7.0]])).unwrap();
        assert_eq!(out.as_slice(), &[7.0]);
    }

    #[test]
    fn equal_logits_average() {
        let out = attention(&m(&[&[1.0]]), &m(&[&[1.0], &[1.0]]), &m(&[&[2.0], &[4.0]])).unwrap();
        assert_eq!(out.as_slice(), &[3.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let q = m(&[&[1.0, 0.0]]);
        assert!(matches!(
            attention(&q, &m(&[&[1.0]]), &m(&[&[1.0]])),
            Err(MlvError::InvalidShape(_))
        ));
        assert!(matches!(
            attention(&m(&[&[1.0]]), &m(&[&[1.0], &[2.0]]), &m(&[&[1.0]])),
            Err(MlvError::InvalidShape(_))
        ));
    }

    #[test]
    fn capture_round_trip() {
        let mut cache = AnchorCache::for_initial_segment(2).unwrap();
        let k = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let v = m(&[&[-1.0, -2.0], &[-3.0, -4.0], &[-5.0, -6.0]]);
        cache.capture(0, 3, 1, &k, &v).unwrap();
        let e = cache.get(3, 1).unwrap();
        assert_eq!(e.keys.as_slice(), &k.as_slice()[..4]);
        assert_eq!(e.values.as_slice(), &v.as_slice()[..4]);
    }

    #[test]
    fn single_token_anchor_is_first_row() {
        let mut cache = AnchorCache::for_initial_segment(1).unwrap();
        let k = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let v = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        capture_anchor(&mut cache, 0, 0, 0, &k, &v).unwrap();
        let e = cache.get(0, 0).unwrap();
        assert_eq!(e.keys, m(&[&[1.0, 2.0]]));
        assert_eq!(e.values, m(&[&[5.0, 6.0]]));
    }

    #[test]
    fn lookup_is_keyed_by_layer() {
        let mut cache = AnchorCache::for_initial_segment(1).unwrap();
        let k = m(&[&[1.0]]);
        cache.capture(0, 3, 1, &k, &k).unwrap();
        assert_eq!(
            cache.get(3, 0).unwrap_err(),
            MlvError::Protocol(ProtocolViolation::MissingAnchor {
                timestep: 3,
                layer: 0
            })
        );
    }

    #[test]
    fn double_write_rejected() {
        let mut cache = AnchorCache::for_initial_segment(1).unwrap();
        let k = m(&[&[1.0]]);
        cache.capture(0, 0, 0, &k, &k).unwrap();
        let err = cache.capture(0, 0, 0, &m(&[&[2.0]]), &k).unwrap_err();
        assert_eq!(
            err,
            MlvError::Protocol(ProtocolViolation::DoubleWrite {
                timestep: 0,
                layer: 0
            })
        );
        assert_eq!(cache.get(0, 0).unwrap().keys, k);
    }

    #[test]
    fn too_many_anchor_tokens() {
        let mut cache = AnchorCache::for_initial_segment(3).unwrap();
        let k = m(&[&[1.0], &[2.0]]);
        assert!(matches!(
            cache.capture(0, 0, 0, &k, &k),
            Err(MlvError::InvalidConfig(_))
        ));
    }

    #[test]
    fn capture_from_other_segment_rejected() {
        let mut cache = AnchorCache::for_initial_segment(1).unwrap();
        let k = m(&[&[1.0]]);
        assert!(matches!(
            cache.capture(2, 0, 0, &k, &k),
            Err(MlvError::Protocol(
                ProtocolViolation::CaptureFromWrongSegment {
                    segment: 2,
                    owner: 0
                }
            ))
        ));
    }

    #[test]
    fn inject_before_capture() {
        let cache = AnchorCache::<f64>::for_initial_segment(1).unwrap();
        let q = m(&[&[0.0]]);
        let err = attend_with_sink(&q, &q, &q, &cache, 0, 0).unwrap_err();
        assert!(err.is_protocol());
    }

    #[test]
    fn sink_equal_logits() {
        let mut cache = AnchorCache::for_initial_segment(1).unwrap();
        cache
            .capture(0, 0, 0, &m(&[&[0.0]]), &m(&[&[4.0]]))
            .unwrap();
        let out =
            attend_with_sink(&m(&[&[0.0]]), &m(&[&[0.0]]), &m(&[&[2.0]]), &cache, 0, 0).unwrap();
        assert_eq!(out.as_slice(), &[3.0]);
        assert_eq!(out.rows(), 1);
    }

    #[test]
    fn far_anchor_vanishes() {
        // Query aligned with the segment key, anchor key pointing away: score gap 50 after scaling.
        let d = 2.0f64;
        let gap = 50.0 * d.sqrt();
        let q = m(&[&[1.0, 0.0]]);
        let k = m(&[&[gap / 2.0, 0.0]]);
        let v = m(&[&[1.0, -1.0]]);
        let mut cache = AnchorCache::for_initial_segment(1).unwrap();
        cache
            .capture(0, 0, 0, &m(&[&[-gap / 2.0, 0.0]]), &m(&[&[100.0, 100.0]]))
            .unwrap();
        let with = attend_with_sink(&q, &k, &v, &cache, 0, 0).unwrap();
        let plain = attention(&q, &k, &v).unwrap();
        for (a, b) in with.as_slice().iter().zip(plain.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
