//! Overlapping fixed-length segmentation of a frame sequence.

use std::ops::Range;

use crate::error::{MlvError, Result};

/// One segment: global frames `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpan {
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl SegmentSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.range().contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    spans: Vec<SegmentSpan>,
    segment_length: usize,
    overlap: usize,
    frames: usize,
}

impl SegmentPlan {
    /// Segments of length `n` at stride `n − k`. The last span is pulled back
    /// to end at `frames`, so every span has length `min(n, frames)` and the
    /// final overlap may exceed `k`.
    pub fn new(frames: usize, segment_length: usize, overlap: usize) -> Result<Self> {
        if frames == 0 {
            return Err(MlvError::config("frame count must be at least 1"));
        }
        if segment_length < 2 {
            return Err(MlvError::config(format!(
                "segment length must be at least 2, got {segment_length}"
            )));
        }
        if overlap >= segment_length {
            return Err(MlvError::config(format!(
                "overlap {overlap} must be smaller than segment length {segment_length}"
            )));
        }
        let n = segment_length;
        let mut spans = Vec::new();
        if frames <= n {
            spans.push(SegmentSpan {
                index: 0,
                start: 0,
                end: frames,
            });
        } else {
            let stride = n - overlap;
            let mut start = 0;
            while start + n < frames {
                spans.push(SegmentSpan {
                    index: spans.len(),
                    start,
                    end: start + n,
                });
                start += stride;
            }
            spans.push(SegmentSpan {
                index: spans.len(),
                start: frames - n,
                end: frames,
            });
        }
        Ok(Self {
            spans,
            segment_length,
            overlap,
            frames,
        })
    }

    pub fn spans(&self) -> &[SegmentSpan] {
        &self.spans
    }

    pub fn span(&self, s: usize) -> &SegmentSpan {
        &self.spans[s]
    }

    /// Number of segments `m`.
    pub fn segment_count(&self) -> usize {
        self.spans.len()
    }

    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Global frames shared by segments `s − 1` and `s`.
    pub fn overlap_of(&self, s: usize) -> Result<Range<usize>> {
        if s == 0 || s >= self.spans.len() {
            return Err(MlvError::OutOfRange(format!(
                "boundary {s} does not exist in a {}-segment plan",
                self.spans.len()
            )));
        }
        let prev = self.spans[s - 1];
        let curr = self.spans[s];
        Ok(curr.start..prev.end.max(curr.start))
    }

    /// Adjacent frame pairs `(g − 1, g)` whose right frame lies in `g ∈ [start_s, end_{s−1}]`:
    /// the seam region of boundary `s`, from where segment `s` begins to the
    /// first frame that segment `s − 1` no longer covers.
    pub fn seam_frames(&self, s: usize) -> Result<Range<usize>> {
        let overlap = self.overlap_of(s)?;
        let lo = overlap.start.max(1);
        let hi = (overlap.end + 1).min(self.frames);
        Ok(lo..hi.max(lo))
    }
}

pub fn plan_segments(frames: usize, segment_length: usize, overlap: usize) -> Result<SegmentPlan> {
    SegmentPlan::new(frames, segment_length, overlap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds(plan: &SegmentPlan) -> Vec<(usize, usize)> {
        plan.spans().iter().map(|s| (s.start, s.end)).collect()
    }

    #[test]
    fn single_segment() {
        let p = plan_segments(21, 21, 5).unwrap();
        assert_eq!(bounds(&p), vec![(0, 21)]);
        assert!(matches!(p.overlap_of(1), Err(MlvError::OutOfRange(_))));
    }

    #[test]
    fn exact_tiling() {
        let p = plan_segments(53, 21, 5).unwrap();
        assert_eq!(bounds(&p), vec![(0, 21), (16, 37), (32, 53)]);
        assert_eq!(p.overlap_of(1).unwrap(), 16..21);
        assert_eq!(p.overlap_of(2).unwrap(), 32..37);
    }

    #[test]
    fn clamped_final_span() {
        let p = plan_segments(50, 21, 5).unwrap();
        assert_eq!(bounds(&p), vec![(0, 21), (16, 37), (29, 50)]);
        let o = p.overlap_of(2).unwrap();
        assert_eq!(o, 29..37);
        assert_eq!(o.len(), 8);
    }

    #[test]
    fn short_sequence_single_short_span() {
        let p = plan_segments(7, 21, 5).unwrap();
        assert_eq!(bounds(&p), vec![(0, 7)]);
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(
            plan_segments(10, 21, 21),
            Err(MlvError::InvalidConfig(_))
        ));
        assert!(matches!(
            plan_segments(0, 21, 5),
            Err(MlvError::InvalidConfig(_))
        ));
        assert!(matches!(
            plan_segments(10, 1, 0),
            Err(MlvError::InvalidConfig(_))
        ));
        assert!(matches!(
            plan_segments(10, 0, 0),
            Err(MlvError::InvalidConfig(_))
        ));
    }

    #[test]
    fn overlap_of_zero_is_out_of_range() {
        let p = plan_segments(53, 21, 5).unwrap();
        assert!(p.overlap_of(0).is_err());
        assert!(p.overlap_of(3).is_err());
    }

    #[test]
    fn zero_overlap_tiles() {
        let p = plan_segments(42, 21, 0).unwrap();
        assert_eq!(bounds(&p), vec![(0, 21), (21, 42)]);
        assert!(p.overlap_of(1).unwrap().is_empty());
        assert_eq!(p.seam_frames(1).unwrap(), 21..22);
    }

    #[test]
    fn seam_region() {
        let p = plan_segments(53, 21, 5).unwrap();
        // pairs (15,16) .. (20,21)
        assert_eq!(p.seam_frames(1).unwrap(), 16..22);
    }

    #[test]
    fn exhaustive_coverage_and_overlap() {
        for frames in 1..=200 {
            for n in 2..=40 {
                for k in 0..n {
                    let p = plan_segments(frames, n, k).unwrap();
                    let spans = p.spans();
                    assert_eq!(spans[0].start, 0);
                    assert_eq!(spans.last().unwrap().end, frames);
                    for (i, s) in spans.iter().enumerate() {
                        assert_eq!(s.index, i);
                        assert!(s.start < s.end && s.len() <= n);
                        assert_eq!(s.len(), n.min(frames));
                    }
                    for s in 1..spans.len() {
                        // no gaps; overlap at least k
                        assert!(spans[s].start <= spans[s - 1].end);
                        assert!(spans[s].start > spans[s - 1].start);
                        let ov = p.overlap_of(s).unwrap().len();
                        assert!(ov >= k, "F={frames} n={n} k={k} s={s}");
                        if s + 1 < spans.len() {
                            assert_eq!(ov, k);
                        }
                    }
                    // minimal count: dropping to the previous count would leave an overlap < k
                    if spans.len() > 1 {
                        let m = spans.len();
                        let stride = n - k;
                        assert!((m - 2) * stride + n < frames);
                    }
                }
            }
        }
    }

    #[test]
    fn frames_in_at_most_two_spans_for_equal_tilings() {
        // When the tiling is exact and 2k <= n no frame is shared by three segments.
        for n in 2..=40 {
            for k in 0..=n / 2 {
                for m in 1..8 {
                    let frames = n + (m - 1) * (n - k);
                    let p = plan_segments(frames, n, k).unwrap();
                    assert_eq!(p.segment_count(), m);
                    for g in 0..frames {
                        let c = p.spans().iter().filter(|s| s.contains(g)).count();
                        assert!((1..=2).contains(&c));
                    }
                }
            }
        }
    }
}
