use crate::error::{Error, Result};
use crate::events::{build_clip_voxels, ClipVoxels, EventInterval};
use crate::synthesis::{KeyframeClip, FRAMES};
use crate::tensor::Tensor;

/// One training example: four keyframes, the four event intervals between
/// consecutive instants and the middle frame to reconstruct.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    /// Keyframes with a batch dimension of one.
    pub clip: KeyframeClip<f32>,
    pub intervals: [EventInterval; FRAMES],
    /// Ground-truth middle frame, `3 × H × W`.
    pub target: Tensor<f32>,
}

impl ClipSample {
    pub fn new(clip: KeyframeClip<f32>, intervals: [EventInterval; FRAMES], target: Tensor<f32>) -> Result<Self> {
        let (n, h, w) = clip.dims();
        if n != 1 {
            return Err(Error::shape(format!("a sample holds one clip, got {n}")));
        }
        if target.shape() != [3, h, w] {
            return Err(Error::shape(format!(
                "target {:?} does not match {h}x{w} keyframes",
                target.shape()
            )));
        }
        for pair in intervals.windows(2) {
            if pair[0].t_end() != pair[1].t_start() {
                return Err(Error::Events(format!(
                    "intervals do not tile: one ends at {} and the next starts at {}",
                    pair[0].t_end(),
                    pair[1].t_start()
                )));
            }
        }
        for iv in &intervals {
            iv.check_bounds(h, w)?;
        }
        Ok(Self { clip, intervals, target })
    }

    pub fn height(&self) -> usize {
        self.clip.dims().1
    }

    pub fn width(&self) -> usize {
        self.clip.dims().2
    }

    /// Timestamps of the five instants, the middle one being the target.
    pub fn instants(&self) -> [u64; 5] {
        let iv = &self.intervals;
        [iv[0].t_start(), iv[1].t_start(), iv[2].t_start(), iv[3].t_start(), iv[3].t_end()]
    }

    pub fn voxels(&self, n_bins: usize, reverse_negates_polarity: bool) -> Result<ClipVoxels> {
        build_clip_voxels(
            &self.intervals,
            n_bins,
            self.height(),
            self.width(),
            reverse_negates_polarity,
        )
    }
}
