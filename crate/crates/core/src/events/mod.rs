//! Event streams and their voxel-grid representation.
//!
//! Events between two keyframes form an [`EventInterval`]. Each interval is
//! accumulated into a [`VoxelGrid`] of `n_bins` temporal slices with a
//! triangular (bilinear) temporal kernel, and four consecutive intervals make
//! up the network input [`ClipVoxels`]; the two intervals after the
//! interpolated instant are fed time-reversed.

mod io;

pub use io::{decode_events, encode_events, read_events, write_events, EVF_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

impl TryFrom<i8> for Polarity {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(Error::Events(format!("polarity must be +1 or -1, got {other}"))),
        }
    }
}

/// One brightness-change record: timestamp in microseconds, pixel column
/// `x`, pixel row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }
}

/// Events in the half-open window `[t_start, t_end)`, sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventInterval {
    t_start: u64,
    t_end: u64,
    events: Vec<Event>,
}

impl EventInterval {
    pub fn new(t_start: u64, t_end: u64, events: Vec<Event>) -> Result<Self> {
        if t_end < t_start {
            return Err(Error::Events(format!("interval ends before it starts: [{t_start}, {t_end})")));
        }
        let mut prev = t_start;
        for (i, e) in events.iter().enumerate() {
            if e.t < t_start || e.t >= t_end {
                return Err(Error::Events(format!(
                    "event {i} at t={} outside [{t_start}, {t_end})",
                    e.t
                )));
            }
            if e.t < prev {
                return Err(Error::Events(format!("event {i} at t={} precedes t={prev}", e.t)));
            }
            prev = e.t;
        }
        Ok(Self { t_start, t_end, events })
    }

    pub fn empty(t_start: u64, t_end: u64) -> Result<Self> {
        Self::new(t_start, t_end, Vec::new())
    }

    pub fn t_start(&self) -> u64 {
        self.t_start
    }

    pub fn t_end(&self) -> u64 {
        self.t_end
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn polarity_sum(&self) -> f64 {
        self.events.iter().map(|e| e.polarity.sign()).sum()
    }

    /// Errors if any event lies outside an `height × width` sensor.
    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        match self
            .events
            .iter()
            .find(|e| e.x as usize >= width || e.y as usize >= height)
        {
            Some(e) => Err(Error::Events(format!(
                "event at (x={}, y={}) outside {width}x{height} sensor",
                e.x, e.y
            ))),
            None => Ok(()),
        }
    }
}

/// `n_bins × height × width` accumulation of one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    n_bins: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(n_bins: usize, height: usize, width: usize) -> Self {
        Self {
            n_bins,
            height,
            width,
            data: vec![0.0; n_bins * height * width],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, bin: usize, y: usize, x: usize) -> f64 {
        self.data[(bin * self.height + y) * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.n_bins, self.height, self.width)
    }
}

/// Deposits every event's polarity into the two temporally nearest bins.
///
/// An event at time `t` has normalized position
/// `t* = (t − t_start) / (t_end − t_start) · (n_bins − 1)` and adds
/// `polarity · max(0, 1 − |b − t*|)` to bin `b` at its pixel.
pub fn voxelize(interval: &EventInterval, n_bins: usize, height: usize, width: usize) -> Result<VoxelGrid> {
    if n_bins == 0 || height == 0 || width == 0 {
        return Err(Error::config("voxel grid dimensions must be positive"));
    }
    let duration = interval.t_end - interval.t_start;
    if duration == 0 {
        return Err(Error::Events(format!(
            "zero-duration interval at t={}",
            interval.t_start
        )));
    }
    interval.check_bounds(height, width)?;
    let mut grid = VoxelGrid::zeros(n_bins, height, width);
    let plane = height * width;
    let scale = (n_bins - 1) as f64 / duration as f64;
    for e in &interval.events {
        let pos = (e.t - interval.t_start) as f64 * scale;
        let lower = (pos.floor() as usize).min(n_bins - 1);
        let frac = pos - lower as f64;
        let pixel = e.y as usize * width + e.x as usize;
        let p = e.polarity.sign();
        grid.data[lower * plane + pixel] += p * (1.0 - frac);
        if frac > 0.0 && lower + 1 < n_bins {
            grid.data[(lower + 1) * plane + pixel] += p * frac;
        }
    }
    Ok(grid)
}

/// Flips the temporal axis; when `negate_polarity` is set the values change
/// sign too, so a brightness increase read backwards becomes a decrease.
pub fn time_reverse(grid: &VoxelGrid, negate_polarity: bool) -> VoxelGrid {
    let plane = grid.height * grid.width;
    let sign = if negate_polarity { -1.0 } else { 1.0 };
    let mut out = VoxelGrid::zeros(grid.n_bins, grid.height, grid.width);
    for b in 0..grid.n_bins {
        let src = &grid.data[(grid.n_bins - 1 - b) * plane..(grid.n_bins - b) * plane];
        for (d, &s) in out.data[b * plane..(b + 1) * plane].iter_mut().zip(src) {
            // `0.0 * -1.0` would be `-0.0`; keep zeros positive so that
            // reversal is an exact involution on bit patterns too.
            *d = if s == 0.0 { 0.0 } else { sign * s };
        }
    }
    out
}

/// The four interval grids of one clip, `4 × n_bins × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipVoxels {
    n_bins: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ClipVoxels {
    pub const SLOTS: usize = 4;

    /// Stacks four grids that share one geometry.
    pub fn from_grids(grids: [VoxelGrid; 4]) -> Result<Self> {
        let dims = grids[0].dims();
        if let Some(g) = grids.iter().find(|g| g.dims() != dims) {
            return Err(Error::shape(format!(
                "voxel grids disagree: {:?} vs {:?}",
                dims,
                g.dims()
            )));
        }
        let (n_bins, height, width) = dims;
        let mut data = Vec::with_capacity(4 * grids[0].data.len());
        for g in &grids {
            data.extend_from_slice(&g.data);
        }
        Ok(Self {
            n_bins,
            height,
            width,
            data,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slot(&self, i: usize) -> &[f64] {
        let len = self.n_bins * self.height * self.width;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn slot_sum(&self, i: usize) -> f64 {
        self.slot(i).iter().sum()
    }

    /// `4 × n_bins × height × width` tensor in the model's element type.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[4, self.n_bins, self.height, self.width], |i| T::from_f64(self.data[i]))
    }
}

/// Voxelizes the four intervals of a clip. Slots 0 and 1 hold the intervals
/// before the missing frame as recorded; slots 2 and 3 hold the intervals
/// after it, time-reversed.
pub fn build_clip_voxels(
    intervals: &[EventInterval],
    n_bins: usize,
    height: usize,
    width: usize,
    reverse_negates_polarity: bool,
) -> Result<ClipVoxels> {
    let [i1, i2, i3, i4] = intervals else {
        return Err(Error::Events(format!(
            "a clip needs exactly 4 event intervals, got {}",
            intervals.len()
        )));
    };
    let grid = |iv: &EventInterval| voxelize(iv, n_bins, height, width);
    ClipVoxels::from_grids([
        grid(i1)?,
        grid(i2)?,
        time_reverse(&grid(i3)?, reverse_negates_polarity),
        time_reverse(&grid(i4)?, reverse_negates_polarity),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: u64, x: u16, y: u16, p: i8) -> Event {
        Event::new(t, x, y, Polarity::try_from(p).unwrap())
    }

    #[test]
    fn empty_interval_gives_zero_grid() {
        let grid = voxelize(&EventInterval::empty(0, 100).unwrap(), 4, 3, 5).unwrap();
        assert_eq!(grid.data().len(), 4 * 3 * 5);
        assert!(grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn event_on_bin_center_lands_in_one_bin() {
        // n_bins = 5: t* = (t / 1000) * 4 = 2 at t = 500
        let iv = EventInterval::new(0, 1000, vec![ev(500, 1, 2, 1)]).unwrap();
        let grid = voxelize(&iv, 5, 4, 4).unwrap();
        assert_eq!(grid.get(2, 2, 1), 1.0);
        assert_eq!(grid.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn event_between_bins_splits_evenly() {
        // n_bins = 4: t* = (500 / 1000) * 3 = 1.5
        let iv = EventInterval::new(0, 1000, vec![ev(500, 3, 0, -1)]).unwrap();
        let grid = voxelize(&iv, 4, 2, 4).unwrap();
        assert_eq!(grid.get(1, 0, 3), -0.5);
        assert_eq!(grid.get(2, 0, 3), -0.5);
        assert_eq!(grid.sum(), -1.0);
    }

    #[test]
    fn zero_duration_and_out_of_bounds_are_errors() {
        let iv = EventInterval::empty(10, 10).unwrap();
        assert!(voxelize(&iv, 4, 2, 2).is_err());
        let iv = EventInterval::new(0, 10, vec![ev(1, 2, 0, 1)]).unwrap();
        assert!(matches!(voxelize(&iv, 4, 2, 2), Err(Error::Events(_))));
        let iv = EventInterval::new(0, 10, vec![ev(1, 0, 5, 1)]).unwrap();
        assert!(voxelize(&iv, 4, 2, 2).is_err());
    }

    #[test]
    fn interval_invariants_are_enforced() {
        assert!(EventInterval::new(0, 10, vec![ev(10, 0, 0, 1)]).is_err());
        assert!(EventInterval::new(5, 10, vec![ev(4, 0, 0, 1)]).is_err());
        assert!(EventInterval::new(0, 10, vec![ev(5, 0, 0, 1), ev(4, 0, 0, 1)]).is_err());
        assert!(EventInterval::new(0, 10, vec![ev(5, 0, 0, 1), ev(5, 1, 0, -1)]).is_ok());
        assert!(Polarity::try_from(0).is_err());
    }

    #[test]
    fn reversal_flips_and_negates() {
        let zero = VoxelGrid::zeros(3, 2, 2);
        assert_eq!(time_reverse(&zero, true), zero);
        let mut g = VoxelGrid::zeros(3, 1, 1);
        g.data[0] = 1.0;
        let r = time_reverse(&g, true);
        assert_eq!(r.data(), &[0.0, 0.0, -1.0]);
        let r = time_reverse(&g, false);
        assert_eq!(r.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn clip_reverses_trailing_intervals() {
        let empty = |a, b| EventInterval::empty(a, b).unwrap();
        let clip = build_clip_voxels(
            &[empty(0, 1000), empty(1000, 2000), empty(2000, 3000), empty(3000, 4000)],
            4,
            2,
            2,
            true,
        )
        .unwrap();
        assert!(clip.data().iter().all(|&v| v == 0.0));

        // last representable instant of i3: t* = 999/1000 * 3 = 2.997
        let i3 = EventInterval::new(2000, 3000, vec![ev(2999, 1, 1, 1)]).unwrap();
        let clip = build_clip_voxels(
            &[empty(0, 1000), empty(1000, 2000), i3, empty(3000, 4000)],
            4,
            2,
            2,
            true,
        )
        .unwrap();
        let slot = clip.slot(2);
        let at = |bin: usize| slot[bin * 4 + 3];
        assert!((at(0) + 0.997).abs() < 1e-12);
        assert!((at(1) + 0.003).abs() < 1e-12);
        assert_eq!(at(2), 0.0);
        assert_eq!(at(3), 0.0);
    }

    #[test]
    fn clip_needs_four_intervals_and_one_geometry() {
        let iv = EventInterval::empty(0, 10).unwrap();
        assert!(build_clip_voxels(&[iv.clone(), iv.clone(), iv.clone()], 4, 2, 2, true).is_err());
        let grids = [
            VoxelGrid::zeros(4, 2, 2),
            VoxelGrid::zeros(4, 2, 2),
            VoxelGrid::zeros(4, 2, 3),
            VoxelGrid::zeros(4, 2, 2),
        ];
        assert!(ClipVoxels::from_grids(grids).is_err());
    }

    fn arb_interval() -> impl Strategy<Value = EventInterval> {
        (1u64..5000, proptest::collection::vec((0u64..5000, 0u16..6, 0u16..5, any::<bool>()), 0..60))
            .prop_map(|(dur, raw)| {
                let mut events: Vec<Event> = raw
                    .into_iter()
                    .map(|(t, x, y, pos)| {
                        let p = if pos { Polarity::Positive } else { Polarity::Negative };
                        Event::new(100 + t % dur, x, y, p)
                    })
                    .collect();
                events.sort_by_key(|e| e.t);
                EventInterval::new(100, 100 + dur, events).unwrap()
            })
    }

    proptest! {
        #[test]
        fn voxelization_conserves_polarity(iv in arb_interval(), bins in 1usize..10) {
            let grid = voxelize(&iv, bins, 5, 6).unwrap();
            let expect = iv.polarity_sum();
            prop_assert!((grid.sum() - expect).abs() / expect.abs().max(1.0) < 1e-5);
        }

        #[test]
        fn events_stay_on_their_pixel(iv in arb_interval()) {
            let grid = voxelize(&iv, 5, 5, 6).unwrap();
            for y in 0..5 {
                for x in 0..6 {
                    let here: f64 = (0..5).map(|b| grid.get(b, y, x)).sum();
                    let expect: f64 = iv.events().iter()
                        .filter(|e| e.x as usize == x && e.y as usize == y)
                        .map(|e| e.polarity.sign())
                        .sum();
                    prop_assert!((here - expect).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn voxelization_is_additive(a in arb_interval(), split in 0usize..60) {
            let evs = a.events();
            let k = split.min(evs.len());
            let (lo, hi): (Vec<_>, Vec<_>) = evs.iter().enumerate().partition(|(i, _)| i % 2 == k % 2);
            let part = |v: Vec<(usize, &Event)>| {
                EventInterval::new(a.t_start(), a.t_end(), v.into_iter().map(|(_, e)| *e).collect()).unwrap()
            };
            let ga = voxelize(&part(lo), 4, 5, 6).unwrap();
            let gb = voxelize(&part(hi), 4, 5, 6).unwrap();
            let whole = voxelize(&a, 4, 5, 6).unwrap();
            for i in 0..whole.data().len() {
                prop_assert!((whole.data()[i] - ga.data()[i] - gb.data()[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn reversal_is_an_involution(iv in arb_interval(), negate in any::<bool>()) {
            let g = voxelize(&iv, 4, 5, 6).unwrap();
            let rr = time_reverse(&time_reverse(&g, negate), negate);
            prop_assert_eq!(&rr, &g);
            if negate {
                prop_assert!((time_reverse(&g, true).sum() + g.sum()).abs() < 1e-9);
            }
        }
    }
}
