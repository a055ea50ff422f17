//! Bin coordinates and the XOR round schedule.
//!
//! With `2^n` workers, relationships are sorted into a `2^(n+1)` by `2^(n+1)`
//! grid keyed by the low `n + 1` bits of the source and target identifiers.
//! The grid is then drained in `2^(n+2)` rounds of `2^n` bins each, arranged
//! so that no row or column index is shared by two bins of the same round.
//! Any two workers running in the same round therefore touch disjoint node
//! sets.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::ScheduleError;
use crate::hash::fnv1a64;
use crate::node::NodeId;

/// Largest accepted thread exponent. A grid at `n = 15` already has `2^32`
/// cells.
pub const MAX_THREAD_EXPONENT: u8 = 15;

/// Thread-count exponent: an import runs with `2^n` workers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ThreadExponent(u8);

impl ThreadExponent {
    pub fn new(n: u8) -> Result<Self, ScheduleError> {
        if n > MAX_THREAD_EXPONENT {
            return Err(ScheduleError::ExponentTooLarge {
                n,
                max: MAX_THREAD_EXPONENT,
            });
        }
        Ok(Self(n))
    }

    /// Exponent for a power-of-two worker count.
    pub fn from_threads(threads: usize) -> Result<Self, ScheduleError> {
        if threads == 0 || !threads.is_power_of_two() {
            return Err(ScheduleError::NotPowerOfTwo(threads));
        }
        let n = threads.trailing_zeros();
        Self::new(u8::try_from(n).unwrap_or(u8::MAX))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn threads(self) -> usize {
        1usize << self.0
    }

    /// Number of rows (and columns) of the bin grid, `2^(n+1)`.
    pub fn grid_side(self) -> u32 {
        1u32 << (self.0 + 1)
    }

    /// Total bins in the grid.
    pub fn grid_cells(self) -> usize {
        let side = self.grid_side() as usize;
        side * side
    }

    pub fn round_count(self) -> usize {
        1usize << (self.0 + 2)
    }

    fn index_mask(self) -> u64 {
        (1u64 << (self.0 + 1)) - 1
    }
}

impl fmt::Display for ThreadExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Grid cell of a relationship: `x` from the source node, `y` from the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BinCoord {
    pub x: u32,
    pub y: u32,
}

impl BinCoord {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Row-major offset into a grid with the given side length.
    pub fn offset(self, side: u32) -> usize {
        self.x as usize * side as usize + self.y as usize
    }
}

impl fmt::Display for BinCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Bin index of a node: the low `n + 1` bits of an integer id (two's
/// complement for negatives), or of the FNV-1a 64 hash of a text id's UTF-8
/// bytes.
pub fn bin_index(id: &NodeId, n: ThreadExponent) -> u32 {
    let bits = match id {
        NodeId::Int(v) => *v as u64,
        NodeId::Text(s) => fnv1a64(s.as_bytes()),
    };
    (bits & n.index_mask()) as u32
}

pub fn bin_of(source: &NodeId, target: &NodeId, n: ThreadExponent) -> BinCoord {
    BinCoord::new(bin_index(source, n), bin_index(target, n))
}

/// Which half of a round pair a round is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Half {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Round {
    pub pair: u32,
    pub half: Half,
    pub bins: Vec<BinCoord>,
}

impl Round {
    /// Label in `pair.half` form, e.g. `3.B`.
    pub fn label(&self) -> String {
        let half = match self.half {
            Half::A => 'A',
            Half::B => 'B',
        };
        format!("{}.{}", self.pair, half)
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())?;
        for bin in &self.bins {
            write!(f, " {bin}")?;
        }
        Ok(())
    }
}

/// Ordered rounds `0.A, 0.B, 1.A, 1.B, ...`; round `2p` is `p.A` and round
/// `2p + 1` is `p.B`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundSchedule {
    pub n: ThreadExponent,
    pub rounds: Vec<Round>,
}

impl RoundSchedule {
    pub fn build(n: ThreadExponent) -> Self {
        build_schedule(n)
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Round> {
        self.rounds.iter()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_schedule(self)
    }
}

/// Builds the round schedule for `2^n` workers.
///
/// For each mask `p` in `0..2^(n+1)` and each `x` ascending, the bin
/// `(x, x ^ p)` goes to round `p.A` when `y > x` and to `p.B` when `y < x`.
/// Diagonal bins only occur for `p = 0`; they fill `0.A` in ascending `x`
/// until it holds `2^n` bins and spill into `0.B` after that.
pub fn build_schedule(n: ThreadExponent) -> RoundSchedule {
    let side = n.grid_side();
    let capacity = n.threads();
    let mut rounds = Vec::with_capacity(n.round_count());

    for pair in 0..side {
        let mut a = Vec::with_capacity(capacity);
        let mut b = Vec::with_capacity(capacity);
        for x in 0..side {
            let y = x ^ pair;
            let bin = BinCoord::new(x, y);
            match y.cmp(&x) {
                std::cmp::Ordering::Greater => a.push(bin),
                std::cmp::Ordering::Less => b.push(bin),
                std::cmp::Ordering::Equal if a.len() < capacity => a.push(bin),
                std::cmp::Ordering::Equal => b.push(bin),
            }
        }
        rounds.push(Round {
            pair,
            half: Half::A,
            bins: a,
        });
        rounds.push(Round {
            pair,
            half: Half::B,
            bins: b,
        });
    }

    RoundSchedule { n, rounds }
}

/// A broken schedule invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    RoundCount {
        expected: usize,
        actual: usize,
    },
    RoundSize {
        round: usize,
        expected: usize,
        actual: usize,
    },
    OutOfGrid {
        round: usize,
        bin: BinCoord,
    },
    MissingBin {
        bin: BinCoord,
    },
    DuplicateBin {
        bin: BinCoord,
        rounds: Vec<usize>,
    },
    CoordinateReused {
        round: usize,
        coordinate: u32,
        bins: Vec<BinCoord>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RoundCount { expected, actual } => {
                write!(f, "expected {expected} rounds, found {actual}")
            }
            Violation::RoundSize {
                round,
                expected,
                actual,
            } => write!(f, "round {round} holds {actual} bins, expected {expected}"),
            Violation::OutOfGrid { round, bin } => {
                write!(f, "round {round} lists {bin} outside the grid")
            }
            Violation::MissingBin { bin } => write!(f, "bin {bin} is never scheduled"),
            Violation::DuplicateBin { bin, rounds } => {
                write!(f, "bin {bin} is scheduled in rounds {rounds:?}")
            }
            Violation::CoordinateReused {
                round,
                coordinate,
                bins,
            } => {
                write!(f, "round {round} reuses coordinate {coordinate} in bins")?;
                for bin in bins {
                    write!(f, " {bin}")?;
                }
                Ok(())
            }
        }
    }
}

/// Checks every schedule invariant by direct enumeration.
///
/// Returns one record per failure; an empty vector means the schedule covers
/// each grid cell exactly once with `2^(n+2)` rounds of `2^n` bins, and no
/// round uses a coordinate value in two different bins.
pub fn validate_schedule(schedule: &RoundSchedule) -> Vec<Violation> {
    let n = schedule.n;
    let side = n.grid_side();
    let mut violations = Vec::new();

    if schedule.rounds.len() != n.round_count() {
        violations.push(Violation::RoundCount {
            expected: n.round_count(),
            actual: schedule.rounds.len(),
        });
    }

    // Rounds in which each grid cell appears.
    let mut seen: Vec<Vec<usize>> = vec![Vec::new(); n.grid_cells()];

    for (index, round) in schedule.rounds.iter().enumerate() {
        if round.bins.len() != n.threads() {
            violations.push(Violation::RoundSize {
                round: index,
                expected: n.threads(),
                actual: round.bins.len(),
            });
        }

        let mut users: BTreeMap<u32, Vec<BinCoord>> = BTreeMap::new();
        for &bin in &round.bins {
            if bin.x >= side || bin.y >= side {
                violations.push(Violation::OutOfGrid { round: index, bin });
                continue;
            }
            seen[bin.offset(side)].push(index);
            users.entry(bin.x).or_default().push(bin);
            if bin.y != bin.x {
                users.entry(bin.y).or_default().push(bin);
            }
        }
        for (coordinate, mut bins) in users {
            bins.dedup();
            if bins.len() > 1 {
                violations.push(Violation::CoordinateReused {
                    round: index,
                    coordinate,
                    bins,
                });
            }
        }
    }

    for x in 0..side {
        for y in 0..side {
            let bin = BinCoord::new(x, y);
            let rounds = &seen[bin.offset(side)];
            match rounds.len() {
                0 => violations.push(Violation::MissingBin { bin }),
                1 => {}
                _ => violations.push(Violation::DuplicateBin {
                    bin,
                    rounds: rounds.clone(),
                }),
            }
        }
    }

    violations
}
