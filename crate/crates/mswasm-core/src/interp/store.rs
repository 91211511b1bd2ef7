//! Segment store: the machine's memory.
//!
//! Memory is a set of segments in one flat address space. Each allocation
//! gets a color that is never reused for the life of the store, and every
//! byte remembers its owning color, whether that owner is still live, and
//! its value. Freed bytes keep their last value, which is what lets
//! observe-mode runs read stale data the way unchecked code would.

use std::collections::{BTreeMap, HashMap};

use crate::trace::LocState;

/// How segment base addresses are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AddrMode {
    /// Every segment gets a base past all previous ones.
    #[default]
    Fresh,
    /// A freed range is handed back, most recently freed first, to the next
    /// allocation of exactly the same size.
    Reuse,
}

impl AddrMode {
    pub fn name(self) -> &'static str {
        match self {
            AddrMode::Fresh => "fresh",
            AddrMode::Reuse => "reuse",
        }
    }
}

impl std::fmt::Display for AddrMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AddrMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fresh" => Ok(AddrMode::Fresh),
            "reuse" => Ok(AddrMode::Reuse),
            other => Err(format!("unknown address mode `{other}`")),
        }
    }
}

/// A pointer: a color, the segment's base address, a byte offset the
/// program may move freely, the extent accesses are checked against, and a
/// validity bit that is only false for null.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handle {
    pub color: u32,
    pub base: i64,
    pub offset: i32,
    pub bound: u32,
    pub valid: bool,
}

impl Handle {
    pub fn null() -> Handle {
        Handle {
            color: 0,
            base: 0,
            offset: 0,
            bound: 0,
            valid: false,
        }
    }

    /// Absolute address of the byte the handle currently points at.
    pub fn addr(&self) -> i64 {
        self.base + self.offset as i64
    }
}

impl std::fmt::Display for Handle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if !self.valid {
            write!(f, "handle(null)")
        } else {
            write!(
                f,
                "handle(color={}, offset={}, bound={})",
                self.color, self.offset, self.bound
            )
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    owner: u32,
    live: bool,
    value: u8,
}

#[derive(Debug, Clone, Copy)]
pub struct SegmentInfo {
    pub base: i64,
    pub size: u32,
    pub live: bool,
}

#[derive(Debug)]
pub struct Store {
    mode: AddrMode,
    cells: BTreeMap<i64, Cell>,
    segments: HashMap<u32, SegmentInfo>,
    next_color: u32,
    next_addr: i64,
    freed_ranges: Vec<(i64, u32)>,
}

impl Store {
    pub fn new(mode: AddrMode) -> Store {
        Store {
            mode,
            cells: BTreeMap::new(),
            segments: HashMap::new(),
            // Color 0 belongs to null and to accesses nothing explains.
            next_color: 1,
            next_addr: 0,
            freed_ranges: Vec::new(),
        }
    }

    /// Hand out a color without allocating; the shadow tracker uses this so
    /// reconstructed allocations draw from the same sequence as real ones.
    pub fn fresh_color(&mut self) -> u32 {
        let c = self.next_color;
        self.next_color += 1;
        c
    }

    pub fn alloc(&mut self, size: u32) -> Handle {
        let base = match self.mode {
            AddrMode::Reuse => {
                match self
                    .freed_ranges
                    .iter()
                    .rposition(|&(_, s)| s == size)
                {
                    Some(i) => self.freed_ranges.remove(i).0,
                    None => self.bump(size),
                }
            }
            AddrMode::Fresh => self.bump(size),
        };
        let color = self.fresh_color();
        for a in base..base + size as i64 {
            self.cells.insert(
                a,
                Cell {
                    owner: color,
                    live: true,
                    value: 0,
                },
            );
        }
        self.segments.insert(
            color,
            SegmentInfo {
                base,
                size,
                live: true,
            },
        );
        Handle {
            color,
            base,
            offset: 0,
            bound: size,
            valid: true,
        }
    }

    fn bump(&mut self, size: u32) -> i64 {
        let base = self.next_addr;
        self.next_addr += size as i64;
        base
    }

    /// Mark a segment dead. `Err` means it already was, and nothing
    /// changed; in particular a stale handle into since-reallocated memory
    /// cannot kill the new owner's bytes.
    pub fn free(&mut self, color: u32) -> Result<(), ()> {
        let seg = self.segments.get_mut(&color).expect("color from an alloc");
        if !seg.live {
            return Err(());
        }
        seg.live = false;
        let (base, size) = (seg.base, seg.size);
        for a in base..base + size as i64 {
            let cell = self.cells.get_mut(&a).expect("allocated byte");
            if cell.owner == color {
                cell.live = false;
            }
        }
        if self.mode == AddrMode::Reuse {
            self.freed_ranges.push((base, size));
        }
        Ok(())
    }

    pub fn segment(&self, color: u32) -> Option<SegmentInfo> {
        self.segments.get(&color).copied()
    }

    pub fn color_live(&self, color: u32) -> bool {
        self.segments.get(&color).is_some_and(|s| s.live)
    }

    /// Per-byte states of a range as seen by `color`, in the trace's
    /// vocabulary.
    pub fn loc_of(&self, color: u32, addr: i64, size: u32) -> Vec<LocState> {
        (addr..addr + size as i64)
            .map(|a| match self.cells.get(&a) {
                Some(c) if c.live && c.owner == color => LocState::Same,
                Some(c) if c.live => LocState::Other(c.owner),
                Some(c) => LocState::Freed(c.owner),
                None => LocState::Unallocated,
            })
            .collect()
    }

    /// Whether every byte of the range has been allocated at some point.
    /// Freed bytes count; they still hold data.
    pub fn range_exists(&self, addr: i64, size: u32) -> bool {
        (addr..addr + size as i64).all(|a| self.cells.contains_key(&a))
    }

    /// Read raw bytes. The range must exist.
    pub fn read(&self, addr: i64, size: u32) -> Vec<u8> {
        (addr..addr + size as i64)
            .map(|a| self.cells.get(&a).expect("range checked").value)
            .collect()
    }

    /// Write raw bytes over an existing range, leaving ownership and
    /// liveness untouched.
    pub fn write(&mut self, addr: i64, bytes: &[u8]) {
        for (i, b) in bytes.iter().enumerate() {
            self.cells
                .get_mut(&(addr + i as i64))
                .expect("range checked")
                .value = *b;
        }
    }
}
