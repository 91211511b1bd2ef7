//! Shadow reconstruction of logical memory events for flat-memory code.
//!
//! Code compiled to a single flat segment does all its "allocation" with
//! in-segment helpers, so the machine's own events would just show one big
//! segment being poked. The tracker recovers the logical story instead: it
//! watches the designated module's helper calls to learn where blocks live,
//! tags values that derive from block pointers, and replaces every physical
//! access to the flat segment with an access attributed to a logical block.
//!
//! Attribution is by taint. A value returned from `__malloc` is tainted
//! with the new block's color; the taint survives copies, addition, and
//! subtraction, and dies on any other arithmetic. An access whose pointer
//! still carries a block taint is attributed to that block as a legitimate
//! access, whether or not it lands inside it. Anything else is attributed
//! to whichever block contains the target address, or to color 0 when none
//! does, and marked forged, since the machine cannot tell where such a
//! pointer came from.
//!
//! The reconstruction trusts the helpers' bookkeeping. A program that
//! tramples the allocator's metadata can make later logical allocations
//! overlap, which the trace auditor then reports as an inconsistent trace
//! rather than a verdict.

use std::collections::BTreeMap;

use super::store::Handle;
use crate::ir::I32Op;
use crate::trace::{Access, Event, LocState, Provenance};

/// Which logical block, if any, a value derives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) enum Taint {
    #[default]
    None,
    Block(u32),
    /// Mixed two different blocks; no single origin.
    Crossed,
}

fn combine(a: Taint, b: Taint) -> Taint {
    match (a, b) {
        (Taint::None, x) | (x, Taint::None) => x,
        (Taint::Block(p), Taint::Block(q)) if p == q => Taint::Block(p),
        _ => Taint::Crossed,
    }
}

/// Taint of an i32 operator's result. Offsets move by addition and
/// subtraction; everything else produces a plain number.
pub(crate) fn taint_i32_bin(op: I32Op, a: Taint, b: Taint) -> Taint {
    match op {
        I32Op::Add | I32Op::Sub => combine(a, b),
        _ => Taint::None,
    }
}

/// Taint of `handle.add`: the handle keeps its origin unless the delta
/// brings one in.
pub(crate) fn taint_handle_add(handle: Taint, delta: Taint) -> Taint {
    combine(handle, delta)
}

#[derive(Debug, Clone, Copy)]
struct Block {
    color: u32,
    addr: i64,
    size: u32,
    live: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Helper {
    Malloc,
    Free,
    HeapInit,
}

fn helper_of(name: &str) -> Option<Helper> {
    match name {
        "__malloc" => Some(Helper::Malloc),
        "__free" => Some(Helper::Free),
        "__heap_init" => Some(Helper::HeapInit),
        _ => None,
    }
}

/// What the machine should do with an access to the flat segment.
pub(crate) enum AccessDisposition {
    /// Not the tracked segment; record the physical event as usual.
    Physical,
    /// Allocator internals; record nothing.
    Suppressed,
    /// Record this logical event instead of the physical one.
    Logical(Access),
}

#[derive(Debug)]
pub(crate) struct ShadowTracker {
    module: String,
    /// The flat heap segment, once allocated: color, base, size.
    flat: Option<(u32, i64, u32)>,
    /// Nesting depth of allocator helper calls.
    helper_depth: u32,
    /// Size argument of the `__malloc` currently on the call stack.
    pending_malloc: Vec<u32>,
    blocks: Vec<Block>,
    /// Logical state of each flat-segment byte: (block color, live).
    cells: BTreeMap<i64, (u32, bool)>,
}

impl ShadowTracker {
    pub(crate) fn new(module: &str) -> ShadowTracker {
        ShadowTracker {
            module: module.to_string(),
            flat: None,
            helper_depth: 0,
            pending_malloc: Vec::new(),
            blocks: Vec::new(),
            cells: BTreeMap::new(),
        }
    }

    /// The first segment the tracked module allocates is its heap; its
    /// allocation event is suppressed and all further traffic to it goes
    /// through the tracker.
    pub(crate) fn on_new_segment(&mut self, module: &str, handle: &Handle) -> bool {
        if module == self.module && self.flat.is_none() {
            self.flat = Some((handle.color, handle.base, handle.bound));
            true
        } else {
            false
        }
    }

    /// Frees of the flat segment itself never appear in the logical trace.
    pub(crate) fn on_free_segment(&mut self, color: u32) -> bool {
        matches!(self.flat, Some((c, _, _)) if c == color)
    }

    /// Track a call. For `__free` the logical event happens here, where
    /// the argument is at hand; returns it if one should be recorded.
    pub(crate) fn on_call(
        &mut self,
        callee_module: &str,
        callee_name: &str,
        first_arg: Option<i32>,
    ) -> Option<Event> {
        if callee_module != self.module {
            return None;
        }
        let helper = helper_of(callee_name)?;
        self.helper_depth += 1;
        match helper {
            Helper::Malloc => {
                self.pending_malloc.push(first_arg.unwrap_or(0).max(0) as u32);
                None
            }
            Helper::Free => {
                let (_, base, _) = self.flat?;
                let offset = first_arg?;
                let addr = base + offset as i64;
                let block = self.blocks.iter_mut().rev().find(|b| b.addr == addr)?;
                let color = block.color;
                if block.live {
                    block.live = false;
                    for (_, cell) in self.cells.range_mut(addr..addr + block.size as i64) {
                        if cell.0 == color {
                            cell.1 = false;
                        }
                    }
                }
                Some(Event::Free {
                    color,
                    owner: self.module.clone(),
                })
            }
            Helper::HeapInit => None,
        }
    }

    /// Track a return. A `__malloc` coming back with a non-zero offset
    /// births a logical block: the returned event should be recorded and
    /// the returned value slot tainted with the block's color, which the
    /// caller obtains from `fresh_color`.
    pub(crate) fn on_return(
        &mut self,
        func_module: &str,
        func_name: &str,
        ret: Option<i32>,
        fresh_color: impl FnOnce() -> u32,
    ) -> Option<(Event, Taint)> {
        if func_module != self.module {
            return None;
        }
        let helper = helper_of(func_name)?;
        self.helper_depth = self.helper_depth.saturating_sub(1);
        if helper != Helper::Malloc {
            return None;
        }
        let bytes = self.pending_malloc.pop().unwrap_or(0);
        let offset = ret?;
        if offset == 0 {
            return None;
        }
        let (_, base, _) = self.flat?;
        let addr = base + offset as i64;
        let color = fresh_color();
        self.blocks.push(Block {
            color,
            addr,
            size: bytes,
            live: true,
        });
        for a in addr..addr + bytes as i64 {
            // A correct allocator never hands out live bytes; if metadata
            // was trampled this records the overlap as-is and the audit
            // catches it downstream.
            self.cells.insert(a, (color, true));
        }
        let event = Event::Alloc {
            color,
            addr,
            size: bytes,
            owner: self.module.clone(),
        };
        Some((event, Taint::Block(color)))
    }

    /// Classify an access. Only traffic to the flat segment is touched.
    pub(crate) fn on_access(
        &mut self,
        is_write: bool,
        handle: &Handle,
        pointer_taint: Taint,
        addr: i64,
        size: u32,
    ) -> AccessDisposition {
        let Some((flat_color, _, _)) = self.flat else {
            return AccessDisposition::Physical;
        };
        if handle.color != flat_color {
            return AccessDisposition::Physical;
        }
        if self.helper_depth > 0 {
            return AccessDisposition::Suppressed;
        }
        let (color, prov) = match pointer_taint {
            Taint::Block(c) => (c, Provenance::Legit),
            Taint::None | Taint::Crossed => {
                let containing = self
                    .blocks
                    .iter()
                    .rev()
                    .find(|b| addr >= b.addr && addr < b.addr + b.size as i64)
                    .map(|b| b.color)
                    .unwrap_or(0);
                (containing, Provenance::Forged)
            }
        };
        let loc = (addr..addr + size as i64)
            .map(|a| match self.cells.get(&a) {
                Some((c, true)) if *c == color => LocState::Same,
                Some((c, true)) => LocState::Other(*c),
                Some((c, false)) => LocState::Freed(*c),
                None => LocState::Unallocated,
            })
            .collect();
        let access = Access {
            color,
            addr,
            size,
            prov,
            owner: self.module.clone(),
            loc,
        };
        let _ = is_write;
        AccessDisposition::Logical(access)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_handle() -> Handle {
        Handle {
            color: 1,
            base: 0,
            offset: 0,
            bound: 65536,
            valid: true,
        }
    }

    fn tracker_with_heap() -> ShadowTracker {
        let mut t = ShadowTracker::new("um");
        assert!(t.on_new_segment("um", &flat_handle()));
        t
    }

    fn malloc(t: &mut ShadowTracker, bytes: u32, ret_offset: i32, color: u32) -> Event {
        assert!(t.on_call("um", "__malloc", Some(bytes as i32)).is_none());
        let (ev, taint) = t
            .on_return("um", "__malloc", Some(ret_offset), || color)
            .unwrap();
        assert_eq!(taint, Taint::Block(color));
        ev
    }

    /// The machine pairs every helper call with its return; tests that go
    /// through `__free` must too, or the depth counter stays raised.
    fn free(t: &mut ShadowTracker, offset: i32) -> Option<Event> {
        let ev = t.on_call("um", "__free", Some(offset));
        assert!(t
            .on_return("um", "__free", None, || panic!("free mints no color"))
            .is_none());
        ev
    }

    #[test]
    fn first_segment_of_the_module_becomes_the_heap() {
        let mut t = ShadowTracker::new("um");
        assert!(!t.on_new_segment("other", &flat_handle()));
        assert!(t.on_new_segment("um", &flat_handle()));
        let second = Handle {
            color: 2,
            ..flat_handle()
        };
        assert!(!t.on_new_segment("um", &second));
        assert!(t.on_free_segment(1));
        assert!(!t.on_free_segment(2));
    }

    #[test]
    fn malloc_and_free_become_logical_alloc_and_free() {
        let mut t = tracker_with_heap();
        let ev = malloc(&mut t, 8, 12, 7);
        assert_eq!(
            ev,
            Event::Alloc {
                color: 7,
                addr: 12,
                size: 8,
                owner: "um".into()
            }
        );
        let ev = free(&mut t, 12).unwrap();
        assert_eq!(
            ev,
            Event::Free {
                color: 7,
                owner: "um".into()
            }
        );
        // Freeing it again names the same block: a logical double free.
        let ev = free(&mut t, 12).unwrap();
        assert!(matches!(ev, Event::Free { color: 7, .. }));
    }

    #[test]
    fn free_of_an_address_no_malloc_returned_is_silent() {
        let mut t = tracker_with_heap();
        malloc(&mut t, 8, 12, 7);
        assert!(free(&mut t, 13).is_none());
    }

    #[test]
    fn tainted_pointer_accesses_are_legit_and_block_colored() {
        let mut t = tracker_with_heap();
        malloc(&mut t, 4, 12, 7);
        match t.on_access(false, &flat_handle(), Taint::Block(7), 12, 4) {
            AccessDisposition::Logical(a) => {
                assert_eq!(a.color, 7);
                assert_eq!(a.prov, Provenance::Legit);
                assert_eq!(a.loc, vec![LocState::Same; 4]);
            }
            _ => panic!("expected a logical access"),
        }
        // One past the end: still attributed to the block, byte state shows
        // the overrun.
        match t.on_access(true, &flat_handle(), Taint::Block(7), 16, 1) {
            AccessDisposition::Logical(a) => {
                assert_eq!(a.color, 7);
                assert_eq!(a.prov, Provenance::Legit);
                assert_eq!(a.loc, vec![LocState::Unallocated]);
            }
            _ => panic!("expected a logical access"),
        }
    }

    #[test]
    fn untainted_pointer_accesses_are_forged_with_containment_fallback() {
        let mut t = tracker_with_heap();
        malloc(&mut t, 4, 12, 7);
        match t.on_access(false, &flat_handle(), Taint::None, 13, 1) {
            AccessDisposition::Logical(a) => {
                assert_eq!(a.color, 7);
                assert_eq!(a.prov, Provenance::Forged);
                assert_eq!(a.loc, vec![LocState::Same]);
            }
            _ => panic!("expected a logical access"),
        }
        match t.on_access(false, &flat_handle(), Taint::Crossed, 40, 1) {
            AccessDisposition::Logical(a) => {
                assert_eq!(a.color, 0);
                assert_eq!(a.prov, Provenance::Forged);
                assert_eq!(a.loc, vec![LocState::Unallocated]);
            }
            _ => panic!("expected a logical access"),
        }
    }

    #[test]
    fn helper_internal_traffic_is_suppressed() {
        let mut t = tracker_with_heap();
        t.on_call("um", "__malloc", Some(8));
        assert!(matches!(
            t.on_access(true, &flat_handle(), Taint::None, 0, 4),
            AccessDisposition::Suppressed
        ));
        t.on_return("um", "__malloc", Some(12), || 7);
        assert!(matches!(
            t.on_access(true, &flat_handle(), Taint::None, 0, 4),
            AccessDisposition::Logical(_)
        ));
    }

    #[test]
    fn other_segments_stay_physical() {
        let mut t = tracker_with_heap();
        let other = Handle {
            color: 9,
            ..flat_handle()
        };
        assert!(matches!(
            t.on_access(false, &other, Taint::None, 0, 1),
            AccessDisposition::Physical
        ));
    }

    #[test]
    fn taint_rules_track_offsets_not_data() {
        let b = Taint::Block(3);
        assert_eq!(taint_i32_bin(I32Op::Add, b, Taint::None), b);
        assert_eq!(taint_i32_bin(I32Op::Sub, Taint::None, b), b);
        assert_eq!(taint_i32_bin(I32Op::Add, b, b), b);
        assert_eq!(
            taint_i32_bin(I32Op::Add, b, Taint::Block(4)),
            Taint::Crossed
        );
        assert_eq!(taint_i32_bin(I32Op::Mul, b, b), Taint::None);
        assert_eq!(taint_i32_bin(I32Op::Eq, b, Taint::None), Taint::None);
        assert_eq!(taint_handle_add(Taint::None, b), b);
        assert_eq!(taint_handle_add(b, Taint::Crossed), Taint::Crossed);
    }

    #[test]
    fn realloc_reattributes_bytes_to_the_new_block() {
        let mut t = tracker_with_heap();
        malloc(&mut t, 4, 12, 7);
        free(&mut t, 12).unwrap();
        malloc(&mut t, 4, 12, 8);
        // Old pointer, old taint: the bytes belong to someone else now.
        match t.on_access(false, &flat_handle(), Taint::Block(7), 12, 1) {
            AccessDisposition::Logical(a) => {
                assert_eq!(a.color, 7);
                assert_eq!(a.loc, vec![LocState::Other(8)]);
            }
            _ => panic!("expected a logical access"),
        }
    }
}
