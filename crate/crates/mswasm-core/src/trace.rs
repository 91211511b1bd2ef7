//! Memory event traces.
//!
//! A trace is the sequence of allocation, free, read, and write events a
//! run produces, with every byte an access touches annotated by where that
//! byte stood relative to the accessing color at that moment. Traces are
//! the interface between execution and the safety monitors: the interpreter
//! emits them, monitors consume them, and the on-disk form is one JSON
//! object per line so runs can be stored, diffed, and replayed.
//!
//! The line format is strict in both directions. Each event kind carries
//! exactly its own fields (an `alloc` has no `prov`, a `free` has no
//! `addr`), and [`parse_json_lines`] rejects lines with missing fields,
//! unknown fields, or an `idx` that does not match the line's position.
//!
//! [`audit`] replays a trace against a simulated byte store and confirms
//! that the recorded `loc` annotations are the ones the event history
//! implies, so a trace that passes cannot lie about byte states. Traces
//! that encode bugs (double frees, dangling reads) still pass the audit;
//! only internally inconsistent ones fail.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Alloc,
    Free,
    Read,
    Write,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Alloc => "alloc",
            EventKind::Free => "free",
            EventKind::Read => "read",
            EventKind::Write => "write",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the accessing pointer came to exist. Everything the checked machine
/// produces is `Legit`; `Forged` marks accesses whose pointer was
/// manufactured from integers, as reconstructed by the shadow tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Legit,
    Forged,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Legit => "legit",
            Provenance::Forged => "forged",
        }
    }
}

/// State of one byte at access time, relative to the accessing color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocState {
    /// Live and owned by the accessing color.
    Same,
    /// Live but owned by the named other color.
    Other(u32),
    /// Freed; the named color owned it last.
    Freed(u32),
    /// Never allocated.
    Unallocated,
}

impl LocState {
    pub fn token(self) -> String {
        match self {
            LocState::Same => "same".into(),
            LocState::Other(c) => format!("other:{c}"),
            LocState::Freed(c) => format!("freed:{c}"),
            LocState::Unallocated => "none".into(),
        }
    }

    pub fn from_token(tok: &str) -> Option<LocState> {
        match tok {
            "same" => Some(LocState::Same),
            "none" => Some(LocState::Unallocated),
            _ => {
                let (head, num) = tok.split_once(':')?;
                let c: u32 = num.parse().ok()?;
                match head {
                    "other" => Some(LocState::Other(c)),
                    "freed" => Some(LocState::Freed(c)),
                    _ => None,
                }
            }
        }
    }
}

/// A read or write: `size` bytes starting at `addr`, performed with a
/// pointer of color `color`, with `loc[i]` recording the state of byte
/// `addr + i` at access time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub color: u32,
    pub addr: i64,
    pub size: u32,
    pub prov: Provenance,
    pub owner: String,
    pub loc: Vec<LocState>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Alloc {
        color: u32,
        addr: i64,
        size: u32,
        owner: String,
    },
    Free {
        color: u32,
        owner: String,
    },
    Read(Access),
    Write(Access),
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::Alloc { .. } => EventKind::Alloc,
            Event::Free { .. } => EventKind::Free,
            Event::Read(_) => EventKind::Read,
            Event::Write(_) => EventKind::Write,
        }
    }

    pub fn color(&self) -> u32 {
        match self {
            Event::Alloc { color, .. } | Event::Free { color, .. } => *color,
            Event::Read(a) | Event::Write(a) => a.color,
        }
    }

    pub fn owner(&self) -> &str {
        match self {
            Event::Alloc { owner, .. } | Event::Free { owner, .. } => owner,
            Event::Read(a) | Event::Write(a) => &a.owner,
        }
    }

    pub fn access(&self) -> Option<&Access> {
        match self {
            Event::Read(a) | Event::Write(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceError {
    /// Line (when parsing) or event index (when auditing) the problem is at.
    pub at: Option<usize>,
    pub msg: String,
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.at {
            Some(i) => write!(f, "invalid trace at event {}: {}", i, self.msg),
            None => write!(f, "invalid trace: {}", self.msg),
        }
    }
}

impl std::error::Error for TraceError {}

fn terr(at: usize, msg: impl Into<String>) -> TraceError {
    TraceError {
        at: Some(at),
        msg: msg.into(),
    }
}

// ---- serialization ----

/// One JSON object per event, one per line, trailing newline. Field order
/// is fixed so equal traces serialize to identical bytes.
pub fn to_json_lines(events: &[Event]) -> String {
    let mut out = String::new();
    for (idx, ev) in events.iter().enumerate() {
        out.push_str(&event_line(idx, ev));
        out.push('\n');
    }
    out
}

fn event_line(idx: usize, ev: &Event) -> String {
    let owner = |o: &str| serde_json::to_string(o).expect("string encodes");
    match ev {
        Event::Alloc {
            color,
            addr,
            size,
            owner: o,
        } => format!(
            "{{\"idx\":{idx},\"kind\":\"alloc\",\"color\":{color},\"addr\":{addr},\"size\":{size},\"owner\":{}}}",
            owner(o)
        ),
        Event::Free { color, owner: o } => format!(
            "{{\"idx\":{idx},\"kind\":\"free\",\"color\":{color},\"owner\":{}}}",
            owner(o)
        ),
        Event::Read(a) | Event::Write(a) => {
            let kind = ev.kind().as_str();
            let loc: Vec<String> = a.loc.iter().map(|l| l.token()).collect();
            format!(
                "{{\"idx\":{idx},\"kind\":\"{kind}\",\"color\":{},\"addr\":{},\"size\":{},\"prov\":\"{}\",\"owner\":{},\"loc\":{}}}",
                a.color,
                a.addr,
                a.size,
                a.prov.as_str(),
                owner(&a.owner),
                serde_json::to_string(&loc.join(",")).expect("string encodes"),
            )
        }
    }
}

/// Parse a JSON-lines trace. Every line must be an object carrying exactly
/// the fields for its kind, and `idx` must equal the zero-based line
/// number. Blank lines are not allowed except a final trailing newline.
pub fn parse_json_lines(text: &str) -> Result<Vec<Event>, TraceError> {
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| terr(lineno, format!("not a JSON object: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| terr(lineno, "line is not a JSON object"))?;
        events.push(event_from_object(lineno, obj)?);
    }
    Ok(events)
}

fn event_from_object(
    lineno: usize,
    obj: &serde_json::Map<String, serde_json::Value>,
) -> Result<Event, TraceError> {
    let kind = match obj.get("kind").and_then(|v| v.as_str()) {
        Some(k) => k,
        None => return Err(terr(lineno, "missing or non-string `kind`")),
    };
    let expected: &[&str] = match kind {
        "alloc" => &["idx", "kind", "color", "addr", "size", "owner"],
        "free" => &["idx", "kind", "color", "owner"],
        "read" | "write" => &["idx", "kind", "color", "addr", "size", "prov", "owner", "loc"],
        other => return Err(terr(lineno, format!("unknown event kind `{other}`"))),
    };
    for key in obj.keys() {
        if !expected.contains(&key.as_str()) {
            return Err(terr(lineno, format!("unknown field `{key}` on `{kind}`")));
        }
    }
    for key in expected {
        if !obj.contains_key(*key) {
            return Err(terr(lineno, format!("`{kind}` is missing field `{key}`")));
        }
    }

    let get_u32 = |name: &str| -> Result<u32, TraceError> {
        obj[name]
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| terr(lineno, format!("`{name}` must be an unsigned 32-bit integer")))
    };
    let idx = obj["idx"]
        .as_u64()
        .ok_or_else(|| terr(lineno, "`idx` must be a non-negative integer"))?;
    if idx != lineno as u64 {
        return Err(terr(lineno, format!("`idx` is {idx}, expected {lineno}")));
    }
    let color = get_u32("color")?;
    let owner = obj["owner"]
        .as_str()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| terr(lineno, "`owner` must be a non-empty string"))?
        .to_string();

    match kind {
        "alloc" => {
            let addr = obj["addr"]
                .as_i64()
                .ok_or_else(|| terr(lineno, "`addr` must be a 64-bit integer"))?;
            let size = get_u32("size")?;
            Ok(Event::Alloc {
                color,
                addr,
                size,
                owner,
            })
        }
        "free" => Ok(Event::Free { color, owner }),
        _ => {
            let addr = obj["addr"]
                .as_i64()
                .ok_or_else(|| terr(lineno, "`addr` must be a 64-bit integer"))?;
            let size = get_u32("size")?;
            let prov = match obj["prov"].as_str() {
                Some("legit") => Provenance::Legit,
                Some("forged") => Provenance::Forged,
                _ => return Err(terr(lineno, "`prov` must be \"legit\" or \"forged\"")),
            };
            let loc_str = obj["loc"]
                .as_str()
                .ok_or_else(|| terr(lineno, "`loc` must be a string"))?;
            let loc: Vec<LocState> = if loc_str.is_empty() {
                Vec::new()
            } else {
                loc_str
                    .split(',')
                    .map(|tok| {
                        LocState::from_token(tok)
                            .ok_or_else(|| terr(lineno, format!("bad loc token `{tok}`")))
                    })
                    .collect::<Result<_, _>>()?
            };
            if loc.len() != size as usize {
                return Err(terr(
                    lineno,
                    format!("`loc` has {} entries but size is {size}", loc.len()),
                ));
            }
            let access = Access {
                color,
                addr,
                size,
                prov,
                owner,
                loc,
            };
            Ok(if kind == "read" {
                Event::Read(access)
            } else {
                Event::Write(access)
            })
        }
    }
}

// ---- consistency audit ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColorStatus {
    Live,
    Dead,
}

/// Replay the trace against a simulated byte store and reject anything the
/// history cannot produce: a color allocated twice, an allocation on top of
/// live bytes, a free of a color no allocation introduced, an address range
/// that overflows, or a `loc` annotation that disagrees with the simulated
/// state. A clean result means the annotations are trustworthy; it does not
/// mean the trace is safe.
pub fn audit(events: &[Event]) -> Result<(), TraceError> {
    let mut colors: HashMap<u32, ColorStatus> = HashMap::new();
    // addr -> (owning color, live?)
    let mut cells: BTreeMap<i64, (u32, bool)> = BTreeMap::new();

    for (i, ev) in events.iter().enumerate() {
        match ev {
            Event::Alloc {
                color, addr, size, ..
            } => {
                if colors.contains_key(color) {
                    return Err(terr(i, format!("color {color} allocated twice")));
                }
                let end = range_end(i, *addr, *size)?;
                for a in *addr..end {
                    if let Some((c, true)) = cells.get(&a) {
                        return Err(terr(
                            i,
                            format!("allocation overlaps live byte {a} of color {c}"),
                        ));
                    }
                }
                for a in *addr..end {
                    cells.insert(a, (*color, true));
                }
                colors.insert(*color, ColorStatus::Live);
            }
            Event::Free { color, .. } => match colors.get(color) {
                None => {
                    return Err(terr(i, format!("free of color {color} never allocated")));
                }
                Some(ColorStatus::Live) => {
                    colors.insert(*color, ColorStatus::Dead);
                    for (_, cell) in cells.iter_mut() {
                        if cell.0 == *color {
                            cell.1 = false;
                        }
                    }
                }
                // A second free changes nothing; monitors decide whether
                // it is a violation.
                Some(ColorStatus::Dead) => {}
            },
            Event::Read(a) | Event::Write(a) => {
                let end = range_end(i, a.addr, a.size)?;
                for (k, addr) in (a.addr..end).enumerate() {
                    let expected = match cells.get(&addr) {
                        Some((c, true)) if *c == a.color => LocState::Same,
                        Some((c, true)) => LocState::Other(*c),
                        Some((c, false)) => LocState::Freed(*c),
                        None => LocState::Unallocated,
                    };
                    if a.loc[k] != expected {
                        return Err(terr(
                            i,
                            format!(
                                "loc for byte {addr} says `{}` but history implies `{}`",
                                a.loc[k].token(),
                                expected.token()
                            ),
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

fn range_end(at: usize, addr: i64, size: u32) -> Result<i64, TraceError> {
    addr.checked_add(size as i64)
        .ok_or_else(|| terr(at, format!("address range {addr}+{size} overflows")))
}
