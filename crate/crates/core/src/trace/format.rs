//! On-disk trace formats.
//!
//! Binary: a text header line `NICSIM-TRACE 1 <count>\n` followed by
//! `count` fixed 48-byte little-endian events. Record layout:
//!
//! ```text
//! 0      tag (0 = record, 1 = REQ_BEGIN, 2 = REQ_END)
//! 1..9   pc
//! 9      opclass
//! 10     flags: eff_addr, value, branch, taken, stack, pc-relative (bit 0..5)
//! 11..16 dest, src1, src2, addr_base, addr_index (0xff = none)
//! 16     addr_scale
//! 17..21 addr_disp (i32)
//! 21..29 eff_addr
//! 29..37 value
//! 37..45 branch_target
//! 45     alu_op
//! 46..48 reserved, zero
//! ```
//!
//! Markers store request_id at 1..9 and key_hash at 9..17; the rest is zero.
//!
//! Text: header `NICSIM-TRACE-TEXT 1 <count>` then one event per line,
//! `R,<pc>,<OPCLASS>,<dest>,<src1>,<src2>,<base>,<index>,<scale>,<disp>,<eff_addr>,<value>,<target>,<taken>,<stack>,<pcrel>,<alu_op>`
//! with empty fields for absent values, `B,<id>,<key_hash>` and `E,<id>`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{AluOp, MarkerKind, OpClass, RegisterId, RequestMarker, Trace, TraceEvent, TraceRecord};
use crate::error::TraceError;

pub const MAGIC: &str = "NICSIM-TRACE";
const TEXT_MAGIC: &str = "NICSIM-TRACE-TEXT";
const VERSION: u32 = 1;
pub const RECORD_BYTES: usize = 48;

const NO_REG: u8 = 0xff;

const F_ADDR: u8 = 1 << 0;
const F_VALUE: u8 = 1 << 1;
const F_BRANCH: u8 = 1 << 2;
const F_TAKEN: u8 = 1 << 3;
const F_STACK: u8 = 1 << 4;
const F_PCREL: u8 = 1 << 5;

fn io_err(path: &Path, source: std::io::Error) -> TraceError {
    TraceError::Io { path: path.to_path_buf(), source }
}

fn reg_byte(r: Option<RegisterId>) -> u8 {
    r.map(|r| r as u8).unwrap_or(NO_REG)
}

pub(crate) fn encode_event(ev: &TraceEvent, out: &mut [u8; RECORD_BYTES]) {
    *out = [0u8; RECORD_BYTES];
    match ev {
        TraceEvent::Marker(m) => {
            out[0] = match m.kind {
                MarkerKind::ReqBegin => 1,
                MarkerKind::ReqEnd => 2,
            };
            out[1..9].copy_from_slice(&m.request_id.to_le_bytes());
            out[9..17].copy_from_slice(&m.key_hash.to_le_bytes());
        }
        TraceEvent::Record(r) => {
            let mut flags = 0u8;
            if r.eff_addr.is_some() {
                flags |= F_ADDR;
            }
            if r.value.is_some() {
                flags |= F_VALUE;
            }
            if r.branch_target.is_some() {
                flags |= F_BRANCH;
            }
            if r.branch_taken {
                flags |= F_TAKEN;
            }
            if r.is_stack_access {
                flags |= F_STACK;
            }
            if r.is_pc_relative {
                flags |= F_PCREL;
            }
            out[1..9].copy_from_slice(&r.pc.to_le_bytes());
            out[9] = r.opclass as u8;
            out[10] = flags;
            out[11] = reg_byte(r.dest);
            out[12] = reg_byte(r.src1);
            out[13] = reg_byte(r.src2);
            out[14] = reg_byte(r.addr_base);
            out[15] = reg_byte(r.addr_index);
            out[16] = r.addr_scale;
            out[17..21].copy_from_slice(&r.addr_disp.to_le_bytes());
            out[21..29].copy_from_slice(&r.eff_addr.unwrap_or(0).to_le_bytes());
            out[29..37].copy_from_slice(&r.value.unwrap_or(0).to_le_bytes());
            out[37..45].copy_from_slice(&r.branch_target.unwrap_or(0).to_le_bytes());
            out[45] = r.alu_op as u8;
        }
    }
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Schema checks shared by both readers.
fn check_record(r: &TraceRecord) -> Result<(), String> {
    if !matches!(r.addr_scale, 1 | 2 | 4 | 8) {
        return Err(format!("addr_scale {} not in {{1,2,4,8}}", r.addr_scale));
    }
    match r.opclass {
        OpClass::Load | OpClass::Store if r.eff_addr.is_none() => {
            Err(format!("{} record without eff_addr", r.opclass.name()))
        }
        OpClass::Branch if r.branch_target.is_none() => Err("BRANCH record without branch_target".into()),
        _ => Ok(()),
    }
}

fn decode_event(b: &[u8], index: u64) -> Result<TraceEvent, TraceError> {
    let bad = |reason: String| TraceError::Malformed { index, reason };
    match b[0] {
        1 | 2 => {
            let request_id = u64_at(b, 1);
            let m = if b[0] == 1 {
                RequestMarker::begin(request_id, u64_at(b, 9))
            } else {
                RequestMarker::end(request_id)
            };
            Ok(TraceEvent::Marker(m))
        }
        0 => {
            let reg = |byte: u8, what: &str| -> Result<Option<RegisterId>, TraceError> {
                if byte == NO_REG {
                    Ok(None)
                } else {
                    RegisterId::new(byte).map(Some).ok_or_else(|| bad(format!("{what} register id {byte} out of range")))
                }
            };
            let opclass = OpClass::from_u8(b[9]).ok_or_else(|| bad(format!("unknown opclass {}", b[9])))?;
            let flags = b[10];
            let alu_op = AluOp::from_u8(b[45]).ok_or_else(|| bad(format!("unknown alu op {}", b[45])))?;
            let rec = TraceRecord {
                pc: u64_at(b, 1),
                opclass,
                dest: reg(b[11], "dest")?,
                src1: reg(b[12], "src1")?,
                src2: reg(b[13], "src2")?,
                addr_base: reg(b[14], "base")?,
                addr_index: reg(b[15], "index")?,
                addr_scale: b[16],
                addr_disp: i32::from_le_bytes(b[17..21].try_into().unwrap()),
                eff_addr: (flags & F_ADDR != 0).then(|| u64_at(b, 21)),
                value: (flags & F_VALUE != 0).then(|| u64_at(b, 29)),
                branch_target: (flags & F_BRANCH != 0).then(|| u64_at(b, 37)),
                branch_taken: flags & F_TAKEN != 0,
                is_stack_access: flags & F_STACK != 0,
                is_pc_relative: flags & F_PCREL != 0,
                alu_op,
            };
            check_record(&rec).map_err(bad)?;
            Ok(TraceEvent::Record(rec))
        }
        t => Err(bad(format!("unknown event tag {t}"))),
    }
}

pub fn encode_trace(trace: &Trace) -> Vec<u8> {
    let mut out = format!("{MAGIC} {VERSION} {}\n", trace.events.len()).into_bytes();
    out.reserve(trace.events.len() * RECORD_BYTES);
    let mut buf = [0u8; RECORD_BYTES];
    for ev in &trace.events {
        encode_event(ev, &mut buf);
        out.extend_from_slice(&buf);
    }
    out
}

pub fn decode_trace(bytes: &[u8]) -> Result<Trace, TraceError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| TraceError::BadHeader("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| TraceError::BadHeader("header is not text".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(TraceError::BadHeader(format!("expected magic {MAGIC}")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| TraceError::BadHeader("missing version".into()))?;
    if version != VERSION {
        return Err(TraceError::BadHeader(format!("unsupported version {version}")));
    }
    let count: u64 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| TraceError::BadHeader("missing record count".into()))?;
    let body = &bytes[nl + 1..];
    let found = (body.len() / RECORD_BYTES) as u64;
    if body.len() < count as usize * RECORD_BYTES {
        return Err(TraceError::Truncated { expected: count, found });
    }
    if body.len() != count as usize * RECORD_BYTES {
        return Err(TraceError::Malformed {
            index: count,
            reason: format!("{} trailing bytes after the announced records", body.len() - count as usize * RECORD_BYTES),
        });
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, chunk) in body.chunks_exact(RECORD_BYTES).enumerate() {
        events.push(decode_event(chunk, i as u64)?);
    }
    Ok(Trace { events })
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<(), TraceError> {
    fs::write(path, encode_trace(trace)).map_err(|e| io_err(path, e))
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_trace(&bytes)
}

fn opt_hex(v: Option<u64>) -> String {
    v.map(|v| format!("{v:#x}")).unwrap_or_default()
}

fn opt_reg(r: Option<RegisterId>) -> &'static str {
    r.map(|r| r.name()).unwrap_or("")
}

pub fn write_trace_text(trace: &Trace, path: &Path) -> Result<(), TraceError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{TEXT_MAGIC} {VERSION} {}", trace.events.len())?;
        for ev in &trace.events {
            match ev {
                TraceEvent::Marker(m) if m.kind == MarkerKind::ReqBegin => {
                    writeln!(w, "B,{},{:#x}", m.request_id, m.key_hash)?
                }
                TraceEvent::Marker(m) => writeln!(w, "E,{}", m.request_id)?,
                TraceEvent::Record(r) => writeln!(
                    w,
                    "R,{:#x},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.pc,
                    r.opclass.name(),
                    opt_reg(r.dest),
                    opt_reg(r.src1),
                    opt_reg(r.src2),
                    opt_reg(r.addr_base),
                    opt_reg(r.addr_index),
                    r.addr_scale,
                    r.addr_disp,
                    opt_hex(r.eff_addr),
                    opt_hex(r.value),
                    opt_hex(r.branch_target),
                    r.branch_taken as u8,
                    r.is_stack_access as u8,
                    r.is_pc_relative as u8,
                    r.alu_op as u8,
                )?,
            }
        }
        w.flush()
    };
    emit().map_err(|e| io_err(path, e))
}

fn parse_u64(s: &str) -> Option<u64> {
    match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_text_line(line: &str) -> Result<TraceEvent, String> {
    let f: Vec<&str> = line.split(',').collect();
    let num = |s: &str, what: &str| parse_u64(s).ok_or_else(|| format!("bad {what} `{s}`"));
    let opt_num = |s: &str, what: &str| if s.is_empty() { Ok(None) } else { num(s, what).map(Some) };
    let reg = |s: &str| -> Result<Option<RegisterId>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            RegisterId::from_name(s).map(Some).ok_or_else(|| format!("unknown register `{s}`"))
        }
    };
    let flag = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("bad flag `{s}`")),
    };
    match f[0] {
        "B" if f.len() == 3 => Ok(TraceEvent::Marker(RequestMarker::begin(num(f[1], "request id")?, num(f[2], "key hash")?))),
        "E" if f.len() == 2 => Ok(TraceEvent::Marker(RequestMarker::end(num(f[1], "request id")?))),
        "R" if f.len() == 17 => {
            let rec = TraceRecord {
                pc: num(f[1], "pc")?,
                opclass: OpClass::from_name(f[2]).ok_or_else(|| format!("unknown opclass `{}`", f[2]))?,
                dest: reg(f[3])?,
                src1: reg(f[4])?,
                src2: reg(f[5])?,
                addr_base: reg(f[6])?,
                addr_index: reg(f[7])?,
                addr_scale: f[8].parse().map_err(|_| format!("bad scale `{}`", f[8]))?,
                addr_disp: f[9].parse().map_err(|_| format!("bad disp `{}`", f[9]))?,
                eff_addr: opt_num(f[10], "eff_addr")?,
                value: opt_num(f[11], "value")?,
                branch_target: opt_num(f[12], "branch target")?,
                branch_taken: flag(f[13])?,
                is_stack_access: flag(f[14])?,
                is_pc_relative: flag(f[15])?,
                alu_op: f[16]
                    .parse::<u8>()
                    .ok()
                    .and_then(AluOp::from_u8)
                    .ok_or_else(|| format!("bad alu op `{}`", f[16]))?,
            };
            check_record(&rec)?;
            Ok(TraceEvent::Record(rec))
        }
        _ => Err(format!("unrecognized line shape ({} fields, kind `{}`)", f.len(), f[0])),
    }
}

/// Reads the text format. `Malformed::index` is the 1-based line number.
pub fn read_trace_text(path: &Path) -> Result<Trace, TraceError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| TraceError::BadHeader("empty file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(TEXT_MAGIC) || parts.next() != Some("1") {
        return Err(TraceError::BadHeader(format!("expected `{TEXT_MAGIC} 1 <count>`")));
    }
    let count: u64 = parts
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| TraceError::BadHeader("missing record count".into()))?;
    let mut events = Vec::with_capacity(count as usize);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev = parse_text_line(line.trim()).map_err(|reason| TraceError::Malformed { index: i as u64 + 2, reason })?;
        events.push(ev);
    }
    if (events.len() as u64) < count {
        return Err(TraceError::Truncated { expected: count, found: events.len() as u64 });
    }
    if events.len() as u64 > count {
        return Err(TraceError::Malformed { index: count + 2, reason: "more records than the header announces".into() });
    }
    Ok(Trace { events })
}
