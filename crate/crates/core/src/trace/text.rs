//! Line-oriented trace text format.
//!
//! ```text
//! # comment
//! !page_size=4096
//! !process id=0 extent=0x3000
//! !region pid=0 start=0x0 end=0x1000 perm=ro
//! 0 MAC 0x2000 0x0 0x1000 0
//! 1 ADD 0x2008 0x8 0
//! ```
//!
//! Op lines are `seq_id OP_KIND dest src1 [src2] pid` with hexadecimal
//! addresses. A five-field line has no `src2`.

use std::fmt::Write as _;

use super::{NmpOp, OpKind, OpTrace, Permission, Process, Region, TraceError, DEFAULT_PAGE_SIZE};

fn parse_err(line: usize, msg: impl Into<String>) -> TraceError {
    TraceError::Parse { line, msg: msg.into() }
}

fn parse_hex(tok: &str, line: usize) -> Result<u64, TraceError> {
    let digits = tok
        .strip_prefix("0x")
        .or_else(|| tok.strip_prefix("0X"))
        .ok_or_else(|| parse_err(line, format!("address `{tok}` lacks 0x prefix")))?;
    u64::from_str_radix(digits, 16).map_err(|e| parse_err(line, format!("bad address `{tok}`: {e}")))
}

fn parse_num(tok: &str, line: usize) -> Result<u64, TraceError> {
    if tok.starts_with("0x") || tok.starts_with("0X") {
        parse_hex(tok, line)
    } else {
        tok.parse().map_err(|e| parse_err(line, format!("bad number `{tok}`: {e}")))
    }
}

/// Splits `key=value` tokens of a header directive.
fn header_fields(
    rest: &str,
    line: usize,
) -> Result<Vec<(&str, &str)>, TraceError> {
    rest.split_whitespace()
        .map(|tok| tok.split_once('=').ok_or_else(|| parse_err(line, format!("expected key=value, got `{tok}`"))))
        .collect()
}

fn field<'a>(fields: &[(&str, &'a str)], key: &str, line: usize) -> Result<&'a str, TraceError> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| parse_err(line, format!("missing `{key}`")))
}

fn parse_header(body: &str, line: usize, trace: &mut OpTrace) -> Result<(), TraceError> {
    if let Some(v) = body.strip_prefix("page_size=") {
        let size = parse_num(v.trim(), line)?;
        if !size.is_power_of_two() {
            return Err(parse_err(line, format!("page size {size} is not a power of two")));
        }
        trace.page_size = size;
        return Ok(());
    }
    let (directive, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
    let fields = header_fields(rest, line)?;
    match directive {
        "process" => {
            let id = parse_num(field(&fields, "id", line)?, line)? as u32;
            let extent = parse_num(field(&fields, "extent", line)?, line)?;
            if trace.processes.insert(id, Process::new(id, extent)).is_some() {
                return Err(parse_err(line, format!("process {id} declared twice")));
            }
        }
        "region" => {
            let pid = parse_num(field(&fields, "pid", line)?, line)? as u32;
            let start = parse_num(field(&fields, "start", line)?, line)?;
            let end = parse_num(field(&fields, "end", line)?, line)?;
            let perm = match field(&fields, "perm", line)? {
                "ro" => Permission::ReadOnly,
                "rw" => Permission::ReadWrite,
                other => return Err(parse_err(line, format!("unknown permission `{other}`"))),
            };
            let proc = trace
                .processes
                .get_mut(&pid)
                .ok_or_else(|| parse_err(line, format!("region for undeclared process {pid}")))?;
            proc.regions.push(Region { start, end, perm });
        }
        other => return Err(parse_err(line, format!("unknown directive `!{other}`"))),
    }
    Ok(())
}

fn parse_op(body: &str, line: usize) -> Result<NmpOp, TraceError> {
    let toks: Vec<&str> = body.split_whitespace().collect();
    if toks.len() != 5 && toks.len() != 6 {
        return Err(parse_err(line, format!("expected 5 or 6 fields, found {}", toks.len())));
    }
    let seq_id = toks[0].parse().map_err(|e| parse_err(line, format!("bad seq_id: {e}")))?;
    let kind: OpKind = toks[1].parse().map_err(|e: String| parse_err(line, e))?;
    let dest = parse_hex(toks[2], line)?;
    let src1 = parse_hex(toks[3], line)?;
    let src2 = if toks.len() == 6 { Some(parse_hex(toks[4], line)?) } else { None };
    if src2.is_none() && !kind.allows_single_source() {
        return Err(parse_err(line, format!("{kind} requires src2")));
    }
    let pid = toks[toks.len() - 1]
        .parse()
        .map_err(|e| parse_err(line, format!("bad pid: {e}")))?;
    Ok(NmpOp { seq_id, kind, dest, src1, src2, pid })
}

/// Parses a trace. Line numbers in errors are 1-based.
pub fn parse_trace(text: &str) -> Result<OpTrace, TraceError> {
    let mut trace = OpTrace::new(DEFAULT_PAGE_SIZE);
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        if let Some(h) = body.strip_prefix('!') {
            parse_header(h, line, &mut trace)?;
            continue;
        }
        let op = parse_op(body, line)?;
        if trace.ops.last().is_some_and(|p| op.seq_id <= p.seq_id) {
            return Err(parse_err(line, format!("seq_id {} does not increase", op.seq_id)));
        }
        trace.ops.push(op);
    }
    trace.validate().map_err(|e| parse_err(last_line, e.to_string()))?;
    Ok(trace)
}

pub fn serialize_trace(trace: &OpTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "!page_size={}", trace.page_size);
    for p in trace.processes.values() {
        let _ = writeln!(out, "!process id={} extent={:#x}", p.id, p.extent);
        for r in &p.regions {
            let perm = match r.perm {
                Permission::ReadOnly => "ro",
                Permission::ReadWrite => "rw",
            };
            let _ = writeln!(
                out,
                "!region pid={} start={:#x} end={:#x} perm={perm}",
                p.id, r.start, r.end
            );
        }
    }
    for op in &trace.ops {
        let _ = write!(out, "{} {} {:#x} {:#x}", op.seq_id, op.kind, op.dest, op.src1);
        if let Some(s2) = op.src2 {
            let _ = write!(out, " {s2:#x}");
        }
        let _ = writeln!(out, " {}", op.pid);
    }
    out
}
