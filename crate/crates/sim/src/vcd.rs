//! Value change dump export of a run trace, and a conformance reader.
//!
//! Each device gets its own scope with four signals: `state` (4-bit state
//! code), `enable_rx_rf`, `enable_tx_rf` and `channel` (7 bits). Time is in
//! microseconds.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use bluesim_core::baseband::DeviceState;
use bluesim_core::engine::RunTrace;

pub const SIGNALS: [(&str, u32); 4] = [("state", 4), ("enable_rx_rf", 1), ("enable_tx_rf", 1), ("channel", 7)];

/// Short printable identifier for signal number `n`.
fn id_code(mut n: usize) -> String {
    const FIRST: u8 = b'!';
    const SPAN: usize = (b'~' - b'!' + 1) as usize;
    let mut s = String::new();
    loop {
        s.push((FIRST + (n % SPAN) as u8) as char);
        n /= SPAN;
        if n == 0 {
            break s;
        }
        n -= 1;
    }
}

fn value(width: u32, v: u32, id: &str) -> String {
    if width == 1 {
        format!("{v}{id}")
    } else {
        format!("b{v:b} {id}")
    }
}

/// Writes `trace` as VCD. `meta` lines go into a leading `$comment`.
pub fn write<W: Write>(trace: &RunTrace, meta: &[String], mut out: W) -> io::Result<()> {
    for m in meta {
        writeln!(out, "$comment {m} $end")?;
    }
    let states: Vec<String> = DeviceState::ALL.iter().map(|s| format!("{}={}", s.code(), s.name())).collect();
    writeln!(out, "$comment state codes {} $end", states.join(" "))?;
    writeln!(out, "$version bluesim {} $end", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "$timescale 1 us $end")?;
    writeln!(out, "$scope module piconet $end")?;
    for (d, name) in trace.devices.iter().enumerate() {
        writeln!(out, "$scope module {name} $end")?;
        for (k, (sig, width)) in SIGNALS.iter().enumerate() {
            writeln!(out, "$var wire {width} {} {sig} $end", id_code(d * SIGNALS.len() + k))?;
        }
        writeln!(out, "$upscope $end")?;
    }
    writeln!(out, "$upscope $end")?;
    writeln!(out, "$enddefinitions $end")?;

    let n = trace.devices.len() * SIGNALS.len();
    let mut current: Vec<Option<u32>> = vec![None; n];
    let mut samples: Vec<_> = trace.samples.iter().collect();
    samples.sort_by_key(|s| s.t);

    writeln!(out, "#0")?;
    writeln!(out, "$dumpvars")?;
    for d in 0..trace.devices.len() {
        let init = [DeviceState::Standby.code() as u32, 0, 0, 0];
        for (k, v) in init.into_iter().enumerate() {
            let i = d * SIGNALS.len() + k;
            writeln!(out, "{}", value(SIGNALS[k].1, v, &id_code(i)))?;
            current[i] = Some(v);
        }
    }
    writeln!(out, "$end")?;

    let mut last_t = 0;
    let mut i = 0;
    while i < samples.len() {
        let t = samples[i].t;
        let mut changes = Vec::new();
        while i < samples.len() && samples[i].t == t {
            let s = samples[i];
            let vals = [s.state.code() as u32, s.rx as u32, s.tx as u32, s.channel as u32];
            for (k, v) in vals.into_iter().enumerate() {
                let idx = s.device as usize * SIGNALS.len() + k;
                if current[idx] != Some(v) {
                    current[idx] = Some(v);
                    changes.retain(|(j, _)| *j != idx);
                    changes.push((idx, v));
                }
            }
            i += 1;
        }
        if changes.is_empty() {
            continue;
        }
        if t != last_t || t == 0 {
            if t != 0 {
                writeln!(out, "#{t}")?;
            }
            last_t = t;
        }
        for (idx, v) in changes {
            writeln!(out, "{}", value(SIGNALS[idx % SIGNALS.len()].1, v, &id_code(idx)))?;
        }
    }
    if trace.meta.end_us > last_t {
        writeln!(out, "#{}", trace.meta.end_us)?;
    }
    Ok(())
}

/// A declared signal: `scope.name`, width and id code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signal {
    pub scope: String,
    pub name: String,
    pub width: u32,
    pub id: String,
}

/// A parsed, conformant VCD document.
#[derive(Debug, Clone, Default)]
pub struct Dump {
    pub timescale: String,
    pub comments: Vec<String>,
    pub signals: Vec<Signal>,
    /// `(time, signal index, value)` in file order.
    pub changes: Vec<(u64, usize, u64)>,
    pub end: u64,
}

impl Dump {
    pub fn signal(&self, scope: &str, name: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.scope == scope && s.name == name)
    }

    /// Value of signal `sig` at time `t`.
    pub fn value_at(&self, sig: usize, t: u64) -> Option<u64> {
        self.changes.iter().take_while(|c| c.0 <= t).filter(|c| c.1 == sig).last().map(|c| c.2)
    }

    /// Changes of one signal.
    pub fn history(&self, sig: usize) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.changes.iter().filter(move |c| c.1 == sig).map(|c| (c.0, c.2))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VcdError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for VcdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for VcdError {}

/// Reads `text`, checking a well-formed header, monotone timestamps and that
/// every value change refers to a declared signal and fits its width.
pub fn parse(text: &str) -> Result<Dump, VcdError> {
    let mut tokens = text
        .lines()
        .enumerate()
        .flat_map(|(n, l)| l.split_whitespace().map(move |w| (n + 1, w)))
        .peekable();
    let err = |line, message: String| VcdError { line, message };
    let mut dump = Dump::default();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut scopes: Vec<String> = Vec::new();
    let mut in_header = true;
    let mut now: Option<u64> = None;

    let body = |tokens: &mut dyn Iterator<Item = (usize, &str)>, line: usize, cmd: &str| -> Result<Vec<String>, VcdError> {
        let mut words = Vec::new();
        while let Some((_, w)) = tokens.next() {
            if w == "$end" {
                return Ok(words);
            }
            words.push(w.to_string());
        }
        Err(err(line, format!("{cmd} is not closed by $end")))
    };

    while let Some((line, tok)) = tokens.next() {
        if in_header {
            match tok {
                "$comment" => dump.comments.push(body(&mut tokens, line, tok)?.join(" ")),
                "$date" | "$version" => {
                    body(&mut tokens, line, tok)?;
                }
                "$timescale" => {
                    let w = body(&mut tokens, line, tok)?.join("");
                    let unit = w.trim_start_matches(|c: char| c.is_ascii_digit());
                    if !matches!(w.strip_suffix(unit), Some("1" | "10" | "100")) || !["s", "ms", "us", "ns", "ps", "fs"].contains(&unit) {
                        return Err(err(line, format!("bad timescale {w:?}")));
                    }
                    dump.timescale = w;
                }
                "$scope" => {
                    let w = body(&mut tokens, line, tok)?;
                    if w.len() != 2 {
                        return Err(err(line, "$scope needs a type and a name".into()));
                    }
                    scopes.push(w[1].clone());
                }
                "$upscope" => {
                    body(&mut tokens, line, tok)?;
                    if scopes.pop().is_none() {
                        return Err(err(line, "$upscope without an open scope".into()));
                    }
                }
                "$var" => {
                    let w = body(&mut tokens, line, tok)?;
                    if w.len() < 4 {
                        return Err(err(line, "$var needs type, width, id and name".into()));
                    }
                    let width: u32 = w[1].parse().map_err(|_| err(line, format!("bad width {:?}", w[1])))?;
                    if width == 0 {
                        return Err(err(line, "zero-width variable".into()));
                    }
                    if ids.contains_key(&w[2]) {
                        return Err(err(line, format!("id {:?} declared twice", w[2])));
                    }
                    ids.insert(w[2].clone(), dump.signals.len());
                    dump.signals.push(Signal { scope: scopes.join("."), name: w[3].clone(), width, id: w[2].clone() });
                }
                "$enddefinitions" => {
                    body(&mut tokens, line, tok)?;
                    if !scopes.is_empty() {
                        return Err(err(line, "unclosed $scope at $enddefinitions".into()));
                    }
                    if dump.timescale.is_empty() {
                        return Err(err(line, "missing $timescale".into()));
                    }
                    if dump.signals.is_empty() {
                        return Err(err(line, "no variables declared".into()));
                    }
                    in_header = false;
                }
                _ => return Err(err(line, format!("unexpected {tok:?} in header"))),
            }
            continue;
        }
        if let Some(t) = tok.strip_prefix('#') {
            let t: u64 = t.parse().map_err(|_| err(line, format!("bad timestamp {tok:?}")))?;
            if now.is_some_and(|n| t < n) {
                return Err(err(line, format!("timestamp {t} goes backwards")));
            }
            now = Some(t);
            dump.end = t;
            continue;
        }
        match tok {
            "$dumpvars" | "$dumpon" | "$dumpoff" | "$dumpall" | "$end" => continue,
            "$comment" => {
                body(&mut tokens, line, tok)?;
                continue;
            }
            _ => {}
        }
        let t = now.ok_or_else(|| err(line, "value change before the first timestamp".into()))?;
        let (bits, id) = if let Some(v) = tok.strip_prefix(['b', 'B']) {
            let (_, id) = tokens.next().ok_or_else(|| err(line, "vector value without an id".into()))?;
            (v.to_string(), id.to_string())
        } else {
            let (v, id) = tok.split_at(1);
            (v.to_string(), id.to_string())
        };
        let &sig = ids.get(&id).ok_or_else(|| err(line, format!("undeclared signal id {id:?}")))?;
        if bits.len() as u32 > dump.signals[sig].width {
            return Err(err(line, format!("value {bits} is wider than {} bits", dump.signals[sig].width)));
        }
        let v = u64::from_str_radix(&bits, 2).map_err(|_| err(line, format!("unsupported value {bits:?}")))?;
        dump.changes.push((t, sig, v));
    }
    if in_header {
        return Err(err(text.lines().count(), "missing $enddefinitions".into()));
    }
    Ok(dump)
}
