//! Bit-exact baseband packet construction and parsing.
//!
//! Air layout of a packet, first transmitted bit first:
//!
//! ```text
//! ID:        preamble(4) | sync word(64)                          = 68 bits
//! others:    preamble(4) | sync word(64) | trailer(4)             = 72 bits
//!            | fec13(am_addr(3) type(4) flow arqn seqn hec(8))   = 54 bits
//!            | payload (kind dependent, see below)
//! ```
//!
//! All multi-bit fields are sent LSB first. Data payloads are
//! `payload header | user bytes | CRC-16`, then rate-2/3 coded for DM kinds.
//! The FHS payload is the fixed 144-bit FHS record plus CRC-16, sent uncoded.
//! Whitening is not applied.

use alloc::vec::Vec;
use core::fmt;

use crate::channel::AirSymbol;

/// Air bits are carried as one `u8` per bit, value 0 or 1.
pub type Bit = u8;

pub const ID_BITS: usize = 68;
pub const ACCESS_BITS: usize = 72;
pub const HEADER_INFO_BITS: usize = 18;
pub const HEADER_AIR_BITS: usize = 54;
pub const SLOT_US: u64 = 625;
/// Idle margin at the end of every slot occupation (radio turnaround and hop settling).
pub const TURNAROUND_GUARD_US: u64 = 259;
/// Default access-code correlator threshold: sync is declared when at most this
/// many of the 68 preamble and sync bits disagree.
pub const DEFAULT_SYNC_THRESHOLD: u32 = 11;

pub const GIAC_LAP: u32 = 0x9E_8B33;
pub const DIAC_LAP_BASE: u32 = 0x9E_8B00;

/// Length of the FHS record in bytes (the 144-bit standard FHS payload size).
pub const FHS_RECORD_BYTES: usize = 18;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameError {
    InvalidAddress,
    Capacity { kind: PacketKind, len: usize, max: usize },
    Malformed(&'static str),
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::InvalidAddress => write!(f, "address field out of range"),
            FrameError::Capacity { kind, len, max } => {
                write!(f, "{kind:?} payload of {len} bytes exceeds capacity {max}")
            }
            FrameError::Malformed(what) => write!(f, "malformed frame: {what}"),
        }
    }
}

/// 48-bit Bluetooth device address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BdAddr {
    lap: u32,
    uap: u8,
    nap: u16,
}

impl BdAddr {
    pub fn new(lap: u32, uap: u8, nap: u16) -> Result<Self, FrameError> {
        if lap >= 1 << 24 {
            return Err(FrameError::InvalidAddress);
        }
        Ok(BdAddr { lap, uap, nap })
    }

    /// Builds an address from its 48-bit integer form `NAP:UAP:LAP`.
    pub fn from_u64(v: u64) -> Result<Self, FrameError> {
        if v >= 1 << 48 {
            return Err(FrameError::InvalidAddress);
        }
        Ok(BdAddr {
            lap: (v & 0xFF_FFFF) as u32,
            uap: ((v >> 24) & 0xFF) as u8,
            nap: (v >> 32) as u16,
        })
    }

    pub fn to_u64(self) -> u64 {
        (self.nap as u64) << 32 | (self.uap as u64) << 24 | self.lap as u64
    }

    pub fn lap(&self) -> u32 {
        self.lap
    }

    pub fn uap(&self) -> u8 {
        self.uap
    }

    pub fn nap(&self) -> u16 {
        self.nap
    }

    /// The 28 address bits that key hop selection: LAP plus the low nibble of UAP.
    pub fn hop_key(&self) -> u32 {
        self.lap | ((self.uap as u32 & 0xF) << 24)
    }
}

impl fmt::Display for BdAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_u64();
        for i in (0..6).rev() {
            write!(f, "{:02X}", (v >> (i * 8)) & 0xFF)?;
            if i > 0 {
                f.write_str(":")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessCodeKind {
    Giac,
    /// Dedicated inquiry access code, index 0..=63 (the GIAC slot excluded).
    Diac(u8),
    /// Channel access code of the piconet whose master has this LAP.
    Channel(u32),
    /// Device access code of the paged device with this LAP.
    Device(u32),
}

impl AccessCodeKind {
    pub fn lap(&self) -> u32 {
        match *self {
            AccessCodeKind::Giac => GIAC_LAP,
            AccessCodeKind::Diac(i) => DIAC_LAP_BASE + i as u32,
            AccessCodeKind::Channel(lap) | AccessCodeKind::Device(lap) => lap,
        }
    }

    fn tag(&self) -> u64 {
        match self {
            AccessCodeKind::Giac | AccessCodeKind::Diac(_) => 0x1AC0,
            AccessCodeKind::Channel(_) => 0x0CAC,
            AccessCodeKind::Device(_) => 0x0DAC,
        }
    }
}

/// Access code with its 64-bit sync word.
///
/// The sync word is a fixed expansion of (kind, LAP) through a 64-bit mixer.
/// It does not reproduce the BCH construction of real radios; callers that
/// need a distance guarantee check it with [`sync_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccessCode {
    pub kind: AccessCodeKind,
    pub sync: u64,
}

impl AccessCode {
    pub fn new(kind: AccessCodeKind) -> Self {
        let seed = kind.tag() << 32 ^ kind.lap() as u64;
        AccessCode { kind, sync: crate::mix64(seed ^ 0x5EED_AC0D_E000_0000) }
    }

    pub fn giac() -> Self {
        Self::new(AccessCodeKind::Giac)
    }

    pub fn channel(master: &BdAddr) -> Self {
        Self::new(AccessCodeKind::Channel(master.lap()))
    }

    pub fn device(dev: &BdAddr) -> Self {
        Self::new(AccessCodeKind::Device(dev.lap()))
    }

    fn preamble(&self) -> [Bit; 4] {
        // Alternating pattern whose last bit differs from the first sync bit.
        if self.sync & 1 == 1 {
            [1, 0, 1, 0]
        } else {
            [0, 1, 0, 1]
        }
    }

    fn trailer(&self) -> [Bit; 4] {
        if self.sync >> 63 == 1 {
            [0, 1, 0, 1]
        } else {
            [1, 0, 1, 0]
        }
    }

    /// The 68 correlated bits (preamble then sync word), bit `i` in position `i`.
    pub fn correlation_word(&self) -> u128 {
        let mut w = 0u128;
        for (i, b) in self.preamble().iter().enumerate() {
            w |= (*b as u128) << i;
        }
        w | (self.sync as u128) << 4
    }

    pub fn push_bits(&self, out: &mut Vec<Bit>, with_trailer: bool) {
        out.extend_from_slice(&self.preamble());
        out.extend((0..64).map(|i| ((self.sync >> i) & 1) as Bit));
        if with_trailer {
            out.extend_from_slice(&self.trailer());
        }
    }
}

/// Hamming distance between two sync words.
pub fn sync_distance(a: &AccessCode, b: &AccessCode) -> u32 {
    (a.sync ^ b.sync).count_ones()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PacketKind {
    Id,
    Fhs,
    Poll,
    Null,
    Dm1,
    Dm3,
    Dm5,
    Dh1,
    Dh3,
    Dh5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fec {
    None,
    Rate23,
}

impl PacketKind {
    pub const ALL: [PacketKind; 10] = [
        PacketKind::Id,
        PacketKind::Fhs,
        PacketKind::Poll,
        PacketKind::Null,
        PacketKind::Dm1,
        PacketKind::Dm3,
        PacketKind::Dm5,
        PacketKind::Dh1,
        PacketKind::Dh3,
        PacketKind::Dh5,
    ];

    pub fn slots(self) -> u64 {
        match self {
            PacketKind::Dm3 | PacketKind::Dh3 => 3,
            PacketKind::Dm5 | PacketKind::Dh5 => 5,
            _ => 1,
        }
    }

    pub fn fec(self) -> Fec {
        match self {
            PacketKind::Dm1 | PacketKind::Dm3 | PacketKind::Dm5 => Fec::Rate23,
            _ => Fec::None,
        }
    }

    pub fn is_data(self) -> bool {
        matches!(
            self,
            PacketKind::Dm1
                | PacketKind::Dm3
                | PacketKind::Dm5
                | PacketKind::Dh1
                | PacketKind::Dh3
                | PacketKind::Dh5
        )
    }

    /// 4-bit header type code. `Id` has no header and therefore no code.
    pub fn type_code(self) -> Option<u8> {
        Some(match self {
            PacketKind::Id => return None,
            PacketKind::Null => 0,
            PacketKind::Poll => 1,
            PacketKind::Fhs => 2,
            PacketKind::Dm1 => 3,
            PacketKind::Dh1 => 4,
            PacketKind::Dm3 => 10,
            PacketKind::Dh3 => 11,
            PacketKind::Dm5 => 14,
            PacketKind::Dh5 => 15,
        })
    }

    pub fn from_type_code(code: u8) -> Option<PacketKind> {
        Some(match code {
            0 => PacketKind::Null,
            1 => PacketKind::Poll,
            2 => PacketKind::Fhs,
            3 => PacketKind::Dm1,
            4 => PacketKind::Dh1,
            10 => PacketKind::Dm3,
            11 => PacketKind::Dh3,
            14 => PacketKind::Dm5,
            15 => PacketKind::Dh5,
            _ => return None,
        })
    }

    fn payload_header_bytes(self) -> usize {
        if self.slots() > 1 {
            2
        } else {
            1
        }
    }
}

/// User payload capacity in bytes.
pub fn capacity(kind: PacketKind) -> usize {
    match kind {
        PacketKind::Dh1 => 27,
        PacketKind::Dh3 => 183,
        PacketKind::Dh5 => 339,
        PacketKind::Dm1 => 17,
        PacketKind::Dm3 => 121,
        PacketKind::Dm5 => 224,
        PacketKind::Fhs => FHS_RECORD_BYTES,
        PacketKind::Id | PacketKind::Poll | PacketKind::Null => 0,
    }
}

/// Logical channel carried in the payload header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogicalChannel {
    #[default]
    User,
    Lmp,
}

impl LogicalChannel {
    fn code(self) -> u8 {
        match self {
            LogicalChannel::User => 0b10,
            LogicalChannel::Lmp => 0b11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketHeader {
    pub am_addr: u8,
    pub kind: PacketKind,
    pub flow: bool,
    pub arqn: bool,
    pub seqn: bool,
}

impl PacketHeader {
    pub fn new(am_addr: u8, kind: PacketKind) -> Self {
        PacketHeader { am_addr, kind, flow: true, arqn: false, seqn: false }
    }

    /// The 10 header info bits as an integer, bit 0 sent first.
    pub fn info_bits(&self) -> u16 {
        let code = self.kind.type_code().unwrap_or(0) as u16;
        (self.am_addr as u16 & 7)
            | code << 3
            | (self.flow as u16) << 7
            | (self.arqn as u16) << 8
            | (self.seqn as u16) << 9
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub access: AccessCode,
    pub header: Option<PacketHeader>,
    pub kind: PacketKind,
    pub channel: LogicalChannel,
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn id(access: AccessCode) -> Self {
        Packet { access, header: None, kind: PacketKind::Id, channel: LogicalChannel::User, payload: Vec::new() }
    }

    pub fn with_header(access: AccessCode, header: PacketHeader, payload: Vec<u8>) -> Self {
        Packet { access, kind: header.kind, header: Some(header), channel: LogicalChannel::User, payload }
    }

    /// Number of air bits (= microseconds) this packet occupies.
    pub fn air_bits(&self) -> usize {
        air_bits(self.kind, self.payload.len())
    }
}

/// Air length in bits of a packet of `kind` carrying `payload_len` user bytes.
pub fn air_bits(kind: PacketKind, payload_len: usize) -> usize {
    match kind {
        PacketKind::Id => ID_BITS,
        PacketKind::Poll | PacketKind::Null => ACCESS_BITS + HEADER_AIR_BITS,
        PacketKind::Fhs => ACCESS_BITS + HEADER_AIR_BITS + (FHS_RECORD_BYTES + 2) * 8,
        k => {
            let info = (k.payload_header_bytes() + payload_len + 2) * 8;
            let coded = match k.fec() {
                Fec::None => info,
                Fec::Rate23 => info.div_ceil(10) * 15,
            };
            ACCESS_BITS + HEADER_AIR_BITS + coded
        }
    }
}

/// Rate-1/3 repetition code.
pub fn fec13_encode(bits: &[Bit]) -> Vec<Bit> {
    bits.iter().flat_map(|&b| [b, b, b]).collect()
}

pub fn fec13_decode(bits: &[Bit]) -> Result<Vec<Bit>, FrameError> {
    if bits.len() % 3 != 0 {
        return Err(FrameError::Malformed("rate-1/3 block length not a multiple of 3"));
    }
    Ok(bits
        .chunks_exact(3)
        .map(|t| ((t[0] + t[1] + t[2]) >= 2) as Bit)
        .collect())
}

/// Generator (D+1)(D^4+D+1) = D^5 + D^4 + D^2 + 1 of the shortened (15,10) Hamming code.
const FEC23_GEN: u16 = 0b11_0101;

fn fec23_remainder(mut v: u16) -> u16 {
    for deg in (5..15).rev() {
        if v & (1 << deg) != 0 {
            v ^= FEC23_GEN << (deg - 5);
        }
    }
    v
}

/// Systematic (15,10) encoding: data in bits 5..15, parity in bits 0..5.
/// Codeword bit `i` is the `i`-th bit on air.
pub fn fec23_encode(data: u16) -> u16 {
    let shifted = (data & 0x3FF) << 5;
    shifted | fec23_remainder(shifted)
}

/// Syndrome decoding. Corrects one error per block; two or more may mis-correct.
pub fn fec23_decode(code: u16) -> (u16, u32) {
    let code = code & 0x7FFF;
    let syndrome = fec23_remainder(code);
    if syndrome == 0 {
        return ((code >> 5) & 0x3FF, 0);
    }
    for pos in 0..15 {
        if fec23_remainder(1 << pos) == syndrome {
            return (((code ^ (1 << pos)) >> 5) & 0x3FF, 1);
        }
    }
    // Uncorrectable pattern: deliver the systematic bits, CRC decides.
    ((code >> 5) & 0x3FF, 0)
}

/// Header error check over the 10 header info bits, register preloaded with UAP.
/// Generator D^8 + D^7 + D^5 + D^2 + D + 1.
pub fn hec8(header_bits: u16, uap: u8) -> u8 {
    let mut reg = uap;
    for i in 0..10 {
        let fb = ((header_bits >> i) & 1) as u8 ^ (reg >> 7);
        reg <<= 1;
        if fb != 0 {
            reg ^= 0xA7;
        }
    }
    reg
}

/// CRC-CCITT (D^16 + D^12 + D^5 + 1) over bytes sent LSB first, register
/// preloaded with UAP in its high byte.
pub fn crc16(payload: &[u8], uap: u8) -> u16 {
    let mut reg = (uap as u16) << 8;
    for byte in payload {
        for i in 0..8 {
            let fb = ((byte >> i) & 1) as u16 ^ (reg >> 15);
            reg <<= 1;
            if fb != 0 {
                reg ^= 0x1021;
            }
        }
    }
    reg
}

fn push_int(out: &mut Vec<Bit>, v: u64, n: usize) {
    out.extend((0..n).map(|i| ((v >> i) & 1) as Bit));
}

fn read_int(bits: &[Bit]) -> u64 {
    bits.iter().enumerate().fold(0, |acc, (i, &b)| acc | (b as u64) << i)
}

fn bytes_to_bits(bytes: &[u8], out: &mut Vec<Bit>) {
    for &b in bytes {
        push_int(out, b as u64, 8);
    }
}

fn bits_to_bytes(bits: &[Bit]) -> Vec<u8> {
    bits.chunks(8).map(|c| read_int(c) as u8).collect()
}

/// Serializes a packet to air bits.
pub fn build_packet(packet: &Packet, uap: u8) -> Result<Vec<Bit>, FrameError> {
    let max = capacity(packet.kind);
    if packet.payload.len() > max {
        return Err(FrameError::Capacity { kind: packet.kind, len: packet.payload.len(), max });
    }
    let mut out = Vec::with_capacity(packet.air_bits());
    if packet.kind == PacketKind::Id {
        if packet.header.is_some() || !packet.payload.is_empty() {
            return Err(FrameError::Malformed("ID packets carry no header or payload"));
        }
        packet.access.push_bits(&mut out, false);
        return Ok(out);
    }
    let header = packet.header.ok_or(FrameError::Malformed("missing header"))?;
    if header.kind != packet.kind || header.am_addr > 7 {
        return Err(FrameError::Malformed("header does not match packet"));
    }
    packet.access.push_bits(&mut out, true);

    let info = header.info_bits();
    let mut hbits = Vec::with_capacity(HEADER_INFO_BITS);
    push_int(&mut hbits, info as u64, 10);
    push_int(&mut hbits, hec8(info, uap) as u64, 8);
    out.extend(fec13_encode(&hbits));

    match packet.kind {
        PacketKind::Poll | PacketKind::Null => {}
        PacketKind::Fhs => {
            let mut record = [0u8; FHS_RECORD_BYTES];
            record[..packet.payload.len()].copy_from_slice(&packet.payload);
            bytes_to_bits(&record, &mut out);
            push_int(&mut out, crc16(&record, uap) as u64, 16);
        }
        kind => {
            let len = packet.payload.len();
            let mut body = Vec::with_capacity(len + 4);
            let l_ch = packet.channel.code() as u16;
            if kind.payload_header_bytes() == 1 {
                body.push((l_ch | 1 << 2 | (len as u16) << 3) as u8);
            } else {
                let ph = l_ch | 1 << 2 | (len as u16) << 3;
                body.extend_from_slice(&ph.to_le_bytes());
            }
            body.extend_from_slice(&packet.payload);
            let crc = crc16(&body, uap);
            body.extend_from_slice(&crc.to_le_bytes());
            let mut info_bits = Vec::with_capacity(body.len() * 8);
            bytes_to_bits(&body, &mut info_bits);
            match kind.fec() {
                Fec::None => out.extend(info_bits),
                Fec::Rate23 => {
                    for block in info_bits.chunks(10) {
                        let cw = fec23_encode(read_int(block) as u16);
                        push_int(&mut out, cw as u64, 15);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    Ok(Packet),
    AccessMiss,
    HeaderError,
    PayloadError,
}

/// Hamming distance between the first 68 received symbols and the expected
/// preamble+sync. `None` when the window is short or holds a Z/X symbol.
pub fn correlate(symbols: &[AirSymbol], expected: &AccessCode) -> Option<u32> {
    if symbols.len() < ID_BITS {
        return None;
    }
    let mut word = 0u128;
    for (i, s) in symbols[..ID_BITS].iter().enumerate() {
        word |= (s.bit()? as u128) << i;
    }
    Some((word ^ expected.correlation_word()).count_ones())
}

fn symbol_bits(symbols: &[AirSymbol]) -> Option<Vec<Bit>> {
    symbols.iter().map(|s| s.bit()).collect()
}

/// Interprets received symbols. A frame that ends after the 68 correlated
/// bits is an ID packet; longer frames must carry a valid header.
pub fn parse_packet(
    symbols: &[AirSymbol],
    expected: &AccessCode,
    uap: u8,
    sync_threshold: u32,
) -> ParseOutcome {
    match correlate(symbols, expected) {
        Some(d) if d <= sync_threshold => {}
        _ => return ParseOutcome::AccessMiss,
    }
    if symbols.len() < ACCESS_BITS + HEADER_AIR_BITS {
        return ParseOutcome::Ok(Packet::id(*expected));
    }
    let Some(bits) = symbol_bits(&symbols[ACCESS_BITS..]) else {
        return ParseOutcome::HeaderError;
    };
    let hbits = match fec13_decode(&bits[..HEADER_AIR_BITS]) {
        Ok(h) => h,
        Err(_) => return ParseOutcome::HeaderError,
    };
    let info = read_int(&hbits[..10]) as u16;
    if read_int(&hbits[10..]) as u8 != hec8(info, uap) {
        return ParseOutcome::HeaderError;
    }
    let Some(kind) = PacketKind::from_type_code(((info >> 3) & 0xF) as u8) else {
        return ParseOutcome::HeaderError;
    };
    let header = PacketHeader {
        am_addr: (info & 7) as u8,
        kind,
        flow: info >> 7 & 1 == 1,
        arqn: info >> 8 & 1 == 1,
        seqn: info >> 9 & 1 == 1,
    };
    let body = &bits[HEADER_AIR_BITS..];
    let mut packet = Packet::with_header(*expected, header, Vec::new());
    match kind {
        PacketKind::Poll | PacketKind::Null => ParseOutcome::Ok(packet),
        PacketKind::Fhs => {
            let need = (FHS_RECORD_BYTES + 2) * 8;
            if body.len() < need {
                return ParseOutcome::PayloadError;
            }
            let record = bits_to_bytes(&body[..FHS_RECORD_BYTES * 8]);
            let crc = read_int(&body[FHS_RECORD_BYTES * 8..need]) as u16;
            if crc != crc16(&record, uap) {
                return ParseOutcome::PayloadError;
            }
            packet.payload = record;
            ParseOutcome::Ok(packet)
        }
        kind => {
            let info_bits: Vec<Bit> = match kind.fec() {
                Fec::None => body.to_vec(),
                Fec::Rate23 => {
                    let mut v = Vec::with_capacity(body.len() / 15 * 10);
                    for block in body.chunks_exact(15) {
                        let (d, _) = fec23_decode(read_int(block) as u16);
                        push_int(&mut v, d as u64, 10);
                    }
                    v
                }
            };
            let ph_len = kind.payload_header_bytes();
            if info_bits.len() < ph_len * 8 {
                return ParseOutcome::PayloadError;
            }
            let ph = read_int(&info_bits[..ph_len * 8]) as u16;
            let len = if ph_len == 1 { (ph >> 3) & 0x1F } else { (ph >> 3) & 0x1FF } as usize;
            let l_ch = ph & 3;
            let total = (ph_len + len + 2) * 8;
            if len > capacity(kind) || info_bits.len() < total {
                return ParseOutcome::PayloadError;
            }
            let bytes = bits_to_bytes(&info_bits[..total]);
            let (content, crc) = bytes.split_at(ph_len + len);
            if u16::from_le_bytes([crc[0], crc[1]]) != crc16(content, uap) {
                return ParseOutcome::PayloadError;
            }
            packet.channel = if l_ch == 0b11 { LogicalChannel::Lmp } else { LogicalChannel::User };
            packet.payload = content[ph_len..].to_vec();
            ParseOutcome::Ok(packet)
        }
    }
}

/// The FHS record carried by inquiry and page responses. Only the fields the
/// simulator uses are populated; the rest of the 144-bit record is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FhsRecord {
    pub addr: BdAddr,
    /// Bits 27..2 of the sender's clock at the start of the FHS packet.
    pub clk27_2: u32,
    pub am_addr: u8,
}

impl FhsRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(FHS_RECORD_BYTES);
        v.extend_from_slice(&self.addr.to_u64().to_le_bytes()[..6]);
        v.extend_from_slice(&(self.clk27_2 & 0x3FF_FFFF).to_le_bytes());
        v.push(self.am_addr & 7);
        v.resize(FHS_RECORD_BYTES, 0);
        v
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < 11 {
            return Err(FrameError::Malformed("short FHS record"));
        }
        let mut a = [0u8; 8];
        a[..6].copy_from_slice(&bytes[..6]);
        let clk = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]);
        Ok(FhsRecord {
            addr: BdAddr::from_u64(u64::from_le_bytes(a))?,
            clk27_2: clk & 0x3FF_FFFF,
            am_addr: bytes[10] & 7,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::channel::AirSymbol;

    fn to_symbols(bits: &[Bit]) -> Vec<AirSymbol> {
        bits.iter().map(|&b| AirSymbol::from_bit(b)).collect()
    }

    fn addr() -> BdAddr {
        BdAddr::new(0x12_3456, 0x9A, 0xBEEF).unwrap()
    }

    #[test]
    fn fec13_examples() {
        assert!(fec13_encode(&[]).is_empty());
        assert_eq!(fec13_encode(&[1, 0]), vec![1, 1, 1, 0, 0, 0]);
        assert_eq!(fec13_decode(&[1, 1, 1]).unwrap(), vec![1]);
        assert_eq!(fec13_decode(&[1, 0, 1]).unwrap(), vec![1]);
        assert!(matches!(fec13_decode(&[1, 0]), Err(FrameError::Malformed(_))));
    }

    #[test]
    fn fec13_roundtrip_exhaustive_up_to_12_bits() {
        for len in 0..=12usize {
            for v in 0u32..(1 << len) {
                let bits: Vec<Bit> = (0..len).map(|i| ((v >> i) & 1) as Bit).collect();
                assert_eq!(fec13_decode(&fec13_encode(&bits)).unwrap(), bits);
            }
        }
    }

    #[test]
    fn fec23_zero_syndrome_passthrough() {
        assert_eq!(fec23_encode(0), 0);
        for d in [0u16, 1, 0x155, 0x3FF] {
            assert_eq!(fec23_decode(fec23_encode(d)), (d, 0));
        }
    }

    #[test]
    fn capacity_table() {
        assert_eq!(capacity(PacketKind::Dh1), 27);
        assert_eq!(capacity(PacketKind::Dm1), 17);
        assert_eq!(capacity(PacketKind::Id), 0);
        assert_eq!(capacity(PacketKind::Poll), 0);
        assert_eq!(capacity(PacketKind::Null), 0);
    }

    #[test]
    fn id_and_poll_lengths() {
        let id = build_packet(&Packet::id(AccessCode::giac()), 0).unwrap();
        assert_eq!(id.len(), 68);
        let poll = Packet::with_header(AccessCode::channel(&addr()), PacketHeader::new(1, PacketKind::Poll), Vec::new());
        assert_eq!(build_packet(&poll, addr().uap()).unwrap().len(), 126);
    }

    #[test]
    fn oversize_payload_rejected() {
        let p = Packet::with_header(AccessCode::channel(&addr()), PacketHeader::new(1, PacketKind::Dm1), vec![0; 18]);
        assert!(matches!(build_packet(&p, 0), Err(FrameError::Capacity { max: 17, .. })));
    }

    #[test]
    fn dm1_single_flip_per_block_recovered() {
        let ac = AccessCode::channel(&addr());
        let mut p = Packet::with_header(ac, PacketHeader::new(3, PacketKind::Dm1), (0..17).collect());
        p.header.as_mut().unwrap().seqn = true;
        let mut bits = build_packet(&p, addr().uap()).unwrap();
        let payload_start = ACCESS_BITS + HEADER_AIR_BITS;
        let blocks = (bits.len() - payload_start) / 15;
        for k in 0..blocks {
            bits[payload_start + k * 15 + (k * 7) % 15] ^= 1;
        }
        assert_eq!(parse_packet(&to_symbols(&bits), &ac, addr().uap(), 11), ParseOutcome::Ok(p));
    }

    #[test]
    fn collision_symbol_is_access_miss() {
        let ac = AccessCode::giac();
        let mut s = to_symbols(&build_packet(&Packet::id(ac), 0).unwrap());
        s[30] = AirSymbol::X;
        assert_eq!(parse_packet(&s, &ac, 0, 11), ParseOutcome::AccessMiss);
    }

    #[test]
    fn header_corruption_detected() {
        let ac = AccessCode::channel(&addr());
        let p = Packet::with_header(ac, PacketHeader::new(2, PacketKind::Null), Vec::new());
        let mut bits = build_packet(&p, addr().uap()).unwrap();
        // Two flips in one triple defeat the majority vote; HEC must catch it.
        bits[ACCESS_BITS] ^= 1;
        bits[ACCESS_BITS + 1] ^= 1;
        assert_eq!(parse_packet(&to_symbols(&bits), &ac, addr().uap(), 11), ParseOutcome::HeaderError);
    }

    #[test]
    fn fhs_record_roundtrip() {
        let r = FhsRecord { addr: addr(), clk27_2: 0x2AB_CDEF, am_addr: 5 };
        let bytes = r.encode();
        assert_eq!(bytes.len(), FHS_RECORD_BYTES);
        assert_eq!(FhsRecord::decode(&bytes).unwrap(), r);
    }

    #[test]
    fn address_bounds() {
        assert!(BdAddr::new(1 << 24, 0, 0).is_err());
        assert!(BdAddr::from_u64(1 << 48).is_err());
        let a = BdAddr::from_u64(0x0011_2233_4455).unwrap();
        assert_eq!((a.nap(), a.uap(), a.lap()), (0x0011, 0x22, 0x33_4455));
        assert_eq!(alloc::format!("{a}"), "00:11:22:33:44:55");
    }
}
