//! Packet codec checked against independent reference computations.

use bluesim_core::airframe::*;
use bluesim_core::channel::AirSymbol;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Remainder of `poly` modulo `gen` over GF(2); both as coefficient lists, index = degree.
fn gf2_rem(poly: &[u8], gen: &[u8]) -> Vec<u8> {
    let mut r = poly.to_vec();
    let dg = gen.len() - 1;
    for deg in (dg..r.len()).rev() {
        if r[deg] == 1 {
            for (k, &g) in gen.iter().enumerate() {
                r[deg - dg + k] ^= g;
            }
        }
    }
    r.truncate(dg);
    r
}

fn coeffs(v: u64, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((v >> i) & 1) as u8).collect()
}

fn value(c: &[u8]) -> u64 {
    c.iter().enumerate().map(|(i, &b)| (b as u64) << i).sum()
}

/// Register shifting in `bits` (first bit first) after preloading `init`,
/// expressed as polynomial arithmetic: (init·D^n + Σ b_i·D^(deg+n-1-i)) mod g.
fn lfsr_oracle(init: u64, bits: &[u8], gen: &[u8]) -> u64 {
    let deg = gen.len() - 1;
    let n = bits.len();
    let mut poly = vec![0u8; deg + n + 1];
    for (i, b) in coeffs(init, deg).iter().enumerate() {
        poly[i + n] ^= b;
    }
    for (i, &b) in bits.iter().enumerate() {
        poly[deg + n - 1 - i] ^= b;
    }
    value(&gf2_rem(&poly, gen))
}

const G23: [u8; 6] = [1, 0, 1, 0, 1, 1]; // 1 + D^2 + D^4 + D^5
const GHEC: [u8; 9] = [1, 1, 1, 0, 0, 1, 0, 1, 1]; // 1 + D + D^2 + D^5 + D^7 + D^8
const GCRC: [u8; 17] = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1]; // 1 + D^5 + D^12 + D^16

#[test]
fn fec23_codewords_divisible_by_generator() {
    for d in 0u16..1024 {
        let c = fec23_encode(d);
        assert_eq!(c >> 5, d);
        assert!(gf2_rem(&coeffs(c as u64, 15), &G23).iter().all(|&b| b == 0), "d={d}");
    }
}

#[test]
fn fec23_unit_codeword() {
    let parity = value(&gf2_rem(&coeffs(1 << 5, 15), &G23));
    assert_eq!(fec23_encode(1) as u64, 1 << 5 | parity);
    assert_eq!(fec23_encode(1), 0b11_0101);
}

#[test]
fn fec23_corrects_every_single_flip() {
    for d in 0u16..1024 {
        let c = fec23_encode(d);
        for p in 0..15 {
            assert_eq!(fec23_decode(c ^ (1 << p)), (d, 1), "d={d} p={p}");
        }
    }
}

#[test]
fn hec_matches_polynomial_oracle() {
    assert_eq!(hec8(0, 0), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let h: u16 = rng.gen_range(0..1024);
        let u: u8 = rng.gen();
        let bits: Vec<u8> = (0..10).map(|i| ((h >> i) & 1) as u8).collect();
        assert_eq!(hec8(h, u) as u64, lfsr_oracle(u as u64, &bits, &GHEC));
    }
}

#[test]
fn hec_detects_single_flips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let h: u16 = rng.gen_range(0..1024);
        let u: u8 = rng.gen();
        for p in 0..10 {
            assert_ne!(hec8(h, u), hec8(h ^ (1 << p), u));
        }
    }
}

#[test]
fn crc_matches_polynomial_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let len = rng.gen_range(0..40);
        let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let u: u8 = rng.gen();
        let bits: Vec<u8> = payload.iter().flat_map(|b| (0..8).map(move |i| (b >> i) & 1)).collect();
        assert_eq!(crc16(&payload, u) as u64, lfsr_oracle((u as u64) << 8, &bits, &GCRC));
        assert_eq!(crc16(&payload, u), crc16(&payload, u));
    }
}

#[test]
fn crc_detects_single_flips() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let payload: Vec<u8> = (0..27).map(|_| rng.gen()).collect();
        let u: u8 = rng.gen();
        let base = crc16(&payload, u);
        for p in 0..payload.len() * 8 {
            let mut q = payload.clone();
            q[p / 8] ^= 1 << (p % 8);
            assert_ne!(crc16(&q, u), base);
        }
    }
}

#[test]
fn capacities_follow_slot_budget() {
    let budget = |slots: usize, fec: bool| {
        let bits = slots * 625 - TURNAROUND_GUARD_US as usize - ACCESS_BITS - HEADER_AIR_BITS;
        let info = if fec { bits / 15 * 10 } else { bits };
        let header = if slots == 1 { 1 } else { 2 };
        info / 8 - header - 2
    };
    assert_eq!(capacity(PacketKind::Dh1), budget(1, false));
    assert_eq!(capacity(PacketKind::Dm1), budget(1, true));
    assert_eq!(capacity(PacketKind::Dh1), 27);
    assert_eq!(capacity(PacketKind::Dm1), 17);
    assert_eq!(capacity(PacketKind::Dh3), 183);
    assert_eq!(capacity(PacketKind::Dh5), 339);
    assert_eq!(capacity(PacketKind::Dm3), 121);
    assert_eq!(capacity(PacketKind::Dm5), 224);
}

#[test]
fn single_slot_frames_fit_the_slot_budget() {
    for kind in PacketKind::ALL {
        let len = air_bits(kind, capacity(kind));
        if kind.slots() == 1 {
            assert!(len as u64 <= 625 - TURNAROUND_GUARD_US, "{kind:?}: {len}");
        }
        assert!(len as u64 <= kind.slots() * 625, "{kind:?}: {len}");
    }
}

fn syms(bits: &[u8]) -> Vec<AirSymbol> {
    bits.iter().map(|&b| AirSymbol::from_bit(b)).collect()
}

#[test]
fn id_sync_threshold() {
    let ac = AccessCode::giac();
    let bits = build_packet(&Packet::id(ac), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for flips in [10usize, 11, 12, 14] {
        let mut b = bits.clone();
        let mut pos: Vec<usize> = (0..68).collect();
        for i in 0..flips {
            let j = rng.gen_range(i..68);
            pos.swap(i, j);
            b[pos[i]] ^= 1;
        }
        let ok = matches!(parse_packet(&syms(&b), &ac, 0, DEFAULT_SYNC_THRESHOLD), ParseOutcome::Ok(_));
        assert_eq!(ok, flips <= 11, "{flips} flips");
    }
}

#[test]
fn header_single_flip_per_triple_corrected() {
    let a = BdAddr::new(0x55_AA55, 0x21, 7).unwrap();
    let ac = AccessCode::channel(&a);
    let p = Packet::with_header(ac, PacketHeader::new(5, PacketKind::Poll), Vec::new());
    let mut bits = build_packet(&p, a.uap()).unwrap();
    for k in 0..18 {
        bits[ACCESS_BITS + 3 * k + k % 3] ^= 1;
    }
    assert_eq!(parse_packet(&syms(&bits), &ac, a.uap(), 11), ParseOutcome::Ok(p));
}

#[test]
fn crc_residual_on_two_bit_corruptions() {
    let a = BdAddr::new(0x10_2030, 0x47, 1).unwrap();
    let ac = AccessCode::channel(&a);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut undetected = 0;
    let trials = 10_000;
    for _ in 0..trials {
        let payload: Vec<u8> = (0..27).map(|_| rng.gen()).collect();
        let p = Packet::with_header(ac, PacketHeader::new(1, PacketKind::Dh1), payload);
        let mut bits = build_packet(&p, a.uap()).unwrap();
        let start = ACCESS_BITS + HEADER_AIR_BITS;
        let i = rng.gen_range(start..bits.len());
        let mut j = rng.gen_range(start..bits.len());
        while j == i {
            j = rng.gen_range(start..bits.len());
        }
        bits[i] ^= 1;
        bits[j] ^= 1;
        if parse_packet(&syms(&bits), &ac, a.uap(), 11) == ParseOutcome::Ok(p) {
            undetected += 1;
        }
    }
    assert!((undetected as f64) / (trials as f64) < 1e-3);
}

fn kind_strategy() -> impl Strategy<Value = PacketKind> {
    prop::sample::select(PacketKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn build_parse_roundtrip(kind in kind_strategy(), am in 0u8..8, seqn: bool, arqn: bool, lap in 0u32..(1 << 24), uap: u8, seed: u64) {
        let a = BdAddr::new(lap, uap, 0).unwrap();
        let ac = AccessCode::channel(&a);
        let p = if kind == PacketKind::Id {
            Packet::id(ac)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = match kind {
                PacketKind::Fhs => FHS_RECORD_BYTES,
                k => rng.gen_range(0..=capacity(k)),
            };
            let payload = (0..len).map(|_| rng.gen()).collect();
            let mut h = PacketHeader::new(am, kind);
            h.seqn = seqn;
            h.arqn = arqn;
            Packet::with_header(ac, h, payload)
        };
        let bits = build_packet(&p, uap).unwrap();
        prop_assert_eq!(bits.len(), air_bits(p.kind, p.payload.len()));
        prop_assert_eq!(parse_packet(&syms(&bits), &ac, uap, 11), ParseOutcome::Ok(p));
    }

    #[test]
    fn fec13_single_flip_per_triple(v in 0u32..(1 << 18), mask in prop::collection::vec(0usize..4, 18)) {
        let bits: Vec<u8> = (0..18).map(|i| ((v >> i) & 1) as u8).collect();
        let mut enc = fec13_encode(&bits);
        for (k, m) in mask.iter().enumerate() {
            if *m < 3 {
                enc[3 * k + m] ^= 1;
            }
        }
        prop_assert_eq!(fec13_decode(&enc).unwrap(), bits);
    }
}
