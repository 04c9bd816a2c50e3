//! Printable, injective rendering of token bytes.
//!
//! Each byte maps to one display character following the GPT-2 byte-level
//! table, except the space byte, which renders as the word-boundary marker
//! `▁`. A surface string is the concatenation of its bytes' characters, so the
//! mapping round-trips for any byte sequence, including partial UTF-8.

use std::collections::HashMap;
use std::sync::OnceLock;

/// Display character of the space byte, prefixed to every word.
pub const BOUNDARY_MARKER: char = '\u{2581}';

struct Table {
    to_char: [char; 256],
    to_byte: HashMap<char, u8>,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let printable = |b: u32| (33..=126).contains(&b) || (161..=172).contains(&b) || (174..=255).contains(&b);
        let mut to_char = ['\0'; 256];
        let mut shifted = 0u32;
        for b in 0..256u32 {
            to_char[b as usize] = if b == 0x20 {
                BOUNDARY_MARKER
            } else if printable(b) {
                char::from_u32(b).unwrap()
            } else {
                let c = char::from_u32(256 + shifted).unwrap();
                shifted += 1;
                c
            };
        }
        let to_byte = to_char.iter().enumerate().map(|(b, c)| (*c, b as u8)).collect();
        Table { to_char, to_byte }
    })
}

pub fn byte_char(b: u8) -> char {
    table().to_char[b as usize]
}

/// Renders raw token bytes as a surface string.
pub fn surface(bytes: &[u8]) -> String {
    bytes.iter().map(|b| byte_char(*b)).collect()
}

/// Inverse of [`surface`]; `None` if a character is outside the alphabet.
pub fn surface_bytes(surface: &str) -> Option<Vec<u8>> {
    let t = table();
    surface.chars().map(|c| t.to_byte.get(&c).copied()).collect()
}
