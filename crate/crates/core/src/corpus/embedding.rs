use crate::error::{Error, Result};

/// An m-bit program fingerprint packed into 64-bit words.
///
/// Bit `i` lives in word `i / 64` at position `i % 64`, which matches the
/// little-endian byte layout of the structural embedding file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StructuralEmbedding {
    m: u32,
    words: Vec<u64>,
}

impl StructuralEmbedding {
    /// All-zero vector of `m` bits. `m` must be a power of two and at least 64.
    pub fn zeroed(m: u32) -> Result<Self> {
        check_bit_length(m)?;
        Ok(Self {
            m,
            words: vec![0; (m / 64) as usize],
        })
    }

    pub fn from_words(m: u32, words: Vec<u64>) -> Result<Self> {
        check_bit_length(m)?;
        if words.len() != (m / 64) as usize {
            return Err(Error::validation(format!(
                "{} words given for a {m}-bit vector",
                words.len()
            )));
        }
        Ok(Self { m, words })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, bit: u32) -> bool {
        assert!(bit < self.m, "bit {bit} out of range for m={}", self.m);
        self.words[(bit >> 6) as usize] >> (bit & 63) & 1 == 1
    }

    pub fn set(&mut self, bit: u32) {
        assert!(bit < self.m, "bit {bit} out of range for m={}", self.m);
        self.words[(bit >> 6) as usize] |= 1 << (bit & 63);
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Indices of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros();
                rest &= rest - 1;
                Some(wi as u32 * 64 + tz)
            })
        })
    }

    /// `ceil(m/8)` bytes, bit `i` at byte `i >> 3`, position `i & 7`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn from_bytes(m: u32, bytes: &[u8]) -> Result<Self> {
        check_bit_length(m)?;
        if bytes.len() != (m / 8) as usize {
            return Err(Error::format(format!(
                "{} payload bytes for a {m}-bit vector",
                bytes.len()
            )));
        }
        let words = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self { m, words })
    }
}

fn check_bit_length(m: u32) -> Result<()> {
    if m < 64 || !m.is_power_of_two() {
        return Err(Error::validation(format!(
            "bit length m={m} must be a power of two no smaller than 64"
        )));
    }
    Ok(())
}

/// A d-dimensional program vector compared under cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbedding {
    values: Vec<f32>,
}

impl SemanticEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("semantic embedding must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(
                "semantic embedding has a non-finite value",
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout_is_lsb_first() {
        let mut e = StructuralEmbedding::zeroed(1024).unwrap();
        e.set(0);
        e.set(9);
        e.set(1023);
        let bytes = e.to_bytes();
        assert_eq!(bytes.len(), 128);
        assert_eq!(bytes[0], 0b0000_0001);
        assert_eq!(bytes[1], 0b0000_0010);
        assert_eq!(bytes[127], 0b1000_0000);
        assert_eq!(StructuralEmbedding::from_bytes(1024, &bytes).unwrap(), e);
    }

    #[test]
    fn ones_iterates_set_bits() {
        let mut e = StructuralEmbedding::zeroed(256).unwrap();
        for b in [3, 64, 65, 200] {
            e.set(b);
        }
        assert_eq!(e.ones().collect::<Vec<_>>(), vec![3, 64, 65, 200]);
        assert_eq!(e.count_ones(), 4);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(StructuralEmbedding::zeroed(1000).is_err());
        assert!(StructuralEmbedding::zeroed(32).is_err());
        assert!(SemanticEmbedding::new(vec![f32::INFINITY]).is_err());
    }
}
