use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::isa::Word;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("address {addr} outside memory of {size} words")]
pub struct MemoryError {
    pub addr: u64,
    pub size: u64,
}

/// Flat word-addressed store. Unwritten words read as zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalMemory {
    size: u64,
    words: BTreeMap<u64, Word>,
}

impl GlobalMemory {
    pub fn new(size: u64) -> GlobalMemory {
        GlobalMemory { size, words: BTreeMap::new() }
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    fn check(&self, addr: u64) -> Result<(), MemoryError> {
        if addr < self.size {
            Ok(())
        } else {
            Err(MemoryError { addr, size: self.size })
        }
    }

    pub fn read(&self, addr: u64) -> Result<Word, MemoryError> {
        self.check(addr)?;
        Ok(self.words.get(&addr).copied().unwrap_or(0))
    }

    pub fn write(&mut self, addr: u64, value: Word) -> Result<(), MemoryError> {
        self.check(addr)?;
        if value == 0 {
            self.words.remove(&addr);
        } else {
            self.words.insert(addr, value);
        }
        Ok(())
    }

    /// Non-zero words, by address.
    pub fn nonzero(&self) -> &BTreeMap<u64, Word> {
        &self.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unwritten_reads_zero() {
        let mut m = GlobalMemory::new(8);
        assert_eq!(m.read(3), Ok(0));
        m.write(3, 7).unwrap();
        assert_eq!(m.read(3), Ok(7));
        m.write(3, 0).unwrap();
        assert!(m.nonzero().is_empty());
        assert_eq!(m.read(8), Err(MemoryError { addr: 8, size: 8 }));
    }
}
