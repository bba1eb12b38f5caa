//! On-disk layout of a [`MemoryIndex`] (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "MEAC"
//! version      u32      1
//! dimension    u32
//! count        u64
//! tag_len      u16, then tag_len bytes of UTF-8 corpus tag
//! matrix       count * dimension f32, row-major
//! captions     count * (u32 byte length + UTF-8 bytes)
//! crc32        u32      IEEE CRC-32 of every preceding byte
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::MemoryIndex;
use crate::embedding::NORM_TOLERANCE;
use crate::scalar::l2_norm;

pub const MAGIC: [u8; 4] = *b"MEAC";
pub const VERSION: u32 = 1;

/// Bytes before the corpus tag.
const FIXED_HEADER: u64 = 4 + 4 + 4 + 8 + 2;
const READ_CHUNK: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}, not a memory index")]
    BadMagic([u8; 4]),
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("unexpected bytes after checksum")]
    TrailingBytes,
    #[error("row {row} is not unit norm (norm {norm})")]
    InvalidEmbedding { row: usize, norm: f64 },
    #[error("{0} is too long for the index format")]
    TooLong(&'static str),
}

struct CrcWriter<W> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct CrcReader<R> {
    inner: R,
    hasher: crc32fast::Hasher,
}

impl<R: Read> CrcReader<R> {
    fn exact(&mut self, buf: &mut [u8], section: &'static str) -> Result<(), FormatError> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.hasher.update(buf);
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(FormatError::Truncated(section)),
            Err(e) => Err(e.into()),
        }
    }

    fn u16(&mut self, section: &'static str) -> Result<u16, FormatError> {
        let mut b = [0u8; 2];
        self.exact(&mut b, section)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, FormatError> {
        let mut b = [0u8; 4];
        self.exact(&mut b, section)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64, FormatError> {
        let mut b = [0u8; 8];
        self.exact(&mut b, section)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self, len: usize, section: &'static str) -> Result<String, FormatError> {
        let mut b = vec![0u8; len];
        self.exact(&mut b, section)?;
        String::from_utf8(b).map_err(|_| FormatError::InvalidUtf8(section))
    }
}

/// Exact size in bytes of the serialized index.
pub fn encoded_len(index: &MemoryIndex<f32>) -> u64 {
    FIXED_HEADER
        + index.corpus_tag().len() as u64
        + 4 * index.embedding_matrix().len() as u64
        + index.captions().iter().map(|c| 4 + c.len() as u64).sum::<u64>()
        + 4
}

impl MemoryIndex<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        let file = File::create(path)?;
        let mut w = CrcWriter {
            inner: BufWriter::new(file),
            hasher: crc32fast::Hasher::new(),
        };
        self.write_to(&mut w)?;
        let crc = w.hasher.clone().finalize();
        w.inner.write_all(&crc.to_le_bytes())?;
        w.inner.flush()?;
        Ok(())
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<(), FormatError> {
        let dimension = u32::try_from(self.dimension()).map_err(|_| FormatError::TooLong("dimension"))?;
        let tag_len = u16::try_from(self.corpus_tag().len()).map_err(|_| FormatError::TooLong("corpus tag"))?;
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&dimension.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&tag_len.to_le_bytes())?;
        w.write_all(self.corpus_tag().as_bytes())?;

        let mut buf = Vec::with_capacity(READ_CHUNK);
        for chunk in self.embedding_matrix().chunks(READ_CHUNK / 4) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        for caption in self.captions() {
            let len = u32::try_from(caption.len()).map_err(|_| FormatError::TooLong("caption"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(caption.as_bytes())?;
        }
        Ok(())
    }

    /// Loads an index written by [`MemoryIndex::save`].
    ///
    /// Every row is checked against the unit-norm tolerance after the
    /// checksum passes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let mut r = CrcReader {
            inner: BufReader::with_capacity(READ_CHUNK, file),
            hasher: crc32fast::Hasher::new(),
        };

        let mut magic = [0u8; 4];
        r.exact(&mut magic, "magic")?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let dimension = r.u32("dimension")? as usize;
        let count = r.u64("count")?;
        let tag_len = r.u16("corpus tag length")?;

        // Refuse to allocate for a header that cannot fit in the file.
        let minimum = FIXED_HEADER
            .saturating_add(u64::from(tag_len))
            .saturating_add(count.saturating_mul(dimension as u64).saturating_mul(4))
            .saturating_add(count.saturating_mul(4))
            .saturating_add(4);
        if file_len < minimum {
            return Err(FormatError::Truncated("body"));
        }
        let count = count as usize;
        let corpus_tag = r.string(usize::from(tag_len), "corpus tag")?;

        let total = count * dimension;
        let mut embeddings = Vec::with_capacity(total);
        let mut buf = vec![0u8; READ_CHUNK];
        while embeddings.len() < total {
            let want = ((total - embeddings.len()) * 4).min(READ_CHUNK);
            r.exact(&mut buf[..want], "embedding matrix")?;
            embeddings.extend(
                buf[..want]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
        }

        let mut captions = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32("caption length")? as usize;
            captions.push(r.string(len, "caption")?);
        }

        let computed = r.hasher.clone().finalize();
        let mut stored = [0u8; 4];
        match r.inner.read_exact(&mut stored) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(FormatError::Truncated("checksum")),
            Err(e) => return Err(e.into()),
        }
        let stored = u32::from_le_bytes(stored);
        if stored != computed {
            return Err(FormatError::ChecksumMismatch { stored, computed });
        }
        let mut extra = [0u8; 1];
        if r.inner.read(&mut extra)? != 0 {
            return Err(FormatError::TrailingBytes);
        }

        if dimension > 0 {
            for (row, values) in embeddings.chunks_exact(dimension).enumerate() {
                let norm = f64::from(l2_norm(values));
                if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(FormatError::InvalidEmbedding { row, norm });
                }
            }
        }

        Ok(MemoryIndex::from_parts(dimension, corpus_tag, embeddings, captions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::MockEmbedder;

    fn small() -> MemoryIndex<f32> {
        let caps: Vec<String> = ["a dog on grass", "two cats", "ein Bär"].iter().map(|s| s.to_string()).collect();
        MemoryIndex::build(&caps, &MockEmbedder::new(9, 8), "unit").unwrap()
    }

    #[test]
    fn file_size_matches_layout() {
        let ix = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ix.meac");
        ix.save(&path).unwrap();
        // header 22 + tag "unit" 4, matrix 3*8*4 = 96,
        // captions (4+14) + (4+8) + (4+8) = 42 ("ein Bär" is 8 bytes), crc 4
        let expected = 22 + 4 + 96 + 42 + 4;
        assert_eq!(std::fs::metadata(&path).unwrap().len(), expected);
        assert_eq!(encoded_len(&ix), expected);
    }

    #[test]
    fn empty_index_round_trips() {
        let ix = MemoryIndex::<f32>::from_rows(512, "empty", Vec::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.meac");
        ix.save(&path).unwrap();
        let back = MemoryIndex::load(&path).unwrap();
        assert_eq!(back, ix);
        assert_eq!(back.dimension(), 512);
    }

    #[test]
    fn distinct_errors_for_each_corruption() {
        let ix = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ix.meac");
        ix.save(&path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let write = |bytes: &[u8]| {
            let p = dir.path().join("bad.meac");
            std::fs::write(&p, bytes).unwrap();
            MemoryIndex::load(&p).unwrap_err()
        };

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(write(&bad), FormatError::BadMagic(_)));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(write(&bad), FormatError::UnsupportedVersion(2)));

        assert!(matches!(write(&good[..good.len() - 10]), FormatError::Truncated(_)));
        assert!(matches!(write(&good[..2]), FormatError::Truncated("magic")));

        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 5] ^= 0x01;
        assert!(matches!(write(&bad), FormatError::ChecksumMismatch { .. }));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(write(&bad), FormatError::TrailingBytes));
    }
}
