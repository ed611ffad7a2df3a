//! Little-endian primitives shared by the binary containers.

pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self { buf: Vec::new() }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
}

pub struct Reader<'a> {
    data: &'a [u8],
    at: usize,
}

pub type ReadResult<T> = Result<T, String>;

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, at: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.at
    }

    pub fn take(&mut self, n: usize) -> ReadResult<&'a [u8]> {
        if self.remaining() < n {
            return Err(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.at,
                self.remaining()
            ));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> ReadResult<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> ReadResult<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> ReadResult<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> ReadResult<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> ReadResult<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// A length prefix whose items take at least `item_bytes` each; rejects
    /// lengths the remaining input cannot hold before anything is allocated.
    pub fn len(&mut self, item_bytes: usize) -> ReadResult<usize> {
        let n = self.u64()?;
        let need = (n as u128) * item_bytes.max(1) as u128;
        if need > self.remaining() as u128 {
            return Err(format!("length {n} exceeds the remaining input"));
        }
        Ok(n as usize)
    }

    pub fn f64s(&mut self, n: usize) -> ReadResult<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(&self) -> ReadResult<()> {
        if self.remaining() != 0 {
            return Err(format!("{} trailing bytes", self.remaining()));
        }
        Ok(())
    }
}

/// Reads `magic` and a version no newer than `max_version`.
pub fn header(r: &mut Reader<'_>, magic: &[u8; 4], max_version: u32) -> ReadResult<u32> {
    let m = r.take(4)?;
    if m != magic {
        return Err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(m),
            String::from_utf8_lossy(magic)
        ));
    }
    let v = r.u32()?;
    if v == 0 || v > max_version {
        return Err(format!("unsupported version {v}"));
    }
    Ok(v)
}
