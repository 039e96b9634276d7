/// Deterministic hash-bucket tokenizer: alphanumeric runs and single
/// punctuation characters, hashed with FNV-1a into a fixed bucket count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashTokenizer {
    pub buckets: usize,
}

impl HashTokenizer {
    pub fn new(buckets: usize) -> Self {
        assert!(buckets > 0, "tokenizer needs at least one bucket");
        HashTokenizer { buckets }
    }

    pub fn pieces(text: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                start.get_or_insert(i);
                continue;
            }
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
            if !c.is_whitespace() {
                out.push(&text[i..i + c.len_utf8()]);
            }
        }
        if let Some(s) = start {
            out.push(&text[s..]);
        }
        out
    }

    pub fn bucket(&self, piece: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in piece.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h % self.buckets as u64) as usize
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        Self::pieces(text).into_iter().map(|p| self.bucket(p)).collect()
    }
}
