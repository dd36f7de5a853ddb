//! Byte-level tokenizer: three special ids, then one id per byte value.

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const BYTE_OFFSET: u32 = 3;
pub const VOCAB_SIZE: usize = 256 + BYTE_OFFSET as usize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    /// UTF-8 bytes shifted by the offset, then eos.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(|b| b as u32 + BYTE_OFFSET).chain([EOS_ID]).collect()
    }

    /// Bytes of the ids up to the first eos; pad and unk are skipped.
    pub fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        ids.iter()
            .take_while(|&&id| id != EOS_ID)
            .filter(|&&id| (BYTE_OFFSET..VOCAB_SIZE as u32).contains(&id))
            .map(|&id| (id - BYTE_OFFSET) as u8)
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, std::string::FromUtf8Error> {
        String::from_utf8(self.decode_bytes(ids))
    }
}
