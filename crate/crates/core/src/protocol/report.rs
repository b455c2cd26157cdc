use serde::{Deserialize, Serialize};

use crate::retrieval::{PartialDecryption, RetrievalToken};
use crate::wire::{pack_list, unpack_list, MessageType, Reader, WireError, Writer};

/// An RP's disclosure of a stored token to the authorities, with any partials collected so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub case_id: String,
    pub domain: String,
    pub account_id: String,
    pub token: RetrievalToken,
    #[serde(default)]
    pub partials: Vec<PartialDecryption>,
}

impl RetrievalReport {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new(MessageType::RetrievalReport)
            .str(&self.case_id)
            .str(&self.domain)
            .str(&self.account_id)
            .bytes(&self.token.to_bytes())
            .bytes(&pack_list(
                self.partials.iter().map(PartialDecryption::to_bytes),
            ))
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b, MessageType::RetrievalReport)?;
        let case_id = r.string()?;
        let domain = r.string()?;
        let account_id = r.string()?;
        let token = RetrievalToken::from_bytes(r.bytes()?)?;
        let partials = unpack_list(r.bytes()?)?
            .into_iter()
            .map(PartialDecryption::from_bytes)
            .collect::<Result<_, _>>()?;
        r.end()?;
        Ok(Self {
            case_id,
            domain,
            account_id,
            token,
            partials,
        })
    }
}
