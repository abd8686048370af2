//! Reliable, ordered off-chain channels between actors.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ledger::PartyAddress;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Application,
    MerkleProof,
    VialHandover,
    Rekey,
    VpRequest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffchainMessage {
    pub from: PartyAddress,
    pub to: PartyAddress,
    pub kind: MessageKind,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

/// Per sender-receiver FIFO queues plus a log of everything ever sent.
#[derive(Clone, Debug, Default)]
pub struct Network {
    queues: BTreeMap<(PartyAddress, PartyAddress), VecDeque<OffchainMessage>>,
    history: Vec<OffchainMessage>,
}

impl Network {
    pub fn send(&mut self, from: PartyAddress, to: PartyAddress, kind: MessageKind, payload: Vec<u8>) {
        let msg = OffchainMessage { from, to, kind, payload };
        self.history.push(msg.clone());
        self.queues.entry((from, to)).or_default().push_back(msg);
    }

    /// Takes the oldest undelivered message of `kind` from `from` to `to`.
    pub fn receive(&mut self, from: PartyAddress, to: PartyAddress, kind: MessageKind) -> Option<OffchainMessage> {
        let queue = self.queues.get_mut(&(from, to))?;
        let pos = queue.iter().position(|m| m.kind == kind)?;
        queue.remove(pos)
    }

    pub fn pending_for(&self, to: &PartyAddress) -> usize {
        self.queues.iter().filter(|((_, t), _)| t == to).map(|(_, q)| q.len()).sum()
    }

    pub fn history(&self) -> &[OffchainMessage] {
        &self.history
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(b: u8) -> PartyAddress {
        PartyAddress([b; 32])
    }

    #[test]
    fn delivers_in_send_order_per_pair() {
        let mut n = Network::default();
        n.send(addr(1), addr(2), MessageKind::Rekey, b"a".to_vec());
        n.send(addr(3), addr(2), MessageKind::Rekey, b"x".to_vec());
        n.send(addr(1), addr(2), MessageKind::Rekey, b"b".to_vec());
        assert_eq!(n.pending_for(&addr(2)), 3);
        assert_eq!(n.receive(addr(1), addr(2), MessageKind::Rekey).unwrap().payload, b"a");
        assert_eq!(n.receive(addr(1), addr(2), MessageKind::Rekey).unwrap().payload, b"b");
        assert!(n.receive(addr(1), addr(2), MessageKind::Rekey).is_none());
        assert_eq!(n.history().len(), 3);
    }

    #[test]
    fn receive_filters_by_kind() {
        let mut n = Network::default();
        n.send(addr(1), addr(2), MessageKind::MerkleProof, b"p".to_vec());
        n.send(addr(1), addr(2), MessageKind::VialHandover, b"v".to_vec());
        assert_eq!(n.receive(addr(1), addr(2), MessageKind::VialHandover).unwrap().payload, b"v");
        assert_eq!(n.receive(addr(1), addr(2), MessageKind::MerkleProof).unwrap().payload, b"p");
        assert!(n.receive(addr(2), addr(1), MessageKind::MerkleProof).is_none());
    }
}
