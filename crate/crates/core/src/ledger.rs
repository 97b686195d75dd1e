//! Token conservation ledger.
//!
//! Every token inserted into any link is recorded here with its full
//! lifecycle history. The report folds `created` and `reversed` (tokens back
//! in the sender's hands) into the in-transit bucket, so at every instant
//! `inserted == delivered + rejected + in_transit + unaccounted`, and
//! `unaccounted` counts only tokens whose holder dropped them without a fate.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Digest, NodeId, TokenId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lifecycle {
    Created,
    InTransit,
    Delivered,
    Rejected,
    Reversed,
}

impl Lifecycle {
    pub fn is_terminal(self) -> bool {
        matches!(self, Lifecycle::Delivered | Lifecycle::Rejected)
    }

    pub fn can_become(self, to: Lifecycle) -> bool {
        use Lifecycle::*;
        matches!(
            (self, to),
            (Created, InTransit)
                | (InTransit, Delivered)
                | (InTransit, Rejected)
                | (InTransit, Reversed)
                | (Reversed, InTransit)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    pub origin: NodeId,
    pub digest: Digest,
    pub lifecycle: Lifecycle,
}

impl Token {
    pub fn new(id: TokenId, origin: NodeId, payload: &[u8]) -> Self {
        Token {
            id,
            origin,
            digest: Digest::of(payload),
            lifecycle: Lifecycle::Created,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LedgerEntryId(pub u64);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConservationReport {
    pub inserted: u64,
    pub delivered: u64,
    pub rejected: u64,
    pub in_transit: u64,
    pub unaccounted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("accounting integrity: {0} inserted twice")]
    DuplicateToken(TokenId),
    #[error("accounting integrity: {0} was never inserted")]
    UnknownToken(TokenId),
    #[error("accounting integrity: {token} inserted in state {state:?}, expected created")]
    NotFresh { token: TokenId, state: Lifecycle },
    #[error("accounting integrity: illegal transition {from:?} -> {to:?} for {token}")]
    IllegalTransition {
        token: TokenId,
        from: Lifecycle,
        to: Lifecycle,
    },
    #[error("accounting integrity: {0} was already orphaned")]
    Orphaned(TokenId),
    #[error("audit failed: {0:?}")]
    AuditFailed(ConservationReport),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Entry {
    token: Token,
    history: Vec<Lifecycle>,
    orphaned: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ledger {
    entries: Vec<Entry>,
    index: BTreeMap<TokenId, usize>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, token: Token) -> Result<LedgerEntryId, LedgerError> {
        if self.index.contains_key(&token.id) {
            return Err(LedgerError::DuplicateToken(token.id));
        }
        if token.lifecycle != Lifecycle::Created {
            return Err(LedgerError::NotFresh {
                token: token.id,
                state: token.lifecycle,
            });
        }
        let slot = self.entries.len();
        self.index.insert(token.id, slot);
        self.entries.push(Entry {
            token,
            history: Vec::new(),
            orphaned: false,
        });
        Ok(LedgerEntryId(slot as u64 + 1))
    }

    pub fn transition(&mut self, id: TokenId, to: Lifecycle) -> Result<(), LedgerError> {
        let entry = self.entry_mut(id)?;
        if entry.orphaned {
            return Err(LedgerError::Orphaned(id));
        }
        let from = entry.token.lifecycle;
        if !from.can_become(to) {
            return Err(LedgerError::IllegalTransition { token: id, from, to });
        }
        entry.token.lifecycle = to;
        entry.history.push(to);
        Ok(())
    }

    /// The holder dropped the token without resolving its fate (a link reset).
    /// The token leaves the in-transit bucket and becomes unaccounted.
    pub fn orphan(&mut self, id: TokenId) -> Result<(), LedgerError> {
        let entry = self.entry_mut(id)?;
        if entry.orphaned {
            return Err(LedgerError::Orphaned(id));
        }
        if entry.token.lifecycle.is_terminal() {
            return Err(LedgerError::IllegalTransition {
                token: id,
                from: entry.token.lifecycle,
                to: entry.token.lifecycle,
            });
        }
        entry.orphaned = true;
        Ok(())
    }

    pub fn get(&self, id: TokenId) -> Option<&Token> {
        self.index.get(&id).map(|&i| &self.entries[i].token)
    }

    pub fn lifecycle(&self, id: TokenId) -> Option<Lifecycle> {
        self.get(id).map(|t| t.lifecycle)
    }

    /// Transitions applied to the token since insertion (insertion itself is
    /// not a transition).
    pub fn history(&self, id: TokenId) -> Option<&[Lifecycle]> {
        self.index.get(&id).map(|&i| self.entries[i].history.as_slice())
    }

    pub fn is_orphaned(&self, id: TokenId) -> bool {
        self.index
            .get(&id)
            .map(|&i| self.entries[i].orphaned)
            .unwrap_or(false)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.entries.iter().map(|e| &e.token)
    }

    pub fn report(&self) -> ConservationReport {
        let mut r = ConservationReport {
            inserted: self.entries.len() as u64,
            ..Default::default()
        };
        for e in &self.entries {
            if e.orphaned {
                continue;
            }
            match e.token.lifecycle {
                Lifecycle::Delivered => r.delivered += 1,
                Lifecycle::Rejected => r.rejected += 1,
                Lifecycle::Created | Lifecycle::InTransit | Lifecycle::Reversed => {
                    r.in_transit += 1
                }
            }
        }
        r.unaccounted = r.inserted - r.delivered - r.rejected - r.in_transit;
        r
    }

    /// Full audit. At quiescence nothing may still be in transit and nothing
    /// may be unaccounted.
    pub fn audit(&self, at_quiescence: bool) -> Result<ConservationReport, LedgerError> {
        let r = self.report();
        if at_quiescence && (r.in_transit > 0 || r.unaccounted != 0) {
            return Err(LedgerError::AuditFailed(r));
        }
        Ok(r)
    }

    fn entry_mut(&mut self, id: TokenId) -> Result<&mut Entry, LedgerError> {
        match self.index.get(&id) {
            Some(&i) => Ok(&mut self.entries[i]),
            None => Err(LedgerError::UnknownToken(id)),
        }
    }
}
