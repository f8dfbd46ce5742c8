//! Synthetic card data (Luhn-valid PANs, track-2 strings) and the
//! acquirer-side one-time tokenization scheme.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Minutes;

/// Maximum track-2 length in characters. Also fixes the chunk overlap the
/// memory scanner uses.
pub const TRACK2_MAX_LEN: usize = 39;

/// Standard mod-10 check. Anything containing a non-digit, or shorter than
/// 13 digits, is invalid.
pub fn luhn_valid(pan: &str) -> bool {
    if pan.len() < 13 || !pan.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    luhn_sum(pan.as_bytes(), false) % 10 == 0
}

fn luhn_sum(digits: &[u8], shifted: bool) -> u32 {
    let mut sum = 0u32;
    let mut double = shifted;
    for &b in digits.iter().rev() {
        let mut d = (b - b'0') as u32;
        if double {
            d *= 2;
            if d > 9 {
                d -= 9;
            }
        }
        sum += d;
        double = !double;
    }
    sum
}

/// Check digit that makes `body` + digit Luhn-valid.
pub fn luhn_check_digit(body: &str) -> Option<char> {
    if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let sum = luhn_sum(body.as_bytes(), true);
    Some(char::from(b'0' + ((10 - (sum % 10) as u8) % 10)))
}

/// One synthetic payment card. `track2` is the string the card reader loads
/// into POS process memory: PAN, `=` separator, expiry (YYMM), service code,
/// discretionary digits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardRecord {
    pub pan: String,
    pub expiry: String,
    pub service_code: String,
    pub track2: String,
}

pub fn generate_card(rng: &mut impl Rng) -> CardRecord {
    let mut body = String::with_capacity(15);
    body.push('4');
    for _ in 0..14 {
        body.push(char::from(b'0' + rng.random_range(0..10u8)));
    }
    let check = luhn_check_digit(&body).expect("digit body");
    let pan = format!("{body}{check}");
    let expiry = format!(
        "{:02}{:02}",
        rng.random_range(14..19u8),
        rng.random_range(1..13u8)
    );
    let service_code = format!("{:03}", rng.random_range(0..1000u16));
    let mut discretionary = String::with_capacity(8);
    for _ in 0..8 {
        discretionary.push(char::from(b'0' + rng.random_range(0..10u8)));
    }
    let track2 = format!("{pan}={expiry}{service_code}{discretionary}");
    debug_assert!(track2.len() <= TRACK2_MAX_LEN);
    CardRecord {
        pan,
        expiry,
        service_code,
        track2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenState {
    Active,
    Redeemed,
    Nullified,
}

/// One-time, merchant-bound stand-in for a card. The id is drawn from the
/// seeded generator independently of the PAN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: String,
    pub merchant: String,
    pub state: TokenState,
    pub issued: Minutes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedeemOutcome {
    Approved,
    RejectedWrongMerchant,
    RejectedReused,
    RejectedNullified,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown token {0}")]
    UnknownToken(String),
}

struct LedgerEntry {
    card: CardRecord,
    merchant: String,
    state: TokenState,
}

/// Private acquirer-side map from token id to card, merchant and state.
/// Merchants never hold entries; they only ever see token ids.
#[derive(Default)]
pub struct AcquirerLedger {
    entries: BTreeMap<String, LedgerEntry>,
}

const TOKEN_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
const TOKEN_LEN: usize = 16;

impl AcquirerLedger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Issue a fresh active token bound to `merchant`. The id is resampled
    /// until it contains a letter and shares no 4-digit run with the PAN.
    pub fn tokenize(
        &mut self,
        card: &CardRecord,
        merchant: &str,
        now: Minutes,
        rng: &mut impl Rng,
    ) -> Token {
        let id = loop {
            let candidate: String = (0..TOKEN_LEN)
                .map(|_| char::from(TOKEN_ALPHABET[rng.random_range(0..TOKEN_ALPHABET.len())]))
                .collect();
            if candidate.bytes().all(|b| b.is_ascii_digit()) {
                continue;
            }
            if shares_digit_run(&candidate, &card.pan, 4) {
                continue;
            }
            if self.entries.contains_key(&candidate) {
                continue;
            }
            break candidate;
        };
        self.entries.insert(
            id.clone(),
            LedgerEntry {
                card: card.clone(),
                merchant: merchant.to_string(),
                state: TokenState::Active,
            },
        );
        Token {
            id,
            merchant: merchant.to_string(),
            state: TokenState::Active,
            issued: now,
        }
    }

    /// Approve exactly once, only for the bound merchant, only while active.
    pub fn redeem(&mut self, token_id: &str, merchant: &str) -> Result<RedeemOutcome, LedgerError> {
        let entry = self
            .entries
            .get_mut(token_id)
            .ok_or_else(|| LedgerError::UnknownToken(token_id.to_string()))?;
        let outcome = match entry.state {
            TokenState::Redeemed => RedeemOutcome::RejectedReused,
            TokenState::Nullified => RedeemOutcome::RejectedNullified,
            TokenState::Active if entry.merchant != merchant => {
                RedeemOutcome::RejectedWrongMerchant
            }
            TokenState::Active => {
                entry.state = TokenState::Redeemed;
                RedeemOutcome::Approved
            }
        };
        Ok(outcome)
    }

    pub fn nullify(&mut self, token_id: &str) -> Result<(), LedgerError> {
        let entry = self
            .entries
            .get_mut(token_id)
            .ok_or_else(|| LedgerError::UnknownToken(token_id.to_string()))?;
        if entry.state == TokenState::Active {
            entry.state = TokenState::Nullified;
        }
        Ok(())
    }

    pub fn state(&self, token_id: &str) -> Option<TokenState> {
        self.entries.get(token_id).map(|e| e.state)
    }

    pub fn card_for(&self, token_id: &str) -> Option<&CardRecord> {
        self.entries.get(token_id).map(|e| &e.card)
    }
}

/// True if any `run_len` consecutive digits of `candidate` appear as a
/// substring of `pan`.
fn shares_digit_run(candidate: &str, pan: &str, run_len: usize) -> bool {
    let bytes = candidate.as_bytes();
    let mut start = 0;
    while start + run_len <= bytes.len() {
        if bytes[start..start + run_len]
            .iter()
            .all(|b| b.is_ascii_digit())
        {
            let run = &candidate[start..start + run_len];
            if pan.contains(run) {
                return true;
            }
            start += 1;
        } else {
            start += 1;
        }
    }
    false
}
