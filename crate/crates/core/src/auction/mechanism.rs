//! Single-slot second-price allocation and pricing with eCPM ranking.
//!
//! eCPM of advertiser `i` on impression `j` is `bid_i * v_ji`. Ties are broken
//! by the larger advertiser id so that the outcome does not depend on the
//! column order.

use crate::error::{Error, Result};

use super::AuctionBatch;

/// Outcome of one impression's auction among the eligible bidders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowOutcome {
    pub winner: usize,
    pub price: f64,
}

fn beats(ecpm_a: f64, id_a: u64, ecpm_b: f64, id_b: u64) -> bool {
    ecpm_a > ecpm_b || (ecpm_a == ecpm_b && id_a > id_b)
}

/// Runs the auction for one impression. `eligible[i] == false` masks the
/// bidder out entirely. Returns `None` when no eligible bidder has a positive
/// eCPM (the impression goes to organic traffic).
pub fn auction_row(
    bids: &[f64],
    values: &[f64],
    ids: &[u64],
    eligible: &[bool],
    reserve: f64,
) -> Option<RowOutcome> {
    let mut best: Option<(usize, f64)> = None;
    let mut second: f64 = 0.0;
    for i in 0..bids.len() {
        if !eligible[i] {
            continue;
        }
        let ecpm = bids[i] * values[i];
        if ecpm <= 0.0 {
            continue;
        }
        match best {
            None => best = Some((i, ecpm)),
            Some((b, be)) => {
                if beats(ecpm, ids[i], be, ids[b]) {
                    second = second.max(be);
                    best = Some((i, ecpm));
                } else {
                    second = second.max(ecpm);
                }
            }
        }
    }
    let (winner, _) = best?;
    let v = values[winner];
    let raw = if second > 0.0 { second / v } else { reserve };
    let price = raw.clamp(0.0, bids[winner]);
    Some(RowOutcome { winner, price })
}

fn check_inputs(bids: &[f64], batch: &AuctionBatch, ids: &[u64]) -> Result<()> {
    let n = bids.len();
    if ids.len() != n {
        return Err(Error::shape("allocate", format!("{} bids but {} ids", n, ids.len())));
    }
    if let Some(row) = batch.values.iter().find(|r| r.len() != n) {
        return Err(Error::shape(
            "allocate",
            format!("value row has {} columns, expected {n}", row.len()),
        ));
    }
    if let Some(b) = bids.iter().find(|b| !b.is_finite() || **b < 0.0) {
        return Err(Error::InvalidArgument(format!("bid {b} must be finite and >= 0")));
    }
    Ok(())
}

/// Allocation matrix `G` (M×N, one-hot rows; all-zero rows for impressions no
/// advertiser bid on).
pub fn allocate(bids: &[f64], batch: &AuctionBatch, ids: &[u64]) -> Result<Vec<Vec<u8>>> {
    check_inputs(bids, batch, ids)?;
    let eligible = vec![true; bids.len()];
    Ok(batch
        .values
        .iter()
        .map(|row| {
            let mut g = vec![0u8; bids.len()];
            if let Some(o) = auction_row(bids, row, ids, &eligible, 0.0) {
                g[o.winner] = 1;
            }
            g
        })
        .collect())
}

/// Cost matrix `C` for an allocation produced by [`allocate`]: the winner of
/// impression `j` pays the runner-up eCPM divided by its own value, clipped to
/// `[0, bid]`, or the reserve when it is the only bidder.
pub fn price(
    bids: &[f64],
    batch: &AuctionBatch,
    ids: &[u64],
    allocation: &[Vec<u8>],
    reserve: f64,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(bids, batch, ids)?;
    if allocation.len() != batch.values.len() {
        return Err(Error::shape(
            "price",
            format!("{} allocation rows for {} impressions", allocation.len(), batch.values.len()),
        ));
    }
    let eligible = vec![true; bids.len()];
    batch
        .values
        .iter()
        .zip(allocation)
        .map(|(row, g)| {
            let mut c = vec![0.0; bids.len()];
            let outcome = auction_row(bids, row, ids, &eligible, reserve);
            match (outcome, g.iter().position(|&x| x == 1)) {
                (Some(o), Some(w)) if o.winner == w => c[w] = o.price,
                (None, None) => {}
                _ => {
                    return Err(Error::InvalidArgument(
                        "allocation is not the auction outcome for these bids".into(),
                    ))
                }
            }
            Ok(c)
        })
        .collect()
}
