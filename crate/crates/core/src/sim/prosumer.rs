use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::market::{FeederId, Interval, ParticipantId, Side, TOLERANCE};

/// Per-interval production capacity and demand of one participant, in kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerTrace {
    pub participant: ParticipantId,
    pub feeder: FeederId,
    pub production: Vec<f64>,
    pub demand: Vec<f64>,
    /// Storage-capable: surplus may be delivered later within the flex window.
    #[serde(default)]
    pub flexible: bool,
}

impl ProsumerTrace {
    pub fn len(&self) -> usize {
        self.production.len().min(self.demand.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Production minus demand at `t`; zero outside the trace.
    pub fn net(&self, t: Interval) -> f64 {
        let t = t as usize;
        match (self.production.get(t), self.demand.get(t)) {
            (Some(p), Some(d)) => p - d,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfferRequest {
    pub side: Side,
    pub start: Interval,
    pub end: Interval,
    pub energy: f64,
}

/// Parameters shared by all prosumers in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsumerParams {
    pub t_clear: u32,
    pub t_predict: u32,
    /// First interval that is never offered.
    pub horizon: Interval,
    pub flex_window: u32,
}

/// What a prosumer has already put on the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProsumerProgress {
    pub offered_through: Option<Interval>,
}

/// Offers for every not-yet-offered interval in `[now + t_clear, now + t_predict]`:
/// a sell offer per surplus and a buy offer per deficit. Flexible surplus gets
/// a window `[t, t + flex_window - 1]`.
pub fn prosumer_step(
    trace: &ProsumerTrace,
    progress: &mut ProsumerProgress,
    now: Interval,
    params: &ProsumerParams,
) -> Vec<OfferRequest> {
    let mut lo = now.saturating_add(params.t_clear);
    if let Some(done) = progress.offered_through {
        lo = lo.max(done.saturating_add(1));
    }
    let hi = now
        .saturating_add(params.t_predict)
        .min(params.horizon.saturating_sub(1));
    let mut out = Vec::new();
    if params.horizon == 0 || lo > hi {
        return out;
    }
    for t in lo..=hi {
        let net = trace.net(t);
        if net > TOLERANCE {
            let end = if trace.flexible {
                t.saturating_add(params.flex_window.max(1) - 1)
                    .min(params.horizon.saturating_sub(1))
            } else {
                t
            };
            out.push(OfferRequest {
                side: Side::Selling,
                start: t,
                end,
                energy: net,
            });
        } else if net < -TOLERANCE {
            out.push(OfferRequest {
                side: Side::Buying,
                start: t,
                end: t,
                energy: -net,
            });
        }
    }
    progress.offered_through = Some(hi);
    out
}
