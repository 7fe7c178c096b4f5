//! Time-dependent bilateral negotiation.
//!
//! The consumer concedes from (max resources, min price) towards
//! (min resources, max price) along a polynomial curve; the provider prices
//! whatever VM the consumer asks for with time-dependent per-unit resource
//! prices. Only the consumer ever accepts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{
    AgentId, Agreement, Concession, ConsumerParams, PerResource, PlanTax, ProviderParams, Resource,
    Tick, VmOffer,
};

/// Anything that can tell what tax would be due on a VM sold at `net_price`.
pub trait TaxEstimator {
    fn estimate_tax(&self, net_price: f64, vm: &VmOffer) -> f64;
}

impl<F> TaxEstimator for F
where
    F: Fn(f64, &VmOffer) -> f64,
{
    fn estimate_tax(&self, net_price: f64, vm: &VmOffer) -> f64 {
        self(net_price, vm)
    }
}

/// Zero tax everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTax;

impl TaxEstimator for NoTax {
    fn estimate_tax(&self, _: f64, _: &VmOffer) -> f64 {
        0.0
    }
}

fn time_fraction(t: Tick, t_max: Tick) -> f64 {
    if t_max == 0 {
        return 1.0;
    }
    t.min(t_max) as f64 / t_max as f64
}

/// Consumer concession factor, `k` at t=0 and 1 from the deadline on.
pub fn consumer_alpha(t: Tick, params: &ConsumerParams) -> f64 {
    let x = time_fraction(t, params.t_max);
    let alpha = params.k + (1.0 - params.k) * x.powf(1.0 / params.beta);
    alpha.clamp(0.0, 1.0)
}

/// The counteroffer the consumer sends at time `t`.
pub fn consumer_counteroffer(t: Tick, params: &ConsumerParams) -> VmOffer {
    let alpha = consumer_alpha(t, params);
    // resources: more is better, so they start high
    let resource = |r: Resource| {
        let b = params.resource_bounds(r);
        b.min + (1.0 - alpha) * (b.max - b.min)
    };
    VmOffer {
        storage: resource(Resource::Storage),
        ram: resource(Resource::Ram),
        processing_power: resource(Resource::ProcessingPower),
        price: params.price.min + alpha * (params.price.max - params.price.min),
        sender: params.id,
        timestamp: t.min(params.t_max),
    }
}

/// Consumer utility of an offer. `Unacceptable` orders below every value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Utility {
    Unacceptable,
    Value(f64),
}

impl Utility {
    pub fn value(&self) -> Option<f64> {
        match self {
            Utility::Unacceptable => None,
            Utility::Value(v) => Some(*v),
        }
    }
}

/// Log utility over the VM resources and the remaining price headroom.
///
/// `gross_price` replaces the offer's own (net) price.
pub fn consumer_utility(offer: &VmOffer, gross_price: f64, params: &ConsumerParams) -> Utility {
    let w = &params.weights;
    let headroom = params.max_price() - gross_price;
    let args = [
        offer.storage * w.storage,
        offer.processing_power * w.processing_power,
        offer.ram * w.ram,
        headroom,
    ];
    if args.iter().any(|a| !(*a > 0.0)) {
        return Utility::Unacceptable;
    }
    let u = args[0].ln() + args[1].ln() + args[2].ln() + headroom.ln() * w.price;
    if u.is_nan() {
        Utility::Unacceptable
    } else {
        Utility::Value(u)
    }
}

/// Gross price of an offer as seen by the consumer.
pub fn gross_price(offer: &VmOffer, tax: &dyn TaxEstimator) -> f64 {
    offer.price + tax.estimate_tax(offer.price, offer).max(0.0)
}

/// Gross price the consumer attaches to its own planned counteroffer.
pub fn planned_gross_price(plan: &VmOffer, params: &ConsumerParams, tax: &dyn TaxEstimator) -> f64 {
    match params.plan_tax {
        PlanTax::Included => gross_price(plan, tax),
        PlanTax::Excluded => plan.price,
    }
}

/// Accept iff the received offer beats the counteroffer the consumer would
/// send one round (`epsilon`) later, both valued at tax-inclusive prices.
pub fn consumer_accepts(
    received: &VmOffer,
    t: Tick,
    epsilon: Tick,
    params: &ConsumerParams,
    tax: &dyn TaxEstimator,
) -> bool {
    let u_received = consumer_utility(received, gross_price(received, tax), params);
    let plan = consumer_counteroffer(t + epsilon, params);
    let u_plan = consumer_utility(&plan, planned_gross_price(&plan, params, tax), params);
    u_received > u_plan
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProviderBetas {
    pub resource_aware: f64,
    pub preference: f64,
}

/// Resource-aware `e^(A_i - mean(A))` and preference `e^(1/n - w_i)` betas.
pub fn provider_betas(params: &ProviderParams) -> PerResource<ProviderBetas> {
    let n = Resource::ALL.len() as f64;
    let mean_availability = params.availability.sum() / n;
    PerResource::from_fn(|r| ProviderBetas {
        resource_aware: (params.availability.get(r) - mean_availability).exp(),
        preference: (1.0 / n - params.importance.get(r)).exp(),
    })
}

/// Provider time factor for one resource, `irp_fraction` at t=0 and 1 at
/// the deadline.
pub fn provider_alpha(t: Tick, beta: f64, params: &ProviderParams) -> f64 {
    let x = time_fraction(t, params.t_max);
    let irp = params.irp_fraction;
    (irp + (1.0 - irp) * x.powf(1.0 / beta)).clamp(0.0, 1.0)
}

/// Per-unit price of `resource` at time `t`; always within [MinRP, MaxRP].
pub fn provider_resource_price(
    t: Tick,
    resource: Resource,
    beta: f64,
    params: &ProviderParams,
) -> f64 {
    let lo = params.min_rp.get(resource);
    let hi = params.max_rp.get(resource);
    let alpha = provider_alpha(t, beta, params);
    let rp = match params.concession {
        Concession::Rising => lo + alpha * (hi - lo),
        Concession::Falling => hi - alpha * (hi - lo),
    };
    rp.clamp(lo, hi)
}

/// Combined per-unit price: the mean of the resource-aware and the
/// preference-based price.
pub fn combined_resource_price(t: Tick, resource: Resource, params: &ProviderParams) -> f64 {
    let betas = provider_betas(params).get(resource);
    0.5 * provider_resource_price(t, resource, betas.resource_aware, params)
        + 0.5 * provider_resource_price(t, resource, betas.preference, params)
}

/// Prices the VM in `incoming`: same resources, provider's price attached.
pub fn provider_price_offer(incoming: &VmOffer, t: Tick, params: &ProviderParams) -> VmOffer {
    let betas = provider_betas(params);
    let price = Resource::ALL
        .iter()
        .map(|&r| {
            let b = betas.get(r);
            let rp = 0.5 * provider_resource_price(t, r, b.resource_aware, params)
                + 0.5 * provider_resource_price(t, r, b.preference, params);
            rp * incoming.quantity(r)
        })
        .sum();
    VmOffer {
        price,
        sender: params.id,
        timestamp: t.min(params.t_max),
        ..*incoming
    }
}

/// Net price minus the floor cost (every resource at MinRP). Reporting only.
pub fn provider_surplus(offer: &VmOffer, params: &ProviderParams) -> f64 {
    let floor: f64 = Resource::ALL
        .iter()
        .map(|&r| params.min_rp.get(r) * offer.quantity(r))
        .sum();
    offer.price - floor
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Active,
    Agreed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NegotiationError {
    #[error("session {0} is not active")]
    NotActive(String),
    #[error("session {session}: round at t={t} does not follow the previous round at t={last}")]
    NonIncreasingTime {
        session: String,
        t: Tick,
        last: Tick,
    },
    #[error("session {0} has no provider offer to accept")]
    NothingToAccept(String),
}

/// Result of one consumer-offer / provider-reply exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOutcome {
    pub counteroffer: VmOffer,
    pub reply: VmOffer,
    pub reply_gross: f64,
    pub acceptable: bool,
}

/// Alternating-offer history between one consumer and one provider.
#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationSession {
    consumer: AgentId,
    provider: AgentId,
    history: Vec<VmOffer>,
    state: SessionState,
    t_max: Tick,
    agreement: Option<Agreement>,
}

impl NegotiationSession {
    pub fn new(consumer: &ConsumerParams, provider: &ProviderParams) -> Self {
        NegotiationSession {
            consumer: consumer.id,
            provider: provider.id,
            history: Vec::new(),
            state: SessionState::Active,
            t_max: consumer.t_max.min(provider.t_max),
            agreement: None,
        }
    }

    pub fn id(&self) -> String {
        format!("{}-{}", self.consumer, self.provider)
    }
    pub fn consumer(&self) -> AgentId {
        self.consumer
    }
    pub fn provider(&self) -> AgentId {
        self.provider
    }
    pub fn history(&self) -> &[VmOffer] {
        &self.history
    }
    pub fn state(&self) -> SessionState {
        self.state
    }
    pub fn t_max(&self) -> Tick {
        self.t_max
    }
    pub fn agreement(&self) -> Option<&Agreement> {
        self.agreement.as_ref()
    }
    pub fn is_active(&self) -> bool {
        self.state == SessionState::Active
    }

    /// Plays one exchange at `t` without deciding it. Returns `Ok(None)` and
    /// fails the session once the deadline is reached.
    pub fn propose(
        &mut self,
        t: Tick,
        epsilon: Tick,
        consumer: &ConsumerParams,
        provider: &ProviderParams,
        tax: &dyn TaxEstimator,
    ) -> Result<Option<RoundOutcome>, NegotiationError> {
        if !self.is_active() {
            return Err(NegotiationError::NotActive(self.id()));
        }
        if let Some(last) = self.history.last() {
            if t <= last.timestamp {
                return Err(NegotiationError::NonIncreasingTime {
                    session: self.id(),
                    t,
                    last: last.timestamp,
                });
            }
        }
        if t >= self.t_max {
            self.state = SessionState::Failed;
            return Ok(None);
        }
        let counteroffer = consumer_counteroffer(t, consumer);
        let reply = provider_price_offer(&counteroffer, t, provider);
        let acceptable = consumer_accepts(&reply, t, epsilon, consumer, tax);
        self.history.push(counteroffer);
        self.history.push(reply);
        Ok(Some(RoundOutcome {
            counteroffer,
            reply,
            reply_gross: gross_price(&reply, tax),
            acceptable,
        }))
    }

    /// Consumer accepts the provider's latest offer.
    pub fn accept(&mut self, tax: &dyn TaxEstimator) -> Result<Agreement, NegotiationError> {
        if !self.is_active() {
            return Err(NegotiationError::NotActive(self.id()));
        }
        let reply = match self.history.last() {
            Some(o) if !o.sender.is_consumer() => *o,
            _ => return Err(NegotiationError::NothingToAccept(self.id())),
        };
        let agreement = Agreement::new(
            self.consumer,
            self.provider,
            reply,
            tax.estimate_tax(reply.price, &reply),
        );
        self.state = SessionState::Agreed;
        self.agreement = Some(agreement.clone());
        Ok(agreement)
    }

    /// Ends an active session without agreement. No-op otherwise.
    pub fn fail(&mut self) {
        if self.is_active() {
            self.state = SessionState::Failed;
        }
    }
}

/// One full round for a single session: offer, price, and acceptance if the
/// consumer is better off taking the reply now.
pub fn run_session_round(
    session: &mut NegotiationSession,
    t: Tick,
    epsilon: Tick,
    consumer: &ConsumerParams,
    provider: &ProviderParams,
    tax: &dyn TaxEstimator,
) -> Result<Option<Agreement>, NegotiationError> {
    match session.propose(t, epsilon, consumer, provider, tax)? {
        Some(outcome) if outcome.acceptable => session.accept(tax).map(Some),
        _ => Ok(None),
    }
}
