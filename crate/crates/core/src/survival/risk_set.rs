use std::cmp::Ordering;

use crate::data::Dataset;

/// One distinct event time in a [`RiskSetIndex`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventTime {
    pub time: f64,
    /// First sorted position at risk; the risk set is `start..n`.
    pub start: usize,
    /// Number of events at this time. They occupy `start..start + n_events`.
    pub n_events: usize,
}

/// Records sorted by time with the risk-set boundaries of every event time.
///
/// Order: time ascending, events before censorings at equal times, then
/// input order. A subject censored at an event time is therefore in that
/// time's risk set.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSetIndex {
    order: Vec<usize>,
    times: Vec<f64>,
    events: Vec<bool>,
    event_times: Vec<EventTime>,
}

impl RiskSetIndex {
    pub fn new(times: &[f64], events: &[bool]) -> Self {
        assert_eq!(times.len(), events.len());
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| {
            times[a]
                .partial_cmp(&times[b])
                .unwrap_or(Ordering::Equal)
                .then_with(|| events[b].cmp(&events[a]))
        });
        let sorted_times: Vec<f64> = order.iter().map(|&i| times[i]).collect();
        let sorted_events: Vec<bool> = order.iter().map(|&i| events[i]).collect();

        let mut event_times = Vec::new();
        let mut pos = 0;
        let n = order.len();
        while pos < n {
            let t = sorted_times[pos];
            let mut end = pos;
            while end < n && sorted_times[end] == t {
                end += 1;
            }
            let d = sorted_events[pos..end].iter().filter(|&&e| e).count();
            if d > 0 {
                event_times.push(EventTime {
                    time: t,
                    start: pos,
                    n_events: d,
                });
            }
            pos = end;
        }
        RiskSetIndex {
            order,
            times: sorted_times,
            events: sorted_events,
            event_times,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `order()[k]` is the input index of the record at sorted position `k`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn sorted_times(&self) -> &[f64] {
        &self.times
    }

    pub fn sorted_events(&self) -> &[bool] {
        &self.events
    }

    pub fn event_times(&self) -> &[EventTime] {
        &self.event_times
    }

    pub fn risk_set_size(&self, k: usize) -> usize {
        self.len() - self.event_times[k].start
    }

    /// Input indices at risk at the `k`-th event time.
    pub fn risk_set(&self, k: usize) -> &[usize] {
        &self.order[self.event_times[k].start..]
    }

    /// Gathers `values` (input order) into sorted order.
    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| values[i]).collect()
    }

    /// Scatters `values` (sorted order) back to input order.
    pub fn scatter(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = values[k];
        }
        out
    }
}

pub fn risk_set_index(data: &Dataset) -> RiskSetIndex {
    RiskSetIndex::new(&data.times(), &data.events())
}
