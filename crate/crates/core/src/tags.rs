//! Channelized picosecond event streams.

use serde::{Deserialize, Serialize};

/// Tag resolution used throughout: one picosecond.
pub const PS_PER_S: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Channel {
    /// TTL that accompanies every weak pulse.
    Trigger = 0,
    /// Single-photon detector click.
    Spad = 1,
}

impl Channel {
    pub fn from_u8(v: u8) -> Option<Channel> {
        match v {
            0 => Some(Channel::Trigger),
            1 => Some(Channel::Spad),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTagRecord {
    pub timestamp_ps: u64,
    pub channel: Channel,
}

impl TimeTagRecord {
    pub fn trigger(timestamp_ps: u64) -> Self {
        TimeTagRecord { timestamp_ps, channel: Channel::Trigger }
    }

    pub fn spad(timestamp_ps: u64) -> Self {
        TimeTagRecord { timestamp_ps, channel: Channel::Spad }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagStream {
    pub records: Vec<TimeTagRecord>,
}

impl TagStream {
    pub fn new(records: Vec<TimeTagRecord>) -> Self {
        TagStream { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TimeTagRecord> {
        self.records.iter()
    }

    /// Index of the first record whose timestamp goes backwards, if any.
    pub fn first_regression(&self) -> Option<usize> {
        self.records
            .windows(2)
            .position(|w| w[1].timestamp_ps < w[0].timestamp_ps)
            .map(|i| i + 1)
    }

    pub fn is_sorted(&self) -> bool {
        self.first_regression().is_none()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }

    pub fn timestamps(&self, channel: Channel) -> impl Iterator<Item = u64> + '_ {
        self.records
            .iter()
            .filter(move |r| r.channel == channel)
            .map(|r| r.timestamp_ps)
    }

    /// Merges two individually sorted timestamp lists; triggers sort before
    /// clicks on equal timestamps.
    pub fn merge(triggers: &[u64], clicks: &[u64]) -> TagStream {
        let mut records = Vec::with_capacity(triggers.len() + clicks.len());
        let (mut i, mut j) = (0, 0);
        while i < triggers.len() || j < clicks.len() {
            let take_trigger = j == clicks.len() || (i < triggers.len() && triggers[i] <= clicks[j]);
            if take_trigger {
                records.push(TimeTagRecord::trigger(triggers[i]));
                i += 1;
            } else {
                records.push(TimeTagRecord::spad(clicks[j]));
                j += 1;
            }
        }
        TagStream { records }
    }
}

impl<'a> IntoIterator for &'a TagStream {
    type Item = &'a TimeTagRecord;
    type IntoIter = std::slice::Iter<'a, TimeTagRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}
