// SPDX-License-Identifier: Apache-2.0

//! Calendar quarters in UTC.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    pub year: i32,
    /// 1..=4
    pub q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> crate::Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(Error::invalid(format!("quarter {q} out of range 1..=4")));
        }
        Ok(Quarter { year, q })
    }

    pub fn of(ts: &DateTime<Utc>) -> Self {
        Quarter {
            year: ts.year(),
            q: (ts.month0() / 3 + 1) as u8,
        }
    }

    /// Consecutive quarters map to consecutive integers.
    pub fn index(self) -> i64 {
        self.year as i64 * 4 + (self.q as i64 - 1)
    }

    pub fn from_index(idx: i64) -> Self {
        Quarter {
            year: idx.div_euclid(4) as i32,
            q: (idx.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn offset(self, k: i64) -> Self {
        Self::from_index(self.index() + k)
    }

    pub fn start(self) -> DateTime<Utc> {
        let month = (self.q as u32 - 1) * 3 + 1;
        let d = NaiveDate::from_ymd_opt(self.year, month, 1).expect("valid quarter start");
        Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).unwrap())
    }

    pub fn end(self) -> DateTime<Utc> {
        self.offset(1).start()
    }

    pub fn midpoint(self) -> DateTime<Utc> {
        let s = self.start();
        s + (self.end() - s) / 2
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::invalid(format!("malformed quarter `{s}` (expected e.g. 2023Q4)"));
        let (y, q) = s.trim().split_once(['Q', 'q']).ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let q = q.parse().map_err(|_| bad())?;
        Quarter::new(year, q)
    }
}

impl Serialize for Quarter {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quarter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_and_display() {
        let q = Quarter::new(2023, 4).unwrap();
        assert_eq!(Quarter::from_index(q.index()), q);
        assert_eq!(q.offset(1).to_string(), "2024Q1");
        assert_eq!(q.offset(-4).to_string(), "2022Q4");
        assert_eq!("2021q2".parse::<Quarter>().unwrap(), Quarter::new(2021, 2).unwrap());
        assert!("2021Q5".parse::<Quarter>().is_err());
    }

    #[test]
    fn of_timestamp_uses_utc_months() {
        let ts = Utc.with_ymd_and_hms(2022, 3, 31, 23, 59, 59).unwrap();
        assert_eq!(Quarter::of(&ts).to_string(), "2022Q1");
        let ts = Utc.with_ymd_and_hms(2022, 4, 1, 0, 0, 0).unwrap();
        assert_eq!(Quarter::of(&ts).to_string(), "2022Q2");
    }

    #[test]
    fn midpoint_lies_inside() {
        let q = Quarter::new(2024, 1).unwrap();
        let m = q.midpoint();
        assert!(m > q.start() && m < q.end());
        assert_eq!(Quarter::of(&m), q);
    }
}
