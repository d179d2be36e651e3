use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Calendar date as a day count from 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i32);

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

impl Day {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Day> {
        NaiveDate::from_ymd_opt(year, month, day).map(Day::from_date)
    }

    pub fn from_date(date: NaiveDate) -> Day {
        Day((date - epoch()).num_days() as i32)
    }

    pub fn to_date(self) -> NaiveDate {
        epoch() + chrono::Duration::days(self.0 as i64)
    }

    pub fn year(self) -> i32 {
        self.to_date().year()
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_date().format("%Y-%m-%d"))
    }
}

impl FromStr for Day {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // Accept a full timestamp but keep only the date part.
        let date_part = s.trim().get(..10).unwrap_or(s.trim());
        NaiveDate::parse_from_str(date_part, "%Y-%m-%d")
            .map(Day::from_date)
            .map_err(|e| Error::Data(format!("invalid date {s:?}: {e}")))
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Signed currency amount in hundredths. Positive values are debits,
/// negative values credits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Cents(pub i64);

impl Cents {
    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn from_f64(value: f64) -> Cents {
        Cents((value * 100.0).round() as i64)
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Cents {
    type Err = Error;

    /// Parses `[+-]digits[.digits]`, ignoring thousands separators and a
    /// leading `$`. More than two fractional digits are rounded half away
    /// from zero.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("invalid amount {s:?}"));
        let t: String = s.trim().chars().filter(|&c| c != ',').collect();
        let (neg, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest.to_string()),
            None => (false, t.strip_prefix('+').unwrap_or(&t).to_string()),
        };
        let t = t.strip_prefix('$').unwrap_or(&t);
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: i64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let mut digits = frac.chars().map(|c| c as i64 - '0' as i64);
        let d1 = digits.next().unwrap_or(0);
        let d2 = digits.next().unwrap_or(0);
        let round_up = digits.next().is_some_and(|d| d >= 5);
        let mut cents = whole
            .checked_mul(100)
            .and_then(|v| v.checked_add(d1 * 10 + d2 + i64::from(round_up)))
            .ok_or_else(bad)?;
        if neg {
            cents = -cents;
        }
        Ok(Cents(cents))
    }
}

impl Serialize for Cents {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Cents {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v.is_finite() => Ok(Cents::from_f64(v)),
            Raw::Num(v) => Err(de::Error::custom(format!("invalid amount {v}"))),
            Raw::Text(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

/// A single bank transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub account_id: String,
    pub transaction_id: String,
    pub date: Day,
    pub amount: Cents,
    pub description: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub merchant_name: Option<String>,
}

fn empty_as_none<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let v = Option::<String>::deserialize(d)?;
    Ok(v.filter(|s| !s.trim().is_empty()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cents_parse_and_display() {
        assert_eq!("12.34".parse::<Cents>().unwrap(), Cents(1234));
        assert_eq!("-0.5".parse::<Cents>().unwrap(), Cents(-50));
        assert_eq!("1,500".parse::<Cents>().unwrap(), Cents(150_000));
        assert_eq!("$7.005".parse::<Cents>().unwrap(), Cents(701));
        assert_eq!("+3".parse::<Cents>().unwrap(), Cents(300));
        assert!("abc".parse::<Cents>().is_err());
        assert!("".parse::<Cents>().is_err());
        assert!("1.2.3".parse::<Cents>().is_err());
        assert_eq!(Cents(-1234).to_string(), "-12.34");
        assert_eq!(Cents(5).to_string(), "0.05");
    }

    #[test]
    fn day_round_trip() {
        let d: Day = "2023-03-14".parse().unwrap();
        assert_eq!(d.to_string(), "2023-03-14");
        assert_eq!(Day::from_ymd(1970, 1, 2), Some(Day(1)));
        assert!("2023-02-30".parse::<Day>().is_err());
        assert_eq!("2023-03-14T10:00:00Z".parse::<Day>().unwrap(), d);
    }

    #[test]
    fn transaction_json_accepts_numeric_or_text_amounts() {
        let a: Transaction = serde_json::from_str(
            r#"{"account_id":"a","transaction_id":"t","date":"2023-01-01","amount":12.5,"description":"x"}"#,
        )
        .unwrap();
        let b: Transaction = serde_json::from_str(
            r#"{"account_id":"a","transaction_id":"t","date":"2023-01-01","amount":"12.50","description":"x","merchant_name":""}"#,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.amount, Cents(1250));
        assert_eq!(a.merchant_name, None);
    }
}
