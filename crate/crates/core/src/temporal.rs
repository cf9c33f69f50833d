//! Calendar inference: admission windows, whole-month ages and birth-month windows.
//!
//! All dates are proleptic Gregorian civil dates; there is no time-of-day or zone.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive date range `[begin, end]` in which an admission must have happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdmitWindow {
    pub begin: NaiveDate,
    pub end: NaiveDate,
}

impl AdmitWindow {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.begin <= date && date <= self.end
    }

    /// Number of days covered, both ends included.
    pub fn len_days(&self) -> i64 {
        (self.end - self.begin).num_days() + 1
    }

    /// Widens both ends by `slack` days. Saturates at the calendar limits.
    pub fn widened(&self, slack: u32) -> AdmitWindow {
        if slack == 0 {
            return *self;
        }
        let days = Days::new(u64::from(slack));
        AdmitWindow {
            begin: self.begin.checked_sub_days(days).unwrap_or(NaiveDate::MIN),
            end: self.end.checked_add_days(days).unwrap_or(NaiveDate::MAX),
        }
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.begin.iter_days().take_while(move |d| *d <= end)
    }
}

impl fmt::Display for AdmitWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.begin, self.end)
    }
}

/// The published discharge period of a record: a month, or only a year once
/// generalization has erased the month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DischargePeriod {
    Month { year: i32, month: u32 },
    Year(i32),
}

impl DischargePeriod {
    pub fn first_day(&self) -> Option<NaiveDate> {
        match *self {
            DischargePeriod::Month { year, month } => NaiveDate::from_ymd_opt(year, month, 1),
            DischargePeriod::Year(year) => NaiveDate::from_ymd_opt(year, 1, 1),
        }
    }

    pub fn last_day(&self) -> Option<NaiveDate> {
        match *self {
            DischargePeriod::Month { year, month } => NaiveDate::from_ymd_opt(year, month, days_in_month(year, month)?),
            DischargePeriod::Year(year) => NaiveDate::from_ymd_opt(year, 12, 31),
        }
    }

    /// First and last day as day numbers from the common era, for cheap comparisons.
    pub fn day_numbers(&self) -> Option<(i64, i64)> {
        let first = self.first_day()?;
        let len = match *self {
            DischargePeriod::Month { year, month } => days_in_month(year, month)?,
            DischargePeriod::Year(_) => 365 + u32::from(first.leap_year()),
        };
        let first = i64::from(first.num_days_from_ce());
        Some((first, first + i64::from(len) - 1))
    }

    /// Admission range for a stay of `los_days` that ended in this period.
    /// `None` when the period is not a real calendar period or the shift underflows.
    pub fn admit_window(&self, los_days: u32) -> Option<AdmitWindow> {
        let los = Days::new(u64::from(los_days));
        Some(AdmitWindow {
            begin: self.first_day()?.checked_sub_days(los)?,
            end: self.last_day()?.checked_sub_days(los)?,
        })
    }
}

pub fn days_in_month(year: i32, month: u32) -> Option<u32> {
    NaiveDate::from_ymd_opt(year, month, 1)?;
    let leap = year % 4 == 0 && (year % 100 != 0 || year % 400 == 0);
    Some(match month {
        2 if leap => 29,
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    })
}

/// Admission window for a discharge in `(year, month)` after `los_days` in hospital:
/// the first and last day of the discharge month, each moved back by the stay.
pub fn admit_window(year: i32, month: u32, los_days: u32) -> Result<AdmitWindow> {
    if !(1..=12).contains(&month) {
        return Err(Error::invalid("discharge month", month.to_string(), "expected 1-12"));
    }
    DischargePeriod::Month { year, month }
        .admit_window(los_days)
        .ok_or_else(|| Error::invalid("discharge year", year.to_string(), "outside the supported calendar"))
}

pub fn in_window(date: NaiveDate, window: &AdmitWindow) -> bool {
    window.contains(date)
}

/// Whole months elapsed from `dob` to `reference`; a month only completes once the
/// reference day-of-month reaches the birth day-of-month.
pub fn age_months_at(dob: NaiveDate, reference: NaiveDate) -> Result<u32> {
    if dob > reference {
        return Err(Error::BirthAfterReference { dob, reference });
    }
    Ok(whole_months(dob, reference))
}

fn whole_months(dob: NaiveDate, reference: NaiveDate) -> u32 {
    let months = 12 * (reference.year() - dob.year()) + reference.month() as i32
        - dob.month() as i32
        - i32::from(reference.day() < dob.day());
    months as u32
}

/// Inclusive range of ages in months that someone born on `dob` has over `window`.
/// Days before the birth are ignored; `None` if the window ends before the birth.
pub fn age_months_range(dob: NaiveDate, window: &AdmitWindow) -> Option<(u32, u32)> {
    if dob > window.end {
        return None;
    }
    let start = window.begin.max(dob);
    Some((whole_months(dob, start), whole_months(dob, window.end)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn of(date: NaiveDate) -> Self {
        YearMonth {
            year: date.year(),
            month: date.month(),
        }
    }

    fn index(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    fn from_index(i: i64) -> Self {
        YearMonth {
            year: i.div_euclid(12) as i32,
            month: (i.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn minus(self, months: u32) -> Self {
        Self::from_index(self.index() - i64::from(months))
    }

    pub fn next(self) -> Self {
        Self::from_index(self.index() + 1)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Contiguous run of calendar months.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthWindow {
    months: Vec<YearMonth>,
}

impl MonthWindow {
    pub fn months(&self) -> &[YearMonth] {
        &self.months
    }

    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn contains(&self, ym: YearMonth) -> bool {
        self.months.contains(&ym)
    }

    pub fn is_contiguous(&self) -> bool {
        self.months.windows(2).all(|w| w[0].next() == w[1])
    }
}

/// Birth months consistent with an age of `age_months` on some day of `window`.
///
/// On a day `d`, an age of `A` months means birth in the month `A` months before `d`
/// on or before `d`'s day-of-month, or in the month `A + 1` months before `d` on a
/// later day-of-month (which exists only if that month is long enough). The result is
/// contiguous and has at most one month more than the window touches: three for a
/// window within two calendar months, four for a window such as Jan 30 to Mar 1.
pub fn birth_month_window(age_months: u32, window: &AdmitWindow) -> MonthWindow {
    let mut months = BTreeSet::new();
    for day in window.days() {
        let here = YearMonth::of(day);
        months.insert(here.minus(age_months));
        let earlier = here.minus(age_months + 1);
        if days_in_month(earlier.year, earlier.month).is_some_and(|n| n > day.day()) {
            months.insert(earlier);
        }
    }
    MonthWindow {
        months: months.into_iter().collect(),
    }
}
