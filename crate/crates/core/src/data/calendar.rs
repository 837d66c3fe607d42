//! Calendar helpers on UTC epoch seconds.

use chrono::{DateTime, Datelike};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const MINUTES_PER_WEEK: i64 = 7 * 24 * 60;

/// Fixed (month, day) public holidays of the synthetic calendar.
const HOLIDAYS: [(u32, u32); 6] = [(1, 1), (5, 1), (10, 1), (10, 2), (10, 3), (12, 25)];

/// Day index since the epoch (UTC).
pub fn day_index(epoch: i64) -> i64 {
    epoch.div_euclid(SECONDS_PER_DAY)
}

/// 0 = Monday … 6 = Sunday. 1970-01-01 was a Thursday.
pub fn weekday(epoch: i64) -> u8 {
    (day_index(epoch) + 3).rem_euclid(7) as u8
}

/// Whole minutes elapsed since the most recent Monday 00:00 UTC.
pub fn minutes_since_monday(epoch: i64) -> i64 {
    let minute_of_day = epoch.rem_euclid(SECONDS_PER_DAY) / 60;
    weekday(epoch) as i64 * 24 * 60 + minute_of_day
}

/// Fractional hour of day in [0, 24).
pub fn hour_of_day(epoch: i64) -> f64 {
    epoch.rem_euclid(SECONDS_PER_DAY) as f64 / 3600.0
}

pub fn is_holiday(epoch: i64) -> bool {
    DateTime::from_timestamp(epoch, 0)
        .map(|dt| HOLIDAYS.contains(&(dt.month(), dt.day())))
        .unwrap_or(false)
}

/// Weekday 07:00–09:00 or 17:00–19:00.
pub fn is_rush_hour(epoch: i64) -> bool {
    if weekday(epoch) >= 5 {
        return false;
    }
    let h = hour_of_day(epoch);
    (7.0..9.0).contains(&h) || (17.0..19.0).contains(&h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_dates() {
        // 2024-01-01 was a Monday and a holiday.
        let monday = 1_704_067_200;
        assert_eq!(weekday(monday), 0);
        assert!(is_holiday(monday));
        assert!(!is_holiday(monday + SECONDS_PER_DAY));
        assert_eq!(weekday(monday + 6 * SECONDS_PER_DAY), 6);
        assert_eq!(minutes_since_monday(monday + 7 * 60 + 30), 7);
        assert!(is_rush_hour(monday + 8 * 3600));
        assert!(!is_rush_hour(monday + 5 * SECONDS_PER_DAY + 8 * 3600));
    }
}
