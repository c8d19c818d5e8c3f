use std::io::Read;
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::Rng;

use super::engine::Frequency;
use crate::error::{EmvError, Result};
use crate::market_sim::{simulate_prices, GbmModel, PathGrid};

/// Adjusted close prices, one row per date and one column per ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    prices: DMatrix<f64>,
}

/// Which rows of the file become periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calendar {
    /// Every row is a period.
    AsIs,
    /// Only the last row of each calendar month.
    MonthEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedRow {
    pub line: u64,
    pub date: NaiveDate,
}

impl PriceTable {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, prices: DMatrix<f64>) -> Result<Self> {
        if prices.nrows() != dates.len() || prices.ncols() != tickers.len() {
            return Err(EmvError::invalid("price matrix does not match dates x tickers"));
        }
        if tickers.is_empty() || dates.is_empty() {
            return Err(EmvError::invalid("price table needs dates and tickers"));
        }
        if dates.windows(2).any(|p| p[1] <= p[0]) {
            return Err(EmvError::invalid("dates must be strictly increasing"));
        }
        if prices.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(EmvError::invalid("prices must be positive and finite"));
        }
        Ok(Self {
            dates,
            tickers,
            prices,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    pub fn rows(&self) -> usize {
        self.dates.len()
    }

    pub fn price(&self, row: usize, col: usize) -> f64 {
        self.prices[(row, col)]
    }

    /// Index of the first row dated on or after `date`.
    pub fn row_at_or_after(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }

    pub fn with_calendar(self, calendar: Calendar) -> Self {
        match calendar {
            Calendar::AsIs => self,
            Calendar::MonthEnd => {
                let keep: Vec<usize> = (0..self.rows())
                    .filter(|&i| {
                        i + 1 == self.rows() || {
                            let (a, b) = (self.dates[i], self.dates[i + 1]);
                            (a.year(), a.month()) != (b.year(), b.month())
                        }
                    })
                    .collect();
                let dates = keep.iter().map(|&i| self.dates[i]).collect();
                let prices = self.prices.select_rows(keep.iter());
                Self {
                    dates,
                    tickers: self.tickers,
                    prices,
                }
            }
        }
    }

    /// Comma-separated text with a `date` column followed by one column per
    /// ticker.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(csv_io)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.tickers.iter().cloned());
        wtr.write_record(&header).map_err(csv_io)?;
        for (i, date) in self.dates.iter().enumerate() {
            let mut rec = vec![date.format("%Y-%m-%d").to_string()];
            rec.extend((0..self.tickers.len()).map(|j| format!("{:?}", self.prices[(i, j)])));
            wtr.write_record(&rec).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Period-end dates from `start`: consecutive weekdays, or consecutive month
/// ends beginning with the month of `start`.
pub fn period_dates(start: NaiveDate, rows: usize, frequency: Frequency) -> Result<Vec<NaiveDate>> {
    let overflow = || EmvError::invalid("date range overflows the calendar");
    let mut out = Vec::with_capacity(rows);
    match frequency {
        Frequency::Daily => {
            let mut d = start;
            while out.len() < rows {
                if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                    out.push(d);
                }
                d = d.succ_opt().ok_or_else(overflow)?;
            }
        }
        Frequency::Monthly => {
            let first = start.with_day(1).ok_or_else(overflow)?;
            for k in 0..rows {
                let next = first
                    .checked_add_months(Months::new(k as u32 + 1))
                    .ok_or_else(overflow)?;
                out.push(next.pred_opt().ok_or_else(overflow)?);
            }
        }
    }
    Ok(out)
}

/// A table of `rows` GBM price rows (all tickers start at 100), one ticker
/// per asset of `model`, named `T0`, `T1`, ...
pub fn simulate_table(
    model: &GbmModel,
    rows: usize,
    frequency: Frequency,
    start: NaiveDate,
    rng: &mut impl Rng,
) -> Result<PriceTable> {
    if rows < 2 {
        return Err(EmvError::invalid("a price table needs at least two rows"));
    }
    let dt = 1.0 / frequency.periods_per_year();
    let grid = PathGrid::new(0.0, dt, rows - 1, f64::INFINITY)?;
    let d = model.dim();
    let prices = simulate_prices(model, &vec![100.0; d], &grid, rng)?;
    let tickers = (0..d).map(|i| format!("T{i}")).collect();
    PriceTable::new(period_dates(start, rows, frequency)?, tickers, prices)
}

fn csv_io(e: csv::Error) -> EmvError {
    EmvError::Io(std::io::Error::other(e.to_string()))
}

fn ingestion(line: u64, reason: impl Into<String>) -> EmvError {
    EmvError::Ingestion {
        line,
        reason: reason.into(),
    }
}

/// Parses a price file. Rows with an empty cell are dropped and returned.
pub fn parse_prices(reader: impl Read, calendar: Calendar) -> Result<(PriceTable, Vec<DroppedRow>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| ingestion(1, e.to_string()))?.clone();
    if header.len() < 2 {
        return Err(ingestion(1, "header needs a date column and at least one ticker"));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    for (i, t) in tickers.iter().enumerate() {
        if t.is_empty() {
            return Err(ingestion(1, "empty ticker name"));
        }
        if tickers[..i].contains(t) {
            return Err(ingestion(1, format!("duplicate ticker `{t}`")));
        }
    }
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut dropped = Vec::new();
    let mut seen: Vec<NaiveDate> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            ingestion(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(ingestion(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|_| ingestion(line, format!("`{}` is not an ISO date", &record[0])))?;
        if seen.contains(&date) {
            return Err(ingestion(line, format!("duplicate date {date}")));
        }
        if let Some(last) = seen.last() {
            if date < *last {
                return Err(ingestion(line, format!("date {date} is out of order")));
            }
        }
        seen.push(date);
        let mut row = Vec::with_capacity(tickers.len());
        let mut missing = false;
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                missing = true;
                continue;
            }
            let p: f64 = cell.parse().map_err(|_| {
                ingestion(line, format!("`{cell}` is not a number ({})", tickers[j]))
            })?;
            if !(p > 0.0) || !p.is_finite() {
                return Err(ingestion(line, format!("nonpositive price {p} ({})", tickers[j])));
            }
            row.push(p);
        }
        if missing {
            log::warn!("line {line}: dropping {date}, missing price");
            dropped.push(DroppedRow { line, date });
            continue;
        }
        dates.push(date);
        values.extend(row);
    }
    if dates.is_empty() {
        return Err(ingestion(0, "no complete price rows"));
    }
    let n = dates.len();
    let prices = DMatrix::from_row_slice(n, tickers.len(), &values);
    let table = PriceTable::new(dates, tickers, prices)?.with_calendar(calendar);
    Ok((table, dropped))
}

pub fn load_prices(path: &Path, calendar: Calendar) -> Result<PriceTable> {
    let file = std::fs::File::open(path)?;
    let (table, dropped) = parse_prices(file, calendar)?;
    if !dropped.is_empty() {
        log::warn!("{}: dropped {} incomplete rows", path.display(), dropped.len());
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_round_trip() {
        let text = "date,A,B\n2020-01-01,1,2\n2020-01-02,1.5,2.5\n2020-01-03,2,3\n";
        let (t, dropped) = parse_prices(text.as_bytes(), Calendar::AsIs).unwrap();
        assert_eq!((t.rows(), t.tickers().len()), (3, 2));
        assert!(dropped.is_empty());
        assert_eq!(t.price(1, 1), 2.5);
    }

    #[test]
    fn missing_cell_drops_row() {
        let text = "date,A,B\n2020-01-01,1,2\n2020-01-02,,2.5\n2020-01-03,2,3\n";
        let (t, dropped) = parse_prices(text.as_bytes(), Calendar::AsIs).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(dropped, vec![DroppedRow { line: 3, date: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap() }]);
    }

    #[test]
    fn hard_errors_carry_line_numbers() {
        let dup = "date,A\n2020-01-01,1\n2020-01-01,2\n";
        assert!(matches!(
            parse_prices(dup.as_bytes(), Calendar::AsIs),
            Err(EmvError::Ingestion { line: 3, .. })
        ));
        let neg = "date,A\n2020-01-01,1\n2020-01-02,-2\n";
        assert!(matches!(
            parse_prices(neg.as_bytes(), Calendar::AsIs),
            Err(EmvError::Ingestion { line: 3, .. })
        ));
        let junk = "date,A\n2020-01-01,abc\n";
        assert!(matches!(
            parse_prices(junk.as_bytes(), Calendar::AsIs),
            Err(EmvError::Ingestion { line: 2, .. })
        ));
        let bad_date = "date,A\n01/02/2020,1\n";
        assert!(parse_prices(bad_date.as_bytes(), Calendar::AsIs).is_err());
    }

    #[test]
    fn month_end_keeps_last_row_per_month() {
        let text = "date,A\n2020-01-30,1\n2020-01-31,2\n2020-02-03,3\n2020-02-28,4\n2020-03-02,5\n";
        let (t, _) = parse_prices(text.as_bytes(), Calendar::MonthEnd).unwrap();
        let kept: Vec<f64> = (0..t.rows()).map(|i| t.price(i, 0)).collect();
        assert_eq!(kept, vec![2.0, 4.0, 5.0]);
    }
}
