use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ForecastSeries, HemsSolution, TariffSchedule};

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: expected tau {expected}, found {found}")]
    TauOrder { row: usize, expected: usize, found: usize },
    #[error("no rows")]
    Empty,
}

#[derive(Debug, Deserialize)]
struct ForecastRow {
    tau: usize,
    p_load_kw: f64,
    p_pv_kw: f64,
    c_import: f64,
    c_export: f64,
}

/// Reads `tau,p_load_kw,p_pv_kw,c_import,c_export` rows; `tau` must count
/// up from 0.
pub fn read_forecast_csv(
    text: &str,
    dt_hours: f64,
) -> Result<(ForecastSeries, TariffSchedule), CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut fc = ForecastSeries {
        p_load_kw: Vec::new(),
        p_pv_kw: Vec::new(),
        dt_hours,
    };
    let mut tariff = TariffSchedule::flat(0, 0.0, 0.0);
    for (i, row) in reader.deserialize::<ForecastRow>().enumerate() {
        let row = row?;
        if row.tau != i {
            return Err(CsvError::TauOrder {
                row: i + 1,
                expected: i,
                found: row.tau,
            });
        }
        fc.p_load_kw.push(row.p_load_kw);
        fc.p_pv_kw.push(row.p_pv_kw);
        tariff.c_import.push(row.c_import);
        tariff.c_export.push(row.c_export);
    }
    if fc.p_load_kw.is_empty() {
        return Err(CsvError::Empty);
    }
    Ok((fc, tariff))
}

#[derive(Serialize)]
struct ScheduleRow {
    tau: usize,
    p_charge: f64,
    p_discharge: f64,
    p_import: f64,
    p_export: f64,
    p_spill: f64,
    soc_kwh: f64,
    z: u8,
}

pub fn write_schedule_csv(sol: &HemsSolution) -> Result<String, CsvError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for iv in &sol.intervals {
        w.serialize(ScheduleRow {
            tau: iv.tau,
            p_charge: iv.p_charge,
            p_discharge: iv.p_discharge,
            p_import: iv.p_import,
            p_export: iv.p_export,
            p_spill: iv.p_spill,
            soc_kwh: iv.soc_kwh,
            z: iv.z,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| CsvError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}
