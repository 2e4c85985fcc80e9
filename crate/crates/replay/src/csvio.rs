//! CSV inputs: the object catalogue and pairwise questionnaire answers.
//!
//! ```text
//! object_id,n_components,n_tools,physical_effort,variant_flora
//! gearbox,12,3,0.6,0.2
//!
//! subject,factor_a,factor_b,chosen
//! s01,concentration_loss,learning_delay,learning_delay
//! ```

use std::io::Read;

use cogload_core::factors::{CatalogueRow, FactorError};
use cogload_core::scoring::PairwiseChoice;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: csv::Error,
    },
    #[error("row {row}: {source}")]
    Range {
        row: usize,
        #[source]
        source: FactorError,
    },
}

fn read_rows<T: serde::de::DeserializeOwned>(reader: impl Read) -> Result<Vec<T>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|source| CsvError::Row { row: i + 1, source }))
        .collect()
}

pub fn read_catalogue(reader: impl Read) -> Result<Vec<CatalogueRow>, CsvError> {
    let rows: Vec<CatalogueRow> = read_rows(reader)?;
    for (i, r) in rows.iter().enumerate() {
        r.check()
            .map_err(|source| CsvError::Range { row: i + 1, source })?;
    }
    Ok(rows)
}

pub fn read_pairwise(reader: impl Read) -> Result<Vec<PairwiseChoice>, CsvError> {
    read_rows(reader)
}
