//! Drive-log ingestion: synthetic log generation, CSV logs, event
//! extraction and threat-model fitting.

mod events;
mod generate;
mod log;

pub use events::{
    build_threat_model, default_family, extract_events, parse_families, EventKind, EventSource, ExtractedEvent,
    ExtractionCriteria, MIN_EVENTS,
};
pub use generate::{generate_synthetic_log, SyntheticLog, SyntheticProfile};
pub use log::{DriveLog, LogMeta, LogSample, DT_TOLERANCE, LOG_CSV_HEADER};
