//! Labeling backend: a file-backed store plus its HTTP/JSON service.

mod service;
mod store;

pub use service::{router, serve, AppState, LabelRequest, LabelResponse, PendingResponse, SpectrogramResponse};
pub use store::{
    parse_annotation_label, read_history, AnnotationError, AnnotationRecord, ApplyStage, PendingItem, Stats, Store,
    HISTORY_FILE,
};
