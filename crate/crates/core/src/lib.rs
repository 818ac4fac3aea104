pub mod analytics;
pub mod data;
pub mod model;
pub mod numeric;
