//! The forge-judge service: HTTP API, configuration and token management on
//! top of `forge-judge-core`.

pub mod api;
pub mod openapi;
pub mod services;
pub mod settings;
pub mod tokens;
