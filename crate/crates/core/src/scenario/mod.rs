//! Scenario files: JSON ingestion with defaults and provenance, and the
//! embedded case fixtures.

mod fixtures;
mod parse;

pub use fixtures::{fixture, fixture_names, CaseFixture};
pub use parse::{emit_scenario, load_scenario, parse_scenario, parse_scenario_str, DefaultApplied, ParsedScenario};
