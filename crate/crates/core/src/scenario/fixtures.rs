use crate::sim::Classification;

/// A scenario shipped with the crate.
#[derive(Debug, Clone, Copy)]
pub struct CaseFixture {
    pub name: &'static str,
    pub source: &'static str,
}

const FIXTURES: [CaseFixture; 3] = [
    CaseFixture { name: "case1-single", source: include_str!("../../fixtures/case1-single.json") },
    CaseFixture { name: "case2-three-converter", source: include_str!("../../fixtures/case2-three-converter.json") },
    CaseFixture { name: "case3-ieee9", source: include_str!("../../fixtures/case3-ieee9.json") },
];

pub fn fixture_names() -> impl Iterator<Item = &'static str> {
    FIXTURES.iter().map(|f| f.name)
}

pub fn fixture(name: &str) -> Option<CaseFixture> {
    FIXTURES.iter().copied().find(|f| f.name == name)
}

impl CaseFixture {
    /// Expected verdict per strategy tag, as stored in the fixture.
    pub fn expected(&self) -> crate::error::Result<Vec<(String, Classification)>> {
        let p = super::parse_scenario_str(self.source)?;
        Ok(p.spec.expected.into_iter().collect())
    }
}
