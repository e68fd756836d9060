//! Immutable domain model of a village population.
//!
//! A [`PopulationFrame`] holds households and persons with their demographic
//! attributes and outcome values. It is the ground truth a simulation run
//! samples from, and all estimates are judged against means computed on it.
//! Frames are immutable after construction and safe to share across
//! replication workers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

/// Age threshold (in months) below which a member counts toward the
/// "under 50" household size measure. Exactly 50 years is excluded.
pub const UNDER_50_MONTHS: u32 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PersonId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HouseholdId(pub u32);

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for HouseholdId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn code(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }

    pub fn parse(s: &str) -> Option<Sex> {
        match s {
            "M" => Some(Sex::Male),
            "F" => Some(Sex::Female),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Person {
    pub person_id: PersonId,
    pub household_id: HouseholdId,
    /// Age in months. Month resolution is required by the under-5 band;
    /// year-based bands convert exactly.
    pub age_months: u32,
    pub sex: Sex,
    pub is_head: bool,
    /// Outcome name -> value, dense for every person the outcome applies to.
    pub outcomes: BTreeMap<String, f64>,
}

impl Person {
    pub fn outcome(&self, name: &str) -> Option<f64> {
        self.outcomes.get(name).copied()
    }
}

#[derive(Debug, Clone)]
pub struct Household {
    pub household_id: HouseholdId,
    /// Member person ids, in roster order.
    pub member_ids: Vec<PersonId>,
    /// Number of members with `age_months < UNDER_50_MONTHS`.
    pub n_total_under50: u32,
    /// Household-level outcomes (e.g. total consumption).
    pub household_outcomes: BTreeMap<String, f64>,
}

impl Household {
    pub fn outcome(&self, name: &str) -> Option<f64> {
        self.household_outcomes.get(name).copied()
    }
}

/// The demographic groups targeted by the survey modules.
///
/// Membership is a pure function of `(age_months, sex, is_head)`. Band
/// boundaries in months: 6-59 for under-5s, 60-179 for school-age children,
/// 180-599 for adults 15-49.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetGroup {
    Children6To59m,
    Children5To14y,
    Men15To49y,
    Women15To49y,
    Under50All,
    HouseholdHeads,
}

impl TargetGroup {
    pub const ALL: [TargetGroup; 6] = [
        TargetGroup::Children6To59m,
        TargetGroup::Children5To14y,
        TargetGroup::Men15To49y,
        TargetGroup::Women15To49y,
        TargetGroup::Under50All,
        TargetGroup::HouseholdHeads,
    ];

    pub fn contains(self, age_months: u32, sex: Sex, is_head: bool) -> bool {
        match self {
            TargetGroup::Children6To59m => (6..=59).contains(&age_months),
            TargetGroup::Children5To14y => (60..=179).contains(&age_months),
            TargetGroup::Men15To49y => sex == Sex::Male && (180..=599).contains(&age_months),
            TargetGroup::Women15To49y => sex == Sex::Female && (180..=599).contains(&age_months),
            TargetGroup::Under50All => age_months < UNDER_50_MONTHS,
            TargetGroup::HouseholdHeads => is_head,
        }
    }

    pub fn contains_person(self, person: &Person) -> bool {
        self.contains(person.age_months, person.sex, person.is_head)
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetGroup::Children6To59m => "children_6_59m",
            TargetGroup::Children5To14y => "children_5_14y",
            TargetGroup::Men15To49y => "men_15_49y",
            TargetGroup::Women15To49y => "women_15_49y",
            TargetGroup::Under50All => "under_50_all",
            TargetGroup::HouseholdHeads => "household_heads",
        }
    }

    pub fn from_name(name: &str) -> Option<TargetGroup> {
        TargetGroup::ALL.iter().copied().find(|g| g.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleLevel {
    Person,
    Household,
}

impl ModuleLevel {
    pub fn name(self) -> &'static str {
        match self {
            ModuleLevel::Person => "person",
            ModuleLevel::Household => "household",
        }
    }

    pub fn from_name(name: &str) -> Option<ModuleLevel> {
        match name {
            "person" => Some(ModuleLevel::Person),
            "household" => Some(ModuleLevel::Household),
            _ => None,
        }
    }
}

/// One survey module: a target group, a target sample size, and the outcome
/// it measures.
#[derive(Debug, Clone)]
pub struct SurveyModuleSpec {
    pub module_name: String,
    pub target_group: TargetGroup,
    pub n_target: u32,
    pub outcome_name: String,
    pub level: ModuleLevel,
}

impl SurveyModuleSpec {
    pub fn new(
        module_name: impl Into<String>,
        target_group: TargetGroup,
        n_target: u32,
        outcome_name: impl Into<String>,
        level: ModuleLevel,
    ) -> Result<Self, FrameError> {
        if n_target == 0 {
            return Err(FrameError::InvalidModule {
                module: module_name.into(),
                reason: "n_target must be positive".into(),
            });
        }
        Ok(SurveyModuleSpec {
            module_name: module_name.into(),
            target_group,
            n_target,
            outcome_name: outcome_name.into(),
            level,
        })
    }

    /// The default module grid: adult surveys at 400, blood testing at
    /// 300/100/100/100, anthropometry at 300, plus the head-of-household
    /// consumption survey.
    pub fn default_modules() -> Vec<SurveyModuleSpec> {
        let m = |name: &str, group, n, outcome: &str, level| {
            SurveyModuleSpec::new(name, group, n, outcome, level).expect("valid builtin module")
        };
        vec![
            m("adult_men", TargetGroup::Men15To49y, 400, "days_to_treatment", ModuleLevel::Person),
            m("adult_women", TargetGroup::Women15To49y, 400, "antenatal_visits", ModuleLevel::Person),
            m("blood_under5", TargetGroup::Children6To59m, 300, "hemoglobin", ModuleLevel::Person),
            m("blood_school_age", TargetGroup::Children5To14y, 100, "hemoglobin", ModuleLevel::Person),
            m("blood_men", TargetGroup::Men15To49y, 100, "hemoglobin", ModuleLevel::Person),
            m("blood_women", TargetGroup::Women15To49y, 100, "hemoglobin", ModuleLevel::Person),
            m("anthropometry", TargetGroup::Children6To59m, 300, "weight_for_age_z", ModuleLevel::Person),
            m("household_survey", TargetGroup::HouseholdHeads, 300, "consumption", ModuleLevel::Household),
        ]
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("invalid module {module}: {reason}")]
    InvalidModule { module: String, reason: String },
    #[error("unknown household {0}")]
    UnknownHousehold(HouseholdId),
    #[error("unknown person {0}")]
    UnknownPerson(PersonId),
}

/// A single invariant violation found by [`PopulationFrame::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    DuplicateHouseholdId(HouseholdId),
    DuplicatePersonId(PersonId),
    /// Person references a household that is not in the frame.
    OrphanPerson { person: PersonId, household: HouseholdId },
    /// Household lists a member id that no person carries.
    MissingMember { household: HouseholdId, person: PersonId },
    /// Person's household_id disagrees with the household whose roster lists it.
    MembershipMismatch { household: HouseholdId, person: PersonId },
    /// Person not listed on its own household's roster.
    NotOnRoster { household: HouseholdId, person: PersonId },
    /// Household has `heads` designated heads instead of exactly one.
    HeadCount { household: HouseholdId, heads: u32 },
    /// Stored under-50 count disagrees with the recomputed count.
    Under50Mismatch { household: HouseholdId, stored: u32, actual: u32 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::DuplicateHouseholdId(h) => write!(f, "duplicate household id {h}"),
            ValidationIssue::DuplicatePersonId(p) => write!(f, "duplicate person id {p}"),
            ValidationIssue::OrphanPerson { person, household } => {
                write!(f, "person {person} references missing household {household}")
            }
            ValidationIssue::MissingMember { household, person } => {
                write!(f, "household {household} lists unknown member {person}")
            }
            ValidationIssue::MembershipMismatch { household, person } => {
                write!(f, "household {household} lists member {person} whose household_id differs")
            }
            ValidationIssue::NotOnRoster { household, person } => {
                write!(f, "person {person} missing from roster of household {household}")
            }
            ValidationIssue::HeadCount { household, heads } => {
                write!(f, "household {household} has {heads} heads (expected exactly 1)")
            }
            ValidationIssue::Under50Mismatch { household, stored, actual } => {
                write!(f, "household {household} stores n_total_under50={stored}, members give {actual}")
            }
        }
    }
}

/// Result of frame validation; empty on a consistent frame.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() {
            writeln!(f, "frame valid: no issues")
        } else {
            for issue in &self.issues {
                writeln!(f, "{issue}")?;
            }
            Ok(())
        }
    }
}

/// The complete synthetic village: households, persons, and lookup indices.
#[derive(Debug, Clone)]
pub struct PopulationFrame {
    households: Vec<Household>,
    persons: Vec<Person>,
    household_index: HashMap<HouseholdId, usize>,
    person_index: HashMap<PersonId, usize>,
}

impl PopulationFrame {
    /// Build a frame from raw parts. Construction always succeeds so that
    /// [`validate`](Self::validate) can report problems on malformed input;
    /// duplicate ids resolve to the first occurrence in lookups.
    pub fn from_parts(households: Vec<Household>, persons: Vec<Person>) -> Self {
        let mut household_index = HashMap::with_capacity(households.len());
        for (i, h) in households.iter().enumerate() {
            household_index.entry(h.household_id).or_insert(i);
        }
        let mut person_index = HashMap::with_capacity(persons.len());
        for (i, p) in persons.iter().enumerate() {
            person_index.entry(p.person_id).or_insert(i);
        }
        PopulationFrame { households, persons, household_index, person_index }
    }

    /// Decompose into raw parts, e.g. to fill outcomes and rebuild.
    pub fn into_parts(self) -> (Vec<Household>, Vec<Person>) {
        (self.households, self.persons)
    }

    pub fn households(&self) -> &[Household] {
        &self.households
    }

    pub fn persons(&self) -> &[Person] {
        &self.persons
    }

    pub fn n_households(&self) -> usize {
        self.households.len()
    }

    pub fn household(&self, id: HouseholdId) -> Option<&Household> {
        self.household_index.get(&id).map(|&i| &self.households[i])
    }

    pub fn person(&self, id: PersonId) -> Option<&Person> {
        self.person_index.get(&id).map(|&i| &self.persons[i])
    }

    /// Members of a household, in roster order. Roster entries without a
    /// matching person are skipped (validation reports them).
    pub fn members<'a>(&'a self, household: &'a Household) -> impl Iterator<Item = &'a Person> {
        household.member_ids.iter().filter_map(move |id| self.person(*id))
    }

    /// N_h: number of household members in the target group.
    pub fn target_count(&self, household: &Household, group: TargetGroup) -> u32 {
        self.members(household).filter(|p| group.contains_person(p)).count() as u32
    }

    /// N: total target-group members over the whole frame.
    pub fn frame_totals(&self, group: TargetGroup) -> u32 {
        self.households.iter().map(|h| self.target_count(h, group)).sum()
    }

    /// Check every frame invariant and report all violations found.
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();

        let mut seen_h = BTreeSet::new();
        for h in &self.households {
            if !seen_h.insert(h.household_id) {
                issues.push(ValidationIssue::DuplicateHouseholdId(h.household_id));
            }
        }
        let mut seen_p = BTreeSet::new();
        for p in &self.persons {
            if !seen_p.insert(p.person_id) {
                issues.push(ValidationIssue::DuplicatePersonId(p.person_id));
            }
        }

        for p in &self.persons {
            match self.household(p.household_id) {
                None => issues.push(ValidationIssue::OrphanPerson {
                    person: p.person_id,
                    household: p.household_id,
                }),
                Some(h) => {
                    if !h.member_ids.contains(&p.person_id) {
                        issues.push(ValidationIssue::NotOnRoster {
                            household: h.household_id,
                            person: p.person_id,
                        });
                    }
                }
            }
        }

        for h in &self.households {
            let mut heads = 0u32;
            let mut under50 = 0u32;
            for &pid in &h.member_ids {
                match self.person(pid) {
                    None => issues.push(ValidationIssue::MissingMember {
                        household: h.household_id,
                        person: pid,
                    }),
                    Some(p) => {
                        if p.household_id != h.household_id {
                            issues.push(ValidationIssue::MembershipMismatch {
                                household: h.household_id,
                                person: pid,
                            });
                        }
                        if p.is_head {
                            heads += 1;
                        }
                        if p.age_months < UNDER_50_MONTHS {
                            under50 += 1;
                        }
                    }
                }
            }
            if heads != 1 {
                issues.push(ValidationIssue::HeadCount { household: h.household_id, heads });
            }
            if under50 != h.n_total_under50 {
                issues.push(ValidationIssue::Under50Mismatch {
                    household: h.household_id,
                    stored: h.n_total_under50,
                    actual: under50,
                });
            }
        }

        ValidationReport { issues }
    }

    /// Precomputed per-household eligibility for one target group.
    pub fn group_index(&self, group: TargetGroup) -> GroupIndex {
        let mut households = Vec::with_capacity(self.households.len());
        let mut eligible = Vec::with_capacity(self.households.len());
        let mut position = HashMap::with_capacity(self.households.len());
        let mut total = 0u32;
        for h in &self.households {
            let persons: Vec<PersonId> = self
                .members(h)
                .filter(|p| group.contains_person(p))
                .map(|p| p.person_id)
                .collect();
            total += persons.len() as u32;
            position.insert(h.household_id, households.len());
            households.push(h.household_id);
            eligible.push(persons);
        }
        GroupIndex { group, households, eligible, total, position }
    }

    /// Outcome values of every eligible unit for a module: person outcomes
    /// over the target group, or the household outcome over all households.
    /// Units lacking a value are skipped.
    pub fn population_values(&self, module: &SurveyModuleSpec) -> Vec<f64> {
        match module.level {
            ModuleLevel::Person => self
                .persons
                .iter()
                .filter(|p| module.target_group.contains_person(p))
                .filter_map(|p| p.outcome(&module.outcome_name))
                .collect(),
            ModuleLevel::Household => self
                .households
                .iter()
                .filter_map(|h| h.outcome(&module.outcome_name))
                .collect(),
        }
    }

    /// True finite population mean for a module, if any unit carries the
    /// outcome.
    pub fn true_mean(&self, module: &SurveyModuleSpec) -> Option<f64> {
        let values = self.population_values(module);
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    /// Sorted names of all person-level outcomes present in the frame.
    pub fn person_outcome_names(&self) -> Vec<String> {
        let mut names = BTreeSet::new();
        for p in &self.persons {
            for k in p.outcomes.keys() {
                names.insert(k.clone());
            }
        }
        names.into_iter().collect()
    }

    /// Sorted names of all household-level outcomes present in the frame.
    pub fn household_outcome_names(&self) -> Vec<String> {
        let mut names = BTreeSet::new();
        for h in &self.households {
            for k in h.household_outcomes.keys() {
                names.insert(k.clone());
            }
        }
        names.into_iter().collect()
    }
}

/// Eligibility of each household for one target group, in frame order.
#[derive(Debug, Clone)]
pub struct GroupIndex {
    pub group: TargetGroup,
    /// Household ids in frame order.
    pub households: Vec<HouseholdId>,
    /// Eligible person ids per household, parallel to `households`.
    pub eligible: Vec<Vec<PersonId>>,
    /// Total eligible persons in the frame (N).
    pub total: u32,
    position: HashMap<HouseholdId, usize>,
}

impl GroupIndex {
    pub fn eligible_in(&self, household: HouseholdId) -> &[PersonId] {
        match self.position.get(&household) {
            Some(&i) => &self.eligible[i],
            None => &[],
        }
    }

    /// N_h for one household.
    pub fn count_in(&self, household: HouseholdId) -> u32 {
        self.eligible_in(household).len() as u32
    }

    /// Per-household counts in frame order.
    pub fn counts(&self) -> Vec<u32> {
        self.eligible.iter().map(|e| e.len() as u32).collect()
    }
}
