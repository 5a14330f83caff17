//! Synthetic patterns-of-life generator.
//!
//! Agents live in a small world of apartments, workplaces, restaurants and
//! recreational sites. Each follows a daily routine (home overnight, work
//! on weekdays, meals when a personal hunger clock runs out, evening
//! recreation with a social group) for a train period followed by a test
//! period. Anomalies alter behavior in the test period only.

mod simulate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::trajectory::{haversine_km, write_dataset, GeoPoint, PoiInfo, SplitDataset, TrajectoryDataset};

pub use simulate::{simulate, STREAM_SOCIAL, STREAM_WORK_SKIP};

/// Midnight UTC of Monday 2024-01-01; day 0 of every simulation.
pub const EPOCH_START: i64 = 1_704_067_200;
pub const DAY_SECONDS: i64 = 86_400;

const STREAM_WORLD: u64 = 0x57;
const STREAM_AGENTS: u64 = 0xa6;
const STREAM_SCENARIO: u64 = 0x5c;
const STREAM_SIMULATION: u64 = 0x51;
const STREAM_IMPOSTER: u64 = 0x1a;

/// Last second of the train period.
pub fn t_split_for(train_days: usize) -> i64 {
    EPOCH_START + train_days as i64 * DAY_SECONDS - 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VenueType {
    Apartment,
    Workplace,
    Restaurant,
    Recreational,
}

impl VenueType {
    pub const ALL: [VenueType; 4] = [
        VenueType::Apartment,
        VenueType::Workplace,
        VenueType::Restaurant,
        VenueType::Recreational,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VenueType::Apartment => "Apartment",
            VenueType::Workplace => "Workplace",
            VenueType::Restaurant => "Restaurant",
            VenueType::Recreational => "Recreational",
        }
    }
}

impl fmt::Display for VenueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPoi {
    pub poi_id: String,
    pub location: GeoPoint,
    pub venue_type: VenueType,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat()) && (self.min_lon..=self.max_lon).contains(&p.lon())
    }
}

/// A 0.2° × 0.2° box over central Beijing.
pub const DEFAULT_BOX: BoundingBox = BoundingBox {
    min_lat: 39.8,
    min_lon: 116.3,
    max_lat: 40.0,
    max_lon: 116.5,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub pois: Vec<SynthPoi>,
    pub bbox: BoundingBox,
    pub seed: u64,
}

impl World {
    pub fn of_type(&self, venue: VenueType) -> Vec<usize> {
        (0..self.pois.len())
            .filter(|&i| self.pois[i].venue_type == venue)
            .collect()
    }

    pub fn position(&self, poi_id: &str) -> Option<usize> {
        self.pois.iter().position(|p| p.poi_id == poi_id)
    }

    /// Catalog entries for every POI, visited or not.
    pub fn catalog(&self) -> Vec<(String, PoiInfo)> {
        self.pois
            .iter()
            .map(|p| {
                (
                    p.poi_id.clone(),
                    PoiInfo {
                        location: p.location,
                        venue_type: p.venue_type.as_str().to_string(),
                    },
                )
            })
            .collect()
    }
}

/// Number of POIs of each type: every non-apartment type gets
/// `max(1, floor(n / 5))` and apartments take the rest.
pub fn type_counts(n_pois: usize) -> [(VenueType, usize); 4] {
    let other = (n_pois / 5).max(1);
    [
        (VenueType::Apartment, n_pois - 3 * other),
        (VenueType::Workplace, other),
        (VenueType::Restaurant, other),
        (VenueType::Recreational, other),
    ]
}

/// Places `n_pois` POIs uniformly at random in [`DEFAULT_BOX`].
pub fn generate_world(n_pois: usize, seed: u64) -> Result<World> {
    if n_pois < 4 {
        return Err(Error::InvalidParameter("a world needs at least 4 POIs".into()));
    }
    let bbox = DEFAULT_BOX;
    let mut rng = rng_from(derive_seed(seed, STREAM_WORLD, 0));
    let mut pois = Vec::with_capacity(n_pois);
    for (venue_type, count) in type_counts(n_pois) {
        for _ in 0..count {
            let lat = rng.random_range(bbox.min_lat..bbox.max_lat);
            let lon = rng.random_range(bbox.min_lon..bbox.max_lon);
            pois.push(SynthPoi {
                poi_id: format!("poi-{:05}", pois.len()),
                location: GeoPoint::new(lat, lon)?,
                venue_type,
            });
        }
    }
    Ok(World { pois, bbox, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub user_id: String,
    pub home: String,
    pub work: String,
    pub favorite_restaurants: Vec<String>,
    pub favorite_recreation: Vec<String>,
    pub hunger_period_h: f64,
    pub social_group: usize,
    /// Scheduled work weekdays, Monday = 0.
    pub work_days: Vec<u8>,
    /// Shift of the daily schedule relative to a 9:00 work start.
    pub shift_minutes: i64,
    /// Chance of joining the social group on a given outing.
    pub outing_rate: f64,
    /// Chance that an outing goes to a random recreation site instead of
    /// the group's pick.
    pub exploration_rate: f64,
}

pub const SOCIAL_GROUP_SIZE: usize = 5;

pub fn agent_id(index: usize) -> String {
    format!("agent-{index:04}")
}

/// Draws agent profiles. Agents of one social group share their favorite
/// recreation sites; favorite restaurants are one to three of the five
/// nearest to the workplace. Routines vary between agents: a third work
/// part time, shifts move by up to 90 minutes, and appetite, sociability
/// and curiosity differ.
pub fn generate_agents(world: &World, n_agents: usize, seed: u64) -> Result<Vec<AgentProfile>> {
    if n_agents == 0 {
        return Err(Error::InvalidParameter("need at least one agent".into()));
    }
    let mut rng = rng_from(derive_seed(seed, STREAM_AGENTS, 0));
    let apartments = world.of_type(VenueType::Apartment);
    let workplaces = world.of_type(VenueType::Workplace);
    let restaurants = world.of_type(VenueType::Restaurant);
    let recreation = world.of_type(VenueType::Recreational);

    let n_groups = n_agents.div_ceil(SOCIAL_GROUP_SIZE);
    let group_sites: Vec<Vec<String>> = (0..n_groups)
        .map(|_| {
            recreation
                .choose_multiple(&mut rng, recreation.len().min(3))
                .map(|&i| world.pois[i].poi_id.clone())
                .collect()
        })
        .collect();

    let mut groups: Vec<usize> = (0..n_agents).map(|i| i % n_groups).collect();
    groups.shuffle(&mut rng);

    (0..n_agents)
        .map(|i| {
            let home = apartments[rng.random_range(0..apartments.len())];
            let work = workplaces[rng.random_range(0..workplaces.len())];
            let mut nearby = restaurants.clone();
            let at = &world.pois[work].location;
            nearby.sort_by(|&a, &b| {
                haversine_km(at, &world.pois[a].location).total_cmp(&haversine_km(at, &world.pois[b].location))
            });
            nearby.truncate(5);
            let n_favorites = rng.random_range(1..=3).min(nearby.len());
            let favorite_restaurants = nearby
                .choose_multiple(&mut rng, n_favorites)
                .map(|&r| world.pois[r].poi_id.clone())
                .collect();
            let mut work_days: Vec<u8> = (0..5).collect();
            if rng.random_bool(1.0 / 3.0) {
                let n_days = rng.random_range(3..=4);
                work_days = work_days.choose_multiple(&mut rng, n_days).copied().collect();
                work_days.sort_unstable();
            }
            Ok(AgentProfile {
                user_id: agent_id(i),
                home: world.pois[home].poi_id.clone(),
                work: world.pois[work].poi_id.clone(),
                favorite_restaurants,
                favorite_recreation: group_sites[groups[i]].clone(),
                hunger_period_h: rng.random_range(3.5..6.5),
                social_group: groups[i],
                work_days,
                shift_minutes: rng.random_range(-90..=90),
                outing_rate: rng.random_range(0.4..=1.0),
                exploration_rate: rng.random_range(0.0..0.3),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Hunger,
    Work,
    Social,
    Imposter,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Hunger => "hunger",
            AnomalyKind::Work => "work",
            AnomalyKind::Social => "social",
            AnomalyKind::Imposter => "imposter",
        }
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hunger" => Ok(Self::Hunger),
            "work" => Ok(Self::Work),
            "social" => Ok(Self::Social),
            "imposter" => Ok(Self::Imposter),
            other => Err(Error::InvalidParameter(format!("unknown anomaly kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Yellow,
    Orange,
    Red,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Yellow, Intensity::Orange, Intensity::Red];

    /// Chance that a work or social decision is anomalous.
    pub fn probability(self) -> f64 {
        match self {
            Intensity::Yellow => 0.2,
            Intensity::Orange => 0.5,
            Intensity::Red => 1.0,
        }
    }

    /// Factor by which hunger comes faster.
    pub fn hunger_divisor(self) -> f64 {
        match self {
            Intensity::Yellow => 1.5,
            Intensity::Orange => 2.0,
            Intensity::Red => 3.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Intensity::Yellow => "yellow",
            Intensity::Orange => "orange",
            Intensity::Red => "red",
        }
    }
}

impl FromStr for Intensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yellow" => Ok(Self::Yellow),
            "orange" => Ok(Self::Orange),
            "red" => Ok(Self::Red),
            other => Err(Error::InvalidParameter(format!("unknown intensity `{other}`"))),
        }
    }
}

/// Anomalous behavior applied to some agents from `start` on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub intensity: Intensity,
    /// Imposter specs pair consecutive entries.
    pub affected_users: Vec<String>,
    /// Must equal the split time of the simulation.
    pub start: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "label")]
pub enum Label {
    Normal,
    Anomalous { kind: AnomalyKind, intensity: Intensity },
}

impl Label {
    /// `kind/intensity` for anomalous labels.
    pub fn category(&self) -> Option<String> {
        match self {
            Label::Normal => None,
            Label::Anomalous { kind, intensity } => Some(format!("{}/{}", kind.as_str(), intensity.as_str())),
        }
    }

    pub fn is_anomalous(&self) -> bool {
        matches!(self, Label::Anomalous { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub split: SplitDataset,
    pub labels: BTreeMap<String, Label>,
}

impl LabeledDataset {
    /// Train and test records as one dataset.
    pub fn dataset(&self) -> TrajectoryDataset {
        TrajectoryDataset::builder()
            .users(self.split.train.user_ids())
            .pois(self.split.train.poi_catalog().clone())
            .types(self.split.train.type_catalog().iter().cloned())
            .records(self.split.train.records().cloned())
            .records(self.split.test.records().cloned())
            .build()
    }

    /// Category label of every anomalous user.
    pub fn categories(&self) -> BTreeMap<String, String> {
        self.labels
            .iter()
            .filter_map(|(u, l)| l.category().map(|c| (u.clone(), c)))
            .collect()
    }

    pub fn anomalous(&self) -> BTreeSet<String> {
        self.categories().into_keys().collect()
    }

    /// Labels as `user_id,kind,intensity` rows; normal users have kind
    /// `normal` and an empty intensity.
    pub fn write_labels<W: Write>(&self, sink: W) -> Result<()> {
        write_labels(sink, &self.labels)
    }
}

/// Writes `user_id,kind,intensity` rows; normal users have kind `normal`
/// and an empty intensity.
pub fn write_labels<W: Write>(sink: W, labels: &BTreeMap<String, Label>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["user_id", "kind", "intensity"])?;
    for (user, label) in labels {
        let (kind, intensity) = match label {
            Label::Normal => ("normal", ""),
            Label::Anomalous { kind, intensity } => (kind.as_str(), intensity.as_str()),
        };
        writer.write_record([user.as_str(), kind, intensity])?;
    }
    writer.flush().map_err(|e| Error::io("<labels writer>", e))?;
    Ok(())
}

/// Reads a labels document written by [`write_labels`].
pub fn read_labels<R: std::io::Read>(source: R) -> Result<BTreeMap<String, Label>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut labels = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let label = match field(1) {
            "normal" => Label::Normal,
            kind => Label::Anomalous {
                kind: kind.parse()?,
                intensity: field(2).parse()?,
            },
        };
        labels.insert(field(0).to_string(), label);
    }
    Ok(labels)
}

/// Exchanges the test-period records of each user pair and labels both
/// users anomalous (imposter, red).
pub fn imposter_swap(dataset: &LabeledDataset, pairs: &[(String, String)]) -> Result<LabeledDataset> {
    let mut seen = BTreeSet::new();
    let mut partner = BTreeMap::new();
    for (a, b) in pairs {
        for user in [a, b] {
            if !dataset.labels.contains_key(user) {
                return Err(Error::UnknownUser(user.clone()));
            }
            if !seen.insert(user.clone()) {
                return Err(Error::InvalidParameter(format!("user `{user}` appears in more than one pair")));
            }
        }
        partner.insert(a.clone(), b.clone());
        partner.insert(b.clone(), a.clone());
    }
    if partner.is_empty() {
        return Ok(dataset.clone());
    }

    let test = &dataset.split.test;
    let records = test.records().cloned().map(|mut r| {
        if let Some(other) = partner.get(&r.user_id) {
            r.user_id = other.clone();
        }
        r
    });
    let swapped = TrajectoryDataset::builder()
        .users(test.user_ids())
        .pois(test.poi_catalog().clone())
        .types(test.type_catalog().iter().cloned())
        .records(records)
        .build();

    let mut labels = dataset.labels.clone();
    for user in partner.keys() {
        labels.insert(
            user.clone(),
            Label::Anomalous {
                kind: AnomalyKind::Imposter,
                intensity: Intensity::Red,
            },
        );
    }
    Ok(LabeledDataset {
        split: SplitDataset {
            test: swapped,
            ..dataset.split.clone()
        },
        labels,
    })
}

/// Share of agents per anomaly kind in a [`Scenario`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub n_agents: usize,
    pub n_pois: usize,
    pub train_days: usize,
    pub test_days: usize,
    /// Fraction of agents made anomalous, split evenly across `kinds`.
    pub anomalous_fraction: f64,
    pub kinds: Vec<AnomalyKind>,
    pub intensity: Intensity,
    /// Number of imposter pairs, drawn from the remaining normal agents.
    pub imposter_pairs: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n_agents: 200,
            n_pois: 100,
            train_days: 30,
            test_days: 14,
            anomalous_fraction: 0.1,
            kinds: vec![AnomalyKind::Hunger, AnomalyKind::Work, AnomalyKind::Social],
            intensity: Intensity::Red,
            imposter_pairs: 0,
            seed: 42,
        }
    }
}

impl Scenario {
    pub fn t_split(&self) -> i64 {
        t_split_for(self.train_days)
    }

    /// Randomly assigns agents to anomaly specs. The anomalous count is
    /// `round(fraction · n_agents)`; earlier kinds receive the remainder.
    pub fn specs(&self) -> Result<Vec<AnomalySpec>> {
        if !(0.0..=1.0).contains(&self.anomalous_fraction) {
            return Err(Error::InvalidParameter("anomalous_fraction must lie in [0, 1]".into()));
        }
        if self.kinds.contains(&AnomalyKind::Imposter) {
            return Err(Error::InvalidParameter("use imposter_pairs for imposter anomalies".into()));
        }
        let n_anomalous = (self.anomalous_fraction * self.n_agents as f64).round() as usize;
        if n_anomalous > 0 && self.kinds.is_empty() {
            return Err(Error::InvalidParameter("anomalous agents requested without kinds".into()));
        }
        if n_anomalous + 2 * self.imposter_pairs > self.n_agents {
            return Err(Error::InvalidParameter("more anomalous agents than agents".into()));
        }
        let mut order: Vec<usize> = (0..self.n_agents).collect();
        order.shuffle(&mut rng_from(derive_seed(self.seed, STREAM_SCENARIO, 0)));
        let mut next = order.into_iter().map(agent_id);

        let mut specs = Vec::new();
        for (k, &kind) in self.kinds.iter().enumerate() {
            let n = n_anomalous / self.kinds.len() + usize::from(k < n_anomalous % self.kinds.len());
            specs.push(AnomalySpec {
                kind,
                intensity: self.intensity,
                affected_users: next.by_ref().take(n).collect(),
                start: self.t_split(),
            });
        }
        if self.imposter_pairs > 0 {
            specs.push(AnomalySpec {
                kind: AnomalyKind::Imposter,
                intensity: Intensity::Red,
                affected_users: next.take(2 * self.imposter_pairs).collect(),
                start: self.t_split(),
            });
        }
        Ok(specs)
    }

    pub fn generate(&self) -> Result<(World, LabeledDataset)> {
        let world = generate_world(self.n_pois, derive_seed(self.seed, STREAM_WORLD, 0))?;
        let specs = self.specs()?;
        let data = simulate(
            &world,
            self.n_agents,
            self.train_days,
            self.test_days,
            &specs,
            derive_seed(self.seed, STREAM_SIMULATION, 0),
        )?;
        Ok((world, data))
    }

    /// Writes `trajectories.csv`, `labels.csv` and `manifest.json` to `dir`.
    pub fn write(&self, dir: &Path) -> Result<LabeledDataset> {
        let (_, data) = self.generate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(path, e))
        };
        write_dataset(create("trajectories.csv")?, &data.dataset(), b',')?;
        data.write_labels(create("labels.csv")?)?;
        let manifest = SynthManifest {
            scenario: self.clone(),
            t_split: self.t_split(),
            n_records: data.split.train.n_records() + data.split.test.n_records(),
            n_anomalous: data.anomalous().len(),
        };
        serde_json::to_writer_pretty(create("manifest.json")?, &manifest)?;
        Ok(data)
    }
}

/// Generation settings echoed next to the synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub scenario: Scenario,
    pub t_split: i64,
    pub n_records: usize,
    pub n_anomalous: usize,
}

/// Imposter pairs drawn uniformly from the agents without a label.
pub fn random_pairs(labels: &BTreeMap<String, Label>, n_pairs: usize, seed: u64) -> Result<Vec<(String, String)>> {
    let mut normal: Vec<&String> = labels.iter().filter(|(_, l)| !l.is_anomalous()).map(|(u, _)| u).collect();
    if 2 * n_pairs > normal.len() {
        return Err(Error::InvalidParameter("not enough normal agents for the requested pairs".into()));
    }
    normal.shuffle(&mut rng_from(derive_seed(seed, STREAM_IMPOSTER, 0)));
    Ok(normal
        .chunks(2)
        .take(n_pairs)
        .map(|c| (c[0].clone(), c[1].clone()))
        .collect())
}
