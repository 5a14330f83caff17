use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    generate_agents, imposter_swap, t_split_for, AgentProfile, AnomalyKind, AnomalySpec, Intensity, Label,
    LabeledDataset, VenueType, World, DAY_SECONDS, EPOCH_START,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::trajectory::{StaypointRecord, TrajectoryDataset};

/// Work-skip stream of agent `i`: `derive_seed(seed, STREAM_WORK_SKIP, i)`.
/// An agent with a work anomaly draws one uniform `f64` per scheduled test
/// work day, in day order, and skips work that day when the draw is below
/// the intensity probability.
pub const STREAM_WORK_SKIP: u64 = 0x3b;
/// Per-(agent, day) stream for social replacements.
pub const STREAM_SOCIAL: u64 = 0x3c;
const STREAM_DAY: u64 = 0x3d;
const STREAM_GROUP: u64 = 0x3e;
const STREAM_MEALS: u64 = 0x3f;

const MINUTE: i64 = 60;
const HOUR: i64 = 3600;
/// Travel to a restaurant, eat, and travel back.
const MEAL_TRAVEL: i64 = 10 * MINUTE;
const MEAL_STAY: i64 = 40 * MINUTE;
/// Shorter stays are not recorded.
const MIN_STAY: i64 = 5 * MINUTE;

#[derive(Clone, Copy, Debug)]
struct Segment {
    poi: usize,
    start: i64,
    end: i64,
}

fn minutes(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> i64 {
    rng.random_range(lo..=hi) * MINUTE
}

fn stream(seed: u64, kind: u64, a: u64, b: u64) -> ChaCha8Rng {
    rng_from(derive_seed(derive_seed(seed, kind, a), 0, b))
}

struct Context<'a> {
    world: &'a World,
    ids: BTreeMap<&'a str, usize>,
    recreation: Vec<usize>,
    /// Group recreation site chosen for each (group, day).
    group_choice: Vec<Vec<usize>>,
    train_days: usize,
    t_split: i64,
    seed: u64,
}

impl Context<'_> {
    fn poi(&self, id: &str) -> usize {
        self.ids[id]
    }
}

/// Simulates every agent over `train_days + test_days` days starting on
/// Monday 2024-01-01 UTC. Anomalies change behavior on test days only;
/// imposter specs swap the test records of consecutive affected users.
pub fn simulate(
    world: &World,
    n_agents: usize,
    train_days: usize,
    test_days: usize,
    specs: &[AnomalySpec],
    seed: u64,
) -> Result<LabeledDataset> {
    if train_days == 0 || test_days == 0 {
        return Err(Error::InvalidParameter("train_days and test_days must be positive".into()));
    }
    for venue in VenueType::ALL {
        if world.of_type(venue).is_empty() {
            return Err(Error::InvalidParameter(format!("world has no {venue} POI")));
        }
    }
    let agents = generate_agents(world, n_agents, seed)?;
    let t_split = t_split_for(train_days);

    let mut labels: BTreeMap<String, Label> = agents.iter().map(|a| (a.user_id.clone(), Label::Normal)).collect();
    let mut behavior: BTreeMap<String, (AnomalyKind, Intensity)> = BTreeMap::new();
    let mut pairs = Vec::new();
    for spec in specs {
        if spec.start != t_split {
            return Err(Error::InvalidParameter(format!(
                "anomaly start {} differs from the split time {t_split}",
                spec.start
            )));
        }
        for user in &spec.affected_users {
            match labels.get(user) {
                None => return Err(Error::UnknownUser(user.clone())),
                Some(Label::Anomalous { .. }) => {
                    return Err(Error::InvalidParameter(format!("user `{user}` has more than one anomaly")))
                }
                Some(Label::Normal) => {}
            }
            if spec.kind != AnomalyKind::Imposter {
                behavior.insert(user.clone(), (spec.kind, spec.intensity));
                labels.insert(
                    user.clone(),
                    Label::Anomalous {
                        kind: spec.kind,
                        intensity: spec.intensity,
                    },
                );
            }
        }
        if spec.kind == AnomalyKind::Imposter {
            if spec.affected_users.len() % 2 != 0 {
                return Err(Error::InvalidParameter("imposter users must come in pairs".into()));
            }
            pairs.extend(
                spec.affected_users
                    .chunks(2)
                    .map(|c| (c[0].clone(), c[1].clone())),
            );
        }
    }

    let days = train_days + test_days;
    let n_groups = agents.iter().map(|a| a.social_group + 1).max().unwrap_or(0);
    let group_choice = (0..n_groups)
        .map(|g| {
            let sites = &agents.iter().find(|a| a.social_group == g).map(|a| a.favorite_recreation.len());
            (0..days)
                .map(|d| match sites {
                    Some(n) if *n > 0 => stream(seed, STREAM_GROUP, g as u64, d as u64).random_range(0..*n),
                    _ => 0,
                })
                .collect()
        })
        .collect();
    let ctx = Context {
        world,
        ids: world.pois.iter().enumerate().map(|(i, p)| (p.poi_id.as_str(), i)).collect(),
        recreation: world.of_type(VenueType::Recreational),
        group_choice,
        train_days,
        t_split,
        seed,
    };

    let mut records = Vec::new();
    for (i, agent) in agents.iter().enumerate() {
        let anomaly = behavior.get(&agent.user_id).copied();
        let plan = plan_days(&ctx, agent, i, days, anomaly);
        records.extend(eat_and_emit(&ctx, agent, i, plan, anomaly)?);
    }

    let dataset = TrajectoryDataset::builder()
        .users(agents.iter().map(|a| a.user_id.clone()))
        .pois(world.catalog())
        .types(VenueType::ALL.iter().map(|v| v.as_str()))
        .records(records)
        .build();
    let data = LabeledDataset {
        split: dataset.split(t_split),
        labels,
    };
    imposter_swap(&data, &pairs)
}

/// Day-by-day schedule without meals. Consecutive home stays merge into
/// one overnight segment.
fn plan_days(
    ctx: &Context<'_>,
    agent: &AgentProfile,
    index: usize,
    days: usize,
    anomaly: Option<(AnomalyKind, Intensity)>,
) -> Vec<Segment> {
    let home = ctx.poi(&agent.home);
    let work = ctx.poi(&agent.work);
    let group_sites: Vec<usize> = agent.favorite_recreation.iter().map(|r| ctx.poi(r)).collect();
    let mut skip_rng = rng_from(derive_seed(ctx.seed, STREAM_WORK_SKIP, index as u64));

    let mut plan: Vec<Segment> = Vec::new();
    let mut push = |poi: usize, start: i64, end: i64| {
        if let Some(last) = plan.last_mut() {
            if last.poi == poi && poi == home {
                last.end = end;
                return;
            }
        }
        plan.push(Segment { poi, start, end });
    };
    let mut at_home_since = EPOCH_START;

    for d in 0..days {
        let day = EPOCH_START + d as i64 * DAY_SECONDS;
        let test = d >= ctx.train_days;
        let weekday = d % 7 < 5;
        let mut rng = stream(ctx.seed, STREAM_DAY, index as u64, d as u64);
        let mut social = stream(ctx.seed, STREAM_SOCIAL, index as u64, d as u64);

        let scheduled = weekday && agent.work_days.contains(&((d % 7) as u8));
        let skip_work = match anomaly {
            Some((AnomalyKind::Work, intensity)) if test && scheduled => {
                skip_rng.random::<f64>() < intensity.probability()
            }
            _ => false,
        };
        // Every outing draws the same five values so that streams stay
        // aligned across intensities.
        let mut outing = || {
            let join: f64 = social.random();
            let explore: f64 = social.random();
            let explore_site = ctx.recreation[social.random_range(0..ctx.recreation.len())];
            let draw: f64 = social.random();
            let random_site = ctx.recreation[social.random_range(0..ctx.recreation.len())];
            if join >= agent.outing_rate {
                return None;
            }
            let usual = group_sites
                .get(ctx.group_choice[agent.social_group][d])
                .copied()
                .unwrap_or(ctx.recreation[0]);
            let site = if explore < agent.exploration_rate { explore_site } else { usual };
            Some(match anomaly {
                Some((AnomalyKind::Social, intensity)) if test && draw < intensity.probability() => random_site,
                _ => site,
            })
        };
        let shift = agent.shift_minutes * MINUTE;

        let evening_home = if weekday {
            let t;
            if scheduled && !skip_work {
                let leave = day + shift + minutes(&mut rng, 8 * 60, 9 * 60);
                push(home, at_home_since, leave);
                let start = leave + 20 * MINUTE;
                t = day + shift + minutes(&mut rng, 16 * 60 + 30, 17 * 60 + 30);
                push(work, start, t);
            } else {
                let leave = day + shift + minutes(&mut rng, 9 * 60 + 30, 11 * 60 + 30);
                push(home, at_home_since, leave);
                let own = *group_sites.choose(&mut rng).unwrap_or(&ctx.recreation[0]);
                let start = leave + 30 * MINUTE;
                t = start + minutes(&mut rng, 180, 240);
                push(own, start, t);
            }
            let duration = minutes(&mut rng, 90, 150);
            match outing() {
                Some(site) => {
                    let start = t.max(day + shift + 17 * HOUR) + 30 * MINUTE;
                    push(site, start, start + duration);
                    start + duration + 20 * MINUTE
                }
                None => t + 20 * MINUTE,
            }
        } else {
            let leave = day + minutes(&mut rng, 10 * 60, 12 * 60);
            let duration = minutes(&mut rng, 180, 300);
            match outing() {
                Some(site) => {
                    push(home, at_home_since, leave);
                    let start = leave + 30 * MINUTE;
                    push(site, start, start + duration);
                    start + duration + 30 * MINUTE
                }
                None => at_home_since,
            }
        };
        at_home_since = evening_home;
    }
    push(home, at_home_since, EPOCH_START + days as i64 * DAY_SECONDS);
    plan
}

/// Inserts restaurant trips whenever the hunger clock runs out away from
/// home, and emits the resulting stays as records.
fn eat_and_emit(
    ctx: &Context<'_>,
    agent: &AgentProfile,
    index: usize,
    plan: Vec<Segment>,
    anomaly: Option<(AnomalyKind, Intensity)>,
) -> Result<Vec<StaypointRecord>> {
    let home = ctx.poi(&agent.home);
    let restaurants: Vec<usize> = agent.favorite_restaurants.iter().map(|r| ctx.poi(r)).collect();
    let mut meals = rng_from(derive_seed(ctx.seed, STREAM_MEALS, index as u64));
    let normal_period = (agent.hunger_period_h * HOUR as f64).round() as i64;
    let period_at = |t: i64| match anomaly {
        Some((AnomalyKind::Hunger, intensity)) if t > ctx.t_split => {
            (normal_period as f64 / intensity.hunger_divisor()).round() as i64
        }
        _ => normal_period,
    };

    let mut stays: Vec<Segment> = Vec::new();
    let mut last_meal = EPOCH_START;
    for seg in plan {
        if seg.poi == home {
            stays.push(seg);
            last_meal = seg.end;
            continue;
        }
        let mut t = seg.start;
        loop {
            let hungry = (last_meal + period_at(t)).max(t);
            let back = hungry + 2 * MEAL_TRAVEL + MEAL_STAY;
            if back > seg.end || restaurants.is_empty() {
                stays.push(Segment { poi: seg.poi, start: t, end: seg.end });
                break;
            }
            stays.push(Segment { poi: seg.poi, start: t, end: hungry });
            let restaurant = *restaurants.choose(&mut meals).expect("non-empty");
            let sit = hungry + MEAL_TRAVEL;
            stays.push(Segment {
                poi: restaurant,
                start: sit,
                end: sit + MEAL_STAY,
            });
            last_meal = sit + MEAL_STAY;
            t = back;
        }
    }

    // A stay crossing the split is cut there, so the train half never
    // depends on test-period behavior.
    stays
        .into_iter()
        .flat_map(|s| {
            if s.start <= ctx.t_split && s.end > ctx.t_split {
                vec![
                    Segment { end: ctx.t_split, ..s },
                    Segment { start: ctx.t_split + 1, ..s },
                ]
            } else {
                vec![s]
            }
        })
        .filter(|s| s.end - s.start >= MIN_STAY)
        .map(|s| {
            let poi = &ctx.world.pois[s.poi];
            StaypointRecord::new(
                agent.user_id.clone(),
                poi.location,
                s.start,
                s.end,
                poi.venue_type.as_str(),
                Some(poi.poi_id.clone()),
            )
        })
        .collect()
}
