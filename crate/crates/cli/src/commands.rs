use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use rand::Rng;

use labsteg::adversary::{
    robustness_sweep, trudy_perturb_rollout, BinaryMetrics, ConfusionMatrix, EveConfig, EveHarness, RobustnessRow,
    RolloutStats, TrudyConfig,
};
use labsteg::agent::{Agent, AgentConfig};
use labsteg::environment::Episode;
use labsteg::labyrinth::{generate, Labyrinth, MazeRecord};
use labsteg::rng::stream;
use labsteg::stego::{build_cover, build_logged, receive, send, Message, StegoError, StegoKey, StegoSystem};

use crate::args::{Common, Systems};
use crate::error::{CliError, Result};
use crate::report::{self, fmt_opt, MetricsRow};
use crate::svg::{self, Series, PALETTE};

pub const KEY_FILE: &str = "key.json";
pub const SYSTEM_FILE: &str = "system.json";
pub const COVER_FILE: &str = "cover.json";

fn load_key(common: &Common) -> Result<Option<StegoKey>> {
    let Some(path) = &common.key else { return Ok(None) };
    let key = StegoKey::from_json(&report::read_text(path)?).map_err(|e| CliError::format(path, e))?;
    key.validate().map_err(|e| CliError::format(path, e))?;
    Ok(Some(key))
}

fn require_key(common: &Common) -> Result<StegoKey> {
    load_key(common)?.ok_or_else(|| CliError::Usage("--key is required".into()))
}

/// Keys for `count` mazes. Maze `i` uses labyrinth seed `base + i`, where
/// `base` is `--seed`, else the key file's maze seed, else 0; its master
/// seed is derived from the template's master seed and that labyrinth seed.
/// A key file with a single maze and no `--seed` is used unchanged.
fn keys_for(common: &Common, count: usize, budget: Option<usize>) -> Result<Vec<StegoKey>> {
    let file = load_key(common)?;
    let mut template = file.clone().unwrap_or_else(|| StegoKey::new(0, 0));
    if let Some(b) = budget {
        template = template.with_budget(b);
    }
    if file.is_some() && common.seed.is_none() && count == 1 {
        return Ok(vec![template]);
    }
    let base = common.seed.unwrap_or(template.maze_seed);
    Ok((0..count as u64)
        .map(|i| {
            let mut k = template.clone();
            k.maze_seed = base + i;
            k.master_seed = stream(template.master_seed, "cli-master", base + i).random();
            k
        })
        .collect())
}

fn maze_dir(out: &Path, i: usize) -> PathBuf {
    out.join(format!("maze_{i:03}"))
}

fn training_error(maze: &str) -> impl FnOnce(StegoError) -> CliError + '_ {
    move |e| CliError::Training { maze: maze.to_string(), message: e.to_string() }
}

pub fn keygen(common: &Common, agents: usize, maze_seed: Option<u64>, budget: Option<usize>, dense: bool) -> Result<()> {
    let seed = common.seed.unwrap_or(0);
    let mut key = load_key(common)?.unwrap_or_else(|| StegoKey::with_agents(seed, seed, agents));
    if common.seed.is_some() {
        key.master_seed = seed;
        key.maze_seed = seed;
    }
    if key.agent_count() != agents {
        key.agents = (0..agents).map(AgentConfig::table).collect();
    }
    if let Some(m) = maze_seed {
        key.maze_seed = m;
    }
    if dense {
        let b = key.rounds();
        key.agents = (0..agents).map(|i| AgentConfig::dense(i).with_budget(b)).collect();
        key.cover = AgentConfig::dense(0).with_budget(b);
    }
    if let Some(b) = budget {
        key = key.with_budget(b);
    }
    key.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    report::create_dir(&common.out)?;
    let path = common.out.join(KEY_FILE);
    report::write_text(&path, &key.to_json())?;
    println!("{} fingerprint {}", path.display(), key.fingerprint());
    Ok(())
}

pub fn generate_mazes(common: &Common, count: usize) -> Result<()> {
    let template = load_key(common)?.unwrap_or_else(|| StegoKey::new(0, 0));
    let base = common.seed.unwrap_or(0);
    report::create_dir(&common.out)?;
    let mut histogram: BTreeMap<usize, usize> = (template.maze.min_obstacles..=template.maze.max_obstacles).map(|k| (k, 0)).collect();
    let mut records = Vec::new();
    for i in 0..count {
        let seed = base + i as u64;
        let g = generate(&template.maze, &mut labsteg::rng::seeded(seed))
            .map_err(|e| CliError::Training { maze: format!("maze_{i:03}"), message: e.to_string() })?;
        let lab = g.labyrinth;
        *histogram.entry(lab.obstacle_count()).or_default() += 1;
        report::write_text(&common.out.join(format!("maze_{i:03}.txt")), &lab.to_text())?;
        report::write_json(
            &common.out.join(format!("maze_{i:03}.json")),
            &MazeRecord::new(&lab, Some(seed), Some(template.maze.rules.clone())),
        )?;
        records.push(vec![format!("maze_{i:03}"), seed.to_string(), lab.obstacle_count().to_string(), g.attempts.to_string(), lab.id()]);
    }
    report::write_csv(
        &common.out.join("mazes.csv"),
        &["maze_id", "seed", "obstacle_count", "attempts", "labyrinth_id"].map(String::from),
        &records,
    )?;
    let rows: Vec<Vec<String>> = histogram.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]).collect();
    report::write_csv(&common.out.join("histogram.csv"), &["obstacle_count".into(), "mazes".into()], &rows)?;
    let labels: Vec<String> = histogram.keys().map(|k| k.to_string()).collect();
    let values: Vec<f64> = histogram.values().map(|&v| v as f64).collect();
    let chart = svg::bar_chart(
        "Labyrinths by obstacle count",
        "mazes",
        &labels,
        &[Series { name: "mazes", colour: PALETTE[1], values }],
    );
    report::write_text(&common.out.join("histogram.svg"), &chart)?;
    println!("wrote {count} mazes to {}", common.out.display());
    Ok(())
}

pub fn train(common: &Common, count: Option<usize>, cover_only: bool, overwrite: bool, budget: Option<usize>) -> Result<()> {
    let count = count.unwrap_or(if common.key.is_some() { 1 } else { 100 });
    let keys = keys_for(common, count, budget)?;
    let targets: &[&str] = if cover_only { &[COVER_FILE] } else { &[SYSTEM_FILE, COVER_FILE] };
    if !overwrite {
        for i in 0..keys.len() {
            if let Some(existing) = targets.iter().map(|f| maze_dir(&common.out, i).join(f)).find(|p| p.exists()) {
                return Err(CliError::Usage(format!(
                    "{} exists; training is atomic and cannot resume from a snapshot (pass --overwrite to retrain)",
                    existing.display()
                )));
            }
        }
    }
    report::create_dir(&common.out)?;
    // Mazes are independent and write only their own directory.
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String>>>> = Mutex::new((0..keys.len()).map(|_| None).collect());
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(keys.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= keys.len() {
                    break;
                }
                let r = train_one(&maze_dir(&common.out, i), &format!("maze_{i:03}"), &keys[i], cover_only);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    for r in results.into_inner().unwrap() {
        println!("{}", r.expect("every maze is processed")?);
    }
    Ok(())
}

fn train_one(dir: &Path, name: &str, key: &StegoKey, cover_only: bool) -> Result<String> {
    report::create_dir(dir)?;
    report::write_text(&dir.join(KEY_FILE), &key.to_json())?;
    let cover = build_cover(key).map_err(training_error(name))?;
    report::write_text(&dir.join(COVER_FILE), &cover.to_json())?;
    if cover_only {
        return Ok(format!("{name}: cover agent trained"));
    }
    let (sys, log) = build_logged(key).map_err(training_error(name))?;
    report::write_text(&dir.join(SYSTEM_FILE), &sys.to_json())?;
    let mut curves = Vec::new();
    for r in &log.rounds {
        for a in 0..r.returns.len() {
            curves.push(vec![
                r.round.to_string(),
                a.to_string(),
                format!("{:.4}", r.returns[a]),
                r.steps[a].to_string(),
                r.completed[a].to_string(),
                r.identified[a].to_string(),
                fmt_opt(r.observer_loss),
            ]);
        }
    }
    report::write_csv(
        &dir.join("curves.csv"),
        &["round", "agent", "return", "steps", "completed", "identified", "observer_loss"].map(String::from),
        &curves,
    )?;
    Ok(format!("{name}: trained {} agents, obstacles {}", sys.agent_count(), sys.labyrinth.obstacle_count()))
}

struct Trained {
    id: String,
    system: StegoSystem,
    cover: Agent<f64>,
    key: StegoKey,
}

/// Every `maze_*` directory under the systems root, in name order.
fn load_trained(common: &Common, input: &Systems) -> Result<Vec<Trained>> {
    let root = input.systems.clone().unwrap_or_else(|| common.out.clone());
    let entries = fs::read_dir(&root).map_err(CliError::io(&root))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("maze_")))
        .collect();
    dirs.sort();
    dirs.iter()
        .map(|dir| {
            let path = dir.join(SYSTEM_FILE);
            let system = StegoSystem::from_json(&report::read_text(&path)?).map_err(|e| CliError::format(&path, e))?;
            let path = dir.join(COVER_FILE);
            let cover = Agent::from_json(&report::read_text(&path)?).map_err(|e| CliError::format(&path, e))?;
            let path = dir.join(KEY_FILE);
            let key = StegoKey::from_json(&report::read_text(&path)?).map_err(|e| CliError::format(&path, e))?;
            Ok(Trained { id: dir.file_name().unwrap().to_string_lossy().into_owned(), system, cover, key })
        })
        .collect()
}

fn noise(p: f64) -> Result<TrudyConfig> {
    TrudyConfig::new(p).map_err(|e| CliError::Usage(e.to_string()))
}

fn eval_seed(common: &Common) -> u64 {
    common.seed.unwrap_or(0)
}

pub fn eval_distortion(common: &Common, input: &Systems, trials: usize, p: f64) -> Result<()> {
    let trudy = noise(p)?;
    let systems = load_trained(common, input)?;
    report::create_dir(&common.out)?;
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let names: Vec<String> = systems.first().map_or(vec![], |t| {
        std::iter::once("cover".to_string()).chain((0..t.system.agent_count()).map(|i| format!("agent{i}"))).collect()
    });
    let mut means: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (m, t) in systems.iter().enumerate() {
        let mut rng = stream(eval_seed(common), "eval-distortion", m as u64);
        let sys = &t.system;
        for (slot, name) in names.iter().enumerate() {
            let eps: Vec<Episode> = (0..trials)
                .map(|_| {
                    if slot == 0 {
                        t.cover.perturbed_rollout(&sys.labyrinth, &sys.rewards, trudy.p, &mut rng)
                    } else {
                        trudy_perturb_rollout(sys, slot - 1, trudy, &mut rng)
                    }
                })
                .collect();
            let done: Vec<usize> = eps.iter().filter(|e| e.completed).map(|e| e.steps).collect();
            let completion = if trials > 0 { done.len() as f64 / trials as f64 } else { f64::NAN };
            let mean = (!done.is_empty()).then(|| done.iter().sum::<usize>() as f64 / done.len() as f64);
            rows.push(vec![
                t.id.clone(),
                sys.labyrinth.obstacle_count().to_string(),
                name.clone(),
                trials.to_string(),
                format!("{completion:.4}"),
                fmt_opt(mean),
                done.iter().min().map(|v| v.to_string()).unwrap_or_default(),
                done.iter().max().map(|v| v.to_string()).unwrap_or_default(),
            ]);
            metrics.push(MetricsRow::new("distortion", &t.id, name, "completion", completion, trials));
            if let Some(v) = mean {
                metrics.push(MetricsRow::new("distortion", &t.id, name, "mean_timesteps", v, done.len()));
            }
            means[slot].push(mean.unwrap_or(f64::NAN));
        }
    }
    report::write_csv(
        &common.out.join("distortion.csv"),
        &["maze_id", "obstacle_count", "agent", "trials", "completion", "mean_timesteps", "min_timesteps", "max_timesteps"]
            .map(String::from),
        &rows,
    )?;
    report::write_metrics(&common.out.join("distortion_metrics.csv"), &metrics)?;
    let labels: Vec<String> = systems.iter().map(|t| t.system.labyrinth.obstacle_count().to_string()).collect();
    let series: Vec<Series> = names
        .iter()
        .zip(means)
        .enumerate()
        .map(|(i, (n, values))| Series { name: n, colour: PALETTE[i % PALETTE.len()], values })
        .collect();
    let chart = svg::bar_chart("Mean timesteps per labyrinth (label: obstacle count)", "timesteps", &labels, &series);
    report::write_text(&common.out.join("distortion.svg"), &chart)?;
    println!("distortion report for {} systems in {}", systems.len(), common.out.display());
    Ok(())
}

pub fn eval_capacity(common: &Common, input: &Systems, trials: usize, p: f64) -> Result<()> {
    let trudy = noise(p)?;
    let mut systems = load_trained(common, input)?;
    systems.sort_by_key(|t| t.system.labyrinth.obstacle_count());
    report::create_dir(&common.out)?;
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let agents = systems.first().map_or(0, |t| t.system.agent_count());
    let mut per_agent: Vec<Vec<f64>> = vec![Vec::new(); agents];
    for (m, t) in systems.iter().enumerate() {
        let sys = &t.system;
        let mut rng = stream(eval_seed(common), "eval-capacity", m as u64);
        for (i, bars) in per_agent.iter_mut().enumerate() {
            let mut probs = Vec::new();
            for j in 0..trials {
                // First trial greedy, the rest with light noise.
                let ep = if j == 0 { sys.greedy_episode(i) } else { trudy_perturb_rollout(sys, i, trudy, &mut rng) };
                if !ep.completed {
                    continue;
                }
                let pt = sys.predict(&ep)[i];
                probs.push(pt);
                rows.push(vec![
                    t.id.clone(),
                    sys.labyrinth.obstacle_count().to_string(),
                    i.to_string(),
                    j.to_string(),
                    format!("{pt:.6}"),
                    (pt < 0.5).to_string(),
                ]);
            }
            let mean = if probs.is_empty() { f64::NAN } else { probs.iter().sum::<f64>() / probs.len() as f64 };
            let ident = probs.iter().filter(|&&x| x > 0.5).count() as f64 / probs.len().max(1) as f64;
            metrics.push(MetricsRow::new("capacity", &t.id, &format!("agent{i}"), "mean_true_probability", mean, probs.len()));
            metrics.push(MetricsRow::new("capacity", &t.id, &format!("agent{i}"), "identifiability", ident, probs.len()));
            bars.push(mean);
        }
    }
    report::write_csv(
        &common.out.join("capacity.csv"),
        &["maze_id", "obstacle_count", "agent", "trial", "true_probability", "misidentified"].map(String::from),
        &rows,
    )?;
    report::write_metrics(&common.out.join("capacity_metrics.csv"), &metrics)?;
    // Misidentified means (< 0.5) are drawn in a darker shade.
    let labels: Vec<String> = systems.iter().map(|t| t.system.labyrinth.obstacle_count().to_string()).collect();
    let mut series = Vec::new();
    let names: Vec<String> = (0..agents).map(|i| format!("agent {i}")).collect();
    let dark: Vec<String> = (0..agents).map(|i| format!("agent {i} < 0.5")).collect();
    for (i, bars) in per_agent.iter().enumerate() {
        let colour = PALETTE[(i + 1) % PALETTE.len()];
        series.push(Series { name: &names[i], colour, values: bars.iter().map(|&v| if v >= 0.5 { v } else { f64::NAN }).collect() });
        series.push(Series { name: &dark[i], colour: "#000000", values: bars.iter().map(|&v| if v < 0.5 { v } else { f64::NAN }).collect() });
    }
    let chart = svg::bar_chart("Observer probability of the true identity (label: obstacle count)", "probability", &labels, &series);
    report::write_text(&common.out.join("capacity.svg"), &chart)?;
    println!("capacity report for {} systems in {}", systems.len(), common.out.display());
    Ok(())
}

pub fn eval_secrecy(
    common: &Common,
    input: &Systems,
    eve_seeds: usize,
    trials: usize,
    shadows: usize,
    episodes_per_class: usize,
) -> Result<()> {
    let systems = load_trained(common, input)?;
    report::create_dir(&common.out)?;
    let config = EveConfig { shadow_count: shadows, episodes_per_class, ..EveConfig::default() };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut header = vec!["eve_seed".to_string(), "maze_id".to_string()];
    header.extend(BinaryMetrics::CSV_HEADER.iter().map(|s| s.to_string()));
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let mut totals: BTreeMap<&str, (ConfusionMatrix, Vec<f64>)> = BTreeMap::new();
    if !systems.is_empty() {
        for e in 0..eve_seeds {
            let t = &systems[e % systems.len()];
            let seed = eval_seed(common) + e as u64;
            let fail = |err: labsteg::adversary::AdversaryError| CliError::Training { maze: t.id.clone(), message: err.to_string() };
            let mut eve = EveHarness::new(seed, config.clone()).map_err(fail)?;
            let learning = eve.train().map_err(fail)?;
            let inference = eve.test(&t.system, &t.cover, trials, &mut stream(seed, "eval-secrecy", 0)).map_err(fail)?;
            let mut control = EveHarness::with_leaked_key(seed, config.clone(), t.key.clone()).map_err(fail)?;
            control.train().map_err(fail)?;
            let leaked = control.test(&t.system, &t.cover, trials, &mut stream(seed, "eval-secrecy", 0)).map_err(fail)?;
            for (phase, m) in [("learning", learning), ("inference", inference), ("control", leaked)] {
                let mut r = vec![seed.to_string(), t.id.clone()];
                r.extend(m.csv_record(phase));
                rows.push(r);
                if let Some(acc) = m.overall_accuracy {
                    metrics.push(MetricsRow::new("secrecy", &t.id, &format!("eve{seed}"), &format!("{phase}_accuracy"), acc, m.confusion.total()));
                }
                let entry = totals.entry(phase).or_insert_with(|| (ConfusionMatrix::default(), Vec::new()));
                entry.0 = entry.0.merge(&m.confusion);
                entry.1.extend(m.overall_accuracy);
            }
        }
    }
    for (phase, (confusion, _)) in &totals {
        let mut r = vec!["all".to_string(), "all".to_string()];
        r.extend(BinaryMetrics::from_confusion(*confusion, None).csv_record(phase));
        rows.push(r);
    }
    report::write_csv(&common.out.join("secrecy.csv"), &header, &rows)?;
    report::write_metrics(&common.out.join("secrecy_metrics.csv"), &metrics)?;
    let labels: Vec<String> = totals.keys().map(|k| k.to_string()).collect();
    let values: Vec<f64> = totals.values().map(|(_, a)| a.iter().sum::<f64>() / a.len().max(1) as f64).collect();
    let chart = svg::bar_chart("Eve overall accuracy", "accuracy", &labels, &[Series { name: "mean accuracy", colour: PALETTE[2], values }]);
    report::write_text(&common.out.join("secrecy.svg"), &chart)?;
    println!("secrecy report over {eve_seeds} Eve seeds in {}", common.out.display());
    Ok(())
}

#[derive(Default, Clone, Copy)]
struct Pool {
    trials: usize,
    completed: usize,
    steps: f64,
    hits: f64,
    judged: usize,
}

impl Pool {
    fn add(&mut self, s: &RolloutStats) {
        self.trials += s.trials;
        self.completed += s.completed;
        self.steps += s.mean_timesteps.unwrap_or(0.0) * s.completed as f64;
        if let Some(id) = s.identifiability {
            self.hits += id * s.completed as f64;
            self.judged += s.completed;
        }
    }

    fn stats(&self) -> RolloutStats {
        RolloutStats {
            trials: self.trials,
            completed: self.completed,
            mean_timesteps: (self.completed > 0).then(|| self.steps / self.completed as f64),
            identifiability: (self.judged > 0).then(|| (self.hits / self.judged as f64 * 1e9).round() / 1e9),
        }
    }
}

pub fn eval_robustness(common: &Common, input: &Systems, p_values: &[f64], trials: usize) -> Result<()> {
    if p_values.is_empty() {
        return Err(CliError::Usage("--p-values must not be empty".into()));
    }
    for &p in p_values {
        noise(p)?;
    }
    let systems = load_trained(common, input)?;
    report::create_dir(&common.out)?;
    let agents = systems.first().map_or(2, |t| t.system.agent_count());
    let mut cover = vec![Pool::default(); p_values.len()];
    let mut stego = vec![vec![Pool::default(); agents]; p_values.len()];
    let mut metrics = Vec::new();
    for (m, t) in systems.iter().enumerate() {
        let seed = stream(eval_seed(common), "eval-robustness", m as u64).random();
        let table = robustness_sweep(&t.system, &t.cover, p_values, trials, seed)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        for (k, row) in table.iter().enumerate() {
            cover[k].add(&row.cover);
            for (i, a) in row.agents.iter().enumerate() {
                stego[k][i].add(a);
                if let Some(id) = a.identifiability {
                    metrics.push(MetricsRow::new(
                        "robustness",
                        &t.id,
                        &format!("agent{i}"),
                        &format!("identifiability_p{:.2}", row.stochasticity),
                        id,
                        a.completed,
                    ));
                }
            }
        }
    }
    let rows: Vec<RobustnessRow> = p_values
        .iter()
        .enumerate()
        .map(|(k, &p)| RobustnessRow { stochasticity: p, cover: cover[k].stats(), agents: stego[k].iter().map(Pool::stats).collect() })
        .collect();
    let records: Vec<Vec<String>> = if systems.is_empty() { Vec::new() } else { rows.iter().map(RobustnessRow::csv_record).collect() };
    report::write_csv(&common.out.join("robustness.csv"), &RobustnessRow::csv_header(agents), &records)?;
    report::write_metrics(&common.out.join("robustness_metrics.csv"), &metrics)?;
    let names: Vec<String> = (0..agents).map(|i| format!("agent {i}")).collect();
    let series: Vec<Series> = (0..agents)
        .map(|i| Series {
            name: &names[i],
            colour: PALETTE[(i + 1) % PALETTE.len()],
            values: rows.iter().map(|r| r.agents[i].identifiability.unwrap_or(f64::NAN)).collect(),
        })
        .collect();
    let chart = svg::line_chart("Identifiability under action noise", "identifiability", p_values, &series);
    report::write_text(&common.out.join("robustness.svg"), &chart)?;
    let mut steps = vec![Series { name: "cover", colour: PALETTE[0], values: rows.iter().map(|r| r.cover.mean_timesteps.unwrap_or(f64::NAN)).collect() }];
    steps.extend((0..agents).map(|i| Series {
        name: &names[i],
        colour: PALETTE[(i + 1) % PALETTE.len()],
        values: rows.iter().map(|r| r.agents[i].mean_timesteps.unwrap_or(f64::NAN)).collect(),
    }));
    report::write_text(&common.out.join("robustness_timesteps.svg"), &svg::line_chart("Timesteps under action noise", "timesteps", p_values, &steps))?;
    println!("robustness report for {} systems in {}", systems.len(), common.out.display());
    Ok(())
}

fn load_maze(path: &Path) -> Result<Labyrinth> {
    let text = report::read_text(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let record: MazeRecord = serde_json::from_str(&text).map_err(|e| CliError::format(path, e))?;
        record.labyrinth().map_err(|e| CliError::format(path, e))
    } else {
        Labyrinth::from_text(&text).map_err(|e| CliError::format(path, e))
    }
}

/// Accepts a single episode or a list.
fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    let value: serde_json::Value = report::read_json(path)?;
    let parsed = if value.is_array() {
        serde_json::from_value::<Vec<Episode>>(value)
    } else {
        serde_json::from_value::<Episode>(value).map(|e| vec![e])
    };
    parsed.map_err(|e| CliError::format(path, e))
}

pub fn render(common: &Common, maze: Option<&Path>, system: Option<&Path>, episode_files: &[PathBuf], name: &str) -> Result<()> {
    let mut trajectories: Vec<(String, Episode)> = Vec::new();
    let lab = match (maze, system) {
        (Some(_), Some(_)) => return Err(CliError::Usage("pass either --maze or --system, not both".into())),
        (None, None) => return Err(CliError::Usage("--maze or --system is required".into())),
        (Some(path), None) => load_maze(path)?,
        (None, Some(dir)) => {
            let path = dir.join(SYSTEM_FILE);
            let sys = StegoSystem::from_json(&report::read_text(&path)?).map_err(|e| CliError::format(&path, e))?;
            let cover_path = dir.join(COVER_FILE);
            if cover_path.exists() {
                let cover = Agent::<f64>::from_json(&report::read_text(&cover_path)?).map_err(|e| CliError::format(&cover_path, e))?;
                trajectories.push(("cover".into(), cover.greedy_rollout(&sys.labyrinth, &sys.rewards)));
            }
            for i in 0..sys.agent_count() {
                trajectories.push((format!("stego agent {i}"), sys.greedy_episode(i)));
            }
            sys.labyrinth
        }
    };
    for path in episode_files {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (j, ep) in load_episodes(path)?.into_iter().enumerate() {
            ep.validate(&lab, usize::MAX).map_err(|e| CliError::format(path, e))?;
            trajectories.push((format!("{stem} #{j}"), ep));
        }
    }
    let refs: Vec<(String, &Episode)> = trajectories.iter().map(|(n, e)| (n.clone(), e)).collect();
    report::create_dir(&common.out)?;
    let out = common.out.join(name);
    report::write_text(&out, &svg::render_labyrinth(&lab, &refs))?;
    println!("{}", out.display());
    Ok(())
}

/// The snapshot at `path` if given (checked against the key), otherwise a
/// fresh build from the key.
fn system_for(key: &StegoKey, path: Option<&Path>) -> Result<StegoSystem> {
    match path {
        Some(p) => {
            let sys = StegoSystem::from_json(&report::read_text(p)?).map_err(|e| CliError::format(p, e))?;
            if sys.key_fingerprint != key.fingerprint() {
                return Err(CliError::Usage(format!("{} was not built from this key", p.display())));
            }
            Ok(sys)
        }
        None => build_logged(key).map(|(s, _)| s).map_err(training_error("key")),
    }
}

pub fn encode(common: &Common, message: &str, system: Option<&Path>) -> Result<()> {
    let m: Message = message.parse().map_err(CliError::Usage)?;
    let key = require_key(common)?;
    let sys = system_for(&key, system)?;
    let episodes = send(&sys, &m).map_err(|e| CliError::Encode(e.to_string()))?;
    report::create_dir(&common.out)?;
    let path = common.out.join("episodes.json");
    report::write_json(&path, &episodes)?;
    println!("{} episodes -> {}", episodes.len(), path.display());
    Ok(())
}

pub fn decode(common: &Common, episodes: &Path, system: Option<&Path>) -> Result<()> {
    let key = require_key(common)?;
    let sys = system_for(&key, system)?;
    let eps = load_episodes(episodes)?;
    let m = receive(&sys, &eps).map_err(|e| CliError::Decode(e.to_string()))?;
    println!("{m}");
    Ok(())
}
