//! Command-line front end: generation, play, evaluation, solving, training
//! and conversion.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use labquest::agents::{self, AgentError, AgentKind, Policy, Protocol, QConfig};
use labquest::env::{generate_game, normalized_score, parse_command, Env, EnvError, Game};
use labquest::format::{load_game, save_game, save_graph};
use labquest::ingest::{self, AnnotatedDoc, Gazetteer, IngestError};
use labquest::par::{self, Exec};
use labquest::questgen::QuestError;
use labquest::world::{Lexicon, MAX_LEVEL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

/// Path of a lexicon file replacing the built-in one.
pub const LEXICON_ENV: &str = "LABQUEST_LEXICON";

#[derive(Debug, Parser)]
#[command(name = "labquest", version, about = "Text games from synthesis procedures")]
pub struct Cli {
    /// Lexicon file (`kind<TAB>name` lines); defaults to the built-in one
    #[arg(long, global = true, env = LEXICON_ENV)]
    pub lexicon: Option<PathBuf>,
    /// Worker threads for batch work; 1 runs sequentially
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate games and their action graphs
    Gen(GenArgs),
    /// Play a game file interactively
    Play {
        game: PathBuf,
    },
    /// Run the train/test protocol for one agent
    Eval(EvalArgs),
    /// Search for a solution of a game from its start state and goal
    Solve {
        game: PathBuf,
        /// Node budget
        #[arg(long, default_value_t = 200_000)]
        budget: usize,
    },
    /// Train a tabular Q-learning policy and save it
    Train(TrainArgs),
    /// Build a game from an annotated document or raw text
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Levels as `a..b`, `a,b,c` or a single level
    #[arg(long, default_value = "1..5", value_parser = parse_levels)]
    pub levels: Levels,
    /// Games per level
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// First seed; games use consecutive seeds
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentArg {
    Oracle,
    Random,
    Search,
    Qlearn,
}

impl From<AgentArg> for AgentKind {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Oracle => AgentKind::Oracle,
            AgentArg::Random => AgentKind::Random,
            AgentArg::Search => AgentKind::Search,
            AgentArg::Qlearn => AgentKind::Qlearn,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = AgentArg::Oracle)]
    pub agent: AgentArg,
    #[arg(long, default_value = "1..5", value_parser = parse_levels)]
    pub levels: Levels,
    #[arg(long, default_value_t = 100)]
    pub train_games: usize,
    #[arg(long, default_value_t = 10)]
    pub test_games: usize,
    #[arg(long, default_value_t = 0)]
    pub train_seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub test_seed: u64,
    /// Node budget for the search agent
    #[arg(long, default_value_t = 200_000)]
    pub budget: usize,
    #[command(flatten)]
    pub q: QArgs,
    /// Directory for `report.json` and `report.tsv`
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon_start: f64,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon_end: f64,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    /// Seed of the learner's exploration
    #[arg(long, default_value_t = 0)]
    pub q_seed: u64,
}

impl QArgs {
    fn config(&self) -> QConfig {
        QConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
            episodes_per_game: self.episodes,
            seed: self.q_seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "1", value_parser = parse_levels)]
    pub levels: Levels,
    #[arg(long, default_value_t = 100)]
    pub games: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub q: QArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ConvertSource {
    /// Annotated document (`tl-annot/1`)
    #[arg(long)]
    pub annotated: Option<PathBuf>,
    /// Plain procedure text; yields a game without rewards
    #[arg(long)]
    pub text: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[command(flatten)]
    pub source: ConvertSource,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Levels(pub Vec<u8>);

pub fn parse_levels(raw: &str) -> Result<Levels, String> {
    let level = |s: &str| -> Result<u8, String> {
        let n: u8 = s.trim().parse().map_err(|_| format!("`{s}` is not a level"))?;
        if (1..=MAX_LEVEL).contains(&n) {
            Ok(n)
        } else {
            Err(format!("level {n} is outside 1..{MAX_LEVEL}"))
        }
    };
    let levels = match raw.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (level(a)?, level(b.trim_start_matches('='))?);
            if a > b {
                return Err(format!("empty level range `{raw}`"));
            }
            (a..=b).collect()
        }
        None => raw.split(',').map(level).collect::<Result<Vec<_>, _>>()?,
    };
    Ok(Levels(levels))
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_DATA,
        error: error.into(),
    }
}

fn classify(error: anyhow::Error) -> Failure {
    let budget = error.chain().any(|e| {
        matches!(e.downcast_ref::<AgentError>(), Some(AgentError::BudgetExhausted { .. }))
            || matches!(e.downcast_ref::<QuestError>(), Some(QuestError::GenerationFailed { .. }))
            || matches!(
                e.downcast_ref::<EnvError>(),
                Some(EnvError::Quest(QuestError::GenerationFailed { .. }))
            )
            || matches!(
                e.downcast_ref::<IngestError>(),
                Some(IngestError::Agent(AgentError::BudgetExhausted { .. }))
            )
    });
    Failure {
        code: if budget { EXIT_BUDGET } else { EXIT_DATA },
        error,
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    lexicon: Lexicon,
    exec: Exec,
}

fn lexicon(path: Option<&Path>) -> Result<Lexicon, Failure> {
    match path {
        None => Ok(Lexicon::builtin()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(data)?;
            Lexicon::parse(&text).with_context(|| format!("parsing {}", p.display())).map_err(data)
        }
    }
}

fn exec_for(jobs: Option<usize>) -> Exec {
    match jobs {
        Some(0 | 1) => Exec::Sequential,
        #[cfg(feature = "parallel")]
        Some(n) => {
            // the global pool can only be configured once per process
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Exec::available()
        }
        _ => Exec::available(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)
}

fn load(path: &Path) -> Result<Game, Failure> {
    load_game(&read(path)?)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(data)
}

fn io(e: std::io::Error) -> Failure {
    data(e)
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match execute(cli, input, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {:#}", f.error);
            f.code
        }
    }
}

fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Outcome {
    let ctx = Ctx {
        lexicon: lexicon(cli.lexicon.as_deref())?,
        exec: exec_for(cli.jobs),
    };
    match cli.command {
        Command::Gen(a) => gen(&ctx, &a, out),
        Command::Play { game } => play(&load(&game)?, input, out),
        Command::Eval(a) => eval(&ctx, &a, out),
        Command::Solve { game, budget } => solve(&load(&game)?, budget, out),
        Command::Train(a) => train(&ctx, &a, out),
        Command::Convert(a) => convert(&ctx, &a, out),
    }
}

fn gen(ctx: &Ctx, a: &GenArgs, out: &mut dyn Write) -> Outcome {
    let jobs: Vec<(u8, u64)> = a
        .levels
        .0
        .iter()
        .flat_map(|&l| (0..a.count as u64).map(move |i| (l, a.seed + i)))
        .collect();
    let games = par::map(ctx.exec, &jobs, |&(l, s)| generate_game(l, s, &ctx.lexicon))
        .into_iter()
        .collect::<Result<Vec<Game>, _>>()
        .map_err(|e| classify(e.into()))?;
    fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .map_err(data)?;
    let mut manifest = String::from("game\tgraph\tlevel\tseed\treference_len\n");
    for g in &games {
        let stem = format!("level{}-seed{}", g.level, g.seed);
        let game_path = a.out.join(format!("{stem}.game.json"));
        let graph_path = a.out.join(format!("{stem}.graph.json"));
        write(&game_path, &save_game(g))?;
        write(&graph_path, &save_graph(&g.graph()))?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            game_path.display(),
            graph_path.display(),
            g.level,
            g.seed,
            g.reference.len()
        ));
    }
    write!(out, "{manifest}").map_err(io)
}

fn fmt_score(game: &Game, rewards: &[i32]) -> String {
    match normalized_score(rewards, game.reference.len()) {
        Ok(s) => format!("{s:.2}"),
        Err(_) => "n/a".to_string(),
    }
}

fn play(game: &Game, input: &mut dyn BufRead, out: &mut dyn Write) -> Outcome {
    let mut env = Env::new(game).map_err(data)?;
    let (obs, _) = env.reset();
    writeln!(out, "{obs}").map_err(io)?;
    let mut line = String::new();
    loop {
        write!(out, "> ").map_err(io)?;
        out.flush().map_err(io)?;
        line.clear();
        if input.read_line(&mut line).map_err(io)? == 0 {
            writeln!(out, "\nscore so far: {}", fmt_score(game, env.rewards())).map_err(io)?;
            return Ok(());
        }
        match line.trim() {
            "" => continue,
            "quit" => {
                writeln!(out, "score so far: {}", fmt_score(game, env.rewards())).map_err(io)?;
                return Ok(());
            }
            "valid" => {
                for a in env.info().valid_actions {
                    writeln!(out, "  {a}").map_err(io)?;
                }
                continue;
            }
            cmd => match parse_command(cmd) {
                Err(e) => writeln!(out, "parse error: {e}").map_err(io)?,
                Ok(action) => {
                    let step = env.step(&action).map_err(data)?;
                    writeln!(out, "{}", step.observation).map_err(io)?;
                    writeln!(out, "reward: {:+}  score: {}", step.reward, fmt_score(game, env.rewards())).map_err(io)?;
                    if step.done {
                        writeln!(out, "final score: {}", fmt_score(game, env.rewards())).map_err(io)?;
                        return Ok(());
                    }
                }
            },
        }
    }
}

fn eval(ctx: &Ctx, a: &EvalArgs, out: &mut dyn Write) -> Outcome {
    let protocol = Protocol {
        levels: a.levels.0.clone(),
        train_games: a.train_games,
        test_games: a.test_games,
        train_seed: a.train_seed,
        test_seed: a.test_seed,
        budget: a.budget,
        q: a.q.config(),
    };
    let report = agents::evaluate(a.agent.into(), &protocol, &ctx.lexicon, ctx.exec).map_err(|e| classify(e.into()))?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(data)?;
        write(&dir.join("report.json"), &report.to_json())?;
        write(&dir.join("report.tsv"), &report.to_table())?;
    }
    write!(out, "{}", report.to_table()).map_err(io)
}

fn solve(game: &Game, budget: usize, out: &mut dyn Write) -> Outcome {
    let found = agents::plan_search(game, budget).map_err(|e| classify(e.into()))?;
    for a in &found {
        writeln!(out, "{a}").map_err(io)?;
    }
    if !game.reference.is_empty() {
        let episode = agents::replay_episode(game, &found).map_err(data)?;
        writeln!(out, "score: {}", fmt_score(game, &episode.rewards)).map_err(io)?;
    }
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs, out: &mut dyn Write) -> Outcome {
    let mut games = Vec::new();
    for &level in &a.levels.0 {
        games.extend(agents::corpus(level, a.seed, a.games, &ctx.lexicon, ctx.exec).map_err(|e| classify(e.into()))?);
    }
    let policy: Policy = agents::q_train(&games, a.q.config()).map_err(data)?;
    write(&a.out, &policy.to_json())?;
    writeln!(out, "trained on {} games, {} values -> {}", games.len(), policy.len(), a.out.display()).map_err(io)
}

fn convert(ctx: &Ctx, a: &ConvertArgs, out: &mut dyn Write) -> Outcome {
    let game = if let Some(path) = &a.source.annotated {
        let doc = AnnotatedDoc::from_json(&read(path)?).map_err(data)?;
        let c = ingest::convert_annotated(&doc).map_err(data)?;
        for w in &c.warnings {
            writeln!(out, "warning: {w}").map_err(io)?;
        }
        c.game
    } else {
        let path = a.source.text.as_ref().expect("clap requires one source");
        let gazetteer = Gazetteer::from_lexicon(&ctx.lexicon).map_err(data)?;
        ingest::game_from_text(&read(path)?, &gazetteer).map_err(data)?
    };
    write(&a.out, &save_game(&game))?;
    writeln!(
        out,
        "{} entities, {} reference actions -> {}",
        game.s0.interactable().count(),
        game.reference.len(),
        a.out.display()
    )
    .map_err(io)
}
