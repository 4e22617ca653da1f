use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use jsp_core::curriculum::{
    level_log_csv, parse_ladder, CurriculumDriver, CurriculumKind, CurriculumParams, Ladder,
};
use jsp_core::env::lower_bound;
use jsp_core::inference::Strategy;
use jsp_core::instance::{generate, load_instance, Format, UbRegistry};
use jsp_core::nncore::Checkpoint;
use jsp_core::oracle::{solve_exact, OracleError};
use jsp_core::pdr::{best_of_rules, run as run_rule, PdrKind};
use jsp_core::policy::{PolicyConfig, PolicyNet};
use jsp_core::seeds::derive;
use jsp_core::trainer::{train, TrainConfig};
use jsp_core::{Instance, Time};
use rayon::prelude::*;

use crate::report::{echo, long_csv, natural_cmp, parse_long, records, wide_csv, Row};
use crate::{
    CliError, Command, CurriculumArg, EvalArgs, FormatArg, GenerateArgs, InstanceSource,
    OracleArgs, PdrArgs, ReferenceArg, TableArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Pdr(a) => cmd_pdr(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Table(a) => cmd_table(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn format_name(f: FormatArg) -> &'static str {
    match f {
        FormatArg::Auto => "auto",
        FormatArg::Standard => "standard",
        FormatArg::Taillard => "taillard",
    }
}

fn reference_name(r: ReferenceArg) -> &'static str {
    match r {
        ReferenceArg::Registry => "registry",
        ReferenceArg::Oracle => "oracle",
        ReferenceArg::BestPdr => "best-pdr",
        ReferenceArg::LowerBound => "lower-bound",
    }
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "builtin".into(), |p| p.display().to_string())
}

fn load_file(path: &Path, format: FormatArg) -> Result<Instance> {
    match format {
        FormatArg::Standard => Ok(load_instance(path, Format::Standard)?),
        FormatArg::Taillard => Ok(load_instance(path, Format::Taillard)?),
        FormatArg::Auto => load_instance(path, Format::Standard)
            .or_else(|first| load_instance(path, Format::Taillard).map_err(|_| first))
            .map_err(CliError::from),
    }
}

/// Every regular, non-hidden file of `dir` in natural name order.
fn load_dir(dir: &Path, format: FormatArg) -> Result<Vec<Instance>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let hidden = path
            .file_name()
            .is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if path.is_file() && !hidden {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| natural_cmp(&a.to_string_lossy(), &b.to_string_lossy()));
    if paths.is_empty() {
        return Err(CliError::Runtime(format!(
            "no instance files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_file(p, format)).collect()
}

struct References {
    kind: ReferenceArg,
    registry: Option<UbRegistry>,
    budget: u64,
}

impl References {
    fn new(source: &InstanceSource) -> Result<Self> {
        let registry = match (source.reference, &source.ub) {
            (ReferenceArg::Registry, Some(p)) => Some(UbRegistry::load(p)?),
            (ReferenceArg::Registry, None) => Some(UbRegistry::builtin()),
            _ => None,
        };
        Ok(Self {
            kind: source.reference,
            registry,
            budget: source.budget,
        })
    }

    fn of(&self, inst: &Instance) -> Result<Time> {
        match self.kind {
            ReferenceArg::Registry => {
                let r = self.registry.as_ref().expect("registry loaded");
                let entry = r.lookup(&inst.name).map_err(|_| {
                    CliError::Runtime(format!("no upper bound for `{}`", inst.name))
                })?;
                Ok(entry.upper_bound)
            }
            ReferenceArg::Oracle => match solve_exact(inst, self.budget) {
                Ok(sol) => Ok(sol.makespan),
                Err(OracleError::BudgetExceeded { .. }) => Err(CliError::Runtime(format!(
                    "oracle budget exhausted on `{}`",
                    inst.name
                ))),
                Err(OracleError::Invalid(msg)) => Err(CliError::Runtime(msg)),
            },
            ReferenceArg::BestPdr => Ok(best_of_rules(inst)?.1.makespan),
            ReferenceArg::LowerBound => Ok(lower_bound(inst).max(1)),
        }
    }
}

fn source_echo(s: &InstanceSource) -> Vec<(&'static str, String)> {
    vec![
        ("dir", s.dir.display().to_string()),
        ("format", format_name(s.format).into()),
        ("reference", reference_name(s.reference).into()),
        ("ub", path_text(&s.ub)),
        ("budget", s.budget.to_string()),
    ]
}

fn parse_rules(spec: &str) -> Result<Vec<PdrKind>> {
    if spec.trim() == "all" {
        return Ok(PdrKind::RULES.to_vec());
    }
    spec.split(',')
        .map(|r| r.parse::<PdrKind>().map_err(|e| usage(e.to_string())))
        .collect()
}

fn rule_label(kind: PdrKind) -> String {
    match kind {
        PdrKind::Random(seed) => format!("random:{seed}"),
        k => k.name().to_string(),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    if a.n == 0 || a.m == 0 {
        return Err(usage("--n and --m must be at least 1"));
    }
    fs::create_dir_all(&a.dir)?;
    for k in 0..a.count {
        let inst = generate(
            a.n,
            a.m,
            derive(a.seed, (a.n * 1000 + a.m) as u64, k as u64),
        );
        let path = a.dir.join(format!("r{}x{}s{}_{k}.txt", a.n, a.m, a.seed));
        fs::write(&path, inst.to_standard())?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_pdr(a: PdrArgs) -> Result<()> {
    let rules = parse_rules(&a.rules)?;
    let pool = pool(a.common.jobs)?;
    let instances = load_dir(&a.source.dir, a.source.format)?;
    let refs = References::new(&a.source)?;
    let rows: Vec<Vec<Row>> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| {
                let reference = refs.of(inst)?;
                rules
                    .iter()
                    .map(|&kind| {
                        Ok(Row {
                            name: inst.name.clone(),
                            size: (inst.n_jobs(), inst.n_machines()),
                            method: rule_label(kind),
                            makespan: run_rule(kind, inst)?.makespan,
                            reference,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()
    })?;
    let methods: Vec<String> = rules.iter().map(|&k| rule_label(k)).collect();
    let mut pairs = vec![("command", "pdr".to_string()), ("rules", methods.join(";"))];
    pairs.extend(source_echo(&a.source));
    pairs.push(("jobs", a.common.jobs.to_string()));
    let rows: Vec<Row> = rows.into_iter().flatten().collect();
    let text = echo(&pairs) + &long_csv(&records(&rows, &methods), "rule");
    emit(a.common.out.as_deref(), &text)
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let pool = pool(a.common.jobs)?;
    let instances = a
        .files
        .iter()
        .map(|p| load_file(p, a.format))
        .collect::<Result<Vec<_>>>()?;
    let results = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| match solve_exact(inst, a.budget) {
                Ok(sol) => Ok((sol, true)),
                Err(OracleError::BudgetExceeded { incumbent }) => Ok((incumbent, false)),
                Err(OracleError::Invalid(msg)) => Err(CliError::Runtime(msg)),
            })
            .collect::<Result<Vec<_>>>()
    })?;
    if let Some(dir) = &a.schedules {
        fs::create_dir_all(dir)?;
    }
    let mut text = echo(&[
        ("command", "oracle".into()),
        ("format", format_name(a.format).into()),
        ("budget", a.budget.to_string()),
        ("jobs", a.common.jobs.to_string()),
    ]);
    text.push_str("name,n,m,makespan,optimal,nodes\n");
    for (inst, (sol, optimal)) in instances.iter().zip(&results) {
        text.push_str(&format!(
            "{},{},{},{},{optimal},{}\n",
            inst.name,
            inst.n_jobs(),
            inst.n_machines(),
            sol.makespan,
            sol.nodes
        ));
        if let Some(dir) = &a.schedules {
            fs::write(
                dir.join(format!("{}.schedule.csv", inst.name)),
                sol.schedule.to_csv(inst),
            )?;
        }
    }
    emit(a.common.out.as_deref(), &text)
}

fn curriculum_kind(c: CurriculumArg) -> CurriculumKind {
    match c {
        CurriculumArg::Icl => CurriculumKind::Icl,
        CurriculumArg::Ucl => CurriculumKind::Ucl,
        CurriculumArg::Ascl => CurriculumKind::Ascl,
        CurriculumArg::Rascl => CurriculumKind::Rascl,
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let sizes = parse_ladder(&a.ladder).map_err(|e| usage(e.to_string()))?;
    let params = CurriculumParams {
        u: a.u,
        b: a.b,
        t_opt: a.t_opt,
        patience: a.patience,
        icl_budget: a.icl_budget.unwrap_or((a.iters / sizes.len()).max(1)),
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    let cfg = TrainConfig {
        batch_size: a.batch,
        lr: a.lr,
        iterations: a.iters,
        eval_every: a.eval_every,
        seed: a.seed,
        critic_weight: a.critic_weight,
        clip_norm: a.clip_norm,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.test_size == 0 {
        return Err(usage("--test-size must be at least 1"));
    }
    let net = match &a.init {
        Some(p) if !p.exists() => {
            return Err(usage(format!("checkpoint {} not found", p.display())))
        }
        Some(p) => PolicyNet::from_checkpoint(&Checkpoint::load(p)?)?,
        None => PolicyNet::new(PolicyConfig::with_embed_dim(a.embed_dim), a.seed)
            .map_err(|e| usage(e.to_string()))?,
    };
    let pool = pool(a.jobs)?;
    fs::create_dir_all(&a.dir)?;

    let ladder_text = sizes
        .iter()
        .map(|(n, m)| format!("{n}x{m}"))
        .collect::<Vec<_>>()
        .join(";");
    let header = echo(&[
        ("command", "train".into()),
        ("curriculum", curriculum_kind(a.curriculum).name().into()),
        ("ladder", ladder_text),
        ("iters", a.iters.to_string()),
        ("batch", a.batch.to_string()),
        ("lr", a.lr.to_string()),
        ("seed", a.seed.to_string()),
        ("u", params.u.to_string()),
        ("b", params.b.to_string()),
        ("t-opt", params.t_opt.to_string()),
        ("patience", params.patience.to_string()),
        ("icl-budget", params.icl_budget.to_string()),
        ("embed-dim", net.config().embed_dim.to_string()),
        ("test-size", a.test_size.to_string()),
        ("eval-every", a.eval_every.to_string()),
        ("critic-weight", a.critic_weight.to_string()),
        (
            "clip-norm",
            a.clip_norm.map_or_else(|| "none".into(), |c| c.to_string()),
        ),
        ("init", path_text(&a.init)),
        ("jobs", a.jobs.to_string()),
    ]);

    pool.install(|| {
        let ladder = Ladder::new(&sizes, a.test_size, a.seed)?;
        let n_levels = ladder.len();
        let mut driver =
            CurriculumDriver::new(curriculum_kind(a.curriculum), params, ladder, a.seed)?;
        let mut metrics = BufWriter::new(File::create(a.dir.join("metrics.csv"))?);
        metrics.write_all(header.as_bytes())?;
        let outcome = train(
            net,
            &cfg,
            &mut driver,
            Some(a.dir.join("checkpoint.jspc")),
            Some(&mut metrics),
        );
        metrics.flush()?;
        let levels = header.clone() + &level_log_csv(&driver.log, n_levels);
        fs::write(a.dir.join("levels.csv"), levels)?;
        outcome.map(|_| ())
    })?;
    Ok(())
}

fn parse_strategies(spec: &str) -> Result<Vec<Strategy>> {
    spec.split(',')
        .map(|s| s.parse::<Strategy>().map_err(|e| usage(e.to_string())))
        .collect()
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let strategies = parse_strategies(&a.strategies)?;
    if !a.checkpoint.is_file() {
        return Err(usage(format!(
            "checkpoint {} not found",
            a.checkpoint.display()
        )));
    }
    let net = PolicyNet::<f32>::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    if let Some(d) = a.embed_dim {
        if d != net.config().embed_dim {
            return Err(CliError::Runtime(format!(
                "checkpoint has embedding width {}, config asks for {d}",
                net.config().embed_dim
            )));
        }
    }
    let pool = pool(a.common.jobs)?;
    let instances = load_dir(&a.source.dir, a.source.format)?;
    let refs = References::new(&a.source)?;
    let rows: Vec<Vec<Row>> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| {
                let reference = refs.of(inst)?;
                let bound = net.bind(inst)?;
                strategies
                    .iter()
                    .map(|s| {
                        Ok(Row {
                            name: inst.name.clone(),
                            size: (inst.n_jobs(), inst.n_machines()),
                            method: s.to_string(),
                            makespan: s.decode(&bound, a.seed)?.makespan,
                            reference,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()
    })?;
    let methods: Vec<String> = strategies.iter().map(|s| s.to_string()).collect();
    let mut pairs = vec![
        ("command", "eval".to_string()),
        ("checkpoint", a.checkpoint.display().to_string()),
        ("embed-dim", net.config().embed_dim.to_string()),
        ("strategies", methods.join(";")),
        ("seed", a.seed.to_string()),
    ];
    pairs.extend(source_echo(&a.source));
    pairs.push(("jobs", a.common.jobs.to_string()));
    let rows: Vec<Row> = rows.into_iter().flatten().collect();
    let recs = records(&rows, &methods);
    let body = if a.long {
        long_csv(&recs, "strategy")
    } else {
        wide_csv(&recs)
    };
    emit(a.common.out.as_deref(), &(echo(&pairs) + &body))
}

fn cmd_table(a: TableArgs) -> Result<()> {
    let mut recs = Vec::new();
    for p in &a.inputs {
        let text = fs::read_to_string(p)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?;
        recs.extend(
            parse_long(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?,
        );
    }
    let inputs = a
        .inputs
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(";");
    let text = echo(&[("command", "table".into()), ("inputs", inputs)]) + &wide_csv(&recs);
    emit(a.common.out.as_deref(), &text)
}
