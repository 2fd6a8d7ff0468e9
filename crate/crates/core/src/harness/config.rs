use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metagrad::{auto_kappa, Estimator, InnerOptKind, LrSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Mrp,
    Snake,
}

/// Which driver a configuration is resolved for. The bias-variance sweep
/// runs on the prediction task with 1-step meta-learning by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Mrp,
    Snake,
    BiasVariance,
}

impl Command {
    pub fn task(self) -> TaskKind {
        match self {
            Command::Snake => TaskKind::Snake,
            Command::Mrp | Command::BiasVariance => TaskKind::Mrp,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Command::Mrp => "mrp",
            Command::Snake => "snake",
            Command::BiasVariance => "bias-variance",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Fixed,
    NStep,
    Mc,
    Mix,
    Trace,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kappa {
    Auto,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub kappa: Kappa,
    pub mu: f64,
    pub mc_shots: usize,
    pub iterations: usize,
    pub seed: u64,
    pub inner_optimizer: InnerOptKind,
    pub alpha: f64,
    pub alpha_linear: bool,
    pub inner_clip: Option<f64>,
    pub batch_size: usize,
    pub meta_batch_size: usize,
    pub meta_lr: f64,
    pub meta_clip: Option<f64>,
    pub gamma_init: f64,
    pub lambda_init: f64,
    pub c_crit_init: f64,
    pub c_entr_init: f64,
    pub outer_gamma: f64,
    pub outer_lambda: f64,
    pub probe_every: usize,
    pub probe_shots: usize,
    pub probe_ns: Vec<usize>,
    pub probe_mix: bool,
    pub oracle_n: usize,
    pub checkpoints: usize,
    pub log_every: usize,
    pub rollout_len: usize,
    pub board_size: usize,
    pub wall_clock: bool,
}

/// Every key, in the order it is echoed, with the commands it applies to.
const KEYS: &[(&str, &[Command])] = {
    use Command::*;
    const ALL: &[Command] = &[Mrp, Snake, BiasVariance];
    const SNAKE: &[Command] = &[Snake];
    const PROBE: &[Command] = &[Snake, BiasVariance];
    const SWEEP: &[Command] = &[BiasVariance];
    &[
        ("task", ALL),
        ("estimator", ALL),
        ("n", ALL),
        ("kappa", ALL),
        ("mu", ALL),
        ("mc_shots", ALL),
        ("iterations", ALL),
        ("seed", ALL),
        ("inner_optimizer", ALL),
        ("alpha", ALL),
        ("alpha_schedule", ALL),
        ("inner_clip", ALL),
        ("batch_size", ALL),
        ("meta_batch_size", ALL),
        ("meta_lr", ALL),
        ("meta_clip", ALL),
        ("gamma_init", ALL),
        ("lambda_init", SNAKE),
        ("c_crit_init", SNAKE),
        ("c_entr_init", SNAKE),
        ("outer_gamma", SNAKE),
        ("outer_lambda", SNAKE),
        ("probe_every", SNAKE),
        ("probe_shots", PROBE),
        ("probe_ns", PROBE),
        ("probe_mix", PROBE),
        ("oracle_n", PROBE),
        ("checkpoints", SWEEP),
        ("log_every", ALL),
        ("rollout_len", SNAKE),
        ("board_size", SNAKE),
        ("wall_clock", ALL),
    ]
};

impl ExperimentConfig {
    /// Defaults for a command, before any file or override is applied.
    pub fn defaults(command: Command) -> Self {
        let mrp = ExperimentConfig {
            command,
            estimator: EstimatorKind::Mc,
            n: 5,
            kappa: Kappa::Auto,
            mu: 0.9,
            mc_shots: 64,
            iterations: 2000,
            seed: 0,
            inner_optimizer: InnerOptKind::Adam,
            alpha: 1e-3,
            alpha_linear: false,
            inner_clip: None,
            batch_size: 32,
            meta_batch_size: 32,
            meta_lr: 2e-3,
            meta_clip: None,
            gamma_init: 0.5,
            lambda_init: 0.99,
            c_crit_init: 0.5,
            c_entr_init: 0.01,
            outer_gamma: 1.0,
            outer_lambda: 1.0,
            probe_every: 0,
            probe_shots: 64,
            probe_ns: vec![1, 3, 5],
            probe_mix: true,
            oracle_n: 10,
            checkpoints: 10,
            log_every: 1,
            rollout_len: 16,
            board_size: 12,
            wall_clock: false,
        };
        match command {
            Command::Mrp => mrp,
            Command::BiasVariance => ExperimentConfig { estimator: EstimatorKind::NStep, n: 1, ..mrp },
            Command::Snake => ExperimentConfig {
                estimator: EstimatorKind::NStep,
                n: 1,
                iterations: 3000,
                alpha: 6e-4,
                alpha_linear: true,
                inner_clip: Some(10.0),
                meta_lr: 1e-3,
                meta_clip: Some(0.1),
                gamma_init: 0.99,
                outer_gamma: 0.99,
                outer_lambda: 0.99,
                probe_shots: 16,
                probe_ns: vec![1, 3, 5],
                oracle_n: 5,
                log_every: 10,
                ..mrp
            },
        }
    }

    /// Defaults, then `key = value` entries from a file, then overrides.
    pub fn resolve(command: Command, file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::defaults(command);
        let mut seen = Vec::new();
        if let Some(text) = file {
            for (lineno, key, value) in parse_lines(text)? {
                if seen.contains(&key) {
                    return Err(Error::config(format!("line {lineno}: duplicate key `{key}`")));
                }
                cfg.set(&key, &value).map_err(|e| prefix(e, &format!("line {lineno}")))?;
                seen.push(key);
            }
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not of the form key=value")))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| prefix(e, "override"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn task(&self) -> TaskKind {
        self.command.task()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let applies = KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| Error::config(format!("unknown key `{key}`")))?
            .1;
        if !applies.contains(&self.command) {
            return Err(Error::config(format!("key `{key}` does not apply to `{}`", self.command.name())));
        }
        match key {
            "task" => {
                let want = match self.task() {
                    TaskKind::Mrp => "mrp",
                    TaskKind::Snake => "snake",
                };
                if value != want {
                    return Err(Error::config(format!("task `{value}` does not match the `{}` command", self.command.name())));
                }
            }
            "estimator" => {
                self.estimator = match value {
                    "fixed" => EstimatorKind::Fixed,
                    "nstep" => EstimatorKind::NStep,
                    "mc" => EstimatorKind::Mc,
                    "mix" => EstimatorKind::Mix,
                    "trace" => EstimatorKind::Trace,
                    _ => return Err(bad(key, value, "one of fixed, nstep, mc, mix, trace")),
                }
            }
            "n" => self.n = parse(key, value)?,
            "kappa" => {
                self.kappa = if value == "auto" { Kappa::Auto } else { Kappa::Value(parse(key, value)?) };
            }
            "mu" => self.mu = parse(key, value)?,
            "mc_shots" => self.mc_shots = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "inner_optimizer" => {
                self.inner_optimizer = match value {
                    "sgd" => InnerOptKind::Sgd,
                    "adam" => InnerOptKind::Adam,
                    _ => return Err(bad(key, value, "sgd or adam")),
                }
            }
            "alpha" => self.alpha = parse(key, value)?,
            "alpha_schedule" => {
                self.alpha_linear = match value {
                    "constant" => false,
                    "linear" => true,
                    _ => return Err(bad(key, value, "constant or linear")),
                }
            }
            "inner_clip" => self.inner_clip = parse_opt(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "meta_batch_size" => self.meta_batch_size = parse(key, value)?,
            "meta_lr" => self.meta_lr = parse(key, value)?,
            "meta_clip" => self.meta_clip = parse_opt(key, value)?,
            "gamma_init" => self.gamma_init = parse(key, value)?,
            "lambda_init" => self.lambda_init = parse(key, value)?,
            "c_crit_init" => self.c_crit_init = parse(key, value)?,
            "c_entr_init" => self.c_entr_init = parse(key, value)?,
            "outer_gamma" => self.outer_gamma = parse(key, value)?,
            "outer_lambda" => self.outer_lambda = parse(key, value)?,
            "probe_every" => self.probe_every = parse(key, value)?,
            "probe_shots" => self.probe_shots = parse(key, value)?,
            "probe_ns" => {
                self.probe_ns = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "probe_mix" => self.probe_mix = parse(key, value)?,
            "oracle_n" => self.oracle_n = parse(key, value)?,
            "checkpoints" => self.checkpoints = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "rollout_len" => self.rollout_len = parse(key, value)?,
            "board_size" => self.board_size = parse(key, value)?,
            "wall_clock" => self.wall_clock = parse(key, value)?,
            _ => unreachable!("every listed key is handled"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::config(msg.to_string())) };
        let unit_open = |x: f64| x > 0.0 && x < 1.0;
        check(self.n >= 1, "n must be at least 1")?;
        if let Kappa::Value(k) = self.kappa {
            check((0.0..=1.0).contains(&k), "kappa must lie in [0, 1] or be `auto`")?;
        }
        check((0.0..=1.0).contains(&self.mu), "mu must lie in [0, 1]")?;
        check(self.mc_shots >= 1, "mc_shots must be at least 1")?;
        check(self.iterations >= 1, "iterations must be at least 1")?;
        check(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha must be finite and non-negative")?;
        check(self.inner_clip.is_none_or(|c| c > 0.0 && c.is_finite()), "inner_clip must be positive or `none`")?;
        check(self.batch_size >= 1 && self.meta_batch_size >= 1, "batch sizes must be at least 1")?;
        check(self.meta_lr >= 0.0 && self.meta_lr.is_finite(), "meta_lr must be finite and non-negative")?;
        check(self.meta_clip.is_none_or(|c| c > 0.0 && c.is_finite()), "meta_clip must be positive or `none`")?;
        check(unit_open(self.gamma_init), "gamma_init must lie in (0, 1)")?;
        check(self.log_every >= 1, "log_every must be at least 1")?;
        if self.command == Command::Snake {
            check(unit_open(self.lambda_init), "lambda_init must lie in (0, 1)")?;
            check(self.c_crit_init > 0.0 && self.c_crit_init.is_finite(), "c_crit_init must be positive")?;
            check(self.c_entr_init > 0.0 && self.c_entr_init.is_finite(), "c_entr_init must be positive")?;
            check((0.0..=1.0).contains(&self.outer_gamma), "outer_gamma must lie in [0, 1]")?;
            check((0.0..=1.0).contains(&self.outer_lambda), "outer_lambda must lie in [0, 1]")?;
            check(self.rollout_len >= 1, "rollout_len must be at least 1")?;
            check(self.board_size >= 4 && self.board_size.is_multiple_of(4), "board_size must be a positive multiple of 4")?;
            check(
                self.meta_batch_size == self.batch_size,
                "meta_batch_size must equal batch_size for snake (validation continues the same boards)",
            )?;
        }
        if matches!(self.command, Command::Snake | Command::BiasVariance) {
            check(self.probe_shots >= 2, "probe_shots must be at least 2")?;
            check(!self.probe_ns.is_empty() && self.probe_ns.iter().all(|&n| n >= 1), "probe_ns must list lengths ≥ 1")?;
            let max_n = self.probe_ns.iter().copied().max().unwrap_or(1);
            check(self.oracle_n >= max_n, "oracle_n must be at least every probed n")?;
        }
        if self.command == Command::BiasVariance {
            check(
                self.checkpoints >= 1 && self.checkpoints <= self.iterations,
                "checkpoints must lie between 1 and iterations",
            )?;
        }
        Ok(())
    }

    pub fn kappa_value(&self) -> f64 {
        match self.kappa {
            Kappa::Auto => auto_kappa(self.n),
            Kappa::Value(k) => k,
        }
    }

    pub fn estimator(&self) -> Estimator {
        let n = self.n;
        match self.estimator {
            EstimatorKind::Fixed => Estimator::Fixed,
            EstimatorKind::NStep => Estimator::NStep { n },
            EstimatorKind::Mc => Estimator::Mc { n, shots: self.mc_shots },
            EstimatorKind::Mix => Estimator::Mix { n, kappa: self.kappa_value() },
            EstimatorKind::Trace => Estimator::Trace { n, mu: self.mu },
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        if self.alpha_linear {
            LrSchedule::Linear { total: self.iterations }
        } else {
            LrSchedule::Constant
        }
    }

    /// Iterations (counted as completed updates) at which the sweep measures.
    pub fn checkpoint_iterations(&self) -> Vec<usize> {
        (1..=self.checkpoints).map(|c| c * self.iterations / self.checkpoints).collect()
    }

    /// All applicable keys with their values, one `key = value` per line.
    pub fn to_resolved_string(&self) -> String {
        let mut out = String::new();
        for (key, applies) in KEYS {
            if applies.contains(&self.command) {
                writeln!(out, "{key} = {}", self.value_of(key)).expect("write to string");
            }
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        let opt = |o: Option<f64>| o.map_or("none".to_string(), |v| v.to_string());
        match key {
            "task" => match self.task() {
                TaskKind::Mrp => "mrp".into(),
                TaskKind::Snake => "snake".into(),
            },
            "estimator" => self.estimator().name().into(),
            "n" => self.n.to_string(),
            "kappa" => match self.kappa {
                Kappa::Auto => "auto".into(),
                Kappa::Value(k) => k.to_string(),
            },
            "mu" => self.mu.to_string(),
            "mc_shots" => self.mc_shots.to_string(),
            "iterations" => self.iterations.to_string(),
            "seed" => self.seed.to_string(),
            "inner_optimizer" => match self.inner_optimizer {
                InnerOptKind::Sgd => "sgd".into(),
                InnerOptKind::Adam => "adam".into(),
            },
            "alpha" => self.alpha.to_string(),
            "alpha_schedule" => if self.alpha_linear { "linear" } else { "constant" }.into(),
            "inner_clip" => opt(self.inner_clip),
            "batch_size" => self.batch_size.to_string(),
            "meta_batch_size" => self.meta_batch_size.to_string(),
            "meta_lr" => self.meta_lr.to_string(),
            "meta_clip" => opt(self.meta_clip),
            "gamma_init" => self.gamma_init.to_string(),
            "lambda_init" => self.lambda_init.to_string(),
            "c_crit_init" => self.c_crit_init.to_string(),
            "c_entr_init" => self.c_entr_init.to_string(),
            "outer_gamma" => self.outer_gamma.to_string(),
            "outer_lambda" => self.outer_lambda.to_string(),
            "probe_every" => self.probe_every.to_string(),
            "probe_shots" => self.probe_shots.to_string(),
            "probe_ns" => self.probe_ns.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "probe_mix" => self.probe_mix.to_string(),
            "oracle_n" => self.oracle_n.to_string(),
            "checkpoints" => self.checkpoints.to_string(),
            "log_every" => self.log_every.to_string(),
            "rollout_len" => self.rollout_len.to_string(),
            "board_size" => self.board_size.to_string(),
            "wall_clock" => self.wall_clock.to_string(),
            _ => unreachable!("every listed key is handled"),
        }
    }
}

fn prefix(e: Error, at: &str) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{at}: {m}")),
        e => e,
    }
}

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::config(format!("`{key}` = `{value}`: expected {expected}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, std::any::type_name::<T>()))
}

fn parse_opt(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// `(line number, key, value)` for every non-blank, non-comment line.
fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::config(format!("line {}: empty key or value", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for c in [Command::Mrp, Command::Snake, Command::BiasVariance] {
            ExperimentConfig::defaults(c).validate().unwrap();
        }
    }

    #[test]
    fn file_and_overrides() {
        let text = "# desk run\nestimator = mix\nn = 3 # three steps\n\nkappa = 0.5\n";
        let cfg = ExperimentConfig::resolve(Command::Mrp, Some(text), &["n=4".into(), "meta_clip = 0.2".into()]).unwrap();
        assert_eq!(cfg.estimator(), Estimator::Mix { n: 4, kappa: 0.5 });
        assert_eq!(cfg.meta_clip, Some(0.2));
    }

    #[test]
    fn rejects_unknown_misplaced_and_invalid() {
        let err = |text: &str| ExperimentConfig::resolve(Command::Mrp, Some(text), &[]).unwrap_err().to_string();
        assert!(err("gama = 0.3").contains("unknown key `gama`"));
        assert!(err("lambda_init = 0.9").contains("does not apply"));
        assert!(err("n = 0").contains("n must be"));
        assert!(err("n = three").contains("expected"));
        assert!(err("n = 2\nn = 3").contains("duplicate"));
        assert!(err("task = snake").contains("does not match"));
        assert!(err("kappa = 1.5").contains("kappa"));
        assert!(err("just words").contains("line 1"));
        assert!(ExperimentConfig::resolve(Command::Snake, None, &["board_size=10".into()]).is_err());
        assert!(ExperimentConfig::resolve(Command::BiasVariance, None, &["oracle_n=3".into()]).is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        for c in [Command::Mrp, Command::Snake, Command::BiasVariance] {
            let cfg = ExperimentConfig::resolve(c, None, &["seed=7".into(), "kappa=0.25".into()]).unwrap();
            let text = cfg.to_resolved_string();
            let again = ExperimentConfig::resolve(c, Some(&text), &[]).unwrap();
            assert_eq!(cfg, again);
        }
    }

    #[test]
    fn checkpoint_schedule() {
        let cfg = ExperimentConfig::resolve(Command::BiasVariance, None, &["iterations=100".into()]).unwrap();
        assert_eq!(cfg.checkpoint_iterations(), vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
    }
}
