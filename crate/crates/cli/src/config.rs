//! Flat `key = value` experiment configs.

use std::path::PathBuf;

use rankdistill::harness::{GapKind, TrainConfig};
use rankdistill::losses::{Epsilon, LossSelection, PoolTarget};

/// Batch of runs derived from one config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Single,
    Table2,
    Alpha,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub preset: Preset,
}

pub const REQUIRED_KEYS: [&str; 4] = ["seed", "steps", "lr", "out_dir"];

pub const KNOWN_KEYS: [&str; 20] = [
    "seed",
    "steps",
    "lr",
    "out_dir",
    "preset",
    "head_lr_scale",
    "losses",
    "alpha",
    "epsilon",
    "pool",
    "mask_l1",
    "task_weight",
    "gap",
    "batch",
    "channels",
    "height",
    "width",
    "levels",
    "objects",
    "threads",
];

/// A config problem, always tied to the key that caused it when there is one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(key: &str, value: &str, what: &str) -> ConfigError {
    ConfigError(format!("invalid value {value:?} for key `{key}`: expected {what}"))
}

/// `rel:K` is relative to the spread of each compared vector; a bare number
/// is an absolute strength.
pub fn parse_epsilon(s: &str) -> Result<Epsilon, String> {
    let s = s.trim();
    let (rel, num) = match s.strip_prefix("rel:") {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("expected a number or rel:K, got {s:?}"))?;
    let eps = if rel { Epsilon::Relative(v) } else { Epsilon::Fixed(v) };
    eps.validate().map_err(|e| e.to_string())
}

/// `HxW`, or a single number for a square target.
pub fn parse_pool(s: &str) -> Result<PoolTarget, String> {
    let s = s.trim();
    let parse = |p: &str| p.trim().parse::<usize>().ok().filter(|&v| v > 0);
    let target = match s.split_once(['x', 'X']) {
        Some((h, w)) => parse(h).zip(parse(w)),
        None => parse(s).map(|n| (n, n)),
    };
    target
        .map(|(h, w)| PoolTarget::new(h, w))
        .ok_or_else(|| format!("expected HxW with positive sizes, got {s:?}"))
}

fn parse_losses(s: &str) -> Option<LossSelection> {
    let mut sel = LossSelection::NONE;
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "none" => {}
            "all" => sel = LossSelection::ALL,
            "sd" => sel.sd = true,
            "scc" => sel.scc = true,
            "od" => sel.od = true,
            _ => return None,
        }
    }
    Some(sel)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// Parses config text. Later duplicates of a key are an error, as are keys
/// outside [`KNOWN_KEYS`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut train = TrainConfig::default();
    let mut out_dir = None;
    let mut preset = Preset::Single;
    let mut seen: Vec<String> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError(format!(
                "line {}: expected key = value, got {line:?}",
                lineno + 1
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KNOWN_KEYS.contains(&key) {
            return Err(ConfigError(format!("unknown key `{key}` on line {}", lineno + 1)));
        }
        if seen.iter().any(|k| k == key) {
            return Err(ConfigError(format!("duplicate key `{key}` on line {}", lineno + 1)));
        }
        seen.push(key.to_string());

        let uint = || value.parse::<usize>().map_err(|_| bad(key, value, "a nonnegative integer"));
        let float = || {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(key, value, "a finite number"))
        };
        match key {
            "seed" => train.seed = value.parse().map_err(|_| bad(key, value, "an unsigned integer"))?,
            "steps" => train.steps = uint()?,
            "lr" => train.lr = float()?,
            "head_lr_scale" => train.head_lr_scale = float()?,
            "alpha" => train.alpha = float()?,
            "task_weight" => train.task_weight = float()?,
            "losses" => {
                train.selection =
                    parse_losses(value).ok_or_else(|| bad(key, value, "a comma list of sd, scc, od, all or none"))?
            }
            "epsilon" => train.epsilon = parse_epsilon(value).map_err(|e| bad(key, value, &e))?,
            "pool" => train.pool = parse_pool(value).map_err(|e| bad(key, value, &e))?,
            "mask_l1" => train.mask_l1 = parse_bool(value).ok_or_else(|| bad(key, value, "true or false"))?,
            "gap" => {
                train.gap = match value {
                    "default" => GapKind::Default,
                    "monotone" => GapKind::Monotone,
                    "identity" => GapKind::Identity,
                    _ => return Err(bad(key, value, "default, monotone or identity")),
                }
            }
            "batch" => train.dims.batch = uint()?,
            "channels" => train.dims.channels = uint()?,
            "height" => train.dims.height = uint()?,
            "width" => train.dims.width = uint()?,
            "levels" => train.levels = uint()?,
            "objects" => train.n_objects = uint()?,
            "out_dir" => {
                if value.is_empty() {
                    return Err(bad(key, value, "a directory path"));
                }
                out_dir = Some(PathBuf::from(value));
            }
            "preset" => {
                preset = match value {
                    "none" | "single" => Preset::Single,
                    "table2" => Preset::Table2,
                    "alpha" => Preset::Alpha,
                    _ => return Err(bad(key, value, "none, table2 or alpha")),
                }
            }
            // accepted for config portability; SKD_THREADS controls parallelism
            "threads" => {
                uint()?;
            }
            _ => unreachable!("key list and match arms agree"),
        }
    }

    for key in REQUIRED_KEYS {
        if !seen.iter().any(|k| k == key) {
            return Err(ConfigError(format!("missing required key `{key}`")));
        }
    }
    train
        .validate()
        .map_err(|e| ConfigError(format!("invalid config: {e}")))?;
    Ok(ExperimentConfig {
        train,
        out_dir: out_dir.expect("out_dir is required"),
        preset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\nsteps = 10\nlr = 0.5\nout_dir = runs/x\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.train.lr, 0.5);
        assert_eq!(c.out_dir, PathBuf::from("runs/x"));
        assert_eq!(c.preset, Preset::Single);
        assert_eq!(c.train.alpha, TrainConfig::default().alpha);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = format!("# header\n\n{MINIMAL}alpha = 2 # trailing\n");
        assert_eq!(parse_config(&text).unwrap().train.alpha, 2.0);
    }

    #[test]
    fn every_key_parses() {
        let text = format!(
            "{MINIMAL}preset = table2\nhead_lr_scale = 0.1\nlosses = scc,od\nalpha = 0.5\n\
             epsilon = rel:2\npool = 8x4\nmask_l1 = true\ntask_weight = 0.2\ngap = monotone\n\
             batch = 1\nchannels = 4\nheight = 16\nwidth = 12\nlevels = 2\nobjects = 3\nthreads = 2\n"
        );
        let c = parse_config(&text).unwrap();
        assert_eq!(c.preset, Preset::Table2);
        assert_eq!(c.train.selection, LossSelection { sd: false, scc: true, od: true });
        assert_eq!(c.train.epsilon, Epsilon::Relative(2.0));
        assert_eq!(c.train.pool, PoolTarget::new(8, 4));
        assert!(c.train.mask_l1);
        assert_eq!(c.train.gap, GapKind::Monotone);
        assert_eq!(c.train.dims.width, 12);
        assert_eq!(c.train.n_objects, 3);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config(&format!("{MINIMAL}learning_rate = 1\n")).unwrap_err();
        assert!(err.0.contains("`learning_rate`"), "{err}");
    }

    #[test]
    fn missing_required_key_is_named() {
        let err = parse_config("seed = 1\nsteps = 2\nout_dir = o\n").unwrap_err();
        assert!(err.0.contains("`lr`"), "{err}");
    }

    #[test]
    fn bad_values_name_their_key() {
        for (line, key) in [
            ("alpha = lots", "alpha"),
            ("losses = sd,kd", "losses"),
            ("pool = 0x3", "pool"),
            ("epsilon = -1", "epsilon"),
            ("gap = weird", "gap"),
        ] {
            let err = parse_config(&format!("{MINIMAL}{line}\n")).unwrap_err();
            assert!(err.0.contains(&format!("`{key}`")), "{err}");
        }
        let err = parse_config(&format!("{MINIMAL}seed = 4\n")).unwrap_err();
        assert!(err.0.contains("duplicate key `seed`"));
    }

    #[test]
    fn epsilon_syntax() {
        assert_eq!(parse_epsilon("0.25"), Ok(Epsilon::Fixed(0.25)));
        assert_eq!(parse_epsilon("rel:4"), Ok(Epsilon::Relative(4.0)));
        assert!(parse_epsilon("0").is_err());
        assert!(parse_epsilon("rel:").is_err());
    }

    #[test]
    fn pool_syntax() {
        assert_eq!(parse_pool("16x8"), Ok(PoolTarget::new(16, 8)));
        assert_eq!(parse_pool("4"), Ok(PoolTarget::new(4, 4)));
        assert!(parse_pool("4x").is_err());
    }
}
