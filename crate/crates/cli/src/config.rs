//! Run configuration: flat `key = value` lines with dotted section prefixes.
//! `#` starts a comment. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thermopt_core::assembly::JouleForm;
use thermopt_core::control::{OptimizerMode, OptimizerOptions};
use thermopt_core::materials::ConductivityModel;
use thermopt_core::mesh::TagRule;
use thermopt_core::state::SolverOptions;
use thermopt_core::transform::EpsChoice;

use crate::error::{CliError, CliResult};
use crate::expr::Expr;

/// Every accepted key with its default; `None` means unset unless given.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("problem.dim", Some("2")),
    ("problem.extents", Some("1")),
    ("problem.divisions", Some("16")),
    ("problem.dirichlet", Some("x0")),
    ("problem.mesh_file", None),
    ("problem.model", Some("truncated_power")),
    ("problem.sigma0", Some("1")),
    ("problem.u_star", Some("1")),
    ("problem.exponent", Some("2")),
    ("problem.u0", Some("0")),
    ("problem.u1", Some("0")),
    ("problem.phi0", Some("0")),
    ("problem.u0_file", None),
    ("problem.u1_file", None),
    ("problem.phi0_file", None),
    ("problem.beta_max", Some("2")),
    ("problem.beta", None),
    ("solver.tol", Some("1e-9")),
    ("solver.damping", Some("0.7")),
    ("solver.max_iter", Some("200")),
    ("solver.joule_form", Some("weak")),
    ("solver.truncation", Some("auto")),
    ("solver.seed", Some("20240601")),
    ("optimizer.mode", Some("sweep")),
    ("optimizer.relaxation", Some("0.5")),
    ("optimizer.tol", Some("1e-7")),
    ("optimizer.max_outer", Some("100")),
    ("optimizer.initial_beta", Some("0")),
    ("certificate.eps", Some("auto")),
    ("certificate.c1", Some("1")),
    ("certificate.allow_constant_model", Some("false")),
    ("output.dir", Some("out")),
    ("output.formats", Some("vtk,csv")),
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

#[derive(Debug, Clone)]
pub enum Geometry {
    Box {
        dim: usize,
        extents: Vec<f64>,
        divisions: Vec<usize>,
        rule: TagRule,
    },
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Expr(Expr),
    Nodal(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub geometry: Geometry,
    /// Explicit `problem.dim` next to a mesh file; checked once the file is read.
    pub expected_dim: Option<usize>,
    pub model: ConductivityModel,
    pub u0: DataSource,
    pub u1: DataSource,
    pub phi0: DataSource,
    pub beta_max: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct CertificateConfig {
    pub eps: EpsChoice,
    pub c1: f64,
    pub allow_constant_model: bool,
}

#[derive(Debug, Clone)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub vtk: bool,
    pub csv: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub solver: SolverOptions,
    pub seed: u64,
    pub optimizer: OptimizerOptions,
    pub initial_beta: f64,
    pub certificate: CertificateConfig,
    pub output: OutputConfig,
    /// Effective key/value pairs, defaults included.
    pub echo: BTreeMap<String, String>,
}

struct Entries<'a> {
    path: &'a str,
    given: BTreeMap<String, Entry>,
}

impl<'a> Entries<'a> {
    fn error(&self, e: Option<&Entry>, message: impl Into<String>) -> CliError {
        CliError::Config {
            path: self.path.to_string(),
            line: e.map_or(0, |e| e.line),
            column: e.map_or(0, |e| e.column),
            message: message.into(),
        }
    }

    fn given(&self, key: &str) -> Option<&Entry> {
        self.given.get(key)
    }

    fn raw(&self, key: &str) -> Option<(&str, Option<&Entry>)> {
        if let Some(e) = self.given.get(key) {
            return Some((e.value.as_str(), Some(e)));
        }
        KEYS.iter()
            .find(|(k, _)| *k == key)
            .and_then(|(_, d)| d.map(|d| (d, None)))
    }

    fn text(&self, key: &str) -> &str {
        self.raw(key).map_or("", |(v, _)| v)
    }

    fn number(&self, key: &str) -> CliResult<f64> {
        let (v, e) = self.raw(key).expect("numeric keys have defaults");
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.error(e, format!("`{key}` expects a finite number, found `{v}`")))
    }

    fn positive(&self, key: &str) -> CliResult<f64> {
        let x = self.number(key)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.error(self.given(key), format!("`{key}` must be positive, found {x}")))
        }
    }

    fn count(&self, key: &str) -> CliResult<usize> {
        let (v, e) = self.raw(key).expect("integer keys have defaults");
        v.parse::<usize>()
            .map_err(|_| self.error(e, format!("`{key}` expects a nonnegative integer, found `{v}`")))
    }

    fn boolean(&self, key: &str) -> CliResult<bool> {
        let (v, e) = self.raw(key).expect("boolean keys have defaults");
        match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.error(e, format!("`{key}` expects true or false, found `{v}`"))),
        }
    }

    fn list<T: std::str::FromStr + Clone>(&self, key: &str, dim: usize) -> CliResult<Vec<T>> {
        let (v, e) = self.raw(key).expect("list keys have defaults");
        let items = v
            .split(',')
            .map(|t| t.trim().parse::<T>())
            .collect::<Result<Vec<T>, _>>()
            .map_err(|_| self.error(e, format!("`{key}` expects a comma separated list, found `{v}`")))?;
        match items.len() {
            1 => Ok(vec![items[0].clone(); dim]),
            n if n == dim => Ok(items),
            n => Err(self.error(e, format!("`{key}` has {n} entries for dimension {dim}"))),
        }
    }

    fn path(&self, key: &str, base: &Path) -> Option<PathBuf> {
        self.given(key).map(|e| base.join(&e.value))
    }

    fn expr(&self, key: &str, dim: Option<usize>) -> CliResult<Expr> {
        let (v, e) = self.raw(key).expect("expression keys have defaults");
        let expr = Expr::parse(v).map_err(|err| CliError::Config {
            path: self.path.to_string(),
            line: e.map_or(0, |e| e.line),
            column: e.map_or(0, |e| e.column + err.column - 1),
            message: format!("`{key}`: {}", err.message),
        })?;
        if let Some(d) = dim {
            if expr.dims_used() > d {
                return Err(self.error(e, format!("`{key}` uses a coordinate beyond dimension {d}")));
            }
        }
        Ok(expr)
    }
}

fn split_lines(text: &str, path: &str) -> CliResult<BTreeMap<String, Entry>> {
    let mut given = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let body = line.split('#').next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        let err = |column: usize, message: String| CliError::Config {
            path: path.to_string(),
            line: line_no,
            column,
            message,
        };
        let first = body.chars().take_while(|c| c.is_whitespace()).count() + 1;
        let Some(eq) = body.find('=') else {
            return Err(err(first, "expected `key = value`".into()));
        };
        let key = body[..eq].trim();
        if key.is_empty() {
            return Err(err(first, "missing key before `=`".into()));
        }
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(err(first, format!("unknown key `{key}`")));
        }
        let after = &body[eq + 1..];
        let value = after.trim();
        let column = body[..eq + 1].chars().count() + after.chars().take_while(|c| c.is_whitespace()).count() + 1;
        if value.is_empty() {
            return Err(err(column, format!("missing value for `{key}`")));
        }
        if let Some(prev) = given.get(key).map(|e: &Entry| e.line) {
            return Err(err(first, format!("duplicate key `{key}` (first set on line {prev})")));
        }
        given.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: line_no,
                column,
            },
        );
    }
    Ok(given)
}

fn data_source(entries: &Entries, key: &str, dim: Option<usize>, base: &Path) -> CliResult<DataSource> {
    let file_key = format!("{key}_file");
    match entries.path(&file_key, base) {
        Some(p) => {
            if entries.given(key).is_some() {
                return Err(entries.error(
                    entries.given(&file_key),
                    format!("`{key}` and `{file_key}` are mutually exclusive"),
                ));
            }
            Ok(DataSource::Nodal(p))
        }
        None => Ok(DataSource::Expr(entries.expr(key, dim)?)),
    }
}

fn model(entries: &Entries) -> CliResult<ConductivityModel> {
    let (kind, e) = entries.raw("problem.model").expect("default");
    let sigma0 = entries.positive("problem.sigma0")?;
    let built = match kind {
        "truncated_power" => ConductivityModel::truncated_power(
            sigma0,
            entries.positive("problem.u_star")?,
            entries.positive("problem.exponent")?,
        ),
        "constant" => {
            for key in ["problem.u_star", "problem.exponent"] {
                if let Some(given) = entries.given(key) {
                    return Err(entries.error(Some(given), format!("`{key}` does not apply to the constant model")));
                }
            }
            ConductivityModel::constant(sigma0)
        }
        other => {
            return Err(entries.error(
                e,
                format!("unknown model `{other}` (expected truncated_power or constant)"),
            ))
        }
    };
    built.map_err(|err| entries.error(e, err.to_string()))
}

fn geometry(entries: &Entries, base: &Path) -> CliResult<(Geometry, Option<usize>)> {
    let dim = entries.count("problem.dim")?;
    if dim != 2 && dim != 3 {
        return Err(entries.error(entries.given("problem.dim"), format!("dimension must be 2 or 3, found {dim}")));
    }
    if let Some(file) = entries.path("problem.mesh_file", base) {
        for key in ["problem.extents", "problem.divisions", "problem.dirichlet"] {
            if let Some(given) = entries.given(key) {
                return Err(entries.error(Some(given), format!("`{key}` cannot be combined with `problem.mesh_file`")));
            }
        }
        let expected = entries.given("problem.dim").map(|_| dim);
        return Ok((Geometry::File(file), expected));
    }
    let extents: Vec<f64> = entries.list("problem.extents", dim)?;
    if extents.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(entries.error(entries.given("problem.extents"), "extents must be positive"));
    }
    let divisions: Vec<usize> = entries.list("problem.divisions", dim)?;
    let (rule_text, e) = entries.raw("problem.dirichlet").expect("default");
    let rule = TagRule::parse(rule_text, dim).ok_or_else(|| {
        entries.error(
            e,
            format!("`problem.dirichlet` expects `all` or faces like `x0,y1` for dimension {dim}, found `{rule_text}`"),
        )
    })?;
    Ok((
        Geometry::Box {
            dim,
            extents,
            divisions,
            rule,
        },
        Some(dim),
    ))
}

impl RunConfig {
    /// Parses configuration text; relative paths resolve against `base`.
    pub fn parse(text: &str, path: &str, base: &Path) -> CliResult<Self> {
        let entries = Entries {
            path,
            given: split_lines(text, path)?,
        };
        let (geometry, expected_dim) = geometry(&entries, base)?;
        let expr_dim = match geometry {
            Geometry::Box { dim, .. } => Some(dim),
            Geometry::File(_) => expected_dim,
        };
        let model = model(&entries)?;
        let u0 = data_source(&entries, "problem.u0", expr_dim, base)?;
        let u1 = data_source(&entries, "problem.u1", expr_dim, base)?;
        let phi0 = data_source(&entries, "problem.phi0", expr_dim, base)?;

        let beta_max = entries.number("problem.beta_max")?;
        if beta_max < 0.0 {
            return Err(entries.error(entries.given("problem.beta_max"), "`problem.beta_max` must be nonnegative"));
        }
        let beta = match entries.given("problem.beta") {
            Some(_) => entries.number("problem.beta")?,
            None => beta_max.min(1.0),
        };
        if !(0.0..=beta_max).contains(&beta) {
            return Err(entries.error(
                entries.given("problem.beta"),
                format!("`problem.beta` = {beta} lies outside [0, {beta_max}]"),
            ));
        }
        let initial_beta = entries.number("optimizer.initial_beta")?;
        if !(0.0..=beta_max).contains(&initial_beta) {
            return Err(entries.error(
                entries.given("optimizer.initial_beta"),
                format!("`optimizer.initial_beta` = {initial_beta} lies outside [0, {beta_max}]"),
            ));
        }

        let (joule, e) = entries.raw("solver.joule_form").expect("default");
        let joule_form = match joule {
            "weak" => JouleForm::Weak,
            "direct" => JouleForm::Direct,
            other => return Err(entries.error(e, format!("unknown Joule form `{other}` (expected weak or direct)"))),
        };
        let truncation = match entries.text("solver.truncation") {
            "auto" => None,
            _ => Some(entries.positive("solver.truncation")?),
        };
        let damping = entries.positive("solver.damping")?;
        if damping > 1.0 {
            return Err(entries.error(entries.given("solver.damping"), "`solver.damping` must lie in (0, 1]"));
        }
        let solver = SolverOptions {
            tol: entries.positive("solver.tol")?,
            damping,
            max_iter: entries.count("solver.max_iter")?.max(1),
            joule_form,
            truncation,
        };
        let (seed_text, e) = entries.raw("solver.seed").expect("default");
        let seed = seed_text
            .parse::<u64>()
            .map_err(|_| entries.error(e, format!("`solver.seed` expects an unsigned integer, found `{seed_text}`")))?;

        let (mode, e) = entries.raw("optimizer.mode").expect("default");
        let mode = match mode {
            "sweep" => OptimizerMode::Sweep,
            "projected_gradient" => OptimizerMode::ProjectedGradient,
            other => {
                return Err(entries.error(e, format!("unknown optimizer mode `{other}` (expected sweep or projected_gradient)")))
            }
        };
        let relaxation = entries.positive("optimizer.relaxation")?;
        if relaxation > 1.0 {
            return Err(entries.error(entries.given("optimizer.relaxation"), "`optimizer.relaxation` must lie in (0, 1]"));
        }
        let optimizer = OptimizerOptions {
            mode,
            relaxation,
            tol: entries.positive("optimizer.tol")?,
            max_outer: entries.count("optimizer.max_outer")?.max(1),
        };

        let eps = match entries.text("certificate.eps") {
            "auto" => EpsChoice::Auto,
            _ => EpsChoice::Fixed(entries.positive("certificate.eps")?),
        };
        let certificate = CertificateConfig {
            eps,
            c1: entries.positive("certificate.c1")?,
            allow_constant_model: entries.boolean("certificate.allow_constant_model")?,
        };

        let (formats, e) = entries.raw("output.formats").expect("default");
        let mut output = OutputConfig {
            dir: base.join(entries.text("output.dir")),
            vtk: false,
            csv: false,
        };
        for f in formats.split(',').map(str::trim) {
            match f {
                "vtk" => output.vtk = true,
                "csv" => output.csv = true,
                "none" | "" => {}
                other => return Err(entries.error(e, format!("unknown output format `{other}` (expected vtk, csv or none)"))),
            }
        }

        let mut echo = BTreeMap::new();
        for (key, _) in KEYS {
            if let Some((v, _)) = entries.raw(key) {
                echo.insert(key.to_string(), v.to_string());
            }
        }
        echo.insert("problem.beta".into(), beta.to_string());
        if matches!(geometry, Geometry::File(_)) {
            for key in ["problem.extents", "problem.divisions", "problem.dirichlet"] {
                echo.remove(key);
            }
        }
        if matches!(model, ConductivityModel::Constant { .. }) {
            echo.remove("problem.u_star");
            echo.remove("problem.exponent");
        }
        for key in ["problem.u0", "problem.u1", "problem.phi0"] {
            if entries.given(&format!("{key}_file")).is_some() {
                echo.remove(key);
            }
        }

        Ok(Self {
            problem: ProblemConfig {
                geometry,
                expected_dim,
                model,
                u0,
                u1,
                phi0,
                beta_max,
                beta,
            },
            solver,
            seed,
            optimizer,
            initial_beta,
            certificate,
            output,
            echo,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), &base)
    }
}
