//! The `wfp` command line: validate, conform, run, derive, weave, encapsulate, fmt.
//!
//! Exit codes: 0 success, 1 findings (violations, counterexamples, failed runs),
//! 2 usage or parse errors. Reports go to stdout, diagnostics to stderr.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::depflow::{check_acyclic, Acyclicity};
use crate::derivation::{check_chain, evaluate_claims, StepStatus};
use crate::dsl::{self, format_instance, format_metamodel, format_process_view, Diagnostic, Model};
use crate::exec::{combined, encapsulate, normalize_id, run, ExecutionState};
use crate::graph::ValidationReport;
use crate::metamodel::conforms;
use crate::process::{parse_verdicts, ApplyContext};
use crate::weaving::weave_all;

#[derive(Parser, Debug)]
#[command(name = "wfp", version, about = "Typed workflow models over .wfp files")]
struct Cli {
    /// Machine-readable report on stdout (and diagnostics on stderr).
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse and check every section; report flow strata.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Check instances against their metamodels.
    Conform {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Only this instance section.
        #[arg(long)]
        instance: Option<String>,
    },
    /// Execute a flow from its `init` products and print the merged result.
    Run {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        flow: Option<String>,
        /// Review verdicts, one `id = true|false` per line.
        #[arg(long)]
        verdicts: Option<PathBuf>,
        /// Insert idle processes so every product is consumed one stratum after it is written.
        #[arg(long)]
        normalize_id: bool,
    },
    /// Check derivation trees by bounded enumeration, or evaluate claims on an instance.
    Derive {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        bound: usize,
        #[arg(long)]
        derivation: Option<String>,
        /// Evaluate the claims on this instance instead.
        #[arg(long)]
        instance: Option<String>,
    },
    /// Weave advice into its main metamodel at every declared entry point.
    Weave {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        advice: Option<String>,
    },
    /// Package a flow as a single process.
    Encapsulate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        flow: Option<String>,
    },
    /// Print files in canonical form.
    Fmt {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Exit 1 if a file is not already canonical; print nothing else.
        #[arg(long)]
        check: bool,
        /// Rewrite files in place.
        #[arg(long, conflicts_with = "check")]
        write: bool,
    },
}

struct Out<'a> {
    json: bool,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

/// Exit status and failure reason of a verb.
type Status = Result<i32, Failure>;

enum Failure {
    Usage(String),
    Diagnostics(Vec<Diagnostic>),
}

impl Out<'_> {
    fn text(&mut self, s: &str) {
        let _ = self.stdout.write_all(s.as_bytes());
    }

    fn value(&mut self, v: Value) {
        let _ = writeln!(self.stdout, "{}", serde_json::to_string_pretty(&v).expect("json"));
    }

    fn fail(&mut self, f: Failure) -> i32 {
        match f {
            Failure::Usage(m) => {
                if self.json {
                    let _ = writeln!(self.stderr, "{}", json!({ "error": m }));
                } else {
                    let _ = writeln!(self.stderr, "error: {m}");
                }
            }
            Failure::Diagnostics(ds) => {
                if self.json {
                    let list: Vec<Value> = ds
                        .iter()
                        .map(|d| {
                            json!({"file": d.file, "line": d.line, "column": d.col, "message": d.message, "token": d.token})
                        })
                        .collect();
                    let _ = writeln!(self.stderr, "{}", json!({ "diagnostics": list }));
                } else {
                    for d in ds {
                        let _ = writeln!(self.stderr, "{d}");
                    }
                }
            }
        }
        2
    }
}

fn read_files(files: &[PathBuf]) -> Result<Vec<(String, String)>, Failure> {
    files
        .iter()
        .map(|p| {
            std::fs::read_to_string(p)
                .map(|t| (p.display().to_string(), t))
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))
        })
        .collect()
}

fn load(files: &[PathBuf]) -> Result<Model, Failure> {
    dsl::load(&read_files(files)?).map_err(Failure::Diagnostics)
}

fn pick<'a, T>(what: &str, map: &'a BTreeMap<String, T>, name: &Option<String>) -> Result<(&'a String, &'a T), Failure> {
    match name {
        Some(n) => map.get_key_value(n).ok_or_else(|| Failure::Usage(format!("no {what} named `{n}`"))),
        None => match map.len() {
            1 => Ok(map.iter().next().unwrap()),
            0 => Err(Failure::Usage(format!("no {what} section found"))),
            _ => Err(Failure::Usage(format!(
                "several {what} sections ({}); choose one with --{what}",
                map.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        },
    }
}

fn violations_json(r: &ValidationReport) -> Value {
    Value::Array(r.violations.iter().map(|v| json!({"element": v.element, "message": v.message})).collect())
}

fn violation_lines(r: &ValidationReport) -> String {
    r.violations.iter().map(|v| format!("violation\t{}\t{}\n", v.element, v.message)).collect()
}

fn lines_json(text: &str) -> Value {
    Value::Array(text.lines().map(|l| Value::String(l.to_string())).collect())
}

fn validate(o: &mut Out, files: &[PathBuf]) -> Status {
    let m = load(files)?;
    let mut text = String::new();
    let mut sections = Vec::new();
    let mut ok = true;
    for (n, mm) in &m.metamodels {
        text.push_str(&format!(
            "metamodel {n}: ok ({} nodes, {} edges, {} constraints)\n",
            mm.graph.node_count(),
            mm.graph.edge_count(),
            mm.constraints.len()
        ));
        sections.push(json!({"kind": "metamodel", "name": n, "status": "ok"}));
    }
    for (n, im) in &m.instances {
        let r = im.instance.check_typing();
        let status = if r.is_ok() { "ok" } else { "ill-typed" };
        ok &= r.is_ok();
        text.push_str(&format!("instance {n}: {status}\n"));
        text.push_str(&violation_lines(&r));
        sections.push(json!({"kind": "instance", "name": n, "status": status, "violations": violations_json(&r)}));
    }
    for n in m.processes.keys() {
        text.push_str(&format!("process {n}: ok\n"));
        sections.push(json!({"kind": "process", "name": n, "status": "ok"}));
    }
    for (n, f) in &m.flows {
        match &f.def {
            Err(r) => {
                ok = false;
                text.push_str(&format!("flow {n}: invalid\n"));
                text.push_str(&violation_lines(r));
                sections.push(json!({"kind": "flow", "name": n, "status": "invalid", "violations": violations_json(r)}));
            }
            Ok(def) => match check_acyclic(&def.flow) {
                Acyclicity::Strata(s) => {
                    let strata: Vec<Vec<&String>> = s.iter().map(|l| l.iter().collect()).collect();
                    let shown: Vec<String> = strata
                        .iter()
                        .map(|l| format!("{{{}}}", l.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",")))
                        .collect();
                    text.push_str(&format!("flow {n}: ok, strata {}\n", shown.join(" ")));
                    sections.push(json!({"kind": "flow", "name": n, "status": "ok", "strata": strata}));
                }
                Acyclicity::Cycle(c) => {
                    ok = false;
                    text.push_str(&format!("flow {n}: cyclic\ncycle\t{}\n", c.join(" -> ")));
                    sections.push(json!({"kind": "flow", "name": n, "status": "cyclic", "cycle": c}));
                }
            },
        }
    }
    for (n, a) in &m.advices {
        let main = &m.metamodels[&a.main];
        match weave_all(main, &a.advice, &a.points) {
            Ok(_) => {
                text.push_str(&format!("advice {n}: ok ({} entry points)\n", a.points.len()));
                sections.push(json!({"kind": "advice", "name": n, "status": "ok"}));
            }
            Err(e) => {
                ok = false;
                text.push_str(&format!("advice {n}: {e}\n"));
                sections.push(json!({"kind": "advice", "name": n, "status": "invalid", "message": e.to_string()}));
            }
        }
    }
    for (n, t) in &m.derivations {
        text.push_str(&format!("derivation {n}: ok ({} claims, {} steps)\n", t.claims.len(), t.steps.len()));
        sections.push(json!({"kind": "derivation", "name": n, "status": "ok"}));
    }
    if o.json {
        o.value(json!({"verb": "validate", "ok": ok, "sections": sections}));
    } else {
        o.text(&text);
    }
    Ok(if ok { 0 } else { 1 })
}

fn conform(o: &mut Out, files: &[PathBuf], only: &Option<String>) -> Status {
    let m = load(files)?;
    if let Some(n) = only {
        if !m.instances.contains_key(n) {
            return Err(Failure::Usage(format!("no instance named `{n}`")));
        }
    }
    let mut text = String::new();
    let mut reports = Vec::new();
    let mut all_ok = true;
    for (n, im) in m.instances.iter().filter(|(n, _)| only.as_ref().is_none_or(|o| o == *n)) {
        let r = conforms(&im.instance, &m.metamodels[&im.metamodel]);
        let ok = r.conforms();
        all_ok &= ok;
        let viol: Vec<(&str, &[String])> = r.violations().collect();
        text.push_str(&format!(
            "instance {n} : {}: {}\n",
            im.metamodel,
            if ok { "conforms".to_string() } else { format!("violates {} constraint(s)", viol.len()) }
        ));
        for v in &r.typing.violations {
            text.push_str(&format!("typing\t{}\t{}\n", v.element, v.message));
        }
        for (cid, w) in &viol {
            text.push_str(&format!("violation\t{cid}\t{}\n", w.join(",")));
        }
        reports.push(json!({
            "name": n,
            "metamodel": im.metamodel,
            "conforms": ok,
            "typing": violations_json(&r.typing),
            "violations": viol.iter().map(|(c, w)| json!({"constraint": c, "witnesses": w})).collect::<Vec<_>>(),
        }));
    }
    if o.json {
        o.value(json!({"verb": "conform", "conforms": all_ok, "instances": reports}));
    } else {
        o.text(&text);
    }
    Ok(if all_ok { 0 } else { 1 })
}

fn trace_json(state: &ExecutionState) -> Value {
    Value::Array(
        state
            .trace_log()
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                json!({"stratum": f[0].parse::<usize>().unwrap_or(0), "process": f[1], "sha256": f[2]})
            })
            .collect(),
    )
}

fn trace_text(state: &ExecutionState) -> String {
    state.trace_log().lines().map(|l| format!("# trace\t{l}\n")).collect()
}

fn run_verb(o: &mut Out, files: &[PathBuf], flow: &Option<String>, verdicts: &Option<PathBuf>, normalize: bool) -> Status {
    let m = load(files)?;
    let (name, f) = pick("flow", &m.flows, flow)?;
    let ctx = match verdicts {
        None => ApplyContext::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
            let v = parse_verdicts(&text).map_err(|(line, message)| {
                Failure::Diagnostics(vec![Diagnostic { file: p.display().to_string(), line, col: 1, message, token: String::new() }])
            })?;
            ApplyContext::with_verdicts(v)
        }
    };
    let def = match &f.def {
        Ok(d) => d.clone(),
        Err(r) => {
            if o.json {
                o.value(json!({"verb": "run", "flow": name, "ok": false, "trace": [], "instance": null,
                    "error": {"message": "invalid flow", "violations": violations_json(r), "witnesses": r.violations.iter().map(|v| &v.element).collect::<Vec<_>>()}}));
            } else {
                o.text(&format!("error\tinvalid flow `{name}`\n{}", violation_lines(r)));
            }
            return Ok(1);
        }
    };
    let def = if normalize {
        match normalize_id(&def) {
            Ok(d) => d,
            Err(e) => {
                o.text(&format!("error\t{e}\n"));
                return Ok(1);
            }
        }
    } else {
        def
    };
    let result = run(&def, &f.initial, &ctx).and_then(|state| match combined(&def, &state) {
        Ok(c) => Ok((state, c)),
        Err(error) => Err(Box::new(crate::exec::RunFailure { state, error })),
    });
    match result {
        Ok((state, inst)) => {
            let out_name = format!("{name}.run");
            let section = format_instance(&out_name, &f.metamodel, &inst);
            if o.json {
                o.value(json!({"verb": "run", "flow": name, "ok": true, "trace": trace_json(&state),
                    "instance": lines_json(&section), "error": null}));
            } else {
                o.text(&format!("{}{section}", trace_text(&state)));
            }
            Ok(0)
        }
        Err(failure) => {
            let e = &failure.error;
            let report = e.report().cloned().unwrap_or_default();
            if o.json {
                o.value(json!({"verb": "run", "flow": name, "ok": false, "trace": trace_json(&failure.state),
                    "instance": null,
                    "error": {"message": e.to_string(), "violations": violations_json(&report), "witnesses": e.witnesses()}}));
            } else {
                let mut t = trace_text(&failure.state);
                t.push_str(&format!("error\t{e}\n"));
                if let crate::exec::ExecError::Process(pe) = e {
                    t.push_str(&format!("cause\t{pe}\n"));
                }
                if report.is_ok() {
                    for w in e.witnesses() {
                        t.push_str(&format!("witness\t{w}\n"));
                    }
                } else {
                    t.push_str(&violation_lines(&report));
                }
                o.text(&t);
            }
            Ok(1)
        }
    }
}

fn derive(o: &mut Out, files: &[PathBuf], bound: usize, which: &Option<String>, instance: &Option<String>) -> Status {
    let m = load(files)?;
    if bound == 0 {
        return Err(Failure::Usage("--bound must be at least 1".into()));
    }
    let trees: Vec<(&String, _)> = match which {
        Some(_) => vec![pick("derivation", &m.derivations, which)?],
        None if m.derivations.is_empty() => return Err(Failure::Usage("no derivation section found".into())),
        None => m.derivations.iter().collect(),
    };
    if let Some(iname) = instance {
        let im = m.instances.get(iname).ok_or_else(|| Failure::Usage(format!("no instance named `{iname}`")))?;
        let mut text = String::new();
        let mut reports = Vec::new();
        let mut ok = true;
        for (n, t) in &trees {
            let vals = evaluate_claims(t, &im.instance);
            let top = vals.get(&t.top).copied().unwrap_or(false);
            ok &= top;
            text.push_str(&format!("# derivation {n} on {iname}\n"));
            for (c, v) in &vals {
                text.push_str(&format!("{c}\t{v}\n"));
            }
            reports.push(json!({"name": n, "top": t.top, "holds": top, "claims": vals}));
        }
        if o.json {
            o.value(json!({"verb": "derive", "instance": iname, "holds": ok, "derivations": reports}));
        } else {
            o.text(&text);
        }
        return Ok(if ok { 0 } else { 1 });
    }
    let mut text = String::new();
    let mut reports = Vec::new();
    let mut sound = true;
    for (n, t) in &trees {
        let r = check_chain(t, bound).map_err(|e| Failure::Usage(e.to_string()))?;
        sound &= r.is_sound();
        text.push_str(&format!("# derivation {n}, bound {bound}\n"));
        text.push_str(&r.render(t));
        for l in r.lines(t) {
            text.push_str(&format!("step\t{l}\n"));
        }
        let trans = match r.transitivity {
            Some(true) => "holds",
            Some(false) => "fails",
            None => "skipped",
        };
        text.push_str(&format!("transitivity\t{trans}\n"));
        let mut steps = Vec::new();
        for v in &r.verdicts {
            let s = &t.steps[v.index];
            let mut j = json!({"index": v.index, "claim": v.conclusion, "kind": s.kind.as_str(),
                "status": v.status.label(), "premises": s.premises});
            match &v.status {
                StepStatus::Counterexample { instance, violated } => {
                    let section = format_instance(&format!("{}.counterexample", v.conclusion), &m_name(&m, t), instance);
                    text.push_str(&format!("counterexample\t{}\tviolates {violated}\n{section}", v.conclusion));
                    j["violated"] = json!(violated);
                    j["counterexample"] = lines_json(&section);
                }
                StepStatus::Assumed(note) => j["note"] = json!(note),
                StepStatus::Sound => {}
            }
            steps.push(j);
        }
        reports.push(json!({"name": n, "top": t.top, "sound": r.is_sound(), "transitivity": trans,
            "given": r.given.iter().map(|(c, k)| json!({"claim": c, "constraint": k})).collect::<Vec<_>>(),
            "steps": steps}));
    }
    if o.json {
        o.value(json!({"verb": "derive", "bound": bound, "sound": sound, "derivations": reports}));
    } else {
        o.text(&text);
    }
    Ok(if sound { 0 } else { 1 })
}

/// Name of the metamodel section a derivation tree was built over.
fn m_name(m: &Model, t: &crate::derivation::DerivationTree) -> String {
    m.metamodels.iter().find(|(_, mm)| **mm == t.metamodel).map(|(n, _)| n.clone()).unwrap_or_else(|| "MM".into())
}

fn weave(o: &mut Out, files: &[PathBuf], which: &Option<String>) -> Status {
    let m = load(files)?;
    let chosen: Vec<(&String, _)> = match which {
        Some(_) => vec![pick("advice", &m.advices, which)?],
        None if m.advices.is_empty() => return Err(Failure::Usage("no advice section found".into())),
        None => m.advices.iter().collect(),
    };
    let mut text = String::new();
    let mut woven = Vec::new();
    let mut code = 0;
    for (n, a) in chosen {
        match weave_all(&m.metamodels[&a.main], &a.advice, &a.points) {
            Ok((w, _)) => {
                let name = format!("{}.{n}", a.main);
                let section = format_metamodel(&name, &w);
                woven.push(json!({"advice": n, "main": a.main, "name": name, "nodes": w.graph.node_count(),
                    "edges": w.graph.edge_count(), "text": lines_json(&section)}));
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(&section);
            }
            Err(e) => {
                code = 1;
                woven.push(json!({"advice": n, "main": a.main, "error": e.to_string()}));
                text.push_str(&format!("error\t{n}\t{e}\n"));
            }
        }
    }
    if o.json {
        o.value(json!({"verb": "weave", "woven": woven}));
    } else {
        o.text(&text);
    }
    Ok(code)
}

fn encapsulate_verb(o: &mut Out, files: &[PathBuf], flow: &Option<String>) -> Status {
    let m = load(files)?;
    let (name, f) = pick("flow", &m.flows, flow)?;
    let def = match &f.def {
        Ok(d) => d,
        Err(r) => {
            o.text(&format!("error\tinvalid flow `{name}`\n{}", violation_lines(r)));
            return Ok(1);
        }
    };
    match encapsulate(def) {
        Ok(s) => {
            let inner_name = format!("{name}.inner");
            let text = format!(
                "{}\n{}",
                format_metamodel(&inner_name, &s.inner),
                format_process_view(name, &inner_name, &s)
            );
            if o.json {
                o.value(json!({"verb": "encapsulate", "flow": name,
                    "inputs": s.inputs.iter().map(|p| &p.port).collect::<Vec<_>>(),
                    "output": s.output.port,
                    "inner": {"nodes": s.inner.graph.node_count(), "edges": s.inner.graph.edge_count(),
                              "constraints": s.inner.constraints.len()},
                    "text": lines_json(&text)}));
            } else {
                o.text(&text);
            }
            Ok(0)
        }
        Err(e) => {
            o.text(&format!("error\t{e}\n"));
            for w in e.witnesses() {
                o.text(&format!("witness\t{w}\n"));
            }
            Ok(1)
        }
    }
}

fn fmt_verb(o: &mut Out, files: &[PathBuf], check: bool, write: bool) -> Status {
    let inputs = read_files(files)?;
    let mut diags = Vec::new();
    let mut results = Vec::new();
    for (name, text) in &inputs {
        match dsl::parse(text, name) {
            Ok(d) => {
                let canon = dsl::serialize(&d);
                results.push((name.clone(), canon.as_str() == text.as_str(), canon));
            }
            Err(mut d) => diags.append(&mut d),
        }
    }
    if !diags.is_empty() {
        return Err(Failure::Diagnostics(diags));
    }
    if write {
        for (name, same, canon) in &results {
            if !same {
                std::fs::write(name, canon).map_err(|e| Failure::Usage(format!("cannot write {name}: {e}")))?;
            }
        }
    }
    let all_canonical = results.iter().all(|(_, same, _)| *same);
    if o.json {
        let list: Vec<Value> = results
            .iter()
            .map(|(f, same, canon)| json!({"file": f, "canonical": same, "text": canon}))
            .collect();
        o.value(json!({"verb": "fmt", "files": list}));
    } else if check {
        for (f, same, _) in &results {
            if !same {
                o.text(&format!("not canonical\t{f}\n"));
            }
        }
    } else if !write {
        let texts: Vec<&str> = results.iter().map(|(_, _, c)| c.as_str()).collect();
        o.text(&texts.join("\n"));
    }
    Ok(if check && !all_canonical { 1 } else { 0 })
}

/// Runs the command line `args` (including the program name) and returns the exit code.
pub fn main_with(args: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    2
                }
            };
        }
    };
    let mut o = Out { json: cli.json, stdout, stderr };
    let status = match &cli.cmd {
        Cmd::Validate { files } => validate(&mut o, files),
        Cmd::Conform { files, instance } => conform(&mut o, files, instance),
        Cmd::Run { files, flow, verdicts, normalize_id } => run_verb(&mut o, files, flow, verdicts, *normalize_id),
        Cmd::Derive { files, bound, derivation, instance } => derive(&mut o, files, *bound, derivation, instance),
        Cmd::Weave { files, advice } => weave(&mut o, files, advice),
        Cmd::Encapsulate { files, flow } => encapsulate_verb(&mut o, files, flow),
        Cmd::Fmt { files, check, write } => fmt_verb(&mut o, files, *check, *write),
    };
    match status {
        Ok(code) => code,
        Err(f) => o.fail(f),
    }
}

/// Loads files for callers that want the model without a verb.
pub fn load_model(files: &[PathBuf]) -> Result<Model, Vec<Diagnostic>> {
    match load(files) {
        Ok(m) => Ok(m),
        Err(Failure::Diagnostics(d)) => Err(d),
        Err(Failure::Usage(m)) => Err(vec![Diagnostic { file: String::new(), line: 0, col: 0, message: m, token: String::new() }]),
    }
}

