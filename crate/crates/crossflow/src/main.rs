use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crossflow::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crossflow::error::{Error, Result};
use crossflow::graphfile::write_graph;
use crossflow::hexfile::{contract_id, read_hex};
use crossflow::manifest::Ingested;
use crossflow::pipeline::{featurize, train_detector};
use crossflow::{emit_report, ingest, scan, Detector, PipelineConfig, ReportFormat};
use crossflow_core::cfg::ContractCfg;
use crossflow_core::isa::decode_bytecode;
use crossflow_core::link::{link_with, LinkOptions, LinkedCfg};
use crossflow_core::paths::{entries_for_protocol, enumerate_paths_with, DataPath};
use crossflow_core::symstack::validate_path;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "crossflow", version, about = "Cross-contract data-path analysis of EVM bytecode")]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the disassembly listing of a hex file.
    Disasm { hex: PathBuf },
    /// Print the control-flow graph of a hex file as JSON.
    Cfg { hex: PathBuf },
    /// Link every `.hex` file of a directory and print the linked graph as JSON.
    Link { dir: PathBuf },
    /// Enumerate data paths of a linked graph as JSON lines.
    Paths { linked: PathBuf },
    /// Annotate JSON-lines paths with their feasibility.
    Validate { paths: PathBuf },
    /// Build the path/opcode graph from JSON-lines paths, skipping infeasible ones.
    Featurize {
        paths: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train one detector on a labeled manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        detector: Detector,
        /// Checkpoint to write; defaults to the configured path for the detector.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Per-epoch metrics as JSON lines; defaults to `<out>.metrics.jsonl`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Scan every protocol of a manifest, writing one report per protocol and an index.
    Scan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// `DETECTOR=PATH`, overriding the configured checkpoints.
        #[arg(long = "checkpoint", value_parser = parse_checkpoint_arg)]
        checkpoints: Vec<(Detector, PathBuf)>,
        /// Also write a text summary next to each JSON report.
        #[arg(long)]
        text: bool,
    },
}

fn parse_checkpoint_arg(s: &str) -> Result<(Detector, PathBuf), String> {
    let (d, p) = s.split_once('=').ok_or("expected DETECTOR=PATH")?;
    Ok((d.parse()?, PathBuf::from(p)))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::input(path, e.to_string()))
}

fn write_json(out: &mut impl Write, v: &impl Serialize) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *out, v)?;
    writeln!(out)
}

/// JSON lines of `path` with their 1-based line numbers, blank lines skipped.
fn json_lines(path: &Path) -> Result<Vec<(usize, Value)>> {
    let f = std::fs::File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::input(path, format!("line {}: {e}", i + 1)))?;
        out.push((i + 1, v));
    }
    Ok(out)
}

fn data_path(path: &Path, line: usize, v: &Value) -> Result<DataPath> {
    serde_json::from_value(v.clone()).map_err(|e| Error::input(path, format!("line {line}: {e}")))
}

#[derive(Serialize)]
struct CfgDump<'a> {
    contract_id: &'a str,
    blocks: Vec<Value>,
    functions: Vec<Value>,
    unresolved_jump_pcs: Vec<usize>,
}

fn cfg_dump(cfg: &ContractCfg) -> CfgDump<'_> {
    let blocks = cfg
        .blocks
        .iter()
        .map(|b| {
            let edges: Vec<Value> = b
                .successors
                .iter()
                .map(|e| json!({ "kind": e.kind, "target": e.target, "target_pc": cfg.blocks[e.target].start_pc }))
                .collect();
            json!({ "id": b.id, "start_pc": b.start_pc, "end_pc": b.end_pc, "edges": edges })
        })
        .collect();
    let functions = cfg
        .functions
        .iter()
        .map(|f| {
            json!({
                "selector": f.selector,
                "entry_block": f.entry_block,
                "member_blocks": f.member_blocks,
                "fallback": f.is_fallback,
            })
        })
        .collect();
    let unresolved_jump_pcs = cfg.unresolved_jumps.iter().map(|&b| cfg.last_instruction(b).pc).collect();
    CfgDump { contract_id: &cfg.contract_id, blocks, functions, unresolved_jump_pcs }
}

fn load_dir(dir: &Path) -> Result<Vec<ContractCfg>> {
    let rd = std::fs::read_dir(dir).map_err(Error::io(dir))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for e in rd {
        let p = e.map_err(Error::io(dir))?.path();
        if p.extension().is_some_and(|x| x == "hex") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::input(dir, "no .hex files"));
    }
    files.iter().map(|f| Ok(ContractCfg::build(contract_id(f), &read_hex(f)?))).collect()
}

fn print_entry_errors(ing: &Ingested) {
    for e in &ing.errors {
        let id = e.protocol_id.as_deref().map(|s| format!(" ({s})")).unwrap_or_default();
        eprintln!("warning: manifest line {}{id}: {}", e.line, e.message);
    }
}

fn file_stem_for(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

fn stdout_err(e: io::Error) -> Error {
    Error::io("<stdout>")(e)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match cli.command {
        Command::Disasm { hex } => {
            for ins in decode_bytecode(&read_hex(&hex)?) {
                writeln!(out, "{ins}").map_err(stdout_err)?;
            }
        }
        Command::Cfg { hex } => {
            let cfg = ContractCfg::build(contract_id(&hex), &read_hex(&hex)?);
            write_json(&mut out, &cfg_dump(&cfg)).map_err(stdout_err)?;
        }
        Command::Link { dir } => {
            let linked = link_with(load_dir(&dir)?, LinkOptions { enabled: !config.no_link });
            write_json(&mut out, &linked).map_err(stdout_err)?;
        }
        Command::Paths { linked } => {
            let linked: LinkedCfg = read_json(&linked)?;
            for entry in entries_for_protocol(&linked) {
                for p in enumerate_paths_with(&linked, entry, config.path_options()) {
                    let mut v = serde_json::to_value(&p).expect("path serializes");
                    let mnemonics: Vec<&str> = p.mnemonics().collect();
                    v["mnemonics"] = json!(mnemonics);
                    serde_json::to_writer(&mut out, &v).map_err(|e| Error::Data(e.to_string()))?;
                    writeln!(out).map_err(stdout_err)?;
                }
            }
        }
        Command::Validate { paths } => {
            for (line, mut v) in json_lines(&paths)? {
                let verdict = validate_path(&data_path(&paths, line, &v)?);
                v["feasible"] = json!(verdict.feasible);
                v["reason"] = json!(verdict.reason);
                serde_json::to_writer(&mut out, &v).map_err(|e| Error::Data(e.to_string()))?;
                writeln!(out).map_err(stdout_err)?;
            }
        }
        Command::Featurize { paths, out: file } => {
            let mut kept = Vec::new();
            for (line, v) in json_lines(&paths)? {
                if v.get("feasible") != Some(&Value::Bool(false)) {
                    kept.push(data_path(&paths, line, &v)?);
                }
            }
            let refs: Vec<&DataPath> = kept.iter().collect();
            let g = featurize(&refs, &config);
            write_graph(&file, &g, config.idf)?;
            writeln!(out, "{} path nodes, {} opcode nodes -> {}", g.n_path, g.n_opcode, file.display()).map_err(stdout_err)?;
        }
        Command::Train { manifest, detector, out: file, metrics } => {
            let ing = ingest(&manifest)?;
            print_entry_errors(&ing);
            ing.require_labels()?;
            let file = file
                .or_else(|| config.checkpoints.get(&detector).cloned())
                .unwrap_or_else(|| PathBuf::from(format!("{detector}.ckpt")));
            let (ckpt, report) = train_detector(&ing.entries, detector, &config)?;
            write_checkpoint(&file, &ckpt)?;
            let metrics = metrics.unwrap_or_else(|| {
                let mut s = file.clone().into_os_string();
                s.push(".metrics.jsonl");
                PathBuf::from(s)
            });
            let mut lines = String::new();
            for m in &report.history {
                lines += &serde_json::to_string(m).expect("metrics serialize");
                lines.push('\n');
            }
            std::fs::write(&metrics, lines).map_err(Error::io(&metrics))?;
            let mut summary = serde_json::to_value(&report).expect("report serializes");
            summary.as_object_mut().unwrap().remove("history");
            summary["epochs"] = json!(report.history.len());
            summary["final"] = json!(report.history.last());
            summary["checkpoint"] = json!(file);
            write_json(&mut out, &summary).map_err(stdout_err)?;
        }
        Command::Scan { manifest, out: dir, checkpoints, text } => {
            let mut paths = config.checkpoints.clone();
            paths.extend(checkpoints);
            if paths.is_empty() {
                return Err(Error::Data("no detector checkpoints configured".into()));
            }
            let detectors = paths.values().map(|p| read_checkpoint(p)).collect::<Result<Vec<Checkpoint>>>()?;
            let ing = ingest(&manifest)?;
            print_entry_errors(&ing);
            std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
            let mut index = Vec::new();
            for entry in &ing.entries {
                let report = scan(entry, &config, &detectors)?;
                let stem = file_stem_for(&entry.protocol_id);
                let json_file = dir.join(format!("{stem}.json"));
                std::fs::write(&json_file, emit_report(&report, ReportFormat::Json)).map_err(Error::io(&json_file))?;
                if text {
                    let txt = dir.join(format!("{stem}.txt"));
                    std::fs::write(&txt, emit_report(&report, ReportFormat::Text)).map_err(Error::io(&txt))?;
                }
                writeln!(out, "{}: {}", entry.protocol_id, serde_json::to_string(&report.verdicts).unwrap())
                    .map_err(stdout_err)?;
                index.push(json!({ "protocol_id": entry.protocol_id, "report": format!("{stem}.json"), "verdicts": report.verdicts }));
            }
            let index = json!({ "protocols": index, "manifest_errors": ing.errors });
            let index_file = dir.join("index.json");
            let mut bytes = serde_json::to_vec_pretty(&index).unwrap();
            bytes.push(b'\n');
            std::fs::write(&index_file, bytes).map_err(Error::io(&index_file))?;
        }
    }
    out.flush().map_err(stdout_err)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed downstream pipe (`| head`) is not a failure
        Err(Error::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
