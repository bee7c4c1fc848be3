//! Configuration files, field snapshots (CSV and VTK) and the strategy report.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::driver::{cell_centers, RunConfig, Simulation, StrategyRow};
use crate::error::{Error, Result};
use crate::forest::Quadrant;
use crate::geometry::BlockMapping;
use crate::patch::leaf_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Vtk,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Coarse steps between snapshots; 0 writes only the final state.
    pub interval: usize,
    pub format: OutputFormat,
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            interval: 0,
            format: OutputFormat::Csv,
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Where the strategy report goes; `<output.dir>/strategies.tsv` if unset.
    pub path: Option<PathBuf>,
}

/// An experiment manifest: the run parameters at the top level plus the
/// `output` and `report` tables and a `seed`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub run: RunConfig,
    pub output: OutputConfig,
    pub report: ReportConfig,
    /// Seed for randomized checks; runs themselves are deterministic.
    pub seed: u64,
}

fn config_error(origin: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{origin}: {e}"))
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| config_error(origin, e))?;
        let mut take = |key: &str| table.remove(key);
        let output = match take("output") {
            Some(v) => v.try_into().map_err(|e| config_error(origin, e))?,
            None => OutputConfig::default(),
        };
        let report = match take("report") {
            Some(v) => v.try_into().map_err(|e| config_error(origin, e))?,
            None => ReportConfig::default(),
        };
        let seed = match take("seed") {
            Some(v) => v.try_into().map_err(|e| config_error(origin, e))?,
            None => 0,
        };
        let run: RunConfig = toml::Value::Table(table).try_into().map_err(|e| config_error(origin, e))?;
        Ok(ConfigFile { run, output, report, seed })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(&self.run).expect("run config serializes");
        table.insert("seed".into(), toml::Value::Integer(self.seed as i64));
        table.insert("output".into(), toml::Value::try_from(&self.output).expect("output serializes"));
        table.insert("report".into(), toml::Value::try_from(&self.report).expect("report serializes"));
        toml::to_string(&table).expect("table serializes")
    }

    /// The strategy report destination.
    pub fn report_path(&self) -> PathBuf {
        self.report.path.clone().unwrap_or_else(|| self.output.dir.join("strategies.tsv"))
    }
}

/// One leaf's cell values.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafRecord {
    pub leaf: Quadrant,
    /// Owning rank; not stored in files, so `None` after a reload.
    pub rank: Option<usize>,
    /// Interior values, row-major.
    pub values: Vec<f64>,
}

/// The full field at one time, leaves in space-filling-curve order.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSnapshot {
    pub time: f64,
    pub m: usize,
    pub mapping: BlockMapping,
    pub leaves: Vec<LeafRecord>,
}

fn mapping_name(m: &BlockMapping) -> &'static str {
    match m {
        BlockMapping::IdentityUnitSquare => "identity_unit_square",
        BlockMapping::TwoTreeHemisphere => "two_tree_hemisphere",
    }
}

fn parse_mapping(s: &str) -> Option<BlockMapping> {
    match s {
        "identity_unit_square" => Some(BlockMapping::IdentityUnitSquare),
        "two_tree_hemisphere" => Some(BlockMapping::TwoTreeHemisphere),
        _ => None,
    }
}

/// 17 significant digits, so every value survives a text round trip.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

const CSV_HEADER: &str = "tree,level,i,j,xi,eta,x_phys,y_phys,z_phys,q";

impl FieldSnapshot {
    pub fn capture(sim: &Simulation) -> Self {
        FieldSnapshot {
            time: sim.time(),
            m: sim.config().m,
            mapping: *sim.mapping(),
            leaves: sim
                .patches()
                .map(|(rank, p)| LeafRecord {
                    leaf: p.leaf(),
                    rank: Some(rank),
                    values: p.interior_values(),
                })
                .collect(),
        }
    }

    pub fn total_cells(&self) -> usize {
        self.leaves.len() * self.m * self.m
    }

    /// One row per cell. `i` and `j` count cells across the whole block at the
    /// leaf's level.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "# time={} m={} mapping={}", num(self.time), self.m, mapping_name(&self.mapping))?;
        writeln!(w, "{CSV_HEADER}")?;
        let mut line = String::new();
        for rec in &self.leaves {
            let (lx, ly) = rec.leaf.level_coords();
            let block = rec.leaf.tree as usize;
            for (i, j, xi, eta) in cell_centers(&rec.leaf, self.m) {
                let p = self.mapping.map(block, xi, eta);
                line.clear();
                let _ = write!(
                    line,
                    "{},{},{},{},{},{},{},{},{},{}",
                    rec.leaf.tree,
                    rec.leaf.level,
                    lx as usize * self.m + i,
                    ly as usize * self.m + j,
                    num(xi),
                    num(eta),
                    num(p[0]),
                    num(p[1]),
                    num(p[2]),
                    num(rec.values[j * self.m + i])
                );
                writeln!(w, "{line}")?;
            }
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let bad = |msg: String| Error::Snapshot(msg);
        let mut lines = BufReader::new(r).lines();
        let mut next = || -> Result<Option<String>> {
            lines.next().transpose().map_err(|e| Error::Snapshot(e.to_string()))
        };
        let pre = next()?.ok_or_else(|| bad("empty file".into()))?;
        let mut time = None;
        let mut m = None;
        let mut mapping = None;
        for kv in pre.trim_start_matches('#').split_whitespace() {
            match kv.split_once('=') {
                Some(("time", v)) => time = v.parse::<f64>().ok(),
                Some(("m", v)) => m = v.parse::<usize>().ok(),
                Some(("mapping", v)) => mapping = parse_mapping(v),
                _ => return Err(bad(format!("unexpected preamble entry {kv:?}"))),
            }
        }
        let (Some(time), Some(m), Some(mapping)) = (time, m, mapping) else {
            return Err(bad(format!("incomplete preamble {pre:?}")));
        };
        if m == 0 {
            return Err(bad("m must be positive".into()));
        }
        if next()?.as_deref() != Some(CSV_HEADER) {
            return Err(bad("missing column header".into()));
        }
        let mut leaves: Vec<LeafRecord> = Vec::new();
        let mut row = 0usize;
        while let Some(l) = next()? {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 10 {
                return Err(bad(format!("row {row}: expected 10 fields")));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("row {row}: {e}")));
            let (tree, level, i, j) = (int(f[0])?, int(f[1])?, int(f[2])?, int(f[3])?);
            let q: f64 = f[9].parse().map_err(|e| bad(format!("row {row}: {e}")))?;
            let mu = m as u64;
            if level > crate::forest::MAX_LEVEL as u64 || (i / mu) >> level != 0 || (j / mu) >> level != 0 {
                return Err(bad(format!("row {row}: cell outside its tree")));
            }
            let leaf = Quadrant::from_level_coords(tree as u32, level as u8, (i / mu) as u32, (j / mu) as u32);
            let k = (row) % (m * m);
            if k == 0 {
                leaves.push(LeafRecord {
                    leaf,
                    rank: None,
                    values: Vec::with_capacity(m * m),
                });
            }
            let rec = leaves.last_mut().expect("pushed above");
            let expect = ((k % m) as u64, (k / m) as u64);
            if rec.leaf != leaf || (i % mu, j % mu) != expect {
                return Err(bad(format!("row {row}: cells are not grouped by leaf in row-major order")));
            }
            rec.values.push(q);
            row += 1;
        }
        if !row.is_multiple_of(m * m) {
            return Err(bad("last leaf is incomplete".into()));
        }
        Ok(FieldSnapshot { time, m, mapping, leaves })
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }

    /// One rectilinear `.vtr` piece per leaf in `<stem>/`, plus `<stem>.vtm`
    /// listing them. Coordinates are reference coordinates, with block `b`
    /// shifted by `1.25 b` along x so blocks do not overlap.
    pub fn write_vtk(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let piece_dir = dir.join(stem);
        fs::create_dir_all(&piece_dir).map_err(|e| Error::io(&piece_dir, e))?;
        let m = self.m;
        let mut index = String::new();
        index.push_str("<?xml version=\"1.0\"?>\n<VTKFile type=\"vtkMultiBlockDataSet\" version=\"1.0\" byte_order=\"LittleEndian\">\n  <vtkMultiBlockDataSet>\n");
        for (k, rec) in self.leaves.iter().enumerate() {
            let name = format!("patch_{k:06}.vtr");
            let (o, s) = leaf_extent(&rec.leaf);
            let shift = 1.25 * rec.leaf.tree as f64;
            let coords = |start: f64| -> String {
                (0..=m)
                    .map(|i| num(start + s * i as f64 / m as f64))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let values = rec.values.iter().map(|&v| num(v)).collect::<Vec<_>>().join(" ");
            let body = format!(
                "<?xml version=\"1.0\"?>\n\
<VTKFile type=\"RectilinearGrid\" version=\"1.0\" byte_order=\"LittleEndian\">\n\
  <RectilinearGrid WholeExtent=\"0 {m} 0 {m} 0 0\">\n\
    <FieldData>\n\
      <DataArray type=\"Float64\" Name=\"TIME\" NumberOfTuples=\"1\" format=\"ascii\">{time}</DataArray>\n\
    </FieldData>\n\
    <Piece Extent=\"0 {m} 0 {m} 0 0\">\n\
      <CellData Scalars=\"q\">\n\
        <DataArray type=\"Float64\" Name=\"q\" format=\"ascii\">{values}</DataArray>\n\
        <DataArray type=\"Int32\" Name=\"level\" format=\"ascii\">{levels}</DataArray>\n\
      </CellData>\n\
      <Coordinates>\n\
        <DataArray type=\"Float64\" Name=\"x\" format=\"ascii\">{xs}</DataArray>\n\
        <DataArray type=\"Float64\" Name=\"y\" format=\"ascii\">{ys}</DataArray>\n\
        <DataArray type=\"Float64\" Name=\"z\" format=\"ascii\">0</DataArray>\n\
      </Coordinates>\n\
    </Piece>\n\
  </RectilinearGrid>\n\
</VTKFile>\n",
                time = num(self.time),
                levels = vec![rec.leaf.level.to_string(); m * m].join(" "),
                xs = coords(o[0] + shift),
                ys = coords(o[1]),
            );
            let path = piece_dir.join(&name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            let _ = writeln!(index, "    <DataSet index=\"{k}\" file=\"{stem}/{name}\"/>");
        }
        index.push_str("  </vtkMultiBlockDataSet>\n</VTKFile>\n");
        let path = dir.join(format!("{stem}.vtm"));
        fs::write(&path, index).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub const REPORT_HEADER: &str = "mesh\tremesh\tpartition\ttime step\tcell_updates\texchanges\tseconds";

pub fn write_strategy_report<W: Write>(rows: &[StrategyRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
            r.mesh, r.remesh, r.partition, r.time_step, r.cell_updates, r.exchanges, r.seconds
        )?;
    }
    Ok(())
}

pub fn write_strategy_report_file(rows: &[StrategyRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(Error::Config("a strategy report needs at least one row".into()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_strategy_report(rows, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::Simulation;

    #[test]
    fn defaults_round_trip() {
        let c = ConfigFile::default();
        let text = c.to_toml();
        assert_eq!(ConfigFile::parse(&text, "mem").unwrap(), c);
    }

    #[test]
    fn keys_parse_and_unknown_keys_fail() {
        let text = r#"
            example = "sphere"
            m = 6
            min_level = 1
            max_level = 2
            P = 4
            seed = 7
            [output]
            format = "vtk"
            [sphere]
            initial = "bump"
        "#;
        let c = ConfigFile::parse(text, "mem").unwrap();
        assert_eq!(c.run.ranks, 4);
        assert_eq!(c.run.m, 6);
        assert_eq!(c.seed, 7);
        assert_eq!(c.output.format, OutputFormat::Vtk);
        assert_eq!(ConfigFile::parse(&c.to_toml(), "mem").unwrap(), c);
        for bad in ["colour = 1", "[output]\nspeed = 2", "[solver]\nlimiter = \"superbee\"", "m = \"eight\""] {
            assert!(matches!(ConfigFile::parse(bad, "mem"), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = ConfigFile::load("/nonexistent/run.toml").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.toml"));
    }

    fn small() -> Simulation {
        let cfg = RunConfig {
            min_level: 1,
            max_level: 2,
            m: 4,
            max_steps: Some(2),
            ..RunConfig::default()
        };
        let mut sim = Simulation::new(cfg).unwrap();
        sim.run(|_| Ok(())).unwrap();
        sim
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let snap = FieldSnapshot::capture(&small());
        let text = snap.to_csv_string();
        let back = FieldSnapshot::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.to_csv_string(), text);
        assert_eq!(back.leaves.len(), snap.leaves.len());
        for (a, b) in back.leaves.iter().zip(&snap.leaves) {
            assert_eq!(a.leaf, b.leaf);
            assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(text.lines().count(), 2 + snap.total_cells());
    }

    #[test]
    fn constant_field_has_equal_q() {
        let mut snap = FieldSnapshot::capture(&small());
        for r in &mut snap.leaves {
            r.values.iter_mut().for_each(|v| *v = 0.5);
        }
        let text = snap.to_csv_string();
        let qs: std::collections::BTreeSet<&str> = text.lines().skip(2).map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(qs.len(), 1);
    }

    #[test]
    fn malformed_csv_rejected() {
        let good = FieldSnapshot::capture(&small()).to_csv_string();
        let truncated: String = good.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(FieldSnapshot::read_csv(truncated.as_bytes()), Err(Error::Snapshot(_))));
        assert!(FieldSnapshot::read_csv("".as_bytes()).is_err());
    }

    #[test]
    fn vtk_collection_lists_every_patch() {
        let snap = FieldSnapshot::capture(&small());
        let dir = tempfile::tempdir().unwrap();
        let index = snap.write_vtk(dir.path(), "snap").unwrap();
        let text = fs::read_to_string(index).unwrap();
        assert_eq!(text.matches("<DataSet").count(), snap.leaves.len());
        let piece = fs::read_to_string(dir.path().join("snap/patch_000000.vtr")).unwrap();
        assert!(piece.contains("WholeExtent=\"0 4 0 4 0 0\""));
    }

    #[test]
    fn report_has_table_columns() {
        let row = StrategyRow {
            mesh: "uniform".into(),
            remesh: "none".into(),
            partition: "by count".into(),
            time_step: "global".into(),
            cell_updates: 10,
            exchanges: 2,
            seconds: 0.5,
            stats: Default::default(),
        };
        let mut buf = Vec::new();
        write_strategy_report(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{REPORT_HEADER}\nuniform\tnone\tby count\tglobal\t10\t2\t0.500\n"));
    }
}
