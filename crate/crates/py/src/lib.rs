use pyo3::exceptions::{PyIOError, PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

use patchforest::driver::{run_strategy, strategy_matrix, StrategyRow};
use patchforest::forest::{BlockConnectivity, Forest as CoreForest, Partition, Quadrant};
use patchforest::io::{write_strategy_report, ConfigFile, FieldSnapshot};
use patchforest::patch::{average_new_coarse, interpolate_new_fine, Patch};
use patchforest::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Snapshot(_) | Error::Connectivity(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_toml(obj: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if obj.is_instance_of::<PyBool>() {
        Ok(toml::Value::Boolean(obj.extract()?))
    } else if obj.is_instance_of::<PyInt>() {
        Ok(toml::Value::Integer(obj.extract()?))
    } else if obj.is_instance_of::<PyFloat>() {
        Ok(toml::Value::Float(obj.extract()?))
    } else if obj.is_instance_of::<PyString>() {
        Ok(toml::Value::String(obj.extract()?))
    } else if let Ok(d) = obj.extract::<Bound<'_, PyDict>>() {
        let mut t = toml::Table::new();
        for (k, v) in d.iter() {
            t.insert(k.extract()?, to_toml(&v)?);
        }
        Ok(toml::Value::Table(t))
    } else if let Ok(items) = obj.extract::<Vec<Bound<'_, PyAny>>>() {
        Ok(toml::Value::Array(items.iter().map(to_toml).collect::<PyResult<_>>()?))
    } else {
        Err(PyTypeError::new_err(format!("unsupported config value {obj}")))
    }
}

/// TOML text with `overrides` merged on top (nested dicts merge into tables).
fn build_config(text: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<ConfigFile> {
    let mut table: toml::Table = match text {
        Some(t) => t.parse().map_err(|e| PyValueError::new_err(format!("<config>: {e}")))?,
        None => toml::Table::new(),
    };
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            match (table.get_mut(&key), to_toml(&v)?) {
                (Some(toml::Value::Table(existing)), toml::Value::Table(new)) => existing.extend(new),
                (_, value) => {
                    table.insert(key, value);
                }
            }
        }
    }
    let cfg = ConfigFile::parse(&toml::to_string(&table).expect("table serializes"), "<config>").map_err(py_err)?;
    cfg.run.validate().map_err(py_err)?;
    Ok(cfg)
}

fn stats_dict<'py>(py: Python<'py>, row: &StrategyRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let s = &row.stats;
    d.set_item("mesh", &row.mesh)?;
    d.set_item("remesh", &row.remesh)?;
    d.set_item("partition", &row.partition)?;
    d.set_item("time_step", &row.time_step)?;
    d.set_item("seconds", row.seconds)?;
    d.set_item("coarse_steps", s.coarse_steps)?;
    d.set_item("cell_updates", s.cell_updates)?;
    d.set_item("exchanges", s.exchanges)?;
    d.set_item("level_steps", s.level_steps.clone())?;
    d.set_item("max_cfl", s.max_cfl)?;
    d.set_item("regrids", s.regrids)?;
    d.set_item("tagged_patches", s.tagged_patches)?;
    d.set_item("refined", s.refined)?;
    d.set_item("coarsened", s.coarsened)?;
    d.set_item("migrations", s.migrations)?;
    d.set_item("ghost_messages", s.ghost_messages)?;
    d.set_item("ghost_bytes", s.ghost_bytes)?;
    Ok(d)
}

type LeafTuple = (u32, u8, u32, u32);

fn leaf_tuple(q: &Quadrant) -> LeafTuple {
    let (x, y) = q.level_coords();
    (q.tree, q.level, x, y)
}

fn leaf_from(forest: &CoreForest, (tree, level, x, y): LeafTuple) -> PyResult<Quadrant> {
    let valid = (tree as usize) < forest.num_blocks()
        && level <= patchforest::forest::MAX_LEVEL
        && (x as u64) < (1u64 << level)
        && (y as u64) < (1u64 << level);
    if !valid {
        return Err(PyValueError::new_err(format!("no quadrant ({tree}, {level}, {x}, {y})")));
    }
    Ok(Quadrant::from_level_coords(tree, level, x, y))
}

/// An advection run over simulated ranks.
#[pyclass(module = "patchforest_py")]
struct Simulation {
    inner: patchforest::driver::Simulation,
    config: ConfigFile,
}

#[pymethods]
impl Simulation {
    /// `config` is TOML text; keyword arguments override its keys.
    #[new]
    #[pyo3(signature = (config=None, **overrides))]
    fn new(config: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = build_config(config, overrides)?;
        let inner = patchforest::driver::Simulation::new(cfg.run.clone()).map_err(py_err)?;
        Ok(Simulation { inner, config: cfg })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let config = ConfigFile::load(path).map_err(py_err)?;
        config.run.validate().map_err(py_err)?;
        let inner = patchforest::driver::Simulation::new(config.run.clone()).map_err(py_err)?;
        Ok(Simulation { inner, config })
    }

    fn config_toml(&self) -> String {
        self.config.to_toml()
    }

    fn step(&mut self) -> PyResult<()> {
        self.inner.step().map_err(py_err)
    }

    /// Steps until the final time or step limit; returns the number of steps taken.
    fn run(&mut self) -> PyResult<usize> {
        let start = self.inner.steps();
        self.inner.run(|_| Ok(())).map_err(py_err)?;
        Ok(self.inner.steps() - start)
    }

    fn regrid(&mut self) -> PyResult<()> {
        self.inner.regrid().map_err(py_err)
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn finished(&self) -> bool {
        self.inner.is_finished()
    }

    #[getter]
    fn num_leaves(&self) -> usize {
        self.inner.forest().num_leaves()
    }

    #[getter]
    fn num_ranks(&self) -> usize {
        self.inner.cluster().num_ranks()
    }

    fn effective_resolutions(&self) -> (usize, usize) {
        self.inner.config().effective_resolutions()
    }

    fn total_mass(&self) -> f64 {
        self.inner.total_mass()
    }

    fn is_balanced(&self) -> bool {
        self.inner.forest().is_balanced()
    }

    /// `(tree, level, x, y, rank)` per leaf in curve order.
    fn leaves(&self) -> Vec<(u32, u8, u32, u32, usize)> {
        self.inner
            .patches()
            .map(|(r, p)| {
                let (t, l, x, y) = leaf_tuple(&p.leaf());
                (t, l, x, y, r)
            })
            .collect()
    }

    /// Interior values of every leaf, row-major, in curve order.
    fn values(&self) -> Vec<Vec<f64>> {
        self.inner.patches().map(|(_, p)| p.interior_values()).collect()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let row = StrategyRow::describe(self.inner.config(), self.inner.stats(), 0.0);
        stats_dict(py, &row)
    }

    fn snapshot_csv(&self) -> String {
        FieldSnapshot::capture(&self.inner).to_csv_string()
    }

    /// Writes `<dir>/<stem>.csv` or a `.vtm` collection; returns the path.
    #[pyo3(signature = (dir, stem, format="csv"))]
    fn write_snapshot(&self, dir: &str, stem: &str, format: &str) -> PyResult<String> {
        let snap = FieldSnapshot::capture(&self.inner);
        let dir = std::path::Path::new(dir);
        std::fs::create_dir_all(dir).map_err(|e| py_err(Error::io(dir, e)))?;
        let path = match format {
            "csv" => {
                let p = dir.join(format!("{stem}.csv"));
                snap.write_csv_file(&p).map_err(py_err)?;
                p
            }
            "vtk" => snap.write_vtk(dir, stem).map_err(py_err)?,
            other => return Err(PyValueError::new_err(format!("unknown format {other:?}, expected csv or vtk"))),
        };
        Ok(path.display().to_string())
    }

    fn __repr__(&self) -> String {
        format!(
            "Simulation(t={}, steps={}, leaves={}, ranks={})",
            self.inner.time(),
            self.inner.steps(),
            self.inner.forest().num_leaves(),
            self.inner.cluster().num_ranks()
        )
    }
}

/// A forest of quadtrees over a named block layout.
#[pyclass(module = "patchforest_py")]
struct Forest {
    inner: CoreForest,
}

#[pymethods]
impl Forest {
    /// `connectivity` is one of unit_square, periodic_square, two_tree_sphere, cubed_sphere.
    #[new]
    #[pyo3(signature = (level, connectivity="unit_square"))]
    fn new(level: u8, connectivity: &str) -> PyResult<Self> {
        let conn = match connectivity {
            "unit_square" => BlockConnectivity::unit_square(),
            "periodic_square" => BlockConnectivity::periodic_square(),
            "two_tree_sphere" => BlockConnectivity::two_tree_sphere(),
            "cubed_sphere" => BlockConnectivity::cubed_sphere(),
            other => return Err(PyValueError::new_err(format!("unknown connectivity {other:?}"))),
        };
        if level > patchforest::forest::MAX_LEVEL {
            return Err(PyValueError::new_err(format!("level {level} is too deep")));
        }
        Ok(Forest {
            inner: CoreForest::new_uniform(conn, level),
        })
    }

    #[getter]
    fn num_leaves(&self) -> usize {
        self.inner.num_leaves()
    }

    /// `(tree, level, x, y)` per leaf in curve order.
    fn leaves(&self) -> Vec<LeafTuple> {
        self.inner.leaves().map(leaf_tuple).collect()
    }

    fn refine(&mut self, leaf: LeafTuple) -> PyResult<()> {
        let q = leaf_from(&self.inner, leaf)?;
        self.inner.refine_leaf(&q).map_err(py_err)
    }

    fn coarsen(&mut self, parent: LeafTuple) -> PyResult<()> {
        let q = leaf_from(&self.inner, parent)?;
        self.inner.coarsen_family(&q).map_err(py_err)
    }

    /// Refines until face neighbors differ by at most one level; returns the leaves refined.
    fn balance(&mut self) -> PyResult<Vec<LeafTuple>> {
        Ok(self.inner.balance_2to1().map_err(py_err)?.iter().map(leaf_tuple).collect())
    }

    fn is_balanced(&self) -> bool {
        self.inner.is_balanced()
    }

    /// Leaves across `face` (0 left, 1 right, 2 bottom, 3 top).
    fn face_neighbors(&self, leaf: LeafTuple, face: usize) -> PyResult<Vec<LeafTuple>> {
        let q = leaf_from(&self.inner, leaf)?;
        if !self.inner.contains_leaf(&q) || face > 3 {
            return Err(PyValueError::new_err("not a leaf or face out of range"));
        }
        let nb = self.inner.face_neighbor(&q, patchforest::forest::Face::from_index(face));
        Ok(nb.leaves().iter().map(leaf_tuple).collect())
    }

    /// Leaf index bounds of a partition by count, or by level weight
    /// `2^(level - min_level)` when `weighted`.
    #[pyo3(signature = (ranks, weighted=false))]
    fn partition(&self, ranks: usize, weighted: bool) -> PyResult<Vec<usize>> {
        if ranks == 0 {
            return Err(PyValueError::new_err("need at least one rank"));
        }
        let part = if weighted {
            let lo = self.inner.min_level();
            let w: Vec<u64> = self.inner.leaves().map(|q| 1u64 << (q.level - lo)).collect();
            Partition::by_weight(&w, ranks)
        } else {
            Partition::by_count(self.inner.num_leaves(), ranks)
        };
        Ok(part.keep_families(&self.inner).bounds().to_vec())
    }
}

/// Refines a patch of `m x m` values (row-major) into four children and averages
/// them back; returns `(children, parent_again)`.
#[pyfunction]
fn refine_and_average(values: Vec<f64>, m: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    if m < 2 || m % 2 != 0 || values.len() != m * m {
        return Err(PyValueError::new_err("need an even m >= 2 and m*m values"));
    }
    let mut p = Patch::new(Quadrant::from_level_coords(0, 1, 0, 0), m, 0.0);
    p.set_interior_values(&values);
    let kids = interpolate_new_fine(&p).map_err(py_err)?;
    let back = average_new_coarse([&kids[0], &kids[1], &kids[2], &kids[3]]).map_err(py_err)?;
    Ok((kids.iter().map(|k| k.interior_values()).collect(), back.interior_values()))
}

/// Runs the seven-strategy comparison for a base config and returns the TSV report.
#[pyfunction]
#[pyo3(signature = (config=None, **overrides))]
fn strategy_report(py: Python<'_>, config: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let cfg = build_config(config, overrides)?;
    let rows = py
        .detach(|| strategy_matrix(&cfg.run).iter().map(run_strategy).collect::<patchforest::Result<Vec<_>>>())
        .map_err(py_err)?;
    let mut buf = Vec::new();
    write_strategy_report(&rows, &mut buf).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("ascii report"))
}

/// Parses TOML text and returns the normalized config with every default filled in.
#[pyfunction]
#[pyo3(signature = (config=None, **overrides))]
fn normalize_config(config: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    Ok(build_config(config, overrides)?.to_toml())
}

#[pymodule]
fn patchforest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_class::<Forest>()?;
    m.add_function(wrap_pyfunction!(refine_and_average, m)?)?;
    m.add_function(wrap_pyfunction!(strategy_report, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    m.add("HEADER_BYTES", patchforest::harness::HEADER_BYTES)?;
    Ok(())
}
