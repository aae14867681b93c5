//! Python bindings: forests, the coupled coproduct, partition sequences,
//! words, piecewise-linear paths and their lifts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lions_core::forest::{enumerate_forests as enumerate, LionsForest, Truncation};
use lions_core::hopf::{self, antipode, convolve, Side};
use lions_core::partitions::{self, PartitionSequence, SetPartition};
use lions_core::pathlift::{self, PiecewiseLinearPath, SampleAssignment};
use lions_core::words::{self as core_words, LionsWord};

fn err(e: lions_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn truncation(gamma: f64, d: usize, alpha: f64, beta: f64) -> PyResult<Truncation> {
    Truncation::new(gamma, alpha, beta, d).map_err(err)
}

/// A Lions forest: parent map, labels, the 0-hyperedge and the other hyperedges.
#[pyclass(name = "Forest", frozen, from_py_object)]
#[derive(Clone)]
struct Forest(LionsForest);

#[pymethods]
impl Forest {
    #[new]
    fn new(parent: Vec<Option<usize>>, labels: Vec<usize>, h0: Vec<usize>, hyperedges: Vec<Vec<usize>>) -> PyResult<Self> {
        LionsForest::new(parent, labels, h0, hyperedges).map(Forest).map_err(err)
    }

    #[staticmethod]
    fn unit() -> Self {
        Forest(LionsForest::unit())
    }

    #[staticmethod]
    fn generator(label: usize) -> Self {
        Forest(LionsForest::generator(label))
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        serde_json::from_str(s).map(Forest).map_err(json_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    /// Canonical key of the isomorphism class.
    fn key(&self) -> String {
        self.0.key().0
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Forest({})", serde_json::to_string(&self.0).unwrap_or_default())
    }

    fn __eq__(&self, other: &Forest) -> bool {
        self.0.key() == other.0.key()
    }

    fn __hash__(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.0.key().hash(&mut h);
        h.finish()
    }

    #[getter]
    fn parent(&self) -> Vec<Option<usize>> {
        self.0.parents().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    #[getter]
    fn h0(&self) -> Vec<usize> {
        self.0.h0().to_vec()
    }

    #[getter]
    fn hyperedges(&self) -> Vec<Vec<usize>> {
        self.0.hyperedges().to_vec()
    }

    /// `(|h0|, |N ∖ h0|)`.
    fn grading(&self) -> (usize, usize) {
        self.0.grading()
    }

    fn is_tree(&self) -> bool {
        self.0.is_tree()
    }

    fn canonical(&self) -> Self {
        Forest(self.0.canonical())
    }

    /// `self ⊛ other`.
    fn product(&self, other: &Forest) -> Self {
        Forest(self.0.product(&other.0))
    }

    fn expectation(&self) -> Self {
        Forest(self.0.expectation())
    }

    fn graft(&self, label: usize) -> Self {
        Forest(self.0.graft(label))
    }

    /// Terms of `Δ` as `(left, right, coupling blocks, multiplicity)`.
    fn coproduct(&self) -> Vec<(Forest, Forest, Vec<Vec<usize>>, usize)> {
        terms(&hopf::coproduct(&self.0))
    }

    fn reduced_coproduct(&self) -> Vec<(Forest, Forest, Vec<Vec<usize>>, usize)> {
        terms(&hopf::reduced_coproduct(&self.0))
    }

    fn check_coassociativity(&self) -> bool {
        hopf::check_coassociativity(&self.0)
    }

    fn check_counit(&self) -> bool {
        hopf::check_counit(&self.0)
    }

    fn check_antipode_identity(&self) -> bool {
        hopf::check_antipode_identity(&self.0)
    }
}

fn terms(r: &hopf::CoproductResult) -> Vec<(Forest, Forest, Vec<Vec<usize>>, usize)> {
    r.iter().map(|(t, m)| (Forest(t.left().clone()), Forest(t.right().clone()), t.coupling.blocks().to_vec(), m)).collect()
}

/// Every forest of the truncation, one per isomorphism class, in canonical order.
#[pyfunction]
#[pyo3(signature = (gamma, d, alpha = 1.0, beta = 1.0))]
fn enumerate_forests(gamma: f64, d: usize, alpha: f64, beta: f64) -> PyResult<Vec<Forest>> {
    Ok(enumerate(&truncation(gamma, d, alpha, beta)?).into_iter().map(Forest).collect())
}

/// Blocks of the set partition encoded by a partition sequence.
#[pyfunction]
fn sequence_to_partition(entries: Vec<usize>) -> PyResult<Vec<Vec<usize>>> {
    let a = PartitionSequence::new(entries).map_err(err)?;
    Ok(partitions::sequence_to_partition(&a).blocks().to_vec())
}

#[pyfunction]
fn partition_to_sequence(blocks: Vec<Vec<usize>>) -> PyResult<Vec<usize>> {
    let p = SetPartition::new(blocks).map_err(err)?;
    Ok(partitions::partition_to_sequence(&p).map_err(err)?.entries().to_vec())
}

/// All sequences of length `n`, optionally with exactly `k` distinct nonzero values.
#[pyfunction]
#[pyo3(signature = (n, k = None))]
fn enumerate_sequences(n: usize, k: Option<usize>) -> PyResult<Vec<Vec<usize>>> {
    Ok(partitions::enumerate_sequences(n, k).map_err(err)?.into_iter().map(|a| a.entries().to_vec()).collect())
}

/// Joint partitions of the couplings of `p` and `q`.
#[pyfunction]
fn enumerate_couplings(p: Vec<Vec<usize>>, q: Vec<Vec<usize>>) -> PyResult<Vec<Vec<Vec<usize>>>> {
    let (p, q) = (SetPartition::new(p).map_err(err)?, SetPartition::new(q).map_err(err)?);
    Ok(partitions::enumerate_couplings(&p, &q).map_err(err)?.into_iter().map(|c| c.joint.blocks().to_vec()).collect())
}

/// A Lions word: letters, the positions driven by `ω0`, and blocks of the rest.
#[pyclass(name = "Word", frozen, from_py_object)]
#[derive(Clone)]
struct Word(LionsWord);

#[pymethods]
impl Word {
    #[new]
    fn new(letters: Vec<usize>, p0: Vec<usize>, blocks: Vec<Vec<usize>>) -> PyResult<Self> {
        LionsWord::new(letters, p0, blocks).map(Word).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Word({})", serde_json::to_string(&self.0).unwrap_or_default())
    }

    fn __eq__(&self, other: &Word) -> bool {
        self.0 == other.0
    }

    #[getter]
    fn letters(&self) -> Vec<usize> {
        self.0.letters().to_vec()
    }

    /// The coupled shuffle with `other`, as `(word, coefficient)` pairs.
    fn shuffle(&self, other: &Word) -> Vec<(Word, i64)> {
        core_words::coupled_shuffle(&self.0, &other.0).into_iter().map(|(w, c)| (Word(w), c)).collect()
    }

    fn ladder(&self) -> PyResult<Forest> {
        core_words::word_to_ladder(&self.0).map(Forest).map_err(err)
    }
}

/// A continuous piecewise-linear path on `[0, 1]`.
#[pyclass(name = "Path", frozen, from_py_object)]
#[derive(Clone)]
struct Path(PiecewiseLinearPath);

#[pymethods]
impl Path {
    #[new]
    fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> PyResult<Self> {
        PiecewiseLinearPath::new(times, values).map(Path).map_err(err)
    }

    /// `t ↦ t v`.
    #[staticmethod]
    fn linear(v: Vec<f64>) -> Self {
        Path(PiecewiseLinearPath::linear(&v))
    }

    /// Parses CSV text with a header row and columns `t, x1, ..., xd`.
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        PiecewiseLinearPath::read_csv(text.as_bytes()).map(Path).map_err(err)
    }

    fn coord(&self, t: f64, i: usize) -> PyResult<f64> {
        if i >= self.0.dim() {
            return Err(PyValueError::new_err(format!("coordinate {i} of a {}-dimensional path", self.0.dim())));
        }
        Ok(self.0.coord(t, i))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.0.values().to_vec()
    }
}

fn assignment(zero: &Path, hyper: &[Path]) -> SampleAssignment {
    SampleAssignment::new(zero.0.clone(), hyper.iter().map(|p| p.0.clone()).collect())
}

/// Coefficients of the lift of `forest` over `[s, t]`: `zero` drives
/// `h0`, `hyper[k]` drives hyperedge `k`. The tensor is flattened with
/// slots in increasing node order.
#[pyfunction]
fn tree_integral(forest: &Forest, zero: &Path, hyper: Vec<Path>, s: f64, t: f64) -> PyResult<Vec<f64>> {
    Ok(pathlift::tree_integral(&forest.0, &assignment(zero, &hyper), s, t).map_err(err)?.data.to_vec())
}

/// A McKean-Vlasov character on the forests of a truncation.
#[pyclass(name = "Character", frozen, from_py_object)]
#[derive(Clone)]
struct Character(hopf::Character);

#[pymethods]
impl Character {
    /// The lift of the paths fed at evaluation time, over `[s, t]`.
    #[staticmethod]
    #[pyo3(signature = (gamma, d, s, t, alpha = 1.0, beta = 1.0))]
    fn lift(gamma: f64, d: usize, s: f64, t: f64, alpha: f64, beta: f64) -> PyResult<Self> {
        pathlift::lift_character(truncation(gamma, d, alpha, beta)?, s, t).map(Character).map_err(err)
    }

    fn eval(&self, forest: &Forest, zero: &Path, hyper: Vec<Path>) -> PyResult<Vec<f64>> {
        Ok(self.0.eval(&forest.0, &assignment(zero, &hyper)).map_err(err)?.data.to_vec())
    }

    /// `self ∗ other`.
    fn convolve(&self, other: &Character) -> PyResult<Self> {
        convolve(&self.0, &other.0).map(Character).map_err(err)
    }

    #[pyo3(signature = (side = "left"))]
    fn antipode(&self, side: &str) -> PyResult<Self> {
        let side = match side {
            "left" => Side::Left,
            "right" => Side::Right,
            other => return Err(PyRuntimeError::new_err(format!("side must be 'left' or 'right', got {other:?}"))),
        };
        Ok(Character(antipode(&self.0, side)))
    }
}

#[pymodule]
fn lions(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Forest>()?;
    m.add_class::<Word>()?;
    m.add_class::<Path>()?;
    m.add_class::<Character>()?;
    m.add_function(wrap_pyfunction!(enumerate_forests, m)?)?;
    m.add_function(wrap_pyfunction!(sequence_to_partition, m)?)?;
    m.add_function(wrap_pyfunction!(partition_to_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_sequences, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_couplings, m)?)?;
    m.add_function(wrap_pyfunction!(tree_integral, m)?)?;
    Ok(())
}
