use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::wrap_pymodule;

fn with_module<T>(f: impl FnOnce(&Bound<'_, PyModule>) -> PyResult<T>) -> T {
    Python::attach(|py| {
        let module = wrap_pymodule!(logbench_py::logbench_module)(py);
        f(module.bind(py).cast::<PyModule>().unwrap()).unwrap()
    })
}

#[test]
fn metric_functions() {
    with_module(|m| {
        assert_eq!(
            m.getattr("edit_distance")?
                .call1(("", "queue: default"))?
                .extract::<usize>()?,
            14
        );
        assert_eq!(m.getattr("lcs")?.call1(("ACGT", "AGT"))?.extract::<usize>()?, 3);
        assert!(m
            .getattr("parsing_accuracy")?
            .call1(("a <*>", "a  <*>"))?
            .extract::<bool>()?);
        Ok(())
    });
}

#[test]
fn score_returns_a_dict() {
    with_module(|m| {
        let d = m.getattr("score")?.call1((
            "setDataSource(166, 0, 576460752303423487)",
            "setDataSource(<*>, <*>, <*>)",
        ))?;
        let d = d.cast::<PyDict>()?;
        assert_eq!(d.get_item("ed")?.unwrap().extract::<usize>()?, 24);
        assert_eq!(d.get_item("lcs")?.unwrap().extract::<usize>()?, 19);
        let es: f64 = d.get_item("es_norm")?.unwrap().extract()?;
        assert!((es - 0.4146).abs() < 1e-4);
        Ok(())
    });
}

#[test]
fn normalize_and_extract() {
    with_module(|m| {
        let n = m.getattr("normalize")?.call1(("port {port} open",))?;
        assert_eq!(n.get_item("text")?.extract::<String>()?, "port <*> open");
        let e = m.getattr("extract_template")?.call1(("<TPL>port <*> open</TPL>",))?;
        assert_eq!(e.get_item("class")?.extract::<String>()?, "well_formed");
        assert_eq!(e.get_item("template")?.extract::<String>()?, "port <*> open");
        Ok(())
    });
}

#[test]
fn ranks_and_correlation() {
    with_module(|m| {
        let ranks: Vec<usize> = m.getattr("rank")?.call1((vec![0.5, 0.9, 0.5],))?.extract()?;
        assert_eq!(ranks, [2, 1, 2]);
        let r: f64 = m
            .getattr("pearson")?
            .call1((vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]))?
            .extract()?;
        assert_eq!(r, 1.0);
        let err = m.getattr("pearson")?.call1((vec![1.0], vec![1.0])).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(m.py()));
        Ok(())
    });
}

#[test]
fn corpus_and_prompt() {
    with_module(|m| {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/replay/corpus");
        let records = m.getattr("load_corpus")?.call1((dir,))?;
        assert_eq!(records.cast::<PyList>()?.len(), 50);
        let prompt: String = m.getattr("render_prompt")?.call1(("x y z", "zero"))?.extract()?;
        assert!(prompt.ends_with("<MSG>x y z</MSG>"));
        assert!(m.getattr("render_prompt")?.call1(("x", "some")).is_err());
        Ok(())
    });
}
