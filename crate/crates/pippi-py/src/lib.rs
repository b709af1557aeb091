use pyo3::prelude::*;

#[pymodule]
fn pippi_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
