use pyo3::prelude::*;

#[pymodule]
fn spgpy(_py: Python<'_>, _m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
