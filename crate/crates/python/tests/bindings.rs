use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run_script(script: &std::ffi::CStr) {
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(cnocpd_py::cnocpd_py)(py);
        let locals = PyDict::new(py);
        locals.set_item("c", module).unwrap();
        py.run(script, None, Some(&locals)).unwrap();
    });
}

#[test]
fn kernels_round_trip_through_python() {
    run_script(
        c"
assert c.khatri_rao([[1, 2], [3, 4]], [[0, 1], [1, 0]]) == [[0, 2], [1, 0], [0, 4], [3, 0]]
t = c.Tensor([2, 2, 2], [float(v) for v in range(1, 9)])
assert t.shape == [2, 2, 2]
assert t.unfold(0) == [[1, 3, 5, 7], [2, 4, 6, 8]]
m = c.Model([[[1.0], [1.0]], [[1.0], [1.0]], [[1.0], [1.0]]])
assert m.full().data() == [1.0] * 8
assert c.mttkrp(m.full(), m, 0) == [[4.0], [4.0]]
",
    );
}

#[test]
fn solvers_fit_and_errors_surface() {
    run_script(
        c"
x, truth = c.gen_problem('random_4x4x4_R2', 1)
assert c.relative_error(x, truth) == 0.0
start = c.Model.random([4, 4, 4], 2, 3)
fit = c.hals(x, start, 300)
assert c.relative_error(x, fit) < c.relative_error(x, start)
try:
    c.dtpnn(x, start, 1, variant='newton')
    raise AssertionError('unknown variant accepted')
except ValueError:
    pass
try:
    c.gen_problem('nonsense', 0)
    raise AssertionError('unknown kind accepted')
except ValueError:
    pass
",
    );
}
