"""Smoke test for the cnocpd Python bindings.

Build the extension first:

    cargo build --release -p cnocpd-python --features extension-module
    python3 python/smoke_test.py

The script copies target/release/libcnocpd_py.so next to itself as
cnocpd_py.so when the module is not importable yet.
"""

import pathlib
import shutil
import sys

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent


def import_module():
    try:
        import cnocpd_py  # noqa: F401
    except ImportError:
        for name in ("libcnocpd_py.so", "libcnocpd_py.dylib"):
            built = ROOT / "target" / "release" / name
            if built.exists():
                shutil.copy(built, HERE / "cnocpd_py.so")
                break
        else:
            sys.exit("build the extension first: cargo build --release -p cnocpd-python --features extension-module")
        sys.path.insert(0, str(HERE))
    import cnocpd_py

    return cnocpd_py


def main():
    c = import_module()

    # kernels
    kr = c.khatri_rao([[1, 2], [3, 4]], [[0, 1], [1, 0]])
    assert kr == [[0, 2], [1, 0], [0, 4], [3, 0]], kr
    t = c.Tensor([2, 2, 2], [float(v) for v in range(1, 9)])
    assert t.unfold(0) == [[1, 3, 5, 7], [2, 4, 6, 8]]
    assert t.get([1, 0, 0]) == 2.0

    # exact model has zero error and zero gradient
    truth = c.Model.random([4, 5, 3], 2, 7)
    x = truth.full()
    assert c.relative_error(x, truth) == 0.0
    assert max(abs(v) for g in c.gradient(x, truth) for row in g for v in row) < 1e-12

    # solvers reduce the error from a random start
    tensor, _ = c.gen_problem("random_5x5x5_R3", 2)
    start = c.Model.random([5, 5, 5], 3, 11)
    e0 = c.relative_error(tensor, start)
    results = {
        "hals": c.hals(tensor, start, 200),
        "mur": c.mur(tensor, start, 200),
        "flow": c.flow(tensor, start, 200),
        "dtpnn": c.dtpnn(tensor, start, 200),
    }
    for name, m in results.items():
        e = c.relative_error(tensor, m)
        assert e < e0, (name, e, e0)
        assert all(v >= 0 for f in m.factors() for row in f for v in row), name
        print(f"{name:6s} rel_error {e:.3e}")

    best, values = c.cno(tensor, 3, q=3, k_max=4, inner_steps=50)
    assert all(b <= a for a, b in zip(values, values[1:])), values
    print(f"cno    rel_error {c.relative_error(tensor, best):.3e}")

    summary, csv = c.run_config(
        "algorithm = 'hals'\nrank = 3\nproblem.kind = 'random_5x5x5_R3'\nbudget.max_iters = 50\n", 2
    )
    assert csv.splitlines()[0] == "iter,objective,rel_error,wall_ms,diversity"
    assert summary["termination"] == "max_iterations", summary

    try:
        c.Tensor([2, 2], [1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch not reported")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
