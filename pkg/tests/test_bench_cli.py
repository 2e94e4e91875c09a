import csv
import io

import numpy as np
import pytest

from dgbench.bench import (
    CSV_HEADER,
    BenchRecord,
    append_csv,
    model_flops,
    read_csv,
    roofline,
    run_bench,
)
from dgbench.cli import main, parse_levels
from dgbench.convergence import Manufactured, convergence_study, solve
from dgbench.geometry import ADVECTION, LAPLACIAN
from dgbench.mesh import build_mesh
from dgbench.operators import MatrixFreeOperator, OperatorConfig

HEADER_LINE = "operator,dim,degree,cells,geometry,lanes,ranks,n_dofs,time_s,dofs_per_s,flops,bytes,intensity"


def run(argv):
    out = io.StringIO()
    return main(argv, out=out), out.getvalue()


def record(intensity, op="laplace"):
    return BenchRecord(op, 3, 4, 64, "g3", 4, 1, 8000, 1e-3, 8e6, 10**6, int(10**6 / intensity), intensity)


def test_bench_record_and_csv(tmp_path):
    rec = run_bench("laplace", 2, 3, 3, reps=2, warmup=0.0)
    assert rec.n_dofs == 9 * 16 and rec.time_s > 0
    assert rec.flops == rec.flops_model
    assert rec.intensity == pytest.approx(rec.flops / rec.bytes)
    path = tmp_path / "b.csv"
    append_csv(path, [rec])
    append_csv(path, [rec])
    lines = path.read_text().splitlines()
    assert lines[0] == HEADER_LINE and len(lines) == 3
    back = read_csv(path)
    assert back[0].n_dofs == rec.n_dofs and back[1].flops == rec.flops


@pytest.mark.parametrize("equation", [ADVECTION, LAPLACIAN, "mass", "inverse_mass"])
@pytest.mark.parametrize("form", ["plain", "even_odd"])
def test_flop_model_matches_counters(equation, form):
    op = MatrixFreeOperator(build_mesh(2, 3), OperatorConfig(equation, 3, form=form, lanes=4))
    op.reset_counters()
    op.apply(op.create_vector())
    assert op.counters.flops_per_lane * 4 == model_flops(op)


def test_read_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(path)


def test_roofline_classification():
    pts = roofline([record(0.5), record(20.0)], peak=1e11, bandwidth=1e10)
    assert [p.bound for p in pts] == ["memory-bound", "compute-bound"]
    assert pts[0].ceiling_flops_per_s == pytest.approx(5e9)
    assert pts[1].ceiling_flops_per_s == pytest.approx(1e11)
    assert pts[0].achieved_flops_per_s == pytest.approx(1e9)
    with pytest.raises(ValueError):
        roofline([], 0, 1)


def test_parse_levels():
    assert parse_levels("2..4") == [2, 3, 4]
    assert parse_levels("3,5") == [3, 5]
    for bad in ("4..2", "x", "3,3"):
        with pytest.raises(Exception):
            parse_levels(bad)


def test_cli_bench_and_roofline(tmp_path):
    path = str(tmp_path / "r.csv")
    code, out = run(["bench", "--operator", "advection", "--dim", "2", "--degree", "2", "--cells", "2",
                     "--reps", "1", "--warmup", "0", "--csv", path])
    assert code == 0 and "dofs/s" in out
    with open(path) as fh:
        assert tuple(next(csv.reader(fh))) == CSV_HEADER
    code, out = run(["roofline", "--peak", "1e11", "--bw", "1e10", "--csv", path])
    assert code == 0 and "memory-bound" in out


@pytest.mark.parametrize("argv", [
    ["bench", "--operator", "laplace", "--degree", "2", "--basis", "hermite_like", "--reps", "1"],
    ["roofline", "--peak", "1", "--bw", "1", "--csv", "/nonexistent/file.csv"],
    ["verify", "--suite", "nosuch"],
    ["bench", "--operator", "stokes"],
    ["bench", "--operator", "mass", "--lanes", "3"],
    ["convergence", "--operator", "laplace", "--levels", "5..2"],
    [],
])
def test_cli_usage_errors(argv):
    assert run(argv)[0] == 2


def test_cli_verify_single_suite():
    code, out = run(["verify", "--suite", "geometry"])
    assert code == 0 and "[PASS] geometry" in out


def test_cli_convergence():
    code, out = run(["convergence", "--operator", "laplace", "--dim", "2", "--degree", "1", "--levels", "1..2"])
    assert code == 0
    rows = out.strip().splitlines()
    assert rows[0].startswith("level,") and len(rows) == 3


def test_zero_forcing_gives_zero_solution():
    op = MatrixFreeOperator(build_mesh(2, 2), OperatorConfig(LAPLACIAN, 2))
    x, its, ok = solve(op, np.zeros(op.n_dofs))
    assert ok and not x.any()


def test_manufactured_gradient_matches_finite_differences():
    ms = Manufactured(LAPLACIAN, 3)
    x = np.array([0.3, 0.6, 0.2])
    h = 1e-6
    fd = [(ms.u(x + h * e) - ms.u(x - h * e)) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(ms.grad(x), fd, atol=1e-7)


def test_advection_convergence_small():
    table = convergence_study(ADVECTION, 2, 1, [2, 3])
    assert all(r.converged for r in table)
    assert table[1].rate > 1.5
    with pytest.raises(ValueError):
        convergence_study("mass", 2, 1, [1])
