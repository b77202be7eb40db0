import numpy as np

from mechanochem.config import load_shipped
from mechanochem.elasticity import strain_field
from mechanochem.grid import build_grid
from mechanochem.output import read_vtk, write_diagnostics_csv, write_vtk
from mechanochem.steppers import FieldState, run_simulation


def zero_state(grid):
    u = np.zeros((grid.n_nodes, 2))
    z = np.zeros(grid.n_nodes)
    return FieldState(0.0, z, z, z, u, strain_field(grid, u))


def independent_parse(path):
    """Token-stream reader that shares no code with the package."""
    tokens = open(path).read().split()
    out = {}
    i = tokens.index("POINT_DATA")
    n = int(tokens[i + 1])
    for name in ("phi", "mu", "sigma"):
        j = tokens.index(name, i) + 4  # name, type, components, LOOKUP_TABLE default
        out[name] = np.array([float(t) for t in tokens[j + 1:j + 1 + n]])
    j = tokens.index("displacement") + 2
    out["u"] = np.array([float(t) for t in tokens[j:j + 3 * n]]).reshape(n, 3)
    return out


def test_vtk_header_counts(tmp_path):
    g = build_grid(2, 2)
    write_vtk(g, zero_state(g), tmp_path / "s.vtk")
    text = (tmp_path / "s.vtk").read_text()
    assert "DATASET STRUCTURED_GRID" in text
    assert "DIMENSIONS 3 3 1" in text and "POINT_DATA 9" in text
    assert text.count("LOOKUP_TABLE default") == 3


def test_vtk_zero_state(tmp_path):
    g = build_grid(3, 2, 1.5, 1.0)
    write_vtk(g, zero_state(g), tmp_path / "z.vtk")
    data = independent_parse(tmp_path / "z.vtk")
    assert all(not np.any(data[k]) for k in ("phi", "mu", "sigma", "u"))


def test_vtk_round_trip_bit_identical(tmp_path):
    g = build_grid(5, 4)
    rng = np.random.default_rng(0)
    st = zero_state(g)
    st.phi, st.mu, st.sigma = rng.standard_normal((3, g.n_nodes)) * [[1], [1e-7], [1e5]]
    st.u = rng.standard_normal((g.n_nodes, 2)) / 3
    write_vtk(g, st, tmp_path / "r.vtk")
    data = independent_parse(tmp_path / "r.vtk")
    for k in ("phi", "mu", "sigma"):
        assert np.array_equal(data[k], getattr(st, k))
    assert np.array_equal(data["u"][:, :2], st.u) and not np.any(data["u"][:, 2])
    back = read_vtk(tmp_path / "r.vtk")
    assert back["dimensions"] == (6, 5, 1)
    assert np.array_equal(back["points"][:, :2], g.node_coords)
    assert np.array_equal(back["displacement"][:, :2], st.u)


def _short_run(steps=3):
    cfg = load_shipped().with_values(grid__nx=8, grid__ny=8)
    g, p = cfg.build_grid(), cfg.build_params()
    phi0 = cfg.initial_phi(g)
    return run_simulation(g, p, phi0, cfg.initial_sigma(g, p, phi0), cfg["time"]["dt"], steps)


def test_csv_single_record(tmp_path):
    _, recs = _short_run(0)
    write_diagnostics_csv(recs, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_bytes().split(b"\n")
    assert len(lines) == 3 and lines[-1] == b""  # header, one row, trailing newline
    assert lines[0].decode().split(",")[:3] == ["time", "total_energy", "ginzburg_landau_part"]


def test_csv_byte_identical_reruns(tmp_path):
    _, a = _short_run()
    _, b = _short_run()
    write_diagnostics_csv(a, tmp_path / "a.csv")
    write_diagnostics_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_mass_column_balance(tmp_path):
    _, recs = _short_run(5)
    write_diagnostics_csv(recs, tmp_path / "m.csv")
    table = np.genfromtxt(tmp_path / "m.csv", delimiter=",", names=True)
    dm = np.diff(table["mass"])
    assert np.allclose(dm, table["dt"][1:] * table["source_integral"][1:], atol=1e-10)
