"""End-to-end tests of the command-line front end.

Every test drives `main(argv)` directly and checks exit codes, stdout,
stderr, and the emitted files.
"""

import hashlib

import numpy as np
import pytest

from ddfem.cli import main, parse_config, serialize_config
from ddfem.data_gen import Family, GeneratorSpec, generate
from ddfem.fem import line_mesh, save_mesh
from ddfem.phase_space import PairingKind, load_dataset, save_dataset

C1_RUBBER = 1.0e6 / 6.0
LOAD_FOR_DOUBLE = 3.5 * C1_RUBBER  # traction [Pa] that doubles the rod


@pytest.fixture
def workspace(tmp_path):
    """Rod mesh file plus a dense rubber dataset file."""
    mesh = line_mesh(0.1, 10)
    mesh.nodesets["left"] = np.array([0])
    mesh.nodesets["right"] = np.array([mesh.n_nodes - 1])
    mesh.facesets["right"] = [(mesh.n_nodes - 1,)]
    mesh_path = tmp_path / "rod.mesh"
    save_mesh(mesh, mesh_path)
    data = generate(GeneratorSpec(Family.NEOHOOKE, c1=C1_RUBBER, n=2000,
                                  stretch_range=(1.0, 3.2)))
    data_path = tmp_path / "rubber_fp.data"
    save_dataset(data, data_path)
    return tmp_path, mesh_path, data_path


def rod_config(tmp_path, mesh_path, data_path, outdir="out",
               traction=LOAD_FOR_DOUBLE, extra_solver="",
               extra_sections=""):
    text = f"""\
[run]
formulation = FP
mesh = {mesh_path}
dataset = {data_path}
output = {tmp_path / outdir}
area = 1e-4

[bc]
dirichlet.left = x=0
traction.right = {traction!r}

[solver]
mu0 = auto
{extra_solver}
{extra_sections}
"""
    path = tmp_path / f"{outdir}.ini"
    path.write_text(text)
    return path


class TestConfigParsing:
    def test_round_trip_with_dataset_and_extras(self, workspace):
        tmp_path, mesh_path, data_path = workspace
        text = f"""\
[run]
formulation = FP
mesh = {mesh_path}
dataset = {data_path}
output = {tmp_path / 'out'}
area = 2.5e-4
emit_vtk = true

[bc]
dirichlet.left = x=0
traction.right = 1000.0 \n
body_force = 50.0

[solver]
mu0 = 1.5e6
max_data_iterations = 77

[multilevel]
source = {data_path}
max_levels = 3
radius = auto

[reference]
e_mod = 1e6
nu = 0.3333
"""
        cfg = parse_config(text)
        again = parse_config(serialize_config(cfg))
        assert again == cfg
        assert serialize_config(again) == serialize_config(cfg)

    def test_round_trip_with_generator(self, workspace):
        tmp_path, mesh_path, _ = workspace
        text = f"""\
[run]
formulation = CS
mesh = {mesh_path}
output = {tmp_path / 'out'}

[solver]
mu0 = auto
load_steps = 3

[generator]
family = neohooke
c1 = 166666.0
n = 500
pairing = CS
"""
        cfg = parse_config(text)
        assert cfg.solver.mu0 is None
        assert cfg.generator.n == 500
        assert parse_config(serialize_config(cfg)) == cfg

    def test_missing_run_section(self):
        with pytest.raises(ValueError, match=r"\[run\]"):
            parse_config("[solver]\nmu0 = auto\n")

    def test_unknown_run_key(self, workspace):
        tmp_path, mesh_path, data_path = workspace
        text = (f"[run]\nformulation = FP\nmesh = {mesh_path}\n"
                f"dataset = {data_path}\noutput = o\ncolor = red\n")
        with pytest.raises(ValueError, match=r"\[run\] color"):
            parse_config(text)

    def test_formulation_must_be_known(self):
        text = "[run]\nformulation = XY\nmesh = m\noutput = o\ndataset = d\n"
        with pytest.raises(ValueError, match="FP or CS"):
            parse_config(text)

    def test_dataset_and_generator_are_exclusive(self, workspace):
        _, mesh_path, data_path = workspace
        text = (f"[run]\nformulation = FP\nmesh = {mesh_path}\n"
                f"dataset = {data_path}\noutput = o\n"
                "[generator]\nfamily = linear\nc1 = 1.0\n")
        with pytest.raises(ValueError, match="exactly one"):
            parse_config(text)
        text = f"[run]\nformulation = FP\nmesh = {mesh_path}\noutput = o\n"
        with pytest.raises(ValueError, match="exactly one"):
            parse_config(text)

    def test_threads_is_not_a_config_key(self, workspace):
        _, mesh_path, data_path = workspace
        text = (f"[run]\nformulation = FP\nmesh = {mesh_path}\n"
                f"dataset = {data_path}\noutput = o\n"
                "[solver]\nthreads = 4\n")
        with pytest.raises(ValueError, match="command-line flag"):
            parse_config(text)

    def test_solver_keys_are_formulation_specific(self, workspace):
        _, mesh_path, data_path = workspace
        text = (f"[run]\nformulation = FP\nmesh = {mesh_path}\n"
                f"dataset = {data_path}\noutput = o\n"
                "[solver]\nnewton_tol = 1e-9\n")
        with pytest.raises(ValueError, match="unknown key for formulation FP"):
            parse_config(text)

    def test_generator_pairing_must_match_formulation(self, workspace):
        _, mesh_path, _ = workspace
        text = (f"[run]\nformulation = FP\nmesh = {mesh_path}\noutput = o\n"
                "[generator]\nfamily = linear\nc1 = 1.0\npairing = CS\n")
        with pytest.raises(ValueError, match="does not match"):
            parse_config(text)

    def test_dirichlet_parsing(self):
        text = ("[run]\nformulation = FP\nmesh = m\noutput = o\ndataset = d\n"
                "[bc]\ndirichlet.base = x=0, y=1.5e-3\n")
        cfg = parse_config(text)
        assert cfg.dirichlet == (("base", 0, 0.0), ("base", 1, 1.5e-3))

    def test_dirichlet_numeric_component(self):
        text = ("[run]\nformulation = FP\nmesh = m\noutput = o\ndataset = d\n"
                "[bc]\ndirichlet.base = 1=0.5\n")
        assert parse_config(text).dirichlet == (("base", 1, 0.5),)

    def test_dirichlet_unknown_component(self):
        text = ("[run]\nformulation = FP\nmesh = m\noutput = o\ndataset = d\n"
                "[bc]\ndirichlet.base = w=0\n")
        with pytest.raises(ValueError, match="unknown component 'w'"):
            parse_config(text)

    def test_malformed_ini_reports_a_parse_error(self):
        with pytest.raises(ValueError, match="config parse error"):
            parse_config("not an ini file at all\n")


class TestSolveCommand:
    def test_converged_solve_writes_outputs(self, workspace, capsys):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path)
        assert main(["solve", str(cfg), "--threads", "1"]) == 0
        out = capsys.readouterr().out
        assert "FP solve CONVERGED" in out
        outdir = tmp_path / "out"
        for name in ("fields.tsv", "states.tsv", "history.tsv"):
            assert (outdir / name).exists()
        chash = hashlib.sha256(cfg.read_bytes()).hexdigest()[:12]
        header = (outdir / "fields.tsv").read_text().splitlines()[1]
        assert f"config={chash}" in header
        assert "status=CONVERGED" in header
        assert "termination=" in header

    def test_solution_doubles_the_rod(self, workspace):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path)
        main(["solve", str(cfg), "--threads", "1"])
        lines = (tmp_path / "out" / "fields.tsv").read_text().splitlines()
        last = lines[-1].split("\t")
        assert last[0] == "10"
        assert abs(float(last[1]) - 0.1) < 1e-3

    def test_zero_load_keeps_every_field_zero(self, workspace):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path, outdir="zero",
                         traction=0.0)
        assert main(["solve", str(cfg), "--threads", "1"]) == 0
        lines = (tmp_path / "zero" / "fields.tsv").read_text().splitlines()
        for row in lines[3:]:
            _, u0, l0 = row.split("\t")
            assert float(u0) == 0.0
            assert float(l0) == 0.0

    def test_states_file_has_one_row_per_quadrature_point(self, workspace):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path)
        main(["solve", str(cfg), "--threads", "1"])
        lines = (tmp_path / "out" / "states.tsv").read_text().splitlines()
        # 2 header comments + 1 column row + 10 elements x 2 gauss points
        assert len(lines) == 23
        assert lines[2].split("\t")[:2] == ["element", "qp"]

    def test_history_penalties_do_not_increase(self, workspace):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path)
        main(["solve", str(cfg), "--threads", "1"])
        lines = (tmp_path / "out" / "history.tsv").read_text().splitlines()
        penalties = [float(r.split("\t")[1]) for r in lines[3:]]
        assert len(penalties) >= 1
        diffs = np.diff(penalties)
        assert np.all(diffs <= 1e-12 * max(penalties))

    def test_nonconverged_solve_exits_two_and_flags_headers(self, workspace,
                                                            capsys):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path, outdir="hard",
                         extra_solver="max_data_iterations = 1\n")
        assert main(["solve", str(cfg), "--threads", "1"]) == 2
        assert "NONCONVERGED" in capsys.readouterr().out
        header = (tmp_path / "hard" / "fields.tsv").read_text().splitlines()[1]
        assert "status=NONCONVERGED" in header
        assert "termination=max-iterations" in header

    def test_reruns_and_thread_counts_are_bit_identical(self, workspace):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path)
        names = ("fields.tsv", "states.tsv", "history.tsv")

        def snapshot():
            return [(tmp_path / "out" / n).read_bytes() for n in names]

        main(["solve", str(cfg), "--threads", "1"])
        first = snapshot()
        main(["solve", str(cfg), "--threads", "1"])
        assert snapshot() == first
        main(["solve", str(cfg), "--threads", "4"])
        assert snapshot() == first

    def test_missing_nodeset_is_reported(self, workspace, capsys):
        tmp_path, mesh_path, data_path = workspace
        cfg = tmp_path / "bad.ini"
        cfg.write_text(f"""\
[run]
formulation = FP
mesh = {mesh_path}
dataset = {data_path}
output = {tmp_path / 'bad_out'}

[bc]
dirichlet.clamp = x=0
""")
        assert main(["solve", str(cfg), "--threads", "1"]) == 1
        err = capsys.readouterr().err
        assert "not found in mesh" in err
        assert "left" in err  # the available sets are listed

    def test_missing_config_file_is_an_input_error(self, tmp_path, capsys):
        assert main(["solve", str(tmp_path / "nope.ini")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_thread_count_must_be_positive(self, workspace, capsys):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path)
        assert main(["solve", str(cfg), "--threads", "0"]) == 1
        assert "at least 1" in capsys.readouterr().err


class TestDatasetCommands:
    def test_generate_then_validate(self, tmp_path, capsys):
        out = tmp_path / "gen.data"
        code = main(["generate", "--family", "neohooke",
                     "--c1", repr(C1_RUBBER), "--n", "50",
                     "--range", "1.0:3.2", "--out", str(out)])
        assert code == 0
        data = load_dataset(out)
        assert len(data) == 50
        assert data.kind is PairingKind.FP
        assert main(["validate-dataset", str(out)]) == 0
        assert "OK" in capsys.readouterr().out

    def test_generate_rejects_a_bad_range(self, tmp_path, capsys):
        code = main(["generate", "--family", "neohooke", "--c1", "1.0",
                     "--range", "oops", "--out", str(tmp_path / "x.data")])
        assert code == 1
        assert "MIN:MAX" in capsys.readouterr().err

    def test_convert_squares_the_stretches(self, workspace, capsys):
        tmp_path, _, data_path = workspace
        out = tmp_path / "rubber_cs.data"
        assert main(["convert-dataset", str(data_path), str(out),
                     "--to", "CS"]) == 0
        fp = load_dataset(data_path)
        cs = load_dataset(out)
        assert cs.kind is PairingKind.CS
        np.testing.assert_allclose(cs.strains, fp.strains ** 2, rtol=1e-12)

    def test_momentum_violation_is_reported_with_its_line(self, tmp_path,
                                                          capsys):
        bad = tmp_path / "bad.data"
        bad.write_text("\n".join([
            "# dd-dataset v1",
            "kind=FP dim=2 units=SI",
            "1.0 0.0 0.0 1.0 0.0 0.0 0.0 0.0",
            "1.0 0.0 0.0 1.0 0.0 500.0 0.0 0.0",
        ]) + "\n")
        assert main(["validate-dataset", str(bad)]) == 1
        err = capsys.readouterr().err
        assert ":4:" in err
        assert "momentum" in err


class TestMultilevelCommand:
    def test_two_level_run_writes_the_level_table(self, workspace, capsys):
        tmp_path, mesh_path, data_path = workspace
        coarse = generate(GeneratorSpec(Family.NEOHOOKE, c1=C1_RUBBER, n=30,
                                        stretch_range=(1.0, 3.2)))
        coarse_path = tmp_path / "coarse.data"
        save_dataset(coarse, coarse_path)
        cfg = rod_config(tmp_path, mesh_path, coarse_path, outdir="ml",
                         extra_sections=f"""\
[multilevel]
source = {data_path}
max_levels = 3
stop_delta = 0.0
penalty_floor = 0.0
""")
        assert main(["multilevel", str(cfg), "--threads", "1"]) == 0
        out = capsys.readouterr().out
        assert "level 1:" in out
        table = (tmp_path / "ml" / "levels.tsv").read_text().splitlines()
        assert table[0] == "# dd-levels v1"
        assert len(table) >= 4  # magic, columns, two levels

    def test_multilevel_requires_its_section(self, workspace, capsys):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path, outdir="ml2")
        assert main(["multilevel", str(cfg), "--threads", "1"]) == 1
        assert "multilevel" in capsys.readouterr().err


class TestReferenceCommand:
    def test_linear_elastic_comparison_solve(self, workspace, capsys):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path, outdir="ref",
                         traction=1.0e5,
                         extra_sections="[reference]\ne_mod = 2e9\nnu = 0.3\n")
        assert main(["reference", str(cfg)]) == 0
        assert "reference solve CONVERGED" in capsys.readouterr().out
        lines = (tmp_path / "ref" / "fields.tsv").read_text().splitlines()
        # u(L) = sigma L / E = 1e5 * 0.1 / 2e9
        u_end = float(lines[-1].split("\t")[1])
        assert abs(u_end - 5.0e-6) < 1e-12

    def test_reference_requires_its_section(self, workspace, capsys):
        tmp_path, mesh_path, data_path = workspace
        cfg = rod_config(tmp_path, mesh_path, data_path, outdir="ref2")
        assert main(["reference", str(cfg)]) == 1
        assert "reference" in capsys.readouterr().err
