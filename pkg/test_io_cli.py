"""
Tests for configuration parsing, snapshot storage and the command line
"""

import numpy as np
import pytest

from conftest import QUICK_CONFIG, REST_CONFIG
from ksns.api.cli import main
from ksns.api.config_file import build_initial_state, load_config, parse_config
from ksns.api.storage import (
    decode_snapshot,
    encode_snapshot,
    read_diagnostics,
    read_snapshot_dir,
    snapshot_name,
    write_diagnostics,
    write_snapshot,
)
from ksns.core.errors import CorruptSnapshot, IoFailure, ParseError, UnknownKey, ValidationError
from ksns.services.diagnostics import record
from ksns.services.experiments import run_scenario


def _quick(tmp_path, **replace):
    text = QUICK_CONFIG.format(out_dir=tmp_path / "out")
    for old, new in replace.items():
        text = text.replace(old, new)
    return text


def _last_line(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


# ===== CONFIGURATION =====

def test_parse_quick_config(tmp_path):
    cfg = parse_config("# header comment\n\n" + _quick(tmp_path))
    assert cfg.grid.cells == (16, 16)
    assert cfg.params.phi_g == (0.0, -1.0)
    assert cfg.initial_n.preset == "gaussian_blob"
    assert cfg.stepping.cfl_advect == 0.4
    assert cfg.warnings == ()


def test_unknown_key_names_the_line(tmp_path):
    with pytest.raises(UnknownKey) as info:
        parse_config(_quick(tmp_path) + "grid.colour = blue\n")
    assert info.value.key == "grid.colour"
    assert info.value.line is not None


def test_malformed_line_reports_position():
    with pytest.raises(ParseError) as info:
        parse_config("grid.dim = 2\ngrid.cells 16, 16\n")
    assert info.value.line == 2
    assert info.value.column >= 1


def test_duplicate_key_is_rejected(tmp_path):
    with pytest.raises(ParseError):
        parse_config(_quick(tmp_path) + "params.m = 4\n")


def test_missing_section_is_rejected(tmp_path):
    text = _quick(tmp_path, **{"initial.c.preset = rest": ""})
    with pytest.raises(ValidationError) as info:
        parse_config(text)
    assert info.value.key == "initial.c"


def test_value_ranges_are_checked(tmp_path):
    with pytest.raises(ValidationError):
        parse_config(_quick(tmp_path, **{"params.eps = 1e-2": "params.eps = 0"}))
    with pytest.raises(ValidationError):
        parse_config(_quick(tmp_path, **{"initial.n.width = 0.15": ""}))
    with pytest.raises(ValidationError):
        parse_config(_quick(tmp_path) + "stepping.cfl_advect = 0.9\n")
    with pytest.raises(ValidationError):
        parse_config(_quick(tmp_path, **{"grid.cells = 16, 16": "grid.cells = 16, 2"}))


def test_low_m_is_accepted_with_warning(tmp_path):
    cfg = parse_config(_quick(tmp_path, **{"params.m = 3": "params.m = 2"}))
    assert cfg.warnings and "m = 2" in cfg.warnings[0]


def test_custom_file_resolves_next_to_config(tmp_path):
    np.save(tmp_path / "n0.npy", np.full((16, 16), 0.25))
    text = _quick(tmp_path, **{
        "initial.n.preset = gaussian_blob": "initial.n.preset = custom_file\ninitial.n.file = n0.npy",
        "initial.n.center = 0.5, 0.5\n": "",
        "initial.n.width = 0.15\n": "",
        "initial.n.amplitude = 1\n": "",
    })
    path = tmp_path / "run.cfg"
    path.write_text(text)
    state = build_initial_state(load_config(path))
    assert np.all(state.n.values == 0.25)


def test_negative_initial_density_is_rejected(tmp_path):
    np.save(tmp_path / "n0.npy", np.full((16, 16), -1.0))
    text = _quick(tmp_path, **{
        "initial.n.preset = gaussian_blob": "initial.n.preset = custom_file\ninitial.n.file = n0.npy",
    })
    path = tmp_path / "run.cfg"
    path.write_text(text)
    with pytest.raises(ValidationError):
        build_initial_state(load_config(path))


def test_missing_config_file(tmp_path):
    with pytest.raises(IoFailure):
        load_config(tmp_path / "nope.cfg")


def test_vortex_initial_velocity_is_divergence_free(tmp_path):
    from ksns.core.operators import divergence_defect

    text = _quick(tmp_path, **{
        "initial.u.preset = rest": "initial.u.preset = gaussian_blob\ninitial.u.center = 0.5, 0.5\n"
                                   "initial.u.width = 0.1\ninitial.u.amplitude = 0.1",
    })
    state = build_initial_state(parse_config(text))
    assert state.u.max_abs() > 0.0
    assert divergence_defect(state.u) <= 1e-8


# ===== STORAGE =====

def test_snapshot_bytes_round_trip(params, blob_state):
    decoded = decode_snapshot(encode_snapshot(blob_state))
    assert decoded.t == blob_state.t
    assert decoded.grid == blob_state.grid
    assert np.array_equal(decoded.n.values, blob_state.n.values)
    assert np.array_equal(decoded.c.values, blob_state.c.values)
    assert all(np.array_equal(a, b) for a, b in zip(decoded.u.components, blob_state.u.components))


def test_corrupt_snapshots_are_rejected(blob_state):
    data = encode_snapshot(blob_state)
    with pytest.raises(CorruptSnapshot):
        decode_snapshot(b"XXXX" + data[4:])
    with pytest.raises(CorruptSnapshot):
        decode_snapshot(data[:-8])
    with pytest.raises(CorruptSnapshot):
        decode_snapshot(data[:4] + (99).to_bytes(4, "little") + data[8:])


def test_snapshot_directory_is_time_ordered(tmp_path, blob_state):
    from dataclasses import replace

    write_snapshot(replace(blob_state, t=0.2), tmp_path / snapshot_name(0))
    write_snapshot(replace(blob_state, t=0.1), tmp_path / snapshot_name(1))
    assert [s.t for s in read_snapshot_dir(tmp_path)] == [0.1, 0.2]
    with pytest.raises(IoFailure):
        read_snapshot_dir(tmp_path / "missing")


def test_diagnostics_table_round_trip(tmp_path, params, blob_state):
    rows = [record(blob_state, params)]
    write_diagnostics(rows, tmp_path / "diagnostics.csv")
    assert read_diagnostics(tmp_path / "diagnostics.csv") == rows


# ===== COMMAND LINE =====

def test_usage_errors(capsys):
    assert main([]) == 64
    assert _last_line(capsys) == "RESULT usage fail"
    assert main(["bogus"]) == 64
    assert main(["sweep-eps", "x.cfg", "--eps", "a,b"]) == 64
    assert _last_line(capsys) == "RESULT usage fail"


def test_run_rest_config(tmp_path, capsys):
    path = tmp_path / "rest.cfg"
    path.write_text(REST_CONFIG.format(out_dir=tmp_path / "out"))
    assert main(["run", str(path)]) == 0
    assert _last_line(capsys) == "RESULT run pass"
    assert len(read_snapshot_dir(tmp_path / "out" / "snapshots")) == 3
    assert len(read_diagnostics(tmp_path / "out" / "diagnostics.csv")) == 6


def test_run_failure_exit_codes(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.cfg")]) == 1
    assert _last_line(capsys) == "RESULT run fail"
    path = tmp_path / "capped.cfg"
    path.write_text(_quick(tmp_path) + "params.n_ceiling = 0.5\n")
    assert main(["run", str(path)]) == 2
    assert _last_line(capsys) == "RESULT run fail"


def test_residual_command(tmp_path, capsys):
    path = tmp_path / "quick.cfg"
    path.write_text(_quick(tmp_path))
    result = run_scenario(load_config(path), snapshot_every=0.005)
    for i, state in enumerate(result.snapshots):
        write_snapshot(state, tmp_path / "snaps" / snapshot_name(i))
    assert main(["residual", str(path), str(tmp_path / "snaps")]) == 0
    out = capsys.readouterr().out
    assert "residual_n" in out and "residual_u" in out
    assert out.strip().splitlines()[-1] == "RESULT residual pass"


def test_verify_command(capsys):
    assert main(["verify", "invariants"]) == 0
    assert _last_line(capsys) == "RESULT verify pass"


# ===== REVISION COVERAGE =====

def test_nonfinite_kappa_is_rejected(tmp_path):
    for bad in ("inf", "nan"):
        with pytest.raises(ValidationError) as info:
            parse_config(_quick(tmp_path, **{"params.kappa = 1": f"params.kappa = {bad}"}))
        assert info.value.key == "params.kappa"


def test_negative_blob_amplitude_is_rejected_at_parse_time(tmp_path):
    with pytest.raises(ValidationError) as info:
        parse_config(_quick(tmp_path, **{"initial.n.amplitude = 1": "initial.n.amplitude = -1"}))
    assert info.value.key == "initial.n.amplitude"


def test_negative_vortex_amplitude_is_allowed(tmp_path):
    text = _quick(tmp_path, **{
        "initial.u.preset = rest": "initial.u.preset = gaussian_blob\ninitial.u.center = 0.5, 0.5\n"
                                   "initial.u.width = 0.1\ninitial.u.amplitude = -0.1",
    })
    assert parse_config(text).initial_u.amplitude == -0.1


def test_snapshot_keeps_signed_zeros_and_subnormals(blob_state):
    from dataclasses import replace

    tiny = np.nextafter(0.0, 1.0)
    n = blob_state.n.values.copy()
    n[0, 0], n[0, 1], n[0, 2] = -0.0, tiny, 2.0 ** -1070
    u0 = blob_state.u.components[0].copy()
    u0[1, 1] = -0.0
    state = replace(blob_state, n=blob_state.n.with_values(n),
                    u=blob_state.u.with_components((u0, blob_state.u.components[1])))
    decoded = decode_snapshot(encode_snapshot(state))
    assert decoded.n.values.view(np.uint64).tobytes() == n.view(np.uint64).tobytes()
    assert decoded.u.components[0].tobytes() == u0.tobytes()
    assert np.signbit(decoded.n.values[0, 0])


def test_rest_state_record_round_trip(tmp_path, grid, params):
    from ksns.core.dynamics import State

    rows = [record(State.rest(grid), params)]
    write_diagnostics(rows, tmp_path / "rest.csv")
    assert read_diagnostics(tmp_path / "rest.csv") == rows


def test_malformed_diagnostics_rows_raise_io_failure(tmp_path, params, blob_state):
    path = tmp_path / "diagnostics.csv"
    write_diagnostics([record(blob_state, params)], path)
    header, row = path.read_text().splitlines()
    for bad in (row.rsplit(",", 1)[0], row.replace(row.split(",")[1], "abc", 1)):
        path.write_text(f"{header}\n{bad}\n")
        with pytest.raises(IoFailure):
            read_diagnostics(path)


def test_version_and_help_still_report(capsys):
    assert main(["--version"]) == 0
    out = capsys.readouterr().out
    assert "ksns" in out and out.strip().splitlines()[-1] == "RESULT usage pass"
    assert main(["--help"]) == 0
    assert _last_line(capsys) == "RESULT usage pass"


def test_residual_command_fails_on_inconsistent_snapshots(tmp_path, capsys, blob_state):
    from dataclasses import replace

    path = tmp_path / "quick.cfg"
    path.write_text(_quick(tmp_path))
    jumped = replace(blob_state, n=blob_state.n.with_values(11.0 * blob_state.n.values), t=1e-4)
    write_snapshot(blob_state, tmp_path / "snaps" / snapshot_name(0))
    write_snapshot(jumped, tmp_path / "snaps" / snapshot_name(1))
    assert main(["residual", str(path), str(tmp_path / "snaps")]) == 1
    assert _last_line(capsys) == "RESULT residual fail"
