from pathlib import Path

import pytest
import yaml

from qedft.config import ConfigError, config_hash, from_dict, load_config, parse_quantity, validate
from qedft.units import ANGSTROM, EV

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def _lih(**extra):
    raw = {"version": 1, "method": "harris-ate", "system": {"kind": "lih", "bond_length": "1.55 angstrom"}}
    raw.update(extra)
    return raw


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_are_valid(path):
    cfg = load_config(path)
    assert cfg.method in path.read_text()


def test_quantities_convert_to_atomic_units():
    assert parse_quantity("1.55 angstrom", "length") == pytest.approx(1.55 * ANGSTROM)
    assert parse_quantity("2 bohr", "length") == 2.0
    assert parse_quantity("0.05 eV", "energy") == pytest.approx(0.05 * EV)
    assert parse_quantity("0.5 1/angstrom", "inverse_length") == pytest.approx(0.5 / ANGSTROM)
    assert parse_quantity(" 1e-1 au ", "time") == pytest.approx(0.1)
    for bad in ("1.55", "angstrom", "1.55 furlong"):
        with pytest.raises(ConfigError):
            parse_quantity(bad, "length")


def test_values_section_is_converted():
    cfg = from_dict(_lih(schedule={"t_final": "20 au", "steps": 100, "e0": "27.211386245988 eV"}))
    assert cfg.values["system"]["bond_length"] == pytest.approx(1.55 * ANGSTROM)
    assert cfg.section("schedule")["e0"] == pytest.approx(1.0)
    assert cfg.raw["system"]["bond_length"] == "1.55 angstrom"
    assert cfg.section("readout") == {}


def test_unitless_quantity_rejected_by_schema():
    errs = validate(_lih(schedule={"t_final": 20}))
    assert errs and "schedule/t_final" in errs[0]
    with pytest.raises(ConfigError, match="t_final"):
        from_dict(_lih(schedule={"t_final": "20"}))


@pytest.mark.parametrize("raw, message", [
    (_lih(unknown=1), "unknown"),
    ({"version": 2, "method": "harris-ate", "system": {"kind": "lih", "bond_length": "1 angstrom"}}, "version"),
    ({"version": 1, "method": "harris-ate", "system": {"kind": "lih"}}, "bond_length"),
    ({"version": 1, "method": "kpoint-dos", "system": {"kind": "lih", "bond_length": "1 angstrom"}}, "BCC"),
    ({"version": 1, "method": "harris-ate", "system": {"kind": "custom"}}, "custom"),
    (_lih(method="scf-copies-ate", initial={"n_band": 2}), "N_band"),
    (_lih(scan={"parameter": "n-band", "values": [4, 8]}), "n-band"),
    ({"version": 1, "method": "band-structure", "system": {"kind": "bcc-li"}}, "path"),
    (_lih(system={"kind": "lih", "bond_length": "1 angstrom", "qubits": 9}), "qubits"),
    ([1, 2], "mapping"),
])
def test_invalid_configs(raw, message):
    with pytest.raises(ConfigError, match=message):
        from_dict(raw)


def test_digest_is_stable_and_key_order_free():
    a = _lih(seed=3)
    b = {k: a[k] for k in reversed(list(a))}
    assert config_hash(a) == config_hash(b) == from_dict(b).digest
    assert config_hash(a) != config_hash(_lih(seed=4))


def test_override_keeps_units(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(_lih()))
    cfg = load_config(path)
    moved = cfg.with_override("system", "bond_length", "1.6 angstrom")
    assert moved.values["system"]["bond_length"] == pytest.approx(1.6 * ANGSTROM)
    assert cfg.values["system"]["bond_length"] == pytest.approx(1.55 * ANGSTROM)
    assert moved.source == str(path)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("method: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(bad)
