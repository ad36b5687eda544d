import pytest

import dependency_checker
from constants import APP_VERSION, EXIT_CONFIG_ERROR, EXIT_IO_ERROR, EXIT_OK, EXIT_TRIM_FAILURE
from dependency_checker import check_dependencies, check_pip_module, run_dependency_check
from flight_elements import ConfigError, DomainError, ExportError, ModelFileError, TrimError
from main import build_parser, exit_code_for, main, needs_dependency_check
from settings_manager import get_default_settings, load_settings, save_settings

DAY = 24 * 3600.0


@pytest.fixture
def settings_file(tmp_path):
    path = str(tmp_path / "settings.json")
    save_settings(get_default_settings(), path)
    return path


@pytest.mark.parametrize("version,age_days,skip,expected", [
    (APP_VERSION, 1.0, True, False),
    ("0.0.0", 1.0, False, True),
    (APP_VERSION, 31.0, False, True),
    (APP_VERSION, 1.0, False, False),
])
def test_dependency_recheck_policy(version, age_days, skip, expected):
    now = 1.0e9
    settings = {"app_version_at_last_deps_check": version, "last_deps_check_timestamp": now - age_days * DAY}
    assert needs_dependency_check(settings, skip, now=now) is expected


@pytest.mark.parametrize("error,code", [
    (ConfigError("x"), EXIT_CONFIG_ERROR),
    (ModelFileError("x"), EXIT_CONFIG_ERROR),
    (DomainError("x"), EXIT_CONFIG_ERROR),
    (TrimError("x"), EXIT_TRIM_FAILURE),
    (ExportError("x", "out.csv"), EXIT_IO_ERROR),
    (RuntimeError("x"), None),
])
def test_exit_codes(error, code):
    assert exit_code_for(error) == code


def test_parser():
    args = build_parser().parse_args(["sweep", "grid.yaml", "--jobs", "4", "--guard", "lyapunov"])
    assert (args.command, args.sweep_file, args.jobs, args.guard) == ("sweep", "grid.yaml", 4, "lyapunov")
    with pytest.raises(SystemExit):
        build_parser().parse_args(["simulate", "run.yaml", "--guard", "sometimes"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["ams", "run.yaml"])


def test_trim_command(settings_file, capsys):
    assert main(["trim", "--skip-deps-check", "--settings", settings_file, "--linearize"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Trim at Mach 0.800" in out
    assert "alpha" in out
    assert "eigenvalue" in out


def test_trim_outside_domain_is_a_config_error(settings_file):
    assert main(["trim", "--skip-deps-check", "--settings", settings_file, "--mach", "5"]) == EXIT_CONFIG_ERROR


def test_missing_inputs_are_config_errors(settings_file, tmp_path):
    assert main(["simulate", str(tmp_path / "absent.yaml"), "--skip-deps-check",
                 "--settings", settings_file]) == EXIT_CONFIG_ERROR
    assert main(["trim", "--skip-deps-check", "--settings", str(tmp_path / "absent.json")]) == EXIT_CONFIG_ERROR
    assert main(["ams", "scenarios/trim_hold.yaml", "--at", "50", "--skip-deps-check",
                 "--settings", settings_file]) == EXIT_CONFIG_ERROR


@pytest.mark.slow
def test_output_into_a_file_is_an_io_error(settings_file, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("x")
    code = main(["ams", "scenarios/trim_hold.yaml", "--at", "0.1", "--skip-deps-check",
                 "--settings", settings_file, "--out", str(blocker / "sub")])
    assert code == EXIT_IO_ERROR


def test_check_pip_module():
    assert check_pip_module("numpy")
    assert check_pip_module("yaml", "PyYAML", minimum="5.0")
    assert not check_pip_module("numpy", minimum="999.0")
    assert not check_pip_module("module_that_is_not_installed_anywhere")


def _dep(name, present, critical):
    return {"name": name, "check_func": lambda: present, "instructions": "", "critical": critical,
            "install_action": None}


def test_check_dependencies():
    assert check_dependencies([_dep("a", True, True), _dep("b", False, False)]) == (True, ["b"])
    assert check_dependencies([_dep("a", False, True), _dep("b", True, False)]) == (False, ["a"])


def test_dependency_check_records_its_result(settings_file, monkeypatch):
    monkeypatch.setattr(dependency_checker, "get_dependencies", lambda: [_dep("a", True, True)])
    assert run_dependency_check(settings_file)
    recorded = load_settings(settings_file)
    assert recorded["app_version_at_last_deps_check"] == APP_VERSION
    assert recorded["last_deps_check_timestamp"] > 0.0

    monkeypatch.setattr(dependency_checker, "get_dependencies", lambda: [_dep("a", False, True)])
    assert not run_dependency_check(settings_file)
    assert load_settings(settings_file)["last_deps_check_timestamp"] == 0.0
