import pytest

from config.settings import Settings, settings


def test_default_settings_are_valid():
    is_valid, problems = settings.validate()
    assert is_valid, problems
    assert settings.APP_NAME == "wgbh"
    assert settings.LINEAR_SOLVER in settings.LINEAR_SOLVERS


@pytest.mark.parametrize("name, value", [
    ("LOG_LEVEL", "LOUD"),
    ("LINEAR_SOLVER", "gauss"),
    ("SOLVER_RTOL", 0.0),
    ("CG_MAXITER_FACTOR", -1.0),
    ("REFINEMENT_STEPS", -2),
    ("DATA_QUADRATURE_EXTRA", -1),
    ("TANGENT_FD_STEP", 0.0),
])
def test_invalid_values_are_reported(monkeypatch, name, value):
    monkeypatch.setattr(Settings, name, value)
    is_valid, problems = Settings.validate()
    assert not is_valid
    assert problems == [f"WGBH_{name}={value}"]
    assert f"WGBH_{name}={value}" in Settings.get_error_message(problems)
