from app.config import Settings


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("CVHI_THREADS", "3")
    monkeypatch.setenv("CVHI_GAP_TOL", "1e-9")
    settings = Settings(_env_file=None)
    assert settings.worker_count == 3
    assert settings.gap_tol == 1e-9


def test_defaults(monkeypatch):
    for var in ("CVHI_THREADS", "CVHI_GAP_TOL", "CVHI_METRICS_PORT", "LOG_LEVEL"):
        monkeypatch.delenv(var, raising=False)
    settings = Settings(_env_file=None)
    assert settings.worker_count >= 1
    assert settings.gap_tol == 1e-7
    assert settings.metrics_port is None
    assert settings.log_level == "INFO"
