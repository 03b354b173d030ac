from hypothesis import HealthCheck, settings

# Deterministic property runs: the suite doubles as a release gate, so the
# same seeds must fail or pass on every machine.
settings.register_profile(
    "release",
    derandomize=True,
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("release")
