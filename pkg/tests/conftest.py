import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riskwindow.telemetry import SynthConfig, TelemetryRecord, Trip, generate_synthetic
from riskwindow.windowing import WindowParams, build_table

settings.register_profile("repo", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_trip(n, driver="D1", trip="T1", **cols):
    """Trip of ``n`` seconds; any column can be given as a list, the rest are defaults."""
    recs = []
    for i in range(n):
        kw = {k: v[i] for k, v in cols.items()}
        kw.setdefault("speed_kmh", 50.0)
        recs.append(TelemetryRecord(driver_id=driver, trip_id=trip, t=i, **kw))
    return Trip.from_records(recs)


@pytest.fixture(scope="session")
def synth_small():
    return generate_synthetic(SynthConfig(n_drivers=8, trips_per_driver=2, trip_length_s=300, seed=3))


@pytest.fixture(scope="session")
def table_small(synth_small):
    return build_table(synth_small.trips, WindowParams(), synth_small.profiles, synth_small.ground_truth)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
