import copy

import pytest

from h2blend.network import parse_network, parse_scenario, segment_pipes

LINE_NETWORK_DOC = {
    "nodes": [
        {"id": "N1", "role": "slack", "p_min": 3.0e6, "p_max": 6.0e6,
         "p_slack": 5.0e6, "eta_s": 0.0},
        {"id": "N3", "role": "withdrawal", "p_min": 3.0e6, "p_max": 6.0e6,
         "gE_max": 8000.0},
    ],
    "pipes": [
        {"id": "P1", "from": "N1", "to": "N3", "L": 30000.0, "D": 0.9144,
         "lambda": 0.01},
    ],
}

SHORT_SCENARIO_DOC = {
    "horizon_hours": 4.0,
    "dt_hours": 1.0,
    "segment_length_m": 10000.0,
    "xi": 0.5,
}


def line_network(eta_s: float = 0.0):
    """Slack source, one 30 km pipe, one withdrawal; no compressor."""
    doc = copy.deepcopy(LINE_NETWORK_DOC)
    doc["nodes"][0]["eta_s"] = eta_s
    return parse_network(doc)


def short_scenario(**overrides):
    doc = copy.deepcopy(SHORT_SCENARIO_DOC)
    doc.update(overrides)
    return parse_scenario(doc)


@pytest.fixture
def line_segnet():
    scenario = short_scenario()
    return segment_pipes(line_network(), scenario.dL), scenario
