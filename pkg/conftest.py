"""pytest wiring for the script-style root smoke test (test_integration.py).

Its functions take the arguments that main() passes; these fixtures supply
the same values so pytest can collect them.
"""
import pytest


@pytest.fixture(scope='module')
def scenario():
    from sketchwrap.config_manager import GeneratorParams
    from sketchwrap.scenarios import generate_scenario
    return generate_scenario('cut_in', 0, params=GeneratorParams(duration=6.0))


@pytest.fixture(scope='module')
def rows(scenario):
    from test_integration import test_closed_loop
    return test_closed_loop(scenario)
