import pytest
from hypothesis import given
from hypothesis import strategies as st

from kkqkd import economics
from kkqkd.economics import CostModel

TABLE = {"dv": (20, 20), "tlo": (20, 8), "llo": (20, 28), "dd": (20, 1)}


def test_examples():
    assert economics.network_cost("dd", 4) == 24
    assert economics.network_cost("dv", 1) == 40
    assert economics.network_cost("llo", 4) == 132
    assert economics.network_cost("tlo", 4) == 52


@given(n=st.integers(1, 10_000))
def test_table_formulas_and_ordering(n):
    costs = {s: economics.network_cost(s, n) for s in economics.SCHEMES}
    for scheme, (fixed, slope) in TABLE.items():
        assert costs[scheme] == fixed + slope * n
    assert costs["dd"] < costs["tlo"] < costs["dv"] < costs["llo"]


def test_errors():
    with pytest.raises(ValueError, match="scheme"):
        economics.network_cost("cv", 2)
    with pytest.raises(ValueError):
        economics.network_cost("dd", 0)
    with pytest.raises(ValueError):
        economics.cost_table(0)
    with pytest.raises(ValueError, match="missing"):
        CostModel(multipliers={"pd": 1.0})
    with pytest.raises(ValueError):
        CostModel(c_pd=0.0)


def test_custom_multipliers_and_table():
    model = CostModel(multipliers={"pd": 2.0, "bhd": 3.0, "spad": 5.0, "tunable_laser": 10.0})
    assert economics.network_cost("llo", 3, model) == 10 + 3 * (6 + 10)
    table = economics.cost_table(3)
    assert len(table) == 12 and table[0] == ("dv", 1, 40.0)
