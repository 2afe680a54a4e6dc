import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepgf import config
from deepgf.errors import ConfigError
from deepgf.guided import GuidedFilterParams


def test_loads_comments_and_spacing():
    d = config.loads("# header\na = 1\n\nb=x  # trailing\n")
    assert d == {"a": "1", "b": "x"}


@pytest.mark.parametrize("text", ["a=1\na=2\n", "novalue\n", " = 3\n"])
def test_loads_rejects(text):
    with pytest.raises(ConfigError):
        config.loads(text)


def test_dumps_sorted_and_typed():
    assert config.dumps({"b": True, "a": 0.1, "c": (1.0, 2.5)}) == "a=0.1\nb=true\nc=1.0,2.5\n"


@given(st.dictionaries(st.from_regex(r"[a-z][a-z0-9_.]{0,8}", fullmatch=True),
                       st.floats(allow_nan=False, allow_infinity=False), max_size=8))
def test_float_round_trip(d):
    back = {k: float(v) for k, v in config.loads(config.dumps(d)).items()}
    assert back == d


def test_dataclass_round_trip():
    p = GuidedFilterParams(5, 0.003)
    kv = {k: config.format_value(v) for k, v in config.dataclass_to_kv(p, "gf").items()}
    assert config.dataclass_from_kv(GuidedFilterParams, kv, "gf") == p


def test_dataclass_unknown_and_bad_values():
    with pytest.raises(ConfigError):
        config.dataclass_from_kv(GuidedFilterParams, {"gf.size": "3"}, "gf")
    with pytest.raises(ConfigError):
        config.dataclass_from_kv(GuidedFilterParams, {"gf.radius": "three"}, "gf")
    with pytest.raises(ConfigError):
        config.parse_bool("maybe")
