import json
import sys
from pathlib import Path

HERE = Path(__file__).parent / "oracles"


def test_frozen_values_match_generator(tmp_path):
    sys.path.insert(0, str(HERE))
    try:
        import make_oracles
    finally:
        sys.path.pop(0)
    fresh = make_oracles.main()
    frozen = json.loads((HERE / "values.json").read_text())
    assert fresh.keys() == frozen.keys()
    for k, v in fresh.items():
        assert frozen[k] == v, k
