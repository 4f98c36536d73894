"""Smoke test for the shoprank bindings: primitives, a staged run, a saved model."""

import math
import sys
import tempfile
from pathlib import Path

import shoprank_py as sr


def main() -> int:
    assert sr.ndcg([3, 2, 1, 0]) == 1.0
    worst = sr.ndcg([0, 1, 2, 3])
    assert worst is not None and 0.0 < worst < 1.0
    assert sr.ndcg([0, 0]) is None
    assert math.isclose(sr.dcg([1], k=1), 1.0)
    assert sr.bin_grades([0.0, 1.0, 0.5], bins=5) == [0, 5, 3]
    assert math.isclose(sr.coherency_score([[1.0, 0.0], [1.0, 0.0]]), 1.0)

    cfg = sr.Config.smoke()
    cfg.seed = 3
    assert sr.Config(cfg.to_toml()).seed == 3

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "exp"
        artifacts = sr.run_pipeline(cfg, str(out))
        assert "manifest.json" not in artifacts
        assert "summary.json" in artifacts
        assert sr.run_stage(cfg, str(out), "evaluate") == "cached"

        model_id = cfg.model_ids()[0]
        model = sr.Model.load(str(out / "models" / f"{model_id}.model"))
        scores = model.predict([[0.0] * model.n_features])
        assert len(scores) == 1 and math.isfinite(scores[0])

        try:
            sr.run_stage(cfg, str(Path(tmp) / "empty"), "evaluate")
        except OSError as e:
            assert "featurize" in str(e)
        else:
            raise AssertionError("evaluate without features should fail")

    print("smoke ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
